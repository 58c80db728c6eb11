use super::engine::{backward, Backward, ForwardTrace, NetView, Want};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSpec {
    CrossEntropy(Reduction),
}

/// Numerically stable log-softmax of one logit row.
pub fn log_softmax(row: &[f32]) -> Vec<f32> {
    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f32>().ln();
    row.iter().map(|z| z - lse).collect()
}

pub fn softmax(row: &[f32]) -> Vec<f32> {
    log_softmax(row).into_iter().map(f32::exp).collect()
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    let k = logits.shape().get(1).copied().unwrap_or(0);
    if logits.dim0() != labels.len() || labels.iter().any(|&y| y >= k) {
        return Err(Error::ShapeMismatch {
            expected: vec![labels.len(), k],
            got: logits.shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-example cross-entropy values.
pub fn cross_entropy_per_example(logits: &Tensor, labels: &[usize]) -> Result<Vec<f32>> {
    check_labels(logits, labels)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -log_softmax(logits.row(i))[y])
        .collect())
}

/// Cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize], reduction: Reduction) -> Result<(f32, Tensor)> {
    check_labels(logits, labels)?;
    let b = labels.len();
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / b.max(1) as f32,
    };
    let mut loss = 0.0f32;
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &y) in labels.iter().enumerate() {
        let ls = log_softmax(logits.row(i));
        loss -= ls[y];
        for (j, l) in ls.iter().enumerate() {
            let p = l.exp();
            grad.push(scale * (p - if j == y { 1.0 } else { 0.0 }));
        }
    }
    Ok((loss * scale, Tensor::from_raw(logits.shape().to_vec(), grad)))
}

/// Loss value plus backpropagated gradients for a recorded forward pass.
pub fn loss_backward(
    view: &NetView,
    trace: &ForwardTrace,
    logits: &Tensor,
    labels: &[usize],
    loss: LossSpec,
    want: Want,
) -> Result<(f32, Backward)> {
    let LossSpec::CrossEntropy(reduction) = loss;
    let (value, dlogits) = cross_entropy(logits, labels, reduction)?;
    Ok((value, backward(view, trace, &dlogits, want)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_uniform_logits() {
        let z = Tensor::zeros(vec![2, 4]);
        let (l, g) = cross_entropy(&z, &[0, 3], Reduction::Mean).unwrap();
        assert!((l - 4f32.ln()).abs() < 1e-6);
        assert!((g.data()[0] + 0.375).abs() < 1e-6);
        assert!((g.data()[1] - 0.125).abs() < 1e-6);
    }

    #[test]
    fn ce_gradient_matches_finite_difference() {
        let z = Tensor::new(vec![1, 3], vec![0.3, -1.2, 0.8]).unwrap();
        let (_, g) = cross_entropy(&z, &[1], Reduction::Sum).unwrap();
        for j in 0..3 {
            let h = 1e-2f32;
            let mut zp = z.clone();
            zp.data_mut()[j] += h;
            let mut zm = z.clone();
            zm.data_mut()[j] -= h;
            let fd = (cross_entropy(&zp, &[1], Reduction::Sum).unwrap().0
                - cross_entropy(&zm, &[1], Reduction::Sum).unwrap().0)
                / (2.0 * h);
            assert!((fd - g.data()[j]).abs() < 1e-3);
        }
    }

    #[test]
    fn bad_labels_rejected() {
        let z = Tensor::zeros(vec![2, 3]);
        assert!(cross_entropy(&z, &[0], Reduction::Sum).is_err());
        assert!(cross_entropy(&z, &[0, 3], Reduction::Sum).is_err());
    }
}
