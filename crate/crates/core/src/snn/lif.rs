use super::layer::LifConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spike nonlinearity used by the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Heaviside spikes; the backward pass substitutes a triangular surrogate.
    Spiking,
    /// Spikes replaced by the ramp `clamp((v - θ)/w + 0.5, 0, 1)`, making the
    /// forward pass piecewise-differentiable for gradient checking.
    Soft,
}

#[inline]
pub(crate) fn spike(u: f32, cfg: &LifConfig, mode: Mode) -> f32 {
    match mode {
        Mode::Spiking => {
            if u >= cfg.threshold {
                1.0
            } else {
                0.0
            }
        }
        Mode::Soft => ((u - cfg.threshold) / cfg.surrogate_width + 0.5).clamp(0.0, 1.0),
    }
}

/// `ds/du`: triangular surrogate in spiking mode, exact ramp slope in soft mode.
#[inline]
pub(crate) fn spike_grad(u: f32, cfg: &LifConfig, mode: Mode) -> f32 {
    let w = cfg.surrogate_width;
    match mode {
        Mode::Spiking => (1.0 - (u - cfg.threshold).abs() / w).max(0.0) / w,
        Mode::Soft => {
            let z = (u - cfg.threshold) / w + 0.5;
            if z > 0.0 && z < 1.0 {
                1.0 / w
            } else {
                0.0
            }
        }
    }
}

/// One integrate/fire/reset update over a slice of neurons. `v` holds the
/// membrane on entry and the post-reset membrane on exit; `u` receives the
/// pre-reset membrane.
#[inline]
pub(crate) fn step_slice(v: &mut [f32], current: &[f32], u: &mut [f32], s: &mut [f32], cfg: &LifConfig, mode: Mode) {
    for i in 0..v.len() {
        let pre = cfg.decay * v[i] + current[i];
        let sp = spike(pre, cfg, mode);
        u[i] = pre;
        s[i] = sp;
        v[i] = pre * (1.0 - sp);
    }
}

/// Single LIF update: `v_pre = λ·v + I`, spike where `v_pre ≥ θ`, hard reset to 0.
pub fn lif_step(v: &Tensor, input_current: &Tensor, cfg: &LifConfig) -> Result<(Tensor, Tensor)> {
    if v.shape() != input_current.shape() {
        return Err(Error::ShapeMismatch {
            expected: v.shape().to_vec(),
            got: input_current.shape().to_vec(),
        });
    }
    let mut next = v.data().to_vec();
    let mut u = vec![0.0; v.len()];
    let mut s = vec![0.0; v.len()];
    step_slice(&mut next, input_current.data(), &mut u, &mut s, cfg, Mode::Spiking);
    Ok((
        Tensor::from_raw(v.shape().to_vec(), next),
        Tensor::from_raw(v.shape().to_vec(), s),
    ))
}
