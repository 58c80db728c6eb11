//! Time-stepped forward simulation and backpropagation through time.

use rayon::prelude::*;

use super::layer::{LayerGeom, LayerSpec};
use super::lif::{self, Mode};
use super::network::{LayerParams, Network};
use super::ops;
use crate::error::{Error, Result};
use crate::pruning::FilterMask;
use crate::tensor::Tensor;

/// A network as seen through an optional filter mask. Pruned filters produce
/// no current and no spikes; weights are untouched.
#[derive(Debug, Clone)]
pub struct NetView<'a> {
    net: &'a Network,
    mask: Option<&'a FilterMask>,
    keep: Vec<Option<&'a [bool]>>,
}

impl<'a> NetView<'a> {
    pub fn new(net: &'a Network) -> Self {
        Self {
            net,
            mask: None,
            keep: vec![None; net.specs().len()],
        }
    }

    pub fn masked(net: &'a Network, mask: &'a FilterMask) -> Result<Self> {
        mask.check(net)?;
        let mut keep = vec![None; net.specs().len()];
        for (seg, l) in mask.segments().iter().zip(net.prunable_layers()) {
            keep[l] = Some(seg.bits());
        }
        Ok(Self {
            net,
            mask: Some(mask),
            keep,
        })
    }

    pub fn network(&self) -> &'a Network {
        self.net
    }

    pub fn mask(&self) -> Option<&'a FilterMask> {
        self.mask
    }

    /// Retained-output flags for layer `l`, `None` when every output is kept.
    pub fn keep(&self, l: usize) -> Option<&'a [bool]> {
        self.keep[l]
    }
}

impl Network {
    pub fn view(&self) -> NetView<'_> {
        NetView::new(self)
    }
}

/// Per-layer parameter gradients, shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net.specs().iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += y;
            }
            for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                *x += y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.data().iter().chain(l.bias.data()).all(|&g| g == 0.0))
    }

    /// All gradient entries in layer order, weight before bias.
    pub fn flat(&self) -> Vec<f32> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()).copied())
            .collect()
    }
}

#[derive(Debug, Clone)]
struct ExampleTrace {
    // [spiking layer][t * n + i]
    u: Vec<Vec<f32>>,
    s: Vec<Vec<f32>>,
}

/// Cached state from a recording forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: Mode,
    version: u64,
    mask: Option<FilterMask>,
    inputs: Tensor,
    examples: Vec<ExampleTrace>,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.examples.len()
    }

    /// Spikes of spiking layer `layer` for example `b`, laid out `[t][neuron]`.
    pub fn spikes(&self, b: usize, layer: usize) -> &[f32] {
        &self.examples[b].s[layer]
    }

    /// Pre-reset membrane potentials, same layout as [`ForwardTrace::spikes`].
    pub fn membranes(&self, b: usize, layer: usize) -> &[f32] {
        &self.examples[b].u[layer]
    }
}

/// Which gradients [`backward`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Want {
    pub params: bool,
    pub input: bool,
}

impl Want {
    pub const ALL: Want = Want {
        params: true,
        input: true,
    };
    pub const PARAMS: Want = Want {
        params: true,
        input: false,
    };
    pub const INPUT: Want = Want {
        params: false,
        input: true,
    };
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub params: Option<Gradients>,
    pub input: Option<Tensor>,
}

fn affine(spec: &LayerSpec, g: &LayerGeom, p: &LayerParams, input: &[f32], out: &mut [f32], keep: Option<&[bool]>) {
    match spec {
        LayerSpec::Conv2d { .. } => ops::conv_forward(p.weight.data(), p.bias.data(), g, input, out, keep),
        LayerSpec::Dense { .. } => {
            ops::dense_forward(p.weight.data(), p.bias.data(), g.in_c, input, out);
            if let Some(k) = keep {
                for (o, &kept) in k.iter().enumerate() {
                    if !kept {
                        out[o] = 0.0;
                    }
                }
            }
        }
    }
}

fn affine_backward_input(spec: &LayerSpec, g: &LayerGeom, p: &LayerParams, dout: &[f32], din: &mut [f32]) {
    match spec {
        LayerSpec::Conv2d { .. } => ops::conv_backward_input(p.weight.data(), g, dout, din),
        LayerSpec::Dense { .. } => ops::dense_backward_input(p.weight.data(), g.in_c, dout, din),
    }
}

fn affine_backward_params(spec: &LayerSpec, g: &LayerGeom, input: &[f32], dout: &[f32], grad: &mut LayerParams) {
    let LayerParams { weight, bias } = grad;
    match spec {
        LayerSpec::Conv2d { .. } => ops::conv_backward_params(g, input, dout, weight.data_mut(), bias.data_mut()),
        LayerSpec::Dense { .. } => ops::dense_backward_params(g.in_c, input, dout, weight.data_mut(), bias.data_mut()),
    }
}

fn zero_pruned(buf: &mut [f32], keep: Option<&[bool]>, plane: usize) {
    if let Some(k) = keep {
        for (o, &kept) in k.iter().enumerate() {
            if !kept {
                buf[o * plane..(o + 1) * plane].fill(0.0);
            }
        }
    }
}

fn forward_example(view: &NetView, x: &[f32], mode: Mode, record: bool) -> (Vec<f32>, Option<ExampleTrace>) {
    let net = view.net;
    let cfg = net.lif();
    let steps = cfg.timesteps;
    let specs = net.specs();
    let geoms = net.geoms();
    let params = net.params();
    let last = specs.len() - 1;

    let mut v: Vec<Vec<f32>> = geoms[..last].iter().map(|g| vec![0.0; g.out_len()]).collect();
    let mut u: Vec<Vec<f32>> = v.clone();
    let mut s: Vec<Vec<f32>> = v.clone();
    let mut cur: Vec<Vec<f32>> = geoms.iter().map(|g| vec![0.0; g.out_len()]).collect();
    let mut trace = record.then(|| ExampleTrace {
        u: geoms[..last].iter().map(|g| Vec::with_capacity(steps * g.out_len())).collect(),
        s: geoms[..last].iter().map(|g| Vec::with_capacity(steps * g.out_len())).collect(),
    });
    let mut logits = vec![0.0f32; geoms[last].out_len()];

    // The input current of the first layer is identical at every timestep.
    let mut first = vec![0.0; geoms[0].out_len()];
    affine(&specs[0], &geoms[0], &params[0], x, &mut first, view.keep(0));

    for _ in 0..steps {
        for l in 0..=last {
            if l == 0 {
                cur[0].copy_from_slice(&first);
            } else {
                affine(&specs[l], &geoms[l], &params[l], &s[l - 1], &mut cur[l], view.keep(l));
            }
            if l == last {
                for (acc, c) in logits.iter_mut().zip(&cur[l]) {
                    *acc += c;
                }
                continue;
            }
            lif::step_slice(&mut v[l], &cur[l], &mut u[l], &mut s[l], cfg, mode);
            let plane = geoms[l].out_plane();
            zero_pruned(&mut u[l], view.keep(l), plane);
            zero_pruned(&mut s[l], view.keep(l), plane);
            zero_pruned(&mut v[l], view.keep(l), plane);
            if let Some(tr) = trace.as_mut() {
                tr.u[l].extend_from_slice(&u[l]);
                tr.s[l].extend_from_slice(&s[l]);
            }
        }
    }
    let t = steps as f32;
    for z in &mut logits {
        *z /= t;
    }
    (logits, trace)
}

fn backward_example(
    view: &NetView,
    tr: &ExampleTrace,
    x: &[f32],
    dlogits: &[f32],
    mode: Mode,
    want: Want,
) -> (Option<Gradients>, Option<Vec<f32>>) {
    let net = view.net;
    let cfg = net.lif();
    let steps = cfg.timesteps;
    let specs = net.specs();
    let geoms = net.geoms();
    let params = net.params();
    let last = specs.len() - 1;
    let mut grads = want.params.then(|| Gradients::zeros_like(net));

    // Readout: logits = mean_t(W·in_t + b), so every timestep sees dL/dlogits / T.
    let inv_t = 1.0 / steps as f32;
    let dc: Vec<f32> = dlogits.iter().map(|g| g * inv_t).collect();
    let in_len = geoms[last].in_len();
    if let Some(gr) = grads.as_mut() {
        // dW = Σ_t dc·in_tᵀ = dlogits·mean_t(in_t)ᵀ and db = Σ_t dc = dlogits.
        let mut in_mean = vec![0.0f32; in_len];
        if last == 0 {
            in_mean.copy_from_slice(x);
        } else {
            for t in 0..steps {
                for (a, sv) in in_mean.iter_mut().zip(&tr.s[last - 1][t * in_len..(t + 1) * in_len]) {
                    *a += sv;
                }
            }
            for a in &mut in_mean {
                *a *= inv_t;
            }
        }
        affine_backward_params(&specs[last], &geoms[last], &in_mean, dlogits, &mut gr.layers[last]);
    }
    let mut d_in_step = vec![0.0f32; in_len];
    affine_backward_input(&specs[last], &geoms[last], &params[last], &dc, &mut d_in_step);
    if last == 0 {
        let input_grad = want
            .input
            .then(|| d_in_step.iter().map(|d| d * steps as f32).collect());
        return (grads, input_grad);
    }
    // dL/ds for the layer below, per timestep.
    let mut ds_above: Vec<f32> = Vec::with_capacity(steps * in_len);
    for _ in 0..steps {
        ds_above.extend_from_slice(&d_in_step);
    }

    let mut input_grad = None;
    for l in (0..last).rev() {
        let g = &geoms[l];
        let n = g.out_len();
        let plane = g.out_plane();
        let keep = view.keep(l);
        let u = &tr.u[l];
        let s = &tr.s[l];
        let mut dv = vec![0.0f32; n];
        let mut dcur = vec![0.0f32; steps * n];
        for t in (0..steps).rev() {
            let off = t * n;
            for i in 0..n {
                if keep.is_some_and(|k| !k[i / plane]) {
                    continue;
                }
                let ui = u[off + i];
                let si = s[off + i];
                // v_t = u_t (1 - s_t), u_{t+1} = λ v_t + c_{t+1}
                let ds = ds_above[off + i] - dv[i] * ui;
                let du = dv[i] * (1.0 - si) + ds * lif::spike_grad(ui, cfg, mode);
                dcur[off + i] = du;
                dv[i] = cfg.decay * du;
            }
        }
        if l == 0 {
            let mut dsum = vec![0.0f32; n];
            for t in 0..steps {
                for (a, d) in dsum.iter_mut().zip(&dcur[t * n..(t + 1) * n]) {
                    *a += d;
                }
            }
            if let Some(gr) = grads.as_mut() {
                affine_backward_params(&specs[0], g, x, &dsum, &mut gr.layers[0]);
            }
            if want.input {
                let mut dx = vec![0.0f32; g.in_len()];
                affine_backward_input(&specs[0], g, &params[0], &dsum, &mut dx);
                input_grad = Some(dx);
            }
        } else {
            let below = g.in_len();
            let mut ds_below = vec![0.0f32; steps * below];
            for t in 0..steps {
                let d = &dcur[t * n..(t + 1) * n];
                if let Some(gr) = grads.as_mut() {
                    let inp = &tr.s[l - 1][t * below..(t + 1) * below];
                    affine_backward_params(&specs[l], g, inp, d, &mut gr.layers[l]);
                }
                affine_backward_input(&specs[l], g, &params[l], d, &mut ds_below[t * below..(t + 1) * below]);
            }
            ds_above = ds_below;
        }
    }
    (grads, input_grad)
}

fn check_batch(net: &Network, batch: &Tensor) -> Result<()> {
    let [c, h, w] = net.input_shape();
    let shape = batch.shape();
    if shape.len() != 4 || shape[1..] != [c, h, w] {
        return Err(Error::ShapeMismatch {
            expected: vec![shape.first().copied().unwrap_or(0), c, h, w],
            got: shape.to_vec(),
        });
    }
    Ok(())
}

/// Runs the network over a `[B, C, H, W]` batch with direct input coding
/// (the same analog input is injected every timestep). Logits are the
/// readout current averaged over timesteps. With `record`, returns the
/// trace needed by [`backward`].
pub fn forward(view: &NetView, batch: &Tensor, mode: Mode, record: bool) -> Result<(Tensor, Option<ForwardTrace>)> {
    let net = view.net;
    check_batch(net, batch)?;
    let b = batch.dim0();
    let k = net.num_classes();
    let results: Vec<_> = (0..b)
        .into_par_iter()
        .map(|i| forward_example(view, batch.row(i), mode, record))
        .collect();
    let mut logits = Vec::with_capacity(b * k);
    let mut examples = Vec::with_capacity(if record { b } else { 0 });
    for (z, tr) in results {
        logits.extend_from_slice(&z);
        if let Some(tr) = tr {
            examples.push(tr);
        }
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFiniteActivation("logits"));
    }
    let trace = record.then(|| ForwardTrace {
        mode,
        version: net.version(),
        mask: view.mask.cloned(),
        inputs: batch.clone(),
        examples,
    });
    Ok((Tensor::from_raw(vec![b, k], logits), trace))
}

/// Spiking-mode logits without recording.
pub fn logits(view: &NetView, batch: &Tensor) -> Result<Tensor> {
    Ok(forward(view, batch, Mode::Spiking, false)?.0)
}

/// Backpropagation through time from an upstream logit gradient `[B, K]`.
///
/// Spike derivatives use the triangular surrogate in spiking mode and the
/// exact ramp slope in soft mode. Parameter gradients are summed over the
/// batch in example order.
pub fn backward(view: &NetView, trace: &ForwardTrace, dlogits: &Tensor, want: Want) -> Result<Backward> {
    let net = view.net;
    if trace.version != net.version() || trace.mask.as_ref() != view.mask {
        return Err(Error::StaleTrace);
    }
    let b = trace.batch_size();
    let k = net.num_classes();
    if dlogits.shape() != [b, k] {
        return Err(Error::ShapeMismatch {
            expected: vec![b, k],
            got: dlogits.shape().to_vec(),
        });
    }
    let per_example: Vec<_> = (0..b)
        .into_par_iter()
        .map(|i| backward_example(view, &trace.examples[i], trace.inputs.row(i), dlogits.row(i), trace.mode, want))
        .collect();
    let mut params = want.params.then(|| Gradients::zeros_like(net));
    let mut input = want.input.then(|| Vec::with_capacity(trace.inputs.len()));
    for (g, dx) in per_example {
        if let (Some(acc), Some(g)) = (params.as_mut(), g) {
            acc.add_assign(&g);
        }
        if let (Some(acc), Some(dx)) = (input.as_mut(), dx) {
            acc.extend_from_slice(&dx);
        }
    }
    Ok(Backward {
        params,
        input: input.map(|d| Tensor::from_raw(trace.inputs.shape().to_vec(), d)),
    })
}

/// Top-1 predictions; ties resolve to the lowest class index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.dim0())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of examples whose spiking-mode prediction matches the label.
pub fn accuracy(view: &NetView, images: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let preds = argmax_rows(&logits(view, images)?);
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}
