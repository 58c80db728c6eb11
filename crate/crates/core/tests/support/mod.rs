//! Test-side oracles shared by integration and acceptance tests: an
//! independent f64 forward pass and generators for small random networks.
#![allow(dead_code)]

use ccsrp_core::pruning::{FilterMask, Segment};
use ccsrp_core::snn::{
    backward, cross_entropy, forward, init_network, Architecture, LayerSpec, LifConfig, Mode, Network, Reduction, Want,
};
use ccsrp_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A network copied into f64 with plain nested loops for every operator.
#[derive(Clone)]
pub struct RefNet {
    pub specs: Vec<LayerSpec>,
    pub input: [usize; 3],
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub decay: f64,
    pub threshold: f64,
    pub width: f64,
    pub timesteps: usize,
    pub out_lens: Vec<usize>,
}

/// Where each soft spike fell on its ramp: below, inside or above.
pub type Regions = Vec<u8>;

impl RefNet {
    pub fn from_network(net: &Network) -> Self {
        let lif = net.lif();
        Self {
            specs: net.specs().to_vec(),
            input: net.input_shape(),
            weights: net.params().iter().map(|p| p.weight.data().iter().map(|&v| v as f64).collect()).collect(),
            biases: net.params().iter().map(|p| p.bias.data().iter().map(|&v| v as f64).collect()).collect(),
            decay: lif.decay as f64,
            threshold: lif.threshold as f64,
            width: lif.surrogate_width as f64,
            timesteps: lif.timesteps,
            out_lens: net.geoms().iter().map(|g| g.out_len()).collect(),
        }
    }

    fn layer(&self, l: usize, input: &[f64], shape: [usize; 3]) -> (Vec<f64>, [usize; 3]) {
        let w = &self.weights[l];
        let b = &self.biases[l];
        match self.specs[l] {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let [_, h, wd] = shape;
                let oh = (h + 2 * padding - kernel_h) / stride + 1;
                let ow = (wd + 2 * padding - kernel_w) / stride + 1;
                let mut out = vec![0.0; out_channels * oh * ow];
                for o in 0..out_channels {
                    for y in 0..oh {
                        for x in 0..ow {
                            let mut acc = b[o];
                            for c in 0..in_channels {
                                for ky in 0..kernel_h {
                                    for kx in 0..kernel_w {
                                        let iy = (y * stride + ky) as isize - padding as isize;
                                        let ix = (x * stride + kx) as isize - padding as isize;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        let wi = ((o * in_channels + c) * kernel_h + ky) * kernel_w + kx;
                                        acc += w[wi] * input[(c * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                            out[(o * oh + y) * ow + x] = acc;
                        }
                    }
                }
                (out, [out_channels, oh, ow])
            }
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => {
                let out = (0..out_features)
                    .map(|o| b[o] + (0..in_features).map(|i| w[o * in_features + i] * input[i]).sum::<f64>())
                    .collect();
                (out, [out_features, 1, 1])
            }
        }
    }

    fn ramp(&self, u: f64) -> (f64, u8) {
        let z = (u - self.threshold) / self.width + 0.5;
        if z <= 0.0 {
            (0.0, 0)
        } else if z >= 1.0 {
            (1.0, 2)
        } else {
            (z, 1)
        }
    }

    fn heaviside(&self, u: f64) -> (f64, u8) {
        if u >= self.threshold {
            (1.0, 1)
        } else {
            (0.0, 0)
        }
    }

    /// Logits of one example plus the region signature of every spike.
    /// `soft` selects the ramp nonlinearity, otherwise Heaviside spikes.
    #[allow(clippy::needless_range_loop)]
    pub fn forward(&self, x: &[f64], soft: bool) -> (Vec<f64>, Regions) {
        let n = self.specs.len();
        let (first, s0) = self.layer(0, x, self.input);
        let mut v: Vec<Vec<f64>> = self.out_lens.iter().map(|&n| vec![0.0; n]).collect();
        let mut regions = Vec::new();
        let mut logits = vec![0.0; self.specs.last().map_or(0, |s| s.outputs())];
        for _ in 0..self.timesteps {
            let mut shape = self.input;
            let mut prev: Vec<f64> = Vec::new();
            for l in 0..n {
                let (cur, s) = if l == 0 { (first.clone(), s0) } else { self.layer(l, &prev, shape) };
                shape = s;
                if self.specs[l].spiking() {
                    let mut spikes = vec![0.0; cur.len()];
                    for i in 0..cur.len() {
                        let u = self.decay * v[l][i] + cur[i];
                        let (sp, r) = if soft { self.ramp(u) } else { self.heaviside(u) };
                        regions.push(r);
                        spikes[i] = sp;
                        v[l][i] = u * (1.0 - sp);
                    }
                    prev = spikes;
                } else {
                    for (acc, c) in logits.iter_mut().zip(&cur) {
                        *acc += c / self.timesteps as f64;
                    }
                }
            }
        }
        (logits, regions)
    }

    /// Summed cross-entropy over a batch; regions concatenated across examples.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[usize]) -> (f64, Regions) {
        let mut total = 0.0;
        let mut regions = Vec::new();
        for (x, &y) in xs.iter().zip(ys) {
            let (z, r) = self.forward(x, true);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - z[y];
            regions.extend(r);
        }
        (total, regions)
    }
}

/// A random architecture with at most `max_params` parameters: one or two
/// convolutions, an optional spiking hidden dense layer and a readout.
pub fn random_architecture(rng: &mut ChaCha8Rng, max_params: usize) -> Architecture {
    loop {
        let c0 = rng.random_range(1..=2);
        let size = rng.random_range(4..=6);
        let mut layers = Vec::new();
        let c1 = rng.random_range(2..=4);
        let k1 = if rng.random_bool(0.5) { 3 } else { 2 };
        let p1 = if k1 == 3 { 1 } else { rng.random_range(0..=1) };
        layers.push(LayerSpec::conv(c0, c1, k1, 1, p1));
        let mut h = size + 2 * p1 - k1 + 1;
        let mut c = c1;
        if rng.random_bool(0.6) {
            let c2 = rng.random_range(2..=4);
            let s = rng.random_range(1..=2);
            layers.push(LayerSpec::conv(c1, c2, 3, s, 1));
            h = (h + 2 - 3) / s + 1;
            c = c2;
        }
        let mut features = c * h * h;
        if rng.random_bool(0.4) {
            let hidden = rng.random_range(3..=6);
            layers.push(LayerSpec::dense(features, hidden, true));
            features = hidden;
        }
        let classes = rng.random_range(2..=4);
        layers.push(LayerSpec::dense(features, classes, false));
        let arch = Architecture::new([c0, size, size], layers);
        let params: usize = arch.layers.iter().map(|l| l.weight_shape().iter().product::<usize>() + l.outputs()).sum();
        if params <= max_params {
            return arch;
        }
    }
}

pub fn random_network(seed: u64, max_params: usize, timesteps: usize) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = random_architecture(&mut rng, max_params);
    let lif = LifConfig {
        timesteps,
        ..LifConfig::default()
    };
    let mut net = init_network(arch, lif, seed).unwrap();
    for p in net.params_mut() {
        for b in p.bias.data_mut() {
            *b = rng.random_range(-0.2..0.6);
        }
    }
    net
}

pub fn random_images(rng: &mut ChaCha8Rng, n: usize, shape: [usize; 3]) -> Vec<Vec<f64>> {
    let len = shape.iter().product();
    (0..n)
        .map(|_| (0..len).map(|_| (rng.random::<f32>()) as f64).collect())
        .collect()
}

/// A mask keeping a random nonempty subset of every prunable layer.
pub fn random_mask(net: &Network, rng: &mut ChaCha8Rng, keep_prob: f64) -> FilterMask {
    let segs = net
        .prunable_layers()
        .iter()
        .map(|&l| {
            let n = net.specs()[l].outputs();
            loop {
                let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(keep_prob)).collect();
                if let Some(s) = Segment::new(bits) {
                    break s;
                }
            }
        })
        .collect();
    FilterMask::from_segments(net, segs).unwrap()
}

/// A small desk-style problem: 4-class 8x8 blobs and a CE-trained 2-conv net.
pub fn trained_desk(per_class: usize, epochs: usize, seed: u64) -> (Network, ccsrp_core::data::Dataset) {
    use ccsrp_core::data::SynthSpec;
    use ccsrp_core::training::{pretrain, Objective, TrainConfig};
    let spec = SynthSpec {
        amplitude: 0.3,
        ..SynthSpec::new(4, per_class, 8, 0.3, seed)
    };
    let ds = spec.generate().unwrap();
    let cfg = TrainConfig {
        objective: Objective::CrossEntropy,
        probe_size: 0,
        ..TrainConfig::desk(epochs)
    };
    let (net, _) = pretrain(Architecture::desk(8, 4), LifConfig::default(), &ds, &cfg, seed).unwrap();
    (net, ds)
}

/// Fixed inputs for one layer's search: the network, `D_s` and `D_a`.
pub struct LayerFixture {
    pub net: Network,
    pub clean: ccsrp_core::data::Dataset,
    pub adv: ccsrp_core::attack::AdvDataset,
}

impl LayerFixture {
    pub fn problem<'a>(&'a self, mask: &'a FilterMask) -> ccsrp_core::evolution::LayerProblem<'a> {
        ccsrp_core::evolution::LayerProblem {
            base: &self.net,
            base_mask: mask,
            clean: &self.clean,
            adv: &self.adv,
        }
    }
}

/// A CE-trained network with a single 8-filter convolution.
pub fn single_layer_net() -> (Network, ccsrp_core::data::Dataset) {
    use ccsrp_core::data::SynthSpec;
    use ccsrp_core::training::{pretrain, Objective, TrainConfig};
    let ds = SynthSpec {
        amplitude: 0.3,
        ..SynthSpec::new(4, 200, 8, 0.3, 1)
    }
    .generate()
    .unwrap();
    let arch = Architecture::new([1, 8, 8], vec![LayerSpec::conv(1, 8, 3, 1, 1), LayerSpec::dense(8 * 64, 4, false)]);
    let cfg = TrainConfig {
        objective: Objective::CrossEntropy,
        probe_size: 0,
        ..TrainConfig::desk(2)
    };
    let (net, _) = pretrain(arch, LifConfig::default(), &ds, &cfg, 3).unwrap();
    (net, ds)
}

/// `net` with a seeded 10% stratified `D_s` of `ds` and its shared adversarial set.
pub fn layer_fixture(net: &Network, ds: &ccsrp_core::data::Dataset, seed: u64) -> LayerFixture {
    use ccsrp_core::attack::{generate_adv_dataset, AttackConfig};
    use ccsrp_core::data::sample_subset;
    let clean = sample_subset(ds, 0.1, seed).unwrap();
    let adv = generate_adv_dataset(net, &clean, 5, 0.05, 0.1, &AttackConfig::eval(), seed).unwrap();
    LayerFixture {
        net: net.clone(),
        clean,
        adv,
    }
}

/// Scores of all 255 nonempty masks of an 8-filter layer 0, best first.
pub fn exhaustive_scores(fx: &LayerFixture) -> Vec<f64> {
    let ones = FilterMask::all_ones(&fx.net);
    let problem = fx.problem(&ones);
    let mut all: Vec<f64> = (1u32..256)
        .map(|m| {
            let seg = Segment::new((0..8).map(|b| m >> b & 1 == 1).collect()).unwrap();
            problem.evaluate(0, &seg).unwrap().score()
        })
        .collect();
    all.sort_by(|a, b| b.total_cmp(a));
    all
}

const H: f64 = 1e-3;

pub struct GradCheck {
    /// Largest elementwise relative error.
    pub worst: f64,
    pub compared: usize,
    /// Coordinates whose stencil straddles a ramp kink.
    pub skipped: usize,
    /// Compared coordinates with a gradient above 1e-6 in magnitude.
    pub nonzero: usize,
}

/// Relative error; the floor only matters where both values are essentially zero.
fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub fn batch_tensor(net: &Network, xs: &[Vec<f64>]) -> Tensor {
    let [c, h, w] = net.input_shape();
    Tensor::new(vec![xs.len(), c, h, w], xs.iter().flatten().map(|&v| v as f32).collect()).unwrap()
}

/// Soft-mode backprop of summed CE against a five-point central difference
/// (step 1e-3) of the f64 reference, over every parameter and input pixel of
/// a random network with at most 1000 parameters.
pub fn gradient_check(seed: u64) -> GradCheck {
    let floor = 1e-6;
    let net = random_network(seed, 1000, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let xs = random_images(&mut rng, 2, net.input_shape());
    let ys: Vec<usize> = (0..2).map(|i| (seed as usize + i) % net.num_classes()).collect();
    let x = batch_tensor(&net, &xs);
    let view = net.view();
    let (z, trace) = forward(&view, &x, Mode::Soft, true).unwrap();
    let (_, dz) = cross_entropy(&z, &ys, Reduction::Sum).unwrap();
    let g = backward(&view, &trace.unwrap(), &dz, Want::ALL).unwrap();
    let params = g.params.unwrap();
    let reference = RefNet::from_network(&net);
    let mut out = GradCheck {
        worst: 0.0,
        compared: 0,
        skipped: 0,
        nonzero: 0,
    };
    // Five-point central stencil at offsets ±h, ±2h. Coordinates whose
    // stencil straddles a ramp kink are skipped: the function is not
    // differentiable there.
    let mut compare = |analytic: f64, eval: &dyn Fn(f64) -> (f64, Vec<u8>)| {
        let pts = [eval(2.0 * H), eval(H), eval(-H), eval(-2.0 * H)];
        if pts.iter().any(|p| p.1 != pts[0].1) {
            out.skipped += 1;
            return;
        }
        let numeric = (-pts[0].0 + 8.0 * pts[1].0 - 8.0 * pts[2].0 + pts[3].0) / (12.0 * H);
        out.compared += 1;
        if analytic.abs().max(numeric.abs()) > floor {
            out.nonzero += 1;
        }
        out.worst = out.worst.max(rel_err(analytic, numeric, floor));
    };
    for (l, lp) in params.layers.iter().enumerate() {
        for (is_bias, grads) in [(false, lp.weight.data()), (true, lp.bias.data())] {
            for (i, &a) in grads.iter().enumerate() {
                let eval = |d: f64| {
                    let mut r = reference.clone();
                    let target = if is_bias { &mut r.biases[l] } else { &mut r.weights[l] };
                    target[i] += d;
                    r.loss(&xs, &ys)
                };
                compare(a as f64, &eval);
            }
        }
    }
    let gx = g.input.unwrap();
    for (i, &a) in gx.data().iter().enumerate() {
        let len = xs[0].len();
        let eval = |d: f64| {
            let mut p = xs.clone();
            p[i / len][i % len] += d;
            reference.loss(&p, &ys)
        };
        compare(a as f64, &eval);
    }
    out
}

