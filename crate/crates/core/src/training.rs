//! Adversarial training: TRADES objective, SGD with momentum and weight
//! decay, cosine-annealed learning rate.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attack::{pgd_ascent, pgd_attack, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::snn::{
    accuracy, backward, cross_entropy, forward, init_network, log_softmax, softmax, Architecture, Gradients, LifConfig,
    Mode, Network, Reduction, Want,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    CosineAnnealing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Clean cross-entropy plus β·KL(p_clean ‖ p_adv).
    Trades,
    /// Plain cross-entropy on clean inputs; no attack is run.
    CrossEntropy,
}

/// Loss maximised by the inner PGD of TRADES training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerLoss {
    CrossEntropy,
    Kl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub trades_beta: f64,
    pub objective: Objective,
    pub inner_loss: InnerLoss,
    pub attack: AttackConfig,
    /// Examples used for the end-of-epoch accuracy columns of the log (0 disables).
    pub probe_size: usize,
}

impl TrainConfig {
    /// 30 epochs, batch 128, SGD(lr 0.1, momentum 0.9, wd 1e-4), cosine schedule, TRADES β = 6.
    pub fn paper() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Schedule::CosineAnnealing,
            trades_beta: 6.0,
            objective: Objective::Trades,
            inner_loss: InnerLoss::CrossEntropy,
            attack: AttackConfig::train(),
            probe_size: 256,
        }
    }

    /// Small-budget variant used for laptop-scale runs.
    pub fn desk(epochs: usize) -> Self {
        Self {
            epochs,
            batch_size: 32,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        self.validate_step_params()
    }

    pub(crate) fn validate_step_params(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) || !(self.trades_beta >= 0.0) {
            return bad("weight_decay and trades_beta must be non-negative");
        }
        self.attack.validate()
    }
}

/// `lr0/2 · (1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// One SGD update on flat buffers: `g' = g + wd·p`, `v ← m·v + g'`, `p ← p − lr·v`.
pub fn sgd_step(params: &mut [f32], grads: &[f32], velocity: &mut [f32], lr: f32, momentum: f32, weight_decay: f32) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *p;
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// Momentum buffers shaped like a network's parameters.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Gradients,
}

impl Sgd {
    pub fn new(net: &Network, momentum: f32, weight_decay: f32) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f32) {
        for ((p, g), v) in net.params_mut().iter_mut().zip(&grads.layers).zip(&mut self.velocity.layers) {
            sgd_step(p.weight.data_mut(), g.weight.data(), v.weight.data_mut(), lr, self.momentum, self.weight_decay);
            sgd_step(p.bias.data_mut(), g.bias.data(), v.bias.data_mut(), lr, self.momentum, self.weight_decay);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TradesLoss {
    pub loss: f32,
    pub ce: f32,
    pub kl: f32,
    pub d_clean: Tensor,
    pub d_adv: Tensor,
}

/// `CE(z_clean, y) + β·KL(softmax(z_clean) ‖ softmax(z_adv))`, averaged
/// over the batch, with gradients for both logit sets.
pub fn trades_loss(clean: &Tensor, adv: &Tensor, y: &[usize], beta: f32) -> Result<TradesLoss> {
    if clean.shape() != adv.shape() {
        return Err(Error::ShapeMismatch {
            expected: clean.shape().to_vec(),
            got: adv.shape().to_vec(),
        });
    }
    let (ce, mut d_clean) = cross_entropy(clean, y, Reduction::Mean)?;
    let b = y.len().max(1) as f32;
    let mut kl_total = 0.0f32;
    let mut d_adv = Tensor::zeros(adv.shape().to_vec());
    for i in 0..y.len() {
        let lp = log_softmax(clean.row(i));
        let lq = log_softmax(adv.row(i));
        let p: Vec<f32> = lp.iter().map(|l| l.exp()).collect();
        let q: Vec<f32> = lq.iter().map(|l| l.exp()).collect();
        let ratio: Vec<f32> = lp.iter().zip(&lq).map(|(a, c)| a - c).collect();
        let kl: f32 = p.iter().zip(&ratio).map(|(pi, r)| pi * r).sum();
        kl_total += kl;
        let dc = d_clean.row_mut(i);
        for j in 0..p.len() {
            // dKL/dz_clean_j = p_j (log p_j − log q_j − KL)
            dc[j] += beta * p[j] * (ratio[j] - kl) / b;
        }
        let da = d_adv.row_mut(i);
        for j in 0..p.len() {
            da[j] = beta * (q[j] - p[j]) / b;
        }
    }
    let kl = kl_total / b;
    Ok(TradesLoss {
        loss: ce + beta * kl,
        ce,
        kl,
        d_clean,
        d_adv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f32,
    pub clean_acc: Option<f64>,
    pub accr: Option<f64>,
}

/// Gradient of `Σ KL(p_clean ‖ softmax(f(x')))` with respect to `x'`.
fn kl_input_gradient(net: &Network, p_clean: &[Vec<f32>], xa: &Tensor) -> Result<Tensor> {
    let view = net.view();
    let (z, trace) = forward(&view, xa, Mode::Spiking, true)?;
    let mut dz = Tensor::zeros(z.shape().to_vec());
    for (i, p) in p_clean.iter().enumerate() {
        let q = softmax(z.row(i));
        for ((d, qj), pj) in dz.row_mut(i).iter_mut().zip(&q).zip(p) {
            *d = qj - pj;
        }
    }
    let trace = trace.expect("recorded");
    backward(&view, &trace, &dz, Want::INPUT)?.input.ok_or(Error::StaleTrace)
}

/// One optimiser step worth of loss and gradients for a batch.
fn batch_gradients(net: &Network, x: &Tensor, y: &[usize], cfg: &TrainConfig, attack_seed: u64) -> Result<(f32, Gradients)> {
    let view = net.view();
    match cfg.objective {
        Objective::CrossEntropy => {
            let (z, trace) = forward(&view, x, Mode::Spiking, true)?;
            let (loss, dz) = cross_entropy(&z, y, Reduction::Mean)?;
            let g = backward(&view, &trace.expect("recorded"), &dz, Want::PARAMS)?;
            Ok((loss, g.params.expect("requested")))
        }
        Objective::Trades => {
            let mut rng = rng::rng_from(attack_seed);
            let x_adv = match cfg.inner_loss {
                InnerLoss::CrossEntropy => pgd_attack(&view, x, y, &cfg.attack, &mut rng)?,
                InnerLoss::Kl => {
                    let z = forward(&view, x, Mode::Spiking, false)?.0;
                    let p: Vec<Vec<f32>> = (0..y.len()).map(|i| softmax(z.row(i))).collect();
                    pgd_ascent(x, &cfg.attack, &mut rng, |xa| kl_input_gradient(net, &p, xa))?
                }
            };
            let (zc, tc) = forward(&view, x, Mode::Spiking, true)?;
            let (za, ta) = forward(&view, &x_adv, Mode::Spiking, true)?;
            let t = trades_loss(&zc, &za, y, cfg.trades_beta as f32)?;
            let mut g = backward(&view, &tc.expect("recorded"), &t.d_clean, Want::PARAMS)?
                .params
                .expect("requested");
            let ga = backward(&view, &ta.expect("recorded"), &t.d_adv, Want::PARAMS)?
                .params
                .expect("requested");
            g.add_assign(&ga);
            Ok((t.loss, g))
        }
    }
}

fn probe_metrics(net: &Network, ds: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<(f64, f64)> {
    let n = cfg.probe_size.min(ds.len());
    let idx: Vec<usize> = (0..n).collect();
    let (x, y) = ds.batch(&idx);
    let view = net.view();
    let acc = accuracy(&view, &x, &y)?;
    let mut rng = rng::rng_from(seed);
    let xa = pgd_attack(&view, &x, &y, &cfg.attack, &mut rng)?;
    Ok((acc, accuracy(&view, &xa, &y)?))
}

/// Adversarial fine-tuning: for each seeded-shuffled batch, craft PGD
/// examples and take one SGD step on the TRADES loss (or plain CE, per
/// `cfg.objective`). The learning rate is cosine-annealed over all steps.
pub fn adv_finetune(net: &Network, ds: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<(Network, Vec<TrainLogRow>)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate_step_params()?;
    let mut net = net.clone();
    let batches_per_epoch = ds.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * batches_per_epoch;
    let mut opt = Sgd::new(&net, cfg.momentum as f32, cfg.weight_decay as f32);
    let mut log = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut rng::child_rng(seed, &[tag::EPOCH, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = ds.batch(chunk);
            let lr = cosine_lr(step, total, cfg.lr0);
            let (loss, grads) = batch_gradients(&net, &x, &y, cfg, rng::derive_seed(seed, &[tag::BATCH, step as u64]))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteActivation("training loss"));
            }
            opt.step(&mut net, &grads, lr as f32);
            log.push(TrainLogRow {
                step,
                lr,
                loss,
                clean_acc: None,
                accr: None,
            });
            step += 1;
        }
        if cfg.probe_size > 0 {
            let (acc, accr) = probe_metrics(&net, ds, cfg, rng::derive_seed(seed, &[tag::MONITOR, epoch as u64]))?;
            if let Some(row) = log.last_mut() {
                row.clean_acc = Some(acc);
                row.accr = Some(accr);
            }
        }
    }
    Ok((net, log))
}

/// He-initialised network followed by adversarial training.
pub fn pretrain(
    arch: Architecture,
    lif: LifConfig,
    ds: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Network, Vec<TrainLogRow>)> {
    let net = init_network(arch, lif, seed)?;
    adv_finetune(&net, ds, cfg, rng::derive_seed(seed, &[tag::FINETUNE]))
}
