//! L∞ PGD and the shared adversarial-set generator.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{decode_container, encode_container, write_atomic};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evolution::bounded_bitwise_mutation;
use crate::pruning::FilterMask;
use crate::rng::{self, tag, Rng};
use crate::snn::{accuracy, backward, cross_entropy, forward, Mode, NetView, Network, Reduction, Want};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// L∞ budget in pixel units.
    pub epsilon: f32,
    /// Per-step size.
    pub alpha: f32,
    pub steps: usize,
    pub random_start: bool,
}

impl AttackConfig {
    /// Adversarial-training attack: ε = 8/255, 10 steps of 2/255, random start.
    pub fn train() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            steps: 10,
            random_start: true,
        }
    }

    /// Evaluation attack: ε = 8/255, 40 steps of 2/255.
    pub fn eval() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            steps: 40,
            random_start: false,
        }
    }

    /// Zero budget: the "attack" returns clean inputs.
    pub fn none() -> Self {
        Self {
            epsilon: 0.0,
            alpha: 0.0,
            steps: 0,
            random_start: false,
        }
    }

    pub fn is_null(&self) -> bool {
        self.epsilon == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if self.is_null() {
            return Ok(());
        }
        if !(self.alpha > 0.0 && self.alpha <= self.epsilon) {
            return bad(format!("alpha {} must lie in (0, epsilon]", self.alpha));
        }
        if self.steps == 0 {
            return bad("attack steps must be positive".into());
        }
        Ok(())
    }
}

#[inline]
fn sign(g: f32) -> f32 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn project(x_adv: &mut [f32], x: &[f32], eps: f32) {
    for (a, &c) in x_adv.iter_mut().zip(x) {
        *a = a.clamp(c - eps, c + eps).clamp(0.0, 1.0);
    }
}

/// Signed-gradient ascent projected onto `[0,1] ∩ B∞(x, ε)`, with the
/// gradient supplied by `grad`.
pub fn pgd_ascent<F>(x: &Tensor, cfg: &AttackConfig, rng: &mut Rng, mut grad: F) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    cfg.validate()?;
    let mut adv = x.clone();
    if cfg.is_null() || x.is_empty() {
        return Ok(adv);
    }
    if cfg.random_start {
        for a in adv.data_mut() {
            *a += rng.random_range(-cfg.epsilon..=cfg.epsilon);
        }
        project(adv.data_mut(), x.data(), cfg.epsilon);
    }
    for _ in 0..cfg.steps {
        let g = grad(&adv)?;
        for (a, &gi) in adv.data_mut().iter_mut().zip(g.data()) {
            *a += cfg.alpha * sign(gi);
        }
        project(adv.data_mut(), x.data(), cfg.epsilon);
    }
    Ok(adv)
}

/// Gradient of the summed cross-entropy with respect to the input, through
/// the spiking forward pass and its surrogate backward pass.
pub fn input_gradient(view: &NetView, x: &Tensor, y: &[usize]) -> Result<Tensor> {
    let (z, trace) = forward(view, x, Mode::Spiking, true)?;
    let (_, dz) = cross_entropy(&z, y, Reduction::Sum)?;
    let trace = trace.expect("recorded");
    backward(view, &trace, &dz, Want::INPUT)?
        .input
        .ok_or(Error::StaleTrace)
}

/// White-box PGD against `view` maximising cross-entropy.
pub fn pgd_attack(view: &NetView, x: &Tensor, y: &[usize], cfg: &AttackConfig, rng: &mut Rng) -> Result<Tensor> {
    if x.dim0() != y.len() {
        return Err(Error::CountMismatch {
            images: x.dim0(),
            labels: y.len(),
        });
    }
    if x.dim0() == 0 {
        return Ok(x.clone());
    }
    pgd_ascent(x, cfg, rng, |xa| input_gradient(view, xa, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub subnet: usize,
    pub source_index: usize,
}

/// Adversarial examples with the labels of their clean sources.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvDataset {
    pub examples: Tensor,
    pub labels: Vec<usize>,
    pub provenance: Vec<Provenance>,
    /// Text form of each sub-network's mask.
    pub subnet_masks: Vec<String>,
    pub attack: AttackConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvMeta {
    labels: Vec<usize>,
    provenance: Vec<Provenance>,
    subnet_masks: Vec<String>,
    attack: AttackConfig,
}

impl AdvDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = AdvMeta {
            labels: self.labels.clone(),
            provenance: self.provenance.clone(),
            subnet_masks: self.subnet_masks.clone(),
            attack: self.attack,
        };
        encode_container("adv_dataset", &meta, &[("examples".to_string(), &self.examples)])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, mut blocks): (AdvMeta, _) = decode_container("adv_dataset", &fs::read(path)?, path)?;
        let (_, examples) = blocks.pop().ok_or_else(|| Error::TruncatedFile(path.to_path_buf()))?;
        Ok(Self {
            examples,
            labels: meta.labels,
            provenance: meta.provenance,
            subnet_masks: meta.subnet_masks,
            attack: meta.attack,
        })
    }
}

/// Number of layers mutated per sub-network: `⌊n/k⌋`, at least 1.
pub fn layers_per_subnet(n: usize, k: usize) -> usize {
    if n == 0 {
        0
    } else {
        (n / k.max(1)).max(1)
    }
}

/// Contiguous shard `i` of `k` over `n` items; shard sizes differ by at most one.
pub fn shard_range(n: usize, k: usize, i: usize) -> std::ops::Range<usize> {
    (i * n / k)..((i + 1) * n / k)
}

/// Builds the shared adversarial set for one pruning iteration.
///
/// `D_s` is split into `k` disjoint shards. For shard `i`, `⌊n/k⌋` distinct
/// prunable layers of `base` are drawn, their all-ones segments are mutated
/// with `(p1, r)`, and PGD is run against that sub-network on the shard.
pub fn generate_adv_dataset(
    base: &Network,
    ds: &Dataset,
    k: usize,
    p1: f64,
    r: f64,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AdvDataset> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::ConfigInvalid("k must be at least 1".into()));
    }
    cfg.validate()?;
    let n_layers = base.prunable_layers().len();
    let per = layers_per_subnet(n_layers, k);
    let ones = FilterMask::all_ones(base);
    let mut parts = Vec::with_capacity(k);
    let mut provenance = Vec::with_capacity(ds.len());
    let mut subnet_masks = Vec::with_capacity(k);
    for i in 0..k {
        let mut rng = rng::child_rng(seed, &[tag::SHARD, i as u64]);
        let chosen = if per > 0 {
            rand::seq::index::sample(&mut rng, n_layers, per).into_vec()
        } else {
            Vec::new()
        };
        let mut mask = ones.clone();
        for layer in chosen {
            let seg = bounded_bitwise_mutation(mask.segment(layer), p1, r, &mut rng);
            mask = mask.with_segment(layer, seg)?;
        }
        let view = NetView::masked(base, &mask)?;
        let range = shard_range(ds.len(), k, i);
        let idx: Vec<usize> = range.collect();
        let (x, y) = ds.batch(&idx);
        let adv = pgd_attack(&view, &x, &y, cfg, &mut rng)?;
        provenance.extend(idx.iter().map(|&s| Provenance {
            subnet: i,
            source_index: s,
        }));
        subnet_masks.push(mask.to_text());
        parts.push(adv);
    }
    let parts: Vec<Tensor> = parts.into_iter().filter(|t| t.dim0() > 0).collect();
    Ok(AdvDataset {
        examples: Tensor::concat_rows(&parts)?,
        labels: ds.labels.clone(),
        provenance,
        subnet_masks,
        attack: *cfg,
    })
}

/// Top-1 accuracy on adversarial examples.
pub fn robust_accuracy(view: &NetView, adv: &AdvDataset) -> Result<f64> {
    accuracy(view, &adv.examples, &adv.labels)
}
