//! The outer pruning loop: each iteration crafts a shared adversarial set,
//! evolves every prunable layer independently, combines the winners,
//! shrinks the network and fine-tunes it adversarially.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ea::{ea_optimize_layer, EaConfig, Fitness, LayerProblem};
use crate::attack::{generate_adv_dataset, pgd_attack, AttackConfig};
use crate::data::{sample_indices, Dataset};
use crate::error::{Error, Result};
use crate::pruning::{count_flops, materialize, FilterMask, FlopsReport};
use crate::rng::{self, tag};
use crate::snn::{accuracy, Network};
use crate::training::{adv_finetune, TrainConfig, TrainLogRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcsrpConfig {
    /// Pruning iterations.
    pub iterations: usize,
    /// Sub-networks used to craft the shared adversarial set.
    pub k: usize,
    /// Fraction of the training set drawn as `D_s`.
    pub sample_fraction: f64,
    /// Draw `D_s` per class in proportion to class frequency.
    pub stratified: bool,
    /// Draw a fresh `D_s` every iteration rather than once per run.
    pub resample_each_iteration: bool,
    /// Craft a separate adversarial set for every layer's search.
    pub regenerate_adv_per_layer: bool,
    pub ea: EaConfig,
    pub finetune: TrainConfig,
    /// Attack used to build `D_a` and to report robust accuracy.
    pub eval_attack: AttackConfig,
    /// Training-set examples used for the per-iteration summary metrics (0 disables).
    pub monitor_size: usize,
}

impl CcsrpConfig {
    pub fn paper() -> Self {
        Self {
            iterations: 16,
            k: 5,
            sample_fraction: 0.10,
            stratified: true,
            resample_each_iteration: true,
            regenerate_adv_per_layer: false,
            ea: EaConfig::paper(),
            finetune: TrainConfig::paper(),
            eval_attack: AttackConfig::eval(),
            monitor_size: 1000,
        }
    }

    /// Reduced budget: 4 iterations, 5 generations, 3 fine-tuning epochs.
    pub fn desk() -> Self {
        Self {
            iterations: 4,
            ea: EaConfig {
                generations: 5,
                ..EaConfig::paper()
            },
            finetune: TrainConfig::desk(3),
            monitor_size: 400,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::ConfigInvalid("k must be at least 1".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::ConfigInvalid("sample_fraction must lie in (0, 1]".into()));
        }
        self.ea.validate()?;
        self.finetune.validate_step_params()?;
        self.eval_attack.validate()
    }
}

/// Clean and robust accuracy of a network on the monitor subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub accr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    /// Best individual of each layer's search.
    pub layer_winners: Vec<Fitness>,
    /// Combined mask scored on `D_s` and `D_a` before fine-tuning.
    pub combined: Fitness,
    /// Fine-tuned network on the monitor subset, if enabled.
    pub monitor: Option<Metrics>,
    pub flops: u64,
    /// `flops` as a fraction of the pretrained network's.
    pub flops_ratio: f64,
    pub filters: Vec<usize>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub iteration: usize,
    pub network: Network,
    /// Mask chosen in this iteration, relative to the previous entry's network.
    pub mask: FilterMask,
    /// Text form of every mask applied so far, oldest first.
    pub mask_history: Vec<String>,
    pub summary: IterationSummary,
    pub train_log: Vec<TrainLogRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub base_flops: FlopsReport,
    pub base_metrics: Option<Metrics>,
    pub entries: Vec<ArchiveEntry>,
}

impl Archive {
    pub fn last_network(&self) -> Option<&Network> {
        self.entries.last().map(|e| &e.network)
    }
}

/// Where to pick up an interrupted run.
#[derive(Debug, Clone)]
pub struct Resume {
    /// Iteration index of the next entry to produce.
    pub next_iteration: usize,
    /// Network of the last completed entry.
    pub network: Network,
    pub mask_history: Vec<String>,
}

/// The whole of `source` when it fits in `monitor_size`, else a stratified sample.
fn monitor_set(source: &Dataset, cfg: &CcsrpConfig, seed: u64) -> Result<Option<Dataset>> {
    if cfg.monitor_size == 0 {
        return Ok(None);
    }
    if cfg.monitor_size >= source.len() {
        return Ok(Some(source.clone()));
    }
    let fraction = cfg.monitor_size as f64 / source.len() as f64;
    let idx = sample_indices(source, fraction, rng::derive_seed(seed, &[tag::MONITOR]), true)?;
    source.subset(&idx).map(Some)
}

/// Clean accuracy and white-box robust accuracy under `attack`.
pub fn measure(net: &Network, ds: &Dataset, attack: &AttackConfig, seed: u64) -> Result<Metrics> {
    let view = net.view();
    let acc = accuracy(&view, &ds.images, &ds.labels)?;
    let adv = pgd_attack(&view, &ds.images, &ds.labels, attack, &mut rng::rng_from(seed))?;
    Ok(Metrics {
        acc,
        accr: accuracy(&view, &adv, &ds.labels)?,
    })
}

fn run_iteration(
    base: &Network,
    dt: &Dataset,
    cfg: &CcsrpConfig,
    seed: u64,
    t: usize,
    reference: &FlopsReport,
    monitor: Option<&Dataset>,
) -> Result<(Network, FilterMask, IterationSummary, Vec<TrainLogRow>)> {
    let it_seed = rng::derive_seed(seed, &[tag::ITERATION, t as u64]);
    let subset_seed = if cfg.resample_each_iteration {
        rng::derive_seed(it_seed, &[tag::SUBSET])
    } else {
        rng::derive_seed(seed, &[tag::SUBSET])
    };
    let ds = dt.subset(&sample_indices(dt, cfg.sample_fraction, subset_seed, cfg.stratified)?)?;
    let base_mask = FilterMask::all_ones(base);
    let adv_seed = rng::derive_seed(it_seed, &[tag::ADVERSARIAL]);
    let shared = if cfg.regenerate_adv_per_layer {
        None
    } else {
        Some(generate_adv_dataset(base, &ds, cfg.k, cfg.ea.p1, cfg.ea.r, &cfg.eval_attack, adv_seed)?)
    };
    let layers = base_mask.segments().len();
    let outcomes = (0..layers)
        .into_par_iter()
        .map(|i| {
            let own;
            let adv = match &shared {
                Some(a) => a,
                None => {
                    let s = rng::derive_seed(adv_seed, &[tag::LAYER, i as u64]);
                    own = generate_adv_dataset(base, &ds, cfg.k, cfg.ea.p1, cfg.ea.r, &cfg.eval_attack, s)?;
                    &own
                }
            };
            let problem = LayerProblem {
                base,
                base_mask: &base_mask,
                clean: &ds,
                adv,
            };
            let layer_seed = rng::derive_seed(it_seed, &[tag::LAYER, i as u64]);
            let out = ea_optimize_layer(i, &problem, &cfg.ea, layer_seed)?;
            let combined_adv = if shared.is_none() && i == 0 { Some(adv.clone()) } else { None };
            Ok((out, combined_adv))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut evaluations = 0;
    let mut winners = Vec::with_capacity(layers);
    let mut segments = Vec::with_capacity(layers);
    let mut first_adv = None;
    for (out, adv) in outcomes {
        evaluations += out.evaluations;
        winners.push(out.best.fitness().expect("ranked individuals are evaluated"));
        segments.push(out.best.bits().clone());
        first_adv = first_adv.or(adv);
    }
    let mask = FilterMask::from_segments(base, segments)?;
    let adv = match &shared {
        Some(a) => a,
        None => first_adv.as_ref().expect("layer 0 keeps its set"),
    };
    let combined = LayerProblem {
        base,
        base_mask: &mask,
        clean: &ds,
        adv,
    }
    .evaluate_mask(&mask)?;

    let pruned = materialize(base, &mask)?;
    let (tuned, log) = adv_finetune(&pruned, dt, &cfg.finetune, rng::derive_seed(it_seed, &[tag::FINETUNE]))?;
    let flops = count_flops(&tuned.view());
    let monitor = match monitor {
        Some(m) => Some(measure(&tuned, m, &cfg.eval_attack, rng::derive_seed(it_seed, &[tag::MONITOR]))?),
        None => None,
    };
    let summary = IterationSummary {
        iteration: t,
        layer_winners: winners,
        combined,
        monitor,
        flops: flops.total_flops,
        flops_ratio: flops.total_flops as f64 / reference.total_flops.max(1) as f64,
        filters: tuned.prunable_layers().iter().map(|&l| tuned.specs()[l].outputs()).collect(),
        evaluations,
    };
    Ok((tuned, mask, summary, log))
}

/// Optional inputs of [`ccsrp_run_with`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    pub resume: Option<Resume>,
    /// Source of the monitor subset; the training set when absent.
    pub held_out: Option<&'a Dataset>,
}

/// Runs the pruning loop, handing each completed entry to `on_entry`
/// before starting the next iteration. On failure the entries completed so
/// far are returned alongside the error.
pub fn ccsrp_run_with<F>(
    pretrained: &Network,
    dt: &Dataset,
    cfg: &CcsrpConfig,
    seed: u64,
    opts: RunOptions,
    mut on_entry: F,
) -> (Archive, Option<Error>)
where
    F: FnMut(&ArchiveEntry) -> Result<()>,
{
    let base_flops = count_flops(&pretrained.view());
    let mut archive = Archive {
        base_flops: base_flops.clone(),
        base_metrics: None,
        entries: Vec::new(),
    };
    if let Err(e) = cfg.validate() {
        return (archive, Some(e));
    }
    if dt.is_empty() {
        return (archive, Some(Error::EmptyDataset));
    }
    let monitor = match monitor_set(opts.held_out.unwrap_or(dt), cfg, seed) {
        Ok(m) => m,
        Err(e) => return (archive, Some(e)),
    };
    if let Some(m) = &monitor {
        match measure(pretrained, m, &cfg.eval_attack, rng::derive_seed(seed, &[tag::MONITOR])) {
            Ok(v) => archive.base_metrics = Some(v),
            Err(e) => return (archive, Some(e)),
        }
    }
    let (start, mut net, mut history) = match opts.resume {
        Some(r) => (r.next_iteration, r.network, r.mask_history),
        None => (0, pretrained.clone(), Vec::new()),
    };
    for t in start..cfg.iterations {
        match run_iteration(&net, dt, cfg, seed, t, &base_flops, monitor.as_ref()) {
            Ok((tuned, mask, summary, train_log)) => {
                history.push(mask.to_text());
                let entry = ArchiveEntry {
                    iteration: t,
                    network: tuned.clone(),
                    mask,
                    mask_history: history.clone(),
                    summary,
                    train_log,
                };
                if let Err(e) = on_entry(&entry) {
                    return (archive, Some(e));
                }
                archive.entries.push(entry);
                net = tuned;
            }
            Err(e) => return (archive, Some(e)),
        }
    }
    (archive, None)
}

/// Runs every iteration and returns the full archive.
pub fn ccsrp_run(pretrained: &Network, dt: &Dataset, cfg: &CcsrpConfig, seed: u64) -> Result<Archive> {
    match ccsrp_run_with(pretrained, dt, cfg, seed, RunOptions::default(), |_| Ok(())) {
        (archive, None) => Ok(archive),
        (_, Some(e)) => Err(e),
    }
}
