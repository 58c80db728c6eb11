use std::fs;
use std::path::{Path, PathBuf};

use ccsrp_core::attack::AttackConfig;
use ccsrp_core::checkpoint::{load_network, save_network};
use ccsrp_core::data::Dataset;
use ccsrp_core::evolution::{ccsrp_run_with, measure, IterationSummary, Resume, RunOptions};
use ccsrp_core::pruning::count_flops;
use ccsrp_core::snn::Network;
use ccsrp_core::training::pretrain;
use serde::{Deserialize, Serialize};

use crate::artifacts::{fingerprint, read_csv, read_json, write_csv, write_json, write_text};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const PRETRAINED: &str = "pretrained.ckpt";
pub const ARCHIVE: &str = "archive";

pub fn entry_dir(archive: &Path, iteration: usize) -> PathBuf {
    archive.join(format!("iter_{iteration:03}"))
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains the starting network and writes its checkpoint and step log.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainOutput> {
    cfg.validate()?;
    let (train, _) = cfg.data.load()?;
    let (net, log) = pretrain(cfg.architecture.clone(), cfg.lif, &train, &cfg.pretrain, cfg.seed)?;
    let checkpoint = cfg.out_dir.join(PRETRAINED);
    let log_path = cfg.out_dir.join("pretrain_log.csv");
    write_csv(&log_path, &log)?;
    write_json(&cfg.out_dir.join("config.json"), cfg)?;
    save_network(&net, &checkpoint)?;
    Ok(PretrainOutput {
        checkpoint,
        log: log_path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub iteration: usize,
    pub acc: Option<f64>,
    pub accr: Option<f64>,
    pub flops: u64,
    pub flops_ratio: f64,
    /// `100 · (1 − flops / flops_base)`.
    pub flops_pct: f64,
}

impl From<&IterationSummary> for SummaryRow {
    fn from(s: &IterationSummary) -> Self {
        Self {
            iteration: s.iteration,
            acc: s.monitor.map(|m| m.acc),
            accr: s.monitor.map(|m| m.accr),
            flops: s.flops,
            flops_ratio: s.flops_ratio,
            flops_pct: 100.0 * (1.0 - s.flops_ratio),
        }
    }
}

/// Contents of an entry's `fitness.json`; written last, so its presence marks a complete entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryRecord {
    pub summary: IterationSummary,
    pub mask_history: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseRecord {
    pub flops: u64,
    pub acc: Option<f64>,
    pub accr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub complete: bool,
    pub completed_iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Origin {
    config: RunConfig,
    checkpoint_fingerprint: u64,
}

/// Completed entries `0..n` in order; stops at the first gap.
fn completed_entries(archive: &Path) -> Result<Vec<EntryRecord>> {
    let mut out = Vec::new();
    loop {
        let path = entry_dir(archive, out.len()).join("fitness.json");
        if !path.exists() {
            return Ok(out);
        }
        out.push(read_json(&path)?);
    }
}

fn write_entry(archive: &Path, entry: &ccsrp_core::evolution::ArchiveEntry) -> Result<()> {
    let dir = entry_dir(archive, entry.iteration);
    save_network(&entry.network, &dir.join("network.ckpt"))?;
    write_text(&dir.join("mask.txt"), &entry.mask.to_text())?;
    write_csv(&dir.join("train_log.csv"), &entry.train_log)?;
    write_json(
        &dir.join("fitness.json"),
        &EntryRecord {
            summary: entry.summary.clone(),
            mask_history: entry.mask_history.clone(),
        },
    )
}

fn write_summary(archive: &Path, records: &[EntryRecord]) -> Result<()> {
    let rows: Vec<SummaryRow> = records.iter().map(|r| SummaryRow::from(&r.summary)).collect();
    write_csv(&archive.join("summary.csv"), &rows)
}

fn into_core(e: CliError) -> ccsrp_core::Error {
    match e {
        CliError::Core(c) => c,
        other => ccsrp_core::Error::Io(std::io::Error::other(other.to_string())),
    }
}

#[derive(Debug, Clone)]
pub struct PruneOutput {
    pub archive: PathBuf,
    pub entries: usize,
    /// Entries already present when the run started.
    pub resumed_from: usize,
}

/// Runs the pruning loop into `<out_dir>/archive`, continuing after the last
/// completed entry if the archive was started by the same config and checkpoint.
pub fn cmd_prune(cfg: &RunConfig, checkpoint: &Path) -> Result<PruneOutput> {
    cfg.validate()?;
    let bytes = fs::read(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let net = ccsrp_core::checkpoint::decode_network(&bytes, checkpoint)?;
    if net.architecture() != &cfg.architecture {
        return Err(CliError::Config("checkpoint architecture differs from the config".into()));
    }
    let (train, test) = cfg.data.load()?;
    let archive = cfg.out_dir.join(ARCHIVE);
    // The output location is not part of a run's identity, so archives can be moved.
    let origin = Origin {
        config: RunConfig {
            out_dir: PathBuf::new(),
            ..cfg.clone()
        },
        checkpoint_fingerprint: fingerprint(&bytes),
    };
    let origin_path = archive.join("origin.json");
    if origin_path.exists() {
        let previous: Origin = read_json(&origin_path)?;
        if previous != origin {
            return Err(CliError::Config(format!(
                "{} was started from a different config or checkpoint",
                archive.display()
            )));
        }
    } else {
        write_json(&origin_path, &origin)?;
    }

    let mut records = completed_entries(&archive)?;
    let resumed_from = records.len();
    let resume = match records.last() {
        Some(last) => Some(Resume {
            next_iteration: records.len(),
            network: load_network(&entry_dir(&archive, records.len() - 1).join("network.ckpt"))?,
            mask_history: last.mask_history.clone(),
        }),
        None => None,
    };
    let opts = RunOptions {
        resume,
        held_out: Some(&test),
    };
    let (result, err) = ccsrp_run_with(&net, &train, &cfg.ccsrp, cfg.seed, opts, |entry| {
        write_entry(&archive, entry).map_err(into_core)?;
        records.push(EntryRecord {
            summary: entry.summary.clone(),
            mask_history: entry.mask_history.clone(),
        });
        write_summary(&archive, &records).map_err(into_core)
    });
    let base = BaseRecord {
        flops: result.base_flops.total_flops,
        acc: result.base_metrics.map(|m| m.acc),
        accr: result.base_metrics.map(|m| m.accr),
    };
    if result.base_metrics.is_some() || err.is_none() {
        write_json(&archive.join("base.json"), &base)?;
    }
    write_summary(&archive, &records)?;
    let status = Status {
        complete: err.is_none() && records.len() == cfg.ccsrp.iterations,
        completed_iterations: records.len(),
        error: err.as_ref().map(|e| e.to_string()),
    };
    write_json(&archive.join("status.json"), &status)?;
    if let Some(e) = err {
        return Err(e.into());
    }
    Ok(PruneOutput {
        archive,
        entries: records.len(),
        resumed_from,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub accr: f64,
    pub flops: u64,
}

/// Clean and robust accuracy of a network on `ds`, plus its per-timestep FLOPs.
pub fn evaluate(net: &Network, ds: &Dataset, attack: &AttackConfig, seed: u64) -> Result<EvalReport> {
    if ds.image_shape() != net.input_shape() {
        return Err(ccsrp_core::Error::ShapeMismatch {
            expected: net.input_shape().to_vec(),
            got: ds.image_shape().to_vec(),
        }
        .into());
    }
    let m = measure(net, ds, attack, seed)?;
    Ok(EvalReport {
        acc: m.acc,
        accr: m.accr,
        flops: count_flops(&net.view()).total_flops,
    })
}

pub fn cmd_eval(checkpoint: &Path, ds: &Dataset, attack: &AttackConfig, seed: u64) -> Result<EvalReport> {
    let net = load_network(checkpoint)?;
    evaluate(&net, ds, attack, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub iteration: usize,
    pub acc: Option<f64>,
    pub accr: Option<f64>,
    pub flops: u64,
    pub flops_pct: f64,
    /// Points of clean accuracy lost relative to the pretrained network.
    pub acc_drop: Option<f64>,
    pub accr_drop: Option<f64>,
    pub filters: String,
}

/// Consolidates an archive into `report.csv` plus one mask file per
/// iteration under `report/`.
pub fn cmd_report(archive: &Path) -> Result<Vec<ReportRow>> {
    let base: BaseRecord = read_json(&archive.join("base.json"))?;
    let records = completed_entries(archive)?;
    let summary_path = archive.join("summary.csv");
    if summary_path.exists() {
        let listed: Vec<SummaryRow> = read_csv(&summary_path)?;
        if let Some(row) = listed.iter().find(|r| r.iteration >= records.len()) {
            return Err(CliError::MissingEntry(row.iteration));
        }
    }
    let mut rows = Vec::with_capacity(records.len());
    for r in &records {
        let s = &r.summary;
        let drop = |b: Option<f64>, v: Option<f64>| b.zip(v).map(|(b, v)| 100.0 * (b - v));
        let acc = s.monitor.map(|m| m.acc);
        let accr = s.monitor.map(|m| m.accr);
        rows.push(ReportRow {
            iteration: s.iteration,
            acc,
            accr,
            flops: s.flops,
            flops_pct: 100.0 * (1.0 - s.flops as f64 / base.flops.max(1) as f64),
            acc_drop: drop(base.acc, acc),
            accr_drop: drop(base.accr, accr),
            filters: s.filters.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("-"),
        });
        let mask = r.mask_history.last().cloned().unwrap_or_default();
        write_text(&archive.join("report").join(format!("iter_{:03}_mask.txt", s.iteration)), &mask)?;
    }
    write_csv(&archive.join("report.csv"), &rows)?;
    Ok(rows)
}
