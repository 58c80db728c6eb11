//! The single JSON document describing an experiment.

use std::fs;
use std::path::{Path, PathBuf};

use ccsrp_core::attack::AttackConfig;
use ccsrp_core::data::{load_idx, Dataset, SynthSpec};
use ccsrp_core::evolution::CcsrpConfig;
use ccsrp_core::snn::{Architecture, LifConfig};
use ccsrp_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    Paper,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synth {
        train: SynthSpec,
        test: SynthSpec,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl DataConfig {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            Self::Synth { train, test } => Ok((train.generate()?, test.generate()?)),
            Self::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    if !p.is_file() {
                        return Err(CliError::io(p, std::io::ErrorKind::NotFound.into()));
                    }
                }
                Ok((load_idx(train_images, train_labels)?, load_idx(test_images, test_labels)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub architecture: Architecture,
    pub lif: LifConfig,
    /// Training of the network that pruning starts from.
    pub pretrain: TrainConfig,
    pub ccsrp: CcsrpConfig,
}

impl RunConfig {
    /// Published hyperparameters on a 28×28 grayscale IDX dataset.
    pub fn paper() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/paper"),
            data: DataConfig::Idx {
                train_images: PathBuf::from("data/train-images-idx3-ubyte"),
                train_labels: PathBuf::from("data/train-labels-idx1-ubyte"),
                test_images: PathBuf::from("data/t10k-images-idx3-ubyte"),
                test_labels: PathBuf::from("data/t10k-labels-idx1-ubyte"),
            },
            architecture: Architecture::desk(28, 10),
            lif: LifConfig::default(),
            pretrain: TrainConfig::paper(),
            ccsrp: CcsrpConfig::paper(),
        }
    }

    /// Minutes-scale run on four synthetic blob classes.
    pub fn desk() -> Self {
        let train = SynthSpec {
            amplitude: 0.3,
            ..SynthSpec::new(4, 200, 8, 0.3, 1)
        };
        let test = SynthSpec {
            per_class: 100,
            seed: 2,
            ..train.clone()
        };
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/desk"),
            data: DataConfig::Synth { train, test },
            architecture: Architecture::desk(8, 4),
            lif: LifConfig::default(),
            pretrain: TrainConfig::desk(5),
            ccsrp: CcsrpConfig::desk(),
        }
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: ccsrp_core::Error| CliError::Config(e.to_string());
        self.lif.validate().map_err(cfg)?;
        self.architecture.geometry().map_err(cfg)?;
        self.pretrain.validate().map_err(cfg)?;
        self.ccsrp.validate().map_err(cfg)?;
        if let DataConfig::Synth { train, test } = &self.data {
            for s in [train, test] {
                let shape = [1, s.img_size, s.img_size];
                if shape != self.architecture.input {
                    return Err(CliError::Config(format!(
                        "synthetic images {shape:?} do not match architecture input {:?}",
                        self.architecture.input
                    )));
                }
                if s.num_classes != self.architecture.num_classes() {
                    return Err(CliError::Config("synthetic class count does not match the architecture".into()));
                }
            }
        }
        Ok(())
    }

    /// Attack profile by name: `eval`, `train` or `none`.
    pub fn attack(&self, name: &str) -> Result<AttackConfig> {
        match name {
            "eval" => Ok(self.ccsrp.eval_attack),
            "train" => Ok(self.pretrain.attack),
            "none" => Ok(AttackConfig::none()),
            other => Err(CliError::Config(format!("unknown attack profile {other:?}"))),
        }
    }
}
