//! Experiment harness for robust filter pruning of spiking networks:
//! configuration, the `pretrain`/`prune`/`eval`/`report` commands, and
//! their on-disk artifacts.

mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use artifacts::{read_csv, read_json};
pub use commands::{cmd_eval, cmd_prune, cmd_pretrain, cmd_report, evaluate};
pub use config::{DataConfig, Profile, RunConfig};
pub use error::{CliError, Result};
