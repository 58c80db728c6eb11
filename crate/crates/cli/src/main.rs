use std::path::PathBuf;
use std::process::ExitCode;

use ccsrp_cli::commands::{ARCHIVE, PRETRAINED};
use ccsrp_cli::{cmd_eval, cmd_prune, cmd_pretrain, cmd_report, CliError, Profile, Result, RunConfig};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ccsrp", version, about = "Robust filter pruning of spiking CNNs by cooperative coevolution")]
struct Cli {
    /// JSON run configuration; overrides --profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no --config is given.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: Profile,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "CCSRP_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train the network that pruning starts from.
    Pretrain,
    /// Run the pruning loop, resuming a partial archive if present.
    Prune {
        /// Defaults to the pretrained checkpoint in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Report clean accuracy, robust accuracy and FLOPs of a checkpoint as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// `eval`, `train` or `none`.
        #[arg(long, default_value = "eval")]
        attack: String,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Consolidate an archive into report.csv and per-iteration mask files.
    Report {
        /// Defaults to the archive in the output directory.
        #[arg(long)]
        archive: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::profile(cli.profile),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    match cli.command {
        Command::Pretrain => {
            let out = cmd_pretrain(&cfg)?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("log: {}", out.log.display());
        }
        Command::Prune { checkpoint } => {
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join(PRETRAINED));
            let out = cmd_prune(&cfg, &ckpt)?;
            println!(
                "archive: {} ({} entries, {} resumed)",
                out.archive.display(),
                out.entries,
                out.resumed_from
            );
        }
        Command::Eval {
            checkpoint,
            split,
            attack,
            report,
        } => {
            let attack = cfg.attack(&attack)?;
            let (train, test) = cfg.data.load()?;
            let ds = match split {
                Split::Train => &train,
                Split::Test => &test,
            };
            let r = cmd_eval(&checkpoint, ds, &attack, cfg.seed)?;
            let text = serde_json::to_string_pretty(&r)?;
            if let Some(p) = report {
                ccsrp_core::checkpoint::write_atomic(&p, text.as_bytes())?;
            }
            println!("{text}");
        }
        Command::Report { archive } => {
            let dir = archive.unwrap_or_else(|| cfg.out_dir.join(ARCHIVE));
            let rows = cmd_report(&dir)?;
            println!("{}: {} rows", dir.join("report.csv").display(), rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
