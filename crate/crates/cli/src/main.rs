//! `fedcctr`: generate, augment, train, evaluate and ablate from one config file.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on runtime errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedcctr_core::config::ExperimentConfig;
use fedcctr_core::experiment::{cmd_ablate, cmd_augment, cmd_evaluate, cmd_generate, cmd_train};
use fedcctr_core::Error;

#[derive(Parser, Debug)]
#[command(name = "fedcctr", version, about = "Federated cross-domain CTR experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one value, e.g. `--set federation.rounds=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for client steps and augmentation requests.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus and its statistics.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the augmentation pipeline over a generated corpus.
    Augment {
        #[command(flatten)]
        common: Common,
        /// Directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Federated training; writes a checkpoint, round reports and accountant traces.
    Train {
        #[command(flatten)]
        common: Common,
        /// Corpus directory (from `generate`, optionally with `augment` output).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Train without local differential privacy.
        #[arg(long, conflicts_with = "static_ldp")]
        no_privacy: bool,
        /// Keep the noise scale constant (decay 1).
        #[arg(long)]
        static_ldp: bool,
    },
    /// Rank held-out test items with a trained checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate every ablation arm on one corpus and seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &common.overrides {
        cfg.set(o)?;
    }
    if let Some(n) = common.threads {
        cfg.federation.threads = n;
        cfg.augment.max_in_flight = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = resolve(&common)?;
            print_json(&cmd_generate(&cfg, &common.out)?)
        }
        Command::Augment { common, data } => {
            let cfg = resolve(&common)?;
            let summary = cmd_augment(&cfg, &data, &common.out)?;
            log::info!("cache hit rate {:.1}%", 100.0 * summary.report.client.hit_rate());
            print_json(&summary)
        }
        Command::Train { common, data, no_privacy, static_ldp } => {
            let mut cfg = resolve(&common)?;
            if no_privacy {
                cfg.privacy.enabled = false;
            }
            if static_ldp {
                cfg.privacy.decay = 1.0;
            }
            print_json(&cmd_train(&cfg, data.as_deref(), &common.out)?)
        }
        Command::Evaluate { common, checkpoint, data } => {
            let cfg = resolve(&common)?;
            if !checkpoint.is_file() {
                return Err(Error::Checkpoint(format!("no checkpoint at {}", checkpoint.display())));
            }
            let metrics = cmd_evaluate(&cfg, &checkpoint, data.as_deref(), &common.out)?;
            for (domain, m) in &metrics {
                for k in m.ndcg_at.keys() {
                    println!("{domain} K={k} NDCG={:.4} MRR={:.4}", m.ndcg(*k), m.mrr(*k));
                }
            }
            Ok(())
        }
        Command::Ablate { common, data } => {
            let cfg = resolve(&common)?;
            let rows = cmd_ablate(&cfg, data.as_deref(), &common.out)?;
            println!("{} rows written to {}", rows.len(), Path::new(&common.out).join("ablation.csv").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
