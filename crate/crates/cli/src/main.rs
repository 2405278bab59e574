mod commands;
mod config;
mod error;
mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use glenet::probdet::LossMode;

use crate::config::RunConfig;
use crate::error::CliResult;

/// Label-uncertainty pipeline: synthesise objects, train GLENet, annotate
/// uncertainties, train the toy detector head, vote, report.
#[derive(Debug, Parser)]
#[command(name = "glenet", version)]
struct Cli {
    /// Run configuration (TOML); defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for all outputs.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic object corpus (dataset.jsonl).
    Synth,
    /// Train one GLENet on a dataset (glenet.ckpt, checkpoints/, train_losses.csv).
    Train {
        /// Defaults to <out>/dataset.jsonl.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        latent_dim: Option<usize>,
    },
    /// Annotate every object with a k-fold GLENet variance (uncertainty.jsonl).
    Uncertainty {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        latent_dim: Option<usize>,
        /// Prior draws per object.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Held-out negative log-likelihood of a checkpoint (nll.csv).
    EvalNll {
        /// Defaults to <out>/glenet.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train the toy probabilistic regressor (probdet_<mode>.csv, detections_<mode>.jsonl).
    Probdet {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// dirac, glenet or huber.
        #[arg(long, default_value = "glenet")]
        mode: LossMode,
    },
    /// Variance voting over a detection dump (merged_<name>.jsonl, voting.csv).
    Vote {
        /// Defaults to <out>/detections_glenet.jsonl.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Ground truth for the IoU columns of voting.csv.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// IoU-weight temperature.
        #[arg(long)]
        sigma_t: Option<f64>,
        /// Cluster IoU threshold.
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Collect the run directory into report/ tables and charts.
    Report,
    /// Configuration utilities.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    /// Print the effective configuration with every default spelled out.
    Dump,
}

fn or_default(p: Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    p.unwrap_or_else(|| out.join(name))
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    let out = cli.out;
    match cli.command {
        Command::Train { latent_dim: Some(d), .. } | Command::Uncertainty { latent_dim: Some(d), .. } => {
            cfg.model.latent_dim = d;
        }
        _ => {}
    }
    match &cli.command {
        Command::Uncertainty { samples, folds, .. } => {
            if let Some(s) = samples {
                cfg.train.samples = *s;
            }
            if let Some(k) = folds {
                cfg.train.folds = *k;
            }
        }
        Command::EvalNll { samples: Some(s), .. } => cfg.train.samples = *s,
        Command::Vote { sigma_t, mu, .. } => {
            if let Some(t) = sigma_t {
                cfg.voting.sigma_t = *t;
            }
            if let Some(m) = mu {
                cfg.voting.mu = *m;
            }
        }
        _ => {}
    }
    cfg.validate()?;

    let label = format!("{:?}", cli.command);
    match cli.command {
        Command::Synth => {
            let p = commands::synth(&cfg, &out)?;
            println!("{}", p.display());
        }
        Command::Train { dataset, .. } => {
            let p = commands::train(&cfg, &or_default(dataset, &out, commands::DATASET), &out)?;
            println!("{}", p.display());
        }
        Command::Uncertainty { dataset, .. } => {
            let p = commands::uncertainty(&cfg, &or_default(dataset, &out, commands::DATASET), &out)?;
            println!("{}", p.display());
        }
        Command::EvalNll { checkpoint, dataset, .. } => {
            let v = commands::eval_nll_cmd(
                &cfg,
                &or_default(checkpoint, &out, commands::CHECKPOINT),
                &or_default(dataset, &out, commands::DATASET),
                &out,
            )?;
            println!("{v}");
        }
        Command::Probdet { dataset, mode } => {
            let default = if mode == LossMode::Glenet { commands::UNCERTAINTY } else { commands::DATASET };
            let p = commands::probdet(&cfg, &or_default(dataset, &out, default), mode, &out)?;
            println!("{}", p.display());
        }
        Command::Vote { detections, dataset, .. } => {
            let dets = or_default(detections, &out, &commands::detections_file(LossMode::Glenet));
            let p = commands::vote(&cfg, &dets, dataset.as_deref(), &out)?;
            println!("{}", p.display());
        }
        Command::Report => {
            let written = report::report(&cfg, &out)?;
            for t in &written {
                println!("{}", out.join("report").join(t).display());
            }
            let missing: Vec<&str> = report::TABLES.iter().copied().filter(|t| !written.iter().any(|w| w == t)).collect();
            if !missing.is_empty() {
                log::warn!("report is partial, missing {}", missing.join(", "));
            }
        }
        Command::Config { action: ConfigAction::Dump } => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
    }
    commands::log_run(&out, &label)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GLENET_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
