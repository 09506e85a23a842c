use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gclprior::checkpoint::Checkpoint;
use gclprior::experiment::{dump_probs, grid, restore, run, Axis, ExperimentConfig};

#[derive(Parser)]
#[command(name = "gclprior", version, about = "Contrastive pretraining with learnable view generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, evaluate and write a run directory.
    Run(Overrides),
    /// Run the config once per point of a product of axes.
    Grid {
        #[command(flatten)]
        overrides: Overrides,
        /// `key=v1,v2,...`; short keys gamma, delta and threshold are accepted.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write decoded edge probabilities of both generators as CSV.
    DumpProbs {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset config; defaults to the config stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated graph indices.
        #[arg(long, value_delimiter = ',', required = true)]
        graphs: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    principle: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "threshold-mode")]
    threshold_mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config key, as `key=value`; may repeat.
    #[arg(long = "set")]
    set: Vec<String>,
}

impl Overrides {
    fn base_text(&self) -> Result<String> {
        match &self.config {
            Some(p) => fs::read_to_string(p).with_context(|| format!("reading config {}", p.display())),
            None => Ok(String::new()),
        }
    }

    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let mut v = Vec::new();
        let mut push = |k: &str, val: Option<String>| {
            if let Some(val) = val {
                v.push((k.to_string(), val));
            }
        };
        push("seed", self.seed.map(|s| s.to_string()));
        push("reward.principle", self.principle.clone());
        push("reward.gamma", self.gamma.map(|g| g.to_string()));
        push("reward.delta", self.delta.map(|d| d.to_string()));
        push("reward.threshold_mode", self.threshold_mode.clone());
        push("train.epochs", self.epochs.map(|e| e.to_string()));
        push("out", self.out.as_ref().map(|o| o.display().to_string()));
        for s in &self.set {
            let Some((k, val)) = s.split_once('=') else {
                bail!("--set expects key=value, got `{s}`");
            };
            v.push((k.trim().to_string(), val.trim().to_string()));
        }
        Ok(v)
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(o) => {
            let cfg = ExperimentConfig::parse(&o.base_text()?, &o.pairs()?)?;
            let s = run(&cfg)?;
            if let Some(p) = &s.probe {
                println!("probe_accuracy {:.4} ± {:.4}", p.mean, p.sd);
            }
            println!("link_auroc phi1 {:.4} phi2 {:.4}", s.link_phi1.auroc.0, s.link_phi2.auroc.0);
            println!("wrote {}", cfg.out.display());
        }
        Command::Grid { overrides, axes, jobs } => {
            let axes = axes.iter().map(|a| Axis::parse(a)).collect::<gclprior::Result<Vec<_>>>()?;
            let rows = grid(&overrides.base_text()?, &overrides.pairs()?, &axes, jobs)?;
            for r in rows {
                let point: Vec<String> = r.point.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!(
                    "{}  probe {:.4} ± {:.4}  auroc {:.4}",
                    point.join(" "),
                    r.probe_accuracy,
                    r.probe_sd,
                    r.link_auroc
                );
            }
        }
        Command::DumpProbs {
            checkpoint,
            config,
            graphs,
            out,
        } => {
            let restored = restore(&Checkpoint::load(&checkpoint)?)?;
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p, &[])?,
                None => restored
                    .config
                    .clone()
                    .context("checkpoint carries no config; pass --config")?,
            };
            let dataset = cfg.load_dataset()?;
            for p in dump_probs(&restored, &dataset, &graphs, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
