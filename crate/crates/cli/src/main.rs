use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use gpm_cli::config::Overrides;
use gpm_cli::run::{build_tasks, describe, load_base, run_experiment, summary_line};
use gpm_cli::{parse_config, CliError};
use log::info;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Head {
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Continual learning with gradient projection memory.
///
/// Values come from the dataset preset, then `--config`, then the flags below.
#[derive(Debug, Parser)]
#[command(name = "gpm", version)]
struct Args {
    /// Sectioned key = value config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// pmnist, pmnist-small, split-synthetic or subspace-test.
    #[arg(long, value_name = "NAME")]
    dataset: Option<String>,
    /// mlp-H[-H...] or small-conv.
    #[arg(long, value_name = "NAME")]
    net: Option<String>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Number of tasks to train (at most what the dataset provides).
    #[arg(long, value_name = "N")]
    tasks: Option<usize>,
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    #[arg(long, value_name = "F")]
    lr: Option<f64>,
    #[arg(long, value_name = "N")]
    batch: Option<usize>,
    /// Samples used to build representation matrices.
    #[arg(long, value_name = "N")]
    ns: Option<usize>,
    /// Per-layer energy thresholds; repeat the flag to sweep.
    #[arg(long = "eps-base", value_name = "F[,F...]")]
    eps_base: Vec<String>,
    /// Threshold increment per task.
    #[arg(long = "eps-inc", value_name = "F")]
    eps_inc: Option<f64>,
    #[arg(long, value_enum)]
    head: Option<Head>,
    /// Run directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Checkpoint directory (checkpoints/task_XX) to continue from.
    #[arg(long, value_name = "PATH")]
    resume: Option<PathBuf>,
    #[arg(long, value_enum)]
    interference: Option<Switch>,
}

impl Args {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides::default();
        if let Some(v) = &self.dataset {
            o.push("experiment.dataset", v);
        }
        if let Some(v) = &self.net {
            o.push("experiment.net", v);
        }
        if let Some(v) = self.seed {
            o.push("experiment.seed", v);
        }
        if let Some(v) = self.tasks {
            o.push("experiment.tasks", v);
        }
        if let Some(v) = self.epochs {
            o.push("trainer.epochs", v);
        }
        if let Some(v) = self.lr {
            o.push("trainer.lr", v);
        }
        if let Some(v) = self.batch {
            o.push("trainer.batch", v);
        }
        if let Some(v) = self.ns {
            o.push("trainer.ns", v);
        }
        if !self.eps_base.is_empty() {
            o.push("gpm.eps_base", self.eps_base.join(";"));
        }
        if let Some(v) = self.eps_inc {
            o.push("gpm.eps_inc", v);
        }
        if let Some(v) = self.head {
            o.push("trainer.head", if matches!(v, Head::Single) { "single" } else { "multi" });
        }
        if let Some(v) = &self.out {
            o.push("experiment.out", v.display());
        }
        if let Some(v) = &self.resume {
            o.push("experiment.resume", v.display());
        }
        if let Some(v) = self.interference {
            o.push("experiment.interference", if matches!(v, Switch::On) { "on" } else { "off" });
        }
        o
    }
}

fn execute(args: &Args) -> Result<(), CliError> {
    let cfg = parse_config(args.config.as_deref(), &args.overrides())?;
    let base = load_base(&cfg)?;
    let tasks = build_tasks(&cfg, base.as_ref())?;
    info!("{}: {}", cfg.dataset, describe(&tasks));
    for run in run_experiment(&cfg, &tasks)? {
        println!("{}", summary_line(&run));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
