use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use rankbo_cli::campaign::{self, Report};
use rankbo_cli::config::{Overrides, RunConfig};

/// Deep ranking ensembles for Bayesian optimization.
#[derive(Parser)]
#[command(name = "rankbo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train an ensemble on a collection of tasks.
    MetaTrain(Flags),
    /// Run BO campaigns over tasks and seeds.
    RunBo(Flags),
    /// Compare variants by their average rank over tasks and seeds.
    Ablate(Flags),
    /// Average-rank (and normalized-regret) curves from saved histories.
    Metrics(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Master seed; per-run seeds are derived from it.
    #[arg(long, visible_alias = "master-seed")]
    seed: Option<u64>,
    /// Number of worker threads for independent runs.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_parser = ["avg", "lcb", "ei"])]
    acq: Option<String>,
    /// Exploration weight of the lcb acquisition.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_parser = ["listwise-weighted", "listwise", "pairwise", "pointwise", "mse"])]
    loss: Option<String>,
    #[arg(long, value_parser = ["inv-log", "inv-linear", "pda", "uniform"])]
    weights: Option<String>,
    #[arg(long)]
    no_meta_features: bool,
    #[arg(long)]
    no_fine_tune: bool,
    /// Start every run from a randomly initialized ensemble.
    #[arg(long)]
    random_init: bool,
    /// Fine-tune from the loaded weights at every step instead of continuing.
    #[arg(long)]
    reset_each_step: bool,
    /// BO iterations after the initial design.
    #[arg(long)]
    iterations: Option<usize>,
    /// Size of the random initial design.
    #[arg(long)]
    inits: Option<usize>,
    /// Number of seeds derived from the master seed.
    #[arg(long)]
    seeds: Option<usize>,
    /// Model file to read (run-bo) or write (meta-train).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Meta-training tasks in the nested JSON layout.
    #[arg(long)]
    meta_dataset: Option<PathBuf>,
    /// Tasks to optimize, in the nested JSON layout.
    #[arg(long)]
    task_dataset: Option<PathBuf>,
    #[arg(long, value_parser = ["dre", "random"])]
    method: Option<String>,
    /// Comma-separated ablation variants.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Directory of history CSVs for `metrics`.
    #[arg(long)]
    histories: Option<PathBuf>,
    /// Meta-training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

impl Flags {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.apply(Overrides {
            output: self.output,
            seed: self.seed,
            jobs: self.jobs,
            acq: self.acq,
            beta: self.beta,
            loss: self.loss,
            weights: self.weights,
            no_meta_features: self.no_meta_features,
            no_fine_tune: self.no_fine_tune,
            random_init: self.random_init,
            reset_each_step: self.reset_each_step,
            iterations: self.iterations,
            inits: self.inits,
            seeds: self.seeds,
            model: self.model,
            meta_dataset: self.meta_dataset,
            task_dataset: self.task_dataset,
            method: self.method,
            variants: self.variants,
            histories: self.histories,
            epochs: self.epochs,
        })?;
        Ok(cfg)
    }
}

fn finish(report: Report) -> ExitCode {
    if report.failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    eprintln!("{} run(s) did not complete:", report.failures.len());
    for f in &report.failures {
        eprintln!("  {f}");
    }
    ExitCode::FAILURE
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::MetaTrain(flags) => {
            let path = campaign::meta_train(&flags.resolve()?)?;
            println!("model written to {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::RunBo(flags) => Ok(finish(campaign::run(&flags.resolve()?)?)),
        Command::Ablate(flags) => {
            let outcome = campaign::ablate(&flags.resolve()?)?;
            for (name, curve) in &outcome.curves {
                println!("{name}: final average rank {:.3}", curve.values.last().copied().unwrap_or(f64::NAN));
            }
            Ok(finish(outcome.report))
        }
        Command::Metrics(flags) => {
            let curves = campaign::metrics(&flags.resolve()?)?;
            for (name, curve) in &curves {
                println!("{name}: final average rank {:.3}", curve.values.last().copied().unwrap_or(f64::NAN));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RANKBO_LOG", "warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
