//! Run configuration: a JSON file with every field optional, overlaid by
//! command-line flags, validated as a whole before any command writes output.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rankbo_core::acquisition::AcqKind;
use rankbo_core::benchmarks::{load_meta_dataset, make_scaled_sinusoid_task, MetaDataset};
use rankbo_core::bo::Task;
use rankbo_core::ranking::{LossKind, WeightScheme};
use rankbo_core::{seed, DreConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSource {
    /// `amplitude · sin((x + π)/2 + beta)` on a grid; `amplitudes` pairs with
    /// `betas` and defaults to 1.
    Sinusoid {
        betas: Vec<f64>,
        #[serde(default)]
        amplitudes: Option<Vec<f64>>,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
        #[serde(default = "default_step")]
        step: f64,
    },
    MetaDataset {
        path: PathBuf,
        #[serde(default)]
        space: Option<String>,
        /// Subset of task ids; all tasks when absent.
        #[serde(default)]
        tasks: Option<Vec<String>>,
    },
}

fn default_lo() -> f64 {
    -10.0
}

fn default_hi() -> f64 {
    10.0
}

fn default_step() -> f64 {
    0.1
}

impl TaskSource {
    pub fn meta_dataset(path: PathBuf) -> Self {
        TaskSource::MetaDataset {
            path,
            space: None,
            tasks: None,
        }
    }

    pub fn tasks(&self) -> Result<Vec<Task>> {
        match self {
            TaskSource::Sinusoid {
                betas,
                amplitudes,
                lo,
                hi,
                step,
            } => {
                if let Some(a) = amplitudes {
                    ensure!(
                        a.len() == betas.len(),
                        "{} amplitudes given for {} betas",
                        a.len(),
                        betas.len()
                    );
                }
                ensure!(!betas.is_empty(), "sinusoid task source lists no betas");
                betas
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| {
                        let amp = amplitudes.as_ref().map_or(1.0, |a| a[i]);
                        Ok(make_scaled_sinusoid_task(b, amp, *lo, *hi, *step)?)
                    })
                    .collect()
            }
            TaskSource::MetaDataset { path, space, tasks } => {
                let ds = load_meta_dataset(path, space.as_deref())
                    .with_context(|| format!("loading {}", path.display()))?;
                let ids: Vec<String> = match tasks {
                    Some(ids) => ids.clone(),
                    None => ds.tasks.keys().cloned().collect(),
                };
                ids.iter().map(|id| Ok(ds.task(id)?)).collect()
            }
        }
    }

    pub fn dataset(&self) -> Result<MetaDataset> {
        let tasks = self.tasks()?;
        Ok(MetaDataset::from_tasks("meta_train", &tasks)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dre,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dre: DreConfig,
    /// Tasks used for meta-training (the `meta-train` command and ablations).
    pub meta_train_tasks: Option<TaskSource>,
    /// Tasks optimized by `run-bo` and ablations.
    pub tasks: Option<TaskSource>,
    /// Model file read by `run-bo` and written by `meta-train`.
    pub model: Option<PathBuf>,
    pub output: PathBuf,
    pub method: Method,
    pub acquisition: AcqKind,
    pub iterations: usize,
    pub inits: usize,
    pub fine_tune: bool,
    pub reset_each_step: bool,
    pub random_init: bool,
    /// Explicit run seeds; derived from `master_seed` when absent.
    pub seeds: Option<Vec<u64>>,
    pub num_seeds: usize,
    pub master_seed: u64,
    pub jobs: usize,
    /// Ablation variants, see [`crate::campaign::Variant`].
    pub variants: Vec<String>,
    /// Directory of history CSVs read by `metrics`.
    pub histories: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dre: DreConfig::default(),
            meta_train_tasks: None,
            tasks: None,
            model: None,
            output: PathBuf::from("rankbo-out"),
            method: Method::Dre,
            acquisition: AcqKind::ExpectedImprovement,
            iterations: 10,
            inits: 3,
            fine_tune: true,
            reset_each_step: false,
            random_init: false,
            seeds: None,
            num_seeds: 3,
            master_seed: 0,
            jobs: 1,
            variants: Vec::new(),
            histories: None,
        }
    }
}

/// Flag values that override the configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub acq: Option<String>,
    pub beta: Option<f64>,
    pub loss: Option<String>,
    pub weights: Option<String>,
    pub no_meta_features: bool,
    pub no_fine_tune: bool,
    pub random_init: bool,
    pub reset_each_step: bool,
    pub iterations: Option<usize>,
    pub inits: Option<usize>,
    pub seeds: Option<usize>,
    pub model: Option<PathBuf>,
    pub meta_dataset: Option<PathBuf>,
    pub task_dataset: Option<PathBuf>,
    pub method: Option<String>,
    pub variants: Option<Vec<String>>,
    pub histories: Option<PathBuf>,
    pub epochs: Option<usize>,
}

pub fn parse_loss(name: &str) -> Result<LossKind> {
    Ok(match name {
        "listwise-weighted" => LossKind::ListwiseWeighted,
        "listwise" => LossKind::ListwiseUnweighted,
        "pairwise" => LossKind::Pairwise,
        "pointwise" => LossKind::Pointwise,
        "mse" => LossKind::RegressionMse,
        other => bail!("unknown loss {other:?}"),
    })
}

pub fn parse_weights(name: &str) -> Result<WeightScheme> {
    Ok(match name {
        "inv-log" => WeightScheme::InverseLog,
        "inv-linear" => WeightScheme::InverseLinear,
        "pda" => WeightScheme::PositionDependentAttention,
        "uniform" => WeightScheme::Uniform,
        other => bail!("unknown weight scheme {other:?}"),
    })
}

/// `avg`, `ei`, or `lcb` with exploration weight `beta` (default 1).
pub fn parse_acq(name: &str, beta: Option<f64>) -> Result<AcqKind> {
    let acq = match name {
        "avg" => AcqKind::AverageRank,
        "ei" => AcqKind::ExpectedImprovement,
        "lcb" => AcqKind::Lcb {
            beta: beta.unwrap_or(1.0),
        },
        other => bail!("unknown acquisition {other:?}"),
    };
    if beta.is_some() && !matches!(acq, AcqKind::Lcb { .. }) {
        bail!("--beta only applies to --acq lcb");
    }
    Ok(acq)
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn apply(&mut self, o: Overrides) -> Result<()> {
        if let Some(v) = o.output {
            self.output = v;
        }
        if let Some(s) = o.seed {
            self.master_seed = s;
            self.dre.seed = s;
        }
        if let Some(v) = o.jobs {
            self.jobs = v;
        }
        if let Some(name) = o.acq {
            self.acquisition = parse_acq(&name, o.beta)?;
        } else if let Some(beta) = o.beta {
            match &mut self.acquisition {
                AcqKind::Lcb { beta: b } => *b = beta,
                _ => bail!("--beta only applies to the lcb acquisition"),
            }
        }
        if let Some(name) = o.loss {
            self.dre.loss = parse_loss(&name)?;
        }
        if let Some(name) = o.weights {
            self.dre.weights = parse_weights(&name)?;
        }
        if o.no_meta_features {
            self.dre.use_meta_features = false;
        }
        if o.no_fine_tune {
            self.fine_tune = false;
        }
        if o.random_init {
            self.random_init = true;
        }
        if o.reset_each_step {
            self.reset_each_step = true;
        }
        if let Some(v) = o.iterations {
            self.iterations = v;
        }
        if let Some(v) = o.inits {
            self.inits = v;
        }
        if let Some(v) = o.seeds {
            self.num_seeds = v;
            self.seeds = None;
        }
        if let Some(v) = o.model {
            self.model = Some(v);
        }
        if let Some(v) = o.meta_dataset {
            self.meta_train_tasks = Some(TaskSource::meta_dataset(v));
        }
        if let Some(v) = o.task_dataset {
            self.tasks = Some(TaskSource::meta_dataset(v));
        }
        if let Some(m) = o.method {
            self.method = match m.as_str() {
                "dre" => Method::Dre,
                "random" => Method::Random,
                other => bail!("unknown method {other:?}"),
            };
        }
        if let Some(v) = o.variants {
            self.variants = v;
        }
        if let Some(v) = o.histories {
            self.histories = Some(v);
        }
        if let Some(e) = o.epochs {
            self.dre.meta_train.epochs = e;
        }
        Ok(())
    }

    /// Checks settings shared by every command.
    pub fn validate(&self) -> Result<()> {
        self.dre.validate()?;
        self.acquisition.validate()?;
        ensure!(self.jobs >= 1, "jobs must be at least 1");
        ensure!(self.inits >= 1, "inits must be at least 1");
        if let Some(s) = &self.seeds {
            ensure!(!s.is_empty(), "seeds list is empty");
            let mut sorted = s.clone();
            sorted.sort_unstable();
            sorted.dedup();
            ensure!(sorted.len() == s.len(), "seeds list has duplicates");
        } else {
            ensure!(self.num_seeds >= 1, "num_seeds must be at least 1");
        }
        Ok(())
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.num_seeds as u64)
                .map(|i| seed::derive(self.master_seed, seed::STREAM_RUN, i))
                .collect(),
        }
    }

    /// The member-ensemble configuration used for a randomly initialized run.
    pub fn random_init_config(&self, run_seed: u64) -> DreConfig {
        DreConfig {
            seed: run_seed,
            ..self.dre.clone()
        }
    }
}
