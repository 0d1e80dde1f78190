//! The four commands. Each one builds a complete plan (tasks, models, seeds)
//! before creating any output, so configuration errors leave nothing behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use rankbo_core::acquisition::AcqKind;
use rankbo_core::benchmarks::{average_rank_metric, curves_to_wide_csv, normalized_regret, MetricCurve};
use rankbo_core::bo::{run_bo, run_random_search, sample_init_indices, BoHistory, BoOptions, RunStatus, Task};
use rankbo_core::ranking::LossKind;
use rankbo_core::{DreConfig, DreModel};
use rayon::prelude::*;

use crate::config::{parse_loss, Method, RunConfig};
use crate::output::{file_label, write_atomic};

/// One arm of an ablation: a change to the base configuration on one axis.
#[derive(Clone, Debug, PartialEq)]
pub enum Variant {
    Base,
    Loss(LossKind),
    Acquisition(AcqKind),
    NoMetaFeatures,
    Random,
}

impl Variant {
    pub fn parse(name: &str) -> Result<Self> {
        let key = name.replace('_', "-");
        Ok(match key.as_str() {
            "dre" => Variant::Base,
            "random" => Variant::Random,
            "no-meta-features" => Variant::NoMetaFeatures,
            "avg" => Variant::Acquisition(AcqKind::AverageRank),
            "ei" => Variant::Acquisition(AcqKind::ExpectedImprovement),
            "lcb" => Variant::Acquisition(AcqKind::Lcb { beta: 1.0 }),
            "regression-mse" => Variant::Loss(LossKind::RegressionMse),
            other => Variant::Loss(parse_loss(other).with_context(|| format!("unknown variant {name:?}"))?),
        })
    }

    /// Model configuration, acquisition and method of this arm.
    pub fn apply(&self, base: &RunConfig) -> (DreConfig, AcqKind, Method) {
        let mut dre = base.dre.clone();
        let mut acq = base.acquisition;
        let mut method = Method::Dre;
        match self {
            Variant::Base => {}
            Variant::Loss(l) => dre.loss = *l,
            Variant::Acquisition(a) => acq = *a,
            Variant::NoMetaFeatures => dre.use_meta_features = false,
            Variant::Random => method = Method::Random,
        }
        (dre, acq, method)
    }
}

/// Everything needed to execute one (task, seed) run.
pub struct RunSpec<'a> {
    pub label: String,
    pub method: Method,
    pub model: Option<&'a DreModel>,
    pub random_init: Option<DreConfig>,
    pub acquisition: AcqKind,
    pub task: &'a Task,
    pub seed: u64,
}

pub fn execute(spec: &RunSpec<'_>, cfg: &RunConfig) -> Result<BoHistory> {
    let init = sample_init_indices(spec.task.len(), cfg.inits, spec.seed)?;
    let mut history = match spec.method {
        Method::Random => run_random_search(spec.task, &init, cfg.iterations, spec.seed)?,
        Method::Dre => {
            let fresh;
            let model = match (spec.model, &spec.random_init) {
                (Some(m), _) => m,
                (None, Some(config)) => {
                    fresh = DreModel::new(
                        DreConfig {
                            seed: spec.seed,
                            ..config.clone()
                        },
                        spec.task.dim(),
                    )?;
                    &fresh
                }
                (None, None) => bail!("no surrogate for run {}", spec.label),
            };
            let options = BoOptions {
                iterations: cfg.iterations,
                acquisition: spec.acquisition,
                fine_tune: cfg.fine_tune,
                reset_each_step: cfg.reset_each_step,
                seed: spec.seed,
                method: spec.label.clone(),
            };
            run_bo(model, spec.task, &init, &options)?
        }
    };
    history.method = spec.label.clone();
    Ok(history)
}

/// Runs every spec on a pool of `jobs` threads; results keep the input order.
pub fn execute_all(specs: &[RunSpec<'_>], cfg: &RunConfig) -> Result<Vec<Result<BoHistory>>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build()?;
    Ok(pool.install(|| {
        specs
            .par_iter()
            .map(|s| {
                info!("running {} on {} with seed {}", s.label, s.task.id(), s.seed);
                execute(s, cfg)
            })
            .collect()
    }))
}

pub fn history_path(root: &Path, method: &str, task: &str, seed: u64) -> PathBuf {
    root.join("histories")
        .join(file_label(method))
        .join(file_label(task))
        .join(format!("seed_{seed}.csv"))
}

/// Cells that did not run to completion.
#[derive(Debug, Default)]
pub struct Report {
    pub failures: Vec<String>,
}

fn persist_histories(
    root: &Path,
    specs: &[RunSpec<'_>],
    results: Vec<Result<BoHistory>>,
) -> Result<(Vec<BoHistory>, Report)> {
    let mut report = Report::default();
    let mut summary = String::from("task,method,seed,status,observations,final_incumbent,best_candidate\n");
    let mut done = Vec::new();
    for (spec, result) in specs.iter().zip(results) {
        let cell = format!("{} / {} / seed {}", spec.label, spec.task.id(), spec.seed);
        match result {
            Ok(h) => {
                write_atomic(
                    &history_path(root, &spec.label, spec.task.id(), spec.seed),
                    h.to_csv().as_bytes(),
                )?;
                let status = match &h.status {
                    RunStatus::Completed => "completed".to_string(),
                    RunStatus::PoolExhausted => "pool_exhausted".to_string(),
                    RunStatus::OracleFailed(msg) => {
                        format!("oracle_failed: {}", msg.replace([',', '\n'], ";"))
                    }
                };
                if h.status != RunStatus::Completed {
                    report.failures.push(format!("{cell}: {status}"));
                }
                let best = h.best();
                writeln!(
                    summary,
                    "{},{},{},{},{},{},{}",
                    h.task_id,
                    h.method,
                    h.seed,
                    status,
                    h.steps.len(),
                    best.map_or(String::new(), |b| b.y.to_string()),
                    best.map_or(String::new(), |b| b.candidate_index.to_string()),
                )?;
                done.push(h);
            }
            Err(e) => {
                report.failures.push(format!("{cell}: {e:#}"));
                writeln!(summary, "{},{},{},error,0,,", spec.task.id(), spec.label, spec.seed)?;
            }
        }
    }
    write_atomic(&root.join("summary.csv"), summary.as_bytes())?;
    Ok((done, report))
}

fn required_tasks(cfg: &RunConfig) -> Result<Vec<Task>> {
    let source = cfg.tasks.as_ref().context("no tasks configured")?;
    let tasks = source.tasks()?;
    for t in &tasks {
        ensure!(
            t.len() >= cfg.inits + cfg.iterations,
            "task {} has {} candidates, fewer than {} initial points plus {} iterations",
            t.id(),
            t.len(),
            cfg.inits,
            cfg.iterations
        );
    }
    Ok(tasks)
}

fn check_dims(model: &DreModel, tasks: &[Task]) -> Result<()> {
    for t in tasks {
        ensure!(
            t.dim() == model.input_dim(),
            "task {} has dimension {}, the model expects {}",
            t.id(),
            t.dim(),
            model.input_dim()
        );
    }
    Ok(())
}

pub fn meta_train(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let source = cfg
        .meta_train_tasks
        .as_ref()
        .context("meta-training needs meta_train_tasks or --meta-dataset")?;
    let dataset = source.dataset()?;
    let model_path = cfg.model.clone().unwrap_or_else(|| cfg.output.join("model.drem"));

    let (model, report) = DreModel::meta_train(cfg.dre.clone(), &dataset)?;
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        writeln!(curve, "{},{}", e + 1, l)?;
    }
    write_atomic(&model_path, &model.to_bytes())?;
    write_atomic(&cfg.output.join("loss_curve.csv"), curve.as_bytes())?;
    Ok(model_path)
}

pub fn run(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let tasks = required_tasks(cfg)?;
    let model = match (cfg.method, cfg.random_init) {
        (Method::Dre, false) => {
            let path = cfg
                .model
                .as_ref()
                .context("run-bo needs --model, or --random-init for a randomly initialized ensemble")?;
            let m = DreModel::load(path).with_context(|| format!("loading model {}", path.display()))?;
            check_dims(&m, &tasks)?;
            Some(m)
        }
        _ => None,
    };
    let label = match cfg.method {
        Method::Random => "random",
        Method::Dre if cfg.random_init => "dre_ri",
        Method::Dre => "dre",
    };
    let mut specs = Vec::new();
    for task in &tasks {
        for seed in cfg.run_seeds() {
            specs.push(RunSpec {
                label: label.to_string(),
                method: cfg.method,
                model: model.as_ref(),
                random_init: (cfg.random_init && model.is_none()).then(|| cfg.dre.clone()),
                acquisition: cfg.acquisition,
                task,
                seed,
            });
        }
    }
    let results = execute_all(&specs, cfg)?;
    Ok(persist_histories(&cfg.output, &specs, results)?.1)
}

pub struct AblationOutcome {
    pub curves: BTreeMap<String, MetricCurve>,
    pub report: Report,
}

/// Runs every variant on every (task, seed) cell and ranks the variants.
/// With `meta_train_tasks` configured each distinct model configuration is
/// meta-trained once; otherwise the ensembles start from random weights.
pub fn ablate(cfg: &RunConfig) -> Result<AblationOutcome> {
    cfg.validate()?;
    ensure!(!cfg.variants.is_empty(), "no ablation variants given");
    let variants: Vec<(String, Variant)> = cfg
        .variants
        .iter()
        .map(|v| Ok((v.clone(), Variant::parse(v)?)))
        .collect::<Result<_>>()?;
    let mut names: Vec<&String> = variants.iter().map(|(n, _)| n).collect();
    names.sort();
    names.dedup();
    ensure!(names.len() == variants.len(), "duplicate ablation variant");
    let tasks = required_tasks(cfg)?;
    let dataset = cfg.meta_train_tasks.as_ref().map(|s| s.dataset()).transpose()?;
    let arms: Vec<(String, DreConfig, AcqKind, Method)> = variants
        .iter()
        .map(|(name, v)| {
            let (dre, acq, method) = v.apply(cfg);
            dre.validate()?;
            Ok((name.clone(), dre, acq, method))
        })
        .collect::<Result<_>>()?;

    let mut models: Vec<(DreConfig, DreModel)> = Vec::new();
    if let Some(ds) = &dataset {
        for (name, dre, _, method) in &arms {
            if *method == Method::Dre && !models.iter().any(|(c, _)| c == dre) {
                info!("meta-training the model for variant {name}");
                let (m, _) = DreModel::meta_train(dre.clone(), ds)?;
                check_dims(&m, &tasks)?;
                models.push((dre.clone(), m));
            }
        }
    }
    let mut specs = Vec::new();
    for (name, dre, acq, method) in &arms {
        let model = models.iter().find(|(c, _)| c == dre).map(|(_, m)| m);
        for task in &tasks {
            for seed in cfg.run_seeds() {
                specs.push(RunSpec {
                    label: name.clone(),
                    method: *method,
                    model: if *method == Method::Dre { model } else { None },
                    random_init: (dataset.is_none() && *method == Method::Dre).then(|| dre.clone()),
                    acquisition: *acq,
                    task,
                    seed,
                });
            }
        }
    }
    let results = execute_all(&specs, cfg)?;
    let (histories, report) = persist_histories(&cfg.output, &specs, results)?;
    let mut by_method: BTreeMap<String, Vec<BoHistory>> = BTreeMap::new();
    for h in histories {
        by_method.entry(h.method.clone()).or_default().push(h);
    }
    let curves = average_rank_metric(&by_method)?;
    write_curves(&cfg.output, "average_rank", &curves)?;
    Ok(AblationOutcome { curves, report })
}

fn write_curves(root: &Path, name: &str, curves: &BTreeMap<String, MetricCurve>) -> Result<()> {
    for (label, c) in curves {
        write_atomic(
            &root.join("curves").join(format!("{name}_{}.csv", file_label(label))),
            c.to_csv().as_bytes(),
        )?;
    }
    let list: Vec<MetricCurve> = curves.values().cloned().collect();
    write_atomic(&root.join(format!("{name}.csv")), curves_to_wide_csv(&list)?.as_bytes())?;
    Ok(())
}

/// Reads `histories/<method>/<task>/seed_<n>.csv` below `dir`.
pub fn read_histories(dir: &Path) -> Result<BTreeMap<String, Vec<BoHistory>>> {
    let mut out: BTreeMap<String, Vec<BoHistory>> = BTreeMap::new();
    let root = dir.join("histories");
    let root = if root.is_dir() { root } else { dir.to_path_buf() };
    let sorted = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(p)
            .with_context(|| format!("reading {}", p.display()))?
            .map(|e| Ok(e?.path()))
            .collect::<Result<_>>()?;
        v.sort();
        Ok(v)
    };
    for method_dir in sorted(&root)?.into_iter().filter(|p| p.is_dir()) {
        let method = method_dir.file_name().unwrap().to_string_lossy().into_owned();
        for task_dir in sorted(&method_dir)?.into_iter().filter(|p| p.is_dir()) {
            let task = task_dir.file_name().unwrap().to_string_lossy().into_owned();
            for file in sorted(&task_dir)? {
                let name = file.file_name().unwrap().to_string_lossy().into_owned();
                let Some(seed) = name
                    .strip_prefix("seed_")
                    .and_then(|s| s.strip_suffix(".csv"))
                    .and_then(|s| s.parse::<u64>().ok())
                else {
                    continue;
                };
                let text = std::fs::read_to_string(&file)?;
                let h = BoHistory::from_csv(&text, &task, &method, seed)
                    .with_context(|| format!("parsing {}", file.display()))?;
                out.entry(method.clone()).or_default().push(h);
            }
        }
    }
    ensure!(!out.is_empty(), "no histories found below {}", dir.display());
    Ok(out)
}

/// Average-rank curves of all methods found in the history directory and,
/// when tasks are configured, mean normalized regret per method.
pub fn metrics(cfg: &RunConfig) -> Result<BTreeMap<String, MetricCurve>> {
    let dir = cfg.histories.as_ref().context("metrics needs --histories")?;
    let histories = read_histories(dir)?;
    let ranges: Option<BTreeMap<String, (f64, f64)>> = match &cfg.tasks {
        Some(source) => Some(
            source
                .tasks()?
                .iter()
                .map(|t| Ok((file_label(t.id()), t.value_range()?)))
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    let ranks = average_rank_metric(&histories)?;
    let regret = match &ranges {
        Some(ranges) => {
            let mut curves = BTreeMap::new();
            for (method, runs) in &histories {
                let mut sum: Vec<f64> = Vec::new();
                for h in runs {
                    let &(lo, hi) = ranges
                        .get(&h.task_id)
                        .with_context(|| format!("task {} is not among the configured tasks", h.task_id))?;
                    let c = normalized_regret(h, lo, hi)?;
                    if sum.is_empty() {
                        sum = vec![0.0; c.values.len()];
                    }
                    ensure!(sum.len() == c.values.len(), "histories of {method} differ in length");
                    for (s, v) in sum.iter_mut().zip(&c.values) {
                        *s += v;
                    }
                }
                let n = runs.len();
                curves.insert(
                    method.clone(),
                    MetricCurve {
                        label: method.clone(),
                        values: sum.into_iter().map(|s| s / n as f64).collect(),
                        cells: n,
                    },
                );
            }
            Some(curves)
        }
        None => None,
    };
    write_curves(&cfg.output, "average_rank", &ranks)?;
    if let Some(r) = &regret {
        write_curves(&cfg.output, "normalized_regret", r)?;
    }
    Ok(ranks)
}
