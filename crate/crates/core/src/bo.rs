//! Bayesian optimization over a finite candidate pool.
//!
//! The objective is maximized: the best observed configuration is the one
//! with the largest `y`, and the surrogate assigns it rank 1.

use std::fmt::Write as _;

use log::debug;
use rand::seq::index;
use rand::Rng as _;

use crate::acquisition::{select_next, AcqKind};
use crate::deepset::SupportSet;
use crate::error::{Error, Result};
use crate::seed;
use crate::surrogate::{DreModel, InputBounds};

#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// Precomputed target per candidate.
    Table(Vec<f64>),
    /// `amplitude · sin((x + π)/2 + beta)` of the first coordinate.
    Sinusoid { beta: f64, amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    id: String,
    candidates: Vec<Vec<f64>>,
    objective: Objective,
}

impl Task {
    pub fn new(id: impl Into<String>, candidates: Vec<Vec<f64>>, objective: Objective) -> Result<Self> {
        let id = id.into();
        let schema = |message: String| Error::Schema {
            task: id.clone(),
            message,
        };
        let dim = candidates
            .first()
            .ok_or_else(|| schema("candidate pool is empty".into()))?
            .len();
        if dim == 0 {
            return Err(schema("candidates have dimension 0".into()));
        }
        if let Some(row) = candidates.iter().position(|c| c.len() != dim) {
            return Err(schema(format!("candidate {row} has the wrong dimension")));
        }
        if candidates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(schema("non-finite candidate coordinate".into()));
        }
        if let Objective::Table(ys) = &objective {
            if ys.len() != candidates.len() {
                return Err(schema(format!(
                    "{} targets for {} candidates",
                    ys.len(),
                    candidates.len()
                )));
            }
        }
        Ok(Self {
            id,
            candidates,
            objective,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn candidates(&self) -> &[Vec<f64>] {
        &self.candidates
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.candidates[0].len()
    }

    pub fn evaluate(&self, index: usize) -> Result<f64> {
        let x = self
            .candidates
            .get(index)
            .ok_or_else(|| Error::Domain(format!("candidate {index} outside the pool")))?;
        let y = match &self.objective {
            Objective::Table(ys) => ys[index],
            Objective::Sinusoid { beta, amplitude } => {
                amplitude * ((x[0] + std::f64::consts::PI) / 2.0 + beta).sin()
            }
        };
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFinite("objective value"))
        }
    }

    /// Targets of the whole pool.
    pub fn all_values(&self) -> Result<Vec<f64>> {
        (0..self.len()).map(|i| self.evaluate(i)).collect()
    }

    /// `(min, max)` target over the pool.
    pub fn value_range(&self) -> Result<(f64, f64)> {
        let ys = self.all_values()?;
        Ok(ys
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                (lo.min(y), hi.max(y))
            }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoStep {
    /// 0 for initial observations, then 1, 2, ... per BO iteration.
    pub step: usize,
    pub candidate_index: usize,
    pub x: Vec<f64>,
    pub y: f64,
    /// Acquisition value of the chosen candidate; `None` for initial and
    /// randomly chosen points.
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    PoolExhausted,
    OracleFailed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoHistory {
    pub task_id: String,
    pub method: String,
    pub seed: u64,
    pub steps: Vec<BoStep>,
    /// Best `y` after each recorded observation.
    pub incumbent: Vec<f64>,
    pub status: RunStatus,
}

impl BoHistory {
    fn new(task_id: &str, method: &str, seed: u64) -> Self {
        Self {
            task_id: task_id.to_string(),
            method: method.to_string(),
            seed,
            steps: Vec::new(),
            incumbent: Vec::new(),
            status: RunStatus::Completed,
        }
    }

    fn push(&mut self, step: BoStep) {
        let best = self
            .incumbent
            .last()
            .map_or(step.y, |&b: &f64| b.max(step.y));
        self.incumbent.push(best);
        self.steps.push(step);
    }

    pub fn num_initial(&self) -> usize {
        self.steps.iter().take_while(|s| s.step == 0).count()
    }

    pub fn num_iterations(&self) -> usize {
        self.steps.len() - self.num_initial()
    }

    /// Incumbent after initialization followed by the incumbent after each
    /// BO iteration (`iterations + 1` values).
    pub fn incumbent_curve(&self) -> Vec<f64> {
        let init = self.num_initial();
        if init == 0 {
            return Vec::new();
        }
        self.incumbent[init - 1..].to_vec()
    }

    /// The best observation (first one on ties).
    pub fn best(&self) -> Option<&BoStep> {
        self.steps
            .iter()
            .fold(None, |best: Option<&BoStep>, s| match best {
                Some(b) if b.y >= s.y => Some(b),
                _ => Some(s),
            })
    }

    /// Number of observations (initial ones included) made when `y` first
    /// reached `threshold`.
    pub fn observations_to_reach(&self, threshold: f64) -> Option<usize> {
        self.steps.iter().position(|s| s.y >= threshold).map(|p| p + 1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,candidate_index,y,incumbent,alpha\n");
        for (s, inc) in self.steps.iter().zip(&self.incumbent) {
            let alpha = s.alpha.map(|a| a.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", s.step, s.candidate_index, s.y, inc, alpha)
                .expect("writing to a String cannot fail");
        }
        out
    }

    /// Parses a history written by [`BoHistory::to_csv`]. Configurations are
    /// not stored in the file, so `x` is left empty.
    pub fn from_csv(text: &str, task_id: &str, method: &str, seed: u64) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Schema {
            task: task_id.to_string(),
            message: format!("history line {line}: {msg}"),
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("step,candidate_index,y,incumbent,alpha") {
            return Err(bad(1, "unexpected header"));
        }
        let mut history = Self::new(task_id, method, seed);
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 5 {
                return Err(bad(i + 2, "expected 5 fields"));
            }
            let num = |f: &str| f.parse::<f64>().map_err(|_| bad(i + 2, "bad number"));
            let int = |f: &str| f.parse::<usize>().map_err(|_| bad(i + 2, "bad integer"));
            let step = BoStep {
                step: int(fields[0])?,
                candidate_index: int(fields[1])?,
                x: Vec::new(),
                y: num(fields[2])?,
                alpha: if fields[4].is_empty() {
                    None
                } else {
                    Some(num(fields[4])?)
                },
            };
            history.push(step);
            if history.incumbent.last() != Some(&num(fields[3])?) {
                return Err(bad(i + 2, "incumbent column disagrees with y"));
            }
        }
        Ok(history)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoOptions {
    pub iterations: usize,
    pub acquisition: AcqKind,
    pub fine_tune: bool,
    /// Fine-tune from the incoming model at every step instead of continuing
    /// from the previous step's weights.
    pub reset_each_step: bool,
    /// Recorded in the history; the run itself is determined by the model and
    /// the initial indices.
    pub seed: u64,
    pub method: String,
}

impl Default for BoOptions {
    fn default() -> Self {
        Self {
            iterations: 10,
            acquisition: AcqKind::ExpectedImprovement,
            fine_tune: true,
            reset_each_step: false,
            seed: 0,
            method: "dre".into(),
        }
    }
}

/// `count` distinct pool indices drawn with the run seed.
pub fn sample_init_indices(pool_size: usize, count: usize, seed_value: u64) -> Result<Vec<usize>> {
    if count == 0 || count > pool_size {
        return Err(Error::Domain(format!(
            "cannot draw {count} initial points from a pool of {pool_size}"
        )));
    }
    let mut rng = seed::rng(seed::derive(seed_value, seed::STREAM_INIT, 0));
    Ok(index::sample(&mut rng, pool_size, count).into_vec())
}

fn check_inits(task: &Task, init: &[usize]) -> Result<()> {
    if init.is_empty() {
        return Err(Error::Domain("at least one initial observation is required".into()));
    }
    let mut seen = vec![false; task.len()];
    for &i in init {
        if i >= task.len() {
            return Err(Error::Domain(format!("initial index {i} outside the pool")));
        }
        if seen[i] {
            return Err(Error::Domain(format!("initial index {i} repeated")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Evaluates the initial points; returns the pending pool, or `None` if the
/// oracle failed (recorded in the history status).
fn observe_inits(task: &Task, init: &[usize], history: &mut BoHistory) -> Option<Vec<usize>> {
    for &i in init {
        match task.evaluate(i) {
            Ok(y) => history.push(BoStep {
                step: 0,
                candidate_index: i,
                x: task.candidates[i].clone(),
                y,
                alpha: None,
            }),
            Err(e) => {
                history.status = RunStatus::OracleFailed(e.to_string());
                return None;
            }
        }
    }
    Some((0..task.len()).filter(|i| !init.contains(i)).collect())
}

fn observed_support(history: &BoHistory) -> Result<SupportSet> {
    SupportSet::new(
        history.steps.iter().map(|s| s.x.clone()).collect(),
        history.steps.iter().map(|s| s.y).collect(),
    )
}

/// Runs DRE-driven BO on `task` starting from `init`.
///
/// Each iteration optionally fine-tunes the surrogate on the history, ranks
/// the whole pool (pending and evaluated points), scores the pending points
/// with the acquisition function and evaluates the minimizer.
pub fn run_bo(model: &DreModel, task: &Task, init: &[usize], options: &BoOptions) -> Result<BoHistory> {
    check_inits(task, init)?;
    options.acquisition.validate()?;
    if task.dim() != model.input_dim() {
        return Err(Error::Shape {
            context: "task dimension",
            expected: model.input_dim(),
            got: task.dim(),
        });
    }
    let mut base = model.clone();
    if base.input_bounds().is_none() {
        base.set_input_bounds(InputBounds::fit(task.candidates.iter().map(Vec::as_slice))?)?;
    }
    let mut current = base.clone();

    let mut history = BoHistory::new(&task.id, &options.method, options.seed);
    let Some(mut pending) = observe_inits(task, init, &mut history) else {
        return Ok(history);
    };

    for step in 1..=options.iterations {
        if pending.is_empty() {
            history.status = RunStatus::PoolExhausted;
            break;
        }
        let support = observed_support(&history)?;
        if options.fine_tune {
            let source = if options.reset_each_step { &base } else { &current };
            current = source.fine_tune(&support, source.step_schedule())?.0;
        }
        let best_index = history.best().expect("history is non-empty").candidate_index;
        let mut queries = pending.clone();
        queries.push(best_index);
        let prediction = current.predict(Some(&support), &task.candidates, &queries)?;
        let mu_best = *prediction.mu.last().expect("queries are non-empty");
        let alphas: Vec<f64> = (0..pending.len())
            .map(|j| {
                options
                    .acquisition
                    .value(prediction.mu[j], prediction.sigma[j], mu_best)
            })
            .collect();
        let chosen = select_next(&alphas)?;
        let candidate = pending.remove(chosen);
        match task.evaluate(candidate) {
            Ok(y) => {
                debug!(
                    "{} step {step}: candidate {candidate}, y = {y}, alpha = {}",
                    task.id, alphas[chosen]
                );
                history.push(BoStep {
                    step,
                    candidate_index: candidate,
                    x: task.candidates[candidate].clone(),
                    y,
                    alpha: Some(alphas[chosen]),
                });
            }
            Err(e) => {
                history.status = RunStatus::OracleFailed(e.to_string());
                break;
            }
        }
    }
    Ok(history)
}

/// Uniform selection without replacement from the pending pool.
pub fn run_random_search(task: &Task, init: &[usize], iterations: usize, seed_value: u64) -> Result<BoHistory> {
    check_inits(task, init)?;
    let mut rng = seed::rng(seed::derive(seed_value, seed::STREAM_RANDOM_SEARCH, 0));
    let mut history = BoHistory::new(&task.id, "random", seed_value);
    let Some(mut pending) = observe_inits(task, init, &mut history) else {
        return Ok(history);
    };
    for step in 1..=iterations {
        if pending.is_empty() {
            history.status = RunStatus::PoolExhausted;
            break;
        }
        let candidate = pending.remove(rng.gen_range(0..pending.len()));
        match task.evaluate(candidate) {
            Ok(y) => history.push(BoStep {
                step,
                candidate_index: candidate,
                x: task.candidates[candidate].clone(),
                y,
                alpha: None,
            }),
            Err(e) => {
                history.status = RunStatus::OracleFailed(e.to_string());
                break;
            }
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::DreConfig;

    fn table_task(n: usize) -> Task {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
        let ys: Vec<f64> = (0..n).map(|i| ((i * 7) % n) as f64).collect();
        Task::new("table", xs, Objective::Table(ys)).unwrap()
    }

    fn tiny_model() -> DreModel {
        DreModel::new(
            DreConfig {
                ensemble_size: 2,
                scorer_hidden: vec![4],
                use_meta_features: false,
                ..DreConfig::default()
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn task_validation() {
        assert!(Task::new("e", vec![], Objective::Table(vec![])).is_err());
        assert!(Task::new("r", vec![vec![0.0], vec![0.0, 1.0]], Objective::Table(vec![1.0, 2.0])).is_err());
        assert!(Task::new("y", vec![vec![0.0]], Objective::Table(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn zero_iterations_keeps_inits() {
        let task = table_task(10);
        let opts = BoOptions {
            iterations: 0,
            ..BoOptions::default()
        };
        let h = run_bo(&tiny_model(), &task, &[3, 5, 1], &opts).unwrap();
        assert_eq!(h.steps.len(), 3);
        let max_init = [3, 5, 1].iter().map(|&i| task.evaluate(i).unwrap()).fold(f64::MIN, f64::max);
        assert_eq!(*h.incumbent.last().unwrap(), max_init);
        assert_eq!(h.incumbent_curve(), vec![max_init]);

        let r = run_random_search(&task, &[3, 5, 1], 0, 4).unwrap();
        assert_eq!(r.steps.len(), 3);
    }

    #[test]
    fn bad_inits_are_rejected() {
        let task = table_task(5);
        let opts = BoOptions::default();
        assert!(run_bo(&tiny_model(), &task, &[], &opts).is_err());
        assert!(run_bo(&tiny_model(), &task, &[5], &opts).is_err());
        assert!(run_bo(&tiny_model(), &task, &[1, 1], &opts).is_err());
    }

    #[test]
    fn exhaustion_truncates_with_status() {
        let task = table_task(6);
        let opts = BoOptions {
            iterations: 10,
            fine_tune: false,
            ..BoOptions::default()
        };
        let h = run_bo(&tiny_model(), &task, &[0, 1], &opts).unwrap();
        assert_eq!(h.status, RunStatus::PoolExhausted);
        let mut seen: Vec<usize> = h.steps.iter().map(|s| s.candidate_index).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());

        let r = run_random_search(&task, &[0, 1], 10, 3).unwrap();
        assert_eq!(r.status, RunStatus::PoolExhausted);
        let mut seen: Vec<usize> = r.steps.iter().map(|s| s.candidate_index).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn oracle_failure_keeps_partial_history() {
        let mut ys = vec![1.0, 2.0, 3.0, 4.0];
        ys[3] = f64::NAN;
        let task = Task::new(
            "nan",
            (0..4).map(|i| vec![i as f64]).collect(),
            Objective::Table(ys),
        )
        .unwrap();
        let r = run_random_search(&task, &[0], 3, 0).unwrap();
        assert!(matches!(r.status, RunStatus::OracleFailed(_)));
        assert!(r.steps.len() < 4);
    }

    #[test]
    fn csv_round_trip() {
        let task = table_task(12);
        let h = run_bo(
            &tiny_model(),
            &task,
            &[0, 4],
            &BoOptions {
                iterations: 3,
                fine_tune: false,
                ..BoOptions::default()
            },
        )
        .unwrap();
        let text = h.to_csv();
        assert_eq!(text.lines().count(), 1 + 2 + 3);
        let back = BoHistory::from_csv(&text, "table", "dre", 0).unwrap();
        assert_eq!(back.incumbent, h.incumbent);
        assert_eq!(back.to_csv(), text);
        assert!(BoHistory::from_csv("nope\n", "t", "m", 0).is_err());
    }

    #[test]
    fn observations_to_reach_counts_inits() {
        let task = table_task(10);
        let r = run_random_search(&task, &[0, 1, 2], 7, 9).unwrap();
        let max = task.value_range().unwrap().1;
        let n = r.observations_to_reach(max).unwrap();
        assert_eq!(r.steps[n - 1].y, max);
    }
}
