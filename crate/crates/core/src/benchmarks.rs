//! Task sources and evaluation metrics.
//!
//! Meta-datasets use a nested JSON layout: search-space id, then task id, then
//! an object with `"X"` (rows of configurations) and `"y"` (a flat list or a
//! list of one-element lists). Larger `y` is better.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde_json::{json, Map, Value};

use crate::bo::{BoHistory, Objective, Task};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaDataset {
    pub search_space_id: String,
    pub tasks: BTreeMap<String, TaskData>,
}

impl MetaDataset {
    pub fn new(search_space_id: impl Into<String>, tasks: BTreeMap<String, TaskData>) -> Result<Self> {
        let mut dim = None;
        for (id, t) in &tasks {
            let schema = |message: String| Error::Schema {
                task: id.clone(),
                message,
            };
            if t.x.is_empty() {
                return Err(schema("task has no observations".into()));
            }
            if t.x.len() != t.y.len() {
                return Err(schema(format!("X has {} rows but y has {} entries", t.x.len(), t.y.len())));
            }
            let d = t.x[0].len();
            if d == 0 {
                return Err(schema("configurations have dimension 0".into()));
            }
            if let Some(row) = t.x.iter().position(|r| r.len() != d) {
                return Err(schema(format!("ragged X: row {row} has {} columns, expected {d}", t.x[row].len())));
            }
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(schema(format!("dimension {d} differs from the search space's {expected}")))
                }
                _ => {}
            }
            if t.x.iter().flatten().chain(&t.y).any(|v| !v.is_finite()) {
                return Err(schema("non-finite value".into()));
            }
        }
        if tasks.is_empty() {
            return Err(Error::EmptyMetaDataset);
        }
        Ok(Self {
            search_space_id: search_space_id.into(),
            tasks,
        })
    }

    /// Tabulates tasks over their candidate pools.
    pub fn from_tasks<'a>(search_space_id: &str, tasks: impl IntoIterator<Item = &'a Task>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for task in tasks {
            let data = TaskData {
                x: task.candidates().to_vec(),
                y: task.all_values()?,
            };
            if map.insert(task.id().to_string(), data).is_some() {
                return Err(Error::Schema {
                    task: task.id().to_string(),
                    message: "duplicate task id".into(),
                });
            }
        }
        Self::new(search_space_id, map)
    }

    pub fn dim(&self) -> usize {
        self.tasks.values().next().map_or(0, |t| t.x[0].len())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Tabular BO task for one entry.
    pub fn task(&self, id: &str) -> Result<Task> {
        let data = self.tasks.get(id).ok_or_else(|| Error::Schema {
            task: id.to_string(),
            message: "no such task".into(),
        })?;
        Task::new(id, data.x.clone(), Objective::Table(data.y.clone()))
    }

    pub fn to_json(&self) -> Value {
        let tasks: Map<String, Value> = self
            .tasks
            .iter()
            .map(|(id, t)| (id.clone(), json!({ "X": t.x, "y": t.y })))
            .collect();
        json!({ self.search_space_id.clone(): tasks })
    }
}

/// Parses a meta-dataset document. With several search spaces, `space`
/// selects one; with a single space it may be omitted.
pub fn parse_meta_dataset(text: &str, space: Option<&str>) -> Result<MetaDataset> {
    let root: Value = serde_json::from_str(text)?;
    let spaces = root
        .as_object()
        .ok_or_else(|| Error::Format("top level must be an object keyed by search space".into()))?;
    let (space_id, entries) = match space {
        Some(s) => (
            s.to_string(),
            spaces
                .get(s)
                .ok_or_else(|| Error::Format(format!("search space {s:?} not present")))?,
        ),
        None if spaces.len() == 1 => {
            let (k, v) = spaces.iter().next().expect("len checked");
            (k.clone(), v)
        }
        None => {
            return Err(Error::Format(format!(
                "{} search spaces present; choose one",
                spaces.len()
            )))
        }
    };
    let entries = entries
        .as_object()
        .ok_or_else(|| Error::Format(format!("search space {space_id:?} must map task ids to objects")))?;
    let mut tasks = BTreeMap::new();
    for (id, entry) in entries {
        tasks.insert(id.clone(), parse_task(id, entry)?);
    }
    MetaDataset::new(space_id, tasks)
}

fn parse_task(id: &str, entry: &Value) -> Result<TaskData> {
    let schema = |message: &str| Error::Schema {
        task: id.to_string(),
        message: message.to_string(),
    };
    let number = |v: &Value| v.as_f64().ok_or_else(|| schema("non-numeric value"));
    let x = entry
        .get("X")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("missing \"X\" array"))?
        .iter()
        .map(|row| {
            row.as_array()
                .ok_or_else(|| schema("rows of X must be arrays"))?
                .iter()
                .map(number)
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let y = entry
        .get("y")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("missing \"y\" array"))?
        .iter()
        .map(|v| match v {
            Value::Array(inner) if inner.len() == 1 => number(&inner[0]),
            Value::Array(_) => Err(schema("nested y entries must have exactly one element")),
            other => number(other),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskData { x, y })
}

pub fn load_meta_dataset(path: impl AsRef<Path>, space: Option<&str>) -> Result<MetaDataset> {
    parse_meta_dataset(&std::fs::read_to_string(path)?, space)
}

pub fn save_meta_dataset(dataset: &MetaDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string(&dataset.to_json())?)?;
    Ok(())
}

/// Number of grid points `lo, lo + step, ...` not exceeding `hi`.
fn grid_len(lo: f64, hi: f64, step: f64) -> Result<usize> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || lo >= hi || step <= 0.0 {
        return Err(Error::Domain(format!(
            "invalid grid [{lo}, {hi}] with step {step}"
        )));
    }
    // The epsilon keeps an endpoint that is a multiple of step despite rounding.
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    if n < 2 {
        return Err(Error::Domain(format!("grid [{lo}, {hi}] with step {step} has fewer than 2 points")));
    }
    Ok(n)
}

pub fn sinusoid_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<Vec<f64>>> {
    let n = grid_len(lo, hi, step)?;
    Ok((0..n).map(|k| vec![lo + k as f64 * step]).collect())
}

/// `y = sin((x + π)/2 + beta)` on a grid over `[lo, hi]`.
pub fn make_sinusoid_task(beta: f64, lo: f64, hi: f64, step: f64) -> Result<Task> {
    make_scaled_sinusoid_task(beta, 1.0, lo, hi, step)
}

/// `y = amplitude · sin((x + π)/2 + beta)` on a grid over `[lo, hi]`.
pub fn make_scaled_sinusoid_task(beta: f64, amplitude: f64, lo: f64, hi: f64, step: f64) -> Result<Task> {
    if !(beta.is_finite() && amplitude.is_finite() && amplitude > 0.0) {
        return Err(Error::Domain(format!(
            "sinusoid needs finite beta and positive amplitude, got {beta}, {amplitude}"
        )));
    }
    let id = if amplitude == 1.0 {
        format!("sin_b{beta}")
    } else {
        format!("sin_b{beta}_a{amplitude}")
    };
    Task::new(id, sinusoid_grid(lo, hi, step)?, Objective::Sinusoid { beta, amplitude })
}

/// `count` sinusoid tasks with phase `beta ~ U[0, 2π)` and amplitude
/// log-uniform in `[amplitude_min, amplitude_max]`, drawn from `seed_value`.
pub fn sinusoid_family(
    count: usize,
    amplitude_min: f64,
    amplitude_max: f64,
    seed_value: u64,
    (lo, hi, step): (f64, f64, f64),
) -> Result<Vec<Task>> {
    if !(amplitude_min > 0.0 && amplitude_max >= amplitude_min && amplitude_max.is_finite()) {
        return Err(Error::Domain(format!(
            "invalid amplitude range [{amplitude_min}, {amplitude_max}]"
        )));
    }
    let mut rng = seed::rng(seed::derive(seed_value, seed::STREAM_TASKS, 0));
    let (ln_lo, ln_hi) = (amplitude_min.ln(), amplitude_max.ln());
    (0..count)
        .map(|_| {
            let beta = rng.gen_range(0.0..std::f64::consts::TAU);
            let amplitude = if ln_hi > ln_lo {
                rng.gen_range(ln_lo..ln_hi).exp()
            } else {
                amplitude_min
            };
            make_scaled_sinusoid_task(beta, amplitude, lo, hi, step)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricCurve {
    pub label: String,
    /// Step 0 is the value after initialization.
    pub values: Vec<f64>,
    /// Number of (task, seed) cells aggregated.
    pub cells: usize,
}

impl MetricCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,value\n");
        for (step, v) in self.values.iter().enumerate() {
            writeln!(out, "{step},{v}").expect("writing to a String cannot fail");
        }
        out
    }
}

/// One column per curve, in the order given.
pub fn curves_to_wide_csv(curves: &[MetricCurve]) -> Result<String> {
    let len = curves.first().map_or(0, |c| c.values.len());
    if let Some(c) = curves.iter().find(|c| c.values.len() != len) {
        return Err(Error::Alignment(format!(
            "curve {:?} has {} steps, expected {len}",
            c.label,
            c.values.len()
        )));
    }
    let mut out = String::from("step");
    for c in curves {
        out.push(',');
        out.push_str(&c.label);
    }
    out.push('\n');
    for step in 0..len {
        write!(out, "{step}").expect("writing to a String cannot fail");
        for c in curves {
            write!(out, ",{}", c.values[step]).expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Fractional ranks of `values`, larger first; ties share the mean position.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let better = values.iter().filter(|o| *o > v).count();
            let tied = values.iter().filter(|o| *o == v).count();
            better as f64 + (tied as f64 + 1.0) / 2.0
        })
        .collect()
}

/// Per step, ranks the methods' incumbents within each (task, seed) cell and
/// averages the ranks over cells.
pub fn average_rank_metric(
    histories: &BTreeMap<String, Vec<BoHistory>>,
) -> Result<BTreeMap<String, MetricCurve>> {
    type Cell = (String, u64);
    let methods: Vec<&String> = histories.keys().collect();
    let mut cells: BTreeMap<Cell, Vec<Vec<f64>>> = BTreeMap::new();
    let mut all_cells: BTreeSet<Cell> = BTreeSet::new();
    for runs in histories.values() {
        all_cells.extend(runs.iter().map(|h| (h.task_id.clone(), h.seed)));
    }
    if all_cells.is_empty() {
        return Err(Error::Alignment("no histories".into()));
    }
    for (m, method) in methods.iter().enumerate() {
        let runs = &histories[*method];
        for cell in &all_cells {
            let mut found = runs.iter().filter(|h| h.task_id == cell.0 && h.seed == cell.1);
            let h = found.next().ok_or_else(|| {
                Error::Alignment(format!(
                    "method {method:?} has no history for task {:?}, seed {}",
                    cell.0, cell.1
                ))
            })?;
            if found.next().is_some() {
                return Err(Error::Alignment(format!(
                    "method {method:?} has several histories for task {:?}, seed {}",
                    cell.0, cell.1
                )));
            }
            let entry = cells.entry(cell.clone()).or_default();
            debug_assert_eq!(entry.len(), m);
            entry.push(h.incumbent_curve());
        }
    }
    let len = cells.values().next().expect("non-empty")[0].len();
    if len == 0 {
        return Err(Error::Alignment("histories have no initial observations".into()));
    }
    for (cell, curves) in &cells {
        if curves.iter().any(|c| c.len() != len) {
            return Err(Error::Alignment(format!(
                "unequal history lengths for task {:?}, seed {}",
                cell.0, cell.1
            )));
        }
    }
    let mut sums = vec![vec![0.0; len]; methods.len()];
    for curves in cells.values() {
        for step in 0..len {
            let at_step: Vec<f64> = curves.iter().map(|c| c[step]).collect();
            for (m, r) in fractional_ranks(&at_step).into_iter().enumerate() {
                sums[m][step] += r;
            }
        }
    }
    let n = cells.len();
    Ok(methods
        .into_iter()
        .zip(sums)
        .map(|(method, s)| {
            (
                method.clone(),
                MetricCurve {
                    label: method.clone(),
                    values: s.into_iter().map(|v| v / n as f64).collect(),
                    cells: n,
                },
            )
        })
        .collect())
}

/// `(y_max − incumbent) / (y_max − y_min)` per step.
pub fn normalized_regret(history: &BoHistory, y_min: f64, y_max: f64) -> Result<MetricCurve> {
    if !(y_max > y_min) {
        return Err(Error::DegenerateRange { y_min, y_max });
    }
    let values: Vec<f64> = history
        .incumbent_curve()
        .iter()
        .map(|inc| (y_max - inc) / (y_max - y_min))
        .collect();
    if values.iter().any(|v| !(-1e-12..=1.0 + 1e-12).contains(v)) {
        return Err(Error::Domain(format!(
            "incumbents of {:?} fall outside [{y_min}, {y_max}]",
            history.task_id
        )));
    }
    Ok(MetricCurve {
        label: history.method.clone(),
        values,
        cells: 1,
    })
}
