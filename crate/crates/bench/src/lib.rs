//! Inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankbo_core::bo::Task;
use rankbo_core::{make_sinusoid_task, DreConfig, DreModel, SupportSet};

pub fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn sinusoid() -> Task {
    make_sinusoid_task(0.0, -10.0, 10.0, 0.1).expect("valid grid")
}

/// Default-sized ensemble with input bounds fitted to `task`.
pub fn model_for(task: &Task, use_meta_features: bool) -> DreModel {
    let config = DreConfig {
        use_meta_features,
        ..DreConfig::default()
    };
    let mut model = DreModel::new(config, task.dim()).expect("valid config");
    let bounds = rankbo_core::surrogate::InputBounds::fit(task.candidates().iter().map(Vec::as_slice))
        .expect("non-empty pool");
    model.set_input_bounds(bounds).expect("matching dimension");
    model
}

/// The first `n` evenly spaced observations of `task`.
pub fn history(task: &Task, n: usize) -> SupportSet {
    let stride = task.len() / n;
    let idx: Vec<usize> = (0..n).map(|i| i * stride).collect();
    SupportSet::new(
        idx.iter().map(|&i| task.candidates()[i].clone()).collect(),
        idx.iter().map(|&i| task.evaluate(i).expect("finite")).collect(),
    )
    .expect("consistent history")
}
