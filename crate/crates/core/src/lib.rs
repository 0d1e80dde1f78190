//! Deep ranking ensembles (DRE): Bayesian optimization with an ensemble of neural
//! scorers trained with a weighted list-wise ranking loss, optionally
//! conditioned on Deep Set meta-features of the observed history and
//! meta-learned across related tasks.

pub mod acquisition;
pub mod benchmarks;
pub mod bo;
pub mod deepset;
pub mod error;
pub mod nn;
pub mod ranking;
pub mod seed;
pub mod surrogate;

pub use acquisition::{select_next, AcqKind};
pub use benchmarks::{
    average_rank_metric, load_meta_dataset, make_sinusoid_task, normalized_regret,
    save_meta_dataset, MetaDataset, MetricCurve, TaskData,
};
pub use bo::{run_bo, run_random_search, BoHistory, BoOptions, BoStep, Objective, RunStatus, Task};
pub use deepset::{DeepSetParams, MetaFeatures, SupportSet};
pub use error::{Error, Result};
pub use nn::{Activation, AdamState, MlpParams};
pub use ranking::{rank_scores, true_rank_permutation, LossKind, RankPermutation, WeightScheme};
pub use surrogate::{
    DreConfig, DreModel, FineTuneStatus, ListGradients, MetaTrainConfig, RankPrediction, TrainSchedule,
};
