//! The deep ranking ensemble: `N` independent MLP scorers that share an
//! optional Deep Set encoder of the observation history. Each scorer's
//! outputs are turned into ranks over a common set of points and the ranks
//! are aggregated into a mean and a population standard deviation.

use std::io::{Read, Write};
use std::path::Path;

use log::debug;
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::benchmarks::MetaDataset;
use crate::deepset::{DeepSetAdam, DeepSetCache, DeepSetGrads, DeepSetParams, SupportSet};
use crate::error::{check_len, Error, Result};
use crate::nn::{Activation, AdamState, GradBundle, MlpParams};
use crate::ranking::{rank_scores, LossKind, WeightScheme};
use crate::seed;

const MODEL_MAGIC: &[u8; 5] = b"DREM1";

/// Below this many observations the whole history conditions the encoder.
pub const MIN_OBS_FOR_SUPPORT_SUBSAMPLING: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaTrainConfig {
    /// Optimizer steps; each one updates a single sampled scorer and the encoder.
    pub epochs: usize,
    pub lr: f64,
    /// Query lists averaged into one gradient step.
    pub batch_lists: usize,
    pub list_size: usize,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            lr: 0.001,
            batch_lists: 100,
            list_size: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DreConfig {
    pub ensemble_size: usize,
    pub scorer_hidden: Vec<usize>,
    pub activation: Activation,
    pub use_meta_features: bool,
    pub deepset_hidden: Vec<usize>,
    pub deepset_pool_dim: usize,
    pub meta_feature_dim: usize,
    /// Fraction of each list routed to the encoder instead of the scorer.
    pub support_fraction: f64,
    pub loss: LossKind,
    pub weights: WeightScheme,
    pub meta_train: MetaTrainConfig,
    /// Per-step training of a meta-trained model.
    pub fine_tune: TrainSchedule,
    /// Per-step training of a randomly initialized model.
    pub random_init_train: TrainSchedule,
    /// Whether fine-tuning also updates the encoder.
    pub fine_tune_deepset: bool,
    pub seed: u64,
}

impl Default for DreConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 10,
            scorer_hidden: vec![32; 4],
            activation: Activation::Relu,
            use_meta_features: true,
            deepset_hidden: vec![32, 32],
            deepset_pool_dim: 32,
            meta_feature_dim: 16,
            support_fraction: 0.2,
            loss: LossKind::ListwiseWeighted,
            weights: WeightScheme::InverseLog,
            meta_train: MetaTrainConfig::default(),
            fine_tune: TrainSchedule {
                epochs: 1000,
                lr: 0.001,
            },
            random_init_train: TrainSchedule {
                epochs: 1000,
                lr: 0.02,
            },
            fine_tune_deepset: true,
            seed: 0,
        }
    }
}

impl DreConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be at least 1".into());
        }
        if self.meta_train.list_size < 2 {
            return bad("meta_train.list_size must be at least 2".into());
        }
        if self.meta_train.batch_lists == 0 {
            return bad("meta_train.batch_lists must be at least 1".into());
        }
        if !(self.support_fraction > 0.0 && self.support_fraction < 1.0) {
            return bad(format!(
                "support_fraction must lie in (0, 1), got {}",
                self.support_fraction
            ));
        }
        for (name, lr) in [
            ("meta_train.lr", self.meta_train.lr),
            ("fine_tune.lr", self.fine_tune.lr),
            ("random_init_train.lr", self.random_init_train.lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.scorer_hidden.contains(&0) || self.deepset_hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if self.use_meta_features && (self.meta_feature_dim == 0 || self.deepset_pool_dim == 0) {
            return bad("meta-feature and pooling dimensions must be positive".into());
        }
        Ok(())
    }
}

/// Per-dimension affine map of configurations onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl InputBounds {
    pub fn fit<'a>(points: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut iter = points.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Domain("cannot fit bounds to no points".into()))?;
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for p in iter {
            check_len("bounds point", lo.len(), p.len())?;
            for (d, &v) in p.iter().enumerate() {
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(x.iter().zip(self.lo.iter().zip(&self.hi)).map(|(&v, (&lo, &hi))| {
            if hi > lo {
                2.0 * (v - lo) / (hi - lo) - 1.0
            } else {
                0.0
            }
        }));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankPrediction {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `member_ranks[i][j]`: rank of query `j` under scorer `i`.
    pub member_ranks: Vec<Vec<u32>>,
}

/// Mean and population standard deviation of each column of `member_ranks`.
pub fn aggregate_ranks(member_ranks: &[Vec<u32>]) -> (Vec<f64>, Vec<f64>) {
    let n = member_ranks.len() as f64;
    let cols = member_ranks.first().map_or(0, Vec::len);
    let mut mu = vec![0.0; cols];
    let mut sigma = vec![0.0; cols];
    for j in 0..cols {
        let mean = member_ranks.iter().map(|r| r[j] as f64).sum::<f64>() / n;
        let var = member_ranks
            .iter()
            .map(|r| (r[j] as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        mu[j] = mean;
        sigma[j] = var.sqrt();
    }
    (mu, sigma)
}

#[derive(Clone, Debug, PartialEq)]
pub enum FineTuneStatus {
    /// Mean loss of the last epoch, per member.
    Trained { final_losses: Vec<f64> },
    /// Fewer than two observations: nothing to rank, model returned unchanged.
    Skipped,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean loss over the lists of each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    config: DreConfig,
    input_dim: usize,
    member_seeds: Vec<u64>,
    meta_trained: bool,
    has_input_bounds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DreModel {
    config: DreConfig,
    input_dim: usize,
    input_bounds: Option<InputBounds>,
    deepset: Option<DeepSetParams>,
    scorers: Vec<MlpParams>,
    member_seeds: Vec<u64>,
    meta_trained: bool,
}

/// Scaled inputs for one list: `rows` is `count * dim` values.
struct PreparedList<'a> {
    rows: &'a [f64],
    count: usize,
    targets: &'a [f64],
    support: Option<&'a SupportSet>,
}

/// Loss of one query list and its gradients for one scorer and the encoder.
#[derive(Clone, Debug)]
pub struct ListGradients {
    pub loss: f64,
    pub scorer: GradBundle,
    pub deepset: Option<DeepSetGrads>,
}

impl DreModel {
    /// Randomly initialized ensemble for configurations of dimension `input_dim`.
    pub fn new(config: DreConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidArchitecture("input dimension must be positive".into()));
        }
        let deepset = if config.use_meta_features {
            Some(DeepSetParams::init(
                input_dim,
                &config.deepset_hidden,
                config.deepset_pool_dim,
                config.meta_feature_dim,
                config.activation,
                seed::derive(config.seed, seed::STREAM_DEEPSET, 0),
                seed::derive(config.seed, seed::STREAM_DEEPSET, 1),
            )?)
        } else {
            None
        };
        let scorer_in = input_dim + deepset.as_ref().map_or(0, DeepSetParams::output_dim);
        let dims: Vec<usize> = std::iter::once(scorer_in)
            .chain(config.scorer_hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let member_seeds: Vec<u64> = (0..config.ensemble_size as u64)
            .map(|i| seed::derive(config.seed, seed::STREAM_MEMBER, i))
            .collect();
        let scorers = member_seeds
            .iter()
            .map(|&s| MlpParams::init(&dims, config.activation, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            input_dim,
            input_bounds: None,
            deepset,
            scorers,
            member_seeds,
            meta_trained: false,
        })
    }

    pub fn config(&self) -> &DreConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn ensemble_size(&self) -> usize {
        self.scorers.len()
    }

    pub fn scorers(&self) -> &[MlpParams] {
        &self.scorers
    }

    pub fn scorers_mut(&mut self) -> &mut [MlpParams] {
        &mut self.scorers
    }

    pub fn deepset(&self) -> Option<&DeepSetParams> {
        self.deepset.as_ref()
    }

    pub fn deepset_mut(&mut self) -> Option<&mut DeepSetParams> {
        self.deepset.as_mut()
    }

    pub fn member_seeds(&self) -> &[u64] {
        &self.member_seeds
    }

    pub fn is_meta_trained(&self) -> bool {
        self.meta_trained
    }

    pub fn input_bounds(&self) -> Option<&InputBounds> {
        self.input_bounds.as_ref()
    }

    pub fn set_input_bounds(&mut self, bounds: InputBounds) -> Result<()> {
        check_len("input bounds", self.input_dim, bounds.lo.len())?;
        self.input_bounds = Some(bounds);
        Ok(())
    }

    /// Per-step training schedule used inside the BO loop: the fine-tuning
    /// schedule for meta-trained models, the random-init schedule otherwise.
    pub fn step_schedule(&self) -> TrainSchedule {
        if self.meta_trained {
            self.config.fine_tune
        } else {
            self.config.random_init_train
        }
    }

    fn scale_rows(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut rows = Vec::with_capacity(xs.len() * self.input_dim);
        for x in xs {
            check_len("configuration", self.input_dim, x.len())?;
            match &self.input_bounds {
                Some(b) => b.apply_into(x, &mut rows),
                None => rows.extend_from_slice(x),
            }
        }
        Ok(rows)
    }

    fn scale_support(&self, support: &SupportSet) -> Result<SupportSet> {
        check_len("support dimension", self.input_dim, support.dim())?;
        let rows = self.scale_rows(support.xs())?;
        SupportSet::new(
            rows.chunks_exact(self.input_dim).map(<[f64]>::to_vec).collect(),
            support.ys().to_vec(),
        )
    }

    fn meta_features(&self, support: Option<&SupportSet>) -> Result<Option<(Vec<f64>, DeepSetCache)>> {
        match &self.deepset {
            None => Ok(None),
            Some(ds) => {
                let support = support.ok_or(Error::EmptySupport)?;
                let (z, cache) = ds.encode(support)?;
                Ok(Some((z.z, cache)))
            }
        }
    }

    fn scorer_inputs(&self, rows: &[f64], count: usize, z: Option<&[f64]>) -> Vec<f64> {
        match z {
            None => rows.to_vec(),
            Some(z) => {
                let mut out = Vec::with_capacity(count * (self.input_dim + z.len()));
                for row in rows.chunks_exact(self.input_dim) {
                    out.extend_from_slice(row);
                    out.extend_from_slice(z);
                }
                out
            }
        }
    }

    /// Scores of `queries` under scorer `member`, conditioned on `support`
    /// when the model uses meta-features.
    pub fn score_query(
        &self,
        member: usize,
        support: Option<&SupportSet>,
        queries: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        if member >= self.scorers.len() {
            return Err(Error::MemberIndex {
                index: member,
                size: self.scorers.len(),
            });
        }
        let support = support.map(|s| self.scale_support(s)).transpose()?;
        let rows = self.scale_rows(queries)?;
        let z = self.meta_features(support.as_ref())?;
        let inputs = self.scorer_inputs(&rows, queries.len(), z.as_ref().map(|(z, _)| &z[..]));
        Ok(self.scorers[member].forward_batch(&inputs, queries.len())?.0)
    }

    /// Ranks every member's scores over `universe` and aggregates the ranks of
    /// the points listed in `queries` (indices into `universe`).
    pub fn predict(
        &self,
        support: Option<&SupportSet>,
        universe: &[Vec<f64>],
        queries: &[usize],
    ) -> Result<RankPrediction> {
        if universe.is_empty() {
            return Err(Error::Domain("rank universe is empty".into()));
        }
        if let Some(&bad) = queries.iter().find(|&&q| q >= universe.len()) {
            return Err(Error::Domain(format!(
                "query index {bad} outside a rank universe of {}",
                universe.len()
            )));
        }
        let support = support.map(|s| self.scale_support(s)).transpose()?;
        let rows = self.scale_rows(universe)?;
        let z = self.meta_features(support.as_ref())?;
        let inputs = self.scorer_inputs(&rows, universe.len(), z.as_ref().map(|(z, _)| &z[..]));
        let member_ranks = self
            .scorers
            .iter()
            .map(|scorer| {
                let (scores, _) = scorer.forward_batch(&inputs, universe.len())?;
                let ranks = rank_scores(&scores)?;
                Ok(queries.iter().map(|&q| ranks[q]).collect())
            })
            .collect::<Result<Vec<Vec<u32>>>>()?;
        let (mu, sigma) = aggregate_ranks(&member_ranks);
        Ok(RankPrediction {
            mu,
            sigma,
            member_ranks,
        })
    }

    fn list_grads(&self, member: usize, list: &PreparedList<'_>) -> Result<ListGradients> {
        let z = self.meta_features(list.support)?;
        let inputs = self.scorer_inputs(list.rows, list.count, z.as_ref().map(|(z, _)| &z[..]));
        let scorer = &self.scorers[member];
        let (scores, cache) = scorer.forward_batch(&inputs, list.count)?;
        let (loss, score_grad) =
            self.config
                .loss
                .evaluate(&scores, list.targets, self.config.weights)?;
        let grads = scorer.backward(&cache, &score_grad)?;
        let deepset = match (&self.deepset, z) {
            (Some(ds), Some((z, ds_cache))) => {
                let width = self.input_dim + z.len();
                let mut z_grad = vec![0.0; z.len()];
                for row in grads.input.chunks_exact(width) {
                    for (g, v) in z_grad.iter_mut().zip(&row[self.input_dim..]) {
                        *g += v;
                    }
                }
                Some(ds.backward(&ds_cache, &z_grad)?)
            }
            _ => None,
        };
        Ok(ListGradients {
            loss,
            scorer: grads,
            deepset,
        })
    }

    /// Trains the ensemble on a collection of tasks. Each epoch samples one
    /// scorer, draws `batch_lists` query lists (each from a uniformly sampled
    /// task) with disjoint support subsets, and takes one Adam step on that
    /// scorer and on the shared encoder.
    pub fn meta_train(config: DreConfig, tasks: &MetaDataset) -> Result<(Self, TrainReport)> {
        config.validate()?;
        let mut model = Self::new(config, tasks.dim())?;
        let bounds = InputBounds::fit(
            tasks
                .tasks
                .values()
                .flat_map(|t| t.x.iter().map(Vec::as_slice)),
        )?;
        model.set_input_bounds(bounds)?;
        model.meta_trained = true;
        let report = model.run_meta_training(tasks)?;
        Ok((model, report))
    }

    fn run_meta_training(&mut self, tasks: &MetaDataset) -> Result<TrainReport> {
        let task_list: Vec<(Vec<f64>, &[f64])> = tasks
            .tasks
            .values()
            .map(|t| Ok((self.scale_rows(&t.x)?, t.y.as_slice())))
            .collect::<Result<_>>()?;
        if let Some((name, t)) = tasks.tasks.iter().find(|(_, t)| t.y.len() < 2) {
            return Err(Error::Schema {
                task: name.clone(),
                message: format!("needs at least 2 observations, has {}", t.y.len()),
            });
        }
        let cfg = self.config.meta_train.clone();
        let mut master = seed::rng(seed::derive(self.config.seed, seed::STREAM_META_TRAIN, 0));
        let mut member_rngs: Vec<seed::Rng> = self
            .member_seeds
            .iter()
            .map(|&s| seed::rng(seed::derive(s, seed::STREAM_META_TRAIN, 0)))
            .collect();
        let mut scorer_adam: Vec<AdamState> = self.scorers.iter().map(AdamState::new).collect();
        let mut deepset_adam = self.deepset.as_ref().map(DeepSetAdam::new);
        let mut report = TrainReport::default();
        let d = self.input_dim;

        for epoch in 0..cfg.epochs {
            let member = master.gen_range(0..self.scorers.len());
            let mut scorer_grad = GradBundle::zeros(&self.scorers[member]);
            let mut deepset_grad = self.deepset.as_ref().map(DeepSetGrads::zeros);
            let mut loss_sum = 0.0;
            for _ in 0..cfg.batch_lists {
                let (rows, ys) = &task_list[master.gen_range(0..task_list.len())];
                let n = ys.len();
                let (query, support) = sample_list(
                    n,
                    cfg.list_size,
                    self.config.support_fraction,
                    &mut member_rngs[member],
                );
                let q_rows: Vec<f64> = query
                    .iter()
                    .flat_map(|&i| rows[i * d..(i + 1) * d].iter().copied())
                    .collect();
                let q_targets: Vec<f64> = query.iter().map(|&i| ys[i]).collect();
                let support_set = if self.deepset.is_some() {
                    Some(SupportSet::new(
                        support
                            .iter()
                            .map(|&i| rows[i * d..(i + 1) * d].to_vec())
                            .collect(),
                        support.iter().map(|&i| ys[i]).collect(),
                    )?)
                } else {
                    None
                };
                let g = self.list_grads(
                    member,
                    &PreparedList {
                        rows: &q_rows,
                        count: query.len(),
                        targets: &q_targets,
                        support: support_set.as_ref(),
                    },
                )?;
                loss_sum += g.loss;
                scorer_grad.accumulate(&g.scorer);
                if let (Some(acc), Some(dg)) = (deepset_grad.as_mut(), g.deepset.as_ref()) {
                    acc.accumulate(dg);
                }
            }
            let inv = 1.0 / cfg.batch_lists as f64;
            scorer_grad.scale(inv);
            scorer_adam[member].step(&mut self.scorers[member], &scorer_grad, cfg.lr)?;
            if let (Some(ds), Some(adam), Some(g)) =
                (self.deepset.as_mut(), deepset_adam.as_mut(), deepset_grad.as_mut())
            {
                g.scale(inv);
                adam.step(ds, g, cfg.lr)?;
            }
            let mean_loss = loss_sum * inv;
            if epoch % 500 == 0 {
                debug!("meta-train epoch {epoch}: member {member}, loss {mean_loss:.6}");
            }
            report.epoch_losses.push(mean_loss);
        }
        Ok(report)
    }

    /// Trains every member on the observation history for `schedule.epochs`
    /// epochs. In each epoch every member takes one Adam step on its scorer;
    /// the shared encoder takes one step on the mean of the members' encoder
    /// gradients, so it stays consistent with all of them. The encoder is
    /// conditioned on the whole history when it holds fewer than
    /// [`MIN_OBS_FOR_SUPPORT_SUBSAMPLING`] points and on a fresh random subset
    /// per member and epoch otherwise.
    pub fn fine_tune(
        &self,
        observations: &SupportSet,
        schedule: TrainSchedule,
    ) -> Result<(Self, FineTuneStatus)> {
        let mut model = self.clone();
        if observations.len() < 2 {
            return Ok((model, FineTuneStatus::Skipped));
        }
        if schedule.epochs == 0 {
            return Ok((model, FineTuneStatus::Trained { final_losses: vec![] }));
        }
        check_len("observation dimension", self.input_dim, observations.dim())?;
        let n = observations.len();
        let rows = self.scale_rows(observations.xs())?;
        let scaled_support = self.scale_support(observations)?;
        let targets = observations.ys();
        let subsample = n >= MIN_OBS_FOR_SUPPORT_SUBSAMPLING;
        let support_count =
            ((self.config.support_fraction * n as f64).round() as usize).clamp(1, n);
        let members = model.scorers.len();

        let mut rngs: Vec<seed::Rng> = model
            .member_seeds
            .iter()
            .map(|&s| seed::rng(seed::derive(s, seed::STREAM_FINE_TUNE, n as u64)))
            .collect();
        let mut scorer_adams: Vec<AdamState> = model.scorers.iter().map(AdamState::new).collect();
        let train_deepset = self.config.fine_tune_deepset && model.deepset.is_some();
        let mut deepset_adam = model.deepset.as_ref().map(DeepSetAdam::new);
        let mut final_losses = vec![0.0; members];
        for _ in 0..schedule.epochs {
            let mut deepset_grad = model.deepset.as_ref().map(DeepSetGrads::zeros);
            for member in 0..members {
                let support = if model.deepset.is_none() {
                    None
                } else if subsample {
                    let mut idx = index::sample(&mut rngs[member], n, support_count).into_vec();
                    idx.sort_unstable();
                    Some(scaled_support.subset(&idx)?)
                } else {
                    Some(scaled_support.clone())
                };
                let g = model.list_grads(
                    member,
                    &PreparedList {
                        rows: &rows,
                        count: n,
                        targets,
                        support: support.as_ref(),
                    },
                )?;
                scorer_adams[member].step(&mut model.scorers[member], &g.scorer, schedule.lr)?;
                if let (Some(acc), Some(dg)) = (deepset_grad.as_mut(), g.deepset.as_ref()) {
                    acc.accumulate(dg);
                }
                final_losses[member] = g.loss;
            }
            if train_deepset {
                if let (Some(ds), Some(adam), Some(mut dg)) =
                    (model.deepset.as_mut(), deepset_adam.as_mut(), deepset_grad)
                {
                    dg.scale(1.0 / members as f64);
                    adam.step(ds, &dg, schedule.lr)?;
                }
            }
        }
        Ok((model, FineTuneStatus::Trained { final_losses }))
    }

    /// Training loss of scorer `member` on the list `(xs, ys)` and its
    /// gradients, with the encoder conditioned on `support`.
    pub fn list_gradients(
        &self,
        member: usize,
        xs: &[Vec<f64>],
        ys: &[f64],
        support: Option<&SupportSet>,
    ) -> Result<ListGradients> {
        if member >= self.scorers.len() {
            return Err(Error::MemberIndex {
                index: member,
                size: self.scorers.len(),
            });
        }
        check_len("list targets", xs.len(), ys.len())?;
        let rows = self.scale_rows(xs)?;
        let support = support.map(|s| self.scale_support(s)).transpose()?;
        self.list_grads(
            member,
            &PreparedList {
                rows: &rows,
                count: xs.len(),
                targets: ys,
                support: support.as_ref(),
            },
        )
    }

    /// Loss of every member on `observations`, conditioning on the full history.
    pub fn member_losses(&self, observations: &SupportSet) -> Result<Vec<f64>> {
        let rows = self.scale_rows(observations.xs())?;
        let support = self.scale_support(observations)?;
        (0..self.scorers.len())
            .map(|m| {
                self.list_grads(
                    m,
                    &PreparedList {
                        rows: &rows,
                        count: observations.len(),
                        targets: observations.ys(),
                        support: Some(&support),
                    },
                )
                .map(|g| g.loss)
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let header = serde_json::to_vec(&ModelHeader {
            config: self.config.clone(),
            input_dim: self.input_dim,
            member_seeds: self.member_seeds.clone(),
            meta_trained: self.meta_trained,
            has_input_bounds: self.input_bounds.is_some(),
        })?;
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        if let Some(b) = &self.input_bounds {
            for v in b.lo.iter().chain(&b.hi) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        if let Some(ds) = &self.deepset {
            ds.write_to(out)?;
        }
        for s in &self.scorers {
            s.write_to(out)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("bad model magic".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 24 {
            return Err(Error::Format(format!("implausible header length {len}")));
        }
        let mut header = vec![0u8; len as usize];
        input.read_exact(&mut header)?;
        let header: ModelHeader = serde_json::from_slice(&header)?;
        header.config.validate()?;
        let d = header.input_dim;
        let input_bounds = if header.has_input_bounds {
            let lo = crate::nn::read_f64s(input, d)?;
            let hi = crate::nn::read_f64s(input, d)?;
            Some(InputBounds { lo, hi })
        } else {
            None
        };
        let deepset = if header.config.use_meta_features {
            let ds = DeepSetParams::read_from(input)?;
            check_len("encoder input", d, ds.x_dim())?;
            Some(ds)
        } else {
            None
        };
        check_len("member seeds", header.config.ensemble_size, header.member_seeds.len())?;
        let scorer_in = d + deepset.as_ref().map_or(0, DeepSetParams::output_dim);
        let scorers = (0..header.config.ensemble_size)
            .map(|_| {
                let s = MlpParams::read_from(input)?;
                check_len("scorer input", scorer_in, s.input_dim())?;
                check_len("scorer output", 1, s.output_dim())?;
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after last scorer".into()));
        }
        Ok(Self {
            config: header.config,
            input_dim: d,
            input_bounds,
            deepset,
            scorers,
            member_seeds: header.member_seeds,
            meta_trained: header.meta_trained,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut &bytes[..])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Draws a query list and a support subset from a task of `n` observations.
///
/// The query list holds `min(list_size, n)` items and the support set
/// `round(fraction * query_len)` (at least one). The two are disjoint when the
/// task is large enough; otherwise the query list shrinks to make room, and
/// only tasks too small for that (fewer than two query items left) share
/// points between support and query.
pub fn sample_list(
    n: usize,
    list_size: usize,
    support_fraction: f64,
    rng: &mut seed::Rng,
) -> (Vec<usize>, Vec<usize>) {
    let q0 = list_size.min(n);
    let s = ((support_fraction * q0 as f64).round() as usize).max(1);
    if n >= q0 + s {
        let idx = index::sample(rng, n, q0 + s).into_vec();
        (idx[..q0].to_vec(), idx[q0..].to_vec())
    } else if n >= s + 2 {
        let idx = index::sample(rng, n, n).into_vec();
        (idx[..n - s].to_vec(), idx[n - s..].to_vec())
    } else {
        let query = index::sample(rng, n, q0).into_vec();
        let support = index::sample(rng, n, s.min(n)).into_vec();
        (query, support)
    }
}
