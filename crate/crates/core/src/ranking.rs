//! Ranking mathematics: true-rank permutations, list weights, the
//! Plackett–Luce permutation likelihood, the weighted list-wise loss and the
//! point-/pair-wise and regression losses it is compared against, and the
//! score-to-rank operator.
//!
//! Higher targets are better: position 1 of a [`RankPermutation`] holds the
//! item with the largest target, and the largest score receives rank 1.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};

/// Item indices ordered by descending target, ties by ascending index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankPermutation {
    order: Vec<usize>,
}

impl RankPermutation {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Builds a permutation from an explicit order, checking it is a
    /// permutation of `0..n`.
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || seen[i] {
                return Err(Error::Domain(format!("{order:?} is not a permutation")));
            }
            seen[i] = true;
        }
        Ok(Self { order })
    }
}

pub fn true_rank_permutation(targets: &[f64]) -> Result<RankPermutation> {
    if targets.is_empty() {
        return Err(Error::Domain("cannot rank an empty list".into()));
    }
    check_finite("targets", targets)?;
    let mut order: Vec<usize> = (0..targets.len()).collect();
    // Stable sort keeps ascending index among equal targets.
    order.sort_by(|&a, &b| targets[b].total_cmp(&targets[a]));
    Ok(RankPermutation { order })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `1 / ln(j + 1)`
    InverseLog,
    /// `1 / j`
    InverseLinear,
    /// `(k - j + 1) / Σ_{t=1..k} t`
    PositionDependentAttention,
    Uniform,
}

/// Weight of 1-based list position `position` in a list of `list_length` items.
pub fn list_weight(position: usize, list_length: usize, scheme: WeightScheme) -> Result<f64> {
    if position == 0 {
        return Err(Error::Domain("list positions start at 1".into()));
    }
    Ok(match scheme {
        WeightScheme::InverseLog => 1.0 / ((position + 1) as f64).ln(),
        WeightScheme::InverseLinear => 1.0 / position as f64,
        WeightScheme::PositionDependentAttention => {
            if position > list_length {
                return Err(Error::Domain(format!(
                    "position {position} exceeds list length {list_length}"
                )));
            }
            let total = (list_length * (list_length + 1) / 2) as f64;
            (list_length - position + 1) as f64 / total
        }
        WeightScheme::Uniform => 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ListwiseWeighted,
    ListwiseUnweighted,
    Pairwise,
    Pointwise,
    RegressionMse,
}

impl LossKind {
    /// Loss and score gradient of `scores` against raw `targets`. Ranking
    /// losses use only the order of `targets`; the regression loss fits their
    /// values.
    pub fn evaluate(
        self,
        scores: &[f64],
        targets: &[f64],
        scheme: WeightScheme,
    ) -> Result<(f64, Vec<f64>)> {
        check_len("loss targets", scores.len(), targets.len())?;
        match self {
            LossKind::RegressionMse => regression_mse(scores, targets),
            _ => {
                let perm = true_rank_permutation(targets)?;
                match self {
                    LossKind::ListwiseWeighted => listwise_loss(scores, &perm, scheme),
                    LossKind::ListwiseUnweighted => {
                        listwise_loss(scores, &perm, WeightScheme::Uniform)
                    }
                    LossKind::Pairwise => pairwise_loss(scores, &perm),
                    LossKind::Pointwise => pointwise_loss(scores, &perm),
                    LossKind::RegressionMse => unreachable!(),
                }
            }
        }
    }
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check_scores(scores: &[f64], perm: &RankPermutation) -> Result<()> {
    check_len("permutation", scores.len(), perm.len())?;
    check_finite("scores", scores)
}

/// `log Σ_{k≥j} exp(s_{π(k)})` for every position `j`.
fn suffix_log_sum_exp(scores: &[f64], perm: &RankPermutation) -> Vec<f64> {
    let m = perm.len();
    let mut lse = vec![0.0; m];
    let mut acc = f64::NEG_INFINITY;
    for j in (0..m).rev() {
        acc = log_add_exp(scores[perm.order[j]], acc);
        lse[j] = acc;
    }
    lse
}

/// Plackett–Luce probability of `perm` under `scores`.
pub fn listwise_permutation_prob(scores: &[f64], perm: &RankPermutation) -> Result<f64> {
    check_scores(scores, perm)?;
    let lse = suffix_log_sum_exp(scores, perm);
    let log_prob: f64 = perm
        .order
        .iter()
        .zip(&lse)
        .map(|(&i, l)| scores[i] - l)
        .sum();
    Ok(log_prob.exp())
}

/// Weighted negative log-likelihood of `perm`:
/// `Σ_j w(j) · (log Σ_{k≥j} exp(s_{π(k)}) − s_{π(j)})`.
pub fn listwise_loss(
    scores: &[f64],
    perm: &RankPermutation,
    scheme: WeightScheme,
) -> Result<(f64, Vec<f64>)> {
    check_scores(scores, perm)?;
    let m = perm.len();
    let lse = suffix_log_sum_exp(scores, perm);
    let mut loss = 0.0;
    let mut grad = vec![0.0; m];
    // log Σ_{j<k} w(j) exp(−lse_j), accumulated along the list.
    let mut log_mass = f64::NEG_INFINITY;
    for k in 0..m {
        let item = perm.order[k];
        let w = list_weight(k + 1, m, scheme)?;
        let own = scores[item] - lse[k];
        loss -= w * own;
        // The j = k term and the −w(k) offset combine into w · expm1(own).
        grad[item] = (scores[item] + log_mass).exp() + w * own.exp_m1();
        log_mass = log_add_exp(log_mass, w.ln() - lse[k]);
    }
    // The last term is log(exp(s)/exp(s)) = 0 up to rounding.
    Ok((loss.max(0.0), grad))
}

/// Logistic pair-wise loss: `Σ_{a before b} −log σ(s_a − s_b)`.
pub fn pairwise_loss(scores: &[f64], perm: &RankPermutation) -> Result<(f64, Vec<f64>)> {
    check_scores(scores, perm)?;
    let m = perm.len();
    if m < 2 {
        return Err(Error::DegenerateList(m));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; m];
    for a in 0..m {
        for b in a + 1..m {
            let (hi, lo) = (perm.order[a], perm.order[b]);
            let margin = scores[hi] - scores[lo];
            loss += softplus(-margin);
            // d/dmargin of softplus(−margin) = −σ(−margin)
            let g = -sigmoid(-margin);
            grad[hi] += g;
            grad[lo] -= g;
        }
    }
    Ok((loss, grad))
}

/// Squared error against the normalized rank target `1 − 2(r − 1)/(M − 1)`,
/// which is `+1` for the best item and `−1` for the worst.
pub fn pointwise_loss(scores: &[f64], perm: &RankPermutation) -> Result<(f64, Vec<f64>)> {
    check_scores(scores, perm)?;
    let m = perm.len();
    if m < 2 {
        return Err(Error::DegenerateList(m));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; m];
    for (pos, &item) in perm.order.iter().enumerate() {
        let target = 1.0 - 2.0 * pos as f64 / (m - 1) as f64;
        let r = scores[item] - target;
        loss += r * r;
        grad[item] = 2.0 * r;
    }
    Ok((loss, grad))
}

/// Mean squared error and its gradient `2(p − t)/M`.
pub fn regression_mse(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len("regression targets", predictions.len(), targets.len())?;
    if predictions.is_empty() {
        return Err(Error::DegenerateList(0));
    }
    check_finite("predictions", predictions)?;
    check_finite("targets", targets)?;
    let m = predictions.len() as f64;
    let mut loss = 0.0;
    let grad = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            loss += (p - t).powi(2);
            2.0 * (p - t) / m
        })
        .collect();
    Ok((loss / m, grad))
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `rank(s_j) = #{s ∈ scores : s ≥ s_j}`. The best score gets rank 1; tied
/// scores share the larger rank.
pub fn rank_scores(scores: &[f64]) -> Result<Vec<u32>> {
    if scores.is_empty() {
        return Err(Error::Domain("cannot rank an empty score set".into()));
    }
    check_finite("scores", scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(scores
        .iter()
        .map(|s| sorted.partition_point(|v| v >= s) as u32)
        .collect())
}
