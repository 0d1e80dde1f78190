//! Acquisition functions over rank-space predictive distributions.
//!
//! Lower ranks are better, so every acquisition value is minimized.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are treated as a point mass.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AcqKind {
    AverageRank,
    Lcb { beta: f64 },
    ExpectedImprovement,
}

impl AcqKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AcqKind::Lcb { beta } if !(beta >= 0.0 && beta.is_finite()) => Err(Error::Domain(
                format!("LCB beta must be finite and non-negative, got {beta}"),
            )),
            _ => Ok(()),
        }
    }

    /// `mu_best` is only read by expected improvement.
    pub fn value(&self, mu: f64, sigma: f64, mu_best: f64) -> f64 {
        match *self {
            AcqKind::AverageRank => acq_average_rank(mu),
            AcqKind::Lcb { beta } => acq_lcb(mu, sigma, beta),
            AcqKind::ExpectedImprovement => acq_ei(mu, sigma, mu_best),
        }
    }
}

pub fn acq_average_rank(mu: f64) -> f64 {
    mu
}

pub fn acq_lcb(mu: f64, sigma: f64, beta: f64) -> f64 {
    mu - beta * sigma
}

pub fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u * FRAC_1_SQRT_2)
}

/// Expected rank improvement over the incumbent's mean rank `mu_best`,
/// `E[max(0, mu_best − r)]` for `r ~ N(mu, sigma²)`, returned negated so that
/// smaller is better.
pub fn acq_ei(mu: f64, sigma: f64, mu_best: f64) -> f64 {
    let gain = mu_best - mu;
    if sigma < SIGMA_FLOOR {
        return -gain.max(0.0);
    }
    let u = gain / sigma;
    let ei = gain * std_normal_cdf(u) + sigma * std_normal_pdf(u);
    // Rounding can push tiny values below zero far in the left tail.
    -ei.max(0.0)
}

/// Index of the smallest acquisition value; ties go to the smallest index.
pub fn select_next(alphas: &[f64]) -> Result<usize> {
    if alphas.is_empty() {
        return Err(Error::ExhaustedPool);
    }
    if alphas.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("acquisition values"));
    }
    let mut best = 0;
    for (i, &a) in alphas.iter().enumerate().skip(1) {
        if a < alphas[best] {
            best = i;
        }
    }
    Ok(best)
}
