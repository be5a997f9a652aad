//! Parent-selection strategies.
//!
//! Two parametric distributions over an island's members plus three
//! baselines used for ablations:
//!
//! ```text
//! power law:  p_i = r_i^-alpha / sum_j r_j^-alpha        (r_i = 1 for the best)
//! weighted:   w_i = sigmoid(lambda * (F_i - median(F))) / (1 + N_i),  p_i = w_i / sum_j w_j
//! ```
//!
//! `uniform` draws every member with equal probability, `hill_climb` always
//! returns the island best and `best_of_n` always returns the seed program.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{compare_rank, ProgramRecord};

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("cannot sample from an empty candidate list")]
    Empty,
    #[error("fitness at index {0} is not finite")]
    NonFiniteFitness(usize),
    #[error("offspring count at index {index} is negative ({value})")]
    NegativeOffspring { index: usize, value: i64 },
    #[error("length mismatch: {fitnesses} fitnesses vs {counts} offspring counts")]
    LengthMismatch { fitnesses: usize, counts: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown selection strategy '{0}' (expected one of power_law, weighted, uniform, hill_climb, best_of_n)")]
    UnknownStrategy(String),
    #[error("strategy best_of_n needs a seed program but none is available")]
    NoSeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    PowerLaw,
    Weighted,
    Uniform,
    HillClimb,
    BestOfN,
}

impl SelectionKind {
    pub const ALL: [SelectionKind; 5] = [
        SelectionKind::PowerLaw,
        SelectionKind::Weighted,
        SelectionKind::Uniform,
        SelectionKind::HillClimb,
        SelectionKind::BestOfN,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionKind::PowerLaw => "power_law",
            SelectionKind::Weighted => "weighted",
            SelectionKind::Uniform => "uniform",
            SelectionKind::HillClimb => "hill_climb",
            SelectionKind::BestOfN => "best_of_n",
        }
    }
}

impl fmt::Display for SelectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionKind {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SelectionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SamplingError::UnknownStrategy(s.to_string()))
    }
}

/// A parent-selection strategy with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub kind: SelectionKind,
    /// Power-law exponent; 0 reduces to uniform.
    pub alpha: f64,
    /// Sigmoid selection pressure for weighted sampling.
    pub lambda: f64,
}

impl SelectionStrategy {
    pub fn new(kind: SelectionKind, alpha: f64, lambda: f64) -> Result<Self, SamplingError> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(SamplingError::InvalidParameter(format!(
                "alpha must be finite and >= 0, got {alpha}"
            )));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(SamplingError::InvalidParameter(format!(
                "lambda must be finite and > 0, got {lambda}"
            )));
        }
        Ok(Self { kind, alpha, lambda })
    }
}

fn check_finite(fitnesses: &[f64]) -> Result<(), SamplingError> {
    if fitnesses.is_empty() {
        return Err(SamplingError::Empty);
    }
    match fitnesses.iter().position(|f| !f.is_finite()) {
        Some(i) => Err(SamplingError::NonFiniteFitness(i)),
        None => Ok(()),
    }
}

/// Fitness ranks with 1 for the best. Tied programs share the average of
/// the rank positions they occupy.
pub fn fractional_ranks(fitnesses: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..fitnesses.len()).collect();
    order.sort_by(|&a, &b| fitnesses[b].total_cmp(&fitnesses[a]));
    let mut ranks = vec![0.0; fitnesses.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && fitnesses[order[end]] == fitnesses[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end, averaged
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

fn normalize(weights: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

pub fn power_law_probs(fitnesses: &[f64], alpha: f64) -> Result<Vec<f64>, SamplingError> {
    check_finite(fitnesses)?;
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(SamplingError::InvalidParameter(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    let weights = fractional_ranks(fitnesses)
        .into_iter()
        .map(|r| r.powf(-alpha))
        .collect();
    Ok(normalize(weights))
}

/// Median with the even-length convention of averaging the two central values.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unnormalized performance-times-novelty weights.
pub fn weighted_weights(
    fitnesses: &[f64],
    offspring_counts: &[i64],
    lambda: f64,
) -> Result<Vec<f64>, SamplingError> {
    check_finite(fitnesses)?;
    if fitnesses.len() != offspring_counts.len() {
        return Err(SamplingError::LengthMismatch {
            fitnesses: fitnesses.len(),
            counts: offspring_counts.len(),
        });
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(SamplingError::InvalidParameter(format!(
            "lambda must be finite and > 0, got {lambda}"
        )));
    }
    if let Some(index) = offspring_counts.iter().position(|&n| n < 0) {
        return Err(SamplingError::NegativeOffspring {
            index,
            value: offspring_counts[index],
        });
    }
    let anchor = median(fitnesses);
    Ok(fitnesses
        .iter()
        .zip(offspring_counts)
        .map(|(&f, &n)| sigmoid(lambda * (f - anchor)) / (1.0 + n as f64))
        .collect())
}

pub fn weighted_probs(
    fitnesses: &[f64],
    offspring_counts: &[i64],
    lambda: f64,
) -> Result<Vec<f64>, SamplingError> {
    let weights = weighted_weights(fitnesses, offspring_counts, lambda)?;
    let total: f64 = weights.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(normalize(weights))
    } else {
        // every sigmoid underflowed; fall back to uniform
        let n = weights.len() as f64;
        Ok(vec![1.0 / n; weights.len()])
    }
}

/// Draws an index from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Distribution a strategy induces over `members`, in input order.
pub fn strategy_probs(
    members: &[&ProgramRecord],
    strategy: &SelectionStrategy,
) -> Result<Vec<f64>, SamplingError> {
    if members.is_empty() {
        return Err(SamplingError::Empty);
    }
    let fitnesses: Vec<f64> = members.iter().map(|m| m.fitness).collect();
    match strategy.kind {
        SelectionKind::PowerLaw => power_law_probs(&fitnesses, strategy.alpha),
        SelectionKind::Weighted => {
            let counts: Vec<i64> = members.iter().map(|m| m.offspring_count as i64).collect();
            weighted_probs(&fitnesses, &counts, strategy.lambda)
        }
        SelectionKind::Uniform => {
            check_finite(&fitnesses)?;
            Ok(vec![1.0 / members.len() as f64; members.len()])
        }
        SelectionKind::HillClimb | SelectionKind::BestOfN => {
            check_finite(&fitnesses)?;
            let best = best_index(members);
            let mut probs = vec![0.0; members.len()];
            probs[best] = 1.0;
            Ok(probs)
        }
    }
}

fn best_index(members: &[&ProgramRecord]) -> usize {
    (0..members.len())
        .min_by(|&a, &b| compare_rank(members[a], members[b]))
        .expect("nonempty")
}

/// Picks a parent id from an island's members.
///
/// `seed_id` is consulted only by `best_of_n`.
pub fn select_parent<R: Rng + ?Sized>(
    members: &[&ProgramRecord],
    seed_id: Option<&str>,
    strategy: &SelectionStrategy,
    rng: &mut R,
) -> Result<String, SamplingError> {
    if members.is_empty() {
        return Err(SamplingError::Empty);
    }
    match strategy.kind {
        SelectionKind::HillClimb => Ok(members[best_index(members)].id.clone()),
        SelectionKind::BestOfN => seed_id.map(str::to_string).ok_or(SamplingError::NoSeed),
        _ => {
            let probs = strategy_probs(members, strategy)?;
            Ok(members[sample_index(&probs, rng)].id.clone())
        }
    }
}
