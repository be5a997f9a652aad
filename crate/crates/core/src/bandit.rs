//! UCB1 model selection over an improvement-based reward.
//!
//! Raw fitness is turned into `exp(max(r - max(parent, initial), 0)) - 1`,
//! standardized with streaming statistics shared by every arm, and averaged
//! per arm. Arms nobody has tried yet are visited first in index order.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NORMALIZATION_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BanditError {
    #[error("unknown arm index {index} (bandit has {arms} arms)")]
    UnknownArm { index: usize, arms: usize },
    #[error("reward {0} is not finite")]
    NonFinite(f64),
}

/// Improvement of `fitness` over the better of the parent and the seed,
/// mapped through `exp(x) - 1`; zero when there is no improvement.
pub fn transform_reward(fitness: f64, parent_fitness: f64, initial_fitness: f64) -> f64 {
    let baseline = parent_fitness.max(initial_fitness);
    (fitness - baseline).max(0.0).exp_m1()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub name: String,
    pub visits: u64,
    pub mean_reward: f64,
}

/// Streaming mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Sample standard deviation; `None` until two values were seen.
    pub fn std(&self) -> Option<f64> {
        (self.count >= 2).then(|| (self.m2 / (self.count - 1) as f64).max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub arms: Vec<ArmStats>,
    pub total_updates: u64,
    pub reward_stats: RunningStats,
    pub exploration: f64,
}

impl BanditState {
    pub fn new(arm_names: Vec<String>, exploration: f64) -> Self {
        Self {
            arms: arm_names
                .into_iter()
                .map(|name| ArmStats {
                    name,
                    visits: 0,
                    mean_reward: 0.0,
                })
                .collect(),
            total_updates: 0,
            reward_stats: RunningStats::default(),
            exploration,
        }
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    /// Folds one transformed reward into `arm` and returns its normalized value.
    pub fn update(&mut self, arm: usize, transformed_reward: f64) -> Result<f64, BanditError> {
        if arm >= self.arms.len() {
            return Err(BanditError::UnknownArm {
                index: arm,
                arms: self.arms.len(),
            });
        }
        if !transformed_reward.is_finite() {
            return Err(BanditError::NonFinite(transformed_reward));
        }
        self.reward_stats.push(transformed_reward);
        let normalized = match self.reward_stats.std() {
            None => 0.0,
            Some(std) => (transformed_reward - self.reward_stats.mean) / std.max(NORMALIZATION_EPS),
        };
        let stats = &mut self.arms[arm];
        stats.visits += 1;
        stats.mean_reward += (normalized - stats.mean_reward) / stats.visits as f64;
        self.total_updates += 1;
        Ok(normalized)
    }

    pub fn ucb_scores(&self) -> Vec<f64> {
        let log_total = (self.total_updates.max(1) as f64).ln();
        self.arms
            .iter()
            .map(|a| {
                if a.visits == 0 {
                    f64::INFINITY
                } else {
                    a.mean_reward + self.exploration * (log_total / a.visits as f64).sqrt()
                }
            })
            .collect()
    }

    /// Arms the policy would pick from right now: the first unvisited arm,
    /// or every arm sharing the maximal UCB score.
    pub fn candidates(&self) -> Vec<usize> {
        if let Some(first) = self.arms.iter().position(|a| a.visits == 0) {
            return vec![first];
        }
        let scores = self.ucb_scores();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0..scores.len()).filter(|&i| scores[i] == top).collect()
    }

    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let candidates = self.candidates();
        if candidates.len() == 1 {
            candidates[0]
        } else {
            candidates[rng.random_range(0..candidates.len())]
        }
    }

    /// Distribution of the next [`choose`](Self::choose) call.
    pub fn probabilities(&self) -> Vec<f64> {
        let candidates = self.candidates();
        let mut probs = vec![0.0; self.arms.len()];
        for &i in &candidates {
            probs[i] = 1.0 / candidates.len() as f64;
        }
        probs
    }
}
