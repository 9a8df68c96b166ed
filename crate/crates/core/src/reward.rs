//! Belief-based dense rewards from the goal chain, and return normalization.
//!
//! The goal chain is filtered online; the reward at each step is the belief
//! mass on the sub-goal the trajectory is supposed to be in at that time.

use serde::{Deserialize, Serialize};

use crate::dbn::{DbnModel, Features};
use crate::error::{Error, Result};
use crate::stats::{log_sum_exp, LogDensity};

/// Upper end of the normalized return scale.
pub const RETURN_SCALE: f64 = 250.0;

/// Per-step reward ceiling used throughout the crate.
pub const R_MAX: f64 = 1.0;

/// Below this log-density every goal likelihood underflows to zero in
/// linear space.
const LN_UNDERFLOW: f64 = -708.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalBelief {
    probs: Vec<f64>,
}

impl GoalBelief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "belief must be non-negative and non-empty".into(),
            ));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("belief sums to {s}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mass(&self, goal: usize) -> f64 {
        self.probs.get(goal).copied().unwrap_or(0.0)
    }
}

/// Result of one filtering step.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefUpdate {
    pub belief: GoalBelief,
    /// The observation was uninformative (all likelihoods underflowed) and
    /// the belief is the transition-only prediction.
    pub fallback: bool,
}

pub fn belief_init(model: &DbnModel) -> GoalBelief {
    GoalBelief {
        probs: model.prior_g.clone(),
    }
}

/// Goal-chain filter with cached emission densities.
#[derive(Clone, Debug)]
pub struct BeliefFilter<'m> {
    model: &'m DbnModel,
    densities: Vec<LogDensity>,
}

impl<'m> BeliefFilter<'m> {
    pub fn new(model: &'m DbnModel) -> Result<Self> {
        Ok(Self {
            model,
            densities: model.emit_g.iter().map(|g| g.log_density()).collect::<Result<_>>()?,
        })
    }

    pub fn init(&self) -> GoalBelief {
        belief_init(self.model)
    }

    /// `b'(g') ∝ N(obs; emit_g[g']) * sum_g trans_g[a, g, g'] * b(g)`.
    pub fn update(&self, b: &GoalBelief, obs: &Features, action_state: usize) -> Result<BeliefUpdate> {
        let lg = self.model.n_goal();
        if b.probs.len() != lg {
            return Err(Error::DimensionMismatch {
                expected: lg,
                got: b.probs.len(),
            });
        }
        if action_state >= self.model.n_action() {
            return Err(Error::InvalidArgument(format!(
                "action state {action_state} out of range"
            )));
        }
        let mut pred = vec![0.0; lg];
        for (g, &bg) in b.probs.iter().enumerate() {
            if bg == 0.0 {
                continue;
            }
            for (p, t) in pred.iter_mut().zip(self.model.trans_g.row(action_state, g)) {
                *p += t * bg;
            }
        }
        let ps: f64 = pred.iter().sum();
        for p in pred.iter_mut() {
            *p /= ps;
        }

        let loglik: Vec<f64> = self.densities.iter().map(|d| d.logpdf(obs)).collect();
        let max_ll = loglik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let joint: Vec<f64> = loglik.iter().zip(&pred).map(|(l, p)| l + p.ln()).collect();
        let norm = log_sum_exp(&joint);
        if max_ll < LN_UNDERFLOW || !norm.is_finite() {
            return Ok(BeliefUpdate {
                belief: GoalBelief { probs: pred },
                fallback: true,
            });
        }
        let mut probs: Vec<f64> = joint.iter().map(|j| (j - norm).exp()).collect();
        let s: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= s;
        }
        Ok(BeliefUpdate {
            belief: GoalBelief { probs },
            fallback: false,
        })
    }
}

/// One filtering step; see [`BeliefFilter::update`].
pub fn belief_update(
    model: &DbnModel,
    b: &GoalBelief,
    obs_g: &Features,
    current_action_state: usize,
) -> Result<BeliefUpdate> {
    BeliefFilter::new(model)?.update(b, obs_g, current_action_state)
}

/// `r_max * b(active_subgoal)`.
pub fn step_reward(b: &GoalBelief, active_subgoal: usize, r_max: f64) -> f64 {
    r_max * b.mass(active_subgoal)
}

/// Per-step rewards and the return normalized to `[0, 250]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub step_rewards: Vec<f64>,
    pub normalized_return: f64,
}

impl RewardTrace {
    /// A trace for a failed execution: a single zero-reward step.
    pub fn failed() -> Self {
        Self {
            step_rewards: vec![0.0],
            normalized_return: 0.0,
        }
    }
}

/// `250 * sum(r) / (r_max * steps)`.
pub fn episode_return(step_rewards: Vec<f64>, r_max: f64) -> Result<RewardTrace> {
    if step_rewards.is_empty() {
        return Err(Error::InvalidArgument("episode has no steps".into()));
    }
    if !(r_max > 0.0) {
        return Err(Error::InvalidArgument("r_max must be positive".into()));
    }
    if step_rewards.iter().any(|r| !(*r >= 0.0) || *r > r_max * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument("step reward outside [0, r_max]".into()));
    }
    let total: f64 = step_rewards.iter().sum();
    let normalized_return = (RETURN_SCALE * total / (r_max * step_rewards.len() as f64)).clamp(0.0, RETURN_SCALE);
    Ok(RewardTrace {
        step_rewards,
        normalized_return,
    })
}

/// Whether the decoded goal sequence matches the expected one. Sequences
/// of different length are compared over their common prefix.
pub fn execution_success(observed_goal_seq: &[usize], expected_goal_seq: &[usize]) -> bool {
    if observed_goal_seq.is_empty() || expected_goal_seq.is_empty() {
        return false;
    }
    observed_goal_seq.iter().zip(expected_goal_seq).all(|(a, b)| a == b)
}
