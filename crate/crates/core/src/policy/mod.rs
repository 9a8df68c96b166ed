//! Sub-goal assessment, pair formation and the episodic policy-search
//! engines.

mod search;

pub use search::{
    run_bo_pi2, run_bo_pi2_with_gp, run_pi2_es_cov, ImprovementReport, RolloutRecord, SkillEnv, SkillOutcome,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dbn::{HiddenTrajectory, Pose};
use crate::error::{Error, Result};
use crate::gp::SeKernel;
use crate::stats::{symmetrize, MvGaussian};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateTarget {
    Start,
    End,
}

impl UpdateTarget {
    pub fn toggled(self) -> Self {
        match self {
            UpdateTarget::Start => UpdateTarget::End,
            UpdateTarget::End => UpdateTarget::Start,
        }
    }
}

/// Two consecutive action states of the expected trajectory whose sub-goal
/// failed. Positions index the expected trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubGoalPair {
    pub start_state: usize,
    pub end_state: usize,
    pub start_pos: usize,
    pub end_pos: usize,
    /// Expected goal state at `end_pos`.
    pub expected_goal: usize,
    pub update_target: UpdateTarget,
}

impl SubGoalPair {
    pub fn is_degenerate(&self) -> bool {
        self.start_pos == self.end_pos
    }

    pub fn target_state(&self) -> usize {
        match self.update_target {
            UpdateTarget::Start => self.start_state,
            UpdateTarget::End => self.end_state,
        }
    }

    pub fn target_pos(&self) -> usize {
        match self.update_target {
            UpdateTarget::Start => self.start_pos,
            UpdateTarget::End => self.end_pos,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsConfig {
    pub max_episodes: usize,
    pub rollouts_per_episode: usize,
    pub candidates_n: usize,
    /// UCB exploration weight.
    pub alpha: f64,
    /// PI² temperature.
    pub temperature_h: f64,
    /// Episodes before the update target may switch.
    pub switch_patience: usize,
    /// Minimum per-episode gain, on the 0-250 return scale, that keeps the
    /// current update target.
    pub switch_threshold: f64,
    pub cov_floor: f64,
    pub kernel: SeKernel,
    /// Refit the kernel length scale over {0.025, 0.05, 0.1} m before each
    /// acquisition.
    pub refit_length_scale: bool,
}

impl Default for PsConfig {
    fn default() -> Self {
        Self {
            max_episodes: 10,
            rollouts_per_episode: 4,
            candidates_n: 50,
            alpha: 1.0,
            temperature_h: 10.0,
            switch_patience: 3,
            switch_threshold: 5.0,
            cov_floor: 1e-6,
            kernel: SeKernel::default(),
            refit_length_scale: false,
        }
    }
}

impl PsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be positive")));
        if self.max_episodes == 0 {
            return bad("max_episodes");
        }
        if self.rollouts_per_episode == 0 {
            return bad("rollouts_per_episode");
        }
        if self.candidates_n == 0 {
            return bad("candidates_n");
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        if !(self.temperature_h > 0.0) {
            return bad("temperature_h");
        }
        if self.switch_patience == 0 {
            return bad("switch_patience");
        }
        if !(self.switch_threshold > 0.0) {
            return bad("switch_threshold");
        }
        if !(self.cov_floor > 0.0) {
            return bad("cov_floor");
        }
        if !(self.kernel.signal_var > 0.0 && self.kernel.length_scale > 0.0 && self.kernel.noise_var > 0.0) {
            return bad("kernel hyperparameters");
        }
        Ok(())
    }
}

/// Locates failed sub-goals by comparing expected and observed goal states.
///
/// For every step `i` where the goal states differ, the observed action
/// state at `i - 1` (when `i > 0`) and then the one at `i` are appended
/// unless already present.
pub fn assess_subgoals(
    expected_goal_hs: &[usize],
    observed_goal_hs: &[usize],
    observed_action_hs: &[usize],
) -> Result<Vec<usize>> {
    if expected_goal_hs.len() != observed_goal_hs.len() || observed_goal_hs.len() != observed_action_hs.len() {
        return Err(Error::LengthMismatch(format!(
            "expected goals {}, observed goals {}, observed actions {}",
            expected_goal_hs.len(),
            observed_goal_hs.len(),
            observed_action_hs.len()
        )));
    }
    let mut failed = Vec::new();
    let mut push = |a: usize| {
        if !failed.contains(&a) {
            failed.push(a);
        }
    };
    for i in 0..expected_goal_hs.len() {
        if expected_goal_hs[i] == observed_goal_hs[i] {
            continue;
        }
        if i > 0 {
            push(observed_action_hs[i - 1]);
        }
        push(observed_action_hs[i]);
    }
    Ok(failed)
}

/// Groups failed states that sit at consecutive positions of the expected
/// trajectory into sliding `(start, end)` pairs. An isolated state becomes
/// a degenerate pair with itself.
pub fn make_pairs(failed_actions: &[usize], expected: &HiddenTrajectory) -> Result<Vec<SubGoalPair>> {
    let mut positions = failed_actions
        .iter()
        .map(|&a| {
            expected.position_of(a).ok_or_else(|| {
                Error::DecodingInconsistency(format!("failed action state {a} is not on the expected trajectory"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    positions.sort_unstable();
    positions.dedup();

    let pair = |s: usize, e: usize| SubGoalPair {
        start_state: expected.action_seq[s],
        end_state: expected.action_seq[e],
        start_pos: s,
        end_pos: e,
        expected_goal: expected.goal_seq[e],
        update_target: UpdateTarget::End,
    };
    let mut pairs = Vec::new();
    let mut run_start = 0;
    for k in 1..=positions.len() {
        if k < positions.len() && positions[k] == positions[k - 1] + 1 {
            continue;
        }
        let run = &positions[run_start..k];
        if run.len() == 1 {
            pairs.push(pair(run[0], run[0]));
        } else {
            pairs.extend(run.windows(2).map(|w| pair(w[0], w[1])));
        }
        run_start = k;
    }
    Ok(pairs)
}

/// Exponentiated min-max normalized returns:
/// `w_k ∝ exp(h (R_k - R_min) / (R_max - R_min))`, uniform when all
/// returns are equal.
pub fn pi2_weights(returns: &[f64], h: f64) -> Result<Vec<f64>> {
    if returns.is_empty() {
        return Err(Error::InvalidArgument("no returns".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let lo = returns.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = returns.len();
    if !(hi > lo) {
        return Ok(vec![1.0 / n as f64; n]);
    }
    // Shifted by the max exponent to stay finite for large h.
    let w: Vec<f64> = returns
        .iter()
        .map(|r| (h * ((r - lo) / (hi - lo) - 1.0)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

/// Reward-weighted mean and covariance anchored at the old mean.
pub fn update_emission(
    old: &MvGaussian,
    rollout_params: &[Pose],
    weights: &[f64],
    cov_floor: f64,
) -> Result<MvGaussian> {
    if rollout_params.len() != weights.len() {
        return Err(Error::LengthMismatch(format!(
            "{} rollouts vs {} weights",
            rollout_params.len(),
            weights.len()
        )));
    }
    if rollout_params.is_empty() {
        return Err(Error::InvalidArgument("no rollouts".into()));
    }
    let d = old.dim();
    if d != rollout_params[0].len() {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: rollout_params[0].len(),
        });
    }
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    for (theta, &w) in rollout_params.iter().zip(weights) {
        let t = DVector::from_column_slice(theta);
        mean += &t * w;
        let diff = t - old.mean();
        cov += &diff * diff.transpose() * w;
    }
    cov += DMatrix::identity(d, d) * cov_floor;
    MvGaussian::new(mean, symmetrize(&cov))
}

/// Which state of the pair the next episode should update, given the pair's
/// return history (`history[0]` is the return before the first episode).
///
/// Starts on the end state. After at least `patience` episodes on the
/// current target, an episode whose gain is below `threshold` toggles the
/// target and restarts the count.
pub fn select_update_target(history: &[f64], patience: usize, threshold: f64) -> UpdateTarget {
    let mut target = UpdateTarget::End;
    let mut since = 0;
    for w in history.windows(2) {
        since += 1;
        if since >= patience && w[1] - w[0] < threshold {
            target = target.toggled();
            since = 0;
        }
    }
    target
}
