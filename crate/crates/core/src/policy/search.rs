use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dbn::{DbnModel, HiddenTrajectory, Pose};
use crate::error::Result;
use crate::gp::{gp_add, refit_length_scale, sample_candidates, ucb_select, GpSurrogate, Point3};
use crate::reward::{RewardTrace, RETURN_SCALE};
use crate::stats::{mvn_sample, MvGaussian};

use super::{pi2_weights, select_update_target, update_emission, PsConfig, SubGoalPair};

const REFIT_GRID: [f64; 3] = [0.025, 0.05, 0.1];

/// Execution interface the search engines drive. Implementations own their
/// own noise source so that two engines can share an identical environment
/// stream.
pub trait SkillEnv {
    /// Executes the pair's segment with the pose of the pair's current update
    /// target replaced by `params`.
    fn rollout(&mut self, model: &DbnModel, pair: &SubGoalPair, params: &Pose) -> Result<RewardTrace>;

    /// Executes the mean skill. Pair fields are only meaningful when a pair
    /// is given.
    fn evaluate(&mut self, model: &DbnModel, pair: Option<&SubGoalPair>) -> Result<SkillOutcome>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillOutcome {
    pub skill_trace: RewardTrace,
    pub skill_success: bool,
    /// Decoded hidden states of the execution.
    pub observed: HiddenTrajectory,
    /// Return of the pair's segment executed at the current means.
    pub pair_return: f64,
    pub pair_success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub pair_index: usize,
    /// 1-based, counted over the whole run.
    pub episode: usize,
    pub rollout: usize,
    pub target_state: usize,
    pub params: Pose,
    pub position_3d: Point3,
    pub trace: RewardTrace,
    /// Positions the acquisition chose from; empty for the random-sampling
    /// engine.
    pub candidates: Vec<Point3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    /// Whole-skill return of the mean skill; index 0 is the starting model.
    pub per_episode_returns: Vec<f64>,
    pub success: bool,
    pub termination_episode: usize,
    pub episodes_run: usize,
    pub updated_model: DbnModel,
    /// Action states whose emission was updated, in first-update order.
    pub updated_states: Vec<usize>,
    pub rollouts: Vec<RolloutRecord>,
}

#[derive(Clone, Copy)]
enum Sampler<'a> {
    Ucb(&'a GpSurrogate),
    Emission,
}

/// GP-guided policy search: positions chosen by UCB among candidates drawn
/// from the updated state's emission, orientation drawn conditionally.
pub fn run_bo_pi2<E: SkillEnv, R: Rng + ?Sized>(
    model: &DbnModel,
    env: &mut E,
    pairs: &[SubGoalPair],
    cfg: &PsConfig,
    rng: &mut R,
) -> Result<ImprovementReport> {
    let gp = GpSurrogate::new(cfg.kernel)?;
    run(model, env, pairs, cfg, Sampler::Ucb(&gp), rng)
}

/// [`run_bo_pi2`] with every pair's surrogate starting from `initial`
/// instead of an empty dataset.
pub fn run_bo_pi2_with_gp<E: SkillEnv, R: Rng + ?Sized>(
    model: &DbnModel,
    env: &mut E,
    pairs: &[SubGoalPair],
    cfg: &PsConfig,
    initial: &GpSurrogate,
    rng: &mut R,
) -> Result<ImprovementReport> {
    run(model, env, pairs, cfg, Sampler::Ucb(initial), rng)
}

/// Baseline: rollout parameters drawn directly from the emission.
pub fn run_pi2_es_cov<E: SkillEnv, R: Rng + ?Sized>(
    model: &DbnModel,
    env: &mut E,
    pairs: &[SubGoalPair],
    cfg: &PsConfig,
    rng: &mut R,
) -> Result<ImprovementReport> {
    run(model, env, pairs, cfg, Sampler::Emission, rng)
}

fn to_pose(v: &[f64]) -> Pose {
    let mut p = [0.0; 7];
    p.copy_from_slice(v);
    p
}

fn normalize_quat(p: &mut Pose, fallback: &[f64]) {
    let n = p[3..].iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 1e-12 {
        for v in &mut p[3..] {
            *v /= n;
        }
    } else {
        p[3..].copy_from_slice(&fallback[3..]);
    }
}

fn draw_params<R: Rng + ?Sized>(
    emission: &MvGaussian,
    gp: Option<&GpSurrogate>,
    cfg: &PsConfig,
    rng: &mut R,
) -> Result<(Pose, Vec<Point3>)> {
    let mean = emission.mean().as_slice();
    let (mut p, candidates) = match gp {
        Some(gp) => {
            let candidates = sample_candidates(emission, cfg.candidates_n, rng)?;
            let choice = ucb_select(gp, &candidates, cfg.alpha)?;
            let pos = choice.chosen_point;
            let quat = mvn_sample(&emission.conditional(&[0, 1, 2], &pos)?, rng);
            let mut p = [0.0; 7];
            p[..3].copy_from_slice(&pos);
            p[3..].copy_from_slice(quat.as_slice());
            (p, candidates)
        }
        None => (to_pose(mvn_sample(emission, rng).as_slice()), Vec::new()),
    };
    normalize_quat(&mut p, mean);
    Ok((p, candidates))
}

fn run<E: SkillEnv, R: Rng + ?Sized>(
    model: &DbnModel,
    env: &mut E,
    pairs: &[SubGoalPair],
    cfg: &PsConfig,
    sampler: Sampler<'_>,
    rng: &mut R,
) -> Result<ImprovementReport> {
    cfg.validate()?;
    model.validate()?;
    let mut model = model.clone();
    let baseline = env.evaluate(&model, None)?;
    let mut report = ImprovementReport {
        per_episode_returns: vec![baseline.skill_trace.normalized_return],
        success: baseline.skill_success,
        termination_episode: 0,
        episodes_run: 0,
        updated_model: model.clone(),
        updated_states: Vec::new(),
        rollouts: Vec::new(),
    };
    if pairs.is_empty() {
        return Ok(report);
    }
    report.success = false;

    let mut episode = 0;
    'pairs: for (pair_index, pair) in pairs.iter().enumerate() {
        if episode == cfg.max_episodes {
            break;
        }
        let mut pair = pair.clone();
        let mut gp = match sampler {
            Sampler::Ucb(initial) => Some(initial.clone()),
            Sampler::Emission => None,
        };
        let mut history = vec![env.evaluate(&model, Some(&pair))?.pair_return];

        while episode < cfg.max_episodes {
            episode += 1;
            pair.update_target = select_update_target(&history, cfg.switch_patience, cfg.switch_threshold);
            let state = pair.target_state();
            if !report.updated_states.contains(&state) {
                report.updated_states.push(state);
            }
            let emission = model.emit_a[state].clone();

            let mut params = Vec::with_capacity(cfg.rollouts_per_episode);
            let mut returns = Vec::with_capacity(cfg.rollouts_per_episode);
            for k in 0..cfg.rollouts_per_episode {
                if cfg.refit_length_scale {
                    if let Some(g) = gp.as_mut().filter(|g| g.len() >= 2) {
                        *g = refit_length_scale(g, &REFIT_GRID)?;
                    }
                }
                let (theta, candidates) = draw_params(&emission, gp.as_ref(), cfg, rng)?;
                let (trace, env_error) = match env.rollout(&model, &pair, &theta) {
                    Ok(t) => (t, None),
                    Err(e) => {
                        log::warn!("rollout {k} of episode {episode} failed: {e}");
                        (RewardTrace::failed(), Some(e.to_string()))
                    }
                };
                let position_3d = [theta[0], theta[1], theta[2]];
                if let Some(g) = gp.as_mut() {
                    *g = gp_add(g, position_3d, trace.normalized_return / RETURN_SCALE)?;
                }
                returns.push(trace.normalized_return);
                params.push(theta);
                report.rollouts.push(RolloutRecord {
                    pair_index,
                    episode,
                    rollout: k,
                    target_state: state,
                    params: theta,
                    position_3d,
                    trace,
                    candidates,
                    env_error,
                });
            }

            let weights = pi2_weights(&returns, cfg.temperature_h)?;
            let mut updated = update_emission(&emission, &params, &weights, cfg.cov_floor)?;
            let mut mean = to_pose(updated.mean().as_slice());
            normalize_quat(&mut mean, emission.mean().as_slice());
            updated = updated.with_mean(DVector::from_column_slice(&mean))?;
            model.emit_a[state] = updated;

            let outcome = env.evaluate(&model, Some(&pair))?;
            if let Some(g) = gp.as_mut() {
                *g = gp_add(g, [mean[0], mean[1], mean[2]], outcome.pair_return / RETURN_SCALE)?;
            }
            report.per_episode_returns.push(outcome.skill_trace.normalized_return);
            history.push(outcome.pair_return);
            log::debug!(
                "pair {pair_index} episode {episode}: state {state}, pair return {:.2}, skill return {:.2}",
                outcome.pair_return,
                outcome.skill_trace.normalized_return
            );
            if outcome.skill_success {
                report.success = true;
                break 'pairs;
            }
            if outcome.pair_success {
                continue 'pairs;
            }
        }
    }

    report.episodes_run = episode;
    report.termination_episode = if report.success { episode } else { cfg.max_episodes };
    report.updated_model = model;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbn::GOAL_DIM;
    use crate::policy::UpdateTarget;
    use crate::reward::episode_return;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Return falls off quadratically with the distance of the updated
    /// state's position from a fixed optimum.
    struct Bowl {
        optimum: Point3,
        radius: f64,
    }

    impl Bowl {
        fn score(&self, p: &Pose) -> f64 {
            let d2: f64 = (0..3).map(|i| (p[i] - self.optimum[i]).powi(2)).sum();
            (1.0 - d2 / (4.0 * self.radius * self.radius)).max(0.0)
        }
    }

    impl SkillEnv for Bowl {
        fn rollout(&mut self, _m: &DbnModel, _p: &SubGoalPair, params: &Pose) -> Result<RewardTrace> {
            episode_return(vec![self.score(params)], 1.0)
        }

        fn evaluate(&mut self, model: &DbnModel, pair: Option<&SubGoalPair>) -> Result<SkillOutcome> {
            let state = pair.map_or(0, |p| p.target_state());
            let s = self.score(&model.action_mean(state));
            let ok = s >= 0.75;
            Ok(SkillOutcome {
                skill_trace: episode_return(vec![s], 1.0)?,
                skill_success: ok,
                observed: HiddenTrajectory::new(vec![0], vec![0])?,
                pair_return: s * RETURN_SCALE,
                pair_success: ok,
            })
        }
    }

    fn model(var: f64) -> DbnModel {
        let emit_a = vec![MvGaussian::isotropic(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], var).unwrap()];
        let emit_g = vec![MvGaussian::isotropic(&[0.0; GOAL_DIM], 1.0).unwrap()];
        DbnModel::uniform(emit_a, emit_g).unwrap()
    }

    fn single_pair() -> Vec<SubGoalPair> {
        vec![SubGoalPair {
            start_state: 0,
            end_state: 0,
            start_pos: 0,
            end_pos: 0,
            expected_goal: 0,
            update_target: UpdateTarget::End,
        }]
    }

    #[test]
    fn satisfied_pair_terminates_at_first_episode() {
        let mut env = Bowl {
            optimum: [0.0; 3],
            radius: 0.05,
        };
        let r = run_bo_pi2(
            &model(1e-4),
            &mut env,
            &single_pair(),
            &PsConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!(r.success);
        assert_eq!(r.termination_episode, 1);
        assert_eq!(r.per_episode_returns.len(), 2);
    }

    #[test]
    fn no_pairs_means_no_episodes() {
        let mut env = Bowl {
            optimum: [0.0; 3],
            radius: 0.05,
        };
        let r = run_pi2_es_cov(
            &model(1e-4),
            &mut env,
            &[],
            &PsConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!(r.success);
        assert_eq!(r.termination_episode, 0);
        assert!(r.rollouts.is_empty());
    }

    #[test]
    fn zero_covariance_baseline_cannot_move() {
        let mut env = Bowl {
            optimum: [0.5, 0.0, 0.0],
            radius: 0.05,
        };
        let mut m = model(1e-4);
        m.emit_a[0] = MvGaussian::from_slices(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], &[0.0; 49]).unwrap();
        let cfg = PsConfig {
            max_episodes: 3,
            ..PsConfig::default()
        };
        let r = run_pi2_es_cov(&m, &mut env, &single_pair(), &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let first = r.rollouts[0].params;
        for rec in r.rollouts.iter().filter(|r| r.episode == 1) {
            assert_eq!(rec.params, first);
        }
        assert!(!r.success);
        assert_eq!(r.termination_episode, 3);
    }
}
