use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dbn::{viterbi, DbnModel, Features, HiddenTrajectory, Pose};
use crate::error::{Error, Result};
use crate::policy::{SkillEnv, SkillOutcome, SubGoalPair};
use crate::reward::{episode_return, execution_success, step_reward, BeliefFilter, RewardTrace, R_MAX};

use super::exec::{execute_waypoints, Execution};
use super::World;

/// Skill execution in the simulator along an expected hidden trajectory.
///
/// Rewards are belief mass on the active sub-goal. For a whole-skill run the
/// active sub-goal of a frame is the expected goal of the waypoint segment
/// containing it. A pair rollout executes the skill up to the pair's end
/// state and holds there for `hold_s`. It is scored on the frames observing
/// the earlier waypoints, each against its expected goal, and on every frame
/// from the end state's on against the pair's expected goal. The scored frame
/// count does not depend on segment lengths.
#[derive(Clone, Debug)]
pub struct SimEnv<'w> {
    world: &'w World,
    expected: HiddenTrajectory,
    steps_per_segment: usize,
    hold_s: f64,
    rng: ChaCha8Rng,
}

impl<'w> SimEnv<'w> {
    pub fn new(
        world: &'w World,
        expected: HiddenTrajectory,
        steps_per_segment: usize,
        hold_s: f64,
        seed: u64,
    ) -> Result<Self> {
        if expected.is_empty() {
            return Err(Error::InvalidArgument("empty expected trajectory".into()));
        }
        if steps_per_segment == 0 || !(hold_s >= 0.0) {
            return Err(Error::InvalidArgument("bad execution settings".into()));
        }
        Ok(Self {
            world,
            expected,
            steps_per_segment,
            hold_s,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn expected(&self) -> &HiddenTrajectory {
        &self.expected
    }

    fn waypoints(&self, model: &DbnModel, upto: usize) -> Result<Vec<Pose>> {
        self.expected.action_seq[..=upto]
            .iter()
            .map(|&a| {
                if a >= model.n_action() {
                    Err(Error::DecodingInconsistency(format!("action state {a} not in model")))
                } else {
                    Ok(model.action_mean(a))
                }
            })
            .collect()
    }

    /// Executes the mean skill followed by the hold.
    pub fn execute_skill(&mut self, model: &DbnModel) -> Result<Execution> {
        let wps = self.waypoints(model, self.expected.len() - 1)?;
        execute_waypoints(self.world, &wps, self.steps_per_segment, self.hold_s, &mut self.rng)
    }

    /// Viterbi decoding of the frames that observe each waypoint.
    pub fn decode(&self, model: &DbnModel, ex: &Execution) -> Result<HiddenTrajectory> {
        let poses: Vec<Pose> = ex.keyframe_frames.iter().map(|&f| ex.frames[f].ee_pose).collect();
        let feats: Vec<Features> = ex.keyframe_frames.iter().map(|&f| ex.frames[f].features).collect();
        viterbi(model, Some(&poses), &feats)
    }

    /// Belief mass on `active(frame)` for every frame where it is defined,
    /// filtered from the first frame.
    fn belief_rewards(
        &self,
        model: &DbnModel,
        ex: &Execution,
        active: impl Fn(usize) -> Option<usize>,
    ) -> Result<Vec<f64>> {
        let filter = BeliefFilter::new(model)?;
        let mut b = filter.init();
        let mut rewards = Vec::with_capacity(ex.frames.len());
        for (f, frame) in ex.frames.iter().enumerate() {
            let a = self.expected.action_seq[ex.segment_of(f)];
            b = filter.update(&b, &frame.features, a)?.belief;
            if let Some(g) = active(f) {
                rewards.push(step_reward(&b, g, R_MAX));
            }
        }
        Ok(rewards)
    }
}

impl SkillEnv for SimEnv<'_> {
    fn rollout(&mut self, model: &DbnModel, pair: &SubGoalPair, params: &Pose) -> Result<RewardTrace> {
        let mut wps = self.waypoints(model, pair.end_pos)?;
        wps[pair.target_pos()] = *params;
        let ex = execute_waypoints(self.world, &wps, self.steps_per_segment, self.hold_s, &mut self.rng)?;
        let from = ex.keyframe_frames[pair.end_pos];
        let goals = &self.expected.goal_seq;
        let checkpoints = &ex.keyframe_frames[..pair.end_pos];
        let rewards = self.belief_rewards(model, &ex, |f| {
            if f >= from {
                Some(pair.expected_goal)
            } else {
                checkpoints.iter().position(|&k| k == f).map(|k| goals[k])
            }
        })?;
        episode_return(rewards, R_MAX)
    }

    fn evaluate(&mut self, model: &DbnModel, pair: Option<&SubGoalPair>) -> Result<SkillOutcome> {
        let ex = self.execute_skill(model)?;
        let observed = self.decode(model, &ex)?;
        let expected = &self.expected.goal_seq;
        let rewards = self.belief_rewards(model, &ex, |f| Some(expected[ex.segment_of(f)]))?;
        let skill_trace = episode_return(rewards, R_MAX)?;
        let skill_success = execution_success(&observed.goal_seq, expected);
        let (pair_return, pair_success) = match pair {
            Some(p) => {
                let upto = p.end_pos + 1;
                let ok = observed.goal_seq.len() >= upto && observed.goal_seq[..upto] == expected[..upto];
                let mean = model.action_mean(p.target_state());
                (self.rollout(model, p, &mean)?.normalized_return, ok)
            }
            None => (0.0, false),
        };
        Ok(SkillOutcome {
            skill_trace,
            skill_success,
            observed,
            pair_return,
            pair_success,
        })
    }
}
