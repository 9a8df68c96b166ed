use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dbn::{
    em_fit, init_model_with_states, sample_hidden_trajectory, DbnModel, Demonstration, HiddenTrajectory, SampleMode,
};
use crate::error::{Error, Result};
use crate::policy::{
    assess_subgoals, make_pairs, run_bo_pi2, run_pi2_es_cov, ImprovementReport, RolloutRecord, SkillEnv, SkillOutcome,
    SubGoalPair,
};
use crate::sim::{generate_demos, perturb_model, SimEnv, World};

use super::config::ExperimentConfig;

/// Independent random streams of one repetition.
mod stream {
    pub const DEMOS: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const PERTURB: u64 = 2;
    pub const ASSESS_ENV: u64 = 3;
    pub const SEARCH: u64 = 4;
    pub const SEARCH_ENV: u64 = 5;
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn env_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algo {
    #[serde(rename = "bo-pi2")]
    BoPi2,
    #[serde(rename = "pi2-es-cov")]
    Pi2EsCov,
}

impl Algo {
    pub const ALL: [Algo; 2] = [Algo::BoPi2, Algo::Pi2EsCov];

    pub fn name(self) -> &'static str {
        match self {
            Algo::BoPi2 => "bo-pi2",
            Algo::Pi2EsCov => "pi2-es-cov",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// Trained skill model with its expected hidden trajectory.
#[derive(Clone, Debug)]
pub struct TrainedSkill {
    /// Smoothed model used by every later stage.
    pub model: DbnModel,
    pub em_history: Vec<f64>,
    pub expected: HiddenTrajectory,
}

/// Everything up to and including sub-goal assessment for one seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub seed: u64,
    pub demos: Vec<Demonstration>,
    pub skill: TrainedSkill,
    pub perturbed: DbnModel,
    pub perturbed_states: Vec<usize>,
    pub assessment: SkillOutcome,
    pub failed_actions: Vec<usize>,
    pub pairs: Vec<SubGoalPair>,
}

pub fn demos_for(cfg: &ExperimentConfig, world: &World, seed: u64) -> Result<Vec<Demonstration>> {
    generate_demos(
        world,
        cfg.demos.count,
        cfg.demos.noise(),
        &mut rng_for(seed, stream::DEMOS),
    )
}

/// Fits the DBN to `demos` and derives the most likely hidden trajectory.
pub fn train_skill(cfg: &ExperimentConfig, world: &World, demos: &[Demonstration], seed: u64) -> Result<TrainedSkill> {
    let n_action = world.n_keyframes();
    let n_goal = cfg.n_goal.unwrap_or_else(|| world.n_phases());
    let mut rng = rng_for(seed, stream::TRAIN);
    let init = init_model_with_states(demos, n_action, n_goal, cfg.em.gmm_restarts, &mut rng)?;
    let (fit, em_history) = em_fit(&init, demos, cfg.em.max_iters, cfg.em.tol)?;
    let model = fit.smoothed(cfg.prob_floor);
    let expected = sample_hidden_trajectory(&model, SampleMode::MostLikely, 2 * n_action, &mut rng)?;
    if expected.truncated || expected.len() != n_action {
        return Err(Error::DecodingInconsistency(format!(
            "expected trajectory has {} steps{}, demonstrations have {n_action}",
            expected.len(),
            if expected.truncated { " (truncated)" } else { "" }
        )));
    }
    let mut seen = expected.action_seq.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != expected.len() {
        return Err(Error::DecodingInconsistency(format!(
            "expected trajectory revisits action states: {:?}",
            expected.action_seq
        )));
    }
    Ok(TrainedSkill {
        model,
        em_history,
        expected,
    })
}

/// Applies the configured perturbations, redrawing directions until the
/// perturbed skill fails (or the attempts run out), then assesses the
/// failed execution.
pub fn perturb_and_assess(
    cfg: &ExperimentConfig,
    world: &World,
    skill: &TrainedSkill,
    seed: u64,
) -> Result<(DbnModel, Vec<usize>, SkillOutcome)> {
    let active: Vec<_> = cfg.perturbations.iter().filter(|p| p.displacement_m > 0.0).collect();
    let mut states = Vec::with_capacity(active.len());
    for p in &active {
        let state = *skill.expected.action_seq.get(p.position).ok_or_else(|| {
            Error::Config(format!(
                "perturbation position {} beyond trajectory of length {}",
                p.position,
                skill.expected.len()
            ))
        })?;
        states.push(state);
    }
    let mut env = SimEnv::new(
        world,
        skill.expected.clone(),
        cfg.steps_per_segment,
        cfg.rollout_hold_s,
        env_seed(seed, stream::ASSESS_ENV),
    )?;
    if active.is_empty() {
        let outcome = env.evaluate(&skill.model, None)?;
        return Ok((skill.model.clone(), states, outcome));
    }
    let mut rng = rng_for(seed, stream::PERTURB);
    let mut last = None;
    for attempt in 0..cfg.perturb_attempts {
        let mut m = skill.model.clone();
        for (p, &state) in active.iter().zip(&states) {
            m = perturb_model(&m, state, p.displacement_m, &mut rng)?;
        }
        let outcome = env.evaluate(&m, None)?;
        let failed = !outcome.skill_success;
        last = Some((m, outcome));
        if failed {
            break;
        }
        log::debug!("seed {seed}: perturbation attempt {attempt} left the skill intact");
    }
    let (m, outcome) = last.expect("at least one attempt");
    Ok((m, states, outcome))
}

pub fn prepare(cfg: &ExperimentConfig, world: &World, seed: u64) -> Result<Prepared> {
    let demos = demos_for(cfg, world, seed)?;
    let skill = train_skill(cfg, world, &demos, seed)?;
    let (perturbed, perturbed_states, assessment) = perturb_and_assess(cfg, world, &skill, seed)?;
    let failed_actions = assess_subgoals(
        &skill.expected.goal_seq,
        &assessment.observed.goal_seq,
        &assessment.observed.action_seq,
    )?;
    let pairs = make_pairs(&failed_actions, &skill.expected)?;
    Ok(Prepared {
        seed,
        demos,
        skill,
        perturbed,
        perturbed_states,
        assessment,
        failed_actions,
        pairs,
    })
}

/// Runs one search engine on a prepared repetition. Both engines see the
/// same model, pairs, search seed and environment noise stream.
pub fn improve(cfg: &ExperimentConfig, world: &World, prep: &Prepared, algo: Algo) -> Result<ImprovementReport> {
    let mut env = SimEnv::new(
        world,
        prep.skill.expected.clone(),
        cfg.steps_per_segment,
        cfg.rollout_hold_s,
        env_seed(prep.seed, stream::SEARCH_ENV),
    )?;
    let mut rng = rng_for(prep.seed, stream::SEARCH);
    match algo {
        Algo::BoPi2 => run_bo_pi2(&prep.perturbed, &mut env, &prep.pairs, &cfg.ps, &mut rng),
        Algo::Pi2EsCov => run_pi2_es_cov(&prep.perturbed, &mut env, &prep.pairs, &cfg.ps, &mut rng),
    }
}

/// Mean Euclidean (cm) and quaternion geodesic (deg) distance between the
/// emission means of `states` in two models.
pub fn displacement(before: &DbnModel, after: &DbnModel, states: &[usize]) -> (f64, f64) {
    if states.is_empty() {
        return (0.0, 0.0);
    }
    let (mut cm, mut deg) = (0.0, 0.0);
    for &s in states {
        let (a, b) = (before.action_mean(s), after.action_mean(s));
        cm += 100.0 * (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
        let na = a[3..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b[3..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot = (3..7).map(|i| a[i] * b[i]).sum::<f64>() / (na * nb);
        deg += (2.0 * dot.abs().min(1.0).acos()).to_degrees();
    }
    let n = states.len() as f64;
    (cm / n, deg / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algo: Algo,
    pub success: bool,
    pub termination_episode: usize,
    pub episodes_run: usize,
    /// Index 0 is the perturbed starting model.
    pub per_episode_returns: Vec<f64>,
    pub final_return: f64,
    pub updated_states: Vec<usize>,
    pub euclid_disp_cm: f64,
    pub angular_disp_deg: f64,
    pub rollouts: Vec<RolloutRecord>,
}

impl RunSummary {
    pub fn new(algo: Algo, start: &DbnModel, report: ImprovementReport) -> Self {
        let (euclid_disp_cm, angular_disp_deg) = displacement(start, &report.updated_model, &report.updated_states);
        Self {
            algo,
            success: report.success,
            termination_episode: report.termination_episode,
            episodes_run: report.episodes_run,
            final_return: *report.per_episode_returns.last().expect("baseline present"),
            per_episode_returns: report.per_episode_returns,
            updated_states: report.updated_states,
            euclid_disp_cm,
            angular_disp_deg,
            rollouts: report.rollouts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletedRepetition {
    pub perturbed_states: Vec<usize>,
    pub expected: HiddenTrajectory,
    pub observed: HiddenTrajectory,
    pub failed_actions: Vec<usize>,
    pub pairs: Vec<SubGoalPair>,
    pub runs: Vec<RunSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RepetitionOutcome {
    Completed(CompletedRepetition),
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub repetition: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub outcome: RepetitionOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub skill: String,
    pub scenario: String,
    pub algo: String,
    /// Percent of completed repetitions whose final mean skill succeeded.
    pub success_rate: f64,
    /// Mean final whole-skill return, 0-250.
    pub avg_return: f64,
    pub avg_termination_episode: f64,
    pub euclid_disp_cm: f64,
    pub angular_disp_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<MetricsRow>,
    pub repetitions: Vec<RepetitionResult>,
}

pub fn run_repetition(cfg: &ExperimentConfig, world: &World, repetition: usize) -> RepetitionResult {
    let seed = cfg.base_seed.wrapping_add(repetition as u64);
    let run = || -> Result<CompletedRepetition> {
        let prep = prepare(cfg, world, seed)?;
        let runs = Algo::ALL
            .into_iter()
            .map(|algo| {
                Ok(RunSummary::new(
                    algo,
                    &prep.perturbed,
                    improve(cfg, world, &prep, algo)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CompletedRepetition {
            perturbed_states: prep.perturbed_states,
            expected: prep.skill.expected,
            observed: prep.assessment.observed,
            failed_actions: prep.failed_actions,
            pairs: prep.pairs,
            runs,
        })
    };
    let outcome = match run() {
        Ok(c) => RepetitionOutcome::Completed(c),
        Err(e) => {
            log::warn!("repetition {repetition} (seed {seed}) failed: {e}");
            RepetitionOutcome::Failed { error: e.to_string() }
        }
    };
    RepetitionResult {
        repetition,
        seed,
        outcome,
    }
}

/// Aggregates completed repetitions into one row per algorithm.
pub fn aggregate(world: &World, repetitions: &[RepetitionResult]) -> Result<Vec<MetricsRow>> {
    let completed: Vec<&CompletedRepetition> = repetitions
        .iter()
        .filter_map(|r| match &r.outcome {
            RepetitionOutcome::Completed(c) => Some(c),
            RepetitionOutcome::Failed { .. } => None,
        })
        .collect();
    if completed.is_empty() {
        return Err(Error::Env("every repetition failed".into()));
    }
    if completed.len() < repetitions.len() {
        log::warn!("aggregating {} of {} repetitions", completed.len(), repetitions.len());
    }
    let scn = world.scenario();
    Ok(Algo::ALL
        .into_iter()
        .map(|algo| {
            let runs: Vec<&RunSummary> = completed
                .iter()
                .filter_map(|c| c.runs.iter().find(|r| r.algo == algo))
                .collect();
            let n = runs.len() as f64;
            let mean = |f: &dyn Fn(&RunSummary) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
            MetricsRow {
                skill: scn.skill.name().to_string(),
                scenario: scn.name.clone(),
                algo: algo.name().to_string(),
                success_rate: 100.0 * mean(&|r| if r.success { 1.0 } else { 0.0 }),
                avg_return: mean(&|r| r.final_return),
                avg_termination_episode: mean(&|r| r.termination_episode as f64),
                euclid_disp_cm: mean(&|r| r.euclid_disp_cm),
                angular_disp_deg: mean(&|r| r.angular_disp_deg),
            }
        })
        .collect())
}

/// Runs every repetition (in parallel up to `cfg.workers`) and aggregates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let world = World::new(cfg.resolve_scenario()?)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let repetitions: Vec<RepetitionResult> = pool.install(|| {
        (0..cfg.repetitions)
            .into_par_iter()
            .map(|r| run_repetition(cfg, &world, r))
            .collect()
    });
    let rows = aggregate(&world, &repetitions)?;
    Ok(ExperimentResult { rows, repetitions })
}
