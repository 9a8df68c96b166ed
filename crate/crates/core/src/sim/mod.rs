//! Simulated articulated-object environment: radius-triggered contact
//! mechanics, a seeded linear feature map standing in for perception, and a
//! demonstration generator.

mod demos;
mod env;
mod exec;

pub use demos::{generate_demos, keyframe_phases, perturb_model, KeyframeNoise};
pub use env::SimEnv;
pub use exec::{execute_held, execute_path, execute_waypoints, Execution, ObservationFrame, FRAME_RATE_HZ};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dbn::{Features, Pose, GOAL_DIM};
use crate::error::{Error, Result};

/// Minimum feature-space distance between grid phases for a map to count
/// as injective.
const MIN_GRID_SEPARATION: f64 = 0.05;
const MAX_RESEEDS: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    OpenBox,
    CloseBox,
    OpenDrawer,
}

impl Skill {
    pub fn name(self) -> &'static str {
        match self {
            Skill::OpenBox => "open_box",
            Skill::CloseBox => "close_box",
            Skill::OpenDrawer => "open_drawer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactWaypoint {
    pub position: [f64; 3],
    /// Trigger radius in meters.
    pub radius: f64,
}

/// Scenario definition as stored on disk.
///
/// The ground-truth keyframes are the approach point, every contact
/// waypoint in order, and the retreat point, all at `orientation`.
/// `object_phase_targets[0]` is the initial phase and
/// `object_phase_targets[i]` the phase after contact `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub skill: Skill,
    pub name: String,
    pub approach: [f64; 3],
    pub retreat: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub orientation: [f64; 4],
    pub contact_waypoints: Vec<ContactWaypoint>,
    pub object_phase_targets: Vec<f64>,
    pub feature_map_seed: u64,
    pub noise_std: f64,
    #[serde(default = "default_speed")]
    pub speed_mps: f64,
}

fn default_speed() -> f64 {
    0.1
}

const DOWN: [f64; 4] = [0.0, 1.0, 0.0, 0.0];
const RHO: f64 = 0.04;

fn contacts(points: &[[f64; 3]]) -> Vec<ContactWaypoint> {
    points
        .iter()
        .map(|&position| ContactWaypoint { position, radius: RHO })
        .collect()
}

impl Scenario {
    pub fn builtin(name: &str) -> Option<Self> {
        let s = match name {
            "close_box" => Scenario {
                skill: Skill::CloseBox,
                name: "box1".into(),
                approach: [0.45, -0.10, 0.40],
                retreat: [0.60, 0.08, 0.32],
                orientation: DOWN,
                contact_waypoints: contacts(&[[0.50, -0.05, 0.32], [0.55, 0.02, 0.26], [0.60, 0.08, 0.20]]),
                object_phase_targets: vec![1.0, 0.7, 0.35, 0.0],
                feature_map_seed: 11,
                noise_std: 0.02,
                speed_mps: 0.1,
            },
            "open_box" => Scenario {
                skill: Skill::OpenBox,
                name: "box1".into(),
                approach: [0.62, 0.10, 0.12],
                retreat: [0.40, -0.10, 0.42],
                orientation: DOWN,
                contact_waypoints: contacts(&[[0.60, 0.08, 0.20], [0.54, 0.02, 0.28], [0.47, -0.04, 0.33]]),
                object_phase_targets: vec![0.0, 0.35, 0.7, 1.0],
                feature_map_seed: 23,
                noise_std: 0.02,
                speed_mps: 0.1,
            },
            "open_drawer" => Scenario {
                skill: Skill::OpenDrawer,
                name: "drawer1".into(),
                approach: [0.72, 0.0, 0.28],
                retreat: [0.42, 0.0, 0.32],
                orientation: DOWN,
                contact_waypoints: contacts(&[[0.64, 0.0, 0.20], [0.54, 0.0, 0.20], [0.44, 0.0, 0.20]]),
                object_phase_targets: vec![0.0, 0.3, 0.65, 1.0],
                feature_map_seed: 37,
                noise_std: 0.02,
                speed_mps: 0.1,
            },
            _ => return None,
        };
        Some(s)
    }

    pub const BUILTIN_NAMES: [&'static str; 3] = ["close_box", "open_box", "open_drawer"];

    pub fn from_json(s: &str) -> Result<Self> {
        let scn: Scenario = serde_json::from_str(s)?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario {}: {m}", self.name)));
        if self.contact_waypoints.is_empty() {
            return bad("no contact waypoints".into());
        }
        if self.contact_waypoints.iter().any(|c| !(c.radius > 0.0)) {
            return bad("contact radius must be positive".into());
        }
        if self.object_phase_targets.len() != self.contact_waypoints.len() + 1 {
            return bad(format!(
                "{} phase targets for {} contacts (need one more than contacts)",
                self.object_phase_targets.len(),
                self.contact_waypoints.len()
            ));
        }
        if self.object_phase_targets.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("phase targets must lie in [0, 1]".into());
        }
        let t = &self.object_phase_targets;
        let up = t.windows(2).all(|w| w[1] >= w[0]);
        let down = t.windows(2).all(|w| w[1] <= w[0]);
        if !up && !down {
            return bad("phase targets must be monotone".into());
        }
        let qn = self.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            return bad("orientation must be a unit quaternion".into());
        }
        if !(self.speed_mps > 0.0) || !(self.noise_std >= 0.0) {
            return bad("speed must be positive and noise non-negative".into());
        }
        Ok(())
    }

    /// Ground-truth keyframe poses.
    pub fn keyframes(&self) -> Vec<Pose> {
        let pose = |p: &[f64; 3]| {
            let q = self.orientation;
            [p[0], p[1], p[2], q[0], q[1], q[2], q[3]]
        };
        std::iter::once(pose(&self.approach))
            .chain(self.contact_waypoints.iter().map(|c| pose(&c.position)))
            .chain(std::iter::once(pose(&self.retreat)))
            .collect()
    }
}

/// Fixed linear map of `[phase, phase², 1]` into feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    weights: [[f64; 3]; GOAL_DIM],
    seed: u64,
}

impl FeatureMap {
    fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = [[0.0; 3]; GOAL_DIM];
        for row in weights.iter_mut() {
            for w in row.iter_mut() {
                *w = StandardNormal.sample(&mut rng);
            }
        }
        Self { weights, seed }
    }

    /// First map at or after `seed` that keeps the phase grid
    /// `{0, 0.1, ..., 1}` apart.
    pub fn seeded(seed: u64) -> Result<Self> {
        for k in 0..MAX_RESEEDS {
            let m = Self::draw(seed.wrapping_add(k));
            if m.min_grid_separation() >= MIN_GRID_SEPARATION {
                if k > 0 {
                    log::info!("feature map seed {seed} not injective on grid, using {}", m.seed);
                }
                return Ok(m);
            }
        }
        Err(Error::Config(format!("no injective feature map near seed {seed}")))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn features(&self, phase: f64) -> Features {
        let basis = [phase, phase * phase, 1.0];
        std::array::from_fn(|i| self.weights[i].iter().zip(&basis).map(|(w, b)| w * b).sum())
    }

    pub fn min_grid_separation(&self) -> f64 {
        let grid: Vec<Features> = (0..=10).map(|k| self.features(k as f64 / 10.0)).collect();
        let mut best = f64::INFINITY;
        for i in 0..grid.len() {
            for j in i + 1..grid.len() {
                let d = grid[i]
                    .iter()
                    .zip(&grid[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(d);
            }
        }
        best
    }
}

/// A validated scenario together with its feature map.
#[derive(Clone, Debug)]
pub struct World {
    scenario: Scenario,
    map: FeatureMap,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let map = FeatureMap::seeded(scenario.feature_map_seed)?;
        Ok(Self { scenario, map })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn n_keyframes(&self) -> usize {
        self.scenario.contact_waypoints.len() + 2
    }

    /// Number of distinct object phases the skill passes through.
    pub fn n_phases(&self) -> usize {
        let mut t = self.scenario.object_phase_targets.clone();
        t.dedup();
        t.len()
    }

    pub fn phase_after(&self, contacts_made: usize) -> f64 {
        self.scenario.object_phase_targets[contacts_made]
    }
}
