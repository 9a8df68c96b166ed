//! Coupled action/goal dynamic Bayesian network.
//!
//! Two hidden chains share a time index. The action chain emits 7D
//! end-effector poses, the goal chain emits 8D object features, and each
//! chain's next state depends on the current state of *both* chains through a
//! 3D transition tensor. Inference runs on the product chain whose composite
//! state is `s = i * L_g + j` for action state `i` and goal state `j`.

mod generate;
mod inference;
mod io;
mod learning;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::MvGaussian;

pub use generate::{generate_trajectory, sample_hidden_trajectory, slerp, waypoint_path, SampleMode};
pub use inference::{forward_loglik, posteriors, viterbi, Posteriors};
pub use io::{load_model, read_demos_jsonl, save_model, write_demos_jsonl, MODEL_SCHEMA_VERSION};
pub use learning::{em_fit, em_step, init_model, init_model_with_states, EmStep};

pub const ACTION_DIM: usize = 7;
pub const GOAL_DIM: usize = 8;

/// Position (meters) followed by a unit quaternion in `(w, x, y, z)` order.
pub type Pose = [f64; ACTION_DIM];
/// Perceptual object features.
pub type Features = [f64; GOAL_DIM];

const SUM_TOL: f64 = 1e-9;
const QUAT_TOL: f64 = 1e-6;

/// One teacher-marked sample: an action observation and a goal observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keyframe {
    pub action: Pose,
    pub goal: Features,
}

impl Keyframe {
    pub fn position(&self) -> [f64; 3] {
        [self.action[0], self.action[1], self.action[2]]
    }

    pub fn to_row(&self) -> [f64; ACTION_DIM + GOAL_DIM] {
        let mut row = [0.0; ACTION_DIM + GOAL_DIM];
        row[..ACTION_DIM].copy_from_slice(&self.action);
        row[ACTION_DIM..].copy_from_slice(&self.goal);
        row
    }

    pub fn from_row(row: &[f64]) -> Result<Self> {
        if row.len() != ACTION_DIM + GOAL_DIM {
            return Err(Error::DimensionMismatch {
                expected: ACTION_DIM + GOAL_DIM,
                got: row.len(),
            });
        }
        let mut action = [0.0; ACTION_DIM];
        let mut goal = [0.0; GOAL_DIM];
        action.copy_from_slice(&row[..ACTION_DIM]);
        goal.copy_from_slice(&row[ACTION_DIM..]);
        Ok(Self { action, goal })
    }
}

impl Serialize for Keyframe {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Keyframe {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let row = Vec::<f64>::deserialize(d)?;
        Keyframe::from_row(&row).map_err(serde::de::Error::custom)
    }
}

/// An ordered keyframe demonstration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Keyframe>", into = "Vec<Keyframe>")]
pub struct Demonstration {
    keyframes: Vec<Keyframe>,
}

impl Demonstration {
    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self> {
        if keyframes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "demonstration needs at least 2 keyframes, got {}",
                keyframes.len()
            )));
        }
        for (t, kf) in keyframes.iter().enumerate() {
            let n = quat_norm(&kf.action);
            if (n - 1.0).abs() > QUAT_TOL {
                return Err(Error::InvalidArgument(format!(
                    "keyframe {t}: quaternion norm {n} is not 1"
                )));
            }
            if kf.action.iter().chain(&kf.goal).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("keyframe {t}: non-finite value")));
            }
        }
        Ok(Self { keyframes })
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }
}

impl TryFrom<Vec<Keyframe>> for Demonstration {
    type Error = Error;

    fn try_from(v: Vec<Keyframe>) -> Result<Self> {
        Demonstration::new(v)
    }
}

impl From<Demonstration> for Vec<Keyframe> {
    fn from(d: Demonstration) -> Self {
        d.keyframes
    }
}

pub(crate) fn quat_norm(pose: &Pose) -> f64 {
    pose[3..].iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Parallel action and goal hidden-state sequences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenTrajectory {
    pub action_seq: Vec<usize>,
    pub goal_seq: Vec<usize>,
    /// Set when sampling hit its length cap before the termination rule fired.
    #[serde(default)]
    pub truncated: bool,
}

impl HiddenTrajectory {
    pub fn new(action_seq: Vec<usize>, goal_seq: Vec<usize>) -> Result<Self> {
        if action_seq.len() != goal_seq.len() || action_seq.is_empty() {
            return Err(Error::LengthMismatch(format!(
                "action sequence {} vs goal sequence {}",
                action_seq.len(),
                goal_seq.len()
            )));
        }
        Ok(Self {
            action_seq,
            goal_seq,
            truncated: false,
        })
    }

    pub fn len(&self) -> usize {
        self.action_seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action_seq.is_empty()
    }

    /// Position of the first occurrence of `action` in the action sequence.
    pub fn position_of(&self, action: usize) -> Option<usize> {
        self.action_seq.iter().position(|&a| a == action)
    }
}

/// `L_a x L_g x L` tensor of conditional next-state probabilities, indexed
/// `[action][goal][next]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn filled(dims: [usize; 3], v: f64) -> Self {
        Self {
            dims,
            data: vec![v; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Every `[i][j]` row uniform over the last axis.
    pub fn uniform(dims: [usize; 3]) -> Self {
        Self::filled(dims, 1.0 / dims[2] as f64)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j) + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j);
        self.data[o + k] = v;
    }

    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.data[o..o + self.dims[2]]
    }

    pub fn row_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = self.offset(i, j);
        let n = self.dims[2];
        &mut self.data[o..o + n]
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dims[2])
    }
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for Tensor3 {
    type Error = Error;

    fn try_from(v: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let d0 = v.len();
        let d1 = v.first().map_or(0, Vec::len);
        let d2 = v.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if d0 == 0 || d1 == 0 || d2 == 0 {
            return Err(Error::InvalidArgument("empty tensor".into()));
        }
        let mut data = Vec::with_capacity(d0 * d1 * d2);
        for plane in &v {
            if plane.len() != d1 {
                return Err(Error::DimensionMismatch {
                    expected: d1,
                    got: plane.len(),
                });
            }
            for row in plane {
                if row.len() != d2 {
                    return Err(Error::DimensionMismatch {
                        expected: d2,
                        got: row.len(),
                    });
                }
                data.extend_from_slice(row);
            }
        }
        Ok(Self {
            dims: [d0, d1, d2],
            data,
        })
    }
}

impl From<Tensor3> for Vec<Vec<Vec<f64>>> {
    fn from(t: Tensor3) -> Self {
        (0..t.dims[0])
            .map(|i| (0..t.dims[1]).map(|j| t.row(i, j).to_vec()).collect())
            .collect()
    }
}

/// The joint action/goal skill model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbnModel {
    pub prior_a: Vec<f64>,
    pub prior_g: Vec<f64>,
    /// `trans_a[i][j][k] = P(X^a_{t+1} = k | X^a_t = i, X^g_t = j)`
    pub trans_a: Tensor3,
    /// `trans_g[i][j][k] = P(X^g_{t+1} = k | X^a_t = i, X^g_t = j)`
    pub trans_g: Tensor3,
    pub emit_a: Vec<MvGaussian>,
    pub emit_g: Vec<MvGaussian>,
    pub term_a: Vec<f64>,
    pub term_g: Vec<f64>,
}

impl DbnModel {
    /// Uniform priors, transitions and terminals around the given emissions.
    pub fn uniform(emit_a: Vec<MvGaussian>, emit_g: Vec<MvGaussian>) -> Result<Self> {
        let la = emit_a.len();
        let lg = emit_g.len();
        let model = Self {
            prior_a: vec![1.0 / la as f64; la],
            prior_g: vec![1.0 / lg as f64; lg],
            trans_a: Tensor3::uniform([la, lg, la]),
            trans_g: Tensor3::uniform([la, lg, lg]),
            emit_a,
            emit_g,
            term_a: vec![1.0 / la as f64; la],
            term_g: vec![1.0 / lg as f64; lg],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_action(&self) -> usize {
        self.emit_a.len()
    }

    pub fn n_goal(&self) -> usize {
        self.emit_g.len()
    }

    pub fn n_composite(&self) -> usize {
        self.n_action() * self.n_goal()
    }

    /// Checks shapes, emission dimensions and simplex constraints.
    pub fn validate(&self) -> Result<()> {
        let la = self.n_action();
        let lg = self.n_goal();
        if la == 0 || lg == 0 {
            return Err(Error::InvalidArgument(
                "model needs at least one state per chain".into(),
            ));
        }
        for (name, v, n) in [
            ("prior_a", &self.prior_a, la),
            ("prior_g", &self.prior_g, lg),
            ("term_a", &self.term_a, la),
            ("term_g", &self.term_g, lg),
        ] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            check_simplex(name, v)?;
        }
        if self.trans_a.dims() != [la, lg, la] {
            return Err(Error::InvalidArgument(format!(
                "trans_a has dims {:?}, expected {:?}",
                self.trans_a.dims(),
                [la, lg, la]
            )));
        }
        if self.trans_g.dims() != [la, lg, lg] {
            return Err(Error::InvalidArgument(format!(
                "trans_g has dims {:?}, expected {:?}",
                self.trans_g.dims(),
                [la, lg, lg]
            )));
        }
        for row in self.trans_a.rows() {
            check_simplex("trans_a row", row)?;
        }
        for row in self.trans_g.rows() {
            check_simplex("trans_g row", row)?;
        }
        if let Some(g) = self.emit_a.iter().find(|g| g.dim() != ACTION_DIM) {
            return Err(Error::DimensionMismatch {
                expected: ACTION_DIM,
                got: g.dim(),
            });
        }
        if let Some(g) = self.emit_g.iter().find(|g| g.dim() != GOAL_DIM) {
            return Err(Error::DimensionMismatch {
                expected: GOAL_DIM,
                got: g.dim(),
            });
        }
        Ok(())
    }

    /// Mixes every probability vector and tensor row with a small uniform
    /// floor: `p' = (p + floor) / (1 + n * floor)`. Keeps decoding finite for
    /// observation sequences the demonstrations never produced.
    pub fn smoothed(&self, floor: f64) -> Self {
        let mut m = self.clone();
        for v in [&mut m.prior_a, &mut m.prior_g, &mut m.term_a, &mut m.term_g] {
            floor_vec(v, floor);
        }
        for t in [&mut m.trans_a, &mut m.trans_g] {
            let [d0, d1, _] = t.dims();
            for i in 0..d0 {
                for j in 0..d1 {
                    floor_vec(t.row_mut(i, j), floor);
                }
            }
        }
        m
    }

    /// Emission mean of an action state as a pose.
    pub fn action_mean(&self, state: usize) -> Pose {
        let mut p = [0.0; ACTION_DIM];
        p.copy_from_slice(self.emit_a[state].mean().as_slice());
        p
    }
}

fn floor_vec(v: &mut [f64], floor: f64) {
    let denom = 1.0 + v.len() as f64 * floor;
    for p in v.iter_mut() {
        *p = (*p + floor) / denom;
    }
}

fn check_simplex(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{name} has a negative or non-finite entry"
        )));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidArgument(format!("{name} sums to {s}")));
    }
    Ok(())
}

pub(crate) fn normalize_in_place(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for p in v.iter_mut() {
            *p /= s;
        }
    }
}

/// Index of the maximum; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_pose(x: f64) -> Pose {
        [x, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
    }

    #[test]
    fn demonstration_rejects_short_and_non_unit() {
        let kf = Keyframe {
            action: unit_pose(0.0),
            goal: [0.0; GOAL_DIM],
        };
        assert!(Demonstration::new(vec![kf]).is_err());
        let mut bad = kf;
        bad.action[3] = 0.5;
        assert!(Demonstration::new(vec![kf, bad]).is_err());
        assert!(Demonstration::new(vec![kf, kf]).is_ok());
    }

    #[test]
    fn keyframe_row_round_trip() {
        let kf = Keyframe {
            action: unit_pose(0.25),
            goal: [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        };
        let s = serde_json::to_string(&kf).unwrap();
        assert_eq!(s.matches(',').count(), 14);
        assert_eq!(serde_json::from_str::<Keyframe>(&s).unwrap(), kf);
    }

    #[test]
    fn tensor_nested_order() {
        let mut t = Tensor3::filled([2, 3, 4], 0.0);
        t.set(1, 2, 3, 7.0);
        let nested: Vec<Vec<Vec<f64>>> = t.clone().into();
        assert_eq!(nested[1][2][3], 7.0);
        assert_eq!(Tensor3::try_from(nested).unwrap(), t);
    }

    #[test]
    fn smoothing_keeps_simplex() {
        let emit_a = vec![MvGaussian::isotropic(&unit_pose(0.0), 1.0).unwrap(); 2];
        let emit_g = vec![MvGaussian::isotropic(&[0.0; GOAL_DIM], 1.0).unwrap(); 3];
        let mut m = DbnModel::uniform(emit_a, emit_g).unwrap();
        m.prior_a = vec![1.0, 0.0];
        let s = m.smoothed(1e-6);
        s.validate().unwrap();
        assert!(s.prior_a[1] > 0.0);
    }

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }
}
