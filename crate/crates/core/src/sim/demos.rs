use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dbn::{DbnModel, Demonstration, Keyframe};
use crate::error::{Error, Result};

use super::exec::execute_waypoints;
use super::World;

/// Keyframe jitter applied to generated demonstrations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyframeNoise {
    /// Per-axis position noise in meters.
    pub pos_std: f64,
    /// Per-dimension feature noise.
    pub feature_std: f64,
}

impl Default for KeyframeNoise {
    fn default() -> Self {
        Self {
            pos_std: 0.01,
            feature_std: 0.02,
        }
    }
}

/// Object phase at each ground-truth keyframe when the nominal path is
/// followed without noise.
pub fn keyframe_phases(world: &World) -> Result<Vec<f64>> {
    let mut s = world.clone();
    s.scenario.noise_std = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ex = execute_waypoints(&s, &s.scenario.keyframes(), 1, 0.0, &mut rng)?;
    Ok(ex.keyframe_frames.iter().map(|&f| ex.frames[f].phase).collect())
}

/// Demonstrations of the nominal skill. Keyframe positions are recorded
/// with `pos_std` jitter; goal observations are the feature map at the
/// phase the nominal execution reaches at each keyframe, plus
/// `feature_std` noise.
pub fn generate_demos<R: Rng + ?Sized>(
    world: &World,
    n: usize,
    noise: KeyframeNoise,
    rng: &mut R,
) -> Result<Vec<Demonstration>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one demonstration".into()));
    }
    let bad = |e: rand_distr::NormalError| Error::InvalidArgument(e.to_string());
    let pos_noise = Normal::new(0.0, noise.pos_std).map_err(bad)?;
    let feat_noise = Normal::new(0.0, noise.feature_std).map_err(bad)?;
    let truth = world.scenario().keyframes();
    let phases = keyframe_phases(world)?;
    (0..n)
        .map(|_| {
            let kfs = truth
                .iter()
                .zip(&phases)
                .map(|(pose, &phase)| {
                    let mut action = *pose;
                    for v in &mut action[..3] {
                        *v += pos_noise.sample(rng);
                    }
                    let mut goal = world.feature_map().features(phase);
                    for v in goal.iter_mut() {
                        *v += feat_noise.sample(rng);
                    }
                    Keyframe { action, goal }
                })
                .collect();
            Demonstration::new(kfs)
        })
        .collect()
}

/// Moves the positional mean of one action state by `displacement_m` in a
/// uniformly random direction. Orientation is left untouched.
pub fn perturb_model<R: Rng + ?Sized>(
    model: &DbnModel,
    state: usize,
    displacement_m: f64,
    rng: &mut R,
) -> Result<DbnModel> {
    if !(displacement_m > 0.0) || !displacement_m.is_finite() {
        return Err(Error::InvalidArgument("displacement must be positive".into()));
    }
    if state >= model.n_action() {
        return Err(Error::InvalidArgument(format!("action state {state} out of range")));
    }
    let dir = loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            break v.map(|x| x / n);
        }
    };
    let mut out = model.clone();
    let g = &model.emit_a[state];
    let mut mean: DVector<f64> = g.mean().clone();
    for i in 0..3 {
        mean[i] += displacement_m * dir[i];
    }
    out.emit_a[state] = g.with_mean(mean)?;
    Ok(out)
}
