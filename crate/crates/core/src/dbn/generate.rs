use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{argmax, DbnModel, HiddenTrajectory, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Every choice is an argmax; ties go to the lowest index.
    MostLikely,
    Stochastic,
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Samples an action/goal hidden-state trajectory.
///
/// Starts from the priors and advances both chains through their tensors.
/// At each composite state the stop probability is `term_a[i] * term_g[j]`:
/// in most-likely mode the walk stops once it exceeds the continue mass
/// `1 - term_a[i] * term_g[j]`, in stochastic mode it stops with that
/// probability. Hitting `max_len` first sets `truncated`.
pub fn sample_hidden_trajectory<R: Rng + ?Sized>(
    model: &DbnModel,
    mode: SampleMode,
    max_len: usize,
    rng: &mut R,
) -> Result<HiddenTrajectory> {
    model.validate()?;
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let pick = |p: &[f64], rng: &mut R| match mode {
        SampleMode::MostLikely => argmax(p),
        SampleMode::Stochastic => categorical(p, rng),
    };
    let mut a = pick(&model.prior_a, rng);
    let mut g = pick(&model.prior_g, rng);
    let mut action_seq = vec![a];
    let mut goal_seq = vec![g];
    loop {
        let stop = model.term_a[a] * model.term_g[g];
        let ends = match mode {
            SampleMode::MostLikely => stop > 1.0 - stop,
            SampleMode::Stochastic => rng.random::<f64>() < stop,
        };
        if ends {
            return HiddenTrajectory::new(action_seq, goal_seq);
        }
        if action_seq.len() == max_len {
            let mut t = HiddenTrajectory::new(action_seq, goal_seq)?;
            t.truncated = true;
            return Ok(t);
        }
        let next_a = pick(model.trans_a.row(a, g), rng);
        let next_g = pick(model.trans_g.row(a, g), rng);
        a = next_a;
        g = next_g;
        action_seq.push(a);
        goal_seq.push(g);
    }
}

fn normalized_quat(p: &Pose) -> [f64; 4] {
    let q = [p[3], p[4], p[5], p[6]];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        q.map(|v| v / n)
    } else {
        [1.0, 0.0, 0.0, 0.0]
    }
}

/// Shortest-arc spherical interpolation between unit quaternions,
/// renormalized. Identical inputs come back unchanged.
pub fn slerp(q0: [f64; 4], q1: [f64; 4], u: f64) -> [f64; 4] {
    if q0 == q1 {
        return q0;
    }
    let mut dot: f64 = q0.iter().zip(&q1).map(|(a, b)| a * b).sum();
    let mut q1 = q1;
    if dot < 0.0 {
        q1 = q1.map(|v| -v);
        dot = -dot;
    }
    let (w0, w1) = if dot > 0.9995 {
        (1.0 - u, u)
    } else {
        let theta = dot.clamp(-1.0, 1.0).acos();
        let s = theta.sin();
        (((1.0 - u) * theta).sin() / s, (u * theta).sin() / s)
    };
    let q: [f64; 4] = std::array::from_fn(|i| w0 * q0[i] + w1 * q1[i]);
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// Dense path through `waypoints`: positions linearly interpolated,
/// orientations slerped. Length is `(len - 1) * steps_per_segment + 1`.
pub fn waypoint_path(waypoints: &[Pose], steps_per_segment: usize) -> Result<Vec<Pose>> {
    if waypoints.is_empty() {
        return Err(Error::InvalidArgument("no waypoints".into()));
    }
    if steps_per_segment == 0 {
        return Err(Error::InvalidArgument("steps_per_segment must be positive".into()));
    }
    let pose = |p: &Pose| {
        let q = normalized_quat(p);
        [p[0], p[1], p[2], q[0], q[1], q[2], q[3]]
    };
    let mut out = Vec::with_capacity((waypoints.len() - 1) * steps_per_segment + 1);
    for w in waypoints.windows(2) {
        let a = pose(&w[0]);
        let b = pose(&w[1]);
        let qa = [a[3], a[4], a[5], a[6]];
        let qb = [b[3], b[4], b[5], b[6]];
        for s in 0..steps_per_segment {
            let u = s as f64 / steps_per_segment as f64;
            let q = slerp(qa, qb, u);
            out.push([
                a[0] + u * (b[0] - a[0]),
                a[1] + u * (b[1] - a[1]),
                a[2] + u * (b[2] - a[2]),
                q[0],
                q[1],
                q[2],
                q[3],
            ]);
        }
    }
    out.push(pose(waypoints.last().expect("non-empty")));
    Ok(out)
}

/// Dense path through the action emission means along `traj`.
pub fn generate_trajectory(model: &DbnModel, traj: &HiddenTrajectory, steps_per_segment: usize) -> Result<Vec<Pose>> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty hidden trajectory".into()));
    }
    if let Some(&bad) = traj.action_seq.iter().find(|&&a| a >= model.n_action()) {
        return Err(Error::InvalidArgument(format!("action state {bad} out of range")));
    }
    let waypoints: Vec<Pose> = traj.action_seq.iter().map(|&a| model.action_mean(a)).collect();
    waypoint_path(&waypoints, steps_per_segment)
}
