//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use bopi2_core::dbn::{DbnModel, Features, HiddenTrajectory, Keyframe, Pose, Tensor3, ACTION_DIM, GOAL_DIM};
use bopi2_core::stats::MvGaussian;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Gaussian log-density through an explicit inverse and determinant, kept
/// apart from the library's Cholesky path.
pub fn gauss_logpdf(x: &[f64], g: &MvGaussian) -> f64 {
    let d = x.len();
    let cov: &DMatrix<f64> = g.cov();
    let inv = cov.clone().try_inverse().expect("invertible covariance");
    let diff = DVector::from_column_slice(x) - g.mean();
    let maha = (diff.transpose() * inv * &diff)[(0, 0)];
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + maha)
}

fn simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn random_tensor<R: Rng + ?Sized>(dims: [usize; 3], rng: &mut R) -> Tensor3 {
    let mut t = Tensor3::uniform(dims);
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            t.row_mut(i, j).copy_from_slice(&simplex(dims[2], rng));
        }
    }
    t
}

fn random_spd<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    &a * a.transpose() + DMatrix::identity(d, d) * (0.5 * scale * scale)
}

pub fn unit_quat<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

pub fn random_pose<R: Rng + ?Sized>(rng: &mut R) -> Pose {
    let q = unit_quat(rng);
    [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        q[0],
        q[1],
        q[2],
        q[3],
    ]
}

pub fn random_features<R: Rng + ?Sized>(rng: &mut R) -> Features {
    std::array::from_fn(|_| rng.random_range(-1.0..1.0))
}

/// A model with random probabilities and full-covariance emissions spread
/// over the unit cube.
pub fn random_model<R: Rng + ?Sized>(la: usize, lg: usize, rng: &mut R) -> DbnModel {
    let emit_a = (0..la)
        .map(|_| {
            MvGaussian::new(
                DVector::from_column_slice(&random_pose(rng)),
                random_spd(ACTION_DIM, 0.6, rng),
            )
            .unwrap()
        })
        .collect();
    let emit_g = (0..lg)
        .map(|_| {
            MvGaussian::new(
                DVector::from_column_slice(&random_features(rng)),
                random_spd(GOAL_DIM, 0.6, rng),
            )
            .unwrap()
        })
        .collect();
    let model = DbnModel {
        prior_a: simplex(la, rng),
        prior_g: simplex(lg, rng),
        trans_a: random_tensor([la, lg, la], rng),
        trans_g: random_tensor([la, lg, lg], rng),
        emit_a,
        emit_g,
        term_a: simplex(la, rng),
        term_g: simplex(lg, rng),
    };
    model.validate().unwrap();
    model
}

pub fn random_keyframes<R: Rng + ?Sized>(t: usize, rng: &mut R) -> Vec<Keyframe> {
    (0..t)
        .map(|_| Keyframe {
            action: random_pose(rng),
            goal: random_features(rng),
        })
        .collect()
}

/// Every composite-state path of length `t`, in lexicographic order of
/// composite indices `a * L_g + g`.
fn paths(model: &DbnModel, t: usize) -> Vec<Vec<(usize, usize)>> {
    let lg = model.n_goal();
    let n = model.n_action() * lg;
    let mut out = Vec::new();
    let mut idx = vec![0usize; t];
    loop {
        out.push(idx.iter().map(|&s| (s / lg, s % lg)).collect());
        let mut k = t;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Joint log-probability of one hidden path and the observations.
pub fn path_score(model: &DbnModel, path: &[(usize, usize)], obs_a: Option<&[Pose]>, obs_g: &[Features]) -> f64 {
    let (a0, g0) = path[0];
    let mut s = model.prior_a[a0].ln() + model.prior_g[g0].ln();
    for (t, &(a, g)) in path.iter().enumerate() {
        if t > 0 {
            let (pa, pg) = path[t - 1];
            s += model.trans_a.get(pa, pg, a).ln() + model.trans_g.get(pa, pg, g).ln();
        }
        if let Some(obs) = obs_a {
            s += gauss_logpdf(&obs[t], &model.emit_a[a]);
        }
        s += gauss_logpdf(&obs_g[t], &model.emit_g[g]);
    }
    let (al, gl) = *path.last().unwrap();
    s + model.term_a[al].ln() + model.term_g[gl].ln()
}

fn split(kfs: &[Keyframe]) -> (Vec<Pose>, Vec<Features>) {
    (
        kfs.iter().map(|k| k.action).collect(),
        kfs.iter().map(|k| k.goal).collect(),
    )
}

/// Log-likelihood by summing over every hidden path.
pub fn enumerate_loglik(model: &DbnModel, kfs: &[Keyframe]) -> f64 {
    let (a, g) = split(kfs);
    let scores: Vec<f64> = paths(model, kfs.len())
        .iter()
        .map(|p| path_score(model, p, Some(&a), &g))
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Best path by exhaustive search and its score; the first maximizer in
/// lexicographic order wins ties.
pub fn enumerate_viterbi(model: &DbnModel, obs_a: Option<&[Pose]>, obs_g: &[Features]) -> (HiddenTrajectory, f64) {
    let mut best: Option<(Vec<(usize, usize)>, f64)> = None;
    for p in paths(model, obs_g.len()) {
        let s = path_score(model, &p, obs_a, obs_g);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((p, s));
        }
    }
    let (p, s) = best.unwrap();
    let traj = HiddenTrajectory::new(p.iter().map(|x| x.0).collect(), p.iter().map(|x| x.1).collect()).unwrap();
    (traj, s)
}

pub fn traj_score(model: &DbnModel, traj: &HiddenTrajectory, obs_a: Option<&[Pose]>, obs_g: &[Features]) -> f64 {
    let p: Vec<(usize, usize)> = traj
        .action_seq
        .iter()
        .cloned()
        .zip(traj.goal_seq.iter().cloned())
        .collect();
    path_score(model, &p, obs_a, obs_g)
}

/// Hand-traced sub-goal assessment cases: (expected goals, observed goals,
/// observed actions, failed actions).
pub fn assessment_suite() -> Vec<(Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>)> {
    vec![
        // No failure.
        (vec![0, 1, 2], vec![0, 1, 2], vec![0, 1, 2], vec![]),
        // Failure at the last position.
        (vec![0, 1, 2], vec![0, 1, 1], vec![0, 1, 2], vec![1, 2]),
        // Failure at i = 0 only: no predecessor.
        (vec![0, 1], vec![1, 1], vec![0, 1], vec![0]),
        // Cascade from position 2: predecessors already present are skipped.
        (
            vec![0, 1, 2, 3, 3],
            vec![0, 1, 1, 1, 1],
            vec![0, 1, 2, 3, 4],
            vec![1, 2, 3, 4],
        ),
        // Two isolated failures.
        (
            vec![0, 1, 2, 3, 4],
            vec![0, 0, 2, 3, 3],
            vec![0, 1, 2, 3, 4],
            vec![0, 1, 3, 4],
        ),
        // Duplicate suppression: the observed action repeats.
        (vec![0, 1, 2, 3], vec![0, 1, 1, 3], vec![0, 2, 2, 3], vec![2]),
        // Failures at 0 and 1.
        (vec![2, 1, 0], vec![0, 0, 0], vec![5, 6, 7], vec![5, 6]),
        // Every position fails.
        (vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 0, 1]),
        // Single-element sequences.
        (vec![3], vec![1], vec![4], vec![4]),
        // Duplicate across separate failures keeps the first occurrence.
        (
            vec![0, 1, 2, 3, 4],
            vec![0, 2, 2, 3, 0],
            vec![0, 1, 2, 1, 0],
            vec![0, 1],
        ),
    ]
}
