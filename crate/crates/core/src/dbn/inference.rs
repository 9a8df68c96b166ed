use crate::error::{Error, Result};
use crate::stats::{log_sum_exp, LogDensity};

use super::{argmax, DbnModel, Features, HiddenTrajectory, Keyframe, Pose};

/// Log-space parameters of the product chain.
pub(crate) struct Lattice {
    pub lg: usize,
    pub n: usize,
    pub log_prior: Vec<f64>,
    /// Row-major `n x n`, `log P(s -> s')`.
    pub log_trans: Vec<f64>,
    pub log_term: Vec<f64>,
}

impl Lattice {
    pub fn new(model: &DbnModel) -> Self {
        let la = model.n_action();
        let lg = model.n_goal();
        let n = la * lg;
        let mut log_prior = vec![0.0; n];
        let mut log_term = vec![0.0; n];
        let mut log_trans = vec![0.0; n * n];
        for i in 0..la {
            for j in 0..lg {
                let s = i * lg + j;
                log_prior[s] = model.prior_a[i].ln() + model.prior_g[j].ln();
                log_term[s] = model.term_a[i].ln() + model.term_g[j].ln();
                let ra = model.trans_a.row(i, j);
                let rg = model.trans_g.row(i, j);
                for (k, pa) in ra.iter().enumerate() {
                    for (l, pg) in rg.iter().enumerate() {
                        log_trans[s * n + k * lg + l] = pa.ln() + pg.ln();
                    }
                }
            }
        }
        Self {
            lg,
            n,
            log_prior,
            log_trans,
            log_term,
        }
    }

    pub fn split(&self, s: usize) -> (usize, usize) {
        (s / self.lg, s % self.lg)
    }
}

pub(crate) struct Densities {
    pub action: Vec<LogDensity>,
    pub goal: Vec<LogDensity>,
}

impl Densities {
    pub fn new(model: &DbnModel) -> Result<Self> {
        Ok(Self {
            action: model.emit_a.iter().map(|g| g.log_density()).collect::<Result<_>>()?,
            goal: model.emit_g.iter().map(|g| g.log_density()).collect::<Result<_>>()?,
        })
    }

    /// `T x n` table of composite log-emissions. Without action observations
    /// the action factor integrates to one and drops out.
    pub fn table(&self, obs_a: Option<&[Pose]>, obs_g: &[Features]) -> Vec<f64> {
        let la = self.action.len();
        let lg = self.goal.len();
        let n = la * lg;
        let t_len = obs_g.len();
        let mut out = vec![0.0; t_len * n];
        let mut ea = vec![0.0; la];
        let mut eg = vec![0.0; lg];
        for t in 0..t_len {
            match obs_a {
                Some(a) => {
                    for (e, d) in ea.iter_mut().zip(&self.action) {
                        *e = d.logpdf(&a[t]);
                    }
                }
                None => ea.fill(0.0),
            }
            for (e, d) in eg.iter_mut().zip(&self.goal) {
                *e = d.logpdf(&obs_g[t]);
            }
            for i in 0..la {
                for j in 0..lg {
                    out[t * n + i * lg + j] = ea[i] + eg[j];
                }
            }
        }
        out
    }
}

pub(crate) fn split_keyframes(kfs: &[Keyframe]) -> (Vec<Pose>, Vec<Features>) {
    kfs.iter().map(|k| (k.action, k.goal)).unzip()
}

/// Log forward messages (`T x n`) and the sequence log-likelihood.
pub(crate) fn forward(lat: &Lattice, em: &[f64], t_len: usize) -> (Vec<f64>, f64) {
    let n = lat.n;
    let mut alpha = vec![f64::NEG_INFINITY; t_len * n];
    for s in 0..n {
        alpha[s] = lat.log_prior[s] + em[s];
    }
    let mut buf = vec![0.0; n];
    for t in 1..t_len {
        for s2 in 0..n {
            for s in 0..n {
                buf[s] = alpha[(t - 1) * n + s] + lat.log_trans[s * n + s2];
            }
            alpha[t * n + s2] = log_sum_exp(&buf) + em[t * n + s2];
        }
    }
    for s in 0..n {
        buf[s] = alpha[(t_len - 1) * n + s] + lat.log_term[s];
    }
    let ll = log_sum_exp(&buf);
    (alpha, ll)
}

pub(crate) fn backward(lat: &Lattice, em: &[f64], t_len: usize) -> Vec<f64> {
    let n = lat.n;
    let mut beta = vec![f64::NEG_INFINITY; t_len * n];
    beta[(t_len - 1) * n..].copy_from_slice(&lat.log_term);
    let mut buf = vec![0.0; n];
    for t in (0..t_len - 1).rev() {
        for s in 0..n {
            for s2 in 0..n {
                buf[s2] = lat.log_trans[s * n + s2] + em[(t + 1) * n + s2] + beta[(t + 1) * n + s2];
            }
            beta[t * n + s] = log_sum_exp(&buf);
        }
    }
    beta
}

/// Smoothed posteriors of one sequence.
#[derive(Clone, Debug)]
pub struct Posteriors {
    pub loglik: f64,
    /// `gamma[t][s]`, composite state occupancy.
    pub gamma: Vec<Vec<f64>>,
    /// `sum_t xi_t(s, s')`, row-major `n x n`.
    pub xi_sum: Vec<f64>,
}

pub(crate) fn posteriors_with(lat: &Lattice, dens: &Densities, kfs: &[Keyframe]) -> Posteriors {
    let (obs_a, obs_g) = split_keyframes(kfs);
    let t_len = kfs.len();
    let n = lat.n;
    let em = dens.table(Some(&obs_a), &obs_g);
    let (alpha, ll) = forward(lat, &em, t_len);
    let beta = backward(lat, &em, t_len);
    let gamma = (0..t_len)
        .map(|t| {
            (0..n)
                .map(|s| (alpha[t * n + s] + beta[t * n + s] - ll).exp())
                .collect()
        })
        .collect();
    let mut xi_sum = vec![0.0; n * n];
    for t in 0..t_len.saturating_sub(1) {
        for s in 0..n {
            let a = alpha[t * n + s];
            if a == f64::NEG_INFINITY {
                continue;
            }
            for s2 in 0..n {
                let v = a + lat.log_trans[s * n + s2] + em[(t + 1) * n + s2] + beta[(t + 1) * n + s2] - ll;
                xi_sum[s * n + s2] += v.exp();
            }
        }
    }
    Posteriors {
        loglik: ll,
        gamma,
        xi_sum,
    }
}

fn check_sequence(model: &DbnModel, len: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::InvalidArgument("empty observation sequence".into()));
    }
    model.validate()
}

/// `log P(observations | model)`, including the terminal factor on the last
/// step.
pub fn forward_loglik(model: &DbnModel, keyframes: &[Keyframe]) -> Result<f64> {
    check_sequence(model, keyframes.len())?;
    let lat = Lattice::new(model);
    let dens = Densities::new(model)?;
    let (obs_a, obs_g) = split_keyframes(keyframes);
    let em = dens.table(Some(&obs_a), &obs_g);
    Ok(forward(&lat, &em, keyframes.len()).1)
}

/// Forward-backward posteriors for one sequence.
pub fn posteriors(model: &DbnModel, keyframes: &[Keyframe]) -> Result<Posteriors> {
    check_sequence(model, keyframes.len())?;
    let lat = Lattice::new(model);
    let dens = Densities::new(model)?;
    Ok(posteriors_with(&lat, &dens, keyframes))
}

/// Most likely composite-state path. With `obs_a = None` the action chain
/// carries no evidence.
///
/// Exact ties resolve to the path with the smaller composite index at the
/// first time step where candidates diverge: suffix scores are computed
/// backwards and the path is then read off forwards, taking the lowest index
/// among maximizers at every step.
pub fn viterbi(model: &DbnModel, obs_a: Option<&[Pose]>, obs_g: &[Features]) -> Result<HiddenTrajectory> {
    check_sequence(model, obs_g.len())?;
    if let Some(a) = obs_a {
        if a.len() != obs_g.len() {
            return Err(Error::LengthMismatch(format!(
                "{} action vs {} goal observations",
                a.len(),
                obs_g.len()
            )));
        }
    }
    let lat = Lattice::new(model);
    let dens = Densities::new(model)?;
    let em = dens.table(obs_a, obs_g);
    let t_len = obs_g.len();
    let n = lat.n;

    // suffix[t][s]: best log-score of steps t+1.. (incl. terminal) given s at t.
    let mut suffix = vec![f64::NEG_INFINITY; t_len * n];
    suffix[(t_len - 1) * n..].copy_from_slice(&lat.log_term);
    for t in (0..t_len - 1).rev() {
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for s2 in 0..n {
                let v = lat.log_trans[s * n + s2] + em[(t + 1) * n + s2] + suffix[(t + 1) * n + s2];
                if v > best {
                    best = v;
                }
            }
            suffix[t * n + s] = best;
        }
    }

    let mut path = Vec::with_capacity(t_len);
    let first: Vec<f64> = (0..n).map(|s| lat.log_prior[s] + em[s] + suffix[s]).collect();
    path.push(argmax(&first));
    let mut scores = vec![0.0; n];
    for t in 1..t_len {
        let prev = path[t - 1];
        for (s2, sc) in scores.iter_mut().enumerate() {
            *sc = lat.log_trans[prev * n + s2] + em[t * n + s2] + suffix[t * n + s2];
        }
        path.push(argmax(&scores));
    }

    let (action_seq, goal_seq) = path.iter().map(|&s| lat.split(s)).unzip();
    HiddenTrajectory::new(action_seq, goal_seq)
}
