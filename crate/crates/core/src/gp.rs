//! Gaussian-process return surrogate over 3D positions, UCB acquisition and
//! emission-constrained candidate sampling.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mvn_sample_n, MvGaussian};

pub type Point3 = [f64; 3];

/// Jitter used when a noiseless Gram matrix is singular.
const NOISELESS_JITTER: f64 = 1e-8;

/// Squared-exponential kernel `sf2 * exp(-|x - x'|^2 / (2 l^2))` plus
/// observation noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeKernel {
    pub signal_var: f64,
    /// Meters.
    pub length_scale: f64,
    pub noise_var: f64,
}

impl Default for SeKernel {
    fn default() -> Self {
        Self {
            signal_var: 1.0,
            length_scale: 0.05,
            noise_var: 1e-4,
        }
    }
}

impl SeKernel {
    pub fn eval(&self, a: &Point3, b: &Point3) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_var * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    fn validate(&self) -> Result<()> {
        if !(self.signal_var > 0.0) || !(self.length_scale > 0.0) || !(self.noise_var >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid kernel {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    noise_var: f64,
}

/// GP regression over `(position, return)` pairs with a zero prior mean.
#[derive(Clone, Debug)]
pub struct GpSurrogate {
    inputs: Vec<Point3>,
    targets: Vec<f64>,
    kernel: SeKernel,
    factor: Option<Factor>,
}

impl GpSurrogate {
    pub fn new(kernel: SeKernel) -> Result<Self> {
        kernel.validate()?;
        Ok(Self {
            inputs: Vec::new(),
            targets: Vec::new(),
            kernel,
            factor: None,
        })
    }

    pub fn from_data(kernel: SeKernel, inputs: Vec<Point3>, targets: Vec<f64>) -> Result<Self> {
        kernel.validate()?;
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch(format!(
                "{} inputs vs {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if targets.iter().chain(inputs.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite GP data".into()));
        }
        let mut gp = Self {
            inputs,
            targets,
            kernel,
            factor: None,
        };
        gp.refresh()?;
        Ok(gp)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Point3] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn kernel(&self) -> SeKernel {
        self.kernel
    }

    /// Noise variance actually used in the last factorization.
    pub fn effective_noise_var(&self) -> f64 {
        self.factor.as_ref().map_or(self.kernel.noise_var, |f| f.noise_var)
    }

    fn gram(&self, noise_var: f64) -> DMatrix<f64> {
        let n = self.inputs.len();
        DMatrix::from_fn(n, n, |i, j| {
            self.kernel.eval(&self.inputs[i], &self.inputs[j]) + if i == j { noise_var } else { 0.0 }
        })
    }

    /// Factorizes `K + noise I`. On failure retries once with the noise
    /// raised tenfold (or to a small jitter when noiseless).
    fn refresh(&mut self) -> Result<()> {
        if self.inputs.is_empty() {
            self.factor = None;
            return Ok(());
        }
        let base = self.kernel.noise_var;
        let retry = if base > 0.0 { base * 10.0 } else { NOISELESS_JITTER };
        let (chol, noise_var) = match Cholesky::new(self.gram(base)) {
            Some(c) => (c, base),
            None => match Cholesky::new(self.gram(retry)) {
                Some(c) => (c, retry),
                None => return Err(Error::GramFactorization { noise_var: retry }),
            },
        };
        let y = DVector::from_column_slice(&self.targets);
        let alpha = chol.solve(&y);
        self.factor = Some(Factor { chol, alpha, noise_var });
        Ok(())
    }

    fn cross(&self, query: &Point3) -> DVector<f64> {
        DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|x| self.kernel.eval(x, query)),
        )
    }

    /// Log marginal likelihood of the targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        match &self.factor {
            None => 0.0,
            Some(f) => {
                let y = DVector::from_column_slice(&self.targets);
                let n = self.targets.len() as f64;
                let log_det_half: f64 = f.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
                -0.5 * y.dot(&f.alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
            }
        }
    }
}

/// Posterior mean and standard deviation of the latent return at `query`.
pub fn gp_posterior(s: &GpSurrogate, query: &Point3) -> (f64, f64) {
    let Some(f) = &s.factor else {
        return (0.0, s.kernel.signal_var.sqrt());
    };
    let k = s.cross(query);
    let mu = k.dot(&f.alpha);
    let v = f
        .chol
        .l_dirty()
        .solve_lower_triangular(&k)
        .expect("cholesky diagonal is positive");
    let var = (s.kernel.signal_var - v.norm_squared()).max(0.0);
    (mu, var.sqrt())
}

/// Returns a surrogate with one more observation.
pub fn gp_add(s: &GpSurrogate, point: Point3, value: f64) -> Result<GpSurrogate> {
    if !value.is_finite() || point.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("GP observation must be finite".into()));
    }
    let mut next = s.clone();
    next.inputs.push(point);
    next.targets.push(value);
    next.refresh()?;
    Ok(next)
}

/// Refits the length scale over `grid` by marginal likelihood; the first
/// grid value wins ties.
pub fn refit_length_scale(s: &GpSurrogate, grid: &[f64]) -> Result<GpSurrogate> {
    let mut best: Option<(f64, GpSurrogate)> = None;
    for &l in grid {
        let kernel = SeKernel {
            length_scale: l,
            ..s.kernel
        };
        let cand = GpSurrogate::from_data(kernel, s.inputs.clone(), s.targets.clone())?;
        let lml = cand.log_marginal_likelihood();
        if best.as_ref().map_or(true, |(b, _)| lml > *b) {
            best = Some((lml, cand));
        }
    }
    Ok(best.map_or_else(|| s.clone(), |(_, g)| g))
}

/// `n` positions drawn from the positional (first three coordinates)
/// marginal of a 7D action emission.
pub fn sample_candidates<R: Rng + ?Sized>(emission: &MvGaussian, n: usize, rng: &mut R) -> Result<Vec<Point3>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one candidate".into()));
    }
    let pos = emission.marginal(&[0, 1, 2])?;
    Ok(mvn_sample_n(&pos, n, rng)
        .into_iter()
        .map(|v| [v[0], v[1], v[2]])
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub point: Point3,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionChoice {
    pub chosen_index: usize,
    pub chosen_point: Point3,
    pub ucb_value: f64,
    pub candidate_scores: Vec<CandidateScore>,
}

/// Picks the candidate maximizing `mu + alpha * sigma`; ties go to the
/// lowest index.
pub fn ucb_select(s: &GpSurrogate, candidates: &[Point3], alpha: f64) -> Result<AcquisitionChoice> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument("alpha must be non-negative".into()));
    }
    let candidate_scores: Vec<CandidateScore> = candidates
        .iter()
        .map(|p| {
            let (mu, sigma) = gp_posterior(s, p);
            CandidateScore { point: *p, mu, sigma }
        })
        .collect();
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, c) in candidate_scores.iter().enumerate() {
        let v = c.mu + alpha * c.sigma;
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    Ok(AcquisitionChoice {
        chosen_index: best,
        chosen_point: candidates[best],
        ucb_value: best_val,
        candidate_scores,
    })
}
