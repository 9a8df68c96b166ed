//! Multivariate Gaussian kernels and GMM fitting.
//!
//! Covariances estimated anywhere in the crate go through [`regularize_cov`],
//! which floors the spectrum at [`COV_EPS`]. Keyframe datasets are tiny, so
//! sample covariances are routinely singular.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spectral floor applied to every estimated covariance.
pub const COV_EPS: f64 = 1e-6;

/// EM iterations per GMM restart.
pub const GMM_MAX_ITERS: usize = 200;

/// Default number of GMM restarts.
pub const GMM_RESTARTS: usize = 10;

const GMM_TOL: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A full-covariance multivariate Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct MvGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<GaussianRepr> for MvGaussian {
    type Error = Error;

    fn try_from(r: GaussianRepr) -> Result<Self> {
        let d = r.mean.len();
        if r.cov.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.cov.len(),
            });
        }
        let mut flat = Vec::with_capacity(d * d);
        for row in &r.cov {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        MvGaussian::new(DVector::from_vec(r.mean), DMatrix::from_row_slice(d, d, &flat))
    }
}

impl From<MvGaussian> for GaussianRepr {
    fn from(g: MvGaussian) -> Self {
        let d = g.dim();
        GaussianRepr {
            mean: g.mean.iter().copied().collect(),
            cov: (0..d).map(|i| (0..d).map(|j| g.cov[(i, j)]).collect()).collect(),
        }
    }
}

impl MvGaussian {
    /// Builds a Gaussian; the covariance is symmetrized but not regularized.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("zero-dimensional Gaussian".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows().max(cov.ncols()),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Gaussian parameter".into()));
        }
        Ok(Self {
            mean,
            cov: symmetrize(&cov),
        })
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let d = mean.len();
        if cov_row_major.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: cov_row_major.len(),
            });
        }
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(d, d, cov_row_major),
        )
    }

    /// Isotropic Gaussian `N(mean, var * I)`.
    pub fn isotropic(mean: &[f64], var: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(DVector::from_column_slice(mean), DMatrix::identity(d, d) * var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        Self::new(mean, self.cov.clone())
    }

    /// Precomputes the Cholesky factor for repeated density evaluation.
    pub fn log_density(&self) -> Result<LogDensity> {
        let chol = factor_spd(&self.cov)?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(LogDensity {
            mean: self.mean.clone(),
            chol: l,
            log_norm: -0.5 * (self.dim() as f64 * LN_2PI + log_det),
        })
    }

    /// Marginal over the listed coordinates, in the listed order.
    pub fn marginal(&self, idx: &[usize]) -> Result<Self> {
        check_indices(idx, self.dim())?;
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]);
        Self::new(mean, cov)
    }

    /// Conditional distribution of the remaining coordinates given
    /// `x[given] = values`. Returned coordinates keep their original order.
    pub fn conditional(&self, given: &[usize], values: &[f64]) -> Result<Self> {
        check_indices(given, self.dim())?;
        if values.len() != given.len() {
            return Err(Error::DimensionMismatch {
                expected: given.len(),
                got: values.len(),
            });
        }
        let rest: Vec<usize> = (0..self.dim()).filter(|i| !given.contains(i)).collect();
        if rest.is_empty() {
            return Err(Error::InvalidArgument("conditioning on every coordinate".into()));
        }
        let s_gg = DMatrix::from_fn(given.len(), given.len(), |r, c| self.cov[(given[r], given[c])]);
        let s_rg = DMatrix::from_fn(rest.len(), given.len(), |r, c| self.cov[(rest[r], given[c])]);
        let s_rr = DMatrix::from_fn(rest.len(), rest.len(), |r, c| self.cov[(rest[r], rest[c])]);
        let diff = DVector::from_iterator(given.len(), given.iter().zip(values).map(|(&i, v)| v - self.mean[i]));
        let chol = factor_spd(&s_gg)?;
        // gain = S_rg S_gg^{-1}
        let gain_t = chol.solve(&s_rg.transpose());
        let mean_r = DVector::from_iterator(rest.len(), rest.iter().map(|&i| self.mean[i]));
        let mean = mean_r + gain_t.transpose() * diff;
        let cov = &s_rr - &s_rg * gain_t;
        Self::new(mean, cov)
    }
}

/// Cached log-density evaluator for one Gaussian.
#[derive(Clone, Debug)]
pub struct LogDensity {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl LogDensity {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `log N(x; mean, cov)`. Panics if `x` has the wrong length; use
    /// [`mvn_logpdf`] for a checked call.
    pub fn logpdf(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "logpdf dimension mismatch");
        let mut diff = DVector::from_column_slice(x);
        diff -= &self.mean;
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// Log-density of `x` under `g`.
pub fn mvn_logpdf(x: &[f64], g: &MvGaussian) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: x.len(),
        });
    }
    Ok(g.log_density()?.logpdf(x))
}

/// Draws one sample. Consumes exactly `dim` standard normals from `rng`.
/// Singular (PSD) covariances are supported through an eigen square root.
pub fn mvn_sample<R: Rng + ?Sized>(g: &MvGaussian, rng: &mut R) -> DVector<f64> {
    let d = g.dim();
    let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    &g.mean + psd_sqrt(&g.cov) * z
}

/// Draws `n` samples in sequence.
pub fn mvn_sample_n<R: Rng + ?Sized>(g: &MvGaussian, n: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let root = psd_sqrt(&g.cov);
    let d = g.dim();
    (0..n)
        .map(|_| {
            let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            &g.mean + &root * z
        })
        .collect()
}

/// Lower-triangular square root when the matrix is positive definite,
/// otherwise the symmetric eigen root with negative eigenvalues clamped.
fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = Cholesky::new(cov.clone()) {
        return chol.l();
    }
    let eig = SymmetricEigen::new(symmetrize(cov));
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

/// Cholesky factorization with one `COV_EPS * I` retry.
pub(crate) fn factor_spd(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(cov.clone()) {
        return Ok(c);
    }
    let n = cov.nrows();
    Cholesky::new(cov + DMatrix::identity(n, n) * COV_EPS).ok_or(Error::NotPositiveDefinite)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrizes `cov` and floors its spectrum at `eps`.
///
/// The spectral floor is the constrained maximizer of the Gaussian likelihood
/// over `{cov >= eps I}`, so EM M-steps that use it stay monotone.
pub fn regularize_cov(cov: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let sym = symmetrize(cov);
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v >= eps) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(eps));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&rebuilt)
}

/// Numerically safe `ln(sum(exp(xs)))`; all `-inf` inputs give `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_indices(idx: &[usize], d: usize) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument("empty index set".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= d) {
        return Err(Error::InvalidArgument(format!(
            "index {bad} out of range for dimension {d}"
        )));
    }
    Ok(())
}

/// Weighted mean and spectrally floored covariance.
pub(crate) fn weighted_moments(
    data: &[DVector<f64>],
    weights: &[f64],
    eps: f64,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || data.is_empty() {
        return None;
    }
    let d = data[0].len();
    let mut mean = DVector::zeros(d);
    for (x, &w) in data.iter().zip(weights) {
        mean.axpy(w, x, 1.0);
    }
    mean /= total;
    let mut cov = DMatrix::zeros(d, d);
    for (x, &w) in data.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let diff = x - &mean;
        cov.ger(w, &diff, &diff, 1.0);
    }
    cov /= total;
    Some((mean, regularize_cov(&cov, eps)))
}

/// Result of [`gmm_fit`]: the best restart.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GmmFit {
    pub components: Vec<(f64, MvGaussian)>,
    pub loglik: f64,
    /// Log-likelihood after each EM iteration of the winning restart.
    pub history: Vec<f64>,
}

/// Fits a `k`-component full-covariance GMM, keeping the best of `restarts`
/// randomly seeded runs.
pub fn gmm_fit<R: Rng + ?Sized>(data: &[DVector<f64>], k: usize, restarts: usize, rng: &mut R) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if data.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} points for {k} components",
            data.len()
        )));
    }
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }

    let mut best: Option<GmmFit> = None;
    for _ in 0..restarts {
        let fit = gmm_single_run(data, k, rng)?;
        if best.as_ref().map_or(true, |b| fit.loglik > b.loglik) {
            best = Some(fit);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn gmm_single_run<R: Rng + ?Sized>(data: &[DVector<f64>], k: usize, rng: &mut R) -> Result<GmmFit> {
    let n = data.len();
    let seeds = seed_centers(data, k, rng);

    // Hard assignment to the nearest seed gives the first M-step.
    let mut resp = vec![vec![0.0; k]; n];
    for (x, r) in data.iter().zip(resp.iter_mut()) {
        let nearest = nearest_center(x, &seeds, data);
        r[nearest] = 1.0;
    }
    let global = weighted_moments(data, &vec![1.0; n], COV_EPS).expect("non-empty data");
    let mut comps: Vec<(f64, MvGaussian)> = seeds
        .iter()
        .map(|&s| (1.0 / k as f64, MvGaussian::new(data[s].clone(), global.1.clone())))
        .map(|(w, g)| g.map(|g| (w, g)))
        .collect::<Result<_>>()?;
    m_step(data, &resp, &mut comps)?;

    let mut history = Vec::new();
    for _ in 0..GMM_MAX_ITERS {
        let ll = e_step(data, &comps, &mut resp)?;
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= GMM_TOL * (1.0 + ll.abs()));
        history.push(ll);
        if converged {
            break;
        }
        m_step(data, &resp, &mut comps)?;
    }
    let loglik = *history.last().expect("at least one iteration");
    Ok(GmmFit {
        components: comps,
        loglik,
        history,
    })
}

/// Distance-weighted seeding (k-means++). When every remaining point
/// coincides with a chosen center, the lowest unused index is taken.
fn seed_centers<R: Rng + ?Sized>(data: &[DVector<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = data.len();
    let mut centers = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = data.iter().map(|x| (x - &data[centers[0]]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            (0..n).find(|i| !centers.contains(i)).expect("n >= k")
        };
        centers.push(next);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min((x - &data[next]).norm_squared());
        }
    }
    centers
}

fn nearest_center(x: &DVector<f64>, centers: &[usize], data: &[DVector<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, &s) in centers.iter().enumerate() {
        let d = (x - &data[s]).norm_squared();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn e_step(data: &[DVector<f64>], comps: &[(f64, MvGaussian)], resp: &mut [Vec<f64>]) -> Result<f64> {
    let dens: Vec<(f64, LogDensity)> = comps
        .iter()
        .map(|(w, g)| g.log_density().map(|ld| (w.ln(), ld)))
        .collect::<Result<_>>()?;
    let mut ll = 0.0;
    let mut buf = vec![0.0; comps.len()];
    for (x, r) in data.iter().zip(resp.iter_mut()) {
        for (b, (lw, ld)) in buf.iter_mut().zip(&dens) {
            *b = lw + ld.logpdf(x.as_slice());
        }
        let norm = log_sum_exp(&buf);
        if !norm.is_finite() {
            return Err(Error::InvalidArgument(
                "data point has zero likelihood under every component".into(),
            ));
        }
        for (ri, b) in r.iter_mut().zip(&buf) {
            *ri = (b - norm).exp();
        }
        ll += norm;
    }
    Ok(ll)
}

fn m_step(data: &[DVector<f64>], resp: &[Vec<f64>], comps: &mut [(f64, MvGaussian)]) -> Result<()> {
    let n = data.len() as f64;
    for (c, comp) in comps.iter_mut().enumerate() {
        let w: Vec<f64> = resp.iter().map(|r| r[c]).collect();
        let nk: f64 = w.iter().sum();
        comp.0 = nk / n;
        if nk <= 1e-12 * n {
            continue;
        }
        if let Some((mean, cov)) = weighted_moments(data, &w, COV_EPS) {
            comp.1 = MvGaussian::new(mean, cov)?;
        }
    }
    // Renormalize against rounding drift.
    let total: f64 = comps.iter().map(|c| c.0).sum();
    for comp in comps.iter_mut() {
        comp.0 /= total;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn logpdf_standard_normal_at_mean() {
        let g = MvGaussian::isotropic(&[0.0], 1.0).unwrap();
        assert!(close(mvn_logpdf(&[0.0], &g).unwrap(), -0.918_938_533_204_672_7, 1e-12));
    }

    #[test]
    fn logpdf_bivariate_standard_at_mean() {
        let g = MvGaussian::isotropic(&[0.0, 0.0], 1.0).unwrap();
        assert!(close(mvn_logpdf(&[0.0, 0.0], &g).unwrap(), -LN_2PI, 1e-12));
    }

    #[test]
    fn logpdf_scalar_closed_form() {
        // -0.5 ln(2 pi 4) - 1/8
        let expected = -0.5 * (2.0 * std::f64::consts::PI * 4.0).ln() - 0.125;
        let g = MvGaussian::isotropic(&[0.0], 4.0).unwrap();
        let got = mvn_logpdf(&[1.0], &g).unwrap();
        assert!(close(got, expected, 1e-12));
        assert!(close(got, -1.737_085_713_764_618, 1e-9));
    }

    #[test]
    fn logpdf_dimension_mismatch_errors() {
        let g = MvGaussian::isotropic(&[0.0, 0.0], 1.0).unwrap();
        assert!(matches!(mvn_logpdf(&[0.0], &g), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn logpdf_regularizes_singular_cov() {
        let g = MvGaussian::from_slices(&[0.0, 0.0], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(mvn_logpdf(&[0.0, 0.0], &g).unwrap().is_finite());
        let bad = MvGaussian::from_slices(&[0.0], &[-1.0]).unwrap();
        assert!(matches!(mvn_logpdf(&[0.0], &bad), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn logpdf_integrates_to_one_on_grid() {
        for (mu, var) in [(0.0, 1.0), (2.5, 1.0), (-1.0, 1.0)] {
            let g = MvGaussian::isotropic(&[mu], var).unwrap();
            let ld = g.log_density().unwrap();
            let h = 1e-3;
            let mut acc = 0.0;
            let mut x = mu - 10.0;
            while x <= mu + 10.0 {
                acc += ld.logpdf(&[x]).exp() * h;
                x += h;
            }
            assert!(close(acc, 1.0, 1e-3), "integral {acc}");
        }
    }

    #[test]
    fn sample_zero_cov_returns_mean() {
        let g = MvGaussian::from_slices(&[1.0, -2.0], &[0.0; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = mvn_sample(&g, &mut rng);
        assert_eq!(s.as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn sample_is_deterministic_per_seed() {
        let g = MvGaussian::isotropic(&[0.0, 1.0, 2.0], 0.5).unwrap();
        let a = mvn_sample(&g, &mut ChaCha8Rng::seed_from_u64(11));
        let b = mvn_sample(&g, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_matches_law_of_large_numbers() {
        let g = MvGaussian::isotropic(&[1.0, -1.0, 0.5], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples = mvn_sample_n(&g, 100_000, &mut rng);
        let mut acc = DVector::zeros(3);
        for s in &samples {
            acc += s;
        }
        acc /= samples.len() as f64;
        for i in 0..3 {
            assert!(close(acc[i], g.mean()[i], 0.05));
        }
    }

    #[test]
    fn regularized_cov_has_floor_and_symmetry() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let r = regularize_cov(&m, COV_EPS);
        assert!((&r - r.transpose()).amax() <= 1e-12);
        let min = SymmetricEigen::new(r).eigenvalues.min();
        assert!(min >= COV_EPS * (1.0 - 1e-6), "min eig {min}");
    }

    #[test]
    fn conditional_of_independent_blocks_is_marginal() {
        let g = MvGaussian::from_slices(&[1.0, 2.0, 3.0], &[2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 4.0]).unwrap();
        let c = g.conditional(&[0], &[10.0]).unwrap();
        assert_eq!(c.mean().as_slice(), &[2.0, 3.0]);
        assert!(close(c.cov()[(0, 0)], 3.0, 1e-12));
    }

    #[test]
    fn conditional_matches_bivariate_formula() {
        // rho = 0.5, unit variances: E[y|x] = 0.5 x, Var = 0.75
        let g = MvGaussian::from_slices(&[0.0, 0.0], &[1.0, 0.5, 0.5, 1.0]).unwrap();
        let c = g.conditional(&[0], &[2.0]).unwrap();
        assert!(close(c.mean()[0], 1.0, 1e-12));
        assert!(close(c.cov()[(0, 0)], 0.75, 1e-12));
    }

    #[test]
    fn gmm_single_component_is_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<DVector<f64>> = (0..37)
            .map(|i| DVector::from_vec(vec![(i as f64).sin() * 3.0, (i as f64 * 0.7).cos()]))
            .collect();
        let fit = gmm_fit(&data, 1, 3, &mut rng).unwrap();
        let mut mean = DVector::zeros(2);
        for x in &data {
            mean += x;
        }
        mean /= data.len() as f64;
        assert_eq!(fit.components.len(), 1);
        assert!((fit.components[0].1.mean() - mean).amax() <= 1e-9);
        assert!(close(fit.components[0].0, 1.0, 1e-12));
    }

    #[test]
    fn gmm_insufficient_data() {
        let data = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            gmm_fit(&data, 3, 10, &mut rng),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn gmm_separates_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data: Vec<DVector<f64>> = (0..100)
            .map(|i| {
                let c = if i < 50 { 0.0 } else { 10.0 };
                DVector::from_vec(vec![c + rng.sample::<f64, _>(StandardNormal)])
            })
            .collect();
        let fit = gmm_fit(&data, 2, GMM_RESTARTS, &mut rng).unwrap();
        let mut means: Vec<f64> = fit.components.iter().map(|c| c.1.mean()[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!(close(means[0], 0.0, 0.5) && close(means[1], 10.0, 0.5), "{means:?}");
        let wsum: f64 = fit.components.iter().map(|c| c.0).sum();
        assert!(close(wsum, 1.0, 1e-9));
    }

    #[test]
    fn gmm_history_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let data: Vec<DVector<f64>> = (0..60)
                .map(|i| {
                    let c = (i % 3) as f64 * 2.0;
                    DVector::from_vec(vec![
                        c + rng.sample::<f64, _>(StandardNormal),
                        -c + 0.5 * rng.sample::<f64, _>(StandardNormal),
                    ])
                })
                .collect();
            let fit = gmm_fit(&data, 3, 2, &mut rng).unwrap();
            for w in fit.history.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn gaussian_json_round_trip() {
        let g = MvGaussian::from_slices(&[1.0, 2.0], &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: MvGaussian = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
    }
}
