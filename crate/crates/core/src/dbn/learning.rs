use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stats::{gmm_fit, weighted_moments, MvGaussian, COV_EPS, GMM_RESTARTS};

use super::inference::{posteriors_with, Densities, Lattice, Posteriors};
use super::{normalize_in_place, DbnModel, Demonstration};

/// Builds the initial model: one action state per keyframe slot
/// (`L_a = max keyframe count`), GMM-initialized emissions, uniform
/// priors, transitions and terminals.
pub fn init_model<R: Rng + ?Sized>(demos: &[Demonstration], n_goal: usize, rng: &mut R) -> Result<DbnModel> {
    let n_action = demos
        .iter()
        .map(Demonstration::len)
        .max()
        .ok_or_else(|| Error::InsufficientData("no demonstrations".into()))?;
    init_model_with_states(demos, n_action, n_goal, GMM_RESTARTS, rng)
}

/// [`init_model`] with an explicit action-state count.
pub fn init_model_with_states<R: Rng + ?Sized>(
    demos: &[Demonstration],
    n_action: usize,
    n_goal: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<DbnModel> {
    if demos.is_empty() {
        return Err(Error::InsufficientData("no demonstrations".into()));
    }
    if n_goal == 0 || n_action == 0 {
        return Err(Error::InvalidArgument("state counts must be positive".into()));
    }
    let actions: Vec<DVector<f64>> = demos
        .iter()
        .flat_map(|d| d.keyframes().iter().map(|k| DVector::from_column_slice(&k.action)))
        .collect();
    let goals: Vec<DVector<f64>> = demos
        .iter()
        .flat_map(|d| d.keyframes().iter().map(|k| DVector::from_column_slice(&k.goal)))
        .collect();
    let emit_a = gmm_fit(&actions, n_action, restarts, rng)?
        .components
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    let emit_g = gmm_fit(&goals, n_goal, restarts, rng)?
        .components
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    DbnModel::uniform(emit_a, emit_g)
}

/// One EM iteration: the re-estimated model and the log-likelihood of the
/// model that went in.
#[derive(Clone, Debug)]
pub struct EmStep {
    pub model: DbnModel,
    pub loglik: f64,
}

/// A single Baum-Welch style iteration on the product chain.
pub fn em_step(model: &DbnModel, demos: &[Demonstration]) -> Result<EmStep> {
    em_iteration(model, demos, 0)
}

/// Runs EM until the log-likelihood gain drops below `tol` or `max_iters`
/// M-steps have been applied. The last history entry is always the
/// log-likelihood of the returned model.
pub fn em_fit(model: &DbnModel, demos: &[Demonstration], max_iters: usize, tol: f64) -> Result<(DbnModel, Vec<f64>)> {
    check_demos(model, demos)?;
    let mut current = model.clone();
    let mut history: Vec<f64> = Vec::new();
    for it in 0..max_iters {
        let step = em_iteration(&current, demos, it)?;
        if let Some(&prev) = history.last() {
            if step.loglik - prev < tol {
                history.push(step.loglik);
                return Ok((current, history));
            }
        }
        history.push(step.loglik);
        current = step.model;
    }
    history.push(total_loglik(&current, demos)?);
    Ok((current, history))
}

/// Sum of sequence log-likelihoods.
pub(crate) fn total_loglik(model: &DbnModel, demos: &[Demonstration]) -> Result<f64> {
    let lat = Lattice::new(model);
    let dens = Densities::new(model)?;
    Ok(demos
        .iter()
        .map(|d| posteriors_with(&lat, &dens, d.keyframes()).loglik)
        .sum())
}

fn check_demos(model: &DbnModel, demos: &[Demonstration]) -> Result<()> {
    model.validate()?;
    if demos.is_empty() {
        return Err(Error::InsufficientData("no demonstrations".into()));
    }
    Ok(())
}

fn em_iteration(model: &DbnModel, demos: &[Demonstration], iteration: usize) -> Result<EmStep> {
    check_demos(model, demos)?;
    let lat = Lattice::new(model);
    let dens = Densities::new(model)?;
    // Ordered collect keeps the reduction order fixed.
    let post: Vec<Posteriors> = demos
        .par_iter()
        .map(|d| posteriors_with(&lat, &dens, d.keyframes()))
        .collect();
    let finite = post.iter().all(|p| {
        p.loglik.is_finite()
            && p.gamma.iter().flatten().all(|v| v.is_finite())
            && p.xi_sum.iter().all(|v| v.is_finite())
    });
    if !finite {
        return Err(Error::NumericalFailure { iteration });
    }
    let loglik: f64 = post.iter().map(|p| p.loglik).sum();

    let la = model.n_action();
    let lg = model.n_goal();
    let n = la * lg;
    let n_demos = demos.len() as f64;
    let mut next = model.clone();

    // Priors and terminals from first/last-step marginals.
    let mut prior_a = vec![0.0; la];
    let mut prior_g = vec![0.0; lg];
    let mut term_a = vec![0.0; la];
    let mut term_g = vec![0.0; lg];
    for p in &post {
        let first = &p.gamma[0];
        let last = p.gamma.last().expect("non-empty sequence");
        for s in 0..n {
            let (i, j) = lat.split(s);
            prior_a[i] += first[s] / n_demos;
            prior_g[j] += first[s] / n_demos;
            term_a[i] += last[s] / n_demos;
            term_g[j] += last[s] / n_demos;
        }
    }
    for v in [&mut prior_a, &mut prior_g, &mut term_a, &mut term_g] {
        normalize_in_place(v);
    }
    next.prior_a = prior_a;
    next.prior_g = prior_g;
    next.term_a = term_a;
    next.term_g = term_g;

    // Tensors: marginalize the pairwise posteriors over the other chain's
    // next state.
    let mut xi = vec![0.0; n * n];
    for p in &post {
        for (acc, v) in xi.iter_mut().zip(&p.xi_sum) {
            *acc += v;
        }
    }
    for i in 0..la {
        for j in 0..lg {
            let s = i * lg + j;
            let row = &xi[s * n..(s + 1) * n];
            let occupancy: f64 = row.iter().sum();
            if !(occupancy > 0.0) {
                continue;
            }
            let ra = next.trans_a.row_mut(i, j);
            for (k, r) in ra.iter_mut().enumerate() {
                *r = (0..lg).map(|l| row[k * lg + l]).sum::<f64>() / occupancy;
            }
            normalize_in_place(ra);
            let rg = next.trans_g.row_mut(i, j);
            for (l, r) in rg.iter_mut().enumerate() {
                *r = (0..la).map(|k| row[k * lg + l]).sum::<f64>() / occupancy;
            }
            normalize_in_place(rg);
        }
    }

    // Emissions from per-chain occupancies over all pooled observations.
    let mut obs_a = Vec::new();
    let mut obs_g = Vec::new();
    let mut occ_a: Vec<Vec<f64>> = vec![Vec::new(); la];
    let mut occ_g: Vec<Vec<f64>> = vec![Vec::new(); lg];
    for (d, p) in demos.iter().zip(&post) {
        for (kf, g) in d.keyframes().iter().zip(&p.gamma) {
            obs_a.push(DVector::from_column_slice(&kf.action));
            obs_g.push(DVector::from_column_slice(&kf.goal));
            for i in 0..la {
                occ_a[i].push((0..lg).map(|j| g[i * lg + j]).sum());
            }
            for j in 0..lg {
                occ_g[j].push((0..la).map(|i| g[i * lg + j]).sum());
            }
        }
    }
    for (slot, w) in next.emit_a.iter_mut().zip(&occ_a) {
        if w.iter().sum::<f64>() <= 1e-12 {
            continue;
        }
        if let Some((mean, cov)) = weighted_moments(&obs_a, w, COV_EPS) {
            *slot = MvGaussian::new(mean, cov)?;
        }
    }
    for (slot, w) in next.emit_g.iter_mut().zip(&occ_g) {
        if w.iter().sum::<f64>() <= 1e-12 {
            continue;
        }
        if let Some((mean, cov)) = weighted_moments(&obs_g, w, COV_EPS) {
            *slot = MvGaussian::new(mean, cov)?;
        }
    }

    Ok(EmStep { model: next, loglik })
}
