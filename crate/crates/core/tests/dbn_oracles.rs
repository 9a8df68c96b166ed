mod common;

use bopi2_core::dbn::*;
use bopi2_core::stats::MvGaussian;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_loglik_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..40 {
        let la = rng.random_range(1..=3);
        let lg = rng.random_range(1..=3);
        let t = rng.random_range(1..=4);
        let model = random_model(la, lg, &mut rng);
        let kfs = random_keyframes(t, &mut rng);
        let got = forward_loglik(&model, &kfs).unwrap();
        let want = enumerate_loglik(&model, &kfs);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn viterbi_matches_enumeration_with_and_without_actions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..40 {
        let la = rng.random_range(1..=3);
        let lg = rng.random_range(1..=3);
        let t = rng.random_range(1..=4);
        let model = random_model(la, lg, &mut rng);
        let kfs = random_keyframes(t, &mut rng);
        let a: Vec<Pose> = kfs.iter().map(|k| k.action).collect();
        let g: Vec<Features> = kfs.iter().map(|k| k.goal).collect();
        let obs_a = (case % 2 == 0).then_some(a.as_slice());
        let got = viterbi(&model, obs_a, &g).unwrap();
        let (want, best) = enumerate_viterbi(&model, obs_a, &g);
        let score = traj_score(&model, &got, obs_a, &g);
        assert!((score - best).abs() <= 1e-10 * best.abs().max(1.0));
        if got != want {
            // only a numerical tie may pick a different path
            assert!((score - traj_score(&model, &want, obs_a, &g)).abs() <= 1e-10 * best.abs().max(1.0));
        }
    }
}

#[test]
fn posteriors_sum_to_one_and_agree_with_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = random_model(3, 2, &mut rng);
    let kfs = random_keyframes(4, &mut rng);
    let p = posteriors(&model, &kfs).unwrap();
    assert!((p.loglik - forward_loglik(&model, &kfs).unwrap()).abs() < 1e-10);
    for row in &p.gamma {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let xi: f64 = p.xi_sum.iter().sum();
    assert!((xi - 3.0).abs() < 1e-9);
}

fn rows_are_distributions(m: &DbnModel) -> bool {
    let ok = |v: &[f64]| (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9 && v.iter().all(|&x| x >= 0.0);
    ok(&m.prior_a)
        && ok(&m.prior_g)
        && m.trans_a.rows().all(ok)
        && m.trans_g.rows().all(ok)
        && ok(&m.term_a)
        && ok(&m.term_g)
}

fn random_demos(n: usize, rng: &mut ChaCha8Rng) -> Vec<Demonstration> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..=5);
            Demonstration::new(random_keyframes(len, rng)).unwrap()
        })
        .collect()
}

#[test]
fn em_log_likelihood_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let la = rng.random_range(1..=3);
        let lg = rng.random_range(1..=3);
        let model = random_model(la, lg, &mut rng);
        let demos = random_demos(8, &mut rng);
        let mut current = model;
        let mut last = f64::NEG_INFINITY;
        for _ in 0..15 {
            let step = em_step(&current, &demos).unwrap();
            assert!(step.loglik >= last - 1e-8, "{} < {last}", step.loglik);
            assert!(rows_are_distributions(&step.model));
            last = step.loglik;
            current = step.model;
        }
        let (_, history) = em_fit(&current, &demos, 10, 0.0).unwrap();
        assert!(history.windows(2).all(|w| w[1] >= w[0] - 1e-8));
    }
}

/// Two action states and two goal states that alternate deterministically
/// up to the given noise.
fn cycle_model(stay: f64) -> DbnModel {
    let q = [1.0, 0.0, 0.0, 0.0];
    let emit_a = vec![
        MvGaussian::isotropic(&[0.0, 0.0, 0.0, q[0], q[1], q[2], q[3]], 1e-3).unwrap(),
        MvGaussian::isotropic(&[0.5, 0.0, 0.0, q[0], q[1], q[2], q[3]], 1e-3).unwrap(),
    ];
    let emit_g = vec![
        MvGaussian::isotropic(&[0.0; GOAL_DIM], 1e-2).unwrap(),
        MvGaussian::isotropic(&[1.0; GOAL_DIM], 1e-2).unwrap(),
    ];
    let mut m = DbnModel::uniform(emit_a, emit_g).unwrap();
    let flip = |from: usize| {
        if from == 0 {
            [stay, 1.0 - stay]
        } else {
            [1.0 - stay, stay]
        }
    };
    for i in 0..2 {
        for j in 0..2 {
            m.trans_a.row_mut(i, j).copy_from_slice(&flip(i));
            m.trans_g.row_mut(i, j).copy_from_slice(&flip(j));
        }
    }
    m
}

#[test]
fn most_likely_trajectory_follows_the_cycle() {
    let mut m = cycle_model(0.05);
    m.prior_a = vec![1.0, 0.0];
    m.prior_g = vec![1.0, 0.0];
    m.term_a = vec![0.0, 1.0];
    m.term_g = vec![0.0, 1.0];
    let t = sample_hidden_trajectory(&m, SampleMode::MostLikely, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(t.action_seq, vec![0, 1]);
    assert_eq!(t.goal_seq, vec![0, 1]);
    assert!(!t.truncated);
}

#[test]
fn generated_trajectory_interpolates_emission_means() {
    let m = cycle_model(0.05);
    let traj = HiddenTrajectory::new(vec![0, 1], vec![0, 1]).unwrap();
    let path = generate_trajectory(&m, &traj, 4).unwrap();
    assert_eq!(path.len(), 5);
    assert!((path[2][0] - 0.25).abs() < 1e-12);
    assert_eq!(path[4], m.action_mean(1));
}

#[test]
fn model_file_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = random_model(2, 3, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.prior_a, m.prior_a);
    assert_eq!(back.trans_g, m.trans_g);
    assert_eq!(back.emit_a[1].cov(), m.emit_a[1].cov());
}
