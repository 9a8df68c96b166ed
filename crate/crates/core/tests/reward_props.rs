mod common;

use bopi2_core::dbn::GOAL_DIM;
use bopi2_core::reward::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn on_simplex(p: &[f64]) -> bool {
    p.iter().all(|&x| (0.0..=1.0).contains(&x)) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn belief_stays_on_the_simplex(seed in any::<u64>(), la in 1usize..4, lg in 1usize..5, steps in 1usize..6, spread in prop::sample::select(vec![1.0, 10.0, 1e4])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(la, lg, &mut rng);
        let filter = BeliefFilter::new(&model).unwrap();
        let mut b = filter.init();
        for _ in 0..steps {
            let obs: [f64; GOAL_DIM] = std::array::from_fn(|_| rng.random_range(-spread..spread));
            let a = rng.random_range(0..la);
            b = filter.update(&b, &obs, a).unwrap().belief;
            prop_assert!(on_simplex(b.probs()), "{:?}", b.probs());
        }
    }

    #[test]
    fn step_reward_is_monotone_in_active_mass(p in 0.0f64..=1.0, q in 0.0f64..=1.0, r_max in 0.1f64..10.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let b = |m: f64| GoalBelief::new(vec![m, 1.0 - m]).unwrap();
        let (a, c) = (step_reward(&b(lo), 0, r_max), step_reward(&b(hi), 0, r_max));
        prop_assert!(a <= c);
        prop_assert!((0.0..=r_max).contains(&c));
    }

    #[test]
    fn constant_rewards_ignore_episode_length(r in 0.0f64..=1.0, n in 1usize..200, k in 1usize..10) {
        let short = episode_return(vec![r; n], 1.0).unwrap().normalized_return;
        let long = episode_return(vec![r; n * k], 1.0).unwrap().normalized_return;
        prop_assert!((short - long).abs() <= 1e-9);
        prop_assert!((short - 250.0 * r).abs() <= 1e-9);
    }
}

#[test]
fn observation_at_a_goal_mean_concentrates_belief() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut model = common::random_model(1, 2, &mut rng);
    model.emit_g[0] = bopi2_core::stats::MvGaussian::isotropic(&[0.0; GOAL_DIM], 0.01).unwrap();
    model.emit_g[1] = bopi2_core::stats::MvGaussian::isotropic(&[5.0; GOAL_DIM], 0.01).unwrap();
    for g in 0..2 {
        model.trans_g.row_mut(0, g).copy_from_slice(&[0.0, 1.0]);
    }
    let b = belief_update(&model, &belief_init(&model), &[5.0; GOAL_DIM], 0).unwrap();
    assert!(!b.fallback);
    assert!(b.belief.mass(1) > 0.99);
}
