mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use v2g_core::mpc::{build_prediction_matrices, build_setpoint_vector, evaluate_cost, solve_optimal_du, MpcConfig, MpcController, MpcState};

fn cfg(np: usize, nc: usize, r_w: f64) -> MpcConfig {
    MpcConfig::new(np, nc, r_w, 1e-5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stacked_prediction_matches_stepping(seed in any::<u64>(), np in 1usize..=12, nc_frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aug = demo_augmented(&mut rng);
        let nc = 1 + ((np - 1) as f64 * nc_frac) as usize;
        let pm = build_prediction_matrices(&aug, &cfg(np, nc, 0.0)).unwrap();
        let x = random_vector(&mut rng, aug.n_states(), 1.0);
        let du = random_vector(&mut rng, 3 * nc, 1.0);
        let y = pm.predict(&x, &du).unwrap();
        let y_ref = simulate_augmented(&aug, &x, &du, np, nc);
        prop_assert!((&y - &y_ref).amax() <= 1e-10 * (1.0 + y_ref.amax()));
    }

    #[test]
    fn optimal_moves_beat_perturbations(seed in any::<u64>(), r_w in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aug = demo_augmented(&mut rng);
        let c = cfg(10, 3, r_w);
        let pm = build_prediction_matrices(&aug, &c).unwrap();
        let x = random_vector(&mut rng, aug.n_states(), 1.0);
        let r = random_vector(&mut rng, 3, 2.0);
        let rs = build_setpoint_vector(&r, &c);
        let du = solve_optimal_du(&pm, r_w, &x, &rs).unwrap();
        let j = direct_cost(&aug, &x, &r, &du, 10, 3, r_w);
        prop_assert!((evaluate_cost(&pm, r_w, &x, &rs, &du).unwrap() - j).abs() <= 1e-9 * (1.0 + j));
        for _ in 0..50 {
            let scale = 10f64.powf(rng.gen_range(-4.0..1.0));
            let d = random_vector(&mut rng, 9, scale);
            prop_assert!(j <= direct_cost(&aug, &x, &r, &(&du + d), 10, 3, r_w) + 1e-12 * (1.0 + j));
        }
    }

    #[test]
    fn move_weight_shrinks_moves(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aug = demo_augmented(&mut rng);
        let x = random_vector(&mut rng, aug.n_states(), 1.0);
        let r = random_vector(&mut rng, 3, 2.0);
        let mut last = f64::INFINITY;
        for r_w in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let c = cfg(10, 3, r_w);
            let pm = build_prediction_matrices(&aug, &c).unwrap();
            let du = solve_optimal_du(&pm, r_w, &x, &build_setpoint_vector(&r, &c)).unwrap();
            prop_assert!(du.norm() <= last * (1.0 + 1e-9));
            last = du.norm();
        }
    }

    #[test]
    fn receding_horizon_applies_first_block(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_demo_model(&mut rng);
        let aug = v2g_core::lti::augment(&d);
        let ctl = MpcController::new(&aug, cfg(10, 3, 0.1), false).unwrap();
        let n = d.n_states();
        let x_prev = random_vector(&mut rng, n, 1.0);
        let x = random_vector(&mut rng, n, 1.0);
        let u_prev = random_vector(&mut rng, 3, 0.5);
        let y = d.c() * &x;
        let r = random_vector(&mut rng, 3, 1.0);
        let state = MpcState::new(x_prev.clone(), u_prev.clone(), y.clone());
        let (mv, next) = ctl.update(&state, &y, &x, &r).unwrap();

        let mut xa = DVector::zeros(n + 3);
        xa.rows_mut(0, n).copy_from(&(&x - &x_prev));
        xa.rows_mut(n, 3).copy_from(&y);
        let seq = ctl.optimal_sequence(&xa, &r).unwrap();
        prop_assert!((&mv.du - seq.rows(0, 3)).amax() < 1e-12 * (1.0 + seq.amax()));
        prop_assert!((&mv.mv - (&u_prev + &mv.du)).amax() == 0.0);
        prop_assert_eq!(next.x_prev, x);
        prop_assert_eq!(next.u_prev, mv.mv);
        prop_assert_eq!(next.k, 1);
    }

    #[test]
    fn input_limit_holds_and_increment_is_consistent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_demo_model(&mut rng);
        let aug = v2g_core::lti::augment(&d);
        let ctl = MpcController::new(&aug, cfg(10, 3, 0.0), false).unwrap().with_input_limit(1.0).unwrap();
        let n = d.n_states();
        let mut state = MpcState::new(DVector::zeros(n), DVector::zeros(3), DVector::zeros(3));
        let mut x = DVector::zeros(n);
        let r = random_vector(&mut rng, 3, 50.0);
        for _ in 0..20 {
            let y = d.c() * &x;
            let (mv, next) = ctl.update(&state, &y, &x, &r).unwrap();
            prop_assert!(mv.mv.amax() <= 1.0);
            prop_assert_eq!(&mv.mv, &(&state.u_prev + &mv.du));
            x = d.step(&x, &mv.mv, &DVector::zeros(3)).unwrap().0;
            state = next;
        }
    }
}
