use dko_core::config::{parse_config, ScenarioConfig};
use dko_core::model::Side;
use dko_core::noise::{sample_increments, RngKey};
use dko_core::solver::{penalty_project_into, run_trajectory};
use dko_core::verify::validate_eps_list;
use proptest::prelude::*;

fn preset_name() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("heat-contact"), Just("pm-contact"), Just("fast-diffusion"), Just("ode-contact")]
}

fn side() -> impl Strategy<Value = Side> {
    prop_oneof![Just(Side::Upper), Just(Side::Lower)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_text_round_trips(
        name in preset_name(),
        n in 8usize..512,
        eps in 1e-3f64..1.0,
        seed in 0..=i64::MAX as u64,
        bins in 32usize..256,
    ) {
        let mut c = ScenarioConfig::preset(name).unwrap();
        c.mesh.n = n;
        c.mesh.xi_bins = bins;
        c.penalty.epsilon = eps;
        c.seeds.master_seed = seed;
        let text = c.to_canonical();
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn projection_conserves_and_stays_between(
        cells in prop::collection::vec((0.0f64..3.0, 0.0f64..3.0), 1..64),
        dt in 1e-6f64..1.0,
        eps in 1e-4f64..1.0,
        side in side(),
    ) {
        let (u_star, psi): (Vec<f64>, Vec<f64>) = cells.into_iter().unzip();
        let mut v = vec![0.0; u_star.len()];
        let mut r = vec![0.0; u_star.len()];
        penalty_project_into(&u_star, &psi, dt, eps, side, &mut v, &mut r);
        for i in 0..u_star.len() {
            prop_assert!((v[i] + r[i] - u_star[i]).abs() <= 1e-15 * (1.0 + u_star[i]));
            let (lo, hi) = (u_star[i].min(psi[i]), u_star[i].max(psi[i]));
            prop_assert!(v[i] >= lo - 1e-15 && v[i] <= hi + 1e-15);
            match side {
                Side::Upper => prop_assert!(r[i] >= 0.0),
                Side::Lower => prop_assert!(r[i] <= 0.0),
            }
        }
    }

    #[test]
    fn projection_is_order_preserving(
        a in 0.0f64..3.0,
        gap in 0.0f64..1.0,
        psi in 0.0f64..3.0,
        dt in 1e-6f64..1.0,
        eps in 1e-4f64..1.0,
        side in side(),
    ) {
        let mut v = [0.0; 2];
        let mut r = [0.0; 2];
        penalty_project_into(&[a, a + gap], &[psi, psi], dt, eps, side, &mut v, &mut r);
        prop_assert!(v[0] <= v[1]);
    }

    #[test]
    fn increments_are_pure_functions_of_key(
        seed in any::<u64>(),
        path in any::<u64>(),
        step in any::<u64>(),
        modes in 1usize..16,
    ) {
        let key = RngKey::new(seed, path);
        let a = sample_increments(key, step, modes, 1e-3).unwrap();
        let b = sample_increments(key, step, modes, 1e-3).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn geometric_lists_validate(first in 1e-3f64..1.0, ratio in 0.1f64..0.9, len in 4usize..8) {
        let list: Vec<f64> = (0..len).map(|k| first * ratio.powi(k as i32)).collect();
        prop_assert!(validate_eps_list(&list).is_ok());
        let mut reversed = list.clone();
        reversed.reverse();
        prop_assert!(validate_eps_list(&reversed).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn short_runs_keep_mass(name in preset_name(), eps in 0.01f64..0.5, path in 0u64..1000) {
        let mut c = ScenarioConfig::preset(name).unwrap();
        c.mesh.n = 16;
        c.time.horizon = 0.01;
        c.penalty.epsilon = eps;
        let sc = c.build().unwrap();
        let rec = run_trajectory(&sc, path).unwrap();
        prop_assert!(rec.mass_defect() <= 1e-12 * (1.0 + rec.initial_mass()));
    }
}
