use pam_node::hybrid::Signal;
use pam_node::par;
use pam_node::physics::{init_params, Side, P_ATM};
use pam_node::planner::{PlanResult, PlanRow};
use pam_node::plant::SyntheticPlant;
use pam_node::sysid::{delta_metric, paired_t_test, r2};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gas_law_inverts(frac in -0.9..0.9f64, gauge_kpa in 0.0..600.0f64, flexor in any::<bool>()) {
        let p = init_params();
        let side = if flexor { Side::Flexor } else { Side::Extensor };
        let x = frac * p.x_limit();
        let pa = gauge_kpa * 1e3 + P_ATM;
        let m = p.mass_from_pressure(side, pa, x).unwrap();
        let back = p.pressure_from_mass(side, m, x).unwrap();
        prop_assert!((back / pa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chambers_mirror(frac in -0.9..0.9f64) {
        let p = init_params();
        let x = frac * p.x_limit();
        let f = p.volume(Side::Flexor, x).unwrap();
        let e = p.volume(Side::Extensor, -x).unwrap();
        prop_assert!(f > 0.0 && (f / e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plant_force_is_antisymmetric(x_mm in -5.0..5.0f64, v_mm_s in -30.0..30.0f64, mf_g in 0.03..0.12f64, me_g in 0.03..0.12f64) {
        let plant = SyntheticPlant::default();
        let (x, v, mf, me) = (x_mm * 1e-3, v_mm_s * 1e-3, mf_g * 1e-3, me_g * 1e-3);
        let a = plant.joint_force(x, v, mf, me);
        let b = plant.joint_force(-x, -v, me, mf);
        prop_assert!((a + b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn delta_is_a_scaled_distance(a in 50.0..300.0f64, b in 50.0..300.0f64) {
        let d = delta_metric(a, b);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, delta_metric(b, a));
        prop_assert!((d - (a - b).abs() * 2.0).abs() < 1e-9);
    }

    #[test]
    fn t_test_shift_and_swap(v in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..12), shift in -50.0..50.0f64) {
        let a: Vec<f64> = v.iter().map(|p| p.0).collect();
        let b: Vec<f64> = v.iter().map(|p| p.1).collect();
        let t = paired_t_test(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&t.p));
        let sa: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let sb: Vec<f64> = b.iter().map(|x| x + shift).collect();
        let ts = paired_t_test(&sa, &sb).unwrap();
        prop_assert!((ts.p - t.p).abs() < 1e-6);
        let sw = paired_t_test(&b, &a).unwrap();
        prop_assert!((sw.t + t.t).abs() < 1e-9 * t.t.abs().max(1.0) && (sw.p - t.p).abs() < 1e-12);
    }

    #[test]
    fn r2_of_affine_shift_drops(m in prop::collection::vec(-100.0..100.0f64, 3..40), off in 0.1..10.0f64) {
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        prop_assume!(m.iter().any(|v| (v - mean).abs() > 1e-6));
        prop_assert_eq!(r2(&m, &m).unwrap(), 1.0);
        let p: Vec<f64> = m.iter().map(|v| v + off).collect();
        prop_assert!(r2(&p, &m).unwrap() < 1.0);
    }

    #[test]
    fn signal_stays_in_sample_hull(values in prop::collection::vec(-5.0..5.0f64, 2..50), t in -1.0..10.0f64) {
        let s = Signal::uniform(0.0, 0.1, values.clone());
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let v = s.at(t);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn parallel_map_matches_sequential(v in prop::collection::vec(any::<i64>(), 0..300)) {
        prop_assert_eq!(par::map(&v, |x| x.wrapping_mul(31) ^ 7), par::map_sequential(&v, |x| x.wrapping_mul(31) ^ 7));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn plan_csv_round_trips(rows in prop::collection::vec((0.0..100.0f64, -2.0..2.0f64, 100.0..200.0f64, 0.01..0.2f64, 0.01..0.2f64, any::<bool>()), 1..40)) {
        let plan = PlanResult {
            rows: rows
                .iter()
                .map(|&(t, x, k, mf, me, ok)| PlanRow {
                    t_s: t,
                    xd_mm: x,
                    kd_n_mm: k,
                    mf_g: mf,
                    me_g: me,
                    khat_n_mm: k * 1.01,
                    residual_n: -0.25 * x,
                    pf_kpa: 300.0 * mf,
                    pe_kpa: 300.0 * me,
                    feasible: ok,
                })
                .collect(),
        };
        let back = PlanResult::from_csv(&plan.to_csv().unwrap()).unwrap();
        prop_assert_eq!(back, plan);
    }
}
