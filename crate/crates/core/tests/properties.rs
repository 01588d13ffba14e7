use std::sync::Arc;

use proptest::prelude::*;

use flowlab::field::{FieldSpec, Linear, Trig, VectorField};
use flowlab::flow::{check_inverse_identity, TimeInterval};
use flowlab::gaussian::{ExpectationScheme, GaussianMeasure};
use flowlab::lab::{Experiment, ExperimentConfig};
use flowlab::orlicz::{duality_bound_check, log_plus, luxembourg_norm, OrliczFunction, Pairing};
use flowlab::transport::{solve_characteristics, Orientation, ScalarFn};

const GH: ExpectationScheme = ExpectationScheme::GaussHermite { level: 40 };

fn orlicz_function() -> impl Strategy<Value = OrliczFunction> {
    prop_oneof![
        (0.0..3.0f64, 0.0..2.0f64).prop_map(|(r, s)| OrliczFunction::zygmund(r, s).unwrap()),
        (0.0..2.0f64).prop_map(|g| OrliczFunction::exp_log(g).unwrap()),
        (0.0..1.5f64).prop_map(|a| OrliczFunction::phi_alpha(a).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_plus_is_at_least_one(t in 0.0..1e6f64) {
        prop_assert!(log_plus(t) >= 1.0);
        prop_assert!(log_plus(t) >= t.ln());
    }

    #[test]
    fn orlicz_functions_nondecreasing(p in orlicz_function(), a in 0.0..50.0f64, d in 0.0..50.0f64) {
        let lo = p.evaluate(a).unwrap();
        let hi = p.evaluate(a + d).unwrap();
        prop_assert!(hi >= lo * (1.0 - 1e-12), "{p:?}: P({a}) = {lo} > P({}) = {hi}", a + d);
    }

    #[test]
    fn log_evaluate_matches_evaluate(p in orlicz_function(), t in 0.01..20.0f64) {
        let direct = p.evaluate(t).unwrap().ln();
        let logged = p.log_evaluate(t).unwrap();
        prop_assert!((direct - logged).abs() <= 1e-9 * (1.0 + direct.abs()));
    }

    #[test]
    fn expectation_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, k in 0u32..5, w in 0.1..2.0f64) {
        let m = GaussianMeasure::new(1).unwrap();
        let f = move |x: &[f64]| x[0].powi(k as i32);
        let g = move |x: &[f64]| (w * x[0]).cos();
        let lhs = m.expect(|x| a * f(x) + b * g(x), &GH).unwrap().value;
        let rhs = a * m.expect(f, &GH).unwrap().value + b * m.expect(g, &GH).unwrap().value;
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn expectation_matches_gaussian_moments(k in 0u32..8) {
        let m = GaussianMeasure::new(1).unwrap();
        let got = m.expect(|x| x[0].powi(2 * k as i32), &GH).unwrap().value;
        let double_factorial: f64 = (1..=k).map(|j| (2 * j - 1) as f64).product();
        prop_assert!((got - double_factorial).abs() < 1e-9 * double_factorial);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn luxembourg_norm_is_homogeneous(p in orlicz_function(), c in 0.2..5.0f64, q in 0.0..1.5f64) {
        let m = GaussianMeasure::new(1).unwrap();
        let base = luxembourg_norm(move |x: &[f64]| 1.0 + x[0].abs().powf(q), p, &m, &GH, 1e-8).unwrap();
        let scaled = luxembourg_norm(move |x: &[f64]| c * (1.0 + x[0].abs().powf(q)), p, &m, &GH, 1e-8).unwrap();
        prop_assume!(base.is_finite() && scaled.is_finite());
        prop_assert!((scaled.value - c * base.value).abs() <= 1e-5 * c * base.value);
    }

    #[test]
    fn duality_holds_on_random_pairs(
        a in 0.1..3.0f64, k in 0.0..3.0f64, b in 0.1..3.0f64, q in 0.0..2.0f64, log_log in any::<bool>()
    ) {
        let m = GaussianMeasure::new(1).unwrap();
        let pairing = if log_log { Pairing::LogLogAgainstSubexponential } else { Pairing::LogAgainstExponential };
        let f = move |x: &[f64]| a * x[0].abs().powf(k);
        let g = move |x: &[f64]| b * x[0].abs().powf(q) + 0.1;
        let r = duality_bound_check(f, g, pairing, &m, &ExpectationScheme::GaussHermite { level: 60 }).unwrap();
        prop_assert!(r.applicable);
        prop_assert!(r.holds, "{r:?}");
    }

    #[test]
    fn rotation_flow_inverts(x in -5.0..5.0f64, y in -5.0..5.0f64, t in 0.01..2.0f64) {
        let rep = check_inverse_identity(&Linear::rotation(1.0), TimeInterval::new(0.0, t).unwrap(), &[vec![x, y]], 1e-10)
            .unwrap();
        prop_assert!(rep.max_error < 1e-7);
    }

    #[test]
    fn renormalized_solution_composes(x in -3.0..3.0f64, y in -3.0..3.0f64, tau in 0.0..0.5f64) {
        let field: Arc<dyn VectorField> = Arc::new(Trig::new(2, 4, 11, 1.0));
        let u0: ScalarFn = Arc::new(|p: &[f64]| (p[0] - 0.3 * p[1]).tanh());
        let sol = solve_characteristics(field, u0, Orientation::ForwardCauchy, 1e-10).unwrap();
        let theta = |u: f64| u * u * u - 2.0 * u;
        let renorm = sol.renormalized(theta);
        let u = sol.eval(tau, &[x, y]).unwrap();
        prop_assert!((renorm.eval(tau, &[x, y]).unwrap() - theta(u)).abs() < 1e-12);
        // bounded data stay bounded by the same constant
        prop_assert!(u.abs() <= 1.0);
    }

    #[test]
    fn config_round_trips(
        seed in any::<u64>(),
        tol in 1e-12..1e-4f64,
        alpha in 0.0..2.0f64,
        tau in 0.01..3.0f64,
        particles in 1usize..100_000,
        which in 0usize..Experiment::ALL.len(),
    ) {
        let cfg = ExperimentConfig {
            experiment: Experiment::ALL[which],
            field: FieldSpec::Blowup { kappa: 1.0 },
            interval: TimeInterval::new(0.0, tau).unwrap(),
            seed,
            tol,
            alpha,
            particles,
            seed_points: Some(vec![vec![1e6], vec![-0.5]]),
            ..Default::default()
        };
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
