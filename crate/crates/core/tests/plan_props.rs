use ml2r::plan::*;
use ml2r::weights::{refiners, RefinerScheme};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = StructuralParams> {
    (0.5f64..2.0, 0.5f64..2.0, 0.1f64..100.0, 1.0f64..1000.0)
        .prop_map(|(alpha, beta, v1, var)| StructuralParams::new(alpha, beta, v1, var))
}

fn kind() -> impl Strategy<Value = Kind> {
    prop_oneof![Just(Kind::Ml2r), Just(Kind::Mlmc), Just(Kind::Crude), Just(Kind::Multistep)]
}

fn regime() -> impl Strategy<Value = CostRegime> {
    prop_oneof![Just(CostRegime::Sum), Just(CostRegime::Max)]
}

fn rounding() -> impl Strategy<Value = Rounding> {
    prop_oneof![Just(Rounding::Up), Just(Rounding::Nearest), Just(Rounding::Floor)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stratification_is_a_distribution(
        kind in kind(), p in params(), k in 1i32..8, regime in regime(), rounding in rounding()
    ) {
        let plan = make_plan(kind, 2f64.powi(-k), &p, regime, rounding, 10, &Overrides::default()).unwrap();
        let total: f64 = plan.q.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(plan.q.iter().all(|&q| q > 0.0));
        prop_assert!(plan.n >= 1 && plan.n_h >= 1);
        prop_assert_eq!(plan.q.len(), plan.active_columns().unwrap().len());
        prop_assert!(plan.cost().unwrap() > 0.0);
    }

    #[test]
    fn halving_epsilon_never_lowers_cost(kind in kind(), p in params(), k in 1i32..7, regime in regime()) {
        let eps = 2f64.powi(-k);
        let coarse = make_plan(kind, eps, &p, regime, Rounding::Up, 10, &Overrides::default()).unwrap();
        let fine = make_plan(kind, eps / 2.0, &p, regime, Rounding::Up, 10, &Overrides::default()).unwrap();
        prop_assert!(fine.cost().unwrap() >= coarse.cost().unwrap());
    }

    #[test]
    fn sample_size_decreases_in_epsilon_for_fixed_structure(
        p in params(), m in 2u64..8, r in 2usize..5, e1 in 0.01f64..0.5, e2 in 0.01f64..0.5
    ) {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let pin = Overrides { m: Some(m), r: Some(r), n_h: Some(1), ..Default::default() };
        let a = make_plan(Kind::Ml2r, lo, &p, CostRegime::Sum, Rounding::Up, 10, &pin).unwrap();
        let b = make_plan(Kind::Ml2r, hi, &p, CostRegime::Sum, Rounding::Up, 10, &pin).unwrap();
        prop_assert!(a.n >= b.n);
        prop_assert_eq!(&a.q, &b.q);
    }

    #[test]
    fn optimal_q_is_a_local_minimum(
        p in params(), m in 2u64..8, r in 2usize..5, regime in regime(),
        i in 0usize..5, j in 0usize..5, delta in 0.001f64..0.2
    ) {
        let ns = refiners(&RefinerScheme::Geometric(m), r).unwrap();
        let plan = plan_for_refiners(Kind::Ml2r, Kind::Ml2r.default_template(), 0.1, &p, &ns, regime, &Overrides::default()).unwrap();
        let t = plan.allocation().unwrap();
        let st = strata(&t, &ns, &p, plan.h(), regime);
        let q = optimal_q_from_strata(&st);
        let best = effort_bound(&st, &q);
        let (i, j) = (i % q.len(), j % q.len());
        prop_assume!(i != j);
        // move mass from j to i while staying on the simplex
        let moved = delta * q[j];
        let mut other = q.clone();
        other[i] += moved;
        other[j] -= moved;
        prop_assert!(effort_bound(&st, &other) >= best * (1.0 - 1e-12));
    }

    #[test]
    fn documents_round_trip_exactly(
        kind in kind(), p in params(), k in 1i32..8, regime in regime(), rounding in rounding()
    ) {
        let plan = make_plan(kind, 2f64.powi(-k), &p, regime, rounding, 10, &Overrides::default()).unwrap();
        let text = plan.to_text();
        let back = Plan::from_text(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.n, plan.n);
        prop_assert_eq!(back.q.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), plan.q.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.cost().unwrap().to_bits(), plan.cost().unwrap().to_bits());
    }
}

#[test]
fn two_level_stratification_by_hand() {
    // alpha = beta = theta = 1, h = 1, R = 2, M = 2: W_2 = 2, so
    // sigma_1 = 1 + 1 = 2, b_1 = 1 and sigma_2 = 2 (1 + 2^-1/2), b_2 = 3
    let p = StructuralParams::new(1.0, 1.0, 1.0, 1.0);
    let q = optimal_q(Kind::Ml2r.default_template(), &p, &[1, 2], 1.0, CostRegime::Sum).unwrap();
    let raw = [2.0, 2.0 * (1.0 + 0.5f64.sqrt()) / 3f64.sqrt()];
    let s = raw[0] + raw[1];
    assert!((q[0] - raw[0] / s).abs() < 1e-12);
    assert!((q[1] - raw[1] / s).abs() < 1e-12);
    assert!((q[0] - 0.50363).abs() < 1e-5);
}

#[test]
fn crude_bias_parameter_by_hand() {
    // h* = eps / sqrt(1 + 2 alpha) with c1 = 1, theta = 0
    let p = StructuralParams::new(1.0, 1.0, 0.0, 1.0);
    let plan = make_plan(Kind::Crude, 0.1, &p, CostRegime::Sum, Rounding::Up, 10, &Overrides::default()).unwrap();
    assert_eq!(plan.n_h, (3f64.sqrt() / 0.1).ceil() as u64);
    assert_eq!(plan.n, 150);
}

#[test]
fn max_regime_is_never_costlier() {
    let p = StructuralParams::new(1.0, 1.0, 7.2, 9.09);
    for k in 1..=8 {
        let eps = 2f64.powi(-k);
        for kind in [Kind::Ml2r, Kind::Mlmc] {
            let sum = make_plan(kind, eps, &p, CostRegime::Sum, Rounding::Up, 10, &Overrides::default()).unwrap();
            let max = make_plan(kind, eps, &p, CostRegime::Max, Rounding::Up, 10, &Overrides::default()).unwrap();
            assert!(max.cost().unwrap() <= sum.cost().unwrap());
        }
    }
}

#[test]
fn rejects_invalid_inputs() {
    let p = StructuralParams::new(1.0, 1.0, 1.0, 1.0);
    assert!(make_plan(Kind::Ml2r, 0.0, &p, CostRegime::Sum, Rounding::Up, 10, &Overrides::default()).is_err());
    assert!(make_plan(Kind::Ml2r, 0.1, &p, CostRegime::Sum, Rounding::Up, 1, &Overrides::default()).is_err());
    let bad = StructuralParams::new(1.0, 1.0, 1.0, -1.0);
    assert!(make_plan(Kind::Ml2r, 0.1, &bad, CostRegime::Sum, Rounding::Up, 10, &Overrides::default()).is_err());
    let q = Overrides { m: Some(2), r: Some(2), q: Some(vec![0.3, 0.3]), ..Default::default() };
    assert!(make_plan(Kind::Ml2r, 0.1, &p, CostRegime::Sum, Rounding::Up, 10, &q).is_err());
    assert!(Plan::from_text("kind = \"ml2r\"\n").is_err());
}
