use std::time::Instant;

use ml2r::engine::{chunked_moments, estimate_v1, replicate, replicate_until, run, sample_moments, LevelSampler, Moments};
use ml2r::models::{GbmEuler, GbmParams, Model, ModelConfig, Payoff};
use ml2r::plan::{make_plan, CostRegime, Kind, Overrides, Rounding, StructuralParams};
use ml2r::rng::StreamKey;
use ml2r::weights::geometric_weights;
use ml2r::Error;

fn gbm() -> GbmParams {
    GbmParams { s0: 100.0, r: 0.06, sigma: 0.4, t: 1.0 }
}

fn moments(n: u64, seed: u64, f: impl Fn(&mut ml2r::rng::Stream) -> f64 + Sync) -> Moments {
    chunked_moments(StreamKey::new(seed, 0, 0), n, f)
}

fn within(m: &Moments, target: f64, sds: f64) -> bool {
    (m.mean - target).abs() <= sds * (m.variance() / m.count as f64).sqrt()
}

#[test]
fn euler_terminal_mean_is_exact() {
    // E S_T of the Euler scheme with n steps is s0 (1 + r T/n)^n
    let m = GbmEuler::new(gbm(), Payoff::Terminal).unwrap();
    for n in [1u64, 4, 16] {
        let h = 1.0 / n as f64;
        let est = moments(200_000, 1, |s| m.sample_base(h, s));
        let exact = 100.0 * (1.0 + 0.06 * h).powi(n as i32);
        assert!(within(&est, exact, 4.0), "n = {n}: {} vs {exact}", est.mean);
    }
}

#[test]
fn coarse_component_has_the_coarse_marginal() {
    let m = Model::preset("call").unwrap();
    let joint = moments(100_000, 2, |s| m.sample_pair(0.5, 1, 4, s).0);
    let alone = chunked_moments(StreamKey::new(3, 0, 0), 100_000, |s| m.sample_base(0.5, s));
    let se = (joint.variance() / joint.count as f64 + alone.variance() / alone.count as f64).sqrt();
    assert!((joint.mean - alone.mean).abs() < 4.0 * se);
    assert!((joint.variance() / alone.variance() - 1.0).abs() < 0.05);
}

#[test]
fn strong_error_rate_of_the_call() {
    let m = Model::preset("call").unwrap();
    let hs = [0.5, 0.25, 0.125, 0.0625];
    let errs: Vec<f64> = hs
        .iter()
        .map(|&h| moments(50_000, 4, |s| {
            let (c, f) = m.sample_pair(h, 1, 2, s);
            (c - f) * (c - f)
        }).mean)
        .collect();
    let slope = (errs[0] / errs[3]).ln() / (hs[0] / hs[3]).ln();
    assert!((slope - 1.0).abs() < 0.2, "slope {slope}");
}

#[test]
fn calibration_of_the_synthetic_model() {
    let cfg = ModelConfig::from_text("model = \"synthetic\"\ncoeffs = []\nV1 = 4.0\ncoupling = \"identical\"\n").unwrap();
    let m = cfg.build().unwrap();
    // identical coupling: Y_h - Y_(h/M) = 2 (h^(1/2) - (h/M)^(1/2)) xi
    let v1 = estimate_v1(&m, 1.0, 4, 1.0, 100_000, 0).unwrap();
    let expected = 4.0 * (1.0 - 0.5f64).powi(2) / (1.0 + 0.5f64).powi(2);
    assert!((v1 / expected - 1.0).abs() < 0.03, "{v1} vs {expected}");
    let mom = sample_moments(&m, 1.0, 100_000, 0).unwrap();
    assert!((mom.variance() / 5.0 - 1.0).abs() < 0.03);
}

#[test]
fn ml2r_on_synthetic_model_is_unbiased_up_to_residual() {
    let cfg = ModelConfig::from_text("model = \"synthetic\"\ny0_mean = 2.0\ncoeffs = [1.0, 0.5, 0.25]\nV1 = 1.0\n").unwrap();
    let model = cfg.build().unwrap();
    let params = StructuralParams::new(1.0, 1.0, 1.0, 1.0);
    let pin = Overrides { m: Some(2), r: Some(3), n_h: Some(2), n: Some(20_000), ..Default::default() };
    let plan = make_plan(Kind::Ml2r, 0.05, &params, CostRegime::Sum, Rounding::Up, 10, &pin).unwrap();
    let st = replicate(&plan, &model, 32, 5, model.reference).unwrap();
    // residual bias of order 3 from the closed form
    let w = geometric_weights(1.0, 2, 3).unwrap();
    let h = 0.5f64;
    let exact: f64 = w
        .w
        .iter()
        .zip(&w.refiners)
        .map(|(wi, &n)| {
            let x = h / n as f64;
            wi * (x + 0.5 * x * x + 0.25 * x * x * x)
        })
        .sum();
    let se = (st.nu_tilde / st.l as f64).sqrt();
    assert!((st.mu_tilde.unwrap() - exact).abs() < 4.0 * se, "{:?} vs {exact}", st.mu_tilde);
}

#[test]
fn variance_estimate_matches_spread_of_estimates() {
    let model = Model::preset("synthetic").unwrap();
    let params = StructuralParams::new(1.0, 1.0, 1.0, 1.0);
    let pin = Overrides { m: Some(2), r: Some(3), n_h: Some(1), n: Some(2_000), ..Default::default() };
    let plan = make_plan(Kind::Ml2r, 0.1, &params, CostRegime::Sum, Rounding::Up, 10, &pin).unwrap();
    let st = replicate(&plan, &model, 400, 11, None).unwrap();
    let l = st.l as f64;
    let spread = st.runs.iter().map(|r| (r.estimate - st.mean_estimate).powi(2)).sum::<f64>() / (l - 1.0);
    let ratio = spread / st.nu_tilde;
    assert!((0.8..1.25).contains(&ratio), "ratio {ratio}");
}

#[test]
fn runs_are_reproducible_and_replications_differ() {
    let model = Model::preset("lookback").unwrap();
    let params = StructuralParams::new(0.5, 1.0, 3.58, 41.0);
    let plan = make_plan(Kind::Ml2r, 0.25, &params, CostRegime::Sum, Rounding::Up, 10, &Overrides::default()).unwrap();
    let a = run(&plan, &model, 3).unwrap();
    let b = run(&plan, &model, 3).unwrap();
    assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
    assert_eq!(a.level_counts(), plan.level_counts());
    let st = replicate(&plan, &model, 3, 3, None).unwrap();
    assert_eq!(st.runs[0].estimate.to_bits(), a.estimate.to_bits());
    assert_ne!(st.runs[1].estimate, st.runs[0].estimate);
}

#[test]
fn expired_deadline_is_reported() {
    let model = Model::preset("synthetic").unwrap();
    let params = StructuralParams::new(1.0, 1.0, 1.0, 1.0);
    let plan = make_plan(Kind::Mlmc, 0.1, &params, CostRegime::Sum, Rounding::Up, 10, &Overrides::default()).unwrap();
    let err = replicate_until(&plan, &model, 4, 0, None, Some(Instant::now())).unwrap_err();
    assert_eq!(err, Error::BudgetExceeded);
    assert!(replicate(&plan, &model, 1, 0, None).is_err());
}

#[test]
fn inadmissible_plans_are_rejected_before_sampling() {
    let model = Model::preset("call").unwrap();
    let params = StructuralParams { h_max: 0.3, ..StructuralParams::new(1.0, 1.0, 56.0, 876.0) };
    let plan = make_plan(Kind::Mlmc, 0.5, &params, CostRegime::Sum, Rounding::Up, 10, &Overrides::default()).unwrap();
    assert!(run(&plan, &model, 0).is_err());
}

#[test]
fn stream_uniforms_and_gaussians() {
    let u = moments(200_000, 9, |s| s.uniform());
    assert!(within(&u, 0.5, 4.0));
    assert!((u.variance() - 1.0 / 12.0).abs() < 2e-3);
    let g = moments(200_000, 9, |s| s.gaussian());
    assert!(within(&g, 0.0, 4.0));
    assert!((g.variance() - 1.0).abs() < 0.02);
    // neighbouring keys give unrelated streams
    let mut cross = 0.0;
    for i in 0..50_000 {
        let a = StreamKey::new(9, 0, 0).stream(i).gaussian();
        let b = StreamKey::new(9, 0, 1).stream(i).gaussian();
        cross += a * b;
    }
    assert!((cross / 50_000.0).abs() < 4.0 / 50_000f64.sqrt());
}
