//! Execution of plans: stratified multilevel sampling, empirical variance,
//! replications and calibration of the structural parameters.
//!
//! Work is split into fixed-size chunks whose partial moments are merged in
//! chunk order, so results do not depend on the number of threads.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::plan::{CostRegime, Plan};
use crate::rng::{Stream, StreamKey};

/// Samples per parallel work item.
pub const CHUNK: u64 = 1024;

/// Largest number of refiners a single joint draw may involve.
pub const MAX_JOINT: usize = 32;

/// Replication index reserved for calibration streams.
const CALIBRATION_REPLICATION: u64 = u64::MAX;

/// Coupled draws of `Y_{h/n}` for several refiners from one underlying randomness.
pub trait LevelSampler: Sync {
    /// Validates that `h` and the refiners `ns` are admissible.
    fn check(&self, h: f64, ns: &[u64]) -> Result<()>;

    /// Writes `Y_{h/ns[i]}` into `out[i]`, all built from `stream`.
    /// Only called after [`LevelSampler::check`] succeeded for the same arguments.
    fn sample_levels(&self, h: f64, ns: &[u64], stream: &mut Stream, out: &mut [f64]);

    fn sample_base(&self, h: f64, stream: &mut Stream) -> f64 {
        let mut out = [0.0];
        self.sample_levels(h, &[1], stream, &mut out);
        out[0]
    }

    fn sample_pair(&self, h: f64, n_coarse: u64, n_fine: u64, stream: &mut Stream) -> (f64, f64) {
        let mut out = [0.0; 2];
        self.sample_levels(h, &[n_coarse, n_fine], stream, &mut out);
        (out[0], out[1])
    }

    /// Cost units of one joint draw over `ns`.
    fn unit_cost_hint(&self, regime: CostRegime, ns: &[u64]) -> f64 {
        match regime {
            CostRegime::Sum => ns.iter().map(|&n| n as f64).sum(),
            CostRegime::Max => ns.iter().copied().max().unwrap_or(0) as f64,
        }
    }

    /// Cost regime matching the way the sampler spends work.
    fn preferred_regime(&self) -> CostRegime {
        CostRegime::Sum
    }
}

/// Streaming first and second moments, merged with the pairwise update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    /// Sum of squared deviations from the mean.
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let n = self.count + other.count;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.count as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.count as f64 * other.count as f64) / n as f64;
        Moments { count: n, mean, m2 }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

/// Moments of `f(stream_i)` over `count` samples of one key, chunked and merged in order.
pub fn chunked_moments<F>(key: StreamKey, count: u64, f: F) -> Moments
where
    F: Fn(&mut Stream) -> f64 + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut m = Moments::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(count) {
                let mut s = key.stream(i);
                m.push(f(&mut s));
            }
            m
        })
        .collect();
    parts.into_iter().fold(Moments::default(), Moments::merge)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub estimate: f64,
    /// `sum_j sum_k (x_k - m_j)^2 / (N_j (N_j - 1))`
    pub nu_bar: f64,
    pub levels: Vec<LevelResult>,
    pub cost_units: f64,
    pub wall_time: Duration,
    pub seed: u64,
    pub replication: u64,
    /// Some `ceil(q_j N)` was below 2 and got raised.
    pub promoted: bool,
}

impl RunResult {
    pub fn level_counts(&self) -> Vec<u64> {
        self.levels.iter().map(|l| l.count).collect()
    }
}

/// One stratum of a plan: which refiners are drawn jointly and their coefficients.
#[derive(Debug, Clone)]
struct Stratum {
    ns: Vec<u64>,
    coeffs: Vec<f64>,
    count: u64,
    cost: f64,
}

fn strata_of(plan: &Plan) -> Result<Vec<Stratum>> {
    let t = plan.allocation()?;
    let ns = plan.refiners()?;
    let counts = plan.level_counts();
    let costs = plan.level_costs()?;
    let active = plan.active_columns()?;
    if counts.len() != active.len() {
        return Err(Error::DimensionMismatch { expected: active.len(), got: counts.len() });
    }
    Ok(active
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let support = t.support(j);
            Stratum {
                ns: support.iter().map(|&i| ns[i]).collect(),
                coeffs: support.iter().map(|&i| t.entry(i, j)).collect(),
                count: counts[k],
                cost: costs[k],
            }
        })
        .collect())
}

/// Runs replication 0 of a plan.
pub fn run(plan: &Plan, sampler: &dyn LevelSampler, seed: u64) -> Result<RunResult> {
    run_replication(plan, sampler, seed, 0)
}

/// Runs one replication. Stratum `j` reads the streams keyed by `(seed, replication, j)`.
pub fn run_replication(plan: &Plan, sampler: &dyn LevelSampler, seed: u64, replication: u64) -> Result<RunResult> {
    let strata = strata_of(plan)?;
    let h = plan.h();
    for s in &strata {
        if s.ns.len() > MAX_JOINT {
            return Err(Error::InvalidParameter(format!("more than {MAX_JOINT} refiners in one draw")));
        }
        sampler.check(h, &s.ns)?;
    }
    let promoted = plan.q.iter().any(|q| (q * plan.n as f64).ceil() < 2.0);
    let start = Instant::now();
    let mut levels = Vec::with_capacity(strata.len());
    for (j, s) in strata.iter().enumerate() {
        let key = StreamKey::new(seed, replication, j as u64);
        let m = chunked_moments(key, s.count, |stream| {
            let mut out = [0.0; MAX_JOINT];
            let out = &mut out[..s.ns.len()];
            sampler.sample_levels(h, &s.ns, stream, out);
            s.coeffs.iter().zip(out.iter()).map(|(c, y)| c * y).sum()
        });
        levels.push(LevelResult { count: m.count, mean: m.mean, variance: m.variance() });
    }
    let wall_time = start.elapsed();
    let estimate = levels.iter().map(|l| l.mean).sum();
    let nu_bar = levels.iter().map(|l| l.variance / l.count as f64).sum();
    let cost_units = strata.iter().map(|s| s.count as f64 * s.cost).sum::<f64>() / h;
    Ok(RunResult { estimate, nu_bar, levels, cost_units, wall_time, seed, replication, promoted })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationStats {
    pub l: usize,
    pub mean_estimate: f64,
    /// Empirical bias against the reference, when one is given.
    pub mu_tilde: Option<f64>,
    /// Mean of the per-run empirical variances.
    pub nu_tilde: f64,
    /// `sqrt(mu_tilde^2 + nu_tilde)`
    pub eps_tilde: Option<f64>,
    /// Mean wall time of one run.
    pub mean_time: Duration,
    pub mean_cost_units: f64,
    pub runs: Vec<RunResult>,
}

/// `L` independent runs, replication `l` using streams `(base_seed, l, .)`.
pub fn replicate(
    plan: &Plan,
    sampler: &dyn LevelSampler,
    l: usize,
    base_seed: u64,
    reference: Option<f64>,
) -> Result<ReplicationStats> {
    replicate_until(plan, sampler, l, base_seed, reference, None)
}

/// As [`replicate`], giving up with [`Error::BudgetExceeded`] once `deadline` has passed.
pub fn replicate_until(
    plan: &Plan,
    sampler: &dyn LevelSampler,
    l: usize,
    base_seed: u64,
    reference: Option<f64>,
    deadline: Option<Instant>,
) -> Result<ReplicationStats> {
    if l < 2 {
        return Err(Error::InvalidParameter(format!("L = {l} must be at least 2")));
    }
    let runs: Vec<Result<RunResult>> = (0..l as u64)
        .into_par_iter()
        .map(|rep| {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Err(Error::BudgetExceeded);
            }
            run_replication(plan, sampler, base_seed, rep)
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let lf = l as f64;
    let mean_estimate = runs.iter().map(|r| r.estimate).sum::<f64>() / lf;
    let nu_tilde = runs.iter().map(|r| r.nu_bar).sum::<f64>() / lf;
    let mu_tilde = reference.map(|i0| mean_estimate - i0);
    let eps_tilde = mu_tilde.map(|mu| (mu * mu + nu_tilde).sqrt());
    let mean_time = runs.iter().map(|r| r.wall_time).sum::<Duration>() / l as u32;
    let mean_cost_units = runs.iter().map(|r| r.cost_units).sum::<f64>() / lf;
    Ok(ReplicationStats { l, mean_estimate, mu_tilde, nu_tilde, eps_tilde, mean_time, mean_cost_units, runs })
}

/// `V1_hat = (1 + M^(-beta/2))^(-2) h^(-beta) E (Y_h - Y_{h/M})^2`
pub fn estimate_v1(
    sampler: &dyn LevelSampler,
    h: f64,
    m_probe: u64,
    beta: f64,
    sample_size: u64,
    seed: u64,
) -> Result<f64> {
    if sample_size < 1000 {
        return Err(Error::InvalidParameter(format!("sample size {sample_size} is below 1000")));
    }
    if m_probe < 2 {
        return Err(Error::InvalidParameter(format!("probe ratio {m_probe} must be at least 2")));
    }
    sampler.check(h, &[1, m_probe])?;
    let key = StreamKey::new(seed, CALIBRATION_REPLICATION, 1);
    let m = chunked_moments(key, sample_size, |s| {
        let (c, f) = sampler.sample_pair(h, 1, m_probe, s);
        (c - f) * (c - f)
    });
    Ok(m.mean / ((1.0 + (m_probe as f64).powf(-beta / 2.0)).powi(2) * h.powf(beta)))
}

/// Unbiased sample variance of `Y_h`.
pub fn estimate_var_y0(sampler: &dyn LevelSampler, h: f64, sample_size: u64, seed: u64) -> Result<f64> {
    Ok(sample_moments(sampler, h, sample_size, seed)?.variance())
}

/// Mean and variance of `Y_h` draws.
pub fn sample_moments(sampler: &dyn LevelSampler, h: f64, sample_size: u64, seed: u64) -> Result<Moments> {
    if sample_size < 1000 {
        return Err(Error::InvalidParameter(format!("sample size {sample_size} is below 1000")));
    }
    sampler.check(h, &[1])?;
    let key = StreamKey::new(seed, CALIBRATION_REPLICATION, 0);
    Ok(chunked_moments(key, sample_size, |s| sampler.sample_base(h, s)))
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{make_plan, Kind, Overrides, Rounding, StructuralParams};

    /// `Y_h = y0 + c h`, no randomness.
    struct Linear {
        y0: f64,
        c: f64,
    }

    impl LevelSampler for Linear {
        fn check(&self, _h: f64, _ns: &[u64]) -> Result<()> {
            Ok(())
        }
        fn sample_levels(&self, h: f64, ns: &[u64], _s: &mut Stream, out: &mut [f64]) {
            for (o, &n) in out.iter_mut().zip(ns) {
                *o = self.y0 + self.c * h / n as f64;
            }
        }
    }

    fn plan(kind: Kind, m: u64) -> Plan {
        let p = StructuralParams::new(1.0, 1.0, 1.0, 1.0);
        let o = Overrides { m: Some(m), r: Some(2), n_h: Some(1), ..Default::default() };
        make_plan(kind, 0.1, &p, CostRegime::Sum, Rounding::Up, 10, &o).unwrap()
    }

    #[test]
    fn deterministic_samplers() {
        let s = Linear { y0: 3.0, c: 2.0 };
        for m in [2, 3, 7] {
            let r = run(&plan(Kind::Ml2r, m), &s, 1).unwrap();
            assert!((r.estimate - 3.0).abs() < 1e-12);
            assert!(r.nu_bar.abs() < 1e-20);
        }
        let r = run(&plan(Kind::Mlmc, 2), &s, 1).unwrap();
        assert!((r.estimate - 4.0).abs() < 1e-12);
        let st = replicate(&plan(Kind::Mlmc, 2), &s, 4, 9, Some(3.5)).unwrap();
        assert!(st.nu_tilde.abs() < 1e-20);
        assert!((st.eps_tilde.unwrap() - st.mu_tilde.unwrap().abs()).abs() < 1e-12);
    }

    #[test]
    fn moments_merge_matches_direct() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1013) as f64 / 17.0).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        let merged = a.merge(b);
        assert_eq!(merged.count, whole.count);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.variance() - whole.variance()).abs() < 1e-9);
    }

    #[test]
    fn small_sample_calibration_is_rejected() {
        let s = Linear { y0: 1.0, c: 0.0 };
        assert!(estimate_v1(&s, 1.0, 10, 1.0, 10, 0).is_err());
        assert_eq!(estimate_var_y0(&s, 1.0, 5000, 0).unwrap(), 0.0);
        assert!(replicate(&plan(Kind::Mlmc, 2), &s, 1, 0, None).is_err());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let s = Linear { y0: 1.0, c: 1.0 };
        let p = plan(Kind::Ml2r, 2);
        let a = with_threads(1, || run(&p, &s, 5).unwrap()).unwrap();
        let b = with_threads(4, || run(&p, &s, 5).unwrap()).unwrap();
        assert_eq!((a.estimate, a.nu_bar, a.level_counts()), (b.estimate, b.nu_bar, b.level_counts()));
    }
}
