//! Nested Monte Carlo for a put on a call.
//!
//! `Y_0 = e^(-r T1) (K1 - e^(-r tau) E[(S_T2 - K2)_+ | S_T1])_+` with `tau = T2 - T1`.
//! The bias parameter is `h = 1/K` where `K` is the inner sample size; the
//! coarse inner means of a joint draw reuse the first draws of the finest one.

use serde::{Deserialize, Serialize};

use crate::engine::{LevelSampler, MAX_JOINT};
use crate::error::{Error, Result};
use crate::models::gbm::{bs_call_price, check_divisible, integer_ratio, GbmParams};
use crate::plan::CostRegime;
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestedParams {
    pub gbm: GbmParams,
    #[serde(rename = "T1")]
    pub t1: f64,
    #[serde(rename = "T2")]
    pub t2: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
}

impl NestedParams {
    pub fn validate(&self) -> Result<()> {
        self.gbm.validate()?;
        if !(self.t1 > 0.0 && self.t1 < self.t2) {
            return Err(Error::InvalidParameter("nested model needs 0 < T1 < T2".into()));
        }
        Ok(())
    }

    fn tau(&self) -> f64 {
        self.t2 - self.t1
    }

    /// `e^(-r tau) E[(S_T2 - K2)_+ | S_T1 = x]`
    pub fn conditional_call(&self, x: f64) -> f64 {
        let gbm = GbmParams { s0: x, r: self.gbm.r, sigma: self.gbm.sigma, t: self.tau() };
        bs_call_price(&gbm, self.k2)
    }

    /// `S_T1` as a function of a standard Gaussian.
    pub fn outer(&self, z: f64) -> f64 {
        let g = &self.gbm;
        g.s0 * ((g.r - 0.5 * g.sigma * g.sigma) * self.t1 + g.sigma * self.t1.sqrt() * z).exp()
    }

    /// Outer payoff applied to a (discounted) inner value.
    pub fn outer_payoff(&self, inner_value: f64) -> f64 {
        (-self.gbm.r * self.t1).exp() * (self.k1 - inner_value).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NestedSampler {
    pub p: NestedParams,
}

impl NestedSampler {
    pub fn new(p: NestedParams) -> Result<Self> {
        p.validate()?;
        Ok(NestedSampler { p })
    }

    fn inner_size(h: f64, n: u64) -> Option<u64> {
        integer_ratio(n as f64, h)
    }
}

impl LevelSampler for NestedSampler {
    fn check(&self, h: f64, ns: &[u64]) -> Result<()> {
        check_divisible(ns)?;
        for &n in ns {
            Self::inner_size(h, n).ok_or_else(|| {
                Error::InvalidParameter(format!("inner size n / h = {} is not an integer", n as f64 / h))
            })?;
        }
        Ok(())
    }

    fn sample_levels(&self, h: f64, ns: &[u64], stream: &mut Stream, out: &mut [f64]) {
        let p = &self.p;
        let x = p.outer(stream.gaussian());
        let tau = p.tau();
        let drift = (p.gbm.r - 0.5 * p.gbm.sigma * p.gbm.sigma) * tau;
        let vol = p.gbm.sigma * tau.sqrt();
        let df = (-p.gbm.r * tau).exp();
        let mut sizes = [0u64; MAX_JOINT];
        for (s, &n) in sizes.iter_mut().zip(ns) {
            *s = Self::inner_size(h, n).unwrap_or(1);
        }
        let sizes = &sizes[..ns.len()];
        let largest = *sizes.iter().max().unwrap();
        let mut sum = 0.0;
        for k in 1..=largest {
            let s2 = x * (drift + vol * stream.gaussian()).exp();
            sum += (s2 - p.k2).max(0.0);
            for (o, &size) in out.iter_mut().zip(sizes) {
                if size == k {
                    *o = p.outer_payoff(df * sum / k as f64);
                }
            }
        }
    }

    fn preferred_regime(&self) -> CostRegime {
        CostRegime::Max
    }
}

/// `E Y_0` by quadrature over the outer Gaussian, using the closed-form inner price.
pub fn nested_reference(p: &NestedParams) -> f64 {
    // the integrand vanishes once the conditional call exceeds K1; locate that point
    let excess = |z: f64| p.conditional_call(p.outer(z)) - p.k1;
    let (mut lo, mut hi) = (-40.0, 40.0);
    if excess(lo) >= 0.0 {
        return 0.0;
    }
    if excess(hi) >= 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let upper = hi;
    let lower = (-40.0f64).min(upper - 1.0);
    let f = |z: f64| (p.k1 - p.conditional_call(p.outer(z))).max(0.0) * (-0.5 * z * z).exp();
    // composite Simpson on a smooth integrand
    let n = 40_000;
    let step = (upper - lower) / n as f64;
    let mut acc = f(lower) + f(upper);
    for i in 1..n {
        let z = lower + step * i as f64;
        acc += if i % 2 == 1 { 4.0 * f(z) } else { 2.0 * f(z) };
    }
    let integral = acc * step / 3.0 / (2.0 * std::f64::consts::PI).sqrt();
    (-p.gbm.r * p.t1).exp() * integral
}
