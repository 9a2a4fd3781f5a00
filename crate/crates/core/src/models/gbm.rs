//! Euler scheme of a geometric Brownian motion with path-dependent payoffs.
//!
//! A joint draw simulates Gaussian increments on the finest grid and feeds
//! each coarser scheme with sums of consecutive fine increments, so all
//! levels share one Brownian path.

use serde::{Deserialize, Serialize};

use crate::engine::{LevelSampler, MAX_JOINT};
use crate::error::{Error, Result};
use crate::rng::{normal_cdf, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub s0: f64,
    pub r: f64,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub t: f64,
}

impl GbmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.t > 0.0 && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter("GBM needs s0 > 0, T > 0, sigma >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "payoff", rename_all = "lowercase")]
pub enum Payoff {
    /// `e^(-rT) (S_T - K)_+`
    Call { strike: f64 },
    /// `e^(-rT) (S_T - lambda min_t S_t)_+` over the discrete path.
    Lookback { lambda: f64 },
    /// `e^(-rT) (S_T - K)_+ 1{max_t S_t <= B}` over the discrete path.
    Barrier { strike: f64, barrier: f64 },
    /// `S_T`, handy for drift checks.
    Terminal,
}

impl Payoff {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Payoff::Call { strike } => strike > 0.0,
            Payoff::Lookback { lambda } => lambda >= 1.0,
            Payoff::Barrier { strike, barrier } => strike > 0.0 && barrier > strike,
            Payoff::Terminal => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid payoff {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmEuler {
    pub gbm: GbmParams,
    pub payoff: Payoff,
}

impl GbmEuler {
    pub fn new(gbm: GbmParams, payoff: Payoff) -> Result<Self> {
        gbm.validate()?;
        payoff.validate()?;
        Ok(GbmEuler { gbm, payoff })
    }

    /// Number of Euler steps of the scheme with step `h`.
    pub fn steps(&self, h: f64) -> Result<u64> {
        integer_ratio(self.gbm.t, h).ok_or_else(|| {
            Error::InvalidParameter(format!("T / h = {} is not a positive integer", self.gbm.t / h))
        })
    }

    fn discount(&self) -> f64 {
        (-self.gbm.r * self.gbm.t).exp()
    }

    fn evaluate(&self, terminal: f64, min: f64, max: f64) -> f64 {
        match self.payoff {
            Payoff::Call { strike } => self.discount() * (terminal - strike).max(0.0),
            Payoff::Lookback { lambda } => self.discount() * (terminal - lambda * min).max(0.0),
            Payoff::Barrier { strike, barrier } => {
                if max <= barrier {
                    self.discount() * (terminal - strike).max(0.0)
                } else {
                    0.0
                }
            }
            Payoff::Terminal => terminal,
        }
    }
}

/// `a / b` when it is a positive integer up to rounding noise.
pub(crate) fn integer_ratio(a: f64, b: f64) -> Option<u64> {
    let x = a / b;
    let k = x.round();
    if k >= 1.0 && (x - k).abs() <= 1e-9 * k {
        Some(k as u64)
    } else {
        None
    }
}

pub(crate) fn check_divisible(ns: &[u64]) -> Result<u64> {
    if ns.is_empty() || ns.len() > MAX_JOINT {
        return Err(Error::InvalidParameter(format!("between 1 and {MAX_JOINT} refiners expected")));
    }
    let finest = *ns.iter().max().unwrap();
    if ns.iter().any(|&n| n == 0 || !finest.is_multiple_of(n)) {
        return Err(Error::InvalidParameter(format!("refiners {ns:?} do not all divide {finest}")));
    }
    Ok(finest)
}

impl LevelSampler for GbmEuler {
    fn check(&self, h: f64, ns: &[u64]) -> Result<()> {
        self.steps(h)?;
        check_divisible(ns)?;
        Ok(())
    }

    fn sample_levels(&self, h: f64, ns: &[u64], stream: &mut Stream, out: &mut [f64]) {
        let k = ns.len();
        let finest = *ns.iter().max().unwrap();
        let fine_steps = self.steps(h).unwrap_or(1) * finest;
        let dt = h / finest as f64;
        let sqrt_dt = dt.sqrt();
        let (r, sigma) = (self.gbm.r, self.gbm.sigma);

        let mut s = [self.gbm.s0; MAX_JOINT];
        let mut lo = [self.gbm.s0; MAX_JOINT];
        let mut hi = [self.gbm.s0; MAX_JOINT];
        let mut dw = [0.0; MAX_JOINT];
        let mut group = [0u64; MAX_JOINT];
        let mut step = [0.0; MAX_JOINT];
        for i in 0..k {
            group[i] = finest / ns[i];
            step[i] = dt * group[i] as f64;
        }
        for t in 1..=fine_steps {
            let inc = sqrt_dt * stream.gaussian();
            for i in 0..k {
                dw[i] += inc;
                if t % group[i] == 0 {
                    s[i] *= 1.0 + r * step[i] + sigma * dw[i];
                    dw[i] = 0.0;
                    lo[i] = lo[i].min(s[i]);
                    hi[i] = hi[i].max(s[i]);
                }
            }
        }
        for i in 0..k {
            out[i] = self.evaluate(s[i], lo[i], hi[i]);
        }
    }
}

/// Discounted Black-Scholes call price.
pub fn bs_call_price(gbm: &GbmParams, strike: f64) -> f64 {
    let forward = gbm.s0 * (gbm.r * gbm.t).exp();
    let df = (-gbm.r * gbm.t).exp();
    let vol = gbm.sigma * gbm.t.sqrt();
    if vol <= 0.0 {
        return df * (forward - strike).max(0.0);
    }
    let d1 = ((forward / strike).ln() + 0.5 * vol * vol) / vol;
    let d2 = d1 - vol;
    df * (forward * normal_cdf(d1) - strike * normal_cdf(d2))
}
