//! Synthetic model with an exact weak error expansion and strong error.
//!
//! `Y_h = Y_0 + sum_k c_k h^(alpha k) + sqrt(V1) h^(beta/2) xi` with
//! `Y_0 ~ N(y0_mean, y0_std^2)`. The noise `xi` of the levels of a joint draw
//! is shared, alternates in sign, or is drawn afresh depending on the coupling.

use serde::{Deserialize, Serialize};

use crate::engine::LevelSampler;
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    /// `xi` alternates in sign from one level to the next.
    #[default]
    Anti,
    /// The same `xi` for every level.
    Identical,
    /// An independent `xi` per level.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub y0_mean: f64,
    pub y0_std: f64,
    pub coeffs: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "V1")]
    pub v1: f64,
    #[serde(default)]
    pub coupling: Coupling,
}

impl SyntheticParams {
    /// `E Y_h`
    pub fn mean(&self, h: f64) -> f64 {
        self.y0_mean + self.bias(h)
    }

    /// `E Y_h - E Y_0`
    pub fn bias(&self, h: f64) -> f64 {
        self.coeffs.iter().enumerate().map(|(k, c)| c * h.powf(self.alpha * (k + 1) as f64)).sum()
    }

    /// `||Y_h - Y_0||_2^2`, bias included.
    pub fn strong_error(&self, h: f64) -> f64 {
        self.v1 * h.powf(self.beta) + self.bias(h).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSampler {
    pub p: SyntheticParams,
}

impl SyntheticSampler {
    pub fn new(p: SyntheticParams) -> Result<Self> {
        if !(p.alpha > 0.0 && p.beta > 0.0 && p.v1 >= 0.0 && p.y0_std >= 0.0) {
            return Err(Error::InvalidParameter("synthetic model needs alpha, beta > 0 and V1, y0_std >= 0".into()));
        }
        Ok(SyntheticSampler { p })
    }
}

impl LevelSampler for SyntheticSampler {
    fn check(&self, h: f64, ns: &[u64]) -> Result<()> {
        if h.is_nan() || h <= 0.0 || ns.contains(&0) {
            return Err(Error::InvalidParameter("synthetic model needs h > 0 and positive refiners".into()));
        }
        Ok(())
    }

    fn sample_levels(&self, h: f64, ns: &[u64], stream: &mut Stream, out: &mut [f64]) {
        let p = &self.p;
        let y0 = p.y0_mean + p.y0_std * stream.gaussian();
        let shared = stream.gaussian();
        for (i, (o, &n)) in out.iter_mut().zip(ns).enumerate() {
            let hn = h / n as f64;
            let xi = match p.coupling {
                Coupling::Anti => {
                    if i % 2 == 0 {
                        shared
                    } else {
                        -shared
                    }
                }
                Coupling::Identical => shared,
                Coupling::Fresh => {
                    if i == 0 {
                        shared
                    } else {
                        stream.gaussian()
                    }
                }
            };
            *o = y0 + p.bias(hn) + p.v1.sqrt() * hn.powf(p.beta / 2.0) * xi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    fn params(coeffs: Vec<f64>, v1: f64) -> SyntheticParams {
        SyntheticParams { y0_mean: 1.0, y0_std: 0.5, coeffs, alpha: 1.0, beta: 1.0, v1, coupling: Coupling::Anti }
    }

    #[test]
    fn noiseless_levels_equal_the_limit() {
        let s = SyntheticSampler::new(params(vec![], 0.0)).unwrap();
        let mut out = [0.0; 3];
        s.sample_levels(1.0, &[1, 2, 4], &mut StreamKey::new(0, 0, 0).stream(0), &mut out);
        assert!(out[0] == out[1] && out[1] == out[2]);
    }

    #[test]
    fn closed_form_bias() {
        let p = params(vec![1.0, 1.0, 1.0], 0.0);
        assert!((p.bias(0.5) - 0.875).abs() < 1e-15);
    }

    #[test]
    fn anti_coupled_pair_difference() {
        let p = params(vec![], 4.0);
        let s = SyntheticSampler::new(p).unwrap();
        let (c, f) = s.sample_pair(1.0, 1, 10, &mut StreamKey::new(0, 0, 0).stream(3));
        let mut st = StreamKey::new(0, 0, 0).stream(3);
        let _y0 = st.gaussian();
        let xi = st.gaussian();
        assert!(((c - f) - 2.0 * xi * (1.0 + 10f64.powf(-0.5))).abs() < 1e-12);
    }
}
