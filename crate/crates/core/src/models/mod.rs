//! Benchmark models: Euler schemes of a geometric Brownian motion with call,
//! lookback and barrier payoffs, a nested put-on-call and a synthetic model.

pub mod gbm;
pub mod nested;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::engine::LevelSampler;
use crate::error::{Error, Result};
use crate::plan::{CostRegime, StructuralParams};
use crate::rng::Stream;

pub use gbm::{bs_call_price, GbmEuler, GbmParams, Payoff};
pub use nested::{nested_reference, NestedParams, NestedSampler};
pub use synthetic::{Coupling, SyntheticParams, SyntheticSampler};

pub const MODEL_IDS: [&str; 5] = ["call", "lookback", "barrier", "nested", "synthetic"];

/// `E Y_0` of the nested preset, from [`nested_reference`].
pub const NESTED_REFERENCE: f64 = 0.7528275984136058;

/// Model description as read from a configuration document. Missing keys
/// fall back to the preset named by `model`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: String,
    pub s0: Option<f64>,
    pub r: Option<f64>,
    pub sigma: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<f64>,
    pub lambda: Option<f64>,
    #[serde(rename = "T1")]
    pub t1: Option<f64>,
    #[serde(rename = "T2")]
    pub t2: Option<f64>,
    #[serde(rename = "K1")]
    pub k1: Option<f64>,
    #[serde(rename = "K2")]
    pub k2: Option<f64>,
    pub coeffs: Option<Vec<f64>>,
    pub coupling: Option<Coupling>,
    pub y0_mean: Option<f64>,
    pub y0_std: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    #[serde(rename = "V1")]
    pub v1: Option<f64>,
    pub h_max: Option<f64>,
}

impl ModelConfig {
    pub fn preset(id: &str) -> ModelConfig {
        ModelConfig { model: id.to_string(), ..Default::default() }
    }

    pub fn from_text(text: &str) -> Result<ModelConfig> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("model configurations always serialise")
    }

    pub fn build(&self) -> Result<Model> {
        let or = |v: Option<f64>, d: f64| v.unwrap_or(d);
        let gbm = |s0, r, sigma, t| GbmParams {
            s0: or(self.s0, s0),
            r: or(self.r, r),
            sigma: or(self.sigma, sigma),
            t: or(self.t, t),
        };
        let model = match self.model.as_str() {
            "call" => {
                let g = gbm(100.0, 0.06, 0.4, 1.0);
                let k = or(self.k, 80.0);
                let reference = if self.is_preset_gbm(&g, 100.0, 0.06, 0.4, 1.0) && k == 80.0 {
                    29.4987
                } else {
                    bs_call_price(&g, k)
                };
                Model {
                    id: "call".into(),
                    sampler: ModelSampler::Gbm(GbmEuler::new(g, Payoff::Call { strike: k })?),
                    alpha: or(self.alpha, 1.0),
                    beta: or(self.beta, 1.0),
                    h_max: or(self.h_max, g.t),
                    reference: Some(reference),
                }
            }
            "lookback" => {
                let g = gbm(100.0, 0.15, 0.1, 1.0);
                let lambda = or(self.lambda, 1.1);
                let preset = self.is_preset_gbm(&g, 100.0, 0.15, 0.1, 1.0) && lambda == 1.1;
                Model {
                    id: "lookback".into(),
                    sampler: ModelSampler::Gbm(GbmEuler::new(g, Payoff::Lookback { lambda })?),
                    alpha: or(self.alpha, 0.5),
                    beta: or(self.beta, 1.0),
                    h_max: or(self.h_max, g.t),
                    reference: preset.then_some(8.89343),
                }
            }
            "barrier" => {
                let g = gbm(100.0, 0.0, 0.15, 1.0);
                let (k, b) = (or(self.k, 100.0), or(self.b, 120.0));
                let preset = self.is_preset_gbm(&g, 100.0, 0.0, 0.15, 1.0) && k == 100.0 && b == 120.0;
                Model {
                    id: "barrier".into(),
                    sampler: ModelSampler::Gbm(GbmEuler::new(g, Payoff::Barrier { strike: k, barrier: b })?),
                    alpha: or(self.alpha, 0.5),
                    beta: or(self.beta, 0.5),
                    h_max: or(self.h_max, g.t),
                    reference: preset.then_some(1.855225),
                }
            }
            "nested" => {
                let t2 = or(self.t2, 0.5);
                let p = NestedParams {
                    gbm: gbm(100.0, 0.03, 0.3, t2),
                    t1: or(self.t1, 1.0 / 12.0),
                    t2,
                    k1: or(self.k1, 6.5),
                    k2: or(self.k2, 100.0),
                };
                let sampler = NestedSampler::new(p)?;
                Model {
                    id: "nested".into(),
                    sampler: ModelSampler::Nested(sampler),
                    alpha: or(self.alpha, 1.0),
                    beta: or(self.beta, 1.0),
                    h_max: or(self.h_max, 1.0),
                    reference: Some(nested_reference(&p)),
                }
            }
            "synthetic" => {
                let p = SyntheticParams {
                    y0_mean: or(self.y0_mean, 0.0),
                    y0_std: or(self.y0_std, 1.0),
                    coeffs: self.coeffs.clone().unwrap_or_else(|| vec![1.0, 0.5, 0.25, 0.125]),
                    alpha: or(self.alpha, 1.0),
                    beta: or(self.beta, 1.0),
                    v1: or(self.v1, 1.0),
                    coupling: self.coupling.unwrap_or_default(),
                };
                Model {
                    id: "synthetic".into(),
                    alpha: p.alpha,
                    beta: p.beta,
                    h_max: or(self.h_max, 1.0),
                    reference: Some(p.y0_mean),
                    sampler: ModelSampler::Synthetic(SyntheticSampler::new(p)?),
                }
            }
            other => return Err(Error::UnknownModel(other.to_string())),
        };
        Ok(model)
    }

    fn is_preset_gbm(&self, g: &GbmParams, s0: f64, r: f64, sigma: f64, t: f64) -> bool {
        g.s0 == s0 && g.r == r && g.sigma == sigma && g.t == t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSampler {
    Gbm(GbmEuler),
    Nested(NestedSampler),
    Synthetic(SyntheticSampler),
}

/// A sampler together with its declared rates and reference value.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub id: String,
    pub sampler: ModelSampler,
    pub alpha: f64,
    pub beta: f64,
    pub h_max: f64,
    pub reference: Option<f64>,
}

impl Model {
    pub fn preset(id: &str) -> Result<Model> {
        ModelConfig::preset(id).build()
    }

    fn inner(&self) -> &dyn LevelSampler {
        match &self.sampler {
            ModelSampler::Gbm(s) => s,
            ModelSampler::Nested(s) => s,
            ModelSampler::Synthetic(s) => s,
        }
    }
}

impl LevelSampler for Model {
    fn check(&self, h: f64, ns: &[u64]) -> Result<()> {
        self.inner().check(h, ns)
    }

    fn sample_levels(&self, h: f64, ns: &[u64], stream: &mut Stream, out: &mut [f64]) {
        self.inner().sample_levels(h, ns, stream, out)
    }

    fn preferred_regime(&self) -> CostRegime {
        self.inner().preferred_regime()
    }
}

/// Frozen reference value `I_0` of a preset.
pub fn reference_price(id: &str) -> Result<f64> {
    match id {
        "call" => Ok(29.4987),
        "lookback" => Ok(8.89343),
        "barrier" => Ok(1.855225),
        "nested" => Ok(NESTED_REFERENCE),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Structural parameters published for the presets, used for plan reproduction.
pub fn published_params(id: &str) -> Result<StructuralParams> {
    match id {
        "call" => Ok(StructuralParams::new(1.0, 1.0, 56.0, 876.0)),
        "lookback" => Ok(StructuralParams::new(0.5, 1.0, 3.58, 41.0)),
        "barrier" => Ok(StructuralParams::new(0.5, 0.5, 5.30, 303.0)),
        "nested" => Ok(StructuralParams::new(1.0, 1.0, 7.20, 9.09)),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build() {
        for id in MODEL_IDS {
            let m = Model::preset(id).unwrap();
            assert_eq!(m.id, id);
            assert!(m.reference.is_some());
        }
        assert!(Model::preset("digital").is_err());
        assert_eq!(Model::preset("nested").unwrap().preferred_regime(), CostRegime::Max);
    }

    #[test]
    fn reference_values() {
        assert_eq!(reference_price("call").unwrap(), 29.4987);
        assert_eq!(reference_price("lookback").unwrap(), 8.89343);
        assert_eq!(reference_price("barrier").unwrap(), 1.855225);
        assert!((reference_price("nested").unwrap() - Model::preset("nested").unwrap().reference.unwrap()).abs() < 1e-9);
        assert!(reference_price("unknown").is_err());
    }

    #[test]
    fn config_documents() {
        let cfg = ModelConfig::from_text("model = \"barrier\"\nB = 130.0\n").unwrap();
        let m = cfg.build().unwrap();
        assert_eq!(m.reference, None);
        assert!(ModelConfig::from_text("model = \"call\"\nfoo = 1\n").is_err());
        let cfg = ModelConfig::from_text("model = \"synthetic\"\ncoeffs = [1.0, 2.0]\ncoupling = \"fresh\"\n").unwrap();
        let back = ModelConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        let call = ModelConfig::from_text("model = \"call\"\nK = 100.0\n").unwrap().build().unwrap();
        let g = GbmParams { s0: 100.0, r: 0.06, sigma: 0.4, t: 1.0 };
        assert_eq!(call.reference, Some(bs_call_price(&g, 100.0)));
    }
}
