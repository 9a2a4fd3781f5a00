//! Optimal estimator parameters: stratification `q`, bias parameter `h`,
//! depth `R`, sample size `N` and refiner root `M`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::{
    allocation_matrix, geometric_weights, pi_alpha_m, refiners, solve_weights, w_alpha_bound,
    AllocationMatrix, RefinerScheme, Template, WeightVector, DEFAULT_TRUNCATION,
};

/// Lower clamp applied to every stratum before normalisation.
pub const Q_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Crude,
    Multistep,
    Mlmc,
    Ml2r,
}

impl Kind {
    pub const ALL: [Kind; 4] = [Kind::Crude, Kind::Multistep, Kind::Mlmc, Kind::Ml2r];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Crude => "crude",
            Kind::Multistep => "multistep",
            Kind::Mlmc => "mlmc",
            Kind::Ml2r => "ml2r",
        }
    }

    pub fn default_template(self) -> Template {
        match self {
            Kind::Crude => Template::Crude,
            Kind::Multistep => Template::Multistep,
            Kind::Mlmc => Template::Mlmc,
            Kind::Ml2r => Template::Ml2rTelescopic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostRegime {
    /// Every scheme involved in a level is paid.
    #[default]
    Sum,
    /// Only the most refined scheme of a level is paid.
    Max,
}

impl CostRegime {
    pub fn name(self) -> &'static str {
        match self {
            CostRegime::Sum => "sum",
            CostRegime::Max => "max",
        }
    }
}

/// How the continuous depth `R_+` is turned into an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    Floor,
    Nearest,
    /// Round up; this is the mode that reproduces the published parameter tables.
    #[default]
    Up,
}

impl Rounding {
    pub fn name(self) -> &'static str {
        match self {
            Rounding::Floor => "floor",
            Rounding::Nearest => "nearest",
            Rounding::Up => "up",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Rounding::Floor => x.floor(),
            Rounding::Nearest => (x + 0.5).floor(),
            Rounding::Up => x.ceil(),
        }
    }
}

macro_rules! impl_enum_text {
    ($ty:ty, $($name:literal => $v:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($v),)+
                    other => Err(Error::Parse(format!("unknown {} `{other}`", stringify!($ty)))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

impl_enum_text!(Kind, "crude" => Kind::Crude, "multistep" => Kind::Multistep, "mlmc" => Kind::Mlmc, "ml2r" => Kind::Ml2r);
impl_enum_text!(CostRegime, "sum" => CostRegime::Sum, "max" => CostRegime::Max);
impl_enum_text!(Rounding, "floor" => Rounding::Floor, "nearest" => Rounding::Nearest, "up" => Rounding::Up, "ceil" => Rounding::Up);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralParams {
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "V1")]
    pub v1: f64,
    #[serde(rename = "varY0")]
    pub var_y0: f64,
    pub h_max: f64,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c_tilde: f64,
}

fn one() -> f64 {
    1.0
}

impl StructuralParams {
    pub fn new(alpha: f64, beta: f64, v1: f64, var_y0: f64) -> Self {
        StructuralParams { alpha, beta, v1, var_y0, h_max: 1.0, c1: 1.0, c_tilde: 1.0 }
    }

    /// `sqrt(V1 / var(Y0))`
    pub fn theta(&self) -> f64 {
        (self.v1 / self.var_y0).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must be positive")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        positive("varY0", self.var_y0)?;
        positive("h_max", self.h_max)?;
        if !(self.v1.is_finite() && self.v1 >= 0.0) {
            return Err(Error::InvalidParameter(format!("V1 = {} must be non-negative", self.v1)));
        }
        Ok(())
    }

    /// Warnings about structurally inconsistent inputs.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.c1 != 0.0 && self.beta > 2.0 * self.alpha {
            out.push(format!(
                "beta = {} exceeds 2 alpha = {} although c1 != 0",
                self.beta,
                2.0 * self.alpha
            ));
        }
        out
    }
}

/// Pins for any part of the optimisation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub m: Option<u64>,
    pub r: Option<usize>,
    pub n_h: Option<u64>,
    pub q: Option<Vec<f64>>,
    pub n: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub kind: Kind,
    pub template: Template,
    pub params: StructuralParams,
    pub epsilon: f64,
    pub r: usize,
    pub m: u64,
    /// `h = h_max / n_h`
    pub n_h: u64,
    /// One entry per active stratum (a single one for crude and multistep).
    pub q: Vec<f64>,
    pub n: u64,
    pub regime: CostRegime,
    pub rounding: Rounding,
    /// Explicit refiners; geometric `M^(i-1)` when absent.
    pub explicit_refiners: Option<Vec<u64>>,
    pub warnings: Vec<String>,
}

impl Plan {
    pub fn h(&self) -> f64 {
        self.params.h_max / self.n_h as f64
    }

    pub fn refiners(&self) -> Result<Vec<u64>> {
        match &self.explicit_refiners {
            Some(ns) => refiners(&RefinerScheme::Explicit(ns.clone()), self.r),
            None => refiners(&RefinerScheme::Geometric(self.m), self.r),
        }
    }

    pub fn weights(&self) -> Result<WeightVector> {
        solve_weights(self.params.alpha, &self.refiners()?)
    }

    pub fn allocation(&self) -> Result<AllocationMatrix> {
        let w = if self.template.needs_weights() { Some(self.weights()?) } else { None };
        allocation_matrix(self.template, self.r, w.as_ref())
    }

    /// Indices of the allocation columns that carry samples.
    pub fn active_columns(&self) -> Result<Vec<usize>> {
        let t = self.allocation()?;
        Ok(active_columns(&t))
    }

    /// Per-stratum cost units `b_j` (multiply by `1/h` for the cost of one draw).
    pub fn level_costs(&self) -> Result<Vec<f64>> {
        let t = self.allocation()?;
        let ns = self.refiners()?;
        Ok(active_columns(&t).into_iter().map(|j| column_cost(&t, j, &ns, self.regime)).collect())
    }

    /// `sum_j q_j b_j`
    pub fn unit_cost(&self) -> Result<f64> {
        Ok(self.q.iter().zip(self.level_costs()?).map(|(q, b)| q * b).sum())
    }

    /// Predicted cost `N sum_j q_j b_j / h`.
    pub fn cost(&self) -> Result<f64> {
        Ok(self.n as f64 * self.unit_cost()? / self.h())
    }

    /// `N_j = ceil(q_j N)`, raised to 2 so that per-level variances are defined.
    pub fn level_counts(&self) -> Vec<u64> {
        self.q.iter().map(|q| ((q * self.n as f64).ceil() as u64).max(2)).collect()
    }

    /// Bias predicted from the leading term of the weak error expansion.
    pub fn predicted_bias(&self) -> Result<f64> {
        let h = self.h();
        let p = &self.params;
        Ok(match self.kind {
            Kind::Crude => p.c1 * h.powf(p.alpha),
            Kind::Mlmc => {
                let n_r = *self.refiners()?.last().unwrap() as f64;
                p.c1 * (h / n_r).powf(p.alpha)
            }
            Kind::Ml2r | Kind::Multistep => {
                let c_r = p.c_tilde.powi(self.r as i32);
                self.weights()?.wtilde * c_r * h.powf(p.alpha * self.r as f64)
            }
        })
    }

    pub fn to_document(&self) -> PlanDocument {
        PlanDocument {
            kind: self.kind,
            template: self.template,
            epsilon: self.epsilon,
            alpha: self.params.alpha,
            beta: self.params.beta,
            v1: self.params.v1,
            var_y0: self.params.var_y0,
            h_max: self.params.h_max,
            c1: self.params.c1,
            c_tilde: self.params.c_tilde,
            r: self.r,
            m: self.m,
            h_inv: self.n_h,
            q: self.q.clone(),
            n: self.n,
            regime: self.regime,
            rounding: self.rounding,
            refiners: self.explicit_refiners.clone(),
        }
    }

    /// Serialises to the key-value plan document.
    pub fn to_text(&self) -> String {
        toml::to_string(&self.to_document()).expect("plan documents always serialise")
    }

    pub fn from_text(text: &str) -> Result<Plan> {
        let doc: PlanDocument = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        doc.into_plan()
    }
}

/// On-disk form of a plan. `h_inv` is the integer `h_max / h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub kind: Kind,
    pub template: Template,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "V1")]
    pub v1: f64,
    #[serde(rename = "varY0")]
    pub var_y0: f64,
    pub h_max: f64,
    pub c1: f64,
    pub c_tilde: f64,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "M")]
    pub m: u64,
    pub h_inv: u64,
    pub q: Vec<f64>,
    #[serde(rename = "N")]
    pub n: u64,
    pub regime: CostRegime,
    pub rounding: Rounding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refiners: Option<Vec<u64>>,
}

impl PlanDocument {
    pub fn into_plan(self) -> Result<Plan> {
        let params = StructuralParams {
            alpha: self.alpha,
            beta: self.beta,
            v1: self.v1,
            var_y0: self.var_y0,
            h_max: self.h_max,
            c1: self.c1,
            c_tilde: self.c_tilde,
        };
        params.validate()?;
        if self.h_inv == 0 || self.n == 0 || self.r == 0 {
            return Err(Error::Parse("h_inv, N and R must be positive".into()));
        }
        let plan = Plan {
            kind: self.kind,
            template: self.template,
            params,
            epsilon: self.epsilon,
            r: self.r,
            m: self.m,
            n_h: self.h_inv,
            q: self.q,
            n: self.n,
            regime: self.regime,
            rounding: self.rounding,
            explicit_refiners: self.refiners,
            warnings: Vec::new(),
        };
        let active = plan.active_columns()?.len();
        if plan.q.len() != active {
            return Err(Error::DimensionMismatch { expected: active, got: plan.q.len() });
        }
        Ok(plan)
    }
}

fn active_columns(t: &AllocationMatrix) -> Vec<usize> {
    (0..t.depth()).filter(|&j| t.columns[j].iter().any(|v| *v != 0.0)).collect()
}

/// Cost units of one draw of column `j`: `sum_i n_i 1{T_i^j != 0}` or the max.
pub fn column_cost(t: &AllocationMatrix, j: usize, ns: &[u64], regime: CostRegime) -> f64 {
    let support = t.support(j).into_iter().map(|i| ns[i] as f64);
    match regime {
        CostRegime::Sum => support.sum(),
        CostRegime::Max => support.fold(0.0, f64::max),
    }
}

/// Upper bound of the standard deviation of one draw of column `j`:
/// `sqrt(var Y0) (|sum_i T_i^j| + theta h^(beta/2) sum_i |T_i^j| n_i^(-beta/2))`.
pub fn column_sigma(t: &AllocationMatrix, j: usize, ns: &[u64], params: &StructuralParams, h: f64) -> f64 {
    let col = &t.columns[j];
    let total: f64 = col.iter().sum();
    let strong: f64 =
        col.iter().zip(ns).map(|(v, &n)| v.abs() * (n as f64).powf(-params.beta / 2.0)).sum();
    // zero-sum columns only see the strong error
    let total = if total.abs() < 1e-12 * col.iter().map(|v| v.abs()).sum::<f64>().max(1.0) {
        0.0
    } else {
        total.abs()
    };
    params.var_y0.sqrt() * (total + params.theta() * h.powf(params.beta / 2.0) * strong)
}

/// `(sigma_j, b_j)` for every active column.
pub fn strata(
    t: &AllocationMatrix,
    ns: &[u64],
    params: &StructuralParams,
    h: f64,
    regime: CostRegime,
) -> Vec<(f64, f64)> {
    active_columns(t)
        .into_iter()
        .map(|j| (column_sigma(t, j, ns, params, h), column_cost(t, j, ns, regime)))
        .collect()
}

/// Effort bound `(sum_j sigma_j^2 / q_j) (sum_j q_j b_j)` of a stratification.
pub fn effort_bound(strata: &[(f64, f64)], q: &[f64]) -> f64 {
    let var: f64 = strata.iter().zip(q).map(|((s, _), q)| s * s / q).sum();
    let cost: f64 = strata.iter().zip(q).map(|((_, b), q)| q * b).sum();
    var * cost
}

/// Minimiser of the effort bound: `q_j` proportional to `sigma_j / sqrt(b_j)`.
pub fn optimal_q_from_strata(strata: &[(f64, f64)]) -> Vec<f64> {
    let raw: Vec<f64> = strata.iter().map(|(s, b)| (s / b.sqrt()).max(0.0)).collect();
    let top = raw.iter().cloned().fold(0.0, f64::max);
    let clamped: Vec<f64> =
        raw.iter().map(|v| if top > 0.0 { (v / top).max(Q_FLOOR) } else { 1.0 }).collect();
    let s: f64 = clamped.iter().sum();
    clamped.into_iter().map(|v| v / s).collect()
}

/// Optimal stratification for a template, refiners and bias parameter.
pub fn optimal_q(
    template: Template,
    params: &StructuralParams,
    ns: &[u64],
    h: f64,
    regime: CostRegime,
) -> Result<Vec<f64>> {
    params.validate()?;
    let t = build_matrix(template, params.alpha, ns)?;
    Ok(optimal_q_from_strata(&strata(&t, ns, params, h, regime)))
}

fn build_matrix(template: Template, alpha: f64, ns: &[u64]) -> Result<AllocationMatrix> {
    let w = if template.needs_weights() { Some(solve_weights(alpha, ns)?) } else { None };
    allocation_matrix(template, ns.len(), w.as_ref())
}

fn variance_factor(kind: Kind, alpha: f64, r: usize) -> f64 {
    match kind {
        Kind::Crude | Kind::Mlmc => 1.0 + 1.0 / (2.0 * alpha),
        Kind::Ml2r | Kind::Multistep => 1.0 + 1.0 / (2.0 * alpha * r as f64),
    }
}

/// `N = ceil(f var-budget (sum_j sigma_j sqrt(b_j))^2 / (eps^2 sum_j q_j b_j))`
/// with `f = 1 + 1/(2 alpha R)` for extrapolated estimators and `1 + 1/(2 alpha)` otherwise.
pub fn optimal_n(kind: Kind, epsilon: f64, alpha: f64, r: usize, strata: &[(f64, f64)], q: &[f64]) -> Result<u64> {
    if strata.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: strata.len(), got: q.len() });
    }
    let s: f64 = strata.iter().map(|(sig, b)| sig * b.sqrt()).sum();
    let unit: f64 = strata.iter().zip(q).map(|((_, b), q)| q * b).sum();
    let n = variance_factor(kind, alpha, r) * s * s / (epsilon * epsilon * unit);
    if !n.is_finite() || n > 9.0e15 {
        return Err(Error::Overflow(format!("sample size {n}")));
    }
    Ok((n.ceil() as u64).max(1))
}

/// Continuous depth `R_+` before rounding.
pub fn depth_continuous(kind: Kind, epsilon: f64, params: &StructuralParams, m: u64) -> f64 {
    let a = params.alpha;
    let lm = (m as f64).ln();
    match kind {
        Kind::Crude => 1.0,
        Kind::Ml2r | Kind::Multistep => {
            let big_a = (1.0 + 4.0 * a).sqrt();
            let x = 0.5 + (params.c_tilde.powf(1.0 / a) * params.h_max).ln() / lm;
            x + (x * x + 2.0 * (big_a / epsilon).ln() / (a * lm)).max(0.0).sqrt()
        }
        Kind::Mlmc => {
            let big_a = (1.0 + 2.0 * a).sqrt();
            1.0 + (params.c1.abs().powf(1.0 / a) * params.h_max).ln() / lm + (big_a / epsilon).ln() / (a * lm)
        }
    }
}

/// Integer depth, clamped to at least 2. The flag reports a degenerate target `eps >= A`.
pub fn optimal_r(kind: Kind, epsilon: f64, params: &StructuralParams, m: u64, rounding: Rounding) -> (usize, bool) {
    if kind == Kind::Crude {
        return (1, false);
    }
    let big_a = match kind {
        Kind::Mlmc => (1.0 + 2.0 * params.alpha).sqrt(),
        _ => (1.0 + 4.0 * params.alpha).sqrt(),
    };
    let degenerate = epsilon >= big_a;
    let x = depth_continuous(kind, epsilon, params, m);
    let r = if x.is_finite() { rounding.apply(x).max(2.0) } else { 2.0 };
    (r as usize, degenerate)
}

/// Continuous optimal bias parameter `h*`.
pub fn h_star(kind: Kind, epsilon: f64, params: &StructuralParams, ns: &[u64]) -> f64 {
    let a = params.alpha;
    let r = ns.len() as f64;
    match kind {
        Kind::Crude => (1.0 + 2.0 * a).powf(-1.0 / (2.0 * a)) * (epsilon / params.c1.abs()).powf(1.0 / a),
        Kind::Mlmc => {
            let n_r = *ns.last().unwrap() as f64;
            (1.0 + 2.0 * a).powf(-1.0 / (2.0 * a)) * (epsilon / params.c1.abs()).powf(1.0 / a) * n_r
        }
        Kind::Ml2r | Kind::Multistep => {
            let c_r = params.c_tilde.abs().powf(r);
            let geo_mean = (ns.iter().map(|&n| (n as f64).ln()).sum::<f64>() / r).exp();
            (1.0 + 2.0 * a * r).powf(-1.0 / (2.0 * a * r)) * (epsilon / c_r).powf(1.0 / (a * r)) * geo_mean
        }
    }
}

/// `n_h = max(1, ceil(h_max / h*))`, so that `h = h_max / n_h <= h*`.
pub fn optimal_h(kind: Kind, epsilon: f64, params: &StructuralParams, ns: &[u64]) -> Result<(f64, u64)> {
    let hs = h_star(kind, epsilon, params, ns);
    let ratio = params.h_max / hs;
    if !ratio.is_finite() || ratio > 9.0e15 {
        return Err(Error::Overflow(format!("h_max / h* = {ratio}")));
    }
    // guard against ratios like 3.0000000000000004 caused by rounding in h*
    let n_h = ((ratio * (1.0 - 1e-12)).ceil() as u64).max(1);
    Ok((params.h_max / n_h as f64, n_h))
}

/// Plan for a fixed refiner list.
pub fn plan_for_refiners(
    kind: Kind,
    template: Template,
    epsilon: f64,
    params: &StructuralParams,
    ns: &[u64],
    regime: CostRegime,
    overrides: &Overrides,
) -> Result<Plan> {
    let (h, n_h) = match overrides.n_h {
        Some(n_h) if n_h >= 1 => (params.h_max / n_h as f64, n_h),
        Some(_) => return Err(Error::InvalidParameter("n_h must be at least 1".into())),
        None => optimal_h(kind, epsilon, params, ns)?,
    };
    let t = build_matrix(template, params.alpha, ns)?;
    let st = strata(&t, ns, params, h, regime);
    let q = match &overrides.q {
        Some(q) => {
            if q.len() != st.len() {
                return Err(Error::DimensionMismatch { expected: st.len(), got: q.len() });
            }
            if q.iter().any(|v| v.is_nan() || *v <= 0.0) || (q.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter("q must be positive and sum to 1".into()));
            }
            q.clone()
        }
        None => optimal_q_from_strata(&st),
    };
    let n = match overrides.n {
        Some(n) => n.max(1),
        None => optimal_n(kind, epsilon, params.alpha, ns.len(), &st, &q)?,
    };
    Ok(Plan {
        kind,
        template,
        params: *params,
        epsilon,
        r: ns.len(),
        m: if ns.len() >= 2 { ns[1] } else { 2 },
        n_h,
        q,
        n,
        regime,
        rounding: Rounding::default(),
        explicit_refiners: Some(ns.to_vec()),
        warnings: params.warnings(),
    })
}

/// Complete pipeline for a fixed root `M`.
pub fn plan_for_m(
    kind: Kind,
    epsilon: f64,
    params: &StructuralParams,
    m: u64,
    regime: CostRegime,
    rounding: Rounding,
    overrides: &Overrides,
) -> Result<Plan> {
    if m < 2 {
        return Err(Error::InvalidRefiners(format!("root M = {m} must be at least 2")));
    }
    let (r, degenerate) = match overrides.r {
        Some(r) => (r, false),
        None => optimal_r(kind, epsilon, params, m, rounding),
    };
    let ns = refiners(&RefinerScheme::Geometric(m), r)?;
    let mut plan = plan_for_refiners(kind, kind.default_template(), epsilon, params, &ns, regime, overrides)?;
    plan.m = m;
    plan.explicit_refiners = None;
    plan.rounding = rounding;
    if degenerate {
        plan.warnings.push(format!("epsilon = {epsilon} is not below A; depth clamped to 2"));
    }
    Ok(plan)
}

/// Root `M` in `2..=m_max` minimising the predicted cost, ties to the smaller root.
pub fn choose_m(
    kind: Kind,
    epsilon: f64,
    params: &StructuralParams,
    regime: CostRegime,
    rounding: Rounding,
    m_max: u64,
) -> Result<u64> {
    Ok(search_m(kind, epsilon, params, regime, rounding, m_max, &Overrides::default())?.m)
}

fn search_m(
    kind: Kind,
    epsilon: f64,
    params: &StructuralParams,
    regime: CostRegime,
    rounding: Rounding,
    m_max: u64,
    overrides: &Overrides,
) -> Result<Plan> {
    if m_max < 2 {
        return Err(Error::InvalidParameter(format!("M_max = {m_max} must be at least 2")));
    }
    let mut best: Option<(f64, Plan)> = None;
    for m in 2..=m_max {
        let plan = plan_for_m(kind, epsilon, params, m, regime, rounding, overrides)?;
        let cost = plan.cost()?;
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, plan));
        }
    }
    Ok(best.unwrap().1)
}

/// Resolves a plan, searching `M` unless pinned.
pub fn make_plan(
    kind: Kind,
    epsilon: f64,
    params: &StructuralParams,
    regime: CostRegime,
    rounding: Rounding,
    m_max: u64,
    overrides: &Overrides,
) -> Result<Plan> {
    params.validate()?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} must be positive")));
    }
    if kind == Kind::Crude {
        let mut plan = crude_plan(epsilon, params, regime)?;
        if let Some(n_h) = overrides.n_h {
            plan.n_h = n_h.max(1);
        }
        if let Some(n) = overrides.n {
            plan.n = n.max(1);
        }
        return Ok(plan);
    }
    match overrides.m {
        Some(m) => plan_for_m(kind, epsilon, params, m, regime, rounding, overrides),
        None => search_m(kind, epsilon, params, regime, rounding, m_max, overrides),
    }
}

/// Plain Monte Carlo on `Y_h`.
pub fn crude_plan(epsilon: f64, params: &StructuralParams, regime: CostRegime) -> Result<Plan> {
    params.validate()?;
    if params.c1 == 0.0 {
        return Err(Error::Degenerate("crude plan needs c1 != 0".into()));
    }
    plan_for_refiners(Kind::Crude, Template::Crude, epsilon, params, &[1], regime, &Overrides::default())
}

/// Multistep Richardson-Romberg estimator on the given refiners.
pub fn multistep_plan(epsilon: f64, params: &StructuralParams, ns: &[u64], regime: CostRegime) -> Result<Plan> {
    params.validate()?;
    if params.c_tilde == 0.0 {
        return Err(Error::Degenerate("multistep plan needs c_tilde != 0".into()));
    }
    plan_for_refiners(Kind::Multistep, Template::Multistep, epsilon, params, ns, regime, &Overrides::default())
}

/// Rate `v(beta, eps)` of the asymptotic cost bound.
pub fn v_rate(kind: Kind, alpha: f64, beta: f64, epsilon: f64, m: u64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon} must lie in (0, 1)")));
    }
    let l = (1.0 / epsilon).ln();
    let e2 = epsilon * epsilon;
    Ok(match kind {
        Kind::Ml2r => {
            if beta == 1.0 {
                e2 / l
            } else if beta > 1.0 {
                e2
            } else {
                e2 * (-(1.0 - beta) / alpha.sqrt() * (2.0 * l * (m as f64).ln()).sqrt()).exp()
            }
        }
        Kind::Mlmc => {
            if beta == 1.0 {
                e2 / (l * l)
            } else if beta > 1.0 {
                e2
            } else {
                epsilon.powf(2.0 + (1.0 - beta) / alpha)
            }
        }
        other => return Err(Error::InvalidParameter(format!("no asymptotic rate for {other}"))),
    })
}

/// Constant `K(alpha, beta, M)` of the asymptotic cost bound.
pub fn k_constant(kind: Kind, params: &StructuralParams, m: u64) -> Result<f64> {
    let (a, b) = (params.alpha, params.beta);
    let mf = m as f64;
    let lm = mf.ln();
    let hh = params.h_max;
    let theta = params.theta();
    let wa = w_alpha_bound(a, m, DEFAULT_TRUNCATION);
    Ok(match kind {
        Kind::Ml2r => {
            if b == 1.0 {
                2.0 * params.v1 / a * (wa * mf * (1.0 + mf) * (1.0 + mf.powf(-0.5)).powi(2) / lm)
            } else if b > 1.0 {
                let inner = wa * mf.powf((b - 1.0) / 2.0) * (1.0 + mf).sqrt() * (1.0 + mf.powf(-b / 2.0))
                    / (1.0 - mf.powf((1.0 - b) / 2.0));
                params.var_y0 * mf / hh * (1.0 + theta * hh.powf(b / 2.0) * inner).powi(2)
            } else {
                params.v1
                    * hh.powf(1.0 - b)
                    * params.c_tilde.powf((1.0 - b) / a)
                    * (wa * wa * mf * (1.0 + mf) * (1.0 + mf.powf(-b / 2.0)).powi(2)
                        / (mf.powf((1.0 - b) / 2.0) - 1.0).powi(2))
            }
        }
        Kind::Mlmc => {
            let f = 1.0 + 1.0 / (2.0 * a);
            if b == 1.0 {
                f * params.v1 / (a * a) * (mf * (1.0 + mf) * (1.0 + mf.powf(-0.5)).powi(2) / (lm * lm))
            } else if b > 1.0 {
                let inner = mf.powf((b - 1.0) / 2.0) * (1.0 + mf).sqrt() * (1.0 + mf.powf(-b / 2.0))
                    / (1.0 - mf.powf((1.0 - b) / 2.0));
                f * params.var_y0 * mf / hh * (1.0 + theta * hh.powf(b / 2.0) * inner).powi(2)
            } else {
                (1.0 + 2.0 * a).powf(1.0 + (1.0 - b) / (2.0 * a)) / (2.0 * a)
                    * params.v1
                    * hh.powf(1.0 - b)
                    * params.c1.abs().powf((1.0 - b) / a)
                    * (mf * (1.0 + mf) * (1.0 + mf.powf(-b / 2.0)).powi(2) / (mf.powf((1.0 - b) / 2.0) - 1.0).powi(2))
            }
        }
        other => return Err(Error::InvalidParameter(format!("no asymptotic constant for {other}"))),
    })
}

/// Optimal starting bias parameter `chi_opt` and the matching constant, `beta > 1` only.
/// Diagnostic output; no planning decision depends on it.
pub fn chi_opt(params: &StructuralParams, m: u64) -> Result<(f64, f64)> {
    let b = params.beta;
    if b <= 1.0 {
        return Err(Error::InvalidParameter("chi_opt requires beta > 1".into()));
    }
    let mf = m as f64;
    let wa = w_alpha_bound(params.alpha, m, DEFAULT_TRUNCATION);
    let kappa2 = params.theta().powi(2) * wa * wa * mf.powf(b - 1.0) * (1.0 + mf) * (1.0 + mf.powf(-b))
        / (1.0 - mf.powf((1.0 - b) / 2.0)).powi(2);
    let chi = b.powf(-2.0 / (b + 1.0)) * kappa2.powf(-1.0 / (b + 1.0));
    let kappa1 = params.var_y0 * mf / chi;
    let k = (b + 1.0).powi(2) * b.powf(-2.0 / (b + 1.0)) * kappa1 * kappa2.powf(1.0 / (b + 1.0));
    Ok((chi, k))
}

/// `pi_{alpha,M}` re-exported next to the bounds that use it.
pub fn pi_bound(alpha: f64, m: u64) -> f64 {
    pi_alpha_m(alpha, m, DEFAULT_TRUNCATION)
}

/// Geometric weights used by a plan, convenience wrapper.
pub fn plan_weights(alpha: f64, m: u64, r: usize) -> Result<WeightVector> {
    geometric_weights(alpha, m, r)
}
