//! Calibration, planning and replication workflows producing result tables.

use std::io::{Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::engine::{estimate_v1, estimate_var_y0, replicate_until, LevelSampler};
use crate::error::{Error, Result};
use crate::models::{published_params, Model, ModelConfig};
use crate::plan::{make_plan, CostRegime, Kind, Overrides, Plan, Rounding, StructuralParams};

/// Header of every result table.
pub const CSV_HEADER: &str = "k,eps,l2_error,time_s,bias,var,R,M,h_inv,N,cost";

/// Where the structural parameters of a run come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSource {
    /// Published values of the preset, falling back to calibration.
    #[default]
    Published,
    Calibrate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub model: ModelConfig,
    pub kind: Kind,
    /// Exponents `k` of the targets `eps = 2^(-k)`.
    pub eps_grid: Vec<i32>,
    pub reps: usize,
    pub m_max: u64,
    pub rounding: Rounding,
    /// Cost regime; the model's own regime when absent.
    pub regime: Option<CostRegime>,
    pub seed: u64,
    pub calibration_samples: u64,
    pub params: ParamSource,
    pub budget_seconds: Option<f64>,
    pub threads: Option<usize>,
    pub out: Option<String>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            model: ModelConfig::preset("call"),
            kind: Kind::Ml2r,
            eps_grid: vec![1, 2, 3, 4, 5],
            reps: 64,
            m_max: 10,
            rounding: Rounding::default(),
            regime: None,
            seed: 0,
            calibration_samples: 100_000,
            params: ParamSource::default(),
            budget_seconds: None,
            threads: None,
            out: None,
        }
    }
}

impl BenchConfig {
    pub fn from_text(text: &str) -> Result<BenchConfig> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("bench configurations always serialise")
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::InvalidParameter(format!("reps = {} must be at least 2", self.reps)));
        }
        if self.eps_grid.iter().any(|&k| k < 1) {
            return Err(Error::InvalidParameter("eps grid exponents must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilons(&self) -> Vec<(i32, f64)> {
        self.eps_grid.iter().map(|&k| (k, 2f64.powi(-k))).collect()
    }
}

/// One line of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub k: i32,
    pub eps: f64,
    pub l2_error: Option<f64>,
    pub time_s: f64,
    pub bias: Option<f64>,
    pub var: f64,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "M")]
    pub m: u64,
    pub h_inv: u64,
    #[serde(rename = "N")]
    pub n: u64,
    pub cost: f64,
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
    for row in rows {
        wtr.serialize(row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected header `{}`", header.join(","))));
    }
    rdr.deserialize().map(|r| r.map_err(csv_err)).collect()
}

pub fn rows_to_string(rows: &[ResultRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Calibrated structural parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: StructuralParams,
    pub theta: f64,
    pub samples: u64,
    pub m_probe: u64,
}

/// Estimates `V1` with probe ratio `m_probe` and `var(Y_0)` from draws at the
/// coarsest admissible step `h_max`; `alpha` and `beta` are the model's own.
pub fn cmd_calibrate(model: &Model, samples: u64, m_probe: u64, seed: u64) -> Result<Calibration> {
    let h = model.h_max;
    let v1 = estimate_v1(model, h, m_probe, model.beta, samples, seed)?;
    let var = estimate_var_y0(model, h, samples, seed)?;
    let mut params = StructuralParams::new(model.alpha, model.beta, v1, var);
    params.h_max = model.h_max;
    Ok(Calibration { params, theta: params.theta(), samples, m_probe })
}

/// Structural parameters of a configuration, published or calibrated.
pub fn resolve_params(cfg: &BenchConfig, model: &Model) -> Result<StructuralParams> {
    let published = if cfg.params == ParamSource::Published && is_unmodified_preset(&cfg.model) {
        published_params(&model.id).ok()
    } else {
        None
    };
    match published {
        Some(p) => Ok(p),
        None => Ok(cmd_calibrate(model, cfg.calibration_samples, cfg.m_max, cfg.seed)?.params),
    }
}

fn is_unmodified_preset(cfg: &ModelConfig) -> bool {
    *cfg == ModelConfig::preset(&cfg.model)
}

/// One planned cell of a table.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRow {
    pub k: i32,
    pub eps: f64,
    pub plan: Plan,
    pub cost: f64,
}

pub const PLAN_HEADER: &str = "kind,k,eps,R,M,h_inv,N,cost,q";

pub fn cmd_plan(
    kinds: &[Kind],
    params: &StructuralParams,
    eps_grid: &[(i32, f64)],
    regime: CostRegime,
    rounding: Rounding,
    m_max: u64,
    overrides: &Overrides,
) -> Result<Vec<PlanRow>> {
    let mut rows = Vec::new();
    for &kind in kinds {
        for &(k, eps) in eps_grid {
            let plan = make_plan(kind, eps, params, regime, rounding, m_max, overrides)?;
            let cost = plan.cost()?;
            rows.push(PlanRow { k, eps, plan, cost });
        }
    }
    Ok(rows)
}

pub fn write_plan_rows<W: Write>(out: W, rows: &[PlanRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(PLAN_HEADER.split(',')).map_err(csv_err)?;
    for row in rows {
        let p = &row.plan;
        let q: Vec<String> = p.q.iter().map(|v| v.to_string()).collect();
        wtr.write_record([
            p.kind.to_string(),
            row.k.to_string(),
            row.eps.to_string(),
            p.r.to_string(),
            p.m.to_string(),
            p.n_h.to_string(),
            p.n.to_string(),
            row.cost.to_string(),
            q.join(";"),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Series derived from a result table: `eps_tilde / eps` and `time * eps^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedRow {
    pub k: i32,
    pub eps: f64,
    pub rmse_ratio: Option<f64>,
    pub time_eps2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub rows: Vec<ResultRow>,
    pub derived: Vec<DerivedRow>,
    /// The wall-clock budget ran out before the grid was complete.
    pub aborted: bool,
}

/// Plans and replicates every target of the grid, in grid order.
pub fn cmd_bench(cfg: &BenchConfig, model: &Model, params: &StructuralParams) -> Result<BenchOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let deadline = cfg.budget_seconds.map(|s| start + Duration::from_secs_f64(s.max(0.0)));
    let regime = cfg.regime.unwrap_or_else(|| model.preferred_regime());
    let mut rows = Vec::new();
    let mut derived = Vec::new();
    let mut aborted = false;
    for (k, eps) in cfg.epsilons() {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            aborted = true;
            break;
        }
        let plan = make_plan(cfg.kind, eps, params, regime, cfg.rounding, cfg.m_max, &Overrides::default())?;
        let stats = match replicate_until(&plan, model, cfg.reps, cfg.seed, model.reference, deadline) {
            Ok(s) => s,
            Err(Error::BudgetExceeded) => {
                aborted = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let time_s = stats.mean_time.as_secs_f64();
        rows.push(ResultRow {
            k,
            eps,
            l2_error: stats.eps_tilde,
            time_s,
            bias: stats.mu_tilde,
            var: stats.nu_tilde,
            r: plan.r,
            m: plan.m,
            h_inv: plan.n_h,
            n: plan.n,
            cost: plan.cost()?,
        });
        derived.push(DerivedRow { k, eps, rmse_ratio: stats.eps_tilde.map(|e| e / eps), time_eps2: time_s * eps * eps });
    }
    Ok(BenchOutput { rows, derived, aborted })
}

pub fn write_derived<W: Write>(out: W, rows: &[DerivedRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for row in rows {
        wtr.serialize(row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub k: i32,
    pub eps: f64,
    /// `cost_b / cost_a`
    pub cost_ratio: f64,
    /// `time_b / time_a`
    pub time_ratio: f64,
    /// Time of `b` interpolated at the empirical RMSE of `a`, divided by the time of `a`.
    pub time_ratio_at_equal_rmse: Option<f64>,
}

/// Ratios of table `b` over table `a` on their common targets.
pub fn cmd_compare(a: &[ResultRow], b: &[ResultRow]) -> Result<Vec<CompareRow>> {
    let mut out = Vec::new();
    for ra in a {
        if let Some(rb) = b.iter().find(|rb| rb.k == ra.k) {
            let equal_rmse = ra.l2_error.and_then(|e| interpolate_time(b, e)).map(|t| t / ra.time_s);
            out.push(CompareRow {
                k: ra.k,
                eps: ra.eps,
                cost_ratio: rb.cost / ra.cost,
                time_ratio: rb.time_s / ra.time_s,
                time_ratio_at_equal_rmse: equal_rmse.filter(|v| v.is_finite()),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidParameter("the two tables share no target".into()));
    }
    Ok(out)
}

/// Log-log interpolation of time as a function of empirical RMSE.
fn interpolate_time(rows: &[ResultRow], rmse: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.l2_error.map(|e| (e.ln(), r.time_s.ln())))
        .filter(|(e, t)| e.is_finite() && t.is_finite())
        .collect();
    pts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let x = rmse.ln();
    pts.windows(2).find(|w| w[0].0 <= x && x <= w[1].0).map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let y = if x1 == x0 { y0 } else { y0 + (y1 - y0) * (x - x0) / (x1 - x0) };
        y.exp()
    })
}

pub const COMPARE_HEADER: &str = "k,eps,cost_ratio,time_ratio,time_ratio_at_equal_rmse";

pub fn write_compare<W: Write>(out: W, rows: &[CompareRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for row in rows {
        wtr.serialize(row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_rows_from(path: &Path) -> Result<Vec<ResultRow>> {
    read_rows(std::fs::File::open(path)?)
}

/// Plans the grid of a configuration and checks every cell is executable on the model.
pub fn dry_run(cfg: &BenchConfig, model: &Model, params: &StructuralParams) -> Result<Vec<Plan>> {
    let regime = cfg.regime.unwrap_or_else(|| model.preferred_regime());
    cfg.epsilons()
        .into_iter()
        .map(|(_, eps)| {
            let plan = make_plan(cfg.kind, eps, params, regime, cfg.rounding, cfg.m_max, &Overrides::default())?;
            for n in plan.refiners()? {
                model.check(plan.h(), &[n])?;
            }
            Ok(plan)
        })
        .collect()
}
