//! Extrapolation weights, refiner schemes and allocation matrices.
//!
//! The weights `w` solve the Vandermonde system
//!
//! ```text
//! sum_i w_i              = 1
//! sum_i w_i n_i^(-a k)   = 0,   k = 1..R-1
//! ```
//!
//! and are computed from their closed product form, never by a dense solve.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncation used for the infinite products and series of the weight bounds.
pub const DEFAULT_TRUNCATION: usize = 64;

/// Above this log-magnitude the closed-form products are accumulated in the log domain.
const LOG_DOMAIN_THRESHOLD: f64 = 300.0;

/// Largest exponent for which `exp` stays finite.
const MAX_LOG: f64 = 709.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefinerScheme {
    /// `n_i = i`
    Consecutive,
    /// `n_i = M^(i-1)`
    Geometric(u64),
    /// User supplied `1 = n_1 < n_2 < ... < n_R`.
    Explicit(Vec<u64>),
}

/// Generates the refiners `n_1 < ... < n_R` of a scheme.
pub fn refiners(scheme: &RefinerScheme, r: usize) -> Result<Vec<u64>> {
    if r == 0 {
        return Err(Error::InvalidRefiners("depth R must be at least 1".into()));
    }
    match scheme {
        RefinerScheme::Consecutive => Ok((1..=r as u64).collect()),
        RefinerScheme::Geometric(m) => {
            if *m < 2 {
                return Err(Error::InvalidRefiners(format!("root M = {m} must be at least 2")));
            }
            let mut out = Vec::with_capacity(r);
            let mut n: u64 = 1;
            for i in 0..r {
                out.push(n);
                if i + 1 < r {
                    n = n.checked_mul(*m).ok_or_else(|| {
                        Error::Overflow(format!("M^(R-1) with M = {m}, R = {r}"))
                    })?;
                }
            }
            Ok(out)
        }
        RefinerScheme::Explicit(list) => {
            if list.len() != r {
                return Err(Error::DimensionMismatch { expected: r, got: list.len() });
            }
            validate_refiners(list)?;
            Ok(list.clone())
        }
    }
}

/// Checks `n_1 = 1` and strict increase.
pub fn validate_refiners(ns: &[u64]) -> Result<()> {
    if ns.is_empty() {
        return Err(Error::InvalidRefiners("empty refiner list".into()));
    }
    if ns[0] != 1 {
        return Err(Error::InvalidRefiners(format!("first refiner is {}, expected 1", ns[0])));
    }
    if ns.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidRefiners("refiners must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub alpha: f64,
    pub refiners: Vec<u64>,
    pub w: Vec<f64>,
    /// `sum_i w_i / n_i^(alpha R)`, the leading residual bias coefficient.
    pub wtilde: f64,
}

impl WeightVector {
    pub fn depth(&self) -> usize {
        self.w.len()
    }

    pub fn cumulative(&self) -> Vec<f64> {
        cumulative_weights(&self.w)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must be positive")));
    }
    Ok(())
}

/// Closed-form Vandermonde weights for arbitrary refiners.
///
/// `w_i = (-1)^(R-i) n_i^(a(R-1)) / (prod_{j<i} (n_i^a - n_j^a) prod_{j>i} (n_j^a - n_i^a))`
pub fn solve_weights(alpha: f64, ns: &[u64]) -> Result<WeightVector> {
    check_alpha(alpha)?;
    validate_refiners(ns)?;
    let r = ns.len();
    let n_max = *ns.last().unwrap() as f64;
    let scale = alpha * (r as f64) * (r as f64 - 1.0) / 2.0 * n_max.ln();
    let mut w = Vec::with_capacity(r);
    for i in 0..r {
        let sign = if (r - 1 - i).is_multiple_of(2) { 1.0 } else { -1.0 };
        let ni = ns[i] as f64;
        let value = if scale > LOG_DOMAIN_THRESHOLD {
            // n_j^a - n_i^a = n_big^a (1 - (n_small/n_big)^a), all factors positive
            let mut log = alpha * (r as f64 - 1.0) * ni.ln();
            for (j, &nj) in ns.iter().enumerate() {
                if j == i {
                    continue;
                }
                let (small, big) = if j < i { (nj as f64, ni) } else { (ni, nj as f64) };
                log -= alpha * big.ln() + (-(small / big).powf(alpha)).ln_1p();
            }
            if log > MAX_LOG {
                return Err(Error::Overflow(format!("weight {} for alpha = {alpha}, R = {r}", i + 1)));
            }
            log.exp()
        } else {
            let ai = ni.powf(alpha);
            let mut den = 1.0;
            for (j, &nj) in ns.iter().enumerate() {
                let aj = (nj as f64).powf(alpha);
                if j < i {
                    den *= ai - aj;
                } else if j > i {
                    den *= aj - ai;
                }
            }
            ni.powf(alpha * (r as f64 - 1.0)) / den
        };
        if !value.is_finite() {
            return Err(Error::Overflow(format!("weight {} for alpha = {alpha}, R = {r}", i + 1)));
        }
        w.push(sign * value);
    }
    let wt = wtilde(alpha, ns)?;
    Ok(WeightVector { alpha, refiners: ns.to_vec(), w, wtilde: wt })
}

/// Closed form specialised to geometric refiners `n_i = M^(i-1)`.
///
/// `w_i = (-1)^(R-i) M^(-a(R-i)(R-i+1)/2) / (prod_{j=1}^{i-1} (1 - M^(-ja)) prod_{j=1}^{R-i} (1 - M^(-ja)))`
pub fn geometric_weights(alpha: f64, m: u64, r: usize) -> Result<WeightVector> {
    check_alpha(alpha)?;
    let ns = refiners(&RefinerScheme::Geometric(m), r)?;
    let mf = m as f64;
    let partial = |k: usize| -> f64 { (1..=k).map(|j| 1.0 - mf.powf(-(j as f64) * alpha)).product() };
    let w = (1..=r)
        .map(|i| {
            let d = (r - i) as f64;
            let sign = if (r - i).is_multiple_of(2) { 1.0 } else { -1.0 };
            sign * mf.powf(-alpha * d * (d + 1.0) / 2.0) / (partial(i - 1) * partial(r - i))
        })
        .collect();
    let wt = wtilde(alpha, &ns)?;
    Ok(WeightVector { alpha, refiners: ns, w, wtilde: wt })
}

/// `(-1)^(R-1) / (n_1 ... n_R)^alpha`
pub fn wtilde(alpha: f64, ns: &[u64]) -> Result<f64> {
    check_alpha(alpha)?;
    validate_refiners(ns)?;
    let log: f64 = alpha * ns.iter().map(|&n| (n as f64).ln()).sum::<f64>();
    if log > MAX_LOG {
        return Err(Error::Overflow(format!("(n_1...n_R)^alpha = exp({log})")));
    }
    let sign = if (ns.len() - 1).is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(sign * (-log).exp())
}

/// `W_j = sum_{i >= j} w_i`. `W_1` is pinned to 1, the first Vandermonde row.
pub fn cumulative_weights(w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    let mut acc = 0.0;
    for j in (0..w.len()).rev() {
        acc += w[j];
        out[j] = acc;
    }
    if let Some(first) = out.first_mut() {
        *first = 1.0;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    Crude,
    Multistep,
    Mlmc,
    Ml2rTelescopic,
    Ml2rFirstColumn,
    Ml2rLowerTriangular,
}

impl Template {
    pub fn name(self) -> &'static str {
        match self {
            Template::Crude => "crude",
            Template::Multistep => "multistep",
            Template::Mlmc => "mlmc",
            Template::Ml2rTelescopic => "ml2r-telescopic",
            Template::Ml2rFirstColumn => "ml2r-first-column",
            Template::Ml2rLowerTriangular => "ml2r-lower-triangular",
        }
    }

    pub fn needs_weights(self) -> bool {
        !matches!(self, Template::Crude | Template::Mlmc)
    }

    /// Level `j` only involves the pair `(j-1, j)`.
    pub fn is_telescopic(self) -> bool {
        matches!(self, Template::Mlmc | Template::Ml2rTelescopic)
    }
}

impl std::str::FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "crude" => Template::Crude,
            "multistep" => Template::Multistep,
            "mlmc" => Template::Mlmc,
            "ml2r-telescopic" | "ml2r" => Template::Ml2rTelescopic,
            "ml2r-first-column" => Template::Ml2rFirstColumn,
            "ml2r-lower-triangular" => Template::Ml2rLowerTriangular,
            other => return Err(Error::Parse(format!("unknown template `{other}`"))),
        })
    }
}

/// An `R x R` allocation matrix stored column by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationMatrix {
    pub template: Template,
    /// `columns[j][i]` is `T_i^j`.
    pub columns: Vec<Vec<f64>>,
}

impl AllocationMatrix {
    pub fn depth(&self) -> usize {
        self.columns.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    /// Row-major copy, convenient for display and comparisons.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let r = self.depth();
        (0..r).map(|i| (0..r).map(|j| self.columns[j][i]).collect()).collect()
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        self.columns[j].iter().sum()
    }

    pub fn total_sum(&self) -> f64 {
        self.columns.iter().flatten().sum()
    }

    /// `sum_j T^j`
    pub fn row_sums(&self) -> Vec<f64> {
        let r = self.depth();
        (0..r).map(|i| self.columns.iter().map(|c| c[i]).sum()).collect()
    }

    /// Indices `i` with `T_i^j != 0`.
    pub fn support(&self, j: usize) -> Vec<usize> {
        self.columns[j].iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect()
    }
}

pub fn allocation_matrix(
    template: Template,
    r: usize,
    weights: Option<&WeightVector>,
) -> Result<AllocationMatrix> {
    if r == 0 {
        return Err(Error::InvalidParameter("depth R must be at least 1".into()));
    }
    let e = |k: usize| -> Vec<f64> {
        let mut v = vec![0.0; r];
        v[k] = 1.0;
        v
    };
    let w = if template.needs_weights() {
        let wv = weights.ok_or_else(|| {
            Error::InvalidParameter(format!("template {} requires weights", template.name()))
        })?;
        if wv.depth() != r {
            return Err(Error::DimensionMismatch { expected: r, got: wv.depth() });
        }
        wv.w.clone()
    } else {
        Vec::new()
    };
    let mut columns = vec![vec![0.0; r]; r];
    match template {
        Template::Crude => columns[0] = e(0),
        Template::Multistep => columns[0] = w,
        Template::Mlmc => {
            columns[0] = e(0);
            for j in 1..r {
                columns[j][j - 1] = -1.0;
                columns[j][j] = 1.0;
            }
        }
        Template::Ml2rTelescopic => {
            let big_w = cumulative_weights(&w);
            columns[0] = e(0);
            for j in 1..r {
                columns[j][j - 1] = -big_w[j];
                columns[j][j] = big_w[j];
            }
        }
        Template::Ml2rFirstColumn => {
            columns[0] = e(0);
            for j in 1..r {
                columns[j][0] = -w[j];
                columns[j][j] = w[j];
            }
        }
        Template::Ml2rLowerTriangular => {
            // Column j holds the partial sum W~_j = w_1 + ... + w_j on the diagonal and
            // -W~_j just below, so that the rows add up to w.
            let mut partial = 0.0;
            for j in 0..r {
                partial += w[j];
                if j + 1 < r {
                    columns[j][j] = partial;
                    columns[j][j + 1] = -partial;
                } else {
                    columns[j][j] = 1.0;
                }
            }
        }
    }
    Ok(AllocationMatrix { template, columns })
}

/// Weights of order `R` exploiting a vanishing first bias coefficient.
///
/// `w~_r = n_r^a w_r / sum_s n_s^a w_s` built from the order `R-1` weights.
pub fn c1_zero_weights(w_prev: &WeightVector) -> Result<Vec<f64>> {
    let alpha = w_prev.alpha;
    let scaled: Vec<f64> = w_prev
        .w
        .iter()
        .zip(&w_prev.refiners)
        .map(|(w, &n)| (n as f64).powf(alpha) * w)
        .collect();
    let den: f64 = scaled.iter().sum();
    let magnitude: f64 = scaled.iter().map(|v| v.abs()).sum();
    if den.abs() <= 1e-14 * magnitude.max(1.0) {
        return Err(Error::Degenerate("sum of n_s^alpha w_s vanishes".into()));
    }
    Ok(scaled.into_iter().map(|v| v / den).collect())
}

/// `pi_{a,M} = prod_{k>=1} (1 - M^(-a k))`, truncated after `truncation` factors.
///
/// The remainder is of order `M^(-a (truncation+1))`.
pub fn pi_alpha_m(alpha: f64, m: u64, truncation: usize) -> f64 {
    let mf = m as f64;
    (1..=truncation.max(1)).map(|k| 1.0 - mf.powf(-alpha * k as f64)).product()
}

/// Uniform bound on the cumulative weights of geometric refiners:
/// `max_j |W_j(R, M)| <= M^(-a)/pi^2 sum_{k>=0} M^(-a k(k+3)/2) + 1/pi`.
pub fn w_alpha_bound(alpha: f64, m: u64, truncation: usize) -> f64 {
    let mf = m as f64;
    let pi = pi_alpha_m(alpha, m, truncation);
    let series: f64 = (0..truncation.max(1))
        .map(|k| {
            let k = k as f64;
            mf.powf(-alpha * k * (k + 3.0) / 2.0)
        })
        .sum();
    mf.powf(-alpha) / (pi * pi) * series + 1.0 / pi
}

/// Writes the weight table `alpha,M,R,i,w_i,W_i` for geometric refiners.
pub fn write_weight_table<W: Write>(
    out: W,
    alphas: &[f64],
    roots: &[u64],
    depths: &[usize],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["alpha", "M", "R", "i", "w_i", "W_i"]).map_err(|e| Error::Io(e.to_string()))?;
    for &alpha in alphas {
        for &m in roots {
            for &r in depths {
                let wv = geometric_weights(alpha, m, r)?;
                let big_w = wv.cumulative();
                for (i, (w, cum)) in wv.w.iter().zip(&big_w).enumerate() {
                    wtr.write_record([
                        alpha.to_string(),
                        m.to_string(),
                        r.to_string(),
                        (i + 1).to_string(),
                        w.to_string(),
                        cum.to_string(),
                    ])
                    .map_err(|e| Error::Io(e.to_string()))?;
                }
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    #[test]
    fn refiner_families() {
        assert_eq!(refiners(&RefinerScheme::Geometric(2), 3).unwrap(), vec![1, 2, 4]);
        assert_eq!(refiners(&RefinerScheme::Geometric(4), 3).unwrap(), vec![1, 4, 16]);
        assert_eq!(refiners(&RefinerScheme::Consecutive, 4).unwrap(), vec![1, 2, 3, 4]);
        assert!(refiners(&RefinerScheme::Geometric(1), 3).is_err());
        assert!(refiners(&RefinerScheme::Explicit(vec![1, 3, 2]), 3).is_err());
        assert!(refiners(&RefinerScheme::Explicit(vec![2, 3]), 2).is_err());
        assert_eq!(refiners(&RefinerScheme::Explicit(vec![1, 3, 7]), 3).unwrap(), vec![1, 3, 7]);
    }

    #[test]
    fn small_weight_examples() {
        assert!(close(&solve_weights(1.0, &[1, 2]).unwrap().w, &[-1.0, 2.0], 1e-14));
        assert!(close(&solve_weights(1.0, &[1]).unwrap().w, &[1.0], 0.0));
        assert!(close(&solve_weights(1.0, &[1, 2, 3]).unwrap().w, &[0.5, -4.0, 4.5], 1e-14));
        assert!(close(&solve_weights(1.0, &[1, 2, 4]).unwrap().w, &[1.0 / 3.0, -2.0, 8.0 / 3.0], 1e-14));
        assert!(close(&geometric_weights(1.0, 2, 3).unwrap().w, &[1.0 / 3.0, -2.0, 8.0 / 3.0], 1e-14));
    }

    #[test]
    fn wtilde_examples() {
        assert!((wtilde(1.0, &[1, 2]).unwrap() + 0.5).abs() < 1e-15);
        assert!((wtilde(1.0, &[1, 2, 4]).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(wtilde(0.5, &[1]).unwrap(), 1.0);
        let wv = solve_weights(1.0, &[1, 2, 4]).unwrap();
        let direct: f64 = wv.w.iter().zip(&wv.refiners).map(|(w, &n)| w / (n as f64).powi(3)).sum();
        assert!((direct - 0.125).abs() < 1e-14);
    }

    #[test]
    fn cumulative_examples() {
        assert_eq!(cumulative_weights(&[-1.0, 2.0]), vec![1.0, 2.0]);
        assert!(close(&cumulative_weights(&[1.0 / 3.0, -2.0, 8.0 / 3.0]), &[1.0, 2.0 / 3.0, 8.0 / 3.0], 1e-14));
        assert_eq!(cumulative_weights(&[1.0]), vec![1.0]);
    }

    #[test]
    fn allocation_examples() {
        let w = solve_weights(1.0, &[1, 2]).unwrap();
        let t = allocation_matrix(Template::Ml2rTelescopic, 2, Some(&w)).unwrap();
        assert_eq!(t.rows(), vec![vec![1.0, -2.0], vec![0.0, 2.0]]);
        let t = allocation_matrix(Template::Mlmc, 3, None).unwrap();
        assert_eq!(t.rows(), vec![vec![1.0, -1.0, 0.0], vec![0.0, 1.0, -1.0], vec![0.0, 0.0, 1.0]]);
        let t = allocation_matrix(Template::Crude, 3, None).unwrap();
        assert_eq!(t.rows(), vec![vec![1.0, 0.0, 0.0], vec![0.0; 3], vec![0.0; 3]]);
        assert!(allocation_matrix(Template::Ml2rTelescopic, 3, Some(&w)).is_err());
        assert!(allocation_matrix(Template::Ml2rFirstColumn, 3, None).is_err());
    }

    #[test]
    fn c1_zero_examples() {
        let w1 = solve_weights(1.0, &[1]).unwrap();
        assert_eq!(c1_zero_weights(&w1).unwrap(), vec![1.0]);
        let w2 = solve_weights(1.0, &[1, 2]).unwrap();
        assert!(close(&c1_zero_weights(&w2).unwrap(), &[-1.0 / 3.0, 4.0 / 3.0], 1e-14));
        let w3 = solve_weights(1.0, &[1, 2, 3]).unwrap();
        let c = c1_zero_weights(&w3).unwrap();
        assert!(close(&c, &[1.0 / 12.0, -4.0 / 3.0, 9.0 / 4.0], 1e-14));
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bound_examples() {
        // partial product computed independently with a running product in reverse order
        let mut p = 1.0f64;
        for k in (1..=200).rev() {
            p *= 1.0 - 2f64.powi(-k);
        }
        assert!((pi_alpha_m(1.0, 2, 64) - p).abs() < 1e-12);
        assert!((pi_alpha_m(1.0, 2, 64) - 0.288788).abs() < 1e-6);
        assert!((w_alpha_bound(1.0, 1_000_000, 64) - 1.0).abs() < 1e-5);
        assert!(8.0 / 3.0 <= w_alpha_bound(1.0, 2, 64));
        assert!(pi_alpha_m(1.0, 3, 5) > pi_alpha_m(1.0, 3, 6));
    }

    #[test]
    fn log_domain_agrees_with_geometric_form() {
        // alpha R (R-1)/2 log M = 2 * 28 * log 10 > 300 for R = 8
        let direct = solve_weights(2.0, &refiners(&RefinerScheme::Geometric(10), 8).unwrap()).unwrap();
        let geo = geometric_weights(2.0, 10, 8).unwrap();
        assert!(close(&direct.w, &geo.w, 1e-12));
    }

    #[test]
    fn overflow_is_signalled() {
        assert!(matches!(wtilde(50.0, &[1, 1000, 1_000_000]), Err(Error::Overflow(_))));
    }

    #[test]
    fn weight_table_has_one_row_per_weight() {
        let mut buf = Vec::new();
        write_weight_table(&mut buf, &[1.0], &[2, 3], &[1, 2, 3]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 6);
        assert!(text.starts_with("alpha,M,R,i,w_i,W_i"));
    }
}
