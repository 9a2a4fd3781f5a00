//! C interface to the `ml2r` toolkit.
//!
//! Every function returns an [`Ml2rStatus`]. On failure a description of the
//! last error of the calling thread is available from
//! [`ml2r_last_error_message`]. Models and plans are opaque handles released
//! with their `_free` function; strings returned by the library are released
//! with [`ml2r_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ml2r::bench::cmd_calibrate;
use ml2r::engine::{replicate, run};
use ml2r::models::{published_params, Model, ModelConfig};
use ml2r::plan::{make_plan, CostRegime, Kind, Overrides, Plan, Rounding, StructuralParams};
use ml2r::weights::solve_weights;
use ml2r::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ml2rStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidRefiners = 4,
    Overflow = 5,
    DimensionMismatch = 6,
    Degenerate = 7,
    Unsupported = 8,
    UnknownModel = 9,
    Parse = 10,
    BudgetExceeded = 11,
    Io = 12,
    Panic = 13,
}

impl From<&Error> for Ml2rStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidRefiners(_) => Ml2rStatus::InvalidRefiners,
            Error::InvalidParameter(_) => Ml2rStatus::InvalidArgument,
            Error::Overflow(_) => Ml2rStatus::Overflow,
            Error::DimensionMismatch { .. } => Ml2rStatus::DimensionMismatch,
            Error::Degenerate(_) => Ml2rStatus::Degenerate,
            Error::Unsupported(_) => Ml2rStatus::Unsupported,
            Error::UnknownModel(_) => Ml2rStatus::UnknownModel,
            Error::Parse(_) => Ml2rStatus::Parse,
            Error::BudgetExceeded => Ml2rStatus::BudgetExceeded,
            Error::Io(_) => Ml2rStatus::Io,
        }
    }
}

/// Opaque model handle.
pub struct Ml2rModel(Model);

/// Opaque plan handle.
pub struct Ml2rPlan(Plan);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct Ml2rParams {
    pub alpha: f64,
    pub beta: f64,
    pub v1: f64,
    pub var_y0: f64,
    pub h_max: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct Ml2rPlanSummary {
    pub depth: u64,
    pub root: u64,
    /// `h = h_max / h_inv`
    pub h_inv: u64,
    pub n: u64,
    pub cost: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct Ml2rRunResult {
    pub estimate: f64,
    pub nu_bar: f64,
    pub cost_units: f64,
    pub time_s: f64,
}

/// Statistics over replications. `bias` and `l2_error` are NaN when the
/// model has no reference value.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct Ml2rReplication {
    pub mean: f64,
    pub bias: f64,
    pub nu_tilde: f64,
    pub l2_error: f64,
    pub time_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(Ml2rStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Ml2rStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Ml2rStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            Ml2rStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(Ml2rStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(Ml2rStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn parse<T: std::str::FromStr<Err = Error>>(p: *const c_char, what: &str) -> Result<T, Failure> {
    Ok(text(p, what)?.parse::<T>()?)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

impl From<StructuralParams> for Ml2rParams {
    fn from(p: StructuralParams) -> Self {
        Ml2rParams { alpha: p.alpha, beta: p.beta, v1: p.v1, var_y0: p.var_y0, h_max: p.h_max }
    }
}

impl From<Ml2rParams> for StructuralParams {
    fn from(p: Ml2rParams) -> Self {
        StructuralParams { h_max: p.h_max, ..StructuralParams::new(p.alpha, p.beta, p.v1, p.var_y0) }
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ml2r_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ml2r_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by the library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ml2r_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build a preset model (`call`, `lookback`, `barrier`, `nested`, `synthetic`).
///
/// # Safety
/// `id` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ml2r_model_preset(id: *const c_char, out: *mut *mut Ml2rModel) -> Ml2rStatus {
    guard(|| {
        let model = Model::preset(text(id, "id")?)?;
        write(out, Box::into_raw(Box::new(Ml2rModel(model))))
    })
}

/// Build a model from a configuration document.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ml2r_model_from_config(config: *const c_char, out: *mut *mut Ml2rModel) -> Ml2rStatus {
    guard(|| {
        let model = ModelConfig::from_text(text(config, "config")?)?.build()?;
        write(out, Box::into_raw(Box::new(Ml2rModel(model))))
    })
}

/// # Safety
/// `model` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ml2r_model_free(model: *mut Ml2rModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Reference value of the model; `has_reference` receives 0 when none is known.
///
/// # Safety
/// `model` must be a live handle; `value` and `has_reference` writable pointers.
#[no_mangle]
pub unsafe extern "C" fn ml2r_model_reference(
    model: *const Ml2rModel,
    value: *mut f64,
    has_reference: *mut i32,
) -> Ml2rStatus {
    guard(|| {
        let m = handle(model, "model")?;
        write(value, m.0.reference.unwrap_or(f64::NAN))?;
        write(has_reference, m.0.reference.is_some() as i32)
    })
}

/// Published structural parameters of a preset.
///
/// # Safety
/// `id` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ml2r_published_params(id: *const c_char, out: *mut Ml2rParams) -> Ml2rStatus {
    guard(|| write(out, published_params(text(id, "id")?)?.into()))
}

/// Estimate `V1` and `var(Y0)` by simulation.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ml2r_calibrate(
    model: *const Ml2rModel,
    samples: u64,
    m_probe: u64,
    seed: u64,
    out: *mut Ml2rParams,
) -> Ml2rStatus {
    guard(|| {
        let m = handle(model, "model")?;
        write(out, cmd_calibrate(&m.0, samples, m_probe, seed)?.params.into())
    })
}

/// Optimal plan for target RMSE `epsilon`. `kind` is one of `crude`,
/// `multistep`, `mlmc`, `ml2r`; `regime` is `sum` or `max`; `rounding` is
/// `floor`, `nearest` or `up`.
///
/// # Safety
/// String arguments must be NUL-terminated, `params` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml2r_plan_new(
    kind: *const c_char,
    epsilon: f64,
    params: *const Ml2rParams,
    regime: *const c_char,
    rounding: *const c_char,
    m_max: u64,
    out: *mut *mut Ml2rPlan,
) -> Ml2rStatus {
    guard(|| {
        let kind: Kind = parse(kind, "kind")?;
        let regime: CostRegime = parse(regime, "regime")?;
        let rounding: Rounding = parse(rounding, "rounding")?;
        let params: StructuralParams = (*handle(params, "params")?).into();
        params.validate()?;
        let plan = make_plan(kind, epsilon, &params, regime, rounding, m_max, &Overrides::default())?;
        write(out, Box::into_raw(Box::new(Ml2rPlan(plan))))
    })
}

/// Parse a plan document.
///
/// # Safety
/// `document` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ml2r_plan_from_text(document: *const c_char, out: *mut *mut Ml2rPlan) -> Ml2rStatus {
    guard(|| {
        let plan = Plan::from_text(text(document, "document")?)?;
        write(out, Box::into_raw(Box::new(Ml2rPlan(plan))))
    })
}

/// Serialise a plan; release the result with [`ml2r_string_free`].
///
/// # Safety
/// `plan` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ml2r_plan_to_text(plan: *const Ml2rPlan, out: *mut *mut c_char) -> Ml2rStatus {
    guard(|| {
        let doc = handle(plan, "plan")?.0.to_text();
        let c = CString::new(doc).map_err(|e| Failure(Ml2rStatus::Parse, e.to_string()))?;
        write(out, c.into_raw())
    })
}

/// # Safety
/// `plan` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ml2r_plan_summary(plan: *const Ml2rPlan, out: *mut Ml2rPlanSummary) -> Ml2rStatus {
    guard(|| {
        let p = &handle(plan, "plan")?.0;
        let summary = Ml2rPlanSummary { depth: p.r as u64, root: p.m, h_inv: p.n_h, n: p.n, cost: p.cost()? };
        write(out, summary)
    })
}

/// # Safety
/// `plan` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ml2r_plan_free(plan: *mut Ml2rPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Richardson-Romberg weights for refiners `ns[0..len]`, written to `out[0..len]`.
///
/// # Safety
/// `ns` must be readable and `out` writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn ml2r_weights(alpha: f64, ns: *const u64, len: usize, out: *mut f64) -> Ml2rStatus {
    guard(|| {
        if ns.is_null() || out.is_null() {
            return Err(null("array"));
        }
        let refiners = std::slice::from_raw_parts(ns, len);
        let w = solve_weights(alpha, refiners)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&w.w);
        Ok(())
    })
}

/// Execute a plan once with replication index 0.
///
/// # Safety
/// `plan` and `model` must be live handles and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ml2r_run(
    plan: *const Ml2rPlan,
    model: *const Ml2rModel,
    seed: u64,
    out: *mut Ml2rRunResult,
) -> Ml2rStatus {
    guard(|| {
        let (p, m) = (handle(plan, "plan")?, handle(model, "model")?);
        let r = run(&p.0, &m.0, seed)?;
        let result = Ml2rRunResult {
            estimate: r.estimate,
            nu_bar: r.nu_bar,
            cost_units: r.cost_units,
            time_s: r.wall_time.as_secs_f64(),
        };
        write(out, result)
    })
}

/// `reps` independent runs of a plan.
///
/// # Safety
/// `plan` and `model` must be live handles and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ml2r_replicate(
    plan: *const Ml2rPlan,
    model: *const Ml2rModel,
    reps: usize,
    seed: u64,
    out: *mut Ml2rReplication,
) -> Ml2rStatus {
    guard(|| {
        let (p, m) = (handle(plan, "plan")?, handle(model, "model")?);
        let st = replicate(&p.0, &m.0, reps, seed, m.0.reference)?;
        let result = Ml2rReplication {
            mean: st.mean_estimate,
            bias: st.mu_tilde.unwrap_or(f64::NAN),
            nu_tilde: st.nu_tilde,
            l2_error: st.eps_tilde.unwrap_or(f64::NAN),
            time_s: st.mean_time.as_secs_f64(),
        };
        write(out, result)
    })
}
