//! C ABI over the panelbreak toolbox.
//!
//! Panels and critical-value tables are opaque handles. Every function returns a
//! [`PbStatus`]; on failure [`pb_last_error_message`] describes the error. Results come
//! back as JSON strings owned by the caller and released with [`pb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use panelbreak::inference::confidence::break_confidence;
use panelbreak::inference::critical::{CriticalValueTable, CvKind};
use panelbreak::inference::hac::{hac_covariance, HacSpec};
use panelbreak::inference::testing::{f_known, seq_f, sup_f, wdmax_f, SeqMode, SupMethod, TestOptions, WdmaxWeights};
use panelbreak::ingest::{load_panel_path, PanelSchema};
use panelbreak::search::{estimate_breaks, full_fit, BreakSearch, SearchOptions};
use panelbreak::{BreakSet, Error, ErrorCategory, PanelDataset, PanelParts, Trimming};
use serde_json::{json, Value};

/// Status codes; 1–4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbStatus {
    Ok = 0,
    Input = 1,
    Infeasible = 2,
    Numerical = 3,
    Internal = 4,
    NullArgument = 5,
}

/// Opaque panel handle.
pub struct PbPanel(PanelDataset);

/// Opaque critical-value table handle.
pub struct PbTable(CriticalValueTable);

/// Table kinds for [`pb_table_value`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbCvKind {
    SupF = 0,
    WdmaxUnit = 1,
    Wdmax = 2,
    SeqF = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PbStatus {
    match e.category() {
        ErrorCategory::Input => PbStatus::Input,
        ErrorCategory::Infeasible => PbStatus::Infeasible,
        ErrorCategory::Numerical => PbStatus::Numerical,
        ErrorCategory::Internal => PbStatus::Internal,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> PbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PbStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            PbStatus::NullArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            PbStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("`{what}` is not valid UTF-8"))))
}

unsafe fn write_json(out: *mut *mut c_char, v: &Value) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    let s = serde_json::to_string(v).map_err(Error::from)?;
    *out = CString::new(s).map_err(|e| Error::Internal(e.to_string()))?.into_raw();
    Ok(())
}

fn parse_json(text: &str) -> Result<Value, Failure> {
    if text.trim().is_empty() {
        return Ok(json!({}));
    }
    Ok(serde_json::from_str(text).map_err(Error::from)?)
}

fn opt_f64(v: &Value, key: &str, default: f64) -> f64 {
    v.get(key).and_then(Value::as_f64).unwrap_or(default)
}

fn opt_usize(v: &Value, key: &str) -> Option<usize> {
    v.get(key).and_then(Value::as_u64).map(|x| x as usize)
}

fn test_options(v: &Value) -> Result<TestOptions, Failure> {
    Ok(TestOptions {
        trim: Trimming::new(opt_f64(v, "trim", 0.15))?,
        bandwidth: opt_usize(v, "bandwidth"),
        level: opt_f64(v, "alpha", 0.05),
        search: SearchOptions {
            observed: true,
            breaking_constant: v.get("breaking_constant").and_then(Value::as_bool).unwrap_or(false),
            max_iter: opt_usize(v, "max_iter").unwrap_or(10),
        },
        sup: match v.get("sup").and_then(Value::as_str) {
            None | Some("estimated") => SupMethod::Estimated,
            Some("exhaustive") => SupMethod::Exhaustive,
            Some(other) => return Err(Failure::Lib(Error::InvalidArgument(format!("unknown sup method `{other}`")))),
        },
    })
}

fn dates(v: &Value) -> Option<Vec<usize>> {
    v.get("dates")?
        .as_array()?
        .iter()
        .map(|d| d.as_u64().map(|x| x as usize))
        .collect()
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn pb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pb_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(c) => c,
        Err(_) => c"unknown",
    };
    VERSION.as_ptr()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a panel from dense arrays. `y` is `n·t` values ordered unit by unit; `x` and `w`
/// are `n·t·p` values ordered unit, then period, then regressor. `x` may be null when `p_x = 0`.
///
/// # Safety
/// Array pointers must reference the stated number of readable doubles.
#[no_mangle]
pub unsafe extern "C" fn pb_panel_new(
    n: usize,
    t: usize,
    p_x: usize,
    p_w: usize,
    y: *const f64,
    x: *const f64,
    w: *const f64,
    out: *mut *mut PbPanel,
) -> PbStatus {
    guard(|| {
        if y.is_null() {
            return Err(Failure::Null("y"));
        }
        if w.is_null() {
            return Err(Failure::Null("w"));
        }
        if x.is_null() && p_x > 0 {
            return Err(Failure::Null("x"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let ys = std::slice::from_raw_parts(y, n * t);
        let ws = std::slice::from_raw_parts(w, n * t * p_w);
        let xs: &[f64] = if p_x > 0 { std::slice::from_raw_parts(x, n * t * p_x) } else { &[] };
        let block = |s: &[f64], i: usize, p: usize| {
            nalgebra::DMatrix::from_fn(t, p, |r, c| s[(i * t + r) * p + c])
        };
        let parts = PanelParts {
            y: nalgebra::DMatrix::from_fn(t, n, |r, i| ys[i * t + r]),
            x: (0..n).map(|i| block(xs, i, p_x)).collect(),
            w: (0..n).map(|i| block(ws, i, p_w)).collect(),
            ..Default::default()
        };
        let panel = PanelDataset::new(parts)?;
        *out = Box::into_raw(Box::new(PbPanel(panel)));
        Ok(())
    })
}

/// Loads a long-format CSV. `schema_json` is `{"unit":…, "period":…, "y":…, "x":[…], "w":[…], "factors":[…]}`.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_panel_load_csv(
    path: *const c_char,
    schema_json: *const c_char,
    out: *mut *mut PbPanel,
) -> PbStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let schema: PanelSchema =
            serde_json::from_str(str_arg(schema_json, "schema_json")?).map_err(Error::from)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = Box::into_raw(Box::new(PbPanel(load_panel_path(path, &schema)?)));
        Ok(())
    })
}

/// # Safety
/// `panel` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pb_panel_free(panel: *mut PbPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Writes `N`, `T`, `p_x`, `p_w`; any output pointer may be null.
///
/// # Safety
/// `panel` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pb_panel_dims(
    panel: *const PbPanel,
    n: *mut usize,
    t: *mut usize,
    p_x: *mut usize,
    p_w: *mut usize,
) -> PbStatus {
    guard(|| {
        let p = panel.as_ref().ok_or(Failure::Null("panel"))?;
        for (dst, v) in [(n, p.0.n_units()), (t, p.0.n_periods()), (p_x, p.0.p_x()), (p_w, p.0.p_w())] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        Ok(())
    })
}

/// The default table (`PANELBREAK_CV_TABLE` or the embedded one).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_table_default(out: *mut *mut PbTable) -> PbStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = Box::into_raw(Box::new(PbTable(CriticalValueTable::default_table()?)));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pb_table_load(path: *const c_char, out: *mut *mut PbTable) -> PbStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = Box::into_raw(Box::new(PbTable(CriticalValueTable::load(path)?)));
        Ok(())
    })
}

/// # Safety
/// `table` must come from this library (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pb_table_free(table: *mut PbTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Critical value for `kind` at `(k, p_w, epsilon, level)`; for `SeqF`, `k` is the number of breaks under the null.
///
/// # Safety
/// `table` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pb_table_value(
    table: *const PbTable,
    kind: PbCvKind,
    k: usize,
    p_w: usize,
    epsilon: f64,
    level: f64,
    out: *mut f64,
) -> PbStatus {
    guard(|| {
        let t = table.as_ref().ok_or(Failure::Null("table"))?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = match kind {
            PbCvKind::SupF => t.0.value(CvKind::SupF, k, p_w, epsilon, level)?,
            PbCvKind::WdmaxUnit => t.0.value(CvKind::WdmaxUnit, k, p_w, epsilon, level)?,
            PbCvKind::Wdmax => t.0.value(CvKind::Wdmax, k, p_w, epsilon, level)?,
            PbCvKind::SeqF => t.0.seq_value(k, p_w, epsilon, level)?,
        };
        Ok(())
    })
}

/// Estimates `k` break dates (or fits at `{"dates": […]}`) and returns the fit as JSON.
/// `options_json` may set `k`, `dates`, `trim`, `bandwidth`, `breaking_constant`, `max_iter`, `level`.
///
/// # Safety
/// `panel` must be live; `options_json` NUL-terminated (may be empty); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pb_estimate(
    panel: *const PbPanel,
    options_json: *const c_char,
    out: *mut *mut c_char,
) -> PbStatus {
    guard(|| {
        let p = &panel.as_ref().ok_or(Failure::Null("panel"))?.0;
        let v = parse_json(str_arg(options_json, "options_json")?)?;
        let opts = test_options(&v)?;
        let est = match dates(&v) {
            Some(d) => {
                p.check_estimable()?;
                full_fit(p, &BreakSet::new(d, p.n_periods())?, &opts.search)?
            }
            None => {
                let k = opt_usize(&v, "k").unwrap_or(1);
                estimate_breaks(p, &BreakSearch::Global { k }, &opts.trim, &opts.search)?.fit
            }
        };
        let cov = hac_covariance(&est, &HacSpec::resolve(opts.bandwidth, p.n_periods()))?;
        let mut result = json!({ "fit": est.summary(p.x_names(), p.w_names()) });
        if est.k() > 0 {
            let ci = break_confidence(&est, &cov, opt_f64(&v, "level", 0.95))?;
            result["confidence"] = serde_json::to_value(ci).map_err(Error::from)?;
        }
        write_json(out, &result)
    })
}

/// Runs a test given `{"test": "supf"|"wdmax"|"seqf"|"fknown", …}` and returns the report as JSON.
/// Other keys: `k`, `k_max`, `weights` (`"unit"`/`"matched"`), `dates`, `trim`, `alpha`, `bandwidth`, `seq_mode`,
/// `sup` (`"estimated"`/`"exhaustive"`).
///
/// # Safety
/// `panel` and `table` must be live (`table` may be null for `fknown`); strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pb_test(
    panel: *const PbPanel,
    table: *const PbTable,
    options_json: *const c_char,
    out: *mut *mut c_char,
) -> PbStatus {
    guard(|| {
        let p = &panel.as_ref().ok_or(Failure::Null("panel"))?.0;
        let v = parse_json(str_arg(options_json, "options_json")?)?;
        let opts = test_options(&v)?;
        let test = v.get("test").and_then(Value::as_str).unwrap_or("supf");
        let table = || table.as_ref().map(|t| &t.0).ok_or(Failure::Null("table"));
        let report = match test {
            "fknown" => {
                let d = dates(&v).ok_or_else(|| Error::InvalidArgument("fknown needs `dates`".into()))?;
                p.check_estimable()?;
                let fit = full_fit(p, &BreakSet::new(d, p.n_periods())?, &opts.search)?;
                let cov = hac_covariance(&fit, &HacSpec::resolve(opts.bandwidth, p.n_periods()))?;
                f_known(&fit, &cov, opts.level)?
            }
            "supf" => sup_f(p, opt_usize(&v, "k").unwrap_or(1), &opts, table()?)?,
            "wdmax" => {
                let weights = match v.get("weights").and_then(Value::as_str) {
                    Some("unit") => WdmaxWeights::Unit,
                    _ => WdmaxWeights::LevelMatched,
                };
                wdmax_f(p, opt_usize(&v, "k_max").unwrap_or(3), weights, &opts, table()?)?
            }
            "seqf" => {
                let base = match dates(&v) {
                    Some(d) => BreakSet::new(d, p.n_periods())?,
                    None => BreakSet::empty(p.n_periods()),
                };
                let mode = match v.get("seq_mode").and_then(Value::as_str) {
                    Some("minssr") => SeqMode::MinSsr,
                    _ => SeqMode::MaxF,
                };
                seq_f(p, &base, mode, &opts, table()?)?
            }
            other => return Err(Error::InvalidArgument(format!("unknown test `{other}`")).into()),
        };
        write_json(out, &serde_json::to_value(report).map_err(Error::from)?)
    })
}
