//! C interface to the `flowtree` library.
//!
//! Every fallible call returns a [`FlowtreeStatus`]. On failure the message is
//! available from [`flowtree_last_error`] until the next failing call on the
//! same thread. Handles are opaque and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use flowtree::flow::{integrate_maximal, FlowOptions, MaximalFlow};
use flowtree::scenario::{load_scenario, load_scenario_file, DifferenceField, Scenario};
use flowtree::tree::document::load_tree;
use flowtree::tree::BrokenFlowTree;
use flowtree::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowtreeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Io = 4,
    InvalidInput = 5,
    Numerical = 6,
    OutOfRange = 7,
    Inconclusive = 8,
    Panic = 9,
}

pub struct FlowtreeScenario(Arc<Scenario>);
pub struct FlowtreeField(DifferenceField);
pub struct FlowtreeFlow(MaximalFlow);
pub struct FlowtreeTree(BrokenFlowTree);

/// One nondegenerate critical point. Unused coordinates are zero.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FlowtreeCritical {
    pub x: [f64; 2],
    pub index: u32,
    pub value: f64,
    pub min_abs_eigenvalue: f64,
}

/// One sample of a flow line.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FlowtreeNode {
    pub t: f64,
    pub x: [f64; 2],
    pub f: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> FlowtreeStatus {
    match e {
        Error::Parse { .. } => FlowtreeStatus::Parse,
        Error::Io(_) => FlowtreeStatus::Io,
        Error::NonMorse { .. } | Error::Stiff { .. } | Error::TransversalityViolation { .. } | Error::TooLarge(_) => {
            FlowtreeStatus::Numerical
        }
        Error::Inconclusive(_) => FlowtreeStatus::Inconclusive,
        _ => FlowtreeStatus::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), FlowtreeStatus>) -> FlowtreeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FlowtreeStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            FlowtreeStatus::Panic
        }
    }
}

fn lib<T>(r: flowtree::Result<T>) -> Result<T, FlowtreeStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, FlowtreeStatus> {
    p.as_ref().ok_or_else(|| {
        set_error(format!("null {what}"));
        FlowtreeStatus::NullArgument
    })
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, FlowtreeStatus> {
    if p.is_null() {
        set_error(format!("null {what}"));
        return Err(FlowtreeStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        FlowtreeStatus::InvalidUtf8
    })
}

unsafe fn put<T>(out: *mut T, v: T) -> Result<(), FlowtreeStatus> {
    if out.is_null() {
        set_error("null output pointer");
        return Err(FlowtreeStatus::NullArgument);
    }
    out.write(v);
    Ok(())
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn flowtree_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parse a scenario from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn flowtree_scenario_parse(toml: *const c_char, out: *mut *mut FlowtreeScenario) -> FlowtreeStatus {
    guard(|| {
        let s = lib(load_scenario(text(toml, "toml")?))?;
        put(out, Box::into_raw(Box::new(FlowtreeScenario(Arc::new(s)))))
    })
}

/// Load a scenario file or directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn flowtree_scenario_load(path: *const c_char, out: *mut *mut FlowtreeScenario) -> FlowtreeStatus {
    guard(|| {
        let s = lib(load_scenario_file(Path::new(text(path, "path")?)))?;
        put(out, Box::into_raw(Box::new(FlowtreeScenario(Arc::new(s)))))
    })
}

/// # Safety
/// `s` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flowtree_scenario_free(s: *mut FlowtreeScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Chart dimension (1 or 2).
///
/// # Safety
/// `s` must be a live scenario handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn flowtree_scenario_dim(s: *const FlowtreeScenario, out: *mut u32) -> FlowtreeStatus {
    guard(|| put(out, get(s, "scenario")?.0.dim() as u32))
}

/// Difference field `F = f_upper - f_lower`. The field keeps the scenario
/// alive, so the scenario handle may be freed afterwards.
///
/// # Safety
/// `s` must be a live scenario handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn flowtree_field_new(
    s: *const FlowtreeScenario,
    upper: u32,
    lower: u32,
    out: *mut *mut FlowtreeField,
) -> FlowtreeStatus {
    guard(|| {
        let f = lib(get(s, "scenario")?.0.difference(upper, lower))?;
        put(out, Box::into_raw(Box::new(FlowtreeField(f))))
    })
}

/// # Safety
/// `f` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flowtree_field_free(f: *mut FlowtreeField) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Value and gradient of the field at `x`.
///
/// # Safety
/// `f` must be a live field handle; `value` and `grad` writable (`grad` holds 2 doubles).
#[no_mangle]
pub unsafe extern "C" fn flowtree_field_eval(
    f: *const FlowtreeField,
    x: *const f64,
    value: *mut f64,
    grad: *mut f64,
) -> FlowtreeStatus {
    guard(|| {
        let f = &get(f, "field")?.0;
        let x = point(x, f.dim())?;
        let (v, g) = lib(f.eval(&x))?;
        put(value, v)?;
        put(grad as *mut [f64; 2], g)
    })
}

unsafe fn point(x: *const f64, dim: usize) -> Result<[f64; 2], FlowtreeStatus> {
    if x.is_null() {
        set_error("null point");
        return Err(FlowtreeStatus::NullArgument);
    }
    let mut p = [0.0; 2];
    p[..dim].copy_from_slice(std::slice::from_raw_parts(x, dim));
    Ok(p)
}

/// Critical points of the field. Pass `buf = NULL` to query the count in
/// `len`; otherwise `len` holds the capacity on entry and the count on exit.
///
/// # Safety
/// `f` must be a live field handle, `len` writable, `buf` NULL or `*len` elements long.
#[no_mangle]
pub unsafe extern "C" fn flowtree_field_critical_points(
    f: *const FlowtreeField,
    buf: *mut FlowtreeCritical,
    len: *mut usize,
) -> FlowtreeStatus {
    guard(|| {
        let f = &get(f, "field")?.0;
        let cap = *get(len, "len")?;
        let crit: Vec<FlowtreeCritical> = lib(f.critical_points())?
            .iter()
            .map(|c| FlowtreeCritical {
                x: c.location,
                index: c.index as u32,
                value: c.value,
                min_abs_eigenvalue: c.min_abs_eigenvalue(),
            })
            .collect();
        fill(buf, cap, len, &crit)
    })
}

unsafe fn fill<T: Copy>(buf: *mut T, cap: usize, len: *mut usize, items: &[T]) -> Result<(), FlowtreeStatus> {
    *len = items.len();
    if buf.is_null() {
        return Ok(());
    }
    if cap < items.len() {
        set_error(format!("buffer holds {cap} items, {} needed", items.len()));
        return Err(FlowtreeStatus::OutOfRange);
    }
    ptr::copy_nonoverlapping(items.as_ptr(), buf, items.len());
    Ok(())
}

/// Integrate the maximal flow of `-grad F` through `x0` with default options.
///
/// # Safety
/// `f` must be a live field handle, `x0` hold `dim` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn flowtree_flow_integrate(
    f: *const FlowtreeField,
    x0: *const f64,
    out: *mut *mut FlowtreeFlow,
) -> FlowtreeStatus {
    guard(|| {
        let f = &get(f, "field")?.0;
        let x = point(x0, f.dim())?;
        let flow = lib(integrate_maximal(f, x, &FlowOptions::default()))?;
        put(out, Box::into_raw(Box::new(FlowtreeFlow(flow))))
    })
}

/// # Safety
/// `fl` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flowtree_flow_free(fl: *mut FlowtreeFlow) {
    if !fl.is_null() {
        drop(Box::from_raw(fl));
    }
}

/// Samples of the flow in flow order. Same buffer protocol as
/// `flowtree_field_critical_points`.
///
/// # Safety
/// `fl` must be a live flow handle, `len` writable, `buf` NULL or `*len` elements long.
#[no_mangle]
pub unsafe extern "C" fn flowtree_flow_nodes(fl: *const FlowtreeFlow, buf: *mut FlowtreeNode, len: *mut usize) -> FlowtreeStatus {
    guard(|| {
        let fl = &get(fl, "flow")?.0;
        let cap = *get(len, "len")?;
        let nodes: Vec<FlowtreeNode> = fl.nodes.iter().map(|n| FlowtreeNode { t: n.t, x: n.x, f: n.f }).collect();
        fill(buf, cap, len, &nodes)
    })
}

/// Class of the flow as a static string: `morse`, `fold-emanating`,
/// `fold-terminating`, `singular` or `chart-truncated`.
///
/// # Safety
/// `fl` must be a live flow handle.
#[no_mangle]
pub unsafe extern "C" fn flowtree_flow_class(fl: *const FlowtreeFlow) -> *const c_char {
    let Some(fl) = fl.as_ref() else {
        set_error("null flow");
        return ptr::null();
    };
    let name: &'static CStr = match fl.0.class.name() {
        "morse" => c"morse",
        "fold-emanating" => c"fold-emanating",
        "fold-terminating" => c"fold-terminating",
        "singular" => c"singular",
        _ => c"chart-truncated",
    };
    name.as_ptr()
}

/// Load a broken flow tree document.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn flowtree_tree_load(path: *const c_char, out: *mut *mut FlowtreeTree) -> FlowtreeStatus {
    guard(|| {
        let t = lib(load_tree(Path::new(text(path, "path")?)))?;
        put(out, Box::into_raw(Box::new(FlowtreeTree(t))))
    })
}

/// # Safety
/// `t` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flowtree_tree_free(t: *mut FlowtreeTree) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Check vertex matching and loop closure within `tol`.
///
/// # Safety
/// `t` must be a live tree handle; `valid` and `max_residual` writable.
#[no_mangle]
pub unsafe extern "C" fn flowtree_tree_validate(
    t: *const FlowtreeTree,
    tol: f64,
    valid: *mut bool,
    max_residual: *mut f64,
) -> FlowtreeStatus {
    guard(|| {
        let t = &get(t, "tree")?.0;
        if !(tol > 0.0) {
            set_error("tolerance must be positive");
            return Err(FlowtreeStatus::InvalidInput);
        }
        let d = t.validate(tol);
        put(valid, d.valid)?;
        put(max_residual, d.max_residual)
    })
}

/// Combinatorial type as a newly allocated string, released with
/// `flowtree_string_free`.
///
/// # Safety
/// `t` must be a live tree handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn flowtree_tree_gamma(t: *const FlowtreeTree, out: *mut *mut c_char) -> FlowtreeStatus {
    guard(|| {
        let g = get(t, "tree")?.0.combinatorial_type().to_string();
        put(out, CString::new(g).unwrap_or_default().into_raw())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flowtree_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
