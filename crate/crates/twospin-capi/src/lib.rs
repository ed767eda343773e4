//! C ABI over the core library. Every entry point returns a status code;
//! structured results come back as UTF-8 JSON strings the caller releases
//! with `twospin_string_free`. Handles are opaque; create, use, and free
//! each handle on one thread. On any non-zero status the thread-local
//! message from `twospin_last_error` describes the failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::rc::Rc;

use serde_json::json;
use twospin::construct::{find_pair, FindPairConfig};
use twospin::error::Error;
use twospin::fixpoint::{
    hardcore_lambda_c, in_nonuniqueness, ising_beta_c, ode_fixpoint, two_cycle_fixpoints, Verdict,
};
use twospin::gadget::{eval_gadget, GadgetExpr};
use twospin::graph::Graph;
use twospin::oracle::{magnetization, partition_function, OracleLimits};
use twospin::params::SpinParams;
use twospin::scalar::Scalar;

/// Result of every ABI call. Non-zero values match the CLI exit codes
/// for the same failure class.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TwospinStatus {
    Ok = 0,
    NullArgument = 1,
    Parse = 2,
    Infeasible = 3,
    NonConvergence = 4,
    Internal = 5,
}

/// Opaque spin-system parameters (edge weights and vertex activity).
pub struct TwospinParams {
    inner: SpinParams,
}

/// Opaque gadget expression tree.
pub struct TwospinGadget {
    inner: Rc<GadgetExpr>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let stored = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(stored));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(e: &Error) -> TwospinStatus {
    match e.exit_code() {
        2 => TwospinStatus::Parse,
        3 => TwospinStatus::Infeasible,
        4 => TwospinStatus::NonConvergence,
        _ => TwospinStatus::Internal,
    }
}

fn fail(e: &Error) -> TwospinStatus {
    set_error(e.to_string());
    status_of(e)
}

fn null_arg(which: &str) -> TwospinStatus {
    set_error(format!("{which} must not be null"));
    TwospinStatus::NullArgument
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string.
unsafe fn text_arg<'a>(ptr: *const c_char, which: &str) -> Result<&'a str, TwospinStatus> {
    if ptr.is_null() {
        return Err(null_arg(which));
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error(format!("{which} is not valid UTF-8"));
        TwospinStatus::Parse
    })
}

fn emit(out: *mut *mut c_char, value: serde_json::Value) -> TwospinStatus {
    let text = match CString::new(value.to_string()) {
        Ok(t) => t,
        Err(_) => {
            set_error("result contained an interior NUL byte".into());
            return TwospinStatus::Internal;
        }
    };
    unsafe { *out = text.into_raw() };
    TwospinStatus::Ok
}

fn guarded(body: impl FnOnce() -> TwospinStatus) -> TwospinStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".into());
            TwospinStatus::Internal
        }
    }
}

fn parse_scalar(text: &str, which: &str) -> Result<Scalar, TwospinStatus> {
    Scalar::parse(text).map_err(|e| {
        set_error(format!("{which}: {e}"));
        TwospinStatus::Parse
    })
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn twospin_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or null. Valid
/// until the next ABI call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn twospin_last_error() -> *const c_char {
    LAST_ERROR
        .with(|slot| slot.borrow().as_ref().map(|s| s.as_ptr()))
        .unwrap_or(std::ptr::null())
}

/// Releases a string returned through an `out_json` parameter.
///
/// # Safety
/// `s` must be null or a pointer previously returned by this library.
#[no_mangle]
pub unsafe extern "C" fn twospin_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Builds antiferromagnetic parameters from decimal or `p/q` strings.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be a
/// valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn twospin_params_new(
    beta: *const c_char,
    gamma: *const c_char,
    lambda: *const c_char,
    out: *mut *mut TwospinParams,
) -> TwospinStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let beta = match unsafe { text_arg(beta, "beta") } {
            Ok(t) => t,
            Err(s) => return s,
        };
        let gamma = match unsafe { text_arg(gamma, "gamma") } {
            Ok(t) => t,
            Err(s) => return s,
        };
        let lambda = match unsafe { text_arg(lambda, "lambda") } {
            Ok(t) => t,
            Err(s) => return s,
        };
        let (b, g, l) = match (
            parse_scalar(beta, "beta"),
            parse_scalar(gamma, "gamma"),
            parse_scalar(lambda, "lambda"),
        ) {
            (Ok(b), Ok(g), Ok(l)) => (b, g, l),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        match SpinParams::new(b, g, l) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(TwospinParams { inner })) };
                TwospinStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `p` must be null or a pointer from `twospin_params_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn twospin_params_free(p: *mut TwospinParams) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Parses a gadget expression from its JSON form.
///
/// # Safety
/// `json` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn twospin_gadget_parse(
    json: *const c_char,
    out: *mut *mut TwospinGadget,
) -> TwospinStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let text = match unsafe { text_arg(json, "json") } {
            Ok(t) => t,
            Err(s) => return s,
        };
        match GadgetExpr::from_json(text) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(TwospinGadget { inner })) };
                TwospinStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `g` must be null or a pointer from `twospin_gadget_parse`, freed once.
#[no_mangle]
pub unsafe extern "C" fn twospin_gadget_free(g: *mut TwospinGadget) {
    if !g.is_null() {
        drop(unsafe { Box::from_raw(g) });
    }
}

/// Serializes a gadget back to its JSON form.
///
/// # Safety
/// `g` must be a live gadget handle; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn twospin_gadget_to_json(
    g: *const TwospinGadget,
    out_json: *mut *mut c_char,
) -> TwospinStatus {
    guarded(|| {
        if g.is_null() {
            return null_arg("gadget");
        }
        if out_json.is_null() {
            return null_arg("out_json");
        }
        let gadget = unsafe { &*g };
        match serde_json::to_value(gadget.inner.as_ref()) {
            Ok(v) => emit(out_json, v),
            Err(e) => {
                set_error(e.to_string());
                TwospinStatus::Internal
            }
        }
    })
}

/// Evaluates a gadget exactly: effective field `R`, magnetization gap
/// `M`, and vertex count `size`, all as exact strings.
///
/// # Safety
/// `g` and `p` must be live handles; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn twospin_gadget_eval(
    g: *const TwospinGadget,
    p: *const TwospinParams,
    out_json: *mut *mut c_char,
) -> TwospinStatus {
    guarded(|| {
        if g.is_null() {
            return null_arg("gadget");
        }
        if p.is_null() {
            return null_arg("params");
        }
        if out_json.is_null() {
            return null_arg("out_json");
        }
        let gadget = unsafe { &*g };
        let params = unsafe { &*p };
        match eval_gadget(&gadget.inner, &params.inner) {
            Ok(eval) => emit(
                out_json,
                json!({
                    "R": eval.r.to_text(),
                    "M": eval.m.to_text(),
                    "size": eval.size.to_string(),
                }),
            ),
            Err(e) => fail(&e),
        }
    })
}

/// Critical activity and interaction strength for maximum degree
/// `delta`: the hard-core uniqueness threshold and the symmetric-model
/// threshold, both exact.
///
/// # Safety
/// `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn twospin_critical_activity(
    delta: u32,
    out_json: *mut *mut c_char,
) -> TwospinStatus {
    guarded(|| {
        if out_json.is_null() {
            return null_arg("out_json");
        }
        let (lc, bc) = match (hardcore_lambda_c(delta), ising_beta_c(delta)) {
            (Ok(lc), Ok(bc)) => (lc, bc),
            (Err(e), _) | (_, Err(e)) => return fail(&e),
        };
        emit(
            out_json,
            json!({
                "delta": delta,
                "lambda_c": lc.to_text(),
                "beta_c": bc.to_text(),
            }),
        )
    })
}

/// Tree-recursion fixpoint report at maximum degree `delta`: fixpoint
/// location, derivative magnitude, interaction weight, uniqueness
/// verdict, and the two-cycle points when the verdict is non-unique.
///
/// # Safety
/// `p` must be a live handle; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn twospin_fixpoint(
    p: *const TwospinParams,
    delta: u32,
    precision: u32,
    out_json: *mut *mut c_char,
) -> TwospinStatus {
    guarded(|| {
        if p.is_null() {
            return null_arg("params");
        }
        if out_json.is_null() {
            return null_arg("out_json");
        }
        let params = unsafe { &*p };
        let report = match in_nonuniqueness(&params.inner, delta, precision) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        let fx = match ode_fixpoint(&params.inner.to_float(precision), precision) {
            Ok(f) => f,
            Err(e) => return fail(&e),
        };
        let verdict = match report.verdict {
            Verdict::Unique => "unique",
            Verdict::NonUnique => "non-unique",
            Verdict::Boundary => "boundary",
        };
        let mut out = json!({
            "delta": delta,
            "x_star": report.x_star.to_text(),
            "f_prime_abs": report.f_prime_abs.to_text(),
            "omega_star": fx.omega_star.to_text(),
            "verdict": verdict,
        });
        if report.verdict == Verdict::NonUnique {
            let tc = match two_cycle_fixpoints(&params.inner, delta, precision) {
                Ok(t) => t,
                Err(e) => return fail(&e),
            };
            let obj = out.as_object_mut().expect("fixpoint output is an object");
            obj.insert("q_plus".into(), serde_json::Value::String(tc.q_plus.to_text()));
            obj.insert("q_minus".into(), serde_json::Value::String(tc.q_minus.to_text()));
        }
        emit(out_json, out)
    })
}

/// Searches for `count` gadget pairs whose fields agree within
/// `tolerance` while their gaps stay separated. Mirrors the CLI
/// `find-pair` output.
///
/// # Safety
/// `p` must be a live handle; `tolerance` must be null or
/// NUL-terminated; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn twospin_find_pair(
    p: *const TwospinParams,
    tolerance: *const c_char,
    count: u32,
    precision: u32,
    out_json: *mut *mut c_char,
) -> TwospinStatus {
    guarded(|| {
        if p.is_null() {
            return null_arg("params");
        }
        if out_json.is_null() {
            return null_arg("out_json");
        }
        let params = unsafe { &*p };
        let text = match unsafe { text_arg(tolerance, "tolerance") } {
            Ok(t) => t,
            Err(s) => return s,
        };
        let r = match parse_scalar(text, "tolerance") {
            Ok(r) => r,
            Err(s) => return s,
        };
        let cfg = FindPairConfig { precision, ..FindPairConfig::default() };
        let pairs = match find_pair(&params.inner, &r, count as usize, &cfg) {
            Ok(v) => v,
            Err(e) => return fail(&e),
        };
        let mut items = Vec::with_capacity(pairs.len());
        for pair in &pairs {
            let g1 = match serde_json::to_value(pair.expr1.as_ref()) {
                Ok(v) => v,
                Err(e) => {
                    set_error(e.to_string());
                    return TwospinStatus::Internal;
                }
            };
            let g2 = match serde_json::to_value(pair.expr2.as_ref()) {
                Ok(v) => v,
                Err(e) => {
                    set_error(e.to_string());
                    return TwospinStatus::Internal;
                }
            };
            items.push(json!({
                "R_hat": pair.r_hat.to_text(),
                "M_hat": pair.m_hat.to_text(),
                "R1": pair.eval1.r.to_text(),
                "R2": pair.eval2.r.to_text(),
                "M1": pair.eval1.m.to_text(),
                "M2": pair.eval2.m.to_text(),
                "size1": pair.eval1.size.to_string(),
                "size2": pair.eval2.size.to_string(),
                "gadget1": g1,
                "gadget2": g2,
            }));
        }
        emit(out_json, json!({ "pairs": items }))
    })
}

/// Exact partition function and expected occupancy of a graph given as
/// JSON, by brute-force enumeration (small graphs only).
///
/// # Safety
/// `graph_json` must be null or NUL-terminated; `p` must be a live
/// handle; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn twospin_oracle_summary(
    graph_json: *const c_char,
    p: *const TwospinParams,
    out_json: *mut *mut c_char,
) -> TwospinStatus {
    guarded(|| {
        if p.is_null() {
            return null_arg("params");
        }
        if out_json.is_null() {
            return null_arg("out_json");
        }
        let text = match unsafe { text_arg(graph_json, "graph_json") } {
            Ok(t) => t,
            Err(s) => return s,
        };
        let graph: Graph = match serde_json::from_str(text) {
            Ok(g) => g,
            Err(e) => {
                set_error(format!("graph_json: {e}"));
                return TwospinStatus::Parse;
            }
        };
        let params = unsafe { &*p };
        let limits = OracleLimits::default();
        let z = match partition_function(&graph, &params.inner, &limits) {
            Ok(z) => z,
            Err(e) => return fail(&e),
        };
        let occ = match magnetization(&graph, &params.inner, &limits) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        emit(
            out_json,
            json!({
                "Z": z.to_text(),
                "magnetization": occ.to_text(),
                "method": "enumeration",
            }),
        )
    })
}
