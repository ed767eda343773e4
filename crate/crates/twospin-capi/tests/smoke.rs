//! Exercises the C ABI end to end from Rust: handle lifecycle, exact
//! JSON payloads, status codes for each failure class, and the
//! generated header.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use twospin_capi::{
    twospin_critical_activity, twospin_find_pair, twospin_fixpoint, twospin_gadget_eval,
    twospin_gadget_free, twospin_gadget_parse, twospin_gadget_to_json, twospin_last_error,
    twospin_oracle_summary, twospin_params_free, twospin_params_new, twospin_string_free,
    twospin_version, TwospinGadget, TwospinParams, TwospinStatus,
};

const T1: &str = r#"{"t":"merge","c":[{"t":"merge","c":[]}]}"#;
const K4: &str = r#"{"n":4,"edges":[[0,1],[0,2],[0,3],[1,2],[1,3],[2,3]]}"#;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take_json(ptr: *mut c_char) -> serde_json::Value {
    assert!(!ptr.is_null());
    let text = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_owned();
    unsafe { twospin_string_free(ptr) };
    serde_json::from_str(&text).unwrap()
}

unsafe fn hard_core_unit() -> *mut TwospinParams {
    let (beta, gamma, lambda) = (cstr("1"), cstr("0"), cstr("1"));
    let mut p: *mut TwospinParams = ptr::null_mut();
    let status =
        unsafe { twospin_params_new(beta.as_ptr(), gamma.as_ptr(), lambda.as_ptr(), &mut p) };
    assert_eq!(status, TwospinStatus::Ok);
    assert!(!p.is_null());
    p
}

#[test]
fn version_is_a_static_string() {
    let v = twospin_version();
    assert!(!v.is_null());
    let text = unsafe { CStr::from_ptr(v) }.to_str().unwrap();
    assert!(!text.is_empty());
}

#[test]
fn evaluates_gadget_exactly() {
    unsafe {
        let p = hard_core_unit();
        let json = cstr(T1);
        let mut g: *mut TwospinGadget = ptr::null_mut();
        assert_eq!(twospin_gadget_parse(json.as_ptr(), &mut g), TwospinStatus::Ok);

        let mut out: *mut c_char = ptr::null_mut();
        assert_eq!(twospin_gadget_eval(g, p, &mut out), TwospinStatus::Ok);
        let v = take_json(out);
        assert_eq!(v["R"], "2/3");
        assert_eq!(v["M"], "5/6");
        assert_eq!(v["size"], "3");

        let mut round: *mut c_char = ptr::null_mut();
        assert_eq!(twospin_gadget_to_json(g, &mut round), TwospinStatus::Ok);
        let v = take_json(round);
        assert_eq!(v["t"], "merge");

        twospin_gadget_free(g);
        twospin_params_free(p);
    }
}

#[test]
fn reports_critical_activity() {
    unsafe {
        let mut out: *mut c_char = ptr::null_mut();
        assert_eq!(twospin_critical_activity(6, &mut out), TwospinStatus::Ok);
        let v = take_json(out);
        assert_eq!(v["lambda_c"], "3125/4096");
        assert_eq!(v["beta_c"], "2/3");
    }
}

#[test]
fn fixpoint_reports_nonuniqueness() {
    unsafe {
        let p = hard_core_unit();
        let mut out: *mut c_char = ptr::null_mut();
        assert_eq!(twospin_fixpoint(p, 6, 128, &mut out), TwospinStatus::Ok);
        let v = take_json(out);
        assert_eq!(v["verdict"], "non-unique");
        assert!(v["q_plus"].is_string());
        assert!(v["q_minus"].is_string());
        twospin_params_free(p);
    }
}

#[test]
fn finds_matched_pairs() {
    unsafe {
        let p = hard_core_unit();
        let tol = cstr("1/1000");
        let mut out: *mut c_char = ptr::null_mut();
        assert_eq!(twospin_find_pair(p, tol.as_ptr(), 1, 128, &mut out), TwospinStatus::Ok);
        let v = take_json(out);
        let pairs = v["pairs"].as_array().unwrap();
        assert!(!pairs.is_empty());
        assert_eq!(pairs[0]["R1"], pairs[0]["R2"]);
        assert_ne!(pairs[0]["M1"], pairs[0]["M2"]);
        twospin_params_free(p);
    }
}

#[test]
fn oracle_counts_configurations() {
    unsafe {
        let p = hard_core_unit();
        let graph = cstr(K4);
        let mut out: *mut c_char = ptr::null_mut();
        assert_eq!(twospin_oracle_summary(graph.as_ptr(), p, &mut out), TwospinStatus::Ok);
        let v = take_json(out);
        assert_eq!(v["Z"], "5");
        assert_eq!(v["method"], "enumeration");
        twospin_params_free(p);
    }
}

#[test]
fn status_codes_distinguish_failure_classes() {
    unsafe {
        let mut p: *mut TwospinParams = ptr::null_mut();

        let bad = cstr("zebra");
        let one = cstr("1");
        let status = twospin_params_new(bad.as_ptr(), one.as_ptr(), one.as_ptr(), &mut p);
        assert_eq!(status, TwospinStatus::Parse);
        let msg = twospin_last_error();
        assert!(!msg.is_null());
        assert!(CStr::from_ptr(msg).to_str().unwrap().contains("beta"));

        let two = cstr("2");
        let status = twospin_params_new(two.as_ptr(), two.as_ptr(), one.as_ptr(), &mut p);
        assert_eq!(status, TwospinStatus::Infeasible);

        let status = twospin_params_new(ptr::null(), one.as_ptr(), one.as_ptr(), &mut p);
        assert_eq!(status, TwospinStatus::NullArgument);

        let mut g: *mut TwospinGadget = ptr::null_mut();
        let garbage = cstr("{}");
        assert_eq!(twospin_gadget_parse(garbage.as_ptr(), &mut g), TwospinStatus::Parse);

        let ok = hard_core_unit();
        assert!(twospin_last_error().is_null());
        twospin_params_free(ok);
    }
}

#[test]
fn header_exposes_opaque_handles() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/twospin.h"
    ))
    .expect("generated header exists");
    assert!(header.contains("typedef struct TwospinParams TwospinParams;"));
    assert!(header.contains("typedef struct TwospinGadget TwospinGadget;"));
    assert!(header.contains("TWOSPIN_STATUS_INFEASIBLE = 3"));
    assert!(header.contains("twospin_string_free"));
}
