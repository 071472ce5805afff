use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use flowtree_ffi::*;

fn fixture(name: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = flowtree_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn field(name: &str, upper: u32, lower: u32) -> *mut FlowtreeField {
    let mut s = ptr::null_mut();
    assert_eq!(flowtree_scenario_load(fixture(name).as_ptr(), &mut s), FlowtreeStatus::Ok);
    let mut f = ptr::null_mut();
    assert_eq!(flowtree_field_new(s, upper, lower, &mut f), FlowtreeStatus::Ok);
    flowtree_scenario_free(s);
    f
}

#[test]
fn double_well_critical_points_match_closed_form() {
    unsafe {
        let f = field("double-well-1d.toml", 1, 2);
        let mut len = 0usize;
        assert_eq!(flowtree_field_critical_points(f, ptr::null_mut(), &mut len), FlowtreeStatus::Ok);
        assert_eq!(len, 2);
        let mut buf = vec![FlowtreeCritical { x: [0.0; 2], index: 0, value: 0.0, min_abs_eigenvalue: 0.0 }; len];
        assert_eq!(flowtree_field_critical_points(f, buf.as_mut_ptr(), &mut len), FlowtreeStatus::Ok);
        // F = x^3/3 - x, F'' = 2x.
        for (c, (x, idx)) in buf.iter().zip([(-1.0, 1), (1.0, 0)]) {
            assert!((c.x[0] - x).abs() < 1e-9);
            assert_eq!(c.index, idx);
            assert!((c.value - (x * x * x / 3.0 - x)).abs() < 1e-9);
            assert!((c.min_abs_eigenvalue - 2.0).abs() < 1e-6);
        }

        let mut short = 1usize;
        assert_eq!(flowtree_field_critical_points(f, buf.as_mut_ptr(), &mut short), FlowtreeStatus::OutOfRange);
        assert_eq!(short, 2);

        let (mut v, mut g) = (0.0, [0.0; 2]);
        assert_eq!(flowtree_field_eval(f, [0.5].as_ptr(), &mut v, g.as_mut_ptr()), FlowtreeStatus::Ok);
        assert!((v - (0.125 / 3.0 - 0.5)).abs() < 1e-12 && (g[0] - (0.25 - 1.0)).abs() < 1e-12);
        flowtree_field_free(f);
    }
}

#[test]
fn flow_descends_between_critical_points() {
    unsafe {
        let f = field("double-well-1d.toml", 1, 2);
        let mut fl = ptr::null_mut();
        assert_eq!(flowtree_flow_integrate(f, [0.0].as_ptr(), &mut fl), FlowtreeStatus::Ok);
        flowtree_field_free(f);
        assert_eq!(CStr::from_ptr(flowtree_flow_class(fl)).to_str().unwrap(), "morse");
        let mut len = 0usize;
        flowtree_flow_nodes(fl, ptr::null_mut(), &mut len);
        let mut nodes = vec![FlowtreeNode { t: 0.0, x: [0.0; 2], f: 0.0 }; len];
        assert_eq!(flowtree_flow_nodes(fl, nodes.as_mut_ptr(), &mut len), FlowtreeStatus::Ok);
        assert!(nodes.windows(2).all(|w| w[1].t > w[0].t && w[1].f <= w[0].f));
        assert!((nodes[0].x[0] + 1.0).abs() < 1e-6 && (nodes[len - 1].x[0] - 1.0).abs() < 1e-6);
        flowtree_flow_free(fl);
    }
}

#[test]
fn trees_validate_and_report_gamma() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(flowtree_tree_load(fixture("trees/double-well-edge.toml").as_ptr(), &mut t), FlowtreeStatus::Ok);
        let (mut ok, mut res) = (false, f64::NAN);
        assert_eq!(flowtree_tree_validate(t, 1e-6, &mut ok, &mut res), FlowtreeStatus::Ok);
        assert!(ok && res < 1e-6);
        assert_eq!(flowtree_tree_validate(t, 0.0, &mut ok, &mut res), FlowtreeStatus::InvalidInput);
        let mut g = ptr::null_mut();
        assert_eq!(flowtree_tree_gamma(t, &mut g), FlowtreeStatus::Ok);
        assert!(!CStr::from_ptr(g).to_bytes().is_empty());
        flowtree_string_free(g);
        flowtree_tree_free(t);

        assert_eq!(flowtree_tree_load(fixture("trees/double-well-moved.toml").as_ptr(), &mut t), FlowtreeStatus::Ok);
        assert_eq!(flowtree_tree_validate(t, 1e-6, &mut ok, &mut res), FlowtreeStatus::Ok);
        assert!(!ok);
        flowtree_tree_free(t);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(flowtree_scenario_load(ptr::null(), &mut s), FlowtreeStatus::NullArgument);
        assert!(last_error().contains("null"));
        assert_eq!(flowtree_scenario_load(fixture("nope.toml").as_ptr(), &mut s), FlowtreeStatus::Io);
        assert!(s.is_null());
        let bad = CString::new("name = 3 [").unwrap();
        assert_eq!(flowtree_scenario_parse(bad.as_ptr(), &mut s), FlowtreeStatus::Parse);
        assert!(!last_error().is_empty());

        let text = CString::new(std::fs::read_to_string(fixture("double-well-1d.toml").to_str().unwrap()).unwrap()).unwrap();
        assert_eq!(flowtree_scenario_parse(text.as_ptr(), &mut s), FlowtreeStatus::Ok);
        let mut dim = 0;
        assert_eq!(flowtree_scenario_dim(s, &mut dim), FlowtreeStatus::Ok);
        assert_eq!(dim, 1);
        let mut f = ptr::null_mut();
        assert_eq!(flowtree_field_new(s, 1, 9, &mut f), FlowtreeStatus::InvalidInput);
        assert!(flowtree_flow_class(ptr::null()).is_null());
        flowtree_scenario_free(s);
        flowtree_scenario_free(ptr::null_mut());
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/flowtree.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for e in exports {
        assert!(h.contains(&format!("{e}(")), "{e} missing from header");
    }
    assert!(h.contains("FLOWTREE_STATUS_OK = 0"));
}

#[test]
fn header_compiles_as_c() {
    let prog = r#"
#include "flowtree.h"
int main(void) {
    FlowtreeScenario *s = 0;
    FlowtreeStatus st = flowtree_scenario_load("x.toml", &s);
    if (st != FLOWTREE_STATUS_OK) { const char *m = flowtree_last_error(); (void)m; }
    flowtree_scenario_free(s);
    return 0;
}
"#;
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("smoke.c");
    std::fs::write(&c, prog).unwrap();
    let out = std::process::Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&c)
        .output()
        .expect("C compiler");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
