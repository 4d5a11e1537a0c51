use std::ffi::{CStr, CString};
use std::ptr;

use panelbreak::inference::critical::{simulate_critical_values, CvSimSpec};
use panelbreak::simlab::{generate, DgpSpec};
use panelbreak::PanelDataset;
use panelbreak_ffi::*;
use serde_json::Value;

fn flatten(p: &PanelDataset) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, t) = (p.n_units(), p.n_periods());
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut w = Vec::new();
    for i in 0..n {
        for s in 0..t {
            y.push(p.y()[(s, i)]);
            x.extend((0..p.p_x()).map(|c| p.x()[i][(s, c)]));
            w.extend((0..p.p_w()).map(|c| p.w()[i][(s, c)]));
        }
    }
    (y, x, w)
}

fn handle(p: &PanelDataset) -> *mut PbPanel {
    let (y, x, w) = flatten(p);
    let mut out = ptr::null_mut();
    let st = unsafe {
        pb_panel_new(p.n_units(), p.n_periods(), p.p_x(), p.p_w(), y.as_ptr(), x.as_ptr(), w.as_ptr(), &mut out)
    };
    assert_eq!(st, PbStatus::Ok);
    out
}

fn take_json(s: *mut std::ffi::c_char) -> Value {
    let v = serde_json::from_str(unsafe { CStr::from_ptr(s) }.to_str().unwrap()).unwrap();
    unsafe { pb_string_free(s) };
    v
}

fn last_error() -> String {
    let p = pb_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn panel() -> PanelDataset {
    generate(&DgpSpec::null(40, 30, 7).with_breaks(&[15], 2.0)).unwrap().0
}

#[test]
fn arrays_round_trip_dims() {
    let p = panel();
    let h = handle(&p);
    let (mut n, mut t, mut px, mut pw) = (0, 0, 0, 0);
    assert_eq!(unsafe { pb_panel_dims(h, &mut n, &mut t, &mut px, &mut pw) }, PbStatus::Ok);
    assert_eq!((n, t, px, pw), (40, 30, 2, 2));
    unsafe { pb_panel_free(h) };
}

#[test]
fn estimate_matches_library() {
    let p = panel();
    let h = handle(&p);
    let opts = CString::new(r#"{"k": 1, "trim": 0.15}"#).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pb_estimate(h, opts.as_ptr(), &mut out) }, PbStatus::Ok);
    let v = take_json(out);

    let lib = panelbreak::search::estimate_breaks(
        &p,
        &panelbreak::search::BreakSearch::Global { k: 1 },
        &panelbreak::Trimming::new(0.15).unwrap(),
        &Default::default(),
    )
    .unwrap();
    let dates: Vec<u64> = lib.fit.breaks.dates().iter().map(|&d| d as u64).collect();
    let got: Vec<u64> = v["fit"]["breaks"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap()).collect();
    assert_eq!(got, dates);
    assert!(v["confidence"]["intervals"].as_array().unwrap().len() == 1);
    unsafe { pb_panel_free(h) };
}

#[test]
fn tests_through_loaded_table() {
    let spec = CvSimSpec { max_p_w: 2, epsilons: vec![0.15], k_cap: 2, grid: 200, reps: 400, seed: 3 };
    let table = simulate_critical_values(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cv.csv");
    table.save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut th = ptr::null_mut();
    assert_eq!(unsafe { pb_table_load(cpath.as_ptr(), &mut th) }, PbStatus::Ok);

    let mut cv = 0.0;
    assert_eq!(unsafe { pb_table_value(th, PbCvKind::SupF, 1, 2, 0.15, 0.05, &mut cv) }, PbStatus::Ok);
    assert!(cv > 0.0);
    assert_eq!(unsafe { pb_table_value(th, PbCvKind::SupF, 1, 5, 0.15, 0.05, &mut cv) }, PbStatus::Input);
    assert!(last_error().contains("cv simulate"));

    let h = handle(&panel());
    for opts in [r#"{"test":"supf","k":1}"#, r#"{"test":"wdmax","k_max":2,"weights":"unit"}"#, r#"{"test":"seqf"}"#] {
        let o = CString::new(opts).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { pb_test(h, th, o.as_ptr(), &mut out) }, PbStatus::Ok, "{opts}: {}", last_error());
        let v = take_json(out);
        assert!(v["statistic"].as_f64().unwrap() >= 0.0);
        assert!(v["reject"].is_boolean());
    }
    unsafe {
        pb_panel_free(h);
        pb_table_free(th);
    }
}

#[test]
fn known_dates_need_no_table() {
    let h = handle(&panel());
    let o = CString::new(r#"{"test":"fknown","dates":[15]}"#).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pb_test(h, ptr::null(), o.as_ptr(), &mut out) }, PbStatus::Ok);
    let v = take_json(out);
    assert!(v["p_value"].as_f64().unwrap() < 0.05);
    unsafe { pb_panel_free(h) };
}

#[test]
fn error_codes() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pb_estimate(ptr::null(), c"{}".as_ptr(), &mut out) }, PbStatus::NullArgument);
    assert!(last_error().contains("panel"));

    let h = handle(&panel());
    assert_eq!(unsafe { pb_test(h, ptr::null(), c"{\"test\":\"supf\"}".as_ptr(), &mut out) }, PbStatus::NullArgument);
    assert_eq!(unsafe { pb_test(h, ptr::null(), c"{\"test\":\"nope\"}".as_ptr(), &mut out) }, PbStatus::Input);
    assert_eq!(unsafe { pb_estimate(h, c"not json".as_ptr(), &mut out) }, PbStatus::Input);
    // Too many breaks for the trimming.
    assert_eq!(unsafe { pb_estimate(h, c"{\"k\":9,\"trim\":0.15}".as_ptr(), &mut out) }, PbStatus::Infeasible);
    unsafe { pb_panel_free(h) };

    let y = [1.0; 4];
    let w = [1.0; 4];
    assert_eq!(unsafe { pb_panel_new(2, 2, 1, 1, y.as_ptr(), ptr::null(), w.as_ptr(), &mut out.cast()) }, PbStatus::NullArgument);
}

#[test]
fn header_is_generated() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/panelbreak.h")).unwrap();
    for sym in ["pb_panel_new", "pb_panel_load_csv", "pb_estimate", "pb_test", "pb_table_value", "pb_string_free", "typedef struct PbPanel PbPanel"] {
        assert!(h.contains(sym), "{sym}");
    }
    assert!(!unsafe { CStr::from_ptr(pb_version()) }.to_bytes().is_empty());
}
