//! The C entry points called the way a C client would.

use std::ffi::{CStr, CString};
use std::ptr;

use incimg_ffi::*;

const CONFIG: &str = r#"{
  "schema_version": 1,
  "scenario": {
    "domain": { "rect": { "x0": -1.0, "y0": -1.0, "x1": 1.0, "y1": 1.0 }, "T": 5.657 },
    "inclusions": [
      { "center": [0.3, 0.2], "alpha": 0.1, "shape": { "kind": "disk", "radius": 1.0 }, "mu": 2.0 }
    ],
    "c0": 0.1
  },
  "grid": { "h": 0.05, "dt": 0.028 },
  "spectral": { "eta_max": 4.0, "n": 9 }
}"#;

fn last_error() -> String {
    let p = incimg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn experiment(json: &str) -> (IncimgStatus, *mut IncimgExperiment) {
    let c = CString::new(json).unwrap();
    let mut exp = ptr::null_mut();
    let st = unsafe { incimg_experiment_from_json(c.as_ptr(), &mut exp) };
    (st, exp)
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(incimg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn bad_config_reports_code_and_message() {
    let (st, exp) = experiment("{ not json");
    assert_eq!(st, IncimgStatus::Config);
    assert!(exp.is_null());
    assert!(last_error().contains("line"));

    let (st, _) = experiment(&CONFIG.replace("\"dt\": 0.028", "\"dt\": 0.5"));
    assert_eq!(st, IncimgStatus::Config);

    let mut exp = ptr::null_mut();
    assert_eq!(unsafe { incimg_experiment_from_json(ptr::null(), &mut exp) }, IncimgStatus::NullPointer);
    let bytes = [0xffu8, 0];
    assert_eq!(
        unsafe { incimg_experiment_from_json(bytes.as_ptr().cast(), &mut exp) },
        IncimgStatus::InvalidUtf8
    );
}

#[test]
fn null_handles_are_rejected_and_free_accepts_null() {
    let mut n = 0usize;
    assert_eq!(unsafe { incimg_experiment_inclusion_count(ptr::null(), &mut n) }, IncimgStatus::NullPointer);
    assert_eq!(unsafe { incimg_reconstruction_count(ptr::null(), &mut n) }, IncimgStatus::NullPointer);
    unsafe {
        incimg_experiment_free(ptr::null_mut());
        incimg_trace_free(ptr::null_mut());
        incimg_reconstruction_free(ptr::null_mut());
    }
}

#[test]
fn disk_tensor_matches_the_law() {
    let shape = CString::new(r#"{"kind": "disk", "radius": 1.0}"#).unwrap();
    let mut m = [0.0; 4];
    assert_eq!(unsafe { incimg_shape_tensor(shape.as_ptr(), 2.0, 128, 0, m.as_mut_ptr()) }, IncimgStatus::Ok);
    let want = 2.0 * std::f64::consts::PI / 3.0;
    assert!((m[0] - want).abs() < 1e-6 && (m[3] - want).abs() < 1e-6 && m[1].abs() < 1e-9);
    assert!(incimg_last_error().is_null());

    let mut o = [0.0; 4];
    assert_eq!(unsafe { incimg_shape_tensor(shape.as_ptr(), 2.0, 128, 1, o.as_mut_ptr()) }, IncimgStatus::Ok);
    assert!((o[0] - 2.0 * m[0]).abs() < 1e-6);

    assert_eq!(
        unsafe { incimg_shape_tensor(shape.as_ptr(), -1.0, 128, 0, m.as_mut_ptr()) },
        IncimgStatus::InvalidArgument
    );
    assert!(!last_error().is_empty());
}

#[test]
fn forward_trace_round_trip() {
    let (st, exp) = experiment(CONFIG);
    assert_eq!(st, IncimgStatus::Ok);
    let mut n = 0usize;
    assert_eq!(unsafe { incimg_experiment_inclusion_count(exp, &mut n) }, IncimgStatus::Ok);
    assert_eq!(n, 1);

    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { incimg_forward(exp, 2.0, 1.0, 1, &mut trace) }, IncimgStatus::Ok);
    let (mut nt, mut na) = (0usize, 0usize);
    assert_eq!(unsafe { incimg_trace_shape(trace, &mut nt, &mut na) }, IncimgStatus::Ok);
    assert_eq!(na, 160);
    let (mut dt, mut ds) = (0.0, 0.0);
    assert_eq!(unsafe { incimg_trace_steps(trace, &mut dt, &mut ds) }, IncimgStatus::Ok);
    assert!(((nt - 1) as f64 * dt - 5.657).abs() < 1e-9 && (ds - 0.05).abs() < 1e-12);

    let mut short = vec![0.0; 3];
    assert_eq!(unsafe { incimg_trace_copy(trace, short.as_mut_ptr(), 3) }, IncimgStatus::OutOfRange);
    let mut buf = vec![0.0; 2 * nt * na];
    assert_eq!(unsafe { incimg_trace_copy(trace, buf.as_mut_ptr(), buf.len()) }, IncimgStatus::Ok);
    assert!(buf[..2 * na].iter().all(|v| *v == 0.0));
    assert!(buf.iter().any(|v| v.abs() > 0.0));

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { incimg_forward(exp, 0.0, 0.0, 0, &mut bad) }, IncimgStatus::InvalidArgument);
    assert!(bad.is_null());
    unsafe {
        incimg_trace_free(trace);
        incimg_experiment_free(exp);
    }
}

#[test]
fn reconstruction_finds_the_disk() {
    let (_, exp) = experiment(CONFIG);
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { incimg_reconstruct(exp, &mut r) }, IncimgStatus::Ok, "{}", last_error());
    let mut n = 0usize;
    assert_eq!(unsafe { incimg_reconstruction_count(r, &mut n) }, IncimgStatus::Ok);
    assert_eq!(n, 1);
    let (mut c, mut q) = ([0.0; 2], [0.0; 4]);
    assert_eq!(unsafe { incimg_reconstruction_get(r, 0, c.as_mut_ptr(), q.as_mut_ptr()) }, IncimgStatus::Ok);
    assert!((c[0] - 0.3).hypot(c[1] - 0.2) < std::f64::consts::PI / 9.0, "{c:?}");
    assert!(q[0] + q[3] < 0.0 && q[1] == q[2]);
    assert_eq!(
        unsafe { incimg_reconstruction_get(r, 1, c.as_mut_ptr(), q.as_mut_ptr()) },
        IncimgStatus::OutOfRange
    );
    unsafe {
        incimg_reconstruction_free(r);
        incimg_experiment_free(exp);
    }
}

#[test]
fn header_is_valid_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"incimg.h\"\nint main(void) {\n  IncimgExperiment *e = 0;\n  incimg_experiment_free(e);\n  return INCIMG_STATUS_OK;\n}\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let Ok(out) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
