use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use growfrag_ffi::*;

fn last_error() -> String {
    let p = gf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn hump() -> *mut GfModel {
    let mut m = ptr::null_mut();
    let name = CString::new("hump").unwrap();
    assert_eq!(unsafe { gf_model_family(name.as_ptr(), &mut m) }, GfStatus::Ok);
    m
}

#[test]
fn model_handles_evaluate_rates() {
    let m = hump();
    let (mut c, mut b, mut g) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(gf_model_growth(m, 1.0, &mut c), GfStatus::Ok);
        assert_eq!(gf_model_fission(m, 1.0, &mut b), GfStatus::Ok);
        assert_eq!(gf_model_gamma(m, &mut g), GfStatus::Ok);
        gf_model_free(m);
    }
    assert!((c - 1.5).abs() < 1e-12);
    assert!((b - 2.0).abs() < 1e-12);
    assert!((g - 1.5).abs() < 1e-12);
}

#[test]
fn errors_set_codes_and_messages() {
    let mut m = ptr::null_mut();
    let bad = CString::new("family = \"hump\"\na = -1.0").unwrap();
    assert_eq!(unsafe { gf_model_from_toml(bad.as_ptr(), &mut m) }, GfStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("model.a"));

    let mut out = 0.0;
    assert_eq!(unsafe { gf_model_growth(ptr::null(), 1.0, &mut out) }, GfStatus::NullPointer);

    let m = hump();
    let times = [0.0, 3.0];
    let (mut counts, mut masses) = ([0.0; 2], [0.0; 2]);
    let st = unsafe {
        gf_simulate_population(m, 1.0, 2.0, 10, 1, 0, times.as_ptr(), 2, counts.as_mut_ptr(), masses.as_mut_ptr())
    };
    assert_eq!(st, GfStatus::InvalidArgument);
    let st = unsafe {
        gf_simulate_population(m, 1.0, 50.0, 10, 1, 0, times.as_ptr(), 2, counts.as_mut_ptr(), masses.as_mut_ptr())
    };
    assert_eq!(st, GfStatus::Explosion);
    unsafe { gf_model_free(m) };
}

#[test]
fn criterion_and_spectral_round_trip() {
    let m = hump();
    let mut crit = GfCriterionResult::default();
    assert_eq!(unsafe { gf_criterion(m, &mut crit) }, GfStatus::Ok);
    assert_eq!((crit.infinity_ok, crit.zero_ok), (1, 1));

    let opts = CString::new(
        "n_h = 2000\nn_nu = 2000\nh_grid = [0.05, 20.0, 12]\nnu_grid = [0.5, 2.0, 4]\n[malthus]\nn_max = 65536\ntolerance = 0.02",
    )
    .unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { gf_spectral_solve(m, opts.as_ptr(), 5, &mut s) }, GfStatus::Ok, "{}", last_error());
    let (mut lambda, mut se, mut h1, mut len) = (0.0, 0.0, 0.0, 0usize);
    unsafe {
        assert_eq!(gf_spectral_lambda(s, &mut lambda, &mut se), GfStatus::Ok);
        assert_eq!(gf_spectral_h(s, 1.0, &mut h1), GfStatus::Ok);
        assert_eq!(gf_spectral_nu_len(s, &mut len), GfStatus::Ok);
    }
    assert!((lambda - 1.1465).abs() < 0.05, "{lambda}");
    // h(x0) = x0 L(lambda) = x0 up to Monte Carlo and interpolation error
    assert!((h1 - 1.0).abs() < 0.05, "{h1}");
    let (mut grid, mut dens) = (vec![0.0; len], vec![0.0; len]);
    unsafe {
        assert_eq!(gf_spectral_nu(s, grid.as_mut_ptr(), dens.as_mut_ptr(), len), GfStatus::Ok);
        assert_eq!(gf_spectral_nu(s, grid.as_mut_ptr(), dens.as_mut_ptr(), len + 1), GfStatus::InvalidArgument);
        gf_spectral_free(s);
        gf_model_free(m);
    }
    assert!(dens.iter().all(|d| *d > 0.0));
}

/// Directory holding the static library built alongside this test binary.
/// `cargo test` refreshes the copy in `deps/`; the uplifted one in the
/// profile directory can be stale.
fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    if deps.join("libgrowfrag_ffi.a").exists() {
        deps.to_path_buf()
    } else {
        deps.parent().unwrap().to_path_buf()
    }
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include").join("growfrag.h");
    assert!(header.exists(), "header not generated");
    let lib = lib_dir().join("libgrowfrag_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests").join("c").join("smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C smoke program failed to compile");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
