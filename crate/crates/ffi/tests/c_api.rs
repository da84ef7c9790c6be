use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use swgee::inference::{sandwich, Correction};
use swgee::{fit, Adjustment, ModelSpec, Structure, TrialData};
use swgee_ffi::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn last_error() -> String {
    let p = swgee_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(path: &PathBuf, individual: bool) -> *mut SwgeeTrial {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut trial = ptr::null_mut();
    let status = unsafe { swgee_trial_from_csv(c.as_ptr(), individual, &mut trial) };
    assert_eq!(status, SwgeeStatus::Ok);
    trial
}

#[test]
fn fit_through_handles_matches_library() {
    let path = fixture("trial_cp.csv");
    let trial = load(&path, false);
    let (mut i, mut j) = (0usize, 0usize);
    assert_eq!(unsafe { swgee_trial_dims(trial, &mut i, &mut j) }, SwgeeStatus::Ok);
    assert_eq!((i, j), (12, 5));

    let mut handle = ptr::null_mut();
    let status = unsafe {
        swgee_fit(trial, SwgeeLink::Logit, SwgeeStructure::NestedExchangeable, SwgeeAdjustment::Maee, &mut handle)
    };
    assert_eq!(status, SwgeeStatus::Ok);
    assert_eq!(unsafe { swgee_fit_converged(handle) }, 1);

    let data = swgee::data::ingest_cluster_period(std::fs::File::open(&path).unwrap()).unwrap();
    let direct = fit(&data, &ModelSpec::new(Structure::NestedExchangeable, Adjustment::Maee)).unwrap();

    let mut theta = [0.0; 6];
    let mut n = 0;
    assert_eq!(unsafe { swgee_fit_theta(handle, theta.as_mut_ptr(), theta.len(), &mut n) }, SwgeeStatus::Ok);
    assert_eq!(n, 6);
    assert_eq!(theta.as_slice(), direct.theta.as_slice());

    let mut alpha = [0.0; 2];
    assert_eq!(unsafe { swgee_fit_alpha(handle, alpha.as_mut_ptr(), 2, &mut n) }, SwgeeStatus::Ok);
    assert_eq!(alpha.to_vec(), direct.alpha.values());

    let mut se = [0.0; 8];
    let status = unsafe { swgee_fit_standard_errors(handle, SwgeeVariance::Bc1, se.as_mut_ptr(), 8, &mut n) };
    assert_eq!(status, SwgeeStatus::Ok);
    let cov = sandwich(&direct, &data, Correction::BC1, false).unwrap();
    for k in 0..8 {
        assert_eq!(se[k], cov[(k, k)].sqrt());
    }

    unsafe {
        swgee_fit_free(handle);
        swgee_trial_free(trial);
    }
}

#[test]
fn small_buffer_reports_required_length() {
    let trial = load(&fixture("trial_individual.csv"), true);
    let mut handle = ptr::null_mut();
    let status = unsafe {
        swgee_fit(trial, SwgeeLink::Logit, SwgeeStructure::Exchangeable, SwgeeAdjustment::Uee, &mut handle)
    };
    assert_eq!(status, SwgeeStatus::Ok);
    let mut buf = [0.0; 2];
    let mut n = 0;
    let status = unsafe { swgee_fit_theta(handle, buf.as_mut_ptr(), buf.len(), &mut n) };
    assert_eq!(status, SwgeeStatus::BufferTooSmall);
    assert_eq!(n, 6);
    assert!(last_error().contains("6 needed"));
    unsafe {
        swgee_fit_free(handle);
        swgee_trial_free(trial);
    }
}

#[test]
fn matrices_constructor_and_error_codes() {
    // y exceeds n in the last cell
    let sizes = [10u64, 10, 10, 10];
    let totals = [2u64, 3, 4, 11];
    let treatment = [0u8, 1, 0, 1];
    let mut trial = ptr::null_mut();
    let status =
        unsafe { swgee_trial_new(2, 2, sizes.as_ptr(), totals.as_ptr(), treatment.as_ptr(), &mut trial) };
    assert_eq!(status, SwgeeStatus::Input);
    assert!(trial.is_null());
    assert!(last_error().contains("exceeds"));

    let status = unsafe { swgee_trial_new(2, 2, ptr::null(), totals.as_ptr(), treatment.as_ptr(), &mut trial) };
    assert_eq!(status, SwgeeStatus::NullPointer);

    // single period: the mean model is not identified
    let totals = [2u64, 3];
    let sizes = [10u64, 10];
    let treatment = [0u8, 1];
    let status =
        unsafe { swgee_trial_new(2, 1, sizes.as_ptr(), totals.as_ptr(), treatment.as_ptr(), &mut trial) };
    assert_eq!(status, SwgeeStatus::Ok);
    let mut handle = ptr::null_mut();
    let status = unsafe {
        swgee_fit(trial, SwgeeLink::Logit, SwgeeStructure::Independence, SwgeeAdjustment::Uee, &mut handle)
    };
    assert_ne!(status, SwgeeStatus::Ok);
    assert!(handle.is_null());
    unsafe { swgee_trial_free(trial) };

    assert_eq!(unsafe { swgee_fit_converged(ptr::null()) }, -1);
    let path = CString::new("/nonexistent/trial.csv").unwrap();
    assert_eq!(unsafe { swgee_trial_from_csv(path.as_ptr(), false, &mut trial) }, SwgeeStatus::Input);
}

#[test]
fn trial_from_matrices_equals_csv() {
    let data = swgee::data::ingest_cluster_period(std::fs::File::open(fixture("trial_cp.csv")).unwrap()).unwrap();
    let flat = |m: &[Vec<u64>]| m.iter().flatten().copied().collect::<Vec<_>>();
    let (s, y) = (flat(data.sizes()), flat(data.totals()));
    let t: Vec<u8> = data.treatment().iter().flatten().copied().collect();
    let mut trial = ptr::null_mut();
    let status = unsafe {
        swgee_trial_new(data.n_clusters(), data.n_periods(), s.as_ptr(), y.as_ptr(), t.as_ptr(), &mut trial)
    };
    assert_eq!(status, SwgeeStatus::Ok);
    let rebuilt = TrialData::from_matrices(data.sizes().to_vec(), data.totals().to_vec(), data.treatment().to_vec())
        .unwrap();
    let mut a = ptr::null_mut();
    unsafe { swgee_fit(trial, SwgeeLink::Logit, SwgeeStructure::ExponentialDecay, SwgeeAdjustment::Maee, &mut a) };
    let direct = fit(&rebuilt, &ModelSpec::new(Structure::ExponentialDecay, Adjustment::Maee)).unwrap();
    let mut theta = vec![0.0; 6];
    unsafe { swgee_fit_theta(a, theta.as_mut_ptr(), 6, ptr::null_mut()) };
    assert_eq!(theta, direct.theta);
    unsafe {
        swgee_fit_free(a);
        swgee_trial_free(trial);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(swgee_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/swgee.h")).unwrap();
    for name in [
        "swgee_trial_new",
        "swgee_trial_from_csv",
        "swgee_trial_free",
        "swgee_fit",
        "swgee_fit_theta",
        "swgee_fit_alpha",
        "swgee_fit_standard_errors",
        "swgee_fit_free",
        "swgee_last_error",
        "typedef struct SwgeeFit SwgeeFit",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
    let Ok(cc) = which_cc() else { return };
    let src = std::env::temp_dir().join(format!("swgee_header_{}.c", std::process::id()));
    std::fs::write(
        &src,
        "#include \"swgee.h\"\nint main(void) { SwgeeFit *f = 0; return swgee_fit_converged(f) == -1 ? 0 : 1; }\n",
    )
    .unwrap();
    let out = Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output()
        .unwrap();
    let _ = std::fs::remove_file(&src);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
