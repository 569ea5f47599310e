use std::ffi::CStr;
use std::ptr;

use knt_ffi::*;

fn gaussian_rows(n: usize, d: usize) -> Vec<f64> {
    let x = knt::synthdata::gen_gaussian(d, n, 11).unwrap();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(x[(i, j)]);
        }
    }
    out
}

fn last_error() -> String {
    let p = knt_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn vector_test_roundtrip() {
    let rows = gaussian_rows(60, 2);
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(knt_dataset_from_vectors(rows.as_ptr(), 60, 2, &mut ds), KntStatus::Ok);
        let mut cfg = knt_test_config_default();
        cfg.replications = 50;
        cfg.seed = 3;
        let mut report = ptr::null_mut();
        assert_eq!(knt_run_test(ds, &cfg, &mut report), KntStatus::Ok);
        let stat = knt_report_statistic(report);
        let q = knt_report_quantile(report);
        assert!(stat >= 0.0 && q >= 0.0);
        assert_eq!(knt_report_reject(report), stat > q);
        let p = knt_report_p_value(report);
        assert!(p > 0.0 && p <= 1.0);
        let mut len = 0;
        let reps = knt_report_replications(report, &mut len);
        assert_eq!(len, 50);
        assert!(!reps.is_null());

        let json = knt_report_to_json(report);
        let text = CStr::from_ptr(json).to_str().unwrap();
        let parsed: knt::TestReport = knt::io::from_json(text).unwrap();
        assert_eq!(parsed.statistic, stat);
        knt_string_free(json);
        knt_report_free(report);
        knt_dataset_free(ds);
    }
}

#[test]
fn same_seed_same_report() {
    let rows = gaussian_rows(40, 3);
    let mut ds = ptr::null_mut();
    unsafe {
        knt_dataset_from_vectors(rows.as_ptr(), 40, 3, &mut ds);
        let mut cfg = knt_test_config_default();
        cfg.replications = 30;
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        knt_run_test(ds, &cfg, &mut a);
        knt_run_test(ds, &cfg, &mut b);
        assert_eq!(knt_report_statistic(a), knt_report_statistic(b));
        assert_eq!(knt_report_quantile(a), knt_report_quantile(b));
        knt_report_free(a);
        knt_report_free(b);
        knt_dataset_free(ds);
    }
}

#[test]
fn gram_input_and_known_model() {
    let n = 30;
    let rows = gaussian_rows(n, 2);
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            gram[i * n + j] = rows[2 * i] * rows[2 * j] + rows[2 * i + 1] * rows[2 * j + 1];
        }
    }
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(knt_dataset_from_gram(gram.as_ptr(), n, &mut ds), KntStatus::Ok);
        let mut cfg = knt_test_config_default();
        cfg.replications = 20;
        cfg.sigma = 0.3;
        cfg.model = KntModel::KnownMean;
        // the sample mean written as coefficients on the observations
        let coeffs = vec![1.0 / n as f64; n];
        cfg.known_mean = coeffs.as_ptr();
        cfg.known_dim = n;
        let mut report = ptr::null_mut();
        assert_eq!(knt_run_test(ds, &cfg, &mut report), KntStatus::Ok, "{}", last_error());
        knt_report_free(report);
        knt_dataset_free(ds);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let rows = gaussian_rows(10, 2);
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(
            knt_dataset_from_vectors(ptr::null(), 10, 2, &mut ds),
            KntStatus::NullPointer
        );
        assert!(last_error().contains("data"));

        let bad = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let mut g = ptr::null_mut();
        assert_eq!(knt_dataset_from_gram(bad.as_ptr(), 3, &mut g), KntStatus::InvalidData);
        assert!(last_error().contains("symmetric"), "{}", last_error());

        knt_dataset_from_vectors(rows.as_ptr(), 10, 2, &mut ds);
        let mut cfg = knt_test_config_default();
        cfg.alpha = 1.5;
        let mut report = ptr::null_mut();
        assert_eq!(knt_run_test(ds, &cfg, &mut report), KntStatus::InvalidArgument);
        assert!(report.is_null());

        cfg = knt_test_config_default();
        cfg.model = KntModel::Known;
        assert_eq!(knt_run_test(ds, &cfg, &mut report), KntStatus::NullPointer);
        knt_dataset_free(ds);
    }
    // a successful call clears the message
    assert!(knt_alpha_schedule(600) > 0.0);
    let mut ds = ptr::null_mut();
    unsafe {
        knt_dataset_from_vectors(rows.as_ptr(), 10, 2, &mut ds);
        assert!(knt_last_error_message().is_null());
        knt_dataset_free(ds);
    }
}

#[test]
fn rank_selection_on_rank_one_data() {
    let n = 80;
    let x = knt::synthdata::gen_lowrank(knt::synthdata::Decay::Poly, 1, 4, n, 5).unwrap();
    let mut rows = Vec::new();
    for i in 0..n {
        for j in 0..4 {
            rows.push(x[(i, j)]);
        }
    }
    let mut ds = ptr::null_mut();
    let mut r_hat = 0;
    unsafe {
        knt_dataset_from_vectors(rows.as_ptr(), n, 4, &mut ds);
        let status = knt_select_rank(ds, KntKernel::Gaussian, 0.0, 3, 0.0, 50, 1, &mut r_hat);
        assert_eq!(status, KntStatus::Ok, "{}", last_error());
        knt_dataset_free(ds);
    }
    assert_eq!(r_hat, 1);
}

#[test]
fn schedule_matches_core() {
    assert_eq!(knt_alpha_schedule(600), knt::alpha_schedule(600));
}

#[test]
fn null_handles_are_tolerated() {
    unsafe {
        knt_dataset_free(ptr::null_mut());
        knt_report_free(ptr::null_mut());
        knt_string_free(ptr::null_mut());
        assert!(knt_report_statistic(ptr::null()).is_nan());
        assert!(knt_report_to_json(ptr::null()).is_null());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/knt.h")).unwrap();
    for name in [
        "knt_dataset_from_vectors",
        "knt_dataset_from_gram",
        "knt_dataset_free",
        "knt_test_config_default",
        "knt_run_test",
        "knt_report_to_json",
        "knt_report_free",
        "knt_string_free",
        "knt_select_rank",
        "knt_alpha_schedule",
        "knt_last_error_message",
        "KNT_STATUS_OK",
        "typedef struct KntDataset KntDataset",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
