//! End-to-end tests of the `frc` binary: artifact round trips, determinism,
//! validation errors and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn frc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_is_deterministic_and_round_trips_through_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let args = [
        "simulate", "--out-dir", "a", "--n", "5", "--days", "750", "--seed", "33", "--kappa",
        "1.3",
    ];
    assert_ok(&frc(&args, dir));
    let mut args_b = args;
    args_b[2] = "b";
    assert_ok(&frc(&args_b, dir));
    // Identical seeds and configs give byte-identical artifacts.
    for name in ["rates.csv", "flows.csv", "truth.json"] {
        let a = fs::read(dir.join("a").join(name)).unwrap();
        let b = fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(a, b, "artifact {name} differs between identical runs");
    }
    // And the stiffness fit on the output recovers the generator value.
    assert_ok(&frc(
        &["fit-kappa", "--rates", "a/rates.csv", "--flows", "a/flows.csv", "--out-dir", "fk"],
        dir,
    ));
    let kappa_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("fk/kappa.json")).unwrap()).unwrap();
    let kappa = kappa_json["kappa"].as_f64().unwrap();
    assert!(
        (kappa - 1.3).abs() / 1.3 <= 0.05,
        "recovered kappa {kappa} more than 5% from 1.3"
    );
    assert!(kappa_json["explained_variance"].as_f64().unwrap() >= 0.95);
    assert!(dir.join("fk/run-manifest.json").exists());
    assert!(dir.join("fk/plot_noise_response.csv").exists());
}

#[test]
fn panel_emit_then_ingest_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&frc(
        &["simulate", "--out-dir", "sim", "--n", "3", "--days", "60", "--seed", "5"],
        dir,
    ));
    // Re-ingesting the emitted panel and fitting twice must agree exactly:
    // the 17-significant-digit float format round-trips bit-exactly.
    let rates = fs::read_to_string(dir.join("sim/rates.csv")).unwrap();
    let reparsed: Vec<f64> = rates
        .lines()
        .skip(2)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()))
        .collect();
    let rewritten: Vec<String> = reparsed.iter().map(|v| format!("{v:.16e}")).collect();
    let original: Vec<String> = rates
        .lines()
        .skip(2)
        .flat_map(|l| l.split(',').skip(1).map(str::to_string))
        .collect();
    assert_eq!(rewritten, original);
}

#[test]
fn rates_levels_are_differenced() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // 61 level rows -> 60 increments; enough history for the rolling window.
    let mut rates = String::from("date,t03,t06\n");
    let mut flows = String::from("date,t03,t06\n");
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let mut level = 1.0_f64;
    let mut d = start;
    let mut rows = 0;
    while rows < 61 {
        use chrono::Datelike;
        if !matches!(d.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun) {
            level += 0.01 * ((rows * 7 % 13) as f64 - 6.0);
            rates.push_str(&format!("{d},{:.6},{:.6}\n", level, level * 0.5));
            flows.push_str(&format!("{d},{:.6},{:.6}\n", (rows % 5) as f64 - 2.0, 1.0));
            rows += 1;
        }
        d = d.succ_opt().unwrap();
    }
    fs::write(dir.join("rates.csv"), rates).unwrap();
    fs::write(dir.join("flows.csv"), flows).unwrap();
    let out = frc(
        &["fit-kappa", "--rates", "rates.csv", "--flows", "flows.csv", "--out-dir", "fk"],
        dir,
    );
    assert_ok(&out);
    let kappa_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("fk/kappa.json")).unwrap()).unwrap();
    assert_eq!(kappa_json["days"].as_u64().unwrap(), 60, "levels should lose one row");
}

#[test]
fn mismatched_dates_exit_with_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("rates.csv"),
        "date_delta,t03\n2020-01-01,0.1\n2020-01-02,0.2\n2020-01-03,0.1\n",
    )
    .unwrap();
    fs::write(
        dir.join("flows.csv"),
        "date_delta,t03\n2020-01-01,1.0\n2020-01-06,1.0\n2020-01-07,1.0\n",
    )
    .unwrap();
    let out = frc(
        &["fit-kappa", "--rates", "rates.csv", "--flows", "flows.csv", "--out-dir", "fk"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let err: serde_json::Value = serde_json::from_str(stderr.trim()).expect("error is JSON");
    assert_eq!(err["error"]["kind"], "validation");
    assert!(
        err["error"]["message"].as_str().unwrap().contains("2020-01-02"),
        "error should name the first offending date: {stderr}"
    );
}

#[test]
fn unknown_schema_version_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("rates.csv"), "# frc-panel-v9\ndate_delta,t03\n2020-01-01,0.1\n").unwrap();
    fs::write(dir.join("flows.csv"), "date_delta,t03\n2020-01-01,1.0\n").unwrap();
    let out = frc(
        &["fit-kappa", "--rates", "rates.csv", "--flows", "flows.csv", "--out-dir", "fk"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown schema"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("cfg.json"), r#"{"kappa": 1.0, "not_a_key": true}"#).unwrap();
    let out = frc(&["impulse", "--config", "cfg.json", "--out-dir", "imp"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}

#[test]
fn impulse_with_zero_volume_writes_zero_response() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&frc(
        &["impulse", "--out-dir", "imp", "--n", "4", "--tenor", "2", "--volume", "0"],
        dir,
    ));
    let body = fs::read_to_string(dir.join("imp/impulse.csv")).unwrap();
    for line in body.lines().skip(1) {
        let value: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(value, 0.0, "nonzero response at zero volume: {line}");
    }
}

#[test]
fn evaluate_reports_in_and_out_of_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&frc(
        &[
            // From 2015-07-01, 1380 business days end mid-2020: two
            // calendar-year periods (2015-2017, 2018-2020).
            "simulate", "--out-dir", "sim", "--n", "3", "--days", "1380", "--seed", "2",
            "--kappa", "1.3",
        ],
        dir,
    ));
    assert_ok(&frc(
        &[
            "evaluate",
            "--rates",
            "sim/rates.csv",
            "--flows",
            "sim/flows.csv",
            "--kinds",
            "ml,diag",
            "--out-dir",
            "ev",
        ],
        dir,
    ));
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("ev/eval.json")).unwrap()).unwrap();
    let reports = eval["reports"].as_array().unwrap();
    // Two periods x two kinds x in/out.
    assert_eq!(reports.len(), 8);
    assert!(reports.iter().any(|r| r["sample"] == "out"));
    for r in reports {
        assert!(r["r2_w_sigma"].as_f64().unwrap() <= 1.0);
    }
}

#[test]
fn build_impact_kyle_is_symmetric() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&frc(
        &["simulate", "--out-dir", "sim", "--n", "4", "--days", "200", "--seed", "9"],
        dir,
    ));
    assert_ok(&frc(
        &[
            "build-impact",
            "--rates",
            "sim/rates.csv",
            "--flows",
            "sim/flows.csv",
            "--kind",
            "kyle",
            "--out-dir",
            "imp",
        ],
        dir,
    ));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("imp/impact.json")).unwrap()).unwrap();
    assert!(meta["symmetry_error"].as_f64().unwrap() < 1e-8);
    assert!(meta["min_eigenvalue_rel"].as_f64().unwrap() > -1e-10);
    assert!(dir.join("imp/lambda.csv").exists());
}

#[test]
fn pairwise_kyle_numeric_grid_is_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&frc(
        &["pairwise-dr2", "--mode", "kyle-numeric", "--grid-points", "4", "--out-dir", "pw"],
        dir,
    ));
    let body = fs::read_to_string(dir.join("pw/plot_dr2.csv")).unwrap();
    for line in body.lines().skip(1) {
        let value: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(value.abs() <= 0.01, "grid value {value} breaks flatness");
    }
}

#[test]
fn fit_y_and_pairwise_modes_run_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&frc(
        &[
            "simulate", "--out-dir", "sim", "--n", "3", "--days", "400", "--seed", "4",
            "--kappa", "1.3",
        ],
        dir,
    ));
    assert_ok(&frc(
        &[
            "fit-y", "--rates", "sim/rates.csv", "--flows", "sim/flows.csv", "--kind", "bbdlw",
            "--out-dir", "fy",
        ],
        dir,
    ));
    let cal: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("fy/calibration.json")).unwrap())
            .unwrap();
    let y = cal["y"].as_array().unwrap();
    assert_eq!(y.len(), 3);
    for v in y {
        let v = v.as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert_ok(&frc(
        &[
            "pairwise-dr2", "--rates", "sim/rates.csv", "--flows", "sim/flows.csv", "--mode",
            "ml-theory", "--out-dir", "pw",
        ],
        dir,
    ));
    let body = fs::read_to_string(dir.join("pw/dr2.csv")).unwrap();
    assert_eq!(body.lines().count(), 4); // header + 3 tenor rows
}

#[test]
fn mc_verify_reports_z_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&frc(
        &[
            "mc-verify", "--n", "3", "--days", "300", "--seed", "3", "--kappa", "1.3",
            "--out-dir", "mc",
        ],
        dir,
    ));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("mc/report.json")).unwrap()).unwrap();
    assert!(report["max_abs_z"].as_f64().unwrap().is_finite());
    assert!(dir.join("mc/z_correlator.csv").exists());
    assert!(dir.join("mc/z_response.csv").exists());
}
