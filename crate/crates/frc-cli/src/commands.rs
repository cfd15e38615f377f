//! Subcommand implementations. Every command writes its artifacts plus a
//! `run-manifest.json` into the output directory and is deterministic given
//! the configuration (and seed, where one applies).

use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use frc_model::evaluation::{predict_panel, r2_per_tenor, EvalReport};
use frc_model::*;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::config::*;
use crate::error::{CliError, CliResult};
use crate::io::{
    ingest_panel, write_json, write_longform_csv, write_matrix_csv, write_panel_csv,
    MANIFEST_SCHEMA,
};

fn require(path: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    path.clone()
        .ok_or_else(|| CliError::validation(format!("missing required input: {what}")))
}

fn model_err(e: ModelError) -> CliError {
    CliError::from_model(e)
}

fn parse_kind(s: &str) -> CliResult<ImpactKind> {
    s.parse().map_err(model_err)
}

#[derive(Serialize)]
struct Manifest {
    schema_version: u32,
    command: String,
    version: String,
    config: serde_json::Value,
    outputs: Vec<String>,
    elapsed_ms: u128,
}

fn finish<T: Serialize>(
    out_dir: &Path,
    command: &str,
    config: &T,
    outputs: Vec<String>,
    started: Instant,
) -> CliResult<()> {
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA,
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: serde_json::to_value(config)
            .map_err(|e| CliError::io(format!("manifest config: {e}")))?,
        outputs,
        elapsed_ms: started.elapsed().as_millis(),
    };
    write_json(&out_dir.join("run-manifest.json"), &manifest)
}

/// Builds (or overrides) the stiffness fit and the field model for a panel.
fn fitted_field(
    est: &RollingEstimates,
    grid: &TenorGrid,
    tau: f64,
    kappa_override: Option<f64>,
) -> CliResult<(FieldModel, f64, Option<KappaFit>)> {
    let (kappa, fit) = match kappa_override {
        Some(k) => (k, None),
        None => {
            let fit = fit_kappa(&est.rho_f, grid, &QuadratureSpec::default()).map_err(model_err)?;
            (fit.kappa, Some(fit))
        }
    };
    let params = FieldParams::small_psi(kappa, tau).map_err(model_err)?;
    let field =
        build_field_model(&params, grid, &QuadratureSpec::default()).map_err(model_err)?;
    Ok((field, kappa, fit))
}

fn uniform_corr(n: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
}

pub fn simulate(cfg: &SimulateConfig, out_dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    let grid = TenorGrid::new(cfg.n).map_err(model_err)?;
    let params = FieldParams::small_psi(cfg.kappa, cfg.tau).map_err(model_err)?;
    let omega = cfg.flow_scale * cfg.flow_scale * uniform_corr(cfg.n, cfg.flow_corr);
    let y = DVector::from_fn(cfg.n, |i, _| {
        if cfg.n == 1 {
            cfg.y_high
        } else {
            cfg.y_high + (cfg.y_low - cfg.y_high) * i as f64 / (cfg.n - 1) as f64
        }
    });
    let sim = simulation::SimConfig {
        field_params: params,
        grid,
        y_vector: y.clone(),
        omega,
        sigma: DVector::from_element(cfg.n, cfg.sigma),
        euler_dt: simulation::SimConfig::stable_euler_dt(&params, &grid).map_err(model_err)?,
        days: cfg.days,
        seed: cfg.seed,
        flow_ar1: cfg.flow_ar1,
        record_path: false,
    };
    let out = gen_synthetic_panel(&sim).map_err(model_err)?;
    let panel = out.panel.expect("panel generator always returns a panel");
    write_panel_csv(&out_dir.join("rates.csv"), &panel.dates, &panel.delta_f, "date_delta")?;
    write_panel_csv(&out_dir.join("flows.csv"), &panel.dates, &panel.delta_q, "date_delta")?;
    write_json(
        &out_dir.join("truth.json"),
        &json!({
            "schema_version": MANIFEST_SCHEMA,
            "kappa": cfg.kappa,
            "tau": cfg.tau,
            "y": y.iter().copied().collect::<Vec<_>>(),
            "sigma": cfg.sigma,
            "flow_corr": cfg.flow_corr,
            "flow_scale": cfg.flow_scale,
            "flow_ar1": cfg.flow_ar1,
            "seed": cfg.seed,
        }),
    )?;
    finish(
        out_dir,
        "simulate",
        cfg,
        vec!["rates.csv".into(), "flows.csv".into(), "truth.json".into()],
        started,
    )
}

pub fn cmd_fit_kappa(cfg: &FitKappaConfig, out_dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    let panel = ingest_panel(&require(&cfg.rates, "rates")?, &require(&cfg.flows, "flows")?)?;
    let grid = TenorGrid::new(panel.n_tenors()).map_err(model_err)?;
    let est = rolling_estimates(&panel).map_err(model_err)?;
    let fit = fit_kappa(&est.rho_f, &grid, &QuadratureSpec::default()).map_err(model_err)?;
    let model_corr = frc_model::field::price_corr_small_psi(fit.kappa, &grid).map_err(model_err)?;
    write_json(
        &out_dir.join("kappa.json"),
        &json!({
            "schema_version": MANIFEST_SCHEMA,
            "kappa": fit.kappa,
            "explained_variance": fit.r2,
            "at_boundary": fit.at_boundary,
            "n_tenors": panel.n_tenors(),
            "days": panel.len(),
            "period": [panel.dates.first(), panel.dates.last()],
        }),
    )?;
    write_matrix_csv(&out_dir.join("corr_empirical.csv"), &est.rho_f)?;
    write_matrix_csv(&out_dir.join("corr_model.csv"), &model_corr)?;
    // Correlation surfaces in long format, one series per source.
    let mut rows = Vec::new();
    for i in 0..panel.n_tenors() {
        for j in 0..panel.n_tenors() {
            let x = format!("{}", 3 * (i + 1));
            let ycol = format!("{}", 3 * (j + 1));
            rows.push((x.clone(), ycol.clone(), "empirical".to_string(), est.rho_f[(i, j)]));
            rows.push((x, ycol, "model".to_string(), model_corr[(i, j)]));
        }
    }
    write_longform_csv(
        &out_dir.join("plot_corr.csv"),
        ("tenor_months", "tenor_months_other", "series", "value"),
        &rows,
    )?;
    // Model correlation between rate moves and the driving noise at the
    // fitted stiffness.
    let params = FieldParams::small_psi(fit.kappa, 0.01).map_err(model_err)?;
    let field =
        build_field_model(&params, &grid, &QuadratureSpec::default()).map_err(model_err)?;
    let rho = field.noise_response_correlation();
    let mut rows = Vec::new();
    for i in 0..panel.n_tenors() {
        for j in 0..panel.n_tenors() {
            rows.push((
                format!("{}", 3 * (i + 1)),
                format!("{}", 3 * (j + 1)),
                "noise_response".to_string(),
                rho[(i, j)],
            ));
        }
    }
    write_longform_csv(
        &out_dir.join("plot_noise_response.csv"),
        ("field_tenor_months", "noise_tenor_months", "series", "correlation"),
        &rows,
    )?;
    finish(
        out_dir,
        "fit-kappa",
        cfg,
        vec![
            "kappa.json".into(),
            "corr_empirical.csv".into(),
            "corr_model.csv".into(),
            "plot_corr.csv".into(),
            "plot_noise_response.csv".into(),
        ],
        started,
    )
}

/// Optional whitening preprocessing: replaces the flows by their surprise
/// component (dropping the kernel's warm-up rows from the whole panel).
fn whitened_panel(panel: &MarketPanel, max_lag: usize) -> CliResult<MarketPanel> {
    let kernel = fit_whitening(panel, max_lag).map_err(model_err)?;
    let eta = surprise_flows(panel, &kernel).map_err(model_err)?;
    let lag = panel.len() - eta.nrows();
    MarketPanel::new(
        panel.dates[lag..].to_vec(),
        panel.delta_f.rows(lag, eta.nrows()).into_owned(),
        eta,
    )
    .map_err(model_err)
}

pub fn cmd_fit_y(cfg: &FitYConfig, out_dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    let kind = parse_kind(&cfg.kind)?;
    if !matches!(kind, ImpactKind::Bbdlw | ImpactKind::Bbdls) {
        return Err(CliError::validation(format!(
            "fit-y calibrates the noise-field kinds (bbdlw, bbdls), not {}",
            cfg.kind
        )));
    }
    let raw = ingest_panel(&require(&cfg.rates, "rates")?, &require(&cfg.flows, "flows")?)?;
    let panel = if cfg.whiten { whitened_panel(&raw, cfg.whiten_max_lag)? } else { raw };
    let grid = TenorGrid::new(panel.n_tenors()).map_err(model_err)?;
    let est = rolling_estimates(&panel).map_err(model_err)?;
    let (field, kappa_used, kfit) = fitted_field(&est, &grid, cfg.tau, cfg.kappa)?;
    let opts = FitYOptions {
        sigma_weighted: !cfg.unweighted,
        y_range: if cfg.y_range_relaxed { YRange::Relaxed } else { YRange::Unit },
        ..FitYOptions::default()
    };
    let fit = fit_y(&panel, &est, &field, kind, &opts).map_err(model_err)?;
    write_json(
        &out_dir.join("calibration.json"),
        &json!({
            "schema_version": MANIFEST_SCHEMA,
            "kind": cfg.kind,
            "kappa_used": kappa_used,
            "kappa_explained_variance": kfit.map(|f| f.r2),
            "y": fit.y_hat.iter().copied().collect::<Vec<_>>(),
            "y_zeroed_tenors": fit.y_zeroed.iter().map(|t| t + 1).collect::<Vec<_>>(),
            "objective": fit.objective,
            "converged": fit.converged,
            "sweeps": fit.sweeps,
            "whitened": cfg.whiten,
            "period": [fit.period.0, fit.period.1],
        }),
    )?;
    let rows: Vec<(String, String, String, f64)> = (0..panel.n_tenors())
        .map(|j| {
            (format!("{}", 3 * (j + 1)), String::new(), cfg.kind.clone(), fit.y_hat[j])
        })
        .collect();
    write_longform_csv(&out_dir.join("plot_y.csv"), ("tenor_months", "unused", "series", "y"), &rows)?;
    finish(
        out_dir,
        "fit-y",
        cfg,
        vec!["calibration.json".into(), "plot_y.csv".into()],
        started,
    )
}

/// Fits whatever parameters a kind needs on a panel and returns the daily
/// impact builder inputs: `(y_vector, y_ratio, field)`.
fn fit_kind_params(
    kind: ImpactKind,
    panel: &MarketPanel,
    est: &RollingEstimates,
    grid: &TenorGrid,
    tau: f64,
    kappa_override: Option<f64>,
) -> CliResult<(DVector<f64>, f64, Option<FieldModel>, f64)> {
    let n = panel.n_tenors();
    match kind {
        ImpactKind::Bbdlw | ImpactKind::Bbdls => {
            let (field, kappa, _) = fitted_field(est, grid, tau, kappa_override)?;
            let fit = fit_y(panel, est, &field, kind, &FitYOptions::default()).map_err(model_err)?;
            Ok((fit.y_hat, 1.0, Some(field), kappa))
        }
        _ => {
            let y = fit_y_ratio(panel, est, kind, None).map_err(model_err)?;
            Ok((DVector::from_element(n, 1.0), y, None, f64::NAN))
        }
    }
}

pub fn cmd_build_impact(cfg: &BuildImpactConfig, out_dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    let kind = parse_kind(&cfg.kind)?;
    let panel = ingest_panel(&require(&cfg.rates, "rates")?, &require(&cfg.flows, "flows")?)?;
    let grid = TenorGrid::new(panel.n_tenors()).map_err(model_err)?;
    let est = rolling_estimates(&panel).map_err(model_err)?;
    let day_index = match &cfg.date {
        None => est.n_days() - 1,
        Some(s) => {
            let date = NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map_err(|e| CliError::validation(format!("bad date '{s}': {e}")))?;
            panel
                .dates
                .iter()
                .position(|d| *d == date)
                .ok_or_else(|| CliError::validation(format!("date {date} not in the panel")))?
        }
    };
    if day_index < est.valid_from {
        return Err(CliError::validation(format!(
            "day {} has no rolling estimates (first valid day is {})",
            panel.dates[day_index], panel.dates[est.valid_from]
        )));
    }
    let (y_vector, y_ratio, field, kappa) =
        fit_kind_params(kind, &panel, &est, &grid, cfg.tau, cfg.kappa)?;
    let day = est.day(day_index).map_err(model_err)?;
    let inputs = ImpactInputs {
        sigma: day.sigma_hat.clone(),
        omega: est.omega_hat.row(day_index).transpose(),
        omega_corr: est.rho_q.clone(),
        y_vector,
        y_ratio,
    };
    let model = build_lambda(kind, &inputs, field.as_ref(), &day).map_err(model_err)?;
    write_matrix_csv(&out_dir.join("lambda.csv"), &model.lambda)?;
    write_json(
        &out_dir.join("impact.json"),
        &json!({
            "schema_version": MANIFEST_SCHEMA,
            "kind": cfg.kind,
            "date": panel.dates[day_index],
            "kappa_used": if kappa.is_nan() { None } else { Some(kappa) },
            "y_ratio": y_ratio,
            "ridge": model.ridge,
            "zeroed_tenors": model.zeroed_tenors.iter().map(|t| t + 1).collect::<Vec<_>>(),
            "symmetry_error": model.symmetry_error(),
            "min_eigenvalue_rel": model.min_eigenvalue_rel(),
        }),
    )?;
    // Curve response to one trade, the per-day column view of the matrix.
    let tenor = cfg.trade_tenor.unwrap_or(panel.n_tenors().div_ceil(2));
    if tenor < 1 || tenor > panel.n_tenors() {
        return Err(CliError::validation(format!("trade tenor {tenor} outside the grid")));
    }
    let response = cfg.trade_volume * model.lambda.column(tenor - 1);
    let rows: Vec<(String, String, String, f64)> = (0..panel.n_tenors())
        .map(|i| {
            (
                format!("{}", 3 * (i + 1)),
                format!("{}", panel.dates[day_index]),
                cfg.kind.clone(),
                response[i],
            )
        })
        .collect();
    write_longform_csv(
        &out_dir.join("plot_trade_response.csv"),
        ("tenor_months", "date", "series", "rate_move"),
        &rows,
    )?;
    finish(
        out_dir,
        "build-impact",
        cfg,
        vec!["lambda.csv".into(), "impact.json".into(), "plot_trade_response.csv".into()],
        started,
    )
}

pub fn cmd_evaluate(cfg: &EvaluateConfig, out_dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    let panel = ingest_panel(&require(&cfg.rates, "rates")?, &require(&cfg.flows, "flows")?)?;
    let grid = TenorGrid::new(panel.n_tenors()).map_err(model_err)?;
    let kinds: Vec<ImpactKind> = if cfg.kinds == "all" {
        vec![ImpactKind::Diag, ImpactKind::Ml, ImpactKind::Kyle, ImpactKind::Bbdlw, ImpactKind::Bbdls]
    } else {
        cfg.kinds.split(',').map(parse_kind).collect::<CliResult<_>>()?
    };
    let split = segment_periods(&panel, cfg.period_years).map_err(model_err)?;

    // Fit every kind on every period once.
    struct PeriodFit {
        est: RollingEstimates,
        params: Vec<(ImpactKind, DVector<f64>, f64, Option<FieldModel>)>,
        label: String,
    }
    let mut fits = Vec::new();
    for (p, period) in split.periods.iter().enumerate() {
        let est = rolling_estimates(period).map_err(model_err)?;
        let mut params = Vec::new();
        for &kind in &kinds {
            let (y_vec, y_ratio, field, _) =
                fit_kind_params(kind, period, &est, &grid, cfg.tau, cfg.kappa)?;
            params.push((kind, y_vec, y_ratio, field));
        }
        let (lo, hi) = split.year_ranges[p];
        fits.push(PeriodFit { est, params, label: format!("{lo}-{hi}") });
    }

    let mut reports: Vec<EvalReport> = Vec::new();
    let mut rows = Vec::new();
    for (p, period) in split.periods.iter().enumerate() {
        for sample in ["in", "out"] {
            if sample == "out" && split.in_sample_only {
                continue;
            }
            let source = if sample == "in" { p } else { split.source_map[p] };
            for (kind, y_vec, y_ratio, field) in &fits[source].params {
                let pred = predict_panel(period, &fits[p].est, *kind, field.as_ref(), y_vec, *y_ratio)
                    .map_err(model_err)?;
                let r2 = generalized_r2(&pred, &period.delta_f, &fits[p].est, Weighting::WSigma)
                    .map_err(model_err)?;
                let per_tenor =
                    r2_per_tenor(&pred, &period.delta_f, &fits[p].est).map_err(model_err)?;
                rows.push((
                    fits[p].label.clone(),
                    sample.to_string(),
                    kind.as_str().to_string(),
                    r2,
                ));
                reports.push(EvalReport {
                    model_kind: kind.as_str().to_string(),
                    sample: sample.to_string(),
                    period: fits[p].label.clone(),
                    r2_w_sigma: r2,
                    r2_per_tenor: per_tenor,
                });
            }
        }
    }
    write_json(
        &out_dir.join("eval.json"),
        &json!({ "schema_version": MANIFEST_SCHEMA, "reports": reports }),
    )?;
    write_longform_csv(&out_dir.join("plot_r2.csv"), ("period", "sample", "model", "r2"), &rows)?;
    finish(out_dir, "evaluate", cfg, vec!["eval.json".into(), "plot_r2.csv".into()], started)
}

pub fn cmd_pairwise(cfg: &PairwiseConfig, out_dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    let outputs: Vec<String>;
    match cfg.mode.as_str() {
        "kyle-numeric" => {
            let mut rows = Vec::new();
            let p = cfg.grid_points.max(2);
            for i in 0..p {
                for j in 0..p {
                    let l1 = 10f64.powf(-1.0 + 2.0 * i as f64 / (p - 1) as f64);
                    let l2 = 10f64.powf(-1.0 + 2.0 * j as f64 / (p - 1) as f64);
                    let v =
                        delta_r2_kyle_numeric(l1, l2, cfg.rho_flow, cfg.rho_price, cfg.y_ratio)
                            .map_err(model_err)?;
                    rows.push((format!("{l1:.6}"), format!("{l2:.6}"), "kyle".to_string(), v));
                }
            }
            write_longform_csv(
                &out_dir.join("plot_dr2.csv"),
                ("liquidity_1", "liquidity_2", "series", "delta_r2"),
                &rows,
            )?;
            outputs = vec!["plot_dr2.csv".into()];
        }
        mode => {
            let panel =
                ingest_panel(&require(&cfg.rates, "rates")?, &require(&cfg.flows, "flows")?)?;
            let grid = TenorGrid::new(panel.n_tenors()).map_err(model_err)?;
            let est = rolling_estimates(&panel).map_err(model_err)?;
            let n = panel.n_tenors();
            let result: PairwiseDeltaR2 = match mode {
                "empirical-ml" => {
                    pairwise_delta_r2_matrix(&panel, &est, &PairwiseModel::Ml, None)
                        .map_err(model_err)?
                }
                "ml-theory" => {
                    let mut m = DMatrix::zeros(n, n);
                    for i in 0..n {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            m[(i, j)] = delta_r2_ml_theory(
                                est.rho_fq[(i, i)],
                                est.rho_fq[(i, j)],
                                est.rho_q[(i, j)],
                            )
                            .unwrap_or(f64::NAN);
                        }
                    }
                    PairwiseDeltaR2::new(m, "ml-theory")
                }
                "bbdl-eta" | "bbdls-flow" => {
                    let (field, _, _) = fitted_field(&est, &grid, cfg.tau, cfg.kappa)?;
                    let kind = if mode == "bbdl-eta" { ImpactKind::Bbdlw } else { ImpactKind::Bbdls };
                    let fit = fit_y(&panel, &est, &field, kind, &FitYOptions::default())
                        .map_err(model_err)?;
                    let m = if mode == "bbdl-eta" {
                        delta_r2_bbdl(&field, &fit.y_hat, BbdlMode::EtaResponse, None)
                            .map_err(model_err)?
                    } else {
                        // Stationary flow covariance for the 2x2 restrictions.
                        let omega = stationary_flow_covariance(&panel);
                        delta_r2_bbdl(&field, &fit.y_hat, BbdlMode::FlowResponse, Some(&omega))
                            .map_err(model_err)?
                    };
                    PairwiseDeltaR2::new(m, mode)
                }
                other => {
                    return Err(CliError::validation(format!(
                        "unknown pairwise mode '{other}' (expected empirical-ml, ml-theory, \
                         bbdl-eta, bbdls-flow or kyle-numeric)"
                    )))
                }
            };
            write_matrix_csv(&out_dir.join("dr2.csv"), &result.matrix)?;
            let mut rows = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    rows.push((
                        format!("{}", 3 * (i + 1)),
                        format!("{}", 3 * (j + 1)),
                        result.mode.clone(),
                        result.matrix[(i, j)],
                    ));
                }
            }
            write_longform_csv(
                &out_dir.join("plot_dr2.csv"),
                ("price_tenor_months", "flow_tenor_months", "series", "delta_r2"),
                &rows,
            )?;
            outputs = vec!["dr2.csv".into(), "plot_dr2.csv".into()];
        }
    }
    finish(out_dir, "pairwise-dr2", cfg, outputs, started)
}

fn stationary_flow_covariance(panel: &MarketPanel) -> DMatrix<f64> {
    let (rows, n) = panel.delta_q.shape();
    let mut centered = panel.delta_q.clone();
    for j in 0..n {
        let mean = panel.delta_q.column(j).sum() / rows as f64;
        for t in 0..rows {
            centered[(t, j)] -= mean;
        }
    }
    centered.transpose() * &centered / rows as f64
}

pub fn cmd_impulse(cfg: &ImpulseConfig, out_dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    let grid = TenorGrid::new(cfg.n).map_err(model_err)?;
    let params = FieldParams::small_psi(cfg.kappa, cfg.tau).map_err(model_err)?;
    let field =
        build_field_model(&params, &grid, &QuadratureSpec::default()).map_err(model_err)?;
    let dt = cfg.tau / cfg.dt_frac;
    let steps = (cfg.horizon_tau * cfg.tau / dt).ceil() as usize + 1;
    let inputs = ImpactInputs {
        sigma: field.sigma_a.clone(),
        omega: DVector::from_element(cfg.n, 1.0),
        omega_corr: DMatrix::identity(cfg.n, cfg.n),
        y_vector: DVector::from_element(cfg.n, 1.0),
        y_ratio: 1.0,
    };
    let trade = TradeImpulse { theta0: cfg.tenor, volume: cfg.volume, dt, steps };
    let resp = impulse_response(&field, &inputs, &trade).map_err(model_err)?;
    let mut rows = Vec::new();
    for (k, step) in resp.steps.iter().enumerate() {
        let t_over_tau = k as f64 * dt / cfg.tau;
        for i in 0..cfg.n {
            rows.push((
                format!("{t_over_tau:.6}"),
                format!("{}", 3 * (i + 1)),
                "response".to_string(),
                step[i],
            ));
        }
    }
    write_longform_csv(
        &out_dir.join("impulse.csv"),
        ("t_over_tau", "tenor_months", "series", "rate_move"),
        &rows,
    )?;
    let cum_rows: Vec<(String, String, String, f64)> = (0..cfg.n)
        .map(|i| {
            (format!("{}", 3 * (i + 1)), String::new(), "cumulative".to_string(), resp.cumulative[i])
        })
        .collect();
    write_longform_csv(
        &out_dir.join("cumulative.csv"),
        ("tenor_months", "unused", "series", "rate_move"),
        &cum_rows,
    )?;
    write_json(
        &out_dir.join("response.json"),
        &json!({
            "schema_version": MANIFEST_SCHEMA,
            "tenor": cfg.tenor,
            "volume": cfg.volume,
            "dt": dt,
            "steps": steps,
            "spectral_radius": resp.spectral_radius,
        }),
    )?;
    finish(
        out_dir,
        "impulse",
        cfg,
        vec!["impulse.csv".into(), "cumulative.csv".into(), "response.json".into()],
        started,
    )
}

pub fn cmd_mc_verify(cfg: &McVerifyConfig, out_dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    let grid = TenorGrid::new(cfg.n).map_err(model_err)?;
    let params = FieldParams::small_psi(cfg.kappa, cfg.tau).map_err(model_err)?;
    let field =
        build_field_model(&params, &grid, &QuadratureSpec::default()).map_err(model_err)?;
    let mut sim = simulation::SimConfig::new(params, grid, cfg.seed, cfg.days);
    sim.euler_dt = simulation::SimConfig::stable_euler_dt(&params, &grid).map_err(model_err)?;
    let report = mc_verify(&sim, &field).map_err(model_err)?;
    write_matrix_csv(&out_dir.join("z_correlator.csv"), &report.z_correlator)?;
    write_matrix_csv(&out_dir.join("z_response.csv"), &report.z_response)?;
    write_matrix_csv(&out_dir.join("z_price_corr.csv"), &report.z_price_corr)?;
    write_json(
        &out_dir.join("report.json"),
        &json!({
            "schema_version": MANIFEST_SCHEMA,
            "max_abs_z": report.max_abs_z,
            "passed": report.passed,
            "lag1_autocorr": report.lag1_autocorr.iter().copied().collect::<Vec<_>>(),
            "lag1_band": report.lag1_band,
            "days": cfg.days,
            "seed": cfg.seed,
        }),
    )?;
    finish(
        out_dir,
        "mc-verify",
        cfg,
        vec![
            "z_correlator.csv".into(),
            "z_response.csv".into(),
            "z_price_corr.csv".into(),
            "report.json".into(),
        ],
        started,
    )
}

pub fn cmd_autocorr(cfg: &AutocorrConfig, out_dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    let flows_path = require(&cfg.flows, "flows")?;
    let panel = match &cfg.rates {
        Some(rates) => ingest_panel(rates, &flows_path)?,
        None => {
            // Flow diagnostics do not need rates; substitute zeros.
            let with_self = ingest_panel(&flows_path, &flows_path)?;
            let zeros = DMatrix::zeros(with_self.len(), with_self.n_tenors());
            MarketPanel::new(with_self.dates.clone(), zeros, with_self.delta_q.clone())
                .map_err(model_err)?
        }
    };
    let diags = accumulated_autocorr(&panel, cfg.max_lag).map_err(model_err)?;
    let mut rows = Vec::new();
    for d in &diags {
        for (i, (rho, acc)) in d.rho.iter().zip(&d.accumulated).enumerate() {
            rows.push((format!("{}", 3 * d.tenor), format!("{}", i + 1), "rho".to_string(), *rho));
            rows.push((
                format!("{}", 3 * d.tenor),
                format!("{}", i + 1),
                "accumulated".to_string(),
                *acc,
            ));
        }
    }
    write_longform_csv(
        &out_dir.join("autocorr.csv"),
        ("tenor_months", "lag", "series", "value"),
        &rows,
    )?;
    // Spatial correlation of the flows, the companion surface to the
    // temporal diagnostic.
    let corr = {
        let cov = stationary_flow_covariance(&panel);
        let n = cov.nrows();
        DMatrix::from_fn(n, n, |i, j| {
            let d = (cov[(i, i)] * cov[(j, j)]).sqrt();
            if d > 0.0 { cov[(i, j)] / d } else { f64::NAN }
        })
    };
    let mut corr_rows = Vec::new();
    for i in 0..panel.n_tenors() {
        for j in 0..panel.n_tenors() {
            corr_rows.push((
                format!("{}", 3 * (i + 1)),
                format!("{}", 3 * (j + 1)),
                "flow_corr".to_string(),
                corr[(i, j)],
            ));
        }
    }
    write_longform_csv(
        &out_dir.join("plot_flow_corr.csv"),
        ("tenor_months", "tenor_months_other", "series", "correlation"),
        &corr_rows,
    )?;
    let outside: Vec<usize> =
        diags.iter().filter(|d| d.outside_band_at_max).map(|d| d.tenor).collect();
    let excluded: Vec<usize> = diags.iter().filter(|d| d.excluded).map(|d| d.tenor).collect();
    write_json(
        &out_dir.join("summary.json"),
        &json!({
            "schema_version": MANIFEST_SCHEMA,
            "max_lag": cfg.max_lag,
            "conf_band_per_lag": diags.first().map(|d| d.conf_band),
            "accumulated_band_at_max": diags.first().map(|d| d.accumulated_band(cfg.max_lag)),
            "tenors_outside_band": outside,
            "tenors_excluded": excluded,
        }),
    )?;
    finish(
        out_dir,
        "autocorr",
        cfg,
        vec!["autocorr.csv".into(), "plot_flow_corr.csv".into(), "summary.json".into()],
        started,
    )
}
