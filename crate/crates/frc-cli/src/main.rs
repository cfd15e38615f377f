//! `frc`: calibration, cross-impact estimation and simulation for the
//! forward-rate-curve field model.
//!
//! Every subcommand reads an optional JSON config (`--config`, or the path
//! in `FRC_CONFIG`), applies command-line overrides, writes its artifacts
//! into `--out-dir`, and finishes with a `run-manifest.json`. On failure the
//! process prints a machine-readable error JSON to stderr and exits with
//! 2 (validation), 3 (numerical) or 4 (I/O).

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::*;
use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "frc", version, about = "Forward-rate-curve cross-impact toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file (defaults to $FRC_CONFIG when set).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, default_value = "frc-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PanelArgs {
    /// Rates CSV (levels under a `date` header, increments under `date_delta`).
    #[arg(long)]
    rates: Option<PathBuf>,
    /// Signed daily flows CSV.
    #[arg(long)]
    flows: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic daily panel from known parameters.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        y_high: Option<f64>,
        #[arg(long)]
        y_low: Option<f64>,
        #[arg(long)]
        flow_corr: Option<f64>,
        #[arg(long)]
        flow_ar1: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        flow_scale: Option<f64>,
    },
    /// Fit the stiffness parameter to the panel's price correlation.
    FitKappa {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        panel: PanelArgs,
    },
    /// Fit the explained-share vector of a noise-field model.
    FitY {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        panel: PanelArgs,
        /// bbdlw or bbdls.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        /// Whiten the flows before fitting.
        #[arg(long)]
        whiten: bool,
        #[arg(long)]
        whiten_max_lag: Option<usize>,
        /// Allow negative loadings (Y in [-1, 1]).
        #[arg(long)]
        y_range_relaxed: bool,
        /// Raw squared errors instead of inverse-variance weighting.
        #[arg(long)]
        unweighted: bool,
    },
    /// Build one day's cross-impact matrix.
    BuildImpact {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        panel: PanelArgs,
        /// diag, ml, kyle, bbdlw or bbdls.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        /// ISO-8601 day; the last panel day when absent.
        #[arg(long)]
        date: Option<String>,
        #[arg(long)]
        trade_tenor: Option<usize>,
        #[arg(long)]
        trade_volume: Option<f64>,
    },
    /// Period-segmented in/out-of-sample scoring of the estimators.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        panel: PanelArgs,
        /// Comma-separated kinds, or `all`.
        #[arg(long)]
        kinds: Option<String>,
        #[arg(long)]
        period_years: Option<i32>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Pairwise added-accuracy matrices (empirical or closed form).
    PairwiseDr2 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        panel: PanelArgs,
        /// empirical-ml, ml-theory, bbdl-eta, bbdls-flow or kyle-numeric.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        rho_flow: Option<f64>,
        #[arg(long)]
        rho_price: Option<f64>,
        #[arg(long)]
        y_ratio: Option<f64>,
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Sub-daily curve response to a single trade.
    Impulse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        /// Traded tenor, 1-based.
        #[arg(long)]
        tenor: Option<usize>,
        #[arg(long)]
        volume: Option<f64>,
        #[arg(long)]
        dt_frac: Option<f64>,
        #[arg(long)]
        horizon_tau: Option<f64>,
    },
    /// Monte-Carlo verification of the closed-form moments.
    McVerify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Temporal autocorrelation diagnostics of the flows.
    Autocorr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        flows: Option<PathBuf>,
        #[arg(long)]
        rates: Option<PathBuf>,
        #[arg(long)]
        max_lag: Option<usize>,
    },
}

fn run() -> CliResult<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            common,
            kappa,
            n,
            tau,
            days,
            seed,
            y_high,
            y_low,
            flow_corr,
            flow_ar1,
            sigma,
            flow_scale,
        } => {
            let mut cfg: SimulateConfig = load_config(common.config.as_ref())?;
            struct F {
                kappa: Option<f64>,
                n: Option<usize>,
                tau: Option<f64>,
                days: Option<usize>,
                seed: Option<u64>,
                y_high: Option<f64>,
                y_low: Option<f64>,
                flow_corr: Option<f64>,
                flow_ar1: Option<f64>,
                sigma: Option<f64>,
                flow_scale: Option<f64>,
            }
            let f = F { kappa, n, tau, days, seed, y_high, y_low, flow_corr, flow_ar1, sigma, flow_scale };
            merge_flags!(cfg, f; kappa, n, tau, days, seed, y_high, y_low, flow_corr, flow_ar1, sigma, flow_scale);
            commands::simulate(&cfg, &common.out_dir)
        }
        Command::FitKappa { common, panel } => {
            let mut cfg: FitKappaConfig = load_config(common.config.as_ref())?;
            if panel.rates.is_some() {
                cfg.rates = panel.rates;
            }
            if panel.flows.is_some() {
                cfg.flows = panel.flows;
            }
            commands::cmd_fit_kappa(&cfg, &common.out_dir)
        }
        Command::FitY {
            common,
            panel,
            kind,
            kappa,
            tau,
            whiten,
            whiten_max_lag,
            y_range_relaxed,
            unweighted,
        } => {
            let mut cfg: FitYConfig = load_config(common.config.as_ref())?;
            if panel.rates.is_some() {
                cfg.rates = panel.rates;
            }
            if panel.flows.is_some() {
                cfg.flows = panel.flows;
            }
            if let Some(k) = kind {
                cfg.kind = k;
            }
            if kappa.is_some() {
                cfg.kappa = kappa;
            }
            if let Some(t) = tau {
                cfg.tau = t;
            }
            if whiten {
                cfg.whiten = true;
            }
            if let Some(l) = whiten_max_lag {
                cfg.whiten_max_lag = l;
            }
            if y_range_relaxed {
                cfg.y_range_relaxed = true;
            }
            if unweighted {
                cfg.unweighted = true;
            }
            commands::cmd_fit_y(&cfg, &common.out_dir)
        }
        Command::BuildImpact { common, panel, kind, kappa, tau, date, trade_tenor, trade_volume } => {
            let mut cfg: BuildImpactConfig = load_config(common.config.as_ref())?;
            if panel.rates.is_some() {
                cfg.rates = panel.rates;
            }
            if panel.flows.is_some() {
                cfg.flows = panel.flows;
            }
            if let Some(k) = kind {
                cfg.kind = k;
            }
            if kappa.is_some() {
                cfg.kappa = kappa;
            }
            if let Some(t) = tau {
                cfg.tau = t;
            }
            if date.is_some() {
                cfg.date = date;
            }
            if trade_tenor.is_some() {
                cfg.trade_tenor = trade_tenor;
            }
            if let Some(v) = trade_volume {
                cfg.trade_volume = v;
            }
            commands::cmd_build_impact(&cfg, &common.out_dir)
        }
        Command::Evaluate { common, panel, kinds, period_years, kappa, tau } => {
            let mut cfg: EvaluateConfig = load_config(common.config.as_ref())?;
            if panel.rates.is_some() {
                cfg.rates = panel.rates;
            }
            if panel.flows.is_some() {
                cfg.flows = panel.flows;
            }
            if let Some(k) = kinds {
                cfg.kinds = k;
            }
            if let Some(p) = period_years {
                cfg.period_years = p;
            }
            if kappa.is_some() {
                cfg.kappa = kappa;
            }
            if let Some(t) = tau {
                cfg.tau = t;
            }
            commands::cmd_evaluate(&cfg, &common.out_dir)
        }
        Command::PairwiseDr2 {
            common,
            panel,
            mode,
            kappa,
            tau,
            rho_flow,
            rho_price,
            y_ratio,
            grid_points,
        } => {
            let mut cfg: PairwiseConfig = load_config(common.config.as_ref())?;
            if panel.rates.is_some() {
                cfg.rates = panel.rates;
            }
            if panel.flows.is_some() {
                cfg.flows = panel.flows;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if kappa.is_some() {
                cfg.kappa = kappa;
            }
            struct F {
                tau: Option<f64>,
                rho_flow: Option<f64>,
                rho_price: Option<f64>,
                y_ratio: Option<f64>,
                grid_points: Option<usize>,
            }
            let f = F { tau, rho_flow, rho_price, y_ratio, grid_points };
            merge_flags!(cfg, f; tau, rho_flow, rho_price, y_ratio, grid_points);
            commands::cmd_pairwise(&cfg, &common.out_dir)
        }
        Command::Impulse { common, kappa, n, tau, tenor, volume, dt_frac, horizon_tau } => {
            let mut cfg: ImpulseConfig = load_config(common.config.as_ref())?;
            struct F {
                kappa: Option<f64>,
                n: Option<usize>,
                tau: Option<f64>,
                tenor: Option<usize>,
                volume: Option<f64>,
                dt_frac: Option<f64>,
                horizon_tau: Option<f64>,
            }
            let f = F { kappa, n, tau, tenor, volume, dt_frac, horizon_tau };
            merge_flags!(cfg, f; kappa, n, tau, tenor, volume, dt_frac, horizon_tau);
            commands::cmd_impulse(&cfg, &common.out_dir)
        }
        Command::McVerify { common, kappa, n, tau, days, seed } => {
            let mut cfg: McVerifyConfig = load_config(common.config.as_ref())?;
            struct F {
                kappa: Option<f64>,
                n: Option<usize>,
                tau: Option<f64>,
                days: Option<usize>,
                seed: Option<u64>,
            }
            let f = F { kappa, n, tau, days, seed };
            merge_flags!(cfg, f; kappa, n, tau, days, seed);
            commands::cmd_mc_verify(&cfg, &common.out_dir)
        }
        Command::Autocorr { common, flows, rates, max_lag } => {
            let mut cfg: AutocorrConfig = load_config(common.config.as_ref())?;
            if flows.is_some() {
                cfg.flows = flows;
            }
            if rates.is_some() {
                cfg.rates = rates;
            }
            if let Some(l) = max_lag {
                cfg.max_lag = l;
            }
            commands::cmd_autocorr(&cfg, &common.out_dir)
        }
    }
}

fn main() {
    if let Err(e) = run() {
        let payload = serde_json::json!({
            "schema_version": io::MANIFEST_SCHEMA,
            "error": e,
        });
        eprintln!("{}", serde_json::to_string(&payload).unwrap_or_else(|_| e.to_string()));
        std::process::exit(e.exit_code());
    }
}
