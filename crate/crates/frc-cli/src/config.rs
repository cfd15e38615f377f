//! Per-command run configurations.
//!
//! Every subcommand resolves its configuration in three layers: built-in
//! defaults, an optional JSON config file (`--config`, or the path in
//! `FRC_CONFIG`), and explicit command-line flags, the latter winning.
//! Config files reject unknown keys.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub fn load_config<T: serde::de::DeserializeOwned + Default>(
    explicit: Option<&PathBuf>,
) -> CliResult<T> {
    let path = match explicit {
        Some(p) => Some(p.clone()),
        None => std::env::var("FRC_CONFIG").ok().map(PathBuf::from),
    };
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let body = std::fs::read_to_string(&p)
                .map_err(|e| CliError::io(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&body).map_err(|e| {
                CliError::validation(format!("invalid config {}: {e}", p.display()))
            })
        }
    }
}

/// Applies `Some` flag values over the config-file layer.
macro_rules! merge_flags {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}
pub(crate) use merge_flags;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub kappa: f64,
    pub n: usize,
    pub tau: f64,
    pub days: usize,
    pub seed: u64,
    /// Explained-share ramp endpoints (linear from the shortest tenor).
    pub y_high: f64,
    pub y_low: f64,
    /// Uniform pairwise flow correlation.
    pub flow_corr: f64,
    pub flow_ar1: f64,
    /// Per-tenor rate volatility (rate units per day).
    pub sigma: f64,
    /// Flow volatility scale (notional millions per day).
    pub flow_scale: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            kappa: 1.3,
            n: 20,
            tau: 0.02,
            days: 750,
            seed: 1,
            y_high: 0.9,
            y_low: 0.3,
            flow_corr: 0.1,
            flow_ar1: 0.0,
            sigma: 1.0,
            flow_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FitKappaConfig {
    pub rates: Option<PathBuf>,
    pub flows: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitYConfig {
    pub rates: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    pub kind: String,
    /// Stiffness override; fitted from the panel when absent.
    pub kappa: Option<f64>,
    pub tau: f64,
    /// Replace flows by their whitened surprise before fitting.
    pub whiten: bool,
    pub whiten_max_lag: usize,
    /// Allow negative loadings (Y in [-1, 1]).
    pub y_range_relaxed: bool,
    /// Raw squared errors instead of the inverse-variance weights.
    pub unweighted: bool,
}

impl Default for FitYConfig {
    fn default() -> Self {
        FitYConfig {
            rates: None,
            flows: None,
            kind: "bbdlw".into(),
            kappa: None,
            tau: 0.02,
            whiten: false,
            whiten_max_lag: 20,
            y_range_relaxed: false,
            unweighted: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildImpactConfig {
    pub rates: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    pub kind: String,
    pub kappa: Option<f64>,
    pub tau: f64,
    /// Day stamp (ISO-8601) of the impact matrix; last panel day if absent.
    pub date: Option<String>,
    /// Tenor (1-based) and notional of the example trade response artifact.
    pub trade_tenor: Option<usize>,
    pub trade_volume: f64,
}

impl Default for BuildImpactConfig {
    fn default() -> Self {
        BuildImpactConfig {
            rates: None,
            flows: None,
            kind: "bbdlw".into(),
            kappa: None,
            tau: 0.02,
            date: None,
            trade_tenor: None,
            trade_volume: 1e9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub rates: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    /// Comma-separated estimator kinds, or `all`.
    pub kinds: String,
    pub period_years: i32,
    pub kappa: Option<f64>,
    pub tau: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            rates: None,
            flows: None,
            kinds: "all".into(),
            period_years: 3,
            kappa: None,
            tau: 0.02,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairwiseConfig {
    pub rates: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    /// empirical-ml | ml-theory | bbdl-eta | bbdls-flow | kyle-numeric
    pub mode: String,
    pub kappa: Option<f64>,
    pub tau: f64,
    /// Parameters of the kyle-numeric grid sweep.
    pub rho_flow: f64,
    pub rho_price: f64,
    pub y_ratio: f64,
    pub grid_points: usize,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        PairwiseConfig {
            rates: None,
            flows: None,
            mode: "empirical-ml".into(),
            kappa: None,
            tau: 0.02,
            rho_flow: 0.5,
            rho_price: 0.75,
            y_ratio: 0.75,
            grid_points: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpulseConfig {
    pub kappa: f64,
    pub n: usize,
    pub tau: f64,
    /// Traded tenor, 1-based.
    pub tenor: usize,
    /// Signed notional of the trade.
    pub volume: f64,
    /// Sub-daily step as a fraction of tau (dt = tau / dt_frac).
    pub dt_frac: f64,
    /// Horizon in units of tau.
    pub horizon_tau: f64,
}

impl Default for ImpulseConfig {
    fn default() -> Self {
        ImpulseConfig {
            kappa: 1.3,
            n: 20,
            tau: 0.02,
            tenor: 8,
            volume: 1e9,
            dt_frac: 500.0,
            horizon_tau: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McVerifyConfig {
    pub kappa: f64,
    pub n: usize,
    pub tau: f64,
    pub days: usize,
    pub seed: u64,
}

impl Default for McVerifyConfig {
    fn default() -> Self {
        McVerifyConfig { kappa: 1.3, n: 5, tau: 0.02, days: 5000, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutocorrConfig {
    pub flows: Option<PathBuf>,
    /// Optional rates file; zeros are substituted when absent.
    pub rates: Option<PathBuf>,
    pub max_lag: usize,
}

impl Default for AutocorrConfig {
    fn default() -> Self {
        AutocorrConfig { flows: None, rates: None, max_lag: 20 }
    }
}
