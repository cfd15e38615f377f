//! Temporal structure of order flows: autocorrelation diagnostics, the
//! discrete whitening kernel, and extraction of the flow "surprise".
//!
//! The continuous-time construction deconvolves the flow autocorrelation
//! `phi` and mixes by the inverse root of the equal-time covariance. At
//! daily resolution this becomes a finite-lag lower-triangular Toeplitz
//! solve per tenor followed by one matrix multiplication.

use nalgebra::DMatrix;

use crate::error::ModelError;
use crate::linalg::{inverse_checked, psd_sqrt};
use crate::panel::MarketPanel;
use crate::Result;

/// Per-tenor autocorrelation diagnostic of the daily flows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowAutocorr {
    /// Tenor index, 1-based.
    pub tenor: usize,
    /// Autocorrelations at lags `1..=max_lag`.
    pub rho: Vec<f64>,
    /// Running sums of `rho` over lags.
    pub accumulated: Vec<f64>,
    /// Half-width of the white-noise confidence band, `1.96 / sqrt(N)`.
    pub conf_band: f64,
    /// Set when the tenor had (numerically) zero flow variance.
    pub excluded: bool,
    /// Whether the accumulated value exits the band at the last lag.
    pub outside_band_at_max: bool,
}

impl FlowAutocorr {
    /// Band half-width for the accumulated series at `lag`: a sum of `lag`
    /// near-independent estimates, each with variance `1/N`, widens the
    /// per-lag band by `sqrt(lag)`.
    pub fn accumulated_band(&self, lag: usize) -> f64 {
        self.conf_band * (lag as f64).sqrt()
    }
}

fn column_autocorr(col: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
    if var <= f64::EPSILON * n {
        return None;
    }
    Some(
        (1..=max_lag)
            .map(|lag| {
                let mut acc = 0.0;
                for t in lag..col.len() {
                    acc += (col[t] - mean) * (col[t - lag] - mean);
                }
                acc / var
            })
            .collect(),
    )
}

/// Per-tenor flow autocorrelations with their running sums and the
/// white-noise band. Zero-variance tenors are flagged and excluded.
pub fn accumulated_autocorr(panel: &MarketPanel, max_lag: usize) -> Result<Vec<FlowAutocorr>> {
    if max_lag == 0 {
        return Err(ModelError::Parameter("max_lag must be at least 1".into()));
    }
    if panel.len() < 10 * max_lag {
        return Err(ModelError::Estimation(format!(
            "need at least {} days for max_lag {max_lag}, got {}",
            10 * max_lag,
            panel.len()
        )));
    }
    let conf_band = 1.96 / (panel.len() as f64).sqrt();
    let mut out = Vec::with_capacity(panel.n_tenors());
    for j in 0..panel.n_tenors() {
        let col: Vec<f64> = panel.delta_q.column(j).iter().copied().collect();
        match column_autocorr(&col, max_lag) {
            Some(rho) => {
                let mut accumulated = Vec::with_capacity(max_lag);
                let mut run = 0.0;
                for r in &rho {
                    run += r;
                    accumulated.push(run);
                }
                let outside = accumulated
                    .last()
                    .map(|a| a.abs() > conf_band * (max_lag as f64).sqrt())
                    .unwrap_or(false);
                out.push(FlowAutocorr {
                    tenor: j + 1,
                    rho,
                    accumulated,
                    conf_band,
                    excluded: false,
                    outside_band_at_max: outside,
                });
            }
            None => out.push(FlowAutocorr {
                tenor: j + 1,
                rho: vec![f64::NAN; max_lag],
                accumulated: vec![f64::NAN; max_lag],
                conf_band,
                excluded: true,
                outside_band_at_max: false,
            }),
        }
    }
    Ok(out)
}

/// Convolutional inverse of an autocorrelation sequence `phi` with
/// `phi[0] = 1`: the unique `Phi` with `(phi * Phi)(0) = 1` and
/// `(phi * Phi)(l) = 0` for `1 <= l < phi.len()`, by forward substitution
/// on the lower-triangular Toeplitz system.
pub fn convolutional_inverse(phi: &[f64]) -> Result<Vec<f64>> {
    if phi.is_empty() || phi[0] <= 0.0 {
        return Err(ModelError::Estimation(format!(
            "deconvolution needs phi(0) > 0, got {:?}",
            phi.first()
        )));
    }
    let mut inv = vec![0.0; phi.len()];
    inv[0] = 1.0 / phi[0];
    for l in 1..phi.len() {
        let mut acc = 0.0;
        for m in 1..=l {
            acc += phi[m] * inv[l - m];
        }
        inv[l] = -acc / phi[0];
    }
    Ok(inv)
}

/// Whitening kernel: per-tenor deconvolution filters plus the equal-time
/// mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningKernel {
    /// Estimated autocorrelation `phi(l)`, one row per tenor, `l = 0..=max_lag`.
    pub phi: DMatrix<f64>,
    /// Convolutional inverses `Phi(l)`, same layout.
    pub phi_inv: DMatrix<f64>,
    /// Inverse symmetric root of the equal-time covariance of the
    /// temporally whitened flows.
    pub omega_root_inv: DMatrix<f64>,
}

impl WhiteningKernel {
    pub fn max_lag(&self) -> usize {
        self.phi.ncols() - 1
    }

    /// Largest violation of the deconvolution identity
    /// `(phi * Phi)(0) = 1, (phi * Phi)(l) = 0` across tenors and lags.
    pub fn deconvolution_residual(&self) -> f64 {
        let lags = self.phi.ncols();
        let mut worst = 0.0_f64;
        for tenor in 0..self.phi.nrows() {
            for l in 0..lags {
                let mut acc = 0.0;
                for m in 0..=l {
                    acc += self.phi[(tenor, m)] * self.phi_inv[(tenor, l - m)];
                }
                let target = if l == 0 { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).abs());
            }
        }
        worst
    }

    /// Applies the per-tenor deconvolution filters; drops the first
    /// `max_lag` rows where the filter has no full history.
    fn deconvolve(&self, flows: &DMatrix<f64>) -> DMatrix<f64> {
        let lag = self.max_lag();
        let rows = flows.nrows() - lag;
        let n = flows.ncols();
        let mut out = DMatrix::zeros(rows, n);
        for j in 0..n {
            for t in 0..rows {
                let mut acc = 0.0;
                for l in 0..=lag {
                    acc += self.phi_inv[(j, l)] * flows[(t + lag - l, j)];
                }
                out[(t, j)] = acc;
            }
        }
        out
    }
}

/// Fits the whitening kernel: per-tenor sample autocorrelations, their
/// convolutional inverses, and the inverse root of the equal-time
/// covariance of the temporally whitened flows.
pub fn fit_whitening(panel: &MarketPanel, max_lag: usize) -> Result<WhiteningKernel> {
    if panel.len() < 20 * max_lag.max(1) {
        return Err(ModelError::Estimation(format!(
            "need at least {} days for whitening with max_lag {max_lag}, got {}",
            20 * max_lag.max(1),
            panel.len()
        )));
    }
    let n = panel.n_tenors();
    let mut phi = DMatrix::zeros(n, max_lag + 1);
    let mut phi_inv = DMatrix::zeros(n, max_lag + 1);
    for j in 0..n {
        let col: Vec<f64> = panel.delta_q.column(j).iter().copied().collect();
        let rho = column_autocorr(&col, max_lag).ok_or_else(|| {
            ModelError::Estimation(format!("tenor {} has zero flow variance", j + 1))
        })?;
        phi[(j, 0)] = 1.0;
        for (l, r) in rho.iter().enumerate() {
            phi[(j, l + 1)] = *r;
        }
        let row: Vec<f64> = phi.row(j).iter().copied().collect();
        let inv = convolutional_inverse(&row)?;
        for (l, v) in inv.iter().enumerate() {
            phi_inv[(j, l)] = *v;
        }
    }
    let mut kernel = WhiteningKernel {
        phi,
        phi_inv,
        omega_root_inv: DMatrix::identity(n, n),
    };
    let whitened = kernel.deconvolve(&panel.delta_q);
    let cov = sample_covariance(&whitened);
    let root = psd_sqrt(&cov)?;
    kernel.omega_root_inv = inverse_checked(&root, "whitened flow covariance root")?;
    Ok(kernel)
}

/// Extracts the surprise component of the flows: per-tenor deconvolution
/// followed by the equal-time mixing. Output has `panel.len() - max_lag`
/// rows; each series has unit variance and negligible autocorrelation up to
/// the fitted horizon (statistically).
pub fn surprise_flows(panel: &MarketPanel, kernel: &WhiteningKernel) -> Result<DMatrix<f64>> {
    let n = panel.n_tenors();
    if kernel.phi.nrows() != n || kernel.omega_root_inv.nrows() != n {
        return Err(ModelError::Dimension {
            expected: n,
            actual: kernel.phi.nrows(),
            context: "whitening kernel tenor count".into(),
        });
    }
    if panel.len() <= kernel.max_lag() {
        return Err(ModelError::Estimation(format!(
            "panel has {} days, needs more than the kernel lag {}",
            panel.len(),
            kernel.max_lag()
        )));
    }
    let whitened = kernel.deconvolve(&panel.delta_q);
    // Row-vector convention: eta_t = Omega^{-1/2} q~_t per day.
    Ok(whitened * kernel.omega_root_inv.transpose())
}

fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = x.shape();
    let mut centered = x.clone();
    for j in 0..cols {
        let mean = x.column(j).sum() / rows as f64;
        for i in 0..rows {
            centered[(i, j)] -= mean;
        }
    }
    centered.transpose() * &centered / rows as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::business_days;
    use crate::simulation::sample_correlation;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn flows_panel(delta_q: DMatrix<f64>) -> MarketPanel {
        let days = delta_q.nrows();
        let dates = business_days(NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(), days);
        MarketPanel::new(dates, DMatrix::zeros(days, delta_q.ncols()), delta_q).unwrap()
    }

    fn white_flows(days: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(days, n, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        })
    }

    fn ar1_flows(days: usize, n: usize, a: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = DMatrix::zeros(days, n);
        for j in 0..n {
            let mut prev = 0.0;
            for t in 0..days {
                let e: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                let x = a * prev + (1.0 - a * a).sqrt() * e;
                out[(t, j)] = x;
                prev = x;
            }
        }
        out
    }

    #[test]
    fn white_flows_stay_inside_band() {
        let panel = flows_panel(white_flows(2000, 3, 1));
        let diag = accumulated_autocorr(&panel, 20).unwrap();
        for d in &diag {
            assert!(!d.excluded);
            assert!(
                !d.outside_band_at_max,
                "white tenor {} accumulated {} vs band {}",
                d.tenor,
                d.accumulated.last().unwrap(),
                d.conf_band
            );
        }
    }

    #[test]
    fn ar1_accumulates_to_geometric_sum() {
        // sum_{l>=1} a^l = a / (1 - a) = 0.4286 for a = 0.3.
        let panel = flows_panel(ar1_flows(20000, 2, 0.3, 2));
        let diag = accumulated_autocorr(&panel, 20).unwrap();
        for d in &diag {
            let last = *d.accumulated.last().unwrap();
            assert!((last - 0.3 / 0.7).abs() < 0.08, "accumulated {last} vs 0.4286");
            assert!(d.outside_band_at_max);
        }
    }

    #[test]
    fn few_tenors_exit_the_band_on_a_wide_white_panel() {
        // The daily-flows regime: at most 20 percent of tenors outside the
        // accumulated band at lag 20.
        let panel = flows_panel(white_flows(2000, 20, 12));
        let diag = accumulated_autocorr(&panel, 20).unwrap();
        let outside = diag.iter().filter(|d| d.outside_band_at_max).count();
        assert!(outside * 5 <= 20, "{outside}/20 tenors outside the band");
    }

    #[test]
    fn zero_variance_tenor_is_flagged() {
        let mut q = white_flows(500, 3, 3);
        for t in 0..500 {
            q[(t, 1)] = 0.0;
        }
        let diag = accumulated_autocorr(&flows_panel(q), 10).unwrap();
        assert!(!diag[0].excluded);
        assert!(diag[1].excluded);
        assert!(!diag[2].excluded);
    }

    #[test]
    fn deconvolution_of_exact_ar1_autocorrelation() {
        // phi(l) = a^l has the two-tap inverse (1, -a, 0, ...).
        let a: f64 = 0.45;
        let phi: Vec<f64> = (0..=12).map(|l| a.powi(l)).collect();
        let inv = convolutional_inverse(&phi).unwrap();
        assert!((inv[0] - 1.0).abs() < 1e-12);
        assert!((inv[1] + a).abs() < 1e-12);
        for v in &inv[2..] {
            assert!(v.abs() < 1e-6, "tail of the AR(1) inverse should vanish, got {v}");
        }
    }

    #[test]
    fn identity_kernel_is_a_no_op() {
        let q = white_flows(200, 2, 4);
        let panel = flows_panel(q.clone());
        let kernel = WhiteningKernel {
            phi: DMatrix::from_fn(2, 1, |_, c| if c == 0 { 1.0 } else { 0.0 }),
            phi_inv: DMatrix::from_fn(2, 1, |_, c| if c == 0 { 1.0 } else { 0.0 }),
            omega_root_inv: DMatrix::identity(2, 2),
        };
        let out = surprise_flows(&panel, &kernel).unwrap();
        assert_eq!(out, q);
    }

    #[test]
    fn fitted_kernel_on_white_input_is_nearly_identity() {
        let panel = flows_panel(white_flows(5000, 2, 5));
        let kernel = fit_whitening(&panel, 10).unwrap();
        assert!(kernel.deconvolution_residual() < 1e-10);
        // Phi(0) = 1 and all later taps are sampling noise.
        for j in 0..2 {
            assert!((kernel.phi_inv[(j, 0)] - 1.0).abs() < 0.05);
            for l in 1..=10 {
                assert!(kernel.phi_inv[(j, l)].abs() < 0.06);
            }
        }
    }

    #[test]
    fn whitening_kills_ar1_autocorrelation() {
        let days = 10_000;
        let panel = flows_panel(ar1_flows(days, 2, 0.3, 6));
        let kernel = fit_whitening(&panel, 20).unwrap();
        let eta = surprise_flows(&panel, &kernel).unwrap();
        let band = 3.0 / (eta.nrows() as f64).sqrt();
        for j in 0..2 {
            let col: Vec<f64> = eta.column(j).iter().copied().collect();
            let rho = column_autocorr(&col, 10).unwrap();
            for (l, r) in rho.iter().enumerate() {
                assert!(
                    r.abs() <= band,
                    "residual autocorrelation at lag {}: {r:.4} vs band {band:.4}",
                    l + 1
                );
            }
            // Unit variance within 10 percent.
            let var: f64 = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
            assert!((var - 1.0).abs() < 0.1, "whitened variance {var}");
        }
    }

    #[test]
    fn whitening_removes_cross_correlation() {
        // Two white tenors with equal-time correlation 0.5.
        let days = 10_000;
        let raw = white_flows(days, 2, 7);
        let mut q = DMatrix::zeros(days, 2);
        for t in 0..days {
            q[(t, 0)] = raw[(t, 0)];
            q[(t, 1)] = 0.5 * raw[(t, 0)] + (1.0 - 0.25_f64).sqrt() * raw[(t, 1)];
        }
        let panel = flows_panel(q);
        let kernel = fit_whitening(&panel, 5).unwrap();
        let eta = surprise_flows(&panel, &kernel).unwrap();
        let corr = sample_correlation(&eta);
        assert!(corr[(0, 1)].abs() <= 0.02, "whitened cross-correlation {}", corr[(0, 1)]);
    }

    #[test]
    fn whitening_rejects_zero_variance() {
        let mut q = white_flows(500, 2, 8);
        for t in 0..500 {
            q[(t, 0)] = 0.0;
        }
        assert!(fit_whitening(&flows_panel(q), 5).is_err());
    }

    proptest! {
        // Correlations are scale-free: per-tenor positive rescaling of the
        // flows leaves the diagnostic unchanged.
        #[test]
        fn autocorr_is_scale_invariant(scale in 1e-3_f64..1e3, seed in 0u64..50) {
            let q = white_flows(120, 2, seed);
            let mut scaled = q.clone();
            for t in 0..120 {
                scaled[(t, 0)] *= scale;
            }
            let a = accumulated_autocorr(&flows_panel(q), 5).unwrap();
            let b = accumulated_autocorr(&flows_panel(scaled), 5).unwrap();
            for (x, y) in a[0].rho.iter().zip(b[0].rho.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
