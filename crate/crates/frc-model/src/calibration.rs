//! Rolling moment estimation, parameter fits and the period protocol.
//!
//! Daily volatilities are 20-day trailing root-mean-squares; correlation
//! matrices are full-period Pearson estimates; day-level covariances are the
//! products `diag(vol) * corr * diag(vol)`. The stiffness `kappa` is fitted
//! to the empirical price correlation by a bracketed golden-section search
//! over `log kappa`, and the explained-share vector `Y` by projected
//! coordinate descent on the weighted least-squares objective.

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};

use crate::error::ModelError;
use crate::evaluation::predict_panel;
use crate::field::{price_corr_small_psi, scale_rows, FieldModel};
use crate::grid::TenorGrid;
use crate::impact::{build_lambda, DayEstimates, ImpactInputs, ImpactKind};
use crate::linalg::{inverse_checked, psd_sqrt};
use crate::panel::MarketPanel;
use crate::quadrature::QuadratureSpec;
use crate::simulation::sample_correlation;
use crate::Result;

/// Trailing window of the daily volatility estimators, days.
pub const ROLLING_WINDOW: usize = 20;

const KAPPA_LO: f64 = 0.01;
const KAPPA_HI: f64 = 100.0;

/// Rolling volatilities and stationary correlation estimates for one panel.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingEstimates {
    pub window: usize,
    /// First row index with defined estimates (= `window`).
    pub valid_from: usize,
    /// Daily price volatilities, NaN before `valid_from`.
    pub sigma_hat: DMatrix<f64>,
    /// Daily flow volatilities, NaN before `valid_from`.
    pub omega_hat: DMatrix<f64>,
    /// Full-period flow correlation.
    pub rho_q: DMatrix<f64>,
    /// Full-period price correlation.
    pub rho_f: DMatrix<f64>,
    /// Full-period price-flow correlation.
    pub rho_fq: DMatrix<f64>,
    /// Tenors whose flow volatility vanishes on some valid day.
    pub zero_flow_tenors: Vec<usize>,
    pub dates: Vec<NaiveDate>,
}

impl RollingEstimates {
    /// Day-level moment estimates for row `k` (must be `>= valid_from`).
    pub fn day(&self, k: usize) -> Result<DayEstimates> {
        if k < self.valid_from || k >= self.sigma_hat.nrows() {
            return Err(ModelError::Estimation(format!(
                "estimates undefined for day {k} (valid from {} to {})",
                self.valid_from,
                self.sigma_hat.nrows() - 1
            )));
        }
        Ok(DayEstimates::from_moments(
            self.sigma_hat.row(k).transpose(),
            self.omega_hat.row(k).transpose(),
            &self.rho_f,
            &self.rho_q,
            &self.rho_fq,
            Some(self.dates[k]),
        ))
    }

    pub fn n_days(&self) -> usize {
        self.sigma_hat.nrows()
    }

    pub fn n_tenors(&self) -> usize {
        self.sigma_hat.ncols()
    }

    /// Restriction of every estimate to a subset of tenors.
    pub fn select_tenors(&self, cols: &[usize]) -> Self {
        RollingEstimates {
            window: self.window,
            valid_from: self.valid_from,
            sigma_hat: self.sigma_hat.select_columns(cols.iter()),
            omega_hat: self.omega_hat.select_columns(cols.iter()),
            rho_q: self.rho_q.select_rows(cols.iter()).select_columns(cols.iter()),
            rho_f: self.rho_f.select_rows(cols.iter()).select_columns(cols.iter()),
            rho_fq: self.rho_fq.select_rows(cols.iter()).select_columns(cols.iter()),
            zero_flow_tenors: self
                .zero_flow_tenors
                .iter()
                .filter_map(|t| cols.iter().position(|c| c == t))
                .collect(),
            dates: self.dates.clone(),
        }
    }
}

/// Pearson correlation with exact unit diagonal; zero-variance columns get
/// zero correlation off the diagonal.
fn correlation_of(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, nx) = x.shape();
    let ny = y.ncols();
    let mean = |m: &DMatrix<f64>, j: usize| m.column(j).sum() / rows as f64;
    let mut out = DMatrix::zeros(nx, ny);
    let x_means: Vec<f64> = (0..nx).map(|j| mean(x, j)).collect();
    let y_means: Vec<f64> = (0..ny).map(|j| mean(y, j)).collect();
    let x_sd: Vec<f64> = (0..nx)
        .map(|j| x.column(j).iter().map(|v| (v - x_means[j]).powi(2)).sum::<f64>().sqrt())
        .collect();
    let y_sd: Vec<f64> = (0..ny)
        .map(|j| y.column(j).iter().map(|v| (v - y_means[j]).powi(2)).sum::<f64>().sqrt())
        .collect();
    for i in 0..nx {
        for j in 0..ny {
            let denom = x_sd[i] * y_sd[j];
            if denom > 0.0 {
                let mut acc = 0.0;
                for t in 0..rows {
                    acc += (x[(t, i)] - x_means[i]) * (y[(t, j)] - y_means[j]);
                }
                out[(i, j)] = acc / denom;
            }
        }
    }
    out
}

/// 20-day trailing volatility estimates plus the full-period correlations.
///
/// `sigma_hat^2(t_k)` is the mean of the squared increments over the 20 days
/// strictly before `t_k`; days without a full window are flagged NaN.
pub fn rolling_estimates(panel: &MarketPanel) -> Result<RollingEstimates> {
    let n_days = panel.len();
    if n_days < 2 * ROLLING_WINDOW {
        return Err(ModelError::Estimation(format!(
            "need at least {} days for rolling estimation, got {n_days}",
            2 * ROLLING_WINDOW
        )));
    }
    let n = panel.n_tenors();
    let mut sigma_hat = DMatrix::from_element(n_days, n, f64::NAN);
    let mut omega_hat = DMatrix::from_element(n_days, n, f64::NAN);
    let mut zero_flow = Vec::new();
    for j in 0..n {
        let mut sum_f2 = 0.0;
        let mut sum_q2 = 0.0;
        for t in 0..ROLLING_WINDOW {
            sum_f2 += panel.delta_f[(t, j)].powi(2);
            sum_q2 += panel.delta_q[(t, j)].powi(2);
        }
        let mut any_zero = false;
        for k in ROLLING_WINDOW..n_days {
            sigma_hat[(k, j)] = (sum_f2 / ROLLING_WINDOW as f64).sqrt();
            omega_hat[(k, j)] = (sum_q2 / ROLLING_WINDOW as f64).sqrt();
            if omega_hat[(k, j)] == 0.0 {
                any_zero = true;
            }
            sum_f2 += panel.delta_f[(k, j)].powi(2) - panel.delta_f[(k - ROLLING_WINDOW, j)].powi(2);
            sum_q2 += panel.delta_q[(k, j)].powi(2) - panel.delta_q[(k - ROLLING_WINDOW, j)].powi(2);
            // Guard against negative drift from cancellation.
            sum_f2 = sum_f2.max(0.0);
            sum_q2 = sum_q2.max(0.0);
        }
        if any_zero {
            zero_flow.push(j);
        }
    }
    Ok(RollingEstimates {
        window: ROLLING_WINDOW,
        valid_from: ROLLING_WINDOW,
        sigma_hat,
        omega_hat,
        rho_q: correlation_with_unit_diag(&panel.delta_q),
        rho_f: correlation_with_unit_diag(&panel.delta_f),
        rho_fq: correlation_of(&panel.delta_f, &panel.delta_q),
        zero_flow_tenors: zero_flow,
        dates: panel.dates.clone(),
    })
}

fn correlation_with_unit_diag(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = sample_correlation(x);
    for i in 0..c.nrows() {
        c[(i, i)] = 1.0;
        for j in 0..c.ncols() {
            if !c[(i, j)].is_finite() {
                c[(i, j)] = 0.0;
            }
        }
        c[(i, i)] = 1.0;
    }
    c
}

/// Result of the stiffness fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaFit {
    pub kappa: f64,
    /// Share of the empirical correlation variance explained by the model.
    pub r2: f64,
    /// Set when the optimum sits on the search bracket boundary.
    pub at_boundary: bool,
}

/// Fits `kappa` by minimizing the Frobenius distance between the model price
/// correlation and an empirical correlation matrix, searching `log kappa`
/// over `[log 0.01, log 100]` (coarse scan plus golden-section refinement to
/// 1e-4 relative).
pub fn fit_kappa(
    empirical_corr: &DMatrix<f64>,
    grid: &TenorGrid,
    _spec: &QuadratureSpec,
) -> Result<KappaFit> {
    let n = grid.n();
    if empirical_corr.nrows() != n || empirical_corr.ncols() != n {
        return Err(ModelError::Dimension {
            expected: n,
            actual: empirical_corr.nrows(),
            context: "empirical correlation".into(),
        });
    }
    for i in 0..n {
        if (empirical_corr[(i, i)] - 1.0).abs() > 1e-8 {
            return Err(ModelError::Domain(format!(
                "not a correlation matrix: diagonal entry {} at tenor {}",
                empirical_corr[(i, i)],
                i + 1
            )));
        }
        for j in 0..n {
            if empirical_corr[(i, j)].abs() > 1.0 + 1e-8 {
                return Err(ModelError::Domain(format!(
                    "not a correlation matrix: entry {} at ({}, {})",
                    empirical_corr[(i, j)],
                    i + 1,
                    j + 1
                )));
            }
        }
    }

    let loss = |ln_kappa: f64| -> Result<f64> {
        let corr = price_corr_small_psi(ln_kappa.exp(), grid)?;
        Ok((corr - empirical_corr).norm_squared())
    };

    let lo = KAPPA_LO.ln();
    let hi = KAPPA_HI.ln();
    let coarse = 33;
    let mut best_i = 0usize;
    let mut best = f64::INFINITY;
    for i in 0..coarse {
        let x = lo + (hi - lo) * i as f64 / (coarse - 1) as f64;
        let v = loss(x)?;
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let step = (hi - lo) / (coarse - 1) as f64;
    let mut a = lo + step * best_i.saturating_sub(1) as f64;
    let mut b = (lo + step * (best_i + 1) as f64).min(hi);

    // Golden-section refinement on the bracketing cell.
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = loss(c)?;
    let mut fd = loss(d)?;
    while (b - a) > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = loss(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = loss(d)?;
        }
    }
    let ln_kappa = 0.5 * (a + b);
    let kappa = ln_kappa.exp();
    let at_boundary = kappa >= KAPPA_HI * 0.99 || kappa <= KAPPA_LO * 1.01;

    let residual = loss(ln_kappa)?;
    let mean = empirical_corr.iter().sum::<f64>() / (n * n) as f64;
    let total: f64 = empirical_corr.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if total > 0.0 { 1.0 - residual / total } else { f64::NAN };
    Ok(KappaFit { kappa, r2, at_boundary })
}

/// Allowed range of the per-tenor explained shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YRange {
    /// The primary convention, `Y in [0, 1]`.
    Unit,
    /// Relaxed variant allowing negative loadings, `Y in [-1, 1]`.
    Relaxed,
}

impl YRange {
    fn clamp(&self, v: f64) -> f64 {
        match self {
            YRange::Unit => v.clamp(0.0, 1.0),
            YRange::Relaxed => v.clamp(-1.0, 1.0),
        }
    }
}

/// Options of the `Y` fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitYOptions {
    /// Weight residuals by the inverse daily price variance (the default) or
    /// use raw squared errors.
    pub sigma_weighted: bool,
    pub y_range: YRange,
    pub max_sweeps: usize,
    /// Relative objective-change tolerance.
    pub tol: f64,
}

impl Default for FitYOptions {
    fn default() -> Self {
        FitYOptions { sigma_weighted: true, y_range: YRange::Unit, max_sweeps: 500, tol: 1e-6 }
    }
}

/// Outcome of a per-period calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub kappa_hat: f64,
    pub kappa_r2: f64,
    pub y_hat: DVector<f64>,
    /// Tenors (0-based) forced to zero by the symmetric-model stabilization.
    pub y_zeroed: Vec<usize>,
    pub period: (NaiveDate, NaiveDate),
    pub objective: f64,
    /// Accepted objective value after each sweep (non-increasing).
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

struct DayContext {
    /// `diag(sigma_hat) diag(sigma_A)^-1 R` for the day.
    b: DMatrix<f64>,
    /// Whitened flows `Omega_hat^{-1/2} dq`.
    u: DVector<f64>,
    /// Raw flows of the day.
    q: DVector<f64>,
    /// Diagonal residual weights.
    w: DVector<f64>,
    f: DVector<f64>,
    omega_mat: DMatrix<f64>,
    sigma_hat: DVector<f64>,
    omega_hat: DVector<f64>,
}

fn day_contexts(
    panel: &MarketPanel,
    est: &RollingEstimates,
    field: &FieldModel,
    opts: &FitYOptions,
) -> Result<Vec<DayContext>> {
    let n = panel.n_tenors();
    let base = scale_rows(&field.response, &field.sigma_a);
    let mut out = Vec::with_capacity(est.n_days() - est.valid_from);
    for k in est.valid_from..est.n_days() {
        let day = est.day(k)?;
        let (omega_mat, _) = crate::impact::ridged_covariance(&day.omega_mat, n);
        // A degenerate flow covariance carries no information; whiten to
        // zero rather than failing the whole fit.
        let u = match psd_sqrt(&omega_mat)
            .and_then(|root| inverse_checked(&root, "fit_y flow root"))
        {
            Ok(root_inv) => &root_inv * panel.delta_q.row(k).transpose(),
            Err(_) => DVector::zeros(n),
        };
        let sigma_hat = day.sigma_hat.clone();
        let mut b = base.clone();
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] *= sigma_hat[i];
            }
        }
        let w = if opts.sigma_weighted {
            DVector::from_fn(n, |i, _| {
                let s2 = sigma_hat[i] * sigma_hat[i];
                if s2 > 0.0 {
                    1.0 / s2
                } else {
                    0.0
                }
            })
        } else {
            DVector::from_element(n, 1.0)
        };
        out.push(DayContext {
            b,
            u,
            q: panel.delta_q.row(k).transpose(),
            w,
            f: panel.delta_f.row(k).transpose(),
            omega_mat,
            sigma_hat,
            omega_hat: est.omega_hat.row(k).transpose(),
        });
    }
    Ok(out)
}

/// Quadratic data for a fixed linearization: objective
/// `Y^T H Y - 2 g^T Y + c0`.
struct Quadratic {
    h: DMatrix<f64>,
    g: DVector<f64>,
    c0: f64,
}

impl Quadratic {
    fn objective(&self, y: &DVector<f64>) -> f64 {
        (y.transpose() * &self.h * y)[(0, 0)] - 2.0 * self.g.dot(y) + self.c0
    }

    /// One pass of projected coordinate descent; flat directions fall back
    /// to zero.
    fn descend(&self, y: &mut DVector<f64>, range: YRange) {
        let m = y.len();
        for j in 0..m {
            let hjj = self.h[(j, j)];
            if hjj <= 1e-300 {
                y[j] = 0.0;
                continue;
            }
            let mut cross = 0.0;
            for i in 0..m {
                if i != j {
                    cross += self.h[(j, i)] * y[i];
                }
            }
            y[j] = range.clamp((self.g[j] - cross) / hjj);
        }
    }

    /// Clipped unconstrained minimizer, the warm start of the descent; the
    /// coordinate passes crawl along strongly coupled directions otherwise.
    fn warm_start(&self, range: YRange) -> Option<DVector<f64>> {
        let sol = self.h.clone().lu().solve(&self.g)?;
        Some(sol.map(|v| range.clamp(v)))
    }
}

/// Assembles the quadratic for regressors `e_k[i][j] = rows of b * diag(v_k)`
/// restricted to `active`, with constants from the inactive rows.
fn assemble(
    days: &[DayContext],
    active: &[usize],
    v: &[DVector<f64>],
) -> Quadratic {
    let m = active.len();
    let mut h = DMatrix::zeros(m, m);
    let mut g = DVector::zeros(m);
    let mut c0 = 0.0;
    for (day, vk) in days.iter().zip(v) {
        let n = day.f.len();
        // e[(i, a)] = w-weighted regressor for active column a, active row i.
        let mut e = DMatrix::zeros(m, m);
        for (ri, &i) in active.iter().enumerate() {
            for (ci, &j) in active.iter().enumerate() {
                e[(ri, ci)] = day.b[(i, j)] * vk[ci];
            }
        }
        for (ri, &i) in active.iter().enumerate() {
            let w = day.w[i];
            let fi = day.f[i];
            c0 += w * fi * fi;
            for a in 0..m {
                g[a] += w * e[(ri, a)] * fi;
                for bcol in a..m {
                    h[(a, bcol)] += w * e[(ri, a)] * e[(ri, bcol)];
                }
            }
        }
        // Rows outside the active set predict zero; their residual is data.
        for i in 0..n {
            if !active.contains(&i) {
                c0 += day.w[i] * day.f[i] * day.f[i];
            }
        }
    }
    for a in 0..m {
        for bcol in 0..a {
            h[(a, bcol)] = h[(bcol, a)];
        }
    }
    Quadratic { h, g, c0 }
}

/// Fits the explained-share vector for the whitened (`bbdlw`) or symmetric
/// (`bbdls`) noise-field model by projected coordinate descent. The
/// symmetric fit recomputes its rotation every sweep and greedily zeroes the
/// least liquid tenors until the daily impact matrices satisfy the
/// symmetric-PSD contract.
pub fn fit_y(
    panel: &MarketPanel,
    est: &RollingEstimates,
    field: &FieldModel,
    kind: ImpactKind,
    opts: &FitYOptions,
) -> Result<CalibrationResult> {
    if !matches!(kind, ImpactKind::Bbdlw | ImpactKind::Bbdls) {
        return Err(ModelError::Parameter(format!(
            "fit_y applies to the noise-field kinds, not {}",
            kind.as_str()
        )));
    }
    if panel.len() != est.n_days() {
        return Err(ModelError::Dimension {
            expected: est.n_days(),
            actual: panel.len(),
            context: "panel vs estimates".into(),
        });
    }
    let n = panel.n_tenors();
    let days = day_contexts(panel, est, field, opts)?;
    let period = (panel.dates[0], *panel.dates.last().expect("nonempty panel"));

    // Whitened fit first; it is the exact quadratic and the warm start of
    // the symmetric fit.
    let identity_v: Vec<DVector<f64>> = days.iter().map(|d| d.u.clone()).collect();
    let all: Vec<usize> = (0..n).collect();
    let quad = assemble(&days, &all, &identity_v);
    let mut y = quad.warm_start(opts.y_range).unwrap_or_else(|| DVector::from_element(n, 0.5));
    let mut objective = quad.objective(&y);
    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < opts.max_sweeps {
        quad.descend(&mut y, opts.y_range);
        sweeps += 1;
        let next = quad.objective(&y);
        let rel = (objective - next).abs() / objective.abs().max(1e-300);
        objective = next;
        trace.push(objective);
        if rel <= opts.tol {
            converged = true;
            break;
        }
    }

    if kind == ImpactKind::Bbdlw {
        return Ok(CalibrationResult {
            kappa_hat: field.params.kappa.unwrap_or(f64::NAN),
            kappa_r2: f64::NAN,
            y_hat: y,
            y_zeroed: Vec::new(),
            period,
            objective,
            objective_trace: trace,
            converged,
            sweeps,
        });
    }

    // Symmetric model: alternate rotation updates and descent passes,
    // zeroing unstable tenors between restarts.
    let mut forced_zero: Vec<usize> = Vec::new();
    loop {
        let fit = fit_y_bbdls_inner(&days, field, &y, &forced_zero, opts)?;
        match bbdls_instability(panel, est, field, &fit.y) {
            None => {
                return Ok(CalibrationResult {
                    kappa_hat: field.params.kappa.unwrap_or(f64::NAN),
                    kappa_r2: f64::NAN,
                    y_hat: fit.y,
                    y_zeroed: forced_zero,
                    period,
                    objective: fit.objective,
                    objective_trace: fit.trace,
                    converged: fit.converged,
                    sweeps: fit.sweeps,
                });
            }
            Some(_) => {
                // Zero the least liquid active tenor and refit.
                let candidate = least_liquid_active(&days, &fit.y, &forced_zero);
                match candidate {
                    Some(t) => forced_zero.push(t),
                    None => {
                        return Ok(CalibrationResult {
                            kappa_hat: field.params.kappa.unwrap_or(f64::NAN),
                            kappa_r2: f64::NAN,
                            y_hat: DVector::zeros(n),
                            y_zeroed: forced_zero,
                            period,
                            objective: fit.objective,
                            objective_trace: fit.trace,
                            converged: false,
                            sweeps: fit.sweeps,
                        });
                    }
                }
            }
        }
    }
}

/// Mean liquidity proxy `sigma_hat * omega_hat` of the least liquid tenor
/// still active.
fn least_liquid_active(
    days: &[DayContext],
    y: &DVector<f64>,
    forced: &[usize],
) -> Option<usize> {
    let n = y.len();
    let mut best: Option<(usize, f64)> = None;
    for j in 0..n {
        if forced.contains(&j) || y[j] <= 0.0 {
            continue;
        }
        let liq: f64 = days
            .iter()
            .map(|d| d.sigma_hat[j] * d.omega_hat[j])
            .sum::<f64>()
            / days.len() as f64;
        if best.map(|(_, b)| liq < b).unwrap_or(true) {
            best = Some((j, liq));
        }
    }
    best.map(|(j, _)| j)
}

/// Checks the fitted symmetric model day by day; returns the first defect.
fn bbdls_instability(
    panel: &MarketPanel,
    est: &RollingEstimates,
    field: &FieldModel,
    y: &DVector<f64>,
) -> Option<String> {
    let inputs = ImpactInputs {
        sigma: DVector::from_element(y.len(), 1.0),
        omega: DVector::from_element(y.len(), 1.0),
        omega_corr: DMatrix::identity(y.len(), y.len()),
        y_vector: y.clone(),
        y_ratio: 1.0,
    };
    for k in est.valid_from..est.n_days() {
        let day = match est.day(k) {
            Ok(d) => d,
            Err(e) => return Some(e.to_string()),
        };
        match build_lambda(ImpactKind::Bbdls, &inputs, Some(field), &day) {
            Ok(model) => {
                if !model.satisfies_constraints(1e-8, 1e-10) {
                    return Some(format!(
                        "day {k}: asymmetry {:e}, min eigenvalue {:e}",
                        model.symmetry_error(),
                        model.min_eigenvalue_rel()
                    ));
                }
            }
            Err(e) => return Some(format!("day {k}: {e}")),
        }
    }
    let _ = panel;
    None
}

/// Per-day sub-grid whitening cache for one active set.
struct SubGridDay {
    omega_half: DMatrix<f64>,
    /// `Omega_S^{-1/2} dq_S`, the sub-grid whitened flows.
    u_sub: DVector<f64>,
}

fn subgrid_days(days: &[DayContext], active: &[usize]) -> Vec<SubGridDay> {
    days.iter()
        .map(|day| {
            let omega_sub =
                day.omega_mat.select_rows(active.iter()).select_columns(active.iter());
            let q_sub = DVector::from_fn(active.len(), |a, _| day.q[active[a]]);
            match psd_sqrt(&omega_sub)
                .and_then(|half| Ok((half.clone(), inverse_checked(&half, "bbdls flow root")?)))
            {
                Ok((omega_half, root_inv)) => SubGridDay { omega_half, u_sub: root_inv * q_sub },
                Err(_) => SubGridDay {
                    omega_half: DMatrix::identity(active.len(), active.len()),
                    u_sub: DVector::zeros(active.len()),
                },
            }
        })
        .collect()
}

struct InnerFit {
    y: DVector<f64>,
    objective: f64,
    trace: Vec<f64>,
    converged: bool,
    sweeps: usize,
}

/// Inner symmetric fit at a fixed zeroing pattern.
fn fit_y_bbdls_inner(
    days: &[DayContext],
    field: &FieldModel,
    warm: &DVector<f64>,
    forced_zero: &[usize],
    opts: &FitYOptions,
) -> Result<InnerFit> {
    let n = warm.len();
    let mut y = warm.clone();
    for &j in forced_zero {
        y[j] = 0.0;
    }
    // Start strictly inside the box so the rotation is defined.
    for j in 0..n {
        if !forced_zero.contains(&j) && y[j] < 1e-3 {
            y[j] = 1e-3;
        }
    }
    let base = scale_rows(&field.response, &field.sigma_a);
    let mut objective = f64::INFINITY;
    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut converged = false;
    let mut previous = y.clone();
    let mut cached_active: Vec<usize> = Vec::new();
    let mut cache: Vec<SubGridDay> = Vec::new();
    while sweeps < opts.max_sweeps {
        let active: Vec<usize> =
            (0..n).filter(|j| !forced_zero.contains(j) && y[*j] > 0.0).collect();
        if active.is_empty() {
            return Ok(InnerFit { y: DVector::zeros(n), objective, trace, converged: true, sweeps });
        }
        if active != cached_active {
            cache = subgrid_days(days, &active);
            cached_active = active.clone();
        }
        // Per-day rotation at the current Y, then one descent pass.
        let mut v = Vec::with_capacity(days.len());
        for (day, sub) in days.iter().zip(&cache) {
            v.push(rotated_whitened_flows(day, sub, &base, &y, &active));
        }
        let quad = assemble(days, &active, &v);
        let mut y_active = DVector::from_fn(active.len(), |a, _| y[active[a]]);
        // Solve the fixed-rotation quadratic to tolerance before the next
        // rotation update.
        let mut inner_obj = quad.objective(&y_active);
        for _ in 0..50 {
            quad.descend(&mut y_active, opts.y_range);
            let next = quad.objective(&y_active);
            if (inner_obj - next).abs() <= opts.tol * inner_obj.abs().max(1e-300) {
                break;
            }
            inner_obj = next;
        }
        let mut y_next = DVector::zeros(n);
        for (a, &j) in active.iter().enumerate() {
            // Snap negligible loadings to zero; they would otherwise make
            // the next rotation ill-conditioned.
            y_next[j] = if y_active[a].abs() < 1e-6 { 0.0 } else { y_active[a] };
        }
        let next = quad.objective(&y_active);
        sweeps += 1;
        if next > objective && sweeps > 1 {
            // The rotation update raised the objective; keep the previous iterate.
            y = previous;
            converged = true;
            break;
        }
        let rel = (objective - next).abs() / objective.abs().max(1e-300);
        previous = y.clone();
        y = y_next;
        objective = next;
        trace.push(objective);
        if rel <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(InnerFit { y, objective, trace, converged, sweeps })
}

/// `O_sym(M_S, Omega_S^{1/2}) u_S` on the active set, the linearization
/// point of one symmetric sweep.
fn rotated_whitened_flows(
    day: &DayContext,
    sub: &SubGridDay,
    base: &DMatrix<f64>,
    y: &DVector<f64>,
    active: &[usize],
) -> DVector<f64> {
    let m = active.len();
    let mut m_sub = DMatrix::zeros(m, m);
    for (ri, &i) in active.iter().enumerate() {
        for (ci, &j) in active.iter().enumerate() {
            m_sub[(ri, ci)] = day.sigma_hat[i] * base[(i, j)] * y[j];
        }
    }
    match crate::linalg::o_sym(&m_sub, &sub.omega_half) {
        Ok(o) => &o * &sub.u_sub,
        // An ill-conditioned rotation falls back to the whitened flows; the
        // instability check will force a zeroing if the defect persists.
        Err(_) => sub.u_sub.clone(),
    }
}

/// Fits the scalar Y-ratio of the `diag`/`ml`/`kyle` estimators by
/// least squares on the unit-ratio predictions, clipped to `[0, 1]`.
pub fn fit_y_ratio(
    panel: &MarketPanel,
    est: &RollingEstimates,
    kind: ImpactKind,
    field: Option<&FieldModel>,
) -> Result<f64> {
    if matches!(kind, ImpactKind::Bbdlw | ImpactKind::Bbdls) {
        return Err(ModelError::Parameter(
            "the noise-field kinds calibrate the vector Y, not the scalar ratio".into(),
        ));
    }
    let n = panel.n_tenors();
    let unit = predict_panel(
        panel,
        est,
        kind,
        field,
        &DVector::from_element(n, 1.0),
        1.0,
    )?;
    let mut num = 0.0;
    let mut den = 0.0;
    for k in est.valid_from..est.n_days() {
        for j in 0..n {
            let s2 = est.sigma_hat[(k, j)].powi(2);
            if s2 > 0.0 {
                num += unit[(k, j)] * panel.delta_f[(k, j)] / s2;
                den += unit[(k, j)] * unit[(k, j)] / s2;
            }
        }
    }
    if den <= 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// One period of the in/out-of-sample protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSplit {
    pub periods: Vec<MarketPanel>,
    /// Inclusive calendar-year span of each period.
    pub year_ranges: Vec<(i32, i32)>,
    /// `source_map[p]` is the period whose parameters evaluate period `p`
    /// out of sample (the preceding one, circular).
    pub source_map: Vec<usize>,
    /// Single-period panels can only be scored in sample.
    pub in_sample_only: bool,
    /// Calendar spans that contained no data and were skipped.
    pub skipped: Vec<(i32, i32)>,
}

/// Splits a panel into consecutive `years_per_period`-year periods and pairs
/// each with the preceding one for out-of-sample evaluation (the first
/// period wraps around to the last).
pub fn segment_periods(panel: &MarketPanel, years_per_period: i32) -> Result<PeriodSplit> {
    if years_per_period < 1 {
        return Err(ModelError::Parameter(format!(
            "years_per_period must be positive, got {years_per_period}"
        )));
    }
    if panel.is_empty() {
        return Err(ModelError::Estimation("cannot segment an empty panel".into()));
    }
    let first_year = panel.dates[0].year();
    let last_year = panel.dates.last().expect("nonempty").year();
    let mut periods = Vec::new();
    let mut year_ranges = Vec::new();
    let mut skipped = Vec::new();
    let mut start_year = first_year;
    while start_year <= last_year {
        let end_year = start_year + years_per_period - 1;
        let lo = panel.dates.partition_point(|d| d.year() < start_year);
        let hi = panel.dates.partition_point(|d| d.year() <= end_year);
        if hi > lo {
            periods.push(panel.slice_days(lo, hi));
            year_ranges.push((start_year, end_year));
        } else {
            skipped.push((start_year, end_year));
        }
        start_year = end_year + 1;
    }
    let p = periods.len();
    let source_map = (0..p).map(|i| (i + p - 1) % p).collect();
    Ok(PeriodSplit {
        source_map,
        in_sample_only: p == 1,
        periods,
        year_ranges,
        skipped,
    })
}
