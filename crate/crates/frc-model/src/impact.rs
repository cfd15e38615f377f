//! Cross-impact matrices and the sub-daily impulse response.
//!
//! Five estimators of the linear map from daily signed flows to expected
//! price increments:
//!
//! * `diag` — per-tenor univariate regression scaled by the Y-ratio
//! * `ml`   — unconstrained multivariate regression scaled by the Y-ratio
//! * `kyle` — symmetric PSD estimator built from the price covariance root
//! * `bbdlw` — noise-field model with whitened flows (identity rotation)
//! * `bbdls` — noise-field model with the symmetrizing rotation
//!
//! `kyle` and `bbdls` are symmetric positive semi-definite by construction.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::field::{scale_rows, FieldModel};
use crate::linalg::{asymmetry, inverse_checked, o_sym, psd_sqrt, symmetric_eigenvalues};
use crate::Result;

/// Relative size below which an omega eigenvalue triggers the ridge.
const NEAR_SINGULAR_TOL: f64 = 1e-12;

/// Ridge size relative to `trace / n`.
const RIDGE_SCALE: f64 = 1e-10;

/// Estimator family of a cross-impact matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpactKind {
    Diag,
    Ml,
    Kyle,
    Bbdlw,
    Bbdls,
}

impl ImpactKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ImpactKind::Diag => "diag",
            ImpactKind::Ml => "ml",
            ImpactKind::Kyle => "kyle",
            ImpactKind::Bbdlw => "bbdlw",
            ImpactKind::Bbdls => "bbdls",
        }
    }
}

impl std::str::FromStr for ImpactKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diag" => Ok(ImpactKind::Diag),
            "ml" => Ok(ImpactKind::Ml),
            "kyle" => Ok(ImpactKind::Kyle),
            "bbdlw" => Ok(ImpactKind::Bbdlw),
            "bbdls" => Ok(ImpactKind::Bbdls),
            other => Err(ModelError::Parameter(format!("unknown impact kind '{other}'"))),
        }
    }
}

/// Stationary inputs of the impact estimators.
///
/// `sigma`/`omega` are per-tenor price and flow volatilities, `omega_corr`
/// the equal-time flow correlation, `y_vector` the per-tenor explained-share
/// loadings and `y_ratio` the pooled scalar used by `diag`/`ml`/`kyle`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactInputs {
    pub sigma: DVector<f64>,
    pub omega: DVector<f64>,
    pub omega_corr: DMatrix<f64>,
    pub y_vector: DVector<f64>,
    pub y_ratio: f64,
}

impl ImpactInputs {
    pub fn validate(&self) -> Result<()> {
        let n = self.sigma.len();
        for (name, len) in [("omega", self.omega.len()), ("y_vector", self.y_vector.len())] {
            if len != n {
                return Err(ModelError::Dimension {
                    expected: n,
                    actual: len,
                    context: format!("impact inputs: {name}"),
                });
            }
        }
        if self.omega_corr.nrows() != n || self.omega_corr.ncols() != n {
            return Err(ModelError::Dimension {
                expected: n,
                actual: self.omega_corr.nrows(),
                context: "impact inputs: omega_corr".into(),
            });
        }
        if asymmetry(&self.omega_corr) > 1e-10 {
            return Err(ModelError::Domain("omega_corr must be symmetric".into()));
        }
        for i in 0..n {
            if (self.omega_corr[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(ModelError::Domain("omega_corr must have unit diagonal".into()));
            }
        }
        if symmetric_eigenvalues(&self.omega_corr)[0] < -1e-10 {
            return Err(ModelError::Domain("omega_corr must be PSD".into()));
        }
        for v in self.y_vector.iter() {
            if !(-1e-12..=1.0 + 1e-12).contains(v) {
                return Err(ModelError::Domain(format!("Y entries must lie in [0,1], got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.y_ratio) {
            return Err(ModelError::Domain(format!(
                "y ratio must lie in [0,1], got {}",
                self.y_ratio
            )));
        }
        Ok(())
    }

    /// Equal-time flow covariance `diag(omega) * omega_corr * diag(omega)`.
    pub fn omega_matrix(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.omega);
        &d * &self.omega_corr * &d
    }
}

/// Day-level moment estimates consumed by [`build_lambda`].
#[derive(Debug, Clone, PartialEq)]
pub struct DayEstimates {
    /// Price volatilities `sigma_hat(t_k)`.
    pub sigma_hat: DVector<f64>,
    /// Price covariance `Sigma_hat(t_k)`.
    pub sigma_mat: DMatrix<f64>,
    /// Price-flow covariance `R_hat(t_k)`.
    pub r_mat: DMatrix<f64>,
    /// Flow covariance `Omega_hat(t_k)`.
    pub omega_mat: DMatrix<f64>,
    pub date: Option<NaiveDate>,
}

impl DayEstimates {
    /// Builds day estimates from volatility vectors and correlation matrices.
    pub fn from_moments(
        sigma_hat: DVector<f64>,
        omega_hat: DVector<f64>,
        rho_f: &DMatrix<f64>,
        rho_q: &DMatrix<f64>,
        rho_fq: &DMatrix<f64>,
        date: Option<NaiveDate>,
    ) -> Self {
        let ds = DMatrix::from_diagonal(&sigma_hat);
        let dw = DMatrix::from_diagonal(&omega_hat);
        DayEstimates {
            sigma_mat: &ds * rho_f * &ds,
            r_mat: &ds * rho_fq * &dw,
            omega_mat: &dw * rho_q * &dw,
            sigma_hat,
            date,
        }
    }

    /// Restriction to a subset of tenor columns (two-asset fits).
    pub fn select(&self, idx: &[usize]) -> Self {
        DayEstimates {
            sigma_hat: self.sigma_hat.select_rows(idx.iter()),
            sigma_mat: self.sigma_mat.select_rows(idx.iter()).select_columns(idx.iter()),
            r_mat: self.r_mat.select_rows(idx.iter()).select_columns(idx.iter()),
            omega_mat: self.omega_mat.select_rows(idx.iter()).select_columns(idx.iter()),
            date: self.date,
        }
    }
}

/// A cross-impact matrix with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactModel {
    pub kind: ImpactKind,
    /// Rate change per unit signed notional.
    pub lambda: DMatrix<f64>,
    /// Ridge added to the flow covariance diagonal, if one was needed.
    pub ridge: Option<f64>,
    /// Tenors (0-based) excluded from the symmetric sub-grid construction.
    pub zeroed_tenors: Vec<usize>,
    pub date: Option<NaiveDate>,
}

impl ImpactModel {
    /// Relative Frobenius asymmetry of the impact matrix.
    pub fn symmetry_error(&self) -> f64 {
        let scale = self.lambda.norm().max(1e-300);
        (&self.lambda - self.lambda.transpose()).norm() / scale
    }

    /// Smallest eigenvalue of the symmetrized impact matrix, relative to the
    /// spectral scale.
    pub fn min_eigenvalue_rel(&self) -> f64 {
        let eig = symmetric_eigenvalues(&self.lambda);
        let scale = eig.amax().max(1e-300);
        eig[0] / scale
    }

    /// Checks the symmetric/PSD contract carried by `kyle` and `bbdls`.
    pub fn satisfies_constraints(&self, sym_tol: f64, eig_tol: f64) -> bool {
        self.symmetry_error() <= sym_tol && self.min_eigenvalue_rel() >= -eig_tol
    }
}

/// Ridge-regularizes a covariance matrix whose smallest eigenvalue is
/// negligible relative to its trace. Returns the matrix and the ridge used.
pub(crate) fn ridged_covariance(omega: &DMatrix<f64>, n: usize) -> (DMatrix<f64>, Option<f64>) {
    let scale = omega.trace() / n as f64;
    let min_eig = symmetric_eigenvalues(omega)[0];
    if min_eig > NEAR_SINGULAR_TOL * scale.max(1e-300) {
        return (omega.clone(), None);
    }
    let ridge = RIDGE_SCALE * scale.max(1e-300);
    (omega + DMatrix::from_diagonal_element(n, n, ridge), Some(ridge))
}

/// Builds the cross-impact matrix of the requested kind from day-level
/// moment estimates. The `bbdlw`/`bbdls` kinds additionally need the field
/// model (for `R` and `sigma_A`) and use `inputs.y_vector`; the others use
/// `inputs.y_ratio`.
pub fn build_lambda(
    kind: ImpactKind,
    inputs: &ImpactInputs,
    field: Option<&FieldModel>,
    day: &DayEstimates,
) -> Result<ImpactModel> {
    inputs.validate()?;
    let n = day.sigma_hat.len();
    let y = inputs.y_ratio;
    let (omega_mat, ridge) = ridged_covariance(&day.omega_mat, n);
    let lambda = match kind {
        ImpactKind::Diag => {
            let mut l = DMatrix::zeros(n, n);
            for i in 0..n {
                l[(i, i)] = y * day.r_mat[(i, i)] / omega_mat[(i, i)];
            }
            l
        }
        ImpactKind::Ml => {
            let omega_inv = inverse_checked(&omega_mat, "ml flow covariance")?;
            y * &day.r_mat * omega_inv
        }
        ImpactKind::Kyle => {
            let (sigma_mat, _) = ridged_covariance(&day.sigma_mat, n);
            let sigma_half = psd_sqrt(&sigma_mat)?;
            let omega_half = psd_sqrt(&omega_mat)?;
            let o = o_sym(&sigma_half, &omega_half)?;
            let omega_half_inv = inverse_checked(&omega_half, "kyle flow root")?;
            y * sigma_half * o * omega_half_inv
        }
        ImpactKind::Bbdlw => {
            let field = field.ok_or_else(|| {
                ModelError::Parameter("bbdlw impact needs a field model".into())
            })?;
            let m = bbdl_m_matrix(field, &day.sigma_hat, &inputs.y_vector)?;
            let omega_half = psd_sqrt(&omega_mat)?;
            let omega_half_inv = inverse_checked(&omega_half, "bbdlw flow root")?;
            m * omega_half_inv
        }
        ImpactKind::Bbdls => {
            let field = field.ok_or_else(|| {
                ModelError::Parameter("bbdls impact needs a field model".into())
            })?;
            return bbdls_lambda(inputs, field, day, &omega_mat, ridge);
        }
    };
    Ok(ImpactModel { kind, lambda, ridge, zeroed_tenors: Vec::new(), date: day.date })
}

/// `M = diag(sigma_hat) diag(sigma_A)^-1 R diag(Y)`, the deterministic part
/// of the noise-field impact before flow whitening.
fn bbdl_m_matrix(
    field: &FieldModel,
    sigma_hat: &DVector<f64>,
    y_vector: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = field.grid.n();
    if sigma_hat.len() != n || y_vector.len() != n {
        return Err(ModelError::Dimension {
            expected: n,
            actual: sigma_hat.len(),
            context: "bbdl sigma_hat / Y length".into(),
        });
    }
    let mut m = scale_rows(&field.response, &field.sigma_a);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= sigma_hat[i] * y_vector[j];
        }
    }
    Ok(m)
}

/// Symmetric noise-field impact. Tenors with `Y == 0` make `M` singular, so
/// the rotation is built on the sub-grid of active tenors and the excluded
/// rows/columns are embedded as zeros, which keeps the active block
/// symmetric PSD.
fn bbdls_lambda(
    inputs: &ImpactInputs,
    field: &FieldModel,
    day: &DayEstimates,
    omega_mat: &DMatrix<f64>,
    ridge: Option<f64>,
) -> Result<ImpactModel> {
    let n = day.sigma_hat.len();
    let active: Vec<usize> = (0..n).filter(|&i| inputs.y_vector[i] > 0.0).collect();
    let zeroed: Vec<usize> = (0..n).filter(|&i| inputs.y_vector[i] <= 0.0).collect();
    if active.is_empty() {
        return Ok(ImpactModel {
            kind: ImpactKind::Bbdls,
            lambda: DMatrix::zeros(n, n),
            ridge,
            zeroed_tenors: zeroed,
            date: day.date,
        });
    }
    let m_full = bbdl_m_matrix(field, &day.sigma_hat, &inputs.y_vector)?;
    let m_sub = m_full.select_rows(active.iter()).select_columns(active.iter());
    let omega_sub = omega_mat.select_rows(active.iter()).select_columns(active.iter());
    let omega_half = psd_sqrt(&omega_sub)?;
    let o = o_sym(&m_sub, &omega_half)?;
    let omega_half_inv = inverse_checked(&omega_half, "bbdls flow root")?;
    let lambda_sub = m_sub * o * omega_half_inv;
    let mut lambda = DMatrix::zeros(n, n);
    for (a, &ia) in active.iter().enumerate() {
        for (b, &ib) in active.iter().enumerate() {
            lambda[(ia, ib)] = lambda_sub[(a, b)];
        }
    }
    Ok(ImpactModel { kind: ImpactKind::Bbdls, lambda, ridge, zeroed_tenors: zeroed, date: day.date })
}

/// A single trade hitting one tenor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeImpulse {
    /// Traded tenor, 1-based.
    pub theta0: usize,
    /// Signed notional volume.
    pub volume: f64,
    /// Sub-daily step, days. Must satisfy `dt <= tau / 10`.
    pub dt: f64,
    /// Number of steps to roll forward.
    pub steps: usize,
}

/// Curve deformation following a single trade.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    /// Per-step curve moves, step `k` at time `k * dt` after the trade.
    pub steps: Vec<DVector<f64>>,
    /// Sum of all per-step moves over the window.
    pub cumulative: DVector<f64>,
    /// Spectral radius estimate of the one-step propagator.
    pub spectral_radius: f64,
}

/// Rolls the discrete propagator `(I - (dt/tau) M)^k` forward from a single
/// trade: step `k` is
/// `(1/tau) diag(sigma) diag(sigma_A)^-1 (I - (dt/tau) M)^k diag(Y) Omega^{-1/2} V`.
pub fn impulse_response(
    field: &FieldModel,
    inputs: &ImpactInputs,
    trade: &TradeImpulse,
) -> Result<ImpulseResponse> {
    inputs.validate()?;
    let n = field.grid.n();
    let m = field.m_matrix.as_ref().ok_or_else(|| {
        ModelError::Parameter("impulse response needs the small-psi operator M".into())
    })?;
    if trade.theta0 < 1 || trade.theta0 > n {
        return Err(ModelError::Domain(format!(
            "traded tenor {} outside the grid 1..={n}",
            trade.theta0
        )));
    }
    let tau = field.params.tau;
    if trade.dt > tau / 10.0 {
        return Err(ModelError::Parameter(format!(
            "impulse step dt={} must not exceed tau/10={}",
            trade.dt,
            tau / 10.0
        )));
    }
    let propagator = DMatrix::identity(n, n) - (trade.dt / tau) * m;
    let rho = spectral_radius(&propagator);
    if rho >= 1.0 {
        return Err(ModelError::Numerical(format!(
            "unstable impulse propagator: spectral radius {rho:.6} >= 1 (dt too large)"
        )));
    }
    let omega = inputs.omega_matrix();
    let omega_half_inv = inverse_checked(&psd_sqrt(&omega)?, "impulse flow root")?;
    let mut v = DVector::zeros(n);
    v[trade.theta0 - 1] = trade.volume;
    let mut w = &omega_half_inv * v;
    for i in 0..n {
        w[i] *= inputs.y_vector[i];
    }
    let mut steps = Vec::with_capacity(trade.steps);
    let mut cumulative = DVector::zeros(n);
    for _ in 0..trade.steps {
        let mut step = w.clone();
        for i in 0..n {
            step[i] *= inputs.sigma[i] / (field.sigma_a[i] * tau);
        }
        cumulative += &step;
        steps.push(step);
        w = &propagator * w;
    }
    Ok(ImpulseResponse { steps, cumulative, spectral_radius: rho })
}

/// Power-iteration estimate of the spectral radius.
fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    // Deterministic start with all modes excited.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sin() * 0.1);
    v /= v.norm();
    let mut radius = 0.0;
    for _ in 0..200 {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - radius).abs() <= 1e-12 * norm.max(1.0);
        radius = norm;
        v = w / norm;
        if converged {
            break;
        }
    }
    radius
}

/// Correlation between forward-rate increments and the martingale component
/// of the order flow,
/// `rho(df_t, dq~_t')[t,t'] = sum_s (R[t,s]/sigma_A[t]) Y[s] (Omega^{1/2} O^T)[t',s] / sqrt(Omega[t',t'])`.
/// Every entry is bounded by 1 in magnitude (Cauchy–Schwarz).
pub fn price_flow_correlation(
    field: &FieldModel,
    y_vector: &DVector<f64>,
    omega: &DMatrix<f64>,
    rotation: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let n = field.grid.n();
    if y_vector.len() != n || omega.nrows() != n || omega.ncols() != n {
        return Err(ModelError::Dimension {
            expected: n,
            actual: y_vector.len().min(omega.nrows()),
            context: "price_flow_correlation inputs".into(),
        });
    }
    let mut a = scale_rows(&field.response, &field.sigma_a);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] *= y_vector[j];
        }
    }
    let omega_half = psd_sqrt(omega)?;
    let factor = match rotation {
        Some(o) => &omega_half * o.transpose(),
        None => omega_half.clone(),
    };
    let mut b = factor;
    for i in 0..n {
        let d = omega[(i, i)].sqrt();
        if !(d > 0.0) {
            return Err(ModelError::Domain(format!(
                "flow variance must be positive at tenor {}",
                i + 1
            )));
        }
        for j in 0..n {
            b[(i, j)] /= d;
        }
    }
    Ok(a * b.transpose())
}
