//! Discrete string operator and the closed-form model matrices.
//!
//! In the small-psi regime the operator `M` is tridiagonal in the tenor index
//! and the daily-integrated field has correlator `C = M^-1 J^2 M^-T` and
//! response `R = M^-1 J`, where `J` is the boundary matrix (diagonal, first
//! entry 2). In the large-psi regime the same quantities are the spectral
//! integrals `D_2` and `D_1`.

use nalgebra::{DMatrix, DVector};

use crate::error::ModelError;
use crate::grid::TenorGrid;
use crate::linalg::{condition_estimate, inverse_checked, symmetric_eigenvalues};
use crate::params::{FieldParams, Regime};
use crate::quadrature::{quad_dk, QuadratureSpec};
use crate::Result;

/// Boundary matrix `J`: diagonal with first entry 2, all others 1.
///
/// The factor 2 carries the reflecting boundary at the shortest tenor; the
/// row that would couple to tenor 0 is truncated in [`build_m`] instead.
pub fn j_matrix(grid: &TenorGrid) -> DMatrix<f64> {
    let mut j = DMatrix::identity(grid.n(), grid.n());
    j[(0, 0)] = 2.0;
    j
}

/// Small-psi string operator on the tenor grid.
///
/// Row `theta` (1-based tenor value) has
/// `M[t,t] = 1 + 2 t^2 / kappa^2`,
/// `M[t,t+1] = -t/kappa^2 - t^2/kappa^2`,
/// `M[t,t-1] =  t/kappa^2 - t^2/kappa^2`,
/// and zeros elsewhere; entries referencing tenor 0 or `n+1` are truncated.
pub fn build_m(params: &FieldParams, grid: &TenorGrid) -> Result<DMatrix<f64>> {
    if params.regime != Regime::SmallPsi {
        return Err(ModelError::Parameter(
            "the operator M has a closed form only in the small-psi regime".into(),
        ));
    }
    let kappa = params.kappa();
    if !(kappa > 0.0) {
        return Err(ModelError::Parameter(format!("kappa must be positive, got {kappa}")));
    }
    let n = grid.n();
    let k2 = kappa * kappa;
    let mut m = DMatrix::zeros(n, n);
    for (i, theta) in grid.tenors().enumerate() {
        let t = theta as f64;
        m[(i, i)] = 1.0 + 2.0 * t * t / k2;
        if i + 1 < n {
            m[(i, i + 1)] = -t / k2 - t * t / k2;
        }
        if i > 0 {
            m[(i, i - 1)] = t / k2 - t * t / k2;
        }
    }
    Ok(m)
}

/// Eigenvalues of the tridiagonal operator `M`, ascending.
///
/// `M` is not symmetric, but the products of paired off-diagonal entries are
/// positive, so a diagonal similarity transform makes it symmetric with the
/// same (real) spectrum.
pub fn m_eigenvalues(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = m.nrows();
    let mut sym = DMatrix::zeros(n, n);
    for i in 0..n {
        sym[(i, i)] = m[(i, i)];
    }
    for i in 0..n - 1 {
        let prod = m[(i, i + 1)] * m[(i + 1, i)];
        if prod < 0.0 {
            return Err(ModelError::Numerical(
                "off-diagonal product negative; operator not similar to symmetric".into(),
            ));
        }
        let off = m[(i, i + 1)].signum() * prod.sqrt();
        sym[(i, i + 1)] = off;
        sym[(i + 1, i)] = off;
    }
    Ok(symmetric_eigenvalues(&sym))
}

/// Closed-form model matrices for one parameter set on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    pub grid: TenorGrid,
    pub params: FieldParams,
    /// String operator `M` (small-psi) or `None` in the large-psi regime.
    pub m_matrix: Option<DMatrix<f64>>,
    /// Boundary matrix `J`.
    pub j_matrix: DMatrix<f64>,
    /// Correlator `C` of the daily-integrated field.
    pub correlator: DMatrix<f64>,
    /// Response `R` of the daily-integrated field to the integrated noise.
    pub response: DMatrix<f64>,
    /// Per-tenor volatility `sigma_A[t] = sqrt(C[t,t])`.
    pub sigma_a: DVector<f64>,
    /// Model-implied equal-time price correlation matrix.
    pub price_corr: DMatrix<f64>,
}

impl FieldModel {
    /// `diag(sigma_A)^-1 R`, the correlation between the integrated field and
    /// the integrated generating noise (Cauchy–Schwarz bounds every entry in
    /// `[-1, 1]`).
    pub fn noise_response_correlation(&self) -> DMatrix<f64> {
        scale_rows(&self.response, &self.sigma_a)
    }

    /// Sub-grid view keeping only the given tenor indices (0-based). Used by
    /// the two-asset restrictions of the pairwise diagnostics; the matrices
    /// are restrictions of the full-grid model, not a re-derivation on a
    /// smaller grid.
    pub fn restrict(&self, idx: &[usize]) -> Result<FieldModel> {
        let grid = TenorGrid::new(idx.len())?;
        Ok(FieldModel {
            grid,
            params: self.params,
            m_matrix: None,
            j_matrix: self.j_matrix.select_rows(idx.iter()).select_columns(idx.iter()),
            correlator: self.correlator.select_rows(idx.iter()).select_columns(idx.iter()),
            response: self.response.select_rows(idx.iter()).select_columns(idx.iter()),
            sigma_a: self.sigma_a.select_rows(idx.iter()),
            price_corr: self.price_corr.select_rows(idx.iter()).select_columns(idx.iter()),
        })
    }
}

/// Divides each row `i` of `m` by `scale[i]`.
pub(crate) fn scale_rows(m: &DMatrix<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] /= scale[i];
        }
    }
    out
}

/// Builds every closed-form matrix for the given regime.
///
/// Small-psi: `C = M^-1 J^2 M^-T`, `R = M^-1 J`. Large-psi: `C = D_2`,
/// `R = D_1`. In both regimes `sigma_A = sqrt(diag(C))` and the price
/// correlation is `diag(sigma_A)^-1 C diag(sigma_A)^-1`.
pub fn build_field_model(
    params: &FieldParams,
    grid: &TenorGrid,
    spec: &QuadratureSpec,
) -> Result<FieldModel> {
    let j = j_matrix(grid);
    let (m_matrix, correlator, response) = match params.regime {
        Regime::SmallPsi => {
            let m = build_m(params, grid)?;
            let m_inv = inverse_checked(&m, "field operator M").map_err(|e| match e {
                ModelError::IllConditioned { cond, limit, .. } => ModelError::IllConditioned {
                    context: format!("field operator M at kappa={}", params.kappa()),
                    cond,
                    limit,
                },
                other => other,
            })?;
            let r = &m_inv * &j;
            // C = (M^-1 J)(M^-1 J)^T, computed from R so it is PSD by construction.
            let c = &r * r.transpose();
            (Some(m), c, r)
        }
        Regime::LargePsi => {
            let mu = params.mu();
            let c = quad_dk(2, mu, grid, spec)?;
            let r = quad_dk(1, mu, grid, spec)?;
            (None, c, r)
        }
    };
    let n = grid.n();
    let mut sigma_a = DVector::zeros(n);
    for i in 0..n {
        let v = correlator[(i, i)];
        if !(v > 0.0) {
            return Err(ModelError::Numerical(format!(
                "correlator diagonal must be positive, got {v} at tenor {}",
                i + 1
            )));
        }
        sigma_a[i] = v.sqrt();
    }
    let mut price_corr = correlator.clone();
    for i in 0..n {
        for jx in 0..n {
            price_corr[(i, jx)] /= sigma_a[i] * sigma_a[jx];
        }
    }
    Ok(FieldModel {
        grid: *grid,
        params: *params,
        m_matrix,
        j_matrix: j,
        correlator,
        response,
        sigma_a,
        price_corr,
    })
}

/// Model price correlation for a small-psi `kappa` alone (calibration path;
/// avoids the quadrature machinery entirely).
pub fn price_corr_small_psi(kappa: f64, grid: &TenorGrid) -> Result<DMatrix<f64>> {
    let params = FieldParams::small_psi(kappa, 0.01)?;
    let m = build_m(&params, grid)?;
    let m_inv = m.clone().lu().try_inverse().ok_or_else(|| {
        ModelError::Numerical(format!("singular operator M at kappa={kappa} (condition {:e})", condition_estimate(&m)))
    })?;
    let r = m_inv * j_matrix(grid);
    let c = &r * r.transpose();
    let n = grid.n();
    let mut corr = c.clone();
    for i in 0..n {
        for j in 0..n {
            corr[(i, j)] /= (c[(i, i)] * c[(j, j)]).sqrt();
        }
    }
    Ok(corr)
}

/// Correlation matrix between the integrated field and the integrated noise.
pub fn noise_response_correlation(model: &FieldModel) -> DMatrix<f64> {
    model.noise_response_correlation()
}
