//! Matrix primitives: PSD square roots, the symmetrizing rotation, and
//! condition-checked inversion.

use nalgebra::{DMatrix, DVector};

use crate::error::ModelError;
use crate::Result;

/// Condition-number ceiling for direct inversion.
pub const COND_LIMIT: f64 = 1e12;

/// Symmetry tolerance accepted by [`psd_sqrt`].
pub const SYM_TOL: f64 = 1e-10;

/// Eigenvalue floor accepted by [`psd_sqrt`]; anything in `[-PSD_EIG_TOL, 0)`
/// is clipped to zero.
pub const PSD_EIG_TOL: f64 = 1e-10;

/// Largest relative asymmetry `max |A - A^T| / max |A|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.abs().max().max(1e-300);
    (m - m.transpose()).abs().max() / scale
}

/// Unique symmetric positive semi-definite square root of a symmetric PSD
/// matrix, via eigendecomposition. Eigenvalues in `[-1e-10, 0)` (relative to
/// the largest one) are clipped to zero; anything lower is a domain error.
pub fn psd_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(ModelError::Domain(format!(
            "psd_sqrt needs a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if asymmetry(s) > SYM_TOL {
        return Err(ModelError::Domain(format!(
            "psd_sqrt input asymmetric beyond {SYM_TOL:e} (relative asymmetry {:e})",
            asymmetry(s)
        )));
    }
    let sym = 0.5 * (s + s.transpose());
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut clipped = eig.eigenvalues.clone();
    for v in clipped.iter_mut() {
        if *v < -PSD_EIG_TOL * scale {
            return Err(ModelError::Domain(format!(
                "psd_sqrt input indefinite: eigenvalue {v:e} below -{PSD_EIG_TOL:e} (scale {scale:e})"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    // Round-trip through the eigenbasis can leave ~1 ulp asymmetry; remove it.
    Ok(0.5 * (&root + root.transpose()))
}

/// Inverse by LU with partial pivoting, refusing matrices whose 1-norm
/// condition estimate exceeds [`COND_LIMIT`].
pub fn inverse_checked(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let inv = m.clone().lu().try_inverse().ok_or_else(|| {
        ModelError::Numerical(format!("singular matrix in {context} (LU pivot vanished)"))
    })?;
    let cond = norm_1(m) * norm_1(&inv);
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(ModelError::IllConditioned {
            context: context.to_string(),
            cond,
            limit: COND_LIMIT,
        });
    }
    Ok(inv)
}

/// 1-norm condition estimate `||M||_1 * ||M^-1||_1` without rejecting.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    match m.clone().lu().try_inverse() {
        Some(inv) => norm_1(m) * norm_1(&inv),
        None => f64::INFINITY,
    }
}

fn norm_1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Rotation that makes `M * O * inv(Omega^{1/2})` symmetric positive
/// semi-definite:
///
/// `O = M^-1 (Omega^{-1/2})^T sqrt((Omega^{1/2})^T M M^T Omega^{1/2})`.
///
/// `omega_half` may be any factor with `F F^T = Omega`; the product
/// `M O inv(F)` is the unique PSD solution regardless of the factor choice.
pub fn o_sym(m: &DMatrix<f64>, omega_half: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if !m.is_square() || omega_half.nrows() != n || omega_half.ncols() != n {
        return Err(ModelError::Dimension {
            expected: n,
            actual: omega_half.nrows(),
            context: "o_sym factor shape".into(),
        });
    }
    let m_inv = inverse_checked(m, "o_sym(M)")?;
    let omega_half_inv = inverse_checked(omega_half, "o_sym(Omega^{1/2})")?;
    let inner = omega_half.transpose() * m * m.transpose() * omega_half;
    // `inner` is a congruence of M M^T, symmetric PSD up to round-off.
    let root = psd_sqrt(&(0.5 * (&inner + inner.transpose())))?;
    Ok(m_inv * omega_half_inv.transpose() * root)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut vals: Vec<f64> = (0.5 * (m + m.transpose()))
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    DVector::from_vec(vals)
}
