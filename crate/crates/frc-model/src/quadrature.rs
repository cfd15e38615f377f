//! Gauss–Legendre quadrature and the spectral `D_k` matrices.
//!
//! The large-psi covariances are cosine-basis integrals against powers of the
//! dispersion function `L_d(xi) = 1 + 2 (1 - cos xi) / mu^2` on `[0, pi]`.
//! The integrands are smooth, so a fixed-order Gauss–Legendre rule with an
//! automatic point-doubling convergence check is used.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::grid::TenorGrid;
use crate::Result;

/// Entry-wise change allowed when the node count doubles.
pub const DK_CONVERGENCE_TOL: f64 = 1e-8;

const MAX_DOUBLINGS: usize = 6;

/// Node-count specification for the `D_k` integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Initial Gauss–Legendre node count; doubled until entries settle.
    pub points: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { points: 128 }
    }
}

impl QuadratureSpec {
    pub fn new(points: usize) -> Result<Self> {
        if points < 64 {
            return Err(ModelError::Parameter(format!(
                "quadrature needs at least 64 points, got {points}"
            )));
        }
        Ok(Self { points })
    }
}

/// Gauss–Legendre nodes and weights on an interval `[a, b]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes an `m`-point rule on `[a, b]` by Newton iteration on the
    /// Legendre polynomial, seeded with the Chebyshev angle estimates.
    pub fn new(m: usize, a: f64, b: f64) -> Self {
        assert!(m >= 1, "quadrature rule needs at least one node");
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        // Symmetric rule: solve for the first half, mirror the rest.
        for i in 0..m.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_and_derivative(m, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() <= 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = mid - half * x;
            nodes[m - 1 - i] = mid + half * x;
            weights[i] = half * w;
            weights[m - 1 - i] = half * w;
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over the rule's interval.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Legendre polynomial `P_m(x)` and its derivative by the three-term recurrence.
fn legendre_and_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if m == 0 {
        return (1.0, 0.0);
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Dispersion function of the discrete string operator.
pub fn dispersion(xi: f64, mu: f64) -> f64 {
    1.0 + 2.0 * (1.0 - xi.cos()) / (mu * mu)
}

/// `D_k` matrix at a fixed node count (no convergence check).
fn dk_with_points(k: u32, mu: f64, grid: &TenorGrid, points: usize) -> DMatrix<f64> {
    let rule = GaussLegendre::new(points, 0.0, std::f64::consts::PI);
    let n = grid.n();
    // Precompute cos(xi * theta) at every node for theta = 1..=n.
    let cos_table: Vec<Vec<f64>> = rule
        .nodes()
        .iter()
        .map(|&xi| (1..=n).map(|theta| (xi * theta as f64).cos()).collect())
        .collect();
    let ld_pow: Vec<f64> = rule
        .nodes()
        .iter()
        .map(|&xi| dispersion(xi, mu).powi(k as i32))
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for (node, (cos_row, ld)) in cos_table.iter().zip(&ld_pow).enumerate() {
        let w = rule.weights()[node] * 2.0 / (std::f64::consts::PI * ld);
        for i in 0..n {
            let ci = cos_row[i];
            for j in i..n {
                out[(i, j)] += w * ci * cos_row[j];
            }
        }
    }
    // Fill the strict lower triangle from the upper one; the integrand is
    // symmetric in (theta, theta') so this is exact, not an approximation.
    for i in 0..n {
        for j in 0..i {
            out[(i, j)] = out[(j, i)];
        }
    }
    out
}

/// Computes the spectral matrix `D_k` for `k in {1, 2}`,
/// `(D_k)[t,t'] = (1/pi) * ∫_0^pi 2 cos(xi t) cos(xi t') / L_d(xi)^k dxi`,
/// doubling the node count until no entry moves by more than
/// [`DK_CONVERGENCE_TOL`].
pub fn quad_dk(k: u32, mu: f64, grid: &TenorGrid, spec: &QuadratureSpec) -> Result<DMatrix<f64>> {
    if !(k == 1 || k == 2) {
        return Err(ModelError::Parameter(format!("D_k is defined for k in {{1, 2}}, got {k}")));
    }
    if !(mu > 0.0) {
        return Err(ModelError::Parameter(format!("mu must be positive, got {mu}")));
    }
    let mut points = spec.points.max(64);
    let mut current = dk_with_points(k, mu, grid, points);
    for _ in 0..MAX_DOUBLINGS {
        points *= 2;
        let refined = dk_with_points(k, mu, grid, points);
        let max_change = (&refined - &current).abs().max();
        current = refined;
        if max_change <= DK_CONVERGENCE_TOL {
            return Ok(current);
        }
    }
    Err(ModelError::Numerical(format!(
        "D_{k} quadrature did not converge below {DK_CONVERGENCE_TOL:e} at {points} points"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        // 5-point rule is exact through degree 9.
        let rule = GaussLegendre::new(5, 0.0, 1.0);
        let integral = rule.integrate(|x| x.powi(9));
        assert_relative_eq!(integral, 0.1, epsilon = 1e-14);
        let rule = GaussLegendre::new(64, -2.0, 3.0);
        assert_relative_eq!(rule.integrate(|x| x * x), (27.0 + 8.0) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gl_weights_sum_to_interval_length() {
        let rule = GaussLegendre::new(97, 0.0, std::f64::consts::PI);
        let total: f64 = rule.weights().iter().sum();
        assert_relative_eq!(total, std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn dk_identity_in_the_large_mu_limit() {
        // L_d -> 1, so the integral reduces to cosine orthogonality.
        let grid = TenorGrid::new(5).unwrap();
        let spec = QuadratureSpec::default();
        for k in [1, 2] {
            let d = quad_dk(k, 1e9, &grid, &spec).unwrap();
            let err = (&d - DMatrix::identity(5, 5)).abs().max();
            assert!(err < 1e-10, "D_{k} deviates from identity by {err:e}");
        }
    }

    /// Brute-force trapezoid reference for a single entry.
    fn trapezoid_entry(k: i32, mu: f64, theta: usize, theta_p: usize, points: usize) -> f64 {
        let h = std::f64::consts::PI / points as f64;
        let f = |xi: f64| {
            2.0 * (xi * theta as f64).cos() * (xi * theta_p as f64).cos()
                / dispersion(xi, mu).powi(k)
        };
        let mut sum = 0.5 * (f(0.0) + f(std::f64::consts::PI));
        for i in 1..points {
            sum += f(i as f64 * h);
        }
        sum * h / std::f64::consts::PI
    }

    #[test]
    fn dk_entry_matches_trapezoid_oracle() {
        let grid = TenorGrid::new(3).unwrap();
        let spec = QuadratureSpec::default();
        let d1 = quad_dk(1, 1.0, &grid, &spec).unwrap();
        let oracle = trapezoid_entry(1, 1.0, 1, 1, 1_000_000);
        assert!(
            (d1[(0, 0)] - oracle).abs() < 1e-8,
            "quadrature {} vs trapezoid {}",
            d1[(0, 0)],
            oracle
        );
    }

    #[test]
    fn dk_is_symmetric() {
        let grid = TenorGrid::new(7).unwrap();
        let spec = QuadratureSpec::default();
        for (k, mu) in [(1, 0.7), (2, 0.7), (1, 3.0), (2, 12.0)] {
            let d = quad_dk(k, mu, &grid, &spec).unwrap();
            assert_relative_eq!(d, d.transpose(), epsilon = 1e-14);
        }
    }

    #[test]
    fn dk_rejects_bad_inputs() {
        let grid = TenorGrid::new(3).unwrap();
        let spec = QuadratureSpec::default();
        assert!(quad_dk(3, 1.0, &grid, &spec).is_err());
        assert!(quad_dk(1, 0.0, &grid, &spec).is_err());
        assert!(QuadratureSpec::new(32).is_err());
    }
}
