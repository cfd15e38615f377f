//! Regime parameters of the string model.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::Result;

/// Limiting regime in which the string operator has a closed form.
///
/// The small-psi limit collapses the line tension `mu` and psychological time
/// `psi` into the single parameter `kappa = mu * psi`; the large-psi limit is
/// handled spectrally through the `D_k` quadrature matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    SmallPsi,
    LargePsi,
}

/// Parameters of the noise field in one of the two tractable regimes.
///
/// `tau` is the relaxation time scale of the field and `delta_t` the
/// coarse-graining window (one day), both in days. The field only has the
/// closed-form daily covariances when `tau < delta_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub regime: Regime,
    /// Stiffness parameter `kappa = mu * psi` (small-psi regime).
    pub kappa: Option<f64>,
    /// Line tension `mu` (large-psi regime).
    pub mu: Option<f64>,
    /// Psychological time `psi`, informational only.
    pub psi: Option<f64>,
    /// Relaxation time scale, in days.
    pub tau: f64,
    /// Coarse-graining window, in days.
    pub delta_t: f64,
}

impl FieldParams {
    /// Small-psi parameters with a one-day window.
    pub fn small_psi(kappa: f64, tau: f64) -> Result<Self> {
        Self::validate(Self {
            regime: Regime::SmallPsi,
            kappa: Some(kappa),
            mu: None,
            psi: None,
            tau,
            delta_t: 1.0,
        })
    }

    /// Large-psi parameters with a one-day window.
    pub fn large_psi(mu: f64, tau: f64) -> Result<Self> {
        Self::validate(Self {
            regime: Regime::LargePsi,
            kappa: None,
            mu: Some(mu),
            psi: None,
            tau,
            delta_t: 1.0,
        })
    }

    /// Validates invariants and returns the parameters unchanged.
    pub fn validate(p: Self) -> Result<Self> {
        if !(p.tau > 0.0) {
            return Err(ModelError::Parameter(format!("tau must be positive, got {}", p.tau)));
        }
        if !(p.delta_t > 0.0) {
            return Err(ModelError::Parameter(format!(
                "delta_t must be positive, got {}",
                p.delta_t
            )));
        }
        if p.tau >= p.delta_t {
            return Err(ModelError::Parameter(format!(
                "tau ({}) must be below the window delta_t ({})",
                p.tau, p.delta_t
            )));
        }
        match p.regime {
            Regime::SmallPsi => {
                let kappa = p
                    .kappa
                    .ok_or_else(|| ModelError::Parameter("small-psi regime needs kappa".into()))?;
                if !(kappa > 0.0) {
                    return Err(ModelError::Parameter(format!(
                        "kappa must be positive, got {kappa}"
                    )));
                }
            }
            Regime::LargePsi => {
                let mu = p
                    .mu
                    .ok_or_else(|| ModelError::Parameter("large-psi regime needs mu".into()))?;
                if !(mu > 0.0) {
                    return Err(ModelError::Parameter(format!("mu must be positive, got {mu}")));
                }
            }
        }
        if let (Some(mu), Some(psi), Some(kappa)) = (p.mu, p.psi, p.kappa) {
            if (kappa - mu * psi).abs() > 1e-12 * kappa.abs().max(1.0) {
                return Err(ModelError::Parameter(format!(
                    "inconsistent parameters: kappa ({kappa}) != mu*psi ({})",
                    mu * psi
                )));
            }
        }
        Ok(p)
    }

    /// `kappa`, panicking outside the small-psi regime.
    pub fn kappa(&self) -> f64 {
        self.kappa.expect("kappa is only defined in the small-psi regime")
    }

    /// `mu`, panicking outside the large-psi regime.
    pub fn mu(&self) -> f64 {
        self.mu.expect("mu is only defined in the large-psi regime")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_kappa() {
        assert!(FieldParams::small_psi(0.0, 0.02).is_err());
        assert!(FieldParams::small_psi(-1.0, 0.02).is_err());
    }

    #[test]
    fn rejects_tau_at_or_above_window() {
        assert!(FieldParams::small_psi(1.3, 1.0).is_err());
        assert!(FieldParams::small_psi(1.3, 2.0).is_err());
        assert!(FieldParams::small_psi(1.3, 0.02).is_ok());
    }

    #[test]
    fn rejects_inconsistent_kappa_mu_psi() {
        let p = FieldParams {
            regime: Regime::SmallPsi,
            kappa: Some(1.0),
            mu: Some(10.0),
            psi: Some(0.2),
            tau: 0.02,
            delta_t: 1.0,
        };
        assert!(FieldParams::validate(p).is_err());
    }
}
