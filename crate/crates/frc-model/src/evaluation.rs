//! Goodness-of-fit scores: the weighted generalized R-squared, empirical
//! pairwise added accuracy, and its closed-form counterparts for the
//! unconstrained, symmetric and noise-field estimators.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::calibration::RollingEstimates;
use crate::error::ModelError;
use crate::field::{scale_rows, FieldModel};
use crate::impact::{build_lambda, ridged_covariance, ImpactInputs, ImpactKind};
use crate::linalg::{inverse_checked, o_sym, psd_sqrt};
use crate::panel::MarketPanel;
use crate::Result;

/// Residual weighting of the generalized R-squared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `W = diag(sigma_hat^2)^-1`: every tenor relative to its own scale.
    WSigma,
    /// Single-tenor weight (0-based index): only that tenor's error counts.
    WSigmaTheta(usize),
}

/// `1 - sum_k (f - f_hat)^T W_k (f - f_hat) / sum_k f^T W_k f` over the days
/// with defined rolling estimates. Can be negative for predictors worse than
/// zero; errors out when the denominator vanishes.
pub fn generalized_r2(
    pred: &DMatrix<f64>,
    actual: &DMatrix<f64>,
    est: &RollingEstimates,
    weight: Weighting,
) -> Result<f64> {
    if pred.shape() != actual.shape() || pred.nrows() != est.n_days() {
        return Err(ModelError::Dimension {
            expected: est.n_days(),
            actual: pred.nrows(),
            context: "prediction/actual/estimate alignment".into(),
        });
    }
    let n = pred.ncols();
    if let Weighting::WSigmaTheta(theta) = weight {
        if theta >= n {
            return Err(ModelError::Domain(format!("tenor index {theta} out of range")));
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for k in est.valid_from..est.n_days() {
        let cols: &mut dyn Iterator<Item = usize> = match weight {
            Weighting::WSigma => &mut (0..n),
            Weighting::WSigmaTheta(theta) => &mut (theta..theta + 1),
        };
        for j in cols {
            let s2 = est.sigma_hat[(k, j)].powi(2);
            if s2 <= 0.0 || !s2.is_finite() {
                continue;
            }
            let e = actual[(k, j)] - pred[(k, j)];
            num += e * e / s2;
            den += actual[(k, j)] * actual[(k, j)] / s2;
        }
    }
    if den <= 0.0 {
        return Err(ModelError::UndefinedScore(
            "zero weighted variance in the evaluation window".into(),
        ));
    }
    Ok(1.0 - num / den)
}

/// Per-tenor generalized R-squared values (`W_{sigma_theta}` weights).
pub fn r2_per_tenor(
    pred: &DMatrix<f64>,
    actual: &DMatrix<f64>,
    est: &RollingEstimates,
) -> Result<Vec<f64>> {
    (0..pred.ncols())
        .map(|j| {
            generalized_r2(pred, actual, est, Weighting::WSigmaTheta(j)).or_else(|e| match e {
                ModelError::UndefinedScore(_) => Ok(f64::NAN),
                other => Err(other),
            })
        })
        .collect()
}

/// Daily predictions `Lambda_hat(t_k) dq(t_k)` for one estimator kind; rows
/// before the first valid estimate are zero.
pub fn predict_panel(
    panel: &MarketPanel,
    est: &RollingEstimates,
    kind: ImpactKind,
    field: Option<&FieldModel>,
    y_vector: &DVector<f64>,
    y_ratio: f64,
) -> Result<DMatrix<f64>> {
    let n = panel.n_tenors();
    if panel.len() != est.n_days() {
        return Err(ModelError::Dimension {
            expected: est.n_days(),
            actual: panel.len(),
            context: "panel vs estimates".into(),
        });
    }
    let mut pred = DMatrix::zeros(panel.len(), n);
    for k in est.valid_from..est.n_days() {
        let day = est.day(k)?;
        let inputs = ImpactInputs {
            sigma: day.sigma_hat.clone(),
            omega: est.omega_hat.row(k).transpose(),
            omega_corr: est.rho_q.clone(),
            y_vector: y_vector.clone(),
            y_ratio,
        };
        let model = build_lambda(kind, &inputs, field, &day)?;
        let p = &model.lambda * panel.delta_q.row(k).transpose();
        for j in 0..n {
            pred[(k, j)] = p[j];
        }
    }
    Ok(pred)
}

/// Summary record of one model evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub model_kind: String,
    /// `"in"` or `"out"` of sample.
    pub sample: String,
    /// Period label, e.g. `"2015-2017"`.
    pub period: String,
    pub r2_w_sigma: f64,
    pub r2_per_tenor: Vec<f64>,
}

/// Two-asset model used in the pairwise added-accuracy computation.
#[derive(Debug, Clone)]
pub enum PairwiseModel {
    /// Unconstrained regression (unit ratio); the benchmark of Eq.-40 form.
    Ml,
    Kyle { y_ratio: f64 },
    Bbdlw { y_vector: DVector<f64> },
    Bbdls { y_vector: DVector<f64> },
}

impl PairwiseModel {
    fn kind(&self) -> ImpactKind {
        match self {
            PairwiseModel::Ml => ImpactKind::Ml,
            PairwiseModel::Kyle { .. } => ImpactKind::Kyle,
            PairwiseModel::Bbdlw { .. } => ImpactKind::Bbdlw,
            PairwiseModel::Bbdls { .. } => ImpactKind::Bbdls,
        }
    }

    pub fn label(&self) -> &'static str {
        self.kind().as_str()
    }
}

/// Empirical added accuracy of the flow at `flow_tenor` for the price at
/// `price_tenor` (0-based): the model is fitted on the two-asset restriction
/// and compared with the univariate-regression benchmark under the
/// `W_{sigma_theta}` weight of the price tenor. Degenerate flows yield NaN.
pub fn pairwise_delta_r2_empirical(
    panel: &MarketPanel,
    est: &RollingEstimates,
    price_tenor: usize,
    flow_tenor: usize,
    model: &PairwiseModel,
    field: Option<&FieldModel>,
) -> Result<f64> {
    let n = panel.n_tenors();
    if price_tenor >= n || flow_tenor >= n {
        return Err(ModelError::Domain(format!(
            "tenor pair ({price_tenor}, {flow_tenor}) outside 0..{n}"
        )));
    }
    if price_tenor == flow_tenor {
        return Ok(0.0);
    }
    let pair = [price_tenor, flow_tenor];
    let sub_panel = panel.select_tenors(&pair);
    let sub_est = est.select_tenors(&pair);
    let sub_field = field.map(|f| f.restrict(&pair)).transpose()?;
    let (y_vector, y_ratio) = match model {
        PairwiseModel::Ml => (DVector::from_element(2, 1.0), 1.0),
        PairwiseModel::Kyle { y_ratio } => (DVector::from_element(2, 1.0), *y_ratio),
        PairwiseModel::Bbdlw { y_vector } | PairwiseModel::Bbdls { y_vector } => {
            (DVector::from_vec(vec![y_vector[price_tenor], y_vector[flow_tenor]]), 1.0)
        }
    };
    let pred_model = match predict_panel(
        &sub_panel,
        &sub_est,
        model.kind(),
        sub_field.as_ref(),
        &y_vector,
        y_ratio,
    ) {
        Ok(p) => p,
        Err(ModelError::IllConditioned { .. }) | Err(ModelError::Numerical(_)) => {
            return Ok(f64::NAN)
        }
        Err(e) => return Err(e),
    };
    let pred_diag = predict_panel(
        &sub_panel,
        &sub_est,
        ImpactKind::Diag,
        None,
        &DVector::from_element(2, 1.0),
        1.0,
    )?;
    let score = |pred: &DMatrix<f64>| {
        generalized_r2(pred, &sub_panel.delta_f, &sub_est, Weighting::WSigmaTheta(0))
    };
    match (score(&pred_model), score(&pred_diag)) {
        (Ok(a), Ok(b)) => Ok(a - b),
        (Err(ModelError::UndefinedScore(_)), _) | (_, Err(ModelError::UndefinedScore(_))) => {
            Ok(f64::NAN)
        }
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

/// Pairwise added-accuracy matrix with entry `(t, t') = dR2_{t' -> t}`;
/// the diagonal is zero by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDeltaR2 {
    pub matrix: DMatrix<f64>,
    pub mode: String,
}

impl PairwiseDeltaR2 {
    pub fn new(mut matrix: DMatrix<f64>, mode: impl Into<String>) -> Self {
        for i in 0..matrix.nrows().min(matrix.ncols()) {
            matrix[(i, i)] = 0.0;
        }
        Self { matrix, mode: mode.into() }
    }
}

/// Full empirical pairwise matrix for one model.
pub fn pairwise_delta_r2_matrix(
    panel: &MarketPanel,
    est: &RollingEstimates,
    model: &PairwiseModel,
    field: Option<&FieldModel>,
) -> Result<PairwiseDeltaR2> {
    let n = panel.n_tenors();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[(i, j)] = pairwise_delta_r2_empirical(panel, est, i, j, model, field)?;
            }
        }
    }
    Ok(PairwiseDeltaR2::new(out, format!("empirical-{}", model.label())))
}

/// Closed-form added accuracy of the second flow in a two-asset
/// unconstrained regression:
/// `(rho(f1,q2) - rho(q1,q2) rho(f1,q1))^2 / (1 - rho^2(q1,q2))`.
pub fn delta_r2_ml_theory(rho_f1q1: f64, rho_f1q2: f64, rho_q1q2: f64) -> Result<f64> {
    for (name, v) in [("rho_f1q1", rho_f1q1), ("rho_f1q2", rho_f1q2)] {
        if v.abs() >= 1.0 {
            return Err(ModelError::Domain(format!("{name} must lie in (-1, 1), got {v}")));
        }
    }
    if rho_q1q2.abs() >= 1.0 {
        return Err(ModelError::Numerical(format!(
            "flow correlation {rho_q1q2} makes the two-asset regression singular"
        )));
    }
    let excess = rho_f1q2 - rho_q1q2 * rho_f1q1;
    Ok(excess * excess / (1.0 - rho_q1q2 * rho_q1q2))
}

/// Population added accuracy of cross-sectional information in a two-asset
/// symmetric (Kyle) world.
///
/// Prices and flows have volatilities `sqrt(liquidity_i)` and the given
/// correlations; the price-flow coupling is the structural one anchored at
/// the explained asset, so the own correlation `rho(f1, q1)` equals the
/// Y-ratio exactly. The added accuracy of the second flow is then the
/// two-asset regression gain on the implied correlations, which the
/// symmetric structure keeps at zero for every liquidity pair.
pub fn delta_r2_kyle_numeric(
    liquidity_1: f64,
    liquidity_2: f64,
    rho_q: f64,
    rho_f: f64,
    y: f64,
) -> Result<f64> {
    if !(liquidity_1 > 0.0) || !(liquidity_2 > 0.0) {
        return Err(ModelError::Domain("liquidities must be positive".into()));
    }
    if rho_q.abs() >= 1.0 || rho_f.abs() >= 1.0 {
        return Err(ModelError::Domain(
            "correlations must lie in (-1, 1) for a positive definite 2x2 covariance".into(),
        ));
    }
    if !(y > 0.0 && y <= 1.0) {
        return Err(ModelError::Domain(format!("y must lie in (0, 1], got {y}")));
    }
    let s = DVector::from_vec(vec![liquidity_1.sqrt(), liquidity_2.sqrt()]);
    let corr = |rho: f64| DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
    let d = DMatrix::from_diagonal(&s);
    let sigma = &d * corr(rho_f) * &d;
    let omega = &d * corr(rho_q) * &d;

    // The symmetric-PSD impact matrix itself, as a consistency check of the
    // construction: Lambda Omega Lambda^T must equal y^2 Sigma.
    let omega_half = psd_sqrt(&omega)?;
    let o = o_sym(&psd_sqrt(&sigma)?, &omega_half)?;
    let lambda = y * psd_sqrt(&sigma)? * o * inverse_checked(&omega_half, "kyle 2x2 flow root")?;
    let riccati = &lambda * &omega * lambda.transpose() - y * y * &sigma;
    if riccati.abs().max() > 1e-8 * sigma.abs().max() {
        return Err(ModelError::Numerical(format!(
            "2x2 impact failed the consistency identity by {:e}",
            riccati.abs().max()
        )));
    }

    // Structural coupling anchored at asset 1: C_fq = y L_Sigma L_Omega^T.
    let l_sigma = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| ModelError::Domain("implied 2x2 price covariance not PSD".into()))?
        .l();
    let l_omega = omega
        .clone()
        .cholesky()
        .ok_or_else(|| ModelError::Domain("implied 2x2 flow covariance not PSD".into()))?
        .l();
    let c_fq = y * l_sigma * l_omega.transpose();
    let rho_f1q1 = c_fq[(0, 0)] / (s[0] * s[0]);
    let rho_f1q2 = c_fq[(0, 1)] / (s[0] * s[1]);
    delta_r2_ml_theory(rho_f1q1, rho_f1q2, rho_q)
}

/// Theoretical pairwise added-accuracy mode for the noise-field models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbdlMode {
    /// Regressing the rates on the whitened noise: entries
    /// `(diag(sigma_A)^-1 R)^2[t,t'] Y[t']^2`.
    EtaResponse,
    /// Regressing the rates on the raw flows through the symmetric 2x2
    /// restriction of the normalized impact.
    FlowResponse,
}

/// Closed-form pairwise added accuracy of the noise-field models. The flow
/// mode needs the equal-time flow covariance; near-singular 2x2 restrictions
/// are ridge-regularized.
pub fn delta_r2_bbdl(
    field: &FieldModel,
    y_vector: &DVector<f64>,
    mode: BbdlMode,
    omega: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let n = field.grid.n();
    if y_vector.len() != n {
        return Err(ModelError::Dimension {
            expected: n,
            actual: y_vector.len(),
            context: "Y vector".into(),
        });
    }
    let a = scale_rows(&field.response, &field.sigma_a);
    match mode {
        BbdlMode::EtaResponse => {
            let mut out = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] = (a[(i, j)] * y_vector[j]).powi(2);
                }
            }
            Ok(out)
        }
        BbdlMode::FlowResponse => {
            let omega = omega.ok_or_else(|| {
                ModelError::Parameter("flow-response mode needs the flow covariance".into())
            })?;
            if omega.nrows() != n || omega.ncols() != n {
                return Err(ModelError::Dimension {
                    expected: n,
                    actual: omega.nrows(),
                    context: "flow covariance".into(),
                });
            }
            let mut out = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    out[(i, j)] = flow_response_entry(&a, y_vector, omega, i, j)?;
                }
            }
            Ok(out)
        }
    }
}

/// One entry of the flow-response matrix: the 2x2 normalized symmetric
/// impact on the `{price, flow}` sub-grid, combined per
/// `l_12^2 w_2^2 + 2 rho_q l_11 l_12 w_1 w_2`.
fn flow_response_entry(
    a: &DMatrix<f64>,
    y_vector: &DVector<f64>,
    omega: &DMatrix<f64>,
    price: usize,
    flow: usize,
) -> Result<f64> {
    let pair = [price, flow];
    let (omega2, _) = ridged_covariance(
        &omega.select_rows(pair.iter()).select_columns(pair.iter()),
        2,
    );
    let w1 = omega2[(0, 0)].sqrt();
    let w2 = omega2[(1, 1)].sqrt();
    if !(w1 > 0.0 && w2 > 0.0) {
        return Ok(0.0);
    }
    let rho_q = omega2[(0, 1)] / (w1 * w2);
    let active: Vec<usize> = (0..2).filter(|&k| y_vector[pair[k]] > 0.0).collect();
    let mut lambda = DMatrix::zeros(2, 2);
    if !active.is_empty() {
        let mut m_sub = DMatrix::zeros(active.len(), active.len());
        for (ri, &i) in active.iter().enumerate() {
            for (ci, &j) in active.iter().enumerate() {
                m_sub[(ri, ci)] = a[(pair[i], pair[j])] * y_vector[pair[j]];
            }
        }
        let omega_sub = omega2.select_rows(active.iter()).select_columns(active.iter());
        let half = psd_sqrt(&omega_sub)?;
        let o = o_sym(&m_sub, &half)?;
        let lam_sub = m_sub * o * inverse_checked(&half, "flow-response 2x2 root")?;
        for (ri, &i) in active.iter().enumerate() {
            for (ci, &j) in active.iter().enumerate() {
                lambda[(i, j)] = lam_sub[(ri, ci)];
            }
        }
    }
    Ok(lambda[(0, 1)].powi(2) * w2 * w2
        + 2.0 * rho_q * lambda[(0, 0)] * lambda[(0, 1)] * w1 * w2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::rolling_estimates;
    use crate::field::build_field_model;
    use crate::grid::TenorGrid;
    use crate::panel::{business_days, MarketPanel};
    use crate::params::FieldParams;
    use crate::quadrature::QuadratureSpec;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn field(kappa: f64, n: usize) -> FieldModel {
        let grid = TenorGrid::new(n).unwrap();
        let params = FieldParams::small_psi(kappa, 0.02).unwrap();
        build_field_model(&params, &grid, &QuadratureSpec::default()).unwrap()
    }

    fn gaussian_panel(cov: &DMatrix<f64>, days: usize, n_f: usize, seed: u64) -> MarketPanel {
        // Columns 0..n_f are rates, the rest flows, drawn jointly normal.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let root = psd_sqrt(cov).unwrap();
        let total = cov.nrows();
        let mut f = DMatrix::zeros(days, n_f);
        let mut q = DMatrix::zeros(days, total - n_f);
        for t in 0..days {
            let z = DVector::from_fn(total, |_, _| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            });
            let x = &root * z;
            for j in 0..n_f {
                f[(t, j)] = x[j];
            }
            for j in n_f..total {
                q[(t, j - n_f)] = x[j];
            }
        }
        let dates = business_days(NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(), days);
        MarketPanel::new(dates, f, q).unwrap()
    }

    #[test]
    fn r2_of_perfect_and_null_predictions() {
        let days = 80;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = DMatrix::from_fn(days, 2, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let q = f.clone();
        let dates = business_days(NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(), days);
        let panel = MarketPanel::new(dates, f.clone(), q).unwrap();
        let est = rolling_estimates(&panel).unwrap();
        assert_relative_eq!(
            generalized_r2(&f, &panel.delta_f, &est, Weighting::WSigma).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let zero = DMatrix::zeros(days, 2);
        assert_relative_eq!(
            generalized_r2(&zero, &panel.delta_f, &est, Weighting::WSigma).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn r2_recovers_known_signal_share() {
        let days = 2500;
        let s2: f64 = 0.37;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut signal = DMatrix::zeros(days, 2);
        let mut actual = DMatrix::zeros(days, 2);
        for t in 0..days {
            for j in 0..2 {
                let s: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                let e: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                signal[(t, j)] = s2.sqrt() * s;
                actual[(t, j)] = signal[(t, j)] + (1.0 - s2).sqrt() * e;
            }
        }
        let dates = business_days(NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(), days);
        let panel = MarketPanel::new(dates, actual.clone(), signal.clone()).unwrap();
        let est = rolling_estimates(&panel).unwrap();
        let r2 = generalized_r2(&signal, &actual, &est, Weighting::WSigma).unwrap();
        assert!((r2 - s2).abs() < 0.02, "R2 {r2} vs signal share {s2}");
    }

    #[test]
    fn r2_is_invariant_under_joint_rescaling() {
        let days = 120;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = DMatrix::from_fn(days, 2, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let pred = 0.5 * &f;
        let dates = business_days(NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(), days);
        let panel = MarketPanel::new(dates.clone(), f.clone(), f.clone()).unwrap();
        let est = rolling_estimates(&panel).unwrap();
        let r2 = generalized_r2(&pred, &f, &est, Weighting::WSigma).unwrap();
        let c = 42.0;
        let panel_scaled = MarketPanel::new(dates, c * &f, f.clone()).unwrap();
        let est_scaled = rolling_estimates(&panel_scaled).unwrap();
        let r2_scaled =
            generalized_r2(&(c * &pred), &(c * &f), &est_scaled, Weighting::WSigma).unwrap();
        assert_relative_eq!(r2, r2_scaled, epsilon = 1e-12);
    }

    #[test]
    fn ml_theory_hand_values() {
        assert_relative_eq!(delta_r2_ml_theory(0.7, 0.0, 0.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(delta_r2_ml_theory(0.5, 0.3, 0.0).unwrap(), 0.09, epsilon = 1e-15);
        assert_relative_eq!(
            delta_r2_ml_theory(0.4, 0.3, 0.5).unwrap(),
            0.01 / 0.75,
            epsilon = 1e-15
        );
        assert!(delta_r2_ml_theory(0.4, 0.3, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn ml_theory_is_nonnegative(
            a in -0.95f64..0.95,
            b in -0.95f64..0.95,
            r in -0.95f64..0.95,
        ) {
            let v = delta_r2_ml_theory(a, b, r).unwrap();
            prop_assert!(v >= 0.0);
            // Zero exactly on the no-excess-correlation manifold.
            let z = delta_r2_ml_theory(a, r * a, r).unwrap();
            prop_assert!(z <= 1e-25);
        }
    }

    #[test]
    fn kyle_numeric_is_zero_for_decoupled_assets() {
        let v = delta_r2_kyle_numeric(2.0, 0.5, 0.0, 0.0, 0.6).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn kyle_numeric_is_flat_over_the_liquidity_grid() {
        let mut max = 0.0_f64;
        for i in 0..10 {
            for j in 0..10 {
                let l1 = 10f64.powf(-1.0 + 2.0 * i as f64 / 9.0);
                let l2 = 10f64.powf(-1.0 + 2.0 * j as f64 / 9.0);
                // y = rho(f1, q1) holds exactly in the anchored construction,
                // so any admissible value represents the claim.
                let v = delta_r2_kyle_numeric(l1, l2, 0.5, 0.75, 0.75).unwrap();
                max = max.max(v.abs());
            }
        }
        assert!(max <= 0.01, "Kyle added accuracy should be flat, got max {max:e}");
    }

    #[test]
    fn kyle_numeric_rejects_degenerate_correlations() {
        assert!(delta_r2_kyle_numeric(1.0, 1.0, 1.0, 0.5, 0.5).is_err());
        assert!(delta_r2_kyle_numeric(0.0, 1.0, 0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn bbdl_eta_mode_limits() {
        let n = 4;
        let fld = field(1e9, n);
        let y1 = DVector::from_element(n, 1.0);
        let m = delta_r2_bbdl(&fld, &y1, BbdlMode::EtaResponse, None).unwrap();
        assert_relative_eq!(m, DMatrix::identity(n, n), epsilon = 1e-12);
        let y0 = DVector::zeros(n);
        let z = delta_r2_bbdl(&fld, &y0, BbdlMode::EtaResponse, None).unwrap();
        assert_eq!(z, DMatrix::zeros(n, n));
    }

    #[test]
    fn bbdl_eta_rows_sum_to_explained_share() {
        // With Y = 1 the row sums equal one exactly in the small-psi regime:
        // C = R R^T makes each row of diag(sigma_A)^-1 R a unit vector.
        let fld = field(1.3, 12);
        let y = DVector::from_element(12, 1.0);
        let m = delta_r2_bbdl(&fld, &y, BbdlMode::EtaResponse, None).unwrap();
        for i in 0..12 {
            let row: f64 = (0..12).map(|j| m[(i, j)]).sum();
            assert!((row - 1.0).abs() < 1e-10, "row {i} sums to {row}");
            assert!(row <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn bbdl_flow_mode_shows_vertical_stripes() {
        let n = 8;
        let fld = field(1.3, n);
        let y = DVector::from_fn(n, |i, _| 0.9 - 0.8 * i as f64 / (n - 1) as f64);
        let omega = DMatrix::identity(n, n);
        let m = delta_r2_bbdl(&fld, &y, BbdlMode::FlowResponse, Some(&omega)).unwrap();
        // Column magnitude tracks the explanatory asset's loading.
        let col_mean = |j: usize| (0..n).filter(|&i| i != j).map(|i| m[(i, j)]).sum::<f64>();
        for j in 1..n {
            assert!(
                col_mean(j) <= col_mean(j - 1) + 1e-9,
                "columns should decay with decreasing Y: {} vs {}",
                col_mean(j),
                col_mean(j - 1)
            );
        }
        // Zeroing a tenor's loading empties its column.
        let mut y2 = y.clone();
        y2[3] = 0.0;
        let m2 = delta_r2_bbdl(&fld, &y2, BbdlMode::FlowResponse, Some(&omega)).unwrap();
        for i in 0..n {
            assert_eq!(m2[(i, 3)], 0.0);
        }
    }

    /// Joint covariance of (f1, f2, q1, q2) from pairwise correlations.
    fn two_asset_cov(rho_f1q1: f64, rho_f1q2: f64, rho_q: f64) -> DMatrix<f64> {
        let mut c = DMatrix::identity(4, 4);
        c[(0, 2)] = rho_f1q1;
        c[(2, 0)] = rho_f1q1;
        c[(0, 3)] = rho_f1q2;
        c[(3, 0)] = rho_f1q2;
        c[(2, 3)] = rho_q;
        c[(3, 2)] = rho_q;
        c
    }

    #[test]
    fn pairwise_empirical_matches_the_closed_form() {
        let days = 6000;
        let (r11, r12, rq) = (0.0, 0.3, 0.0);
        let panel = gaussian_panel(&two_asset_cov(r11, r12, rq), days, 2, 7);
        let est = rolling_estimates(&panel).unwrap();
        let dr2 =
            pairwise_delta_r2_empirical(&panel, &est, 0, 1, &PairwiseModel::Ml, None).unwrap();
        let theory = delta_r2_ml_theory(r11, r12, rq).unwrap();
        assert!(
            (dr2 - theory).abs() < 0.02,
            "empirical {dr2:.4} vs closed form {theory:.4}"
        );
    }

    #[test]
    fn pairwise_with_independent_flow_is_noise_level() {
        let days = 6000;
        let panel = gaussian_panel(&two_asset_cov(0.4, 0.0, 0.0), days, 2, 9);
        let est = rolling_estimates(&panel).unwrap();
        let dr2 =
            pairwise_delta_r2_empirical(&panel, &est, 0, 1, &PairwiseModel::Ml, None).unwrap();
        assert!(dr2.abs() < 0.01, "independent flow added {dr2:.4}");
    }

    #[test]
    fn empirical_pairwise_matrix_shows_vertical_stripes() {
        // Columns of the added-accuracy matrix track the explanatory
        // tenor's loading: a decreasing Y ramp orders the column means.
        use crate::simulation::{gen_synthetic_panel, SimConfig};
        let n = 20;
        let grid = TenorGrid::new(n).unwrap();
        let params = FieldParams::small_psi(1.3, 0.02).unwrap();
        let mut cfg = SimConfig::new(params, grid, 77, 1500);
        cfg.y_vector = DVector::from_fn(n, |i, _| 0.9 - 0.7 * i as f64 / (n - 1) as f64);
        let panel = gen_synthetic_panel(&cfg).unwrap().panel.unwrap();
        let est = rolling_estimates(&panel).unwrap();
        let m = pairwise_delta_r2_matrix(&panel, &est, &PairwiseModel::Ml, None).unwrap();
        let col_mean = |j: usize| -> f64 {
            (0..n).filter(|&i| i != j).map(|i| m.matrix[(i, j)]).sum::<f64>() / (n - 1) as f64
        };
        let first: f64 = (0..n / 2).map(col_mean).sum();
        let last: f64 = (n / 2..n).map(col_mean).sum();
        assert!(
            first > 2.0 * last,
            "high-Y columns should dominate: first half {first:.4}, second half {last:.4}"
        );
    }

    #[test]
    fn r2_with_zero_actual_is_undefined() {
        let days = 60;
        let f = DMatrix::zeros(days, 2);
        let mut q = DMatrix::zeros(days, 2);
        for t in 0..days {
            q[(t, 0)] = (t as f64).sin();
            q[(t, 1)] = (t as f64).cos();
        }
        let dates = business_days(NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(), days);
        let panel = MarketPanel::new(dates, f.clone(), q).unwrap();
        let est = rolling_estimates(&panel).unwrap();
        assert!(matches!(
            generalized_r2(&f, &panel.delta_f, &est, Weighting::WSigma),
            Err(crate::error::ModelError::UndefinedScore(_))
        ));
    }

    #[test]
    fn pairwise_diagonal_is_zero_by_convention() {
        let days = 100;
        let panel = gaussian_panel(&two_asset_cov(0.2, 0.1, 0.3), days, 2, 11);
        let est = rolling_estimates(&panel).unwrap();
        let v = pairwise_delta_r2_empirical(&panel, &est, 1, 1, &PairwiseModel::Ml, None).unwrap();
        assert_eq!(v, 0.0);
        let m = pairwise_delta_r2_matrix(&panel, &est, &PairwiseModel::Ml, None).unwrap();
        assert_eq!(m.matrix[(0, 0)], 0.0);
        assert_eq!(m.matrix[(1, 1)], 0.0);
    }
}
