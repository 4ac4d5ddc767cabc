//! Systemic risk aggregation and stress-aware covariance estimation.
//!
//! Two halves share this module. The first turns per-agent behavior into a
//! trust-weighted systemic risk index: each agent's panic, trade size, and
//! estimated peg impact combine into a risk state, and states aggregate
//! under trust weights so that distrusted agents cannot steer the index.
//! The second estimates an asset covariance from stressed simulation
//! returns and blends it with a historical covariance, with the blend
//! coefficient driven by the risk index.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentRecord;

/// Errors raised by risk aggregation and covariance estimation.
#[derive(Debug, Error)]
pub enum RiskError {
    #[error("{left} has length {left_len} but {right} has length {right_len}")]
    LengthMismatch {
        left: &'static str,
        left_len: usize,
        right: &'static str,
        right_len: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("total trust mass is zero; aggregate risk undefined")]
    ZeroTrustMass,
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrices have mismatched dimensions: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("blend coefficient {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] std::num::ParseFloatError),
}

/// Constants for the per-agent risk state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskParams {
    /// Peg deviation scale: an estimated single-agent peg move of this size
    /// saturates the impact term.
    pub epsilon: f64,
    /// Trade size that saturates the size term.
    pub max_quantity: f64,
    /// Price impact coefficient matching the market's flow response.
    pub impact_coeff: f64,
}

impl Default for RiskParams {
    fn default() -> Self {
        RiskParams {
            epsilon: 0.01,
            max_quantity: 2.5e4,
            impact_coeff: 0.5,
        }
    }
}

impl RiskParams {
    pub fn validate(&self) -> Result<(), RiskError> {
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("max_quantity", self.max_quantity),
            ("impact_coeff", self.impact_coeff),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(RiskError::InvalidParameter(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Risk state of one agent over a window: the mean over records of
/// (panic + size term + impact term) / 3, each term in [0, 1].
///
/// The impact term estimates the peg move this agent's trade alone would
/// cause against pool liquidity `liquidity`; buys (negative quantity)
/// stabilize and contribute zero.
pub fn agent_risk_state(
    records: &[AgentRecord],
    liquidity: f64,
    params: &RiskParams,
) -> Result<f64, RiskError> {
    if records.is_empty() {
        return Err(RiskError::Empty("records"));
    }
    if !liquidity.is_finite() || liquidity <= 0.0 {
        return Err(RiskError::InvalidParameter(format!(
            "liquidity must be finite and positive, got {liquidity}"
        )));
    }
    let mut total = 0.0;
    for r in records {
        let size_term = (r.quantity.abs() / params.max_quantity).min(1.0);
        let peg_move = params.impact_coeff * r.quantity / liquidity;
        let impact_term = (peg_move / params.epsilon).clamp(0.0, 1.0);
        total += (r.panic_level + size_term + impact_term) / 3.0;
    }
    let state = total / records.len() as f64;
    if !state.is_finite() {
        return Err(RiskError::NonFinite("agent risk state"));
    }
    Ok(state)
}

/// Trust-weighted systemic risk: sum(T_a R_a) / sum(T_a).
pub fn aggregate_risk(trust: &[f64], risk: &[f64]) -> Result<f64, RiskError> {
    if trust.len() != risk.len() {
        return Err(RiskError::LengthMismatch {
            left: "trust",
            left_len: trust.len(),
            right: "risk",
            right_len: risk.len(),
        });
    }
    if trust.is_empty() {
        return Err(RiskError::Empty("trust"));
    }
    let mass: f64 = trust.iter().sum();
    if mass <= 0.0 {
        return Err(RiskError::ZeroTrustMass);
    }
    let weighted: f64 = trust.iter().zip(risk.iter()).map(|(t, r)| t * r).sum();
    Ok(weighted / mass)
}

/// Share of total trust mass held by adversarial agents.
pub fn adversarial_influence(trust: &[f64], adversarial: &[bool]) -> Result<f64, RiskError> {
    if trust.len() != adversarial.len() {
        return Err(RiskError::LengthMismatch {
            left: "trust",
            left_len: trust.len(),
            right: "labels",
            right_len: adversarial.len(),
        });
    }
    if trust.is_empty() {
        return Err(RiskError::Empty("trust"));
    }
    let mass: f64 = trust.iter().sum();
    if mass <= 0.0 {
        return Err(RiskError::ZeroTrustMass);
    }
    let adv_mass: f64 = trust
        .iter()
        .zip(adversarial.iter())
        .filter(|(_, &a)| a)
        .map(|(t, _)| t)
        .sum();
    Ok(adv_mass / mass)
}

/// Influence of an adversarial fraction `rho` whose mean trust is
/// `mean_adv` against a benign mean of `mean_ben`:
/// rho * mean_adv / (rho * mean_adv + (1 - rho) * mean_ben).
///
/// With empirical class means this is an identity for
/// [`adversarial_influence`]; with an upper bound on `mean_adv` and a lower
/// bound on `mean_ben` it upper-bounds achievable influence.
pub fn influence_bound(rho: f64, mean_adv: f64, mean_ben: f64) -> f64 {
    let adv = rho * mean_adv;
    let ben = (1.0 - rho) * mean_ben;
    if adv + ben <= 0.0 {
        return 0.0;
    }
    adv / (adv + ben)
}

/// Unbiased sample covariance of one return matrix (rows = time steps,
/// columns = assets).
fn sample_covariance(returns: &DMatrix<f64>) -> Result<DMatrix<f64>, RiskError> {
    let (t, n) = returns.shape();
    if t < 2 {
        return Err(RiskError::Empty("need at least two return rows"));
    }
    if returns.iter().any(|x| !x.is_finite()) {
        return Err(RiskError::NonFinite("returns"));
    }
    let mean = returns.row_mean();
    let mut centered = returns.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut cov = centered.transpose() * &centered;
    cov /= (t - 1) as f64;
    debug_assert_eq!(cov.shape(), (n, n));
    Ok(cov)
}

/// Stress covariance: the average over simulation runs of each run's
/// unbiased sample covariance. Every run must cover the same assets.
pub fn estimate_stress_covariance(runs: &[DMatrix<f64>]) -> Result<DMatrix<f64>, RiskError> {
    if runs.is_empty() {
        return Err(RiskError::Empty("runs"));
    }
    let n = runs[0].ncols();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for run in runs {
        if run.ncols() != n {
            return Err(RiskError::DimensionMismatch {
                left: n,
                right: run.ncols(),
            });
        }
        acc += sample_covariance(run)?;
    }
    acc /= runs.len() as f64;
    Ok(acc)
}

/// Blend coefficient from the systemic risk index: alpha = r^2, so calm
/// regimes (r near 0) keep the historical covariance almost untouched
/// while the response sharpens as risk grows.
pub fn blend_alpha(risk_index: f64) -> f64 {
    risk_index.clamp(0.0, 1.0).powi(2)
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_covariance(m: &DMatrix<f64>, name: &'static str) -> Result<(), RiskError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(RiskError::NotSquare { rows, cols });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(RiskError::NonFinite(name));
    }
    let scale = m.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let asym = max_asymmetry(m);
    if asym > 1e-9 * scale {
        return Err(RiskError::NotSymmetric {
            max_asymmetry: asym,
        });
    }
    let min_eig = min_eigenvalue(m);
    if min_eig < -1e-9 * scale {
        return Err(RiskError::NotPositiveSemidefinite {
            min_eigenvalue: min_eig,
        });
    }
    Ok(())
}

/// Convex blend (1 - alpha) * historical + alpha * stress. Both inputs are
/// validated as symmetric PSD; the result is symmetrized against rounding.
pub fn blend_covariance(
    historical: &DMatrix<f64>,
    stress: &DMatrix<f64>,
    alpha: f64,
) -> Result<DMatrix<f64>, RiskError> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(RiskError::InvalidAlpha(alpha));
    }
    check_covariance(historical, "historical covariance")?;
    check_covariance(stress, "stress covariance")?;
    if historical.nrows() != stress.nrows() {
        return Err(RiskError::DimensionMismatch {
            left: historical.nrows(),
            right: stress.nrows(),
        });
    }
    let mut blended = historical * (1.0 - alpha) + stress * alpha;
    let symmetrized = (&blended + blended.transpose()) * 0.5;
    blended = symmetrized;
    Ok(blended)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Fragility of a portfolio: the ratio of stress variance to historical
/// variance, w'Sw / w'Hw. Bounded above by
/// max_eigenvalue(S) / min_eigenvalue(H) whenever H is positive definite.
pub fn fragility_ratio(
    weights: &[f64],
    historical: &DMatrix<f64>,
    stress: &DMatrix<f64>,
) -> Result<f64, RiskError> {
    let n = historical.nrows();
    if weights.len() != n {
        return Err(RiskError::LengthMismatch {
            left: "weights",
            left_len: weights.len(),
            right: "covariance",
            right_len: n,
        });
    }
    check_covariance(historical, "historical covariance")?;
    check_covariance(stress, "stress covariance")?;
    if stress.nrows() != n {
        return Err(RiskError::DimensionMismatch {
            left: n,
            right: stress.nrows(),
        });
    }
    let w = DMatrix::from_column_slice(n, 1, weights);
    let denom = (w.transpose() * historical * &w)[(0, 0)];
    if denom <= 0.0 {
        return Err(RiskError::InvalidParameter(
            "historical variance of portfolio is not positive".into(),
        ));
    }
    let numer = (w.transpose() * stress * &w)[(0, 0)];
    Ok(numer / denom)
}

/// Deterministic synthetic (historical, stress) covariance pair for n
/// assets. Correlations tighten from 0.2 to 0.6 under stress and the
/// stress matrix is rescaled so that trace(stress) / trace(historical) is
/// exactly 7.17 — a crisis-grade variance amplification.
pub fn synthetic_covariances(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    assert!(n >= 1, "need at least one asset");
    let calm_corr: f64 = 0.2;
    let stress_corr: f64 = 0.6;
    let vol = |i: usize| 0.01 * (1.0 + 0.5 * i as f64);
    let beta = |i: usize| 1.0 + 0.25 * i as f64;
    let historical = DMatrix::from_fn(n, n, |i, j| {
        calm_corr.powi((i as i32 - j as i32).abs()) * vol(i) * vol(j)
    });
    let mut stress = DMatrix::from_fn(n, n, |i, j| {
        stress_corr.powi((i as i32 - j as i32).abs()) * vol(i) * beta(i) * vol(j) * beta(j)
    });
    let target = 7.17 * historical.trace();
    stress *= target / stress.trace();
    (historical, stress)
}

/// Writes a matrix as headerless CSV, one row per line, using the shortest
/// round-trippable decimal form of each entry.
pub fn write_matrix_csv<W: std::io::Write>(
    writer: W,
    matrix: &DMatrix<f64>,
) -> Result<(), RiskError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    for i in 0..matrix.nrows() {
        let row: Vec<String> = (0..matrix.ncols())
            .map(|j| matrix[(i, j)].to_string())
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`]; the roundtrip is exact.
pub fn read_matrix_csv<R: std::io::Read>(reader: R) -> Result<DMatrix<f64>, RiskError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record?;
        let row: Result<Vec<f64>, _> = record.iter().map(|s| s.parse::<f64>()).collect();
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(RiskError::Empty("csv matrix"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(RiskError::InvalidParameter("ragged csv matrix".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ActionType;
    use approx::assert_relative_eq;

    fn record(quantity: f64, panic: f64) -> AgentRecord {
        AgentRecord {
            agent: 0,
            step: 0,
            action_type: if quantity > 0.0 {
                ActionType::Sell
            } else {
                ActionType::Hold
            },
            asset: 0,
            quantity,
            stated_sentiment: 0.0,
            panic_level: panic,
            peg_confidence: 0.5,
            risk_appetite: 0.5,
            rationale: String::new(),
        }
    }

    #[test]
    fn agent_risk_state_worked_example() {
        // panic 0.8, size 15000/25000 = 0.6, impact 0.5*15000/1.875e6 =
        // 0.004 against epsilon 0.01 -> 0.4; mean of the three terms = 0.6.
        let params = RiskParams::default();
        let r = agent_risk_state(&[record(15_000.0, 0.8)], 1.875e6, &params).unwrap();
        assert_relative_eq!(r, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn buys_contribute_no_impact() {
        let params = RiskParams::default();
        let sell = agent_risk_state(&[record(10_000.0, 0.0)], 1e6, &params).unwrap();
        let buy = agent_risk_state(&[record(-10_000.0, 0.0)], 1e6, &params).unwrap();
        assert!(sell > buy);
        // Buy keeps only the size term: 0.4 / 3.
        assert_relative_eq!(buy, 0.4 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn risk_state_terms_saturate() {
        let params = RiskParams::default();
        let r = agent_risk_state(&[record(1e9, 1.0)], 1e3, &params).unwrap();
        assert_relative_eq!(r, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn risk_state_averages_over_window() {
        let params = RiskParams::default();
        let quiet = record(0.0, 0.0);
        let loud = record(2.5e4, 1.0);
        let r = agent_risk_state(&[quiet, loud], 1.25e6, &params).unwrap();
        // Steps score 0 and 1; the window mean is 0.5.
        assert_relative_eq!(r, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_risk_worked_example() {
        // Trust [0.9, 0.1], risk [0.3, 0.8]:
        // (0.27 + 0.08) / 1.0 = 0.35.
        let r = aggregate_risk(&[0.9, 0.1], &[0.3, 0.8]).unwrap();
        assert_relative_eq!(r, 0.35, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_risk_downweights_distrusted_agents() {
        let alarmist_trusted = aggregate_risk(&[0.9, 0.9], &[0.1, 0.9]).unwrap();
        let alarmist_distrusted = aggregate_risk(&[0.9, 0.05], &[0.1, 0.9]).unwrap();
        assert!(alarmist_distrusted < alarmist_trusted);
        assert!(matches!(
            aggregate_risk(&[0.0, 0.0], &[0.5, 0.5]),
            Err(RiskError::ZeroTrustMass)
        ));
    }

    #[test]
    fn influence_identity_with_empirical_means() {
        let trust = [0.2, 0.4, 0.8, 0.7, 0.9];
        let labels = [true, true, false, false, false];
        let direct = adversarial_influence(&trust, &labels).unwrap();
        let rho = 2.0 / 5.0;
        let bound = influence_bound(rho, 0.3, 0.8);
        assert_relative_eq!(direct, bound, epsilon = 1e-12);
    }

    #[test]
    fn influence_bound_fixture() {
        // 20% adversaries capped at trust 0.35 against benign trust 0.75:
        // 0.07 / 0.67.
        assert_relative_eq!(
            influence_bound(0.2, 0.35, 0.75),
            0.1044776119402985,
            epsilon = 1e-12
        );
    }

    #[test]
    fn stress_covariance_alternating_returns_oracle() {
        // Rows (1,-1), (-1,1), (1,-1): unbiased covariance
        // [[4/3, -4/3], [-4/3, 4/3]].
        let returns = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, -1.0, 1.0, 1.0, -1.0]);
        let cov = estimate_stress_covariance(&[returns]).unwrap();
        assert_relative_eq!(cov[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(cov[(0, 1)], -4.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(cov[(1, 1)], 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn stress_covariance_averages_runs() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 0.0]); // var 1
        let b = DMatrix::from_row_slice(3, 1, &[2.0, -2.0, 0.0]); // var 4
        let cov = estimate_stress_covariance(&[a, b]).unwrap();
        assert_relative_eq!(cov[(0, 0)], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn stress_covariance_rejects_bad_input() {
        assert!(matches!(
            estimate_stress_covariance(&[]),
            Err(RiskError::Empty(_))
        ));
        let one_row = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(estimate_stress_covariance(&[one_row]).is_err());
        let a = DMatrix::zeros(3, 2);
        let b = DMatrix::zeros(3, 3);
        assert!(matches!(
            estimate_stress_covariance(&[a, b]),
            Err(RiskError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn blend_alpha_is_squared_risk() {
        assert_relative_eq!(blend_alpha(0.35), 0.1225, epsilon = 1e-12);
        assert_eq!(blend_alpha(0.0), 0.0);
        assert_eq!(blend_alpha(1.0), 1.0);
        assert_eq!(blend_alpha(-0.5), 0.0);
        assert_eq!(blend_alpha(2.0), 1.0);
    }

    #[test]
    fn blend_covariance_scalar_fixture() {
        // Equal-weight blend of I and 7.17 I is 4.085 I.
        let h = DMatrix::identity(3, 3);
        let s = DMatrix::identity(3, 3) * 7.17;
        let blended = blend_covariance(&h, &s, 0.5).unwrap();
        for i in 0..3 {
            assert_relative_eq!(blended[(i, i)], 4.085, epsilon = 1e-12);
        }
    }

    #[test]
    fn blend_covariance_validates_inputs() {
        let h = DMatrix::identity(2, 2);
        let s = DMatrix::identity(2, 2);
        assert!(matches!(
            blend_covariance(&h, &s, 1.5),
            Err(RiskError::InvalidAlpha(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(matches!(
            blend_covariance(&asym, &s, 0.5),
            Err(RiskError::NotSymmetric { .. })
        ));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            blend_covariance(&indef, &s, 0.5),
            Err(RiskError::NotPositiveSemidefinite { .. })
        ));
        let wide = DMatrix::identity(3, 3);
        assert!(matches!(
            blend_covariance(&h, &wide, 0.5),
            Err(RiskError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn blend_eigenvalues_obey_convex_bounds() {
        let (h, s) = synthetic_covariances(4);
        for &alpha in &[0.0, 0.2, 0.5, 0.9, 1.0] {
            let b = blend_covariance(&h, &s, alpha).unwrap();
            let lo = (1.0 - alpha) * min_eigenvalue(&h) + alpha * min_eigenvalue(&s);
            let hi = (1.0 - alpha) * max_eigenvalue(&h) + alpha * max_eigenvalue(&s);
            assert!(min_eigenvalue(&b) >= lo - 1e-10);
            assert!(max_eigenvalue(&b) <= hi + 1e-10);
        }
    }

    #[test]
    fn fragility_diagonal_fixture() {
        // S = diag(12, 3), H = I, w = e1: fragility 12, equal to the
        // eigenvalue bound.
        let h = DMatrix::identity(2, 2);
        let s = DMatrix::from_row_slice(2, 2, &[12.0, 0.0, 0.0, 3.0]);
        let kappa = fragility_ratio(&[1.0, 0.0], &h, &s).unwrap();
        assert_relative_eq!(kappa, 12.0, epsilon = 1e-12);
        assert!(kappa <= max_eigenvalue(&s) / min_eigenvalue(&h) + 1e-12);
    }

    #[test]
    fn fragility_bounded_by_rayleigh_quotients() {
        let (h, s) = synthetic_covariances(4);
        let bound = max_eigenvalue(&s) / min_eigenvalue(&h);
        for weights in [
            [0.25, 0.25, 0.25, 0.25],
            [0.6, 0.2, 0.1, 0.1],
            [0.05, 0.05, 0.3, 0.6],
        ] {
            let kappa = fragility_ratio(&weights, &h, &s).unwrap();
            assert!(kappa > 0.0);
            assert!(kappa <= bound + 1e-9);
        }
    }

    #[test]
    fn synthetic_pair_has_exact_trace_ratio() {
        for n in [2, 4, 6] {
            let (h, s) = synthetic_covariances(n);
            assert_relative_eq!(s.trace() / h.trace(), 7.17, epsilon = 1e-12);
            assert!(min_eigenvalue(&h) > 0.0);
            assert!(min_eigenvalue(&s) > 0.0);
        }
    }

    #[test]
    fn matrix_csv_roundtrip_is_exact() {
        let (h, _) = synthetic_covariances(4);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &h).unwrap();
        let back = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(h, back);
    }

    #[test]
    fn params_validation() {
        assert!(RiskParams::default().validate().is_ok());
        let bad = RiskParams {
            epsilon: 0.0,
            ..RiskParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
