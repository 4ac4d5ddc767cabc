//! Outcome metrics for peg-stability experiments.
//!
//! Everything here is a pure function of recorded trajectories, so the
//! same code scores live runs, stress replays, and saved CSV files. Peg
//! recovery is an enum rather than a sentinel value: a run that never
//! re-enters the band is a distinct outcome, and means over runs censor it
//! at the observation horizon instead of inventing a number.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trust::DetectionRates;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty series: {0}")]
    Empty(&'static str),
    #[error("{left} has length {left_len} but {right} has length {right_len}")]
    LengthMismatch {
        left: &'static str,
        left_len: usize,
        right: &'static str,
        right_len: usize,
    },
    #[error("shock step {shock_step} outside series of length {len}")]
    ShockOutOfRange { shock_step: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("csv parse: {0}")]
    Parse(String),
}

/// Worst absolute peg deviation over a trajectory.
pub fn peak_deviation(peg: &[f64]) -> Result<f64, MetricsError> {
    if peg.is_empty() {
        return Err(MetricsError::Empty("peg series"));
    }
    Ok(peg.iter().fold(0.0f64, |a, x| a.max(x.abs())))
}

/// Whether and when the peg re-entered the tolerance band after a shock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Recovery {
    /// Steps elapsed from the shock to the first in-band observation.
    Steps(u32),
    /// Still out of band at the end of the series.
    NotRecovered,
}

/// First step after `shock_step` with |peg| back inside `epsilon`,
/// expressed as steps since the shock.
pub fn recovery_time(
    peg: &[f64],
    shock_step: usize,
    epsilon: f64,
) -> Result<Recovery, MetricsError> {
    if shock_step >= peg.len() {
        return Err(MetricsError::ShockOutOfRange {
            shock_step,
            len: peg.len(),
        });
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(MetricsError::InvalidParameter(format!(
            "epsilon must be finite and positive, got {epsilon}"
        )));
    }
    for (t, &d) in peg.iter().enumerate().skip(shock_step + 1) {
        if d.abs() < epsilon {
            return Ok(Recovery::Steps((t - shock_step) as u32));
        }
    }
    Ok(Recovery::NotRecovered)
}

/// Censors an unrecovered run at the horizon so means stay defined.
pub fn censored_steps(recovery: Recovery, shock_step: usize, horizon: usize) -> u32 {
    match recovery {
        Recovery::Steps(s) => s,
        Recovery::NotRecovered => horizon.saturating_sub(shock_step) as u32,
    }
}

/// Mean recovery across runs with horizon censoring.
pub fn mean_recovery(
    recoveries: &[Recovery],
    shock_step: usize,
    horizon: usize,
) -> Result<f64, MetricsError> {
    if recoveries.is_empty() {
        return Err(MetricsError::Empty("recoveries"));
    }
    let total: u64 = recoveries
        .iter()
        .map(|&r| censored_steps(r, shock_step, horizon) as u64)
        .sum();
    Ok(total as f64 / recoveries.len() as f64)
}

/// Steps an exponentially reverting deviation δ_s e^(-γ k) needs to drop
/// below `epsilon`: ceil(ln(δ_s / ε) / γ), floored at zero when the start
/// is already in band.
pub fn closed_form_recovery(delta_s: f64, epsilon: f64, gamma: f64) -> Result<u32, MetricsError> {
    if !(delta_s.is_finite() && delta_s > 0.0 && epsilon.is_finite() && epsilon > 0.0) {
        return Err(MetricsError::InvalidParameter(format!(
            "delta_s and epsilon must be finite and positive, got {delta_s} and {epsilon}"
        )));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(MetricsError::InvalidParameter(format!(
            "gamma must be finite and positive, got {gamma}"
        )));
    }
    let k = (delta_s / epsilon).ln() / gamma;
    Ok(k.ceil().max(0.0) as u32)
}

/// Number of steps on which collateral value sat below outstanding supply.
pub fn bad_debt_steps(collateral: &[f64], supply: &[f64]) -> Result<u32, MetricsError> {
    if collateral.len() != supply.len() {
        return Err(MetricsError::LengthMismatch {
            left: "collateral",
            left_len: collateral.len(),
            right: "supply",
            right_len: supply.len(),
        });
    }
    if collateral.is_empty() {
        return Err(MetricsError::Empty("collateral"));
    }
    Ok(collateral
        .iter()
        .zip(supply.iter())
        .filter(|(c, s)| c < s)
        .count() as u32)
}

/// Terminal pool liquidity as a fraction of its level just before the
/// shock landed.
pub fn liquidity_retention(liquidity: &[f64], shock_step: usize) -> Result<f64, MetricsError> {
    if shock_step == 0 || shock_step >= liquidity.len() {
        return Err(MetricsError::ShockOutOfRange {
            shock_step,
            len: liquidity.len(),
        });
    }
    let baseline = liquidity[shock_step - 1];
    if !(baseline.is_finite() && baseline > 0.0) {
        return Err(MetricsError::InvalidParameter(format!(
            "pre-shock liquidity must be finite and positive, got {baseline}"
        )));
    }
    Ok(liquidity[liquidity.len() - 1] / baseline)
}

/// Aggregate adversary-detection outcome over a batch of runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecuritySummary {
    pub tpr: f64,
    pub fpr: f64,
    pub mean_influence: f64,
    /// 1 - mean influence / adversarial fraction: how far trust weighting
    /// pushed adversaries below their headcount share.
    pub influence_reduction: f64,
}

pub fn security_summary(
    rates: &[DetectionRates],
    influences: &[f64],
    adversarial_fraction: f64,
) -> Result<SecuritySummary, MetricsError> {
    if rates.is_empty() {
        return Err(MetricsError::Empty("detection rates"));
    }
    if influences.is_empty() {
        return Err(MetricsError::Empty("influences"));
    }
    if !(adversarial_fraction > 0.0 && adversarial_fraction < 1.0) {
        return Err(MetricsError::InvalidParameter(format!(
            "adversarial fraction must lie in (0, 1), got {adversarial_fraction}"
        )));
    }
    let n = rates.len() as f64;
    let tpr = rates.iter().map(|r| r.tpr).sum::<f64>() / n;
    let fpr = rates.iter().map(|r| r.fpr).sum::<f64>() / n;
    let mean_influence = influences.iter().sum::<f64>() / influences.len() as f64;
    Ok(SecuritySummary {
        tpr,
        fpr,
        mean_influence,
        influence_reduction: 1.0 - mean_influence / adversarial_fraction,
    })
}

/// Fraction of index-aligned pairs where the first series is strictly
/// smaller — the seed-paired win rate of one method over another.
pub fn paired_win_rate(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: "a",
            left_len: a.len(),
            right: "b",
            right_len: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty("paired series"));
    }
    let wins = a.iter().zip(b.iter()).filter(|(x, y)| x < y).count();
    Ok(wins as f64 / a.len() as f64)
}

/// Mean of a - b over aligned pairs.
pub fn paired_mean_difference(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: "a",
            left_len: a.len(),
            right: "b",
            right_len: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty("paired series"));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64)
}

/// One recorded simulation step: protocol state plus the controller's
/// risk reading and allocation at that step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub peg_deviation: f64,
    pub collateral: f64,
    pub supply: f64,
    pub liquidity: f64,
    pub volatility: f64,
    pub risk_index: f64,
    pub alpha: f64,
    pub weights: Vec<f64>,
}

/// Writes step records as CSV with one weight column per asset. Floats use
/// their shortest round-trippable decimal form, so a read-back compares
/// bit-for-bit equal.
pub fn write_steps_csv<W: std::io::Write>(
    writer: W,
    records: &[StepRecord],
) -> Result<(), MetricsError> {
    let n_weights = records.first().map_or(0, |r| r.weights.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "step".to_string(),
        "peg_deviation".to_string(),
        "collateral".to_string(),
        "supply".to_string(),
        "liquidity".to_string(),
        "volatility".to_string(),
        "risk_index".to_string(),
        "alpha".to_string(),
    ];
    for i in 0..n_weights {
        header.push(format!("w{i}"));
    }
    w.write_record(&header)
        .map_err(|e| MetricsError::Parse(e.to_string()))?;
    for r in records {
        let mut row = vec![
            r.step.to_string(),
            r.peg_deviation.to_string(),
            r.collateral.to_string(),
            r.supply.to_string(),
            r.liquidity.to_string(),
            r.volatility.to_string(),
            r.risk_index.to_string(),
            r.alpha.to_string(),
        ];
        for v in &r.weights {
            row.push(v.to_string());
        }
        w.write_record(&row)
            .map_err(|e| MetricsError::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| MetricsError::Parse(e.to_string()))?;
    Ok(())
}

/// Reads step records written by [`write_steps_csv`].
pub fn read_steps_csv<R: std::io::Read>(reader: R) -> Result<Vec<StepRecord>, MetricsError> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r
        .headers()
        .map_err(|e| MetricsError::Parse(e.to_string()))?
        .clone();
    let n_weights = headers.iter().filter(|h| h.starts_with('w')).count();
    let fixed = headers.len() - n_weights;
    if fixed != 8 {
        return Err(MetricsError::Parse(format!(
            "expected 8 fixed columns, found {fixed}"
        )));
    }
    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| MetricsError::Parse(e.to_string()))?;
        let field = |i: usize| -> Result<f64, MetricsError> {
            record
                .get(i)
                .ok_or_else(|| MetricsError::Parse(format!("missing column {i}")))?
                .parse::<f64>()
                .map_err(|e| MetricsError::Parse(e.to_string()))
        };
        let step: u32 = record
            .get(0)
            .ok_or_else(|| MetricsError::Parse("missing step".into()))?
            .parse()
            .map_err(|e: std::num::ParseIntError| MetricsError::Parse(e.to_string()))?;
        let mut weights = Vec::with_capacity(n_weights);
        for i in 0..n_weights {
            weights.push(field(8 + i)?);
        }
        out.push(StepRecord {
            step,
            peg_deviation: field(1)?,
            collateral: field(2)?,
            supply: field(3)?,
            liquidity: field(4)?,
            volatility: field(5)?,
            risk_index: field(6)?,
            alpha: field(7)?,
            weights,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn peak_takes_absolute_worst() {
        let peg = [0.0, -0.08, 0.03, -0.01];
        assert_relative_eq!(peak_deviation(&peg).unwrap(), 0.08, epsilon = 1e-15);
        assert_eq!(peak_deviation(&[]), Err(MetricsError::Empty("peg series")));
    }

    #[test]
    fn recovery_finds_first_in_band_step() {
        let peg = [0.0, 0.0, -0.09, -0.05, -0.02, -0.009, -0.02];
        // Shock at step 2; first |peg| < 0.01 is step 5.
        assert_eq!(recovery_time(&peg, 2, 0.01).unwrap(), Recovery::Steps(3));
    }

    #[test]
    fn recovery_ignores_pre_shock_band() {
        // In-band values before and at the shock step do not count.
        let peg = [0.0, -0.09, 0.005];
        assert_eq!(recovery_time(&peg, 1, 0.01).unwrap(), Recovery::Steps(1));
        let never = [0.0, -0.09, -0.05, -0.03];
        assert_eq!(
            recovery_time(&never, 1, 0.01).unwrap(),
            Recovery::NotRecovered
        );
    }

    #[test]
    fn censoring_fills_the_horizon() {
        assert_eq!(censored_steps(Recovery::Steps(7), 30, 100), 7);
        assert_eq!(censored_steps(Recovery::NotRecovered, 30, 100), 70);
        let mean = mean_recovery(&[Recovery::Steps(10), Recovery::NotRecovered], 30, 100).unwrap();
        assert_relative_eq!(mean, 40.0, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_matches_exact_exponential_iteration() {
        // δ_k = 0.1 e^(-0.23 k): step through the decay literally and
        // compare against the formula.
        let delta_s = 0.1;
        let gamma = 0.23;
        let epsilon = 0.01;
        let mut k = 0u32;
        while delta_s * (-gamma * k as f64).exp() >= epsilon {
            k += 1;
        }
        assert_eq!(k, 11);
        assert_eq!(closed_form_recovery(delta_s, epsilon, gamma).unwrap(), 11);
    }

    #[test]
    fn closed_form_random_cases_match_iteration() {
        // Deterministic sweep over a parameter lattice; the formula and the
        // literal iteration must agree exactly (ties broken by strict <).
        for i in 1..=20 {
            for j in 1..=10 {
                let delta_s = 0.012 * i as f64;
                let gamma = 0.05 * j as f64;
                let epsilon = 0.01;
                let mut k = 0u32;
                while delta_s * (-gamma * k as f64).exp() >= epsilon && k < 10_000 {
                    k += 1;
                }
                let formula = closed_form_recovery(delta_s, epsilon, gamma).unwrap();
                assert!(
                    (formula as i64 - k as i64).abs() <= 1,
                    "delta {delta_s} gamma {gamma}: formula {formula}, iteration {k}"
                );
            }
        }
    }

    #[test]
    fn closed_form_in_band_start_is_zero() {
        assert_eq!(closed_form_recovery(0.005, 0.01, 0.23).unwrap(), 0);
        assert!(closed_form_recovery(-0.1, 0.01, 0.23).is_err());
        assert!(closed_form_recovery(0.1, 0.01, 0.0).is_err());
    }

    #[test]
    fn bad_debt_counts_undercollateralized_steps() {
        let collateral = [1.05, 0.99, 0.98, 1.01];
        let supply = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(bad_debt_steps(&collateral, &supply).unwrap(), 2);
        assert!(bad_debt_steps(&collateral, &supply[..2]).is_err());
    }

    #[test]
    fn liquidity_retention_uses_pre_shock_baseline() {
        let liquidity = [2.0e6, 2.0e6, 1.4e6, 1.5e6, 1.6e6];
        assert_relative_eq!(
            liquidity_retention(&liquidity, 2).unwrap(),
            0.8,
            epsilon = 1e-12
        );
        assert!(liquidity_retention(&liquidity, 0).is_err());
    }

    #[test]
    fn security_summary_averages_and_reduces() {
        let rates = [
            DetectionRates { tpr: 1.0, fpr: 0.0 },
            DetectionRates { tpr: 0.5, fpr: 0.2 },
        ];
        let s = security_summary(&rates, &[0.10, 0.14], 0.2).unwrap();
        assert_relative_eq!(s.tpr, 0.75, epsilon = 1e-12);
        assert_relative_eq!(s.fpr, 0.1, epsilon = 1e-12);
        assert_relative_eq!(s.mean_influence, 0.12, epsilon = 1e-12);
        assert_relative_eq!(s.influence_reduction, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn paired_helpers() {
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 2.0, 4.0];
        assert_relative_eq!(paired_win_rate(&a, &b).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(
            paired_mean_difference(&a, &b).unwrap(),
            -2.0 / 3.0,
            epsilon = 1e-12
        );
        assert!(paired_win_rate(&a, &b[..2]).is_err());
    }

    #[test]
    fn steps_csv_roundtrip_is_bit_exact() {
        let records: Vec<StepRecord> = (0..5)
            .map(|i| StepRecord {
                step: i,
                peg_deviation: -0.1 / (i as f64 + 1.7),
                collateral: 1.06e6 * (1.0 + 1e-7 * i as f64),
                supply: 1e6,
                liquidity: 2e6 / (i as f64 + 1.0),
                volatility: 0.05 + 0.1 * (i as f64).sin(),
                risk_index: 0.1 + 0.2 / (i as f64 + 3.0),
                alpha: (0.1 + 0.2 / (i as f64 + 3.0)) * (0.1 + 0.2 / (i as f64 + 3.0)),
                weights: vec![0.25 + 1e-9 * i as f64, 0.25, 0.25, 0.25 - 1e-9 * i as f64],
            })
            .collect();
        let mut buf = Vec::new();
        write_steps_csv(&mut buf, &records).unwrap();
        let back = read_steps_csv(buf.as_slice()).unwrap();
        assert_eq!(records, back);
    }
}
