//! Behavior-based trust scoring.
//!
//! Each agent's trailing action window is reduced to four features —
//! sentiment/action consistency, profitability, maximum similarity to any
//! other agent, and destabilization timing — and mapped through a fixed
//! logistic to a trust score in (0, 1). Scores feed the risk aggregator as
//! normalized weights; the module is self-contained and independent of the
//! covariance and optimizer layers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::agents::AgentRecord;

/// Errors raised by feature extraction and detection metrics.
#[derive(Debug, Error, PartialEq)]
pub enum TrustError {
    #[error("need at least {required} records, got {actual}")]
    InsufficientData { required: usize, actual: usize },
    #[error("{left} has length {left_len} but {right} has length {right_len}")]
    LengthMismatch {
        left: &'static str,
        left_len: usize,
        right: &'static str,
        right_len: usize,
    },
    #[error("{class} class is empty; detection rate undefined")]
    UndefinedRate { class: &'static str },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Scoring constants. The logistic weights are fixed constants of the
/// system, not fitted at runtime.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustParams {
    /// Positive weights applied to [f1, f2, -f3, -f4].
    pub weights: [f64; 4],
    pub bias: f64,
    /// Trailing window length (records per agent) for feature extraction.
    pub window: usize,
    /// Dimension of the action-history embedding space.
    pub embed_dim: usize,
    /// Scores below this threshold flag an agent as adversarial.
    pub threshold: f64,
}

impl Default for TrustParams {
    fn default() -> Self {
        TrustParams {
            weights: [1.5, 1.5, 2.0, 1.0],
            bias: 0.0,
            window: 10,
            embed_dim: 32,
            threshold: 0.5,
        }
    }
}

impl TrustParams {
    pub fn validate(&self) -> Result<(), TrustError> {
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(TrustError::InvalidParameter(format!(
                "weights must be finite and non-negative, got {:?}",
                self.weights
            )));
        }
        if !self.bias.is_finite() {
            return Err(TrustError::InvalidParameter("bias must be finite".into()));
        }
        if self.window < 2 {
            return Err(TrustError::InvalidParameter(format!(
                "window must be at least 2, got {}",
                self.window
            )));
        }
        if self.embed_dim == 0 {
            return Err(TrustError::InvalidParameter(
                "embed_dim must be positive".into(),
            ));
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return Err(TrustError::InvalidParameter(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// The four behavioral features for one agent over one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustFeatures {
    /// Correlation between stated sentiment and net position change.
    pub consistency: f64,
    /// Fraction of window steps that were profitable or belief-aligned.
    pub profitability: f64,
    /// Maximum cosine similarity to any other agent's action embedding.
    pub similarity: f64,
    /// Correlation between signed quantity and next-step |peg| change.
    pub destabilization: f64,
}

impl TrustFeatures {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.consistency,
            self.profitability,
            self.similarity,
            self.destabilization,
        ]
    }
}

/// Per-agent scoring output for one epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustReport {
    pub run_id: u64,
    pub step: u32,
    pub agent: usize,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
    pub score: f64,
    /// Score normalized across the population (sums to 1).
    pub weight: f64,
    /// Ground-truth adversarial label.
    pub label: bool,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Pearson correlation with the convention that any zero-variance series
/// (or non-finite intermediate) yields 0 rather than NaN.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 {
        return 0.0;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if r.is_finite() {
        r.clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Net position change implied by a record: buys are positive.
fn position_change(record: &AgentRecord) -> f64 {
    -record.quantity
}

/// f1 — consistency: correlation between stated sentiment and net position
/// change over the window.
pub fn feature_consistency(records: &[AgentRecord]) -> Result<f64, TrustError> {
    if records.len() < 2 {
        return Err(TrustError::InsufficientData {
            required: 2,
            actual: records.len(),
        });
    }
    let sentiment: Vec<f64> = records.iter().map(|r| r.stated_sentiment).collect();
    let delta: Vec<f64> = records.iter().map(position_change).collect();
    Ok(pearson(&sentiment, &delta))
}

/// f2 — profitability: fraction of steps with positive realized profit or
/// with the position change aligned to the stated belief. Zero values align
/// only with zero (an idle step with a neutral statement counts; an idle
/// step with a directional statement does not).
pub fn feature_profitability(records: &[AgentRecord], pnl: &[f64]) -> Result<f64, TrustError> {
    if records.is_empty() {
        return Err(TrustError::InsufficientData {
            required: 1,
            actual: 0,
        });
    }
    if records.len() != pnl.len() {
        return Err(TrustError::LengthMismatch {
            left: "records",
            left_len: records.len(),
            right: "pnl",
            right_len: pnl.len(),
        });
    }
    let hits = records
        .iter()
        .zip(pnl.iter())
        .filter(|(r, &p)| p > 0.0 || sign(r.stated_sentiment) == sign(position_change(r)))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Discretizes one record into sparse tokens: the action/asset/size/panic
/// components individually plus a step-keyed composite. Component tokens give
/// graded similarity between loosely similar agents. The composite token only
/// matches agents doing the same thing to the same asset at the same size in
/// the same step, so it separates temporal lockstep (coordination) from mere
/// archetype resemblance: two cautious sellers overlap on a few components,
/// while a synchronized cluster overlaps on nearly every composite.
fn tokenize(record: &AgentRecord, size_cuts: (f64, f64)) -> Vec<String> {
    let panic_bucket = ((record.panic_level * 4.0).floor() as i64).clamp(0, 3);
    let action = record.action_type.as_str();
    if record.quantity == 0.0 {
        // Idle steps carry no asset or size information. The step-keyed token
        // still lets simultaneous idleness register, but in quiet regimes most
        // agents are idle together, so its document frequency is high and the
        // idf weighting strips it back out.
        return vec![
            format!("act:{action}"),
            format!("panic:{panic_bucket}"),
            format!("sync:{}:{action}", record.step),
        ];
    }
    let mag = record.quantity.abs();
    let tier = if mag <= size_cuts.0 {
        "s"
    } else if mag <= size_cuts.1 {
        "m"
    } else {
        "l"
    };
    let dir = if record.quantity > 0.0 { "+" } else { "-" };
    vec![
        format!("act:{action}"),
        format!("asset:{}", record.asset),
        format!("qty:{dir}{tier}"),
        format!("panic:{panic_bucket}"),
        format!("sync:{}:{action}:{}:{dir}{tier}", record.step, record.asset),
    ]
}

/// Builds one unit-norm embedding per agent from their action windows via
/// TF-IDF and, when the population is large enough to support it, a PCA
/// projection to `dim` components. For small populations the TF-IDF matrix
/// is truncated to its `dim` heaviest columns instead.
pub fn embed_histories(windows: &[Vec<AgentRecord>], dim: usize) -> Vec<DVector<f64>> {
    let n_docs = windows.len();
    if n_docs == 0 {
        return Vec::new();
    }
    // Size buckets are terciles of the pooled non-zero quantity magnitudes,
    // so "large" means large relative to this window's corpus.
    let mut mags: Vec<f64> = windows
        .iter()
        .flatten()
        .map(|r| r.quantity.abs())
        .filter(|m| *m > 0.0)
        .collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let size_cuts = if mags.is_empty() {
        (0.0, 0.0)
    } else {
        (mags[(mags.len() - 1) / 3], mags[(2 * (mags.len() - 1)) / 3])
    };

    let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
    let mut docs: Vec<BTreeMap<usize, f64>> = Vec::with_capacity(n_docs);
    for window in windows {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for record in window {
            for token in tokenize(record, size_cuts) {
                let next_id = vocab.len();
                let id = *vocab.entry(token).or_insert(next_id);
                *counts.entry(id).or_insert(0.0) += 1.0;
            }
        }
        let total: f64 = counts.values().sum();
        if total > 0.0 {
            for v in counts.values_mut() {
                *v /= total;
            }
        }
        docs.push(counts);
    }

    let v = vocab.len();
    let mut df = vec![0usize; v];
    for doc in &docs {
        for &id in doc.keys() {
            df[id] += 1;
        }
    }
    // idf = ln(N/df): tokens present in every document carry no weight,
    // which strips regime-wide behavior (everyone selling in a crash) out
    // of the similarity signal.
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| {
            if d == 0 {
                0.0
            } else {
                (n_docs as f64 / d as f64).ln()
            }
        })
        .collect();

    let mut matrix = DMatrix::<f64>::zeros(n_docs, v);
    for (row, doc) in docs.iter().enumerate() {
        for (&id, &tf) in doc {
            matrix[(row, id)] = tf * idf[id];
        }
    }

    let dim = dim.max(1);
    let reduced: DMatrix<f64> = if n_docs > dim && v > dim {
        // Center and project onto the top principal components.
        let mean = matrix.row_mean();
        let mut centered = matrix.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        let svd = centered.clone().svd(false, true);
        let vt = svd.v_t.expect("svd requested v_t");
        let k = dim.min(vt.nrows());
        &centered * vt.rows(0, k).transpose()
    } else if v > dim {
        // Keep the `dim` columns carrying the most corpus mass; ties break
        // by stable (lexicographic) vocabulary order.
        let mut mass: Vec<(usize, f64)> = (0..v)
            .map(|j| (j, matrix.column(j).iter().map(|x| x.abs()).sum()))
            .collect();
        mass.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let keep: Vec<usize> = mass.iter().take(dim).map(|(j, _)| *j).collect();
        DMatrix::from_fn(n_docs, dim, |i, jj| matrix[(i, keep[jj])])
    } else {
        matrix
    };

    (0..n_docs)
        .map(|i| {
            let mut row = DVector::from_iterator(reduced.ncols(), reduced.row(i).iter().copied());
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            }
            row
        })
        .collect()
}

/// f3 — maximum cosine similarity between agent `idx` and any other agent,
/// clamped to [0, 1]. A singleton population scores 0.
pub fn feature_similarity(idx: usize, embeddings: &[DVector<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for (j, other) in embeddings.iter().enumerate() {
        if j == idx {
            continue;
        }
        let cos = embeddings[idx].dot(other);
        best = best.max(cos);
    }
    best.clamp(0.0, 1.0)
}

/// f4 — destabilization timing: correlation between signed quantity at step
/// s and the change in |peg deviation| from s to s+1. `peg_abs` must hold
/// one more entry than `records`.
pub fn feature_destabilization(
    records: &[AgentRecord],
    peg_abs: &[f64],
) -> Result<f64, TrustError> {
    if records.len() < 2 {
        return Err(TrustError::InsufficientData {
            required: 2,
            actual: records.len(),
        });
    }
    if peg_abs.len() != records.len() + 1 {
        return Err(TrustError::LengthMismatch {
            left: "records",
            left_len: records.len(),
            right: "peg_abs (need records + 1)",
            right_len: peg_abs.len(),
        });
    }
    let quantity: Vec<f64> = records.iter().map(|r| r.quantity).collect();
    let delta_abs: Vec<f64> = peg_abs.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(pearson(&quantity, &delta_abs))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Signed feature vector entering the logistic: rewarding features keep
/// their sign, suspicious ones are negated.
fn signed_features(f: &TrustFeatures) -> [f64; 4] {
    [
        f.consistency,
        f.profitability,
        -f.similarity,
        -f.destabilization,
    ]
}

/// Trust score in (0, 1).
pub fn trust_score(features: &TrustFeatures, params: &TrustParams) -> f64 {
    let fs = signed_features(features);
    let z: f64 = params
        .weights
        .iter()
        .zip(fs.iter())
        .map(|(w, f)| w * f)
        .sum::<f64>()
        + params.bias;
    sigmoid(z)
}

/// Analytic gradient of the trust score with respect to the four logistic
/// weights: dT/dw_i = T (1 - T) * f_i with the sign convention of
/// [`trust_score`].
pub fn trust_score_weight_gradient(features: &TrustFeatures, params: &TrustParams) -> [f64; 4] {
    let t = trust_score(features, params);
    let fs = signed_features(features);
    let mut grad = [0.0; 4];
    for i in 0..4 {
        grad[i] = t * (1.0 - t) * fs[i];
    }
    grad
}

/// Normalizes trust scores into aggregation weights summing to 1.
pub fn normalized_weights(scores: &[f64]) -> Vec<f64> {
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| s / total).collect()
}

/// True/false positive rates of threshold-based adversary detection:
/// an agent is flagged when its score falls below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub tpr: f64,
    pub fpr: f64,
}

pub fn detection_metrics(
    scores: &[f64],
    adversarial: &[bool],
    threshold: f64,
) -> Result<DetectionRates, TrustError> {
    if scores.len() != adversarial.len() {
        return Err(TrustError::LengthMismatch {
            left: "scores",
            left_len: scores.len(),
            right: "labels",
            right_len: adversarial.len(),
        });
    }
    let n_adv = adversarial.iter().filter(|&&a| a).count();
    let n_ben = adversarial.len() - n_adv;
    if n_adv == 0 {
        return Err(TrustError::UndefinedRate {
            class: "adversarial",
        });
    }
    if n_ben == 0 {
        return Err(TrustError::UndefinedRate { class: "benign" });
    }
    let flagged_adv = scores
        .iter()
        .zip(adversarial.iter())
        .filter(|(s, &a)| a && **s < threshold)
        .count();
    let flagged_ben = scores
        .iter()
        .zip(adversarial.iter())
        .filter(|(s, &a)| !a && **s < threshold)
        .count();
    Ok(DetectionRates {
        tpr: flagged_adv as f64 / n_adv as f64,
        fpr: flagged_ben as f64 / n_ben as f64,
    })
}

/// Inputs for one agent's feature extraction over a window.
pub struct AgentWindow<'a> {
    pub records: &'a [AgentRecord],
    pub pnl: &'a [f64],
}

/// Computes all four features for every agent in a population over aligned
/// windows. `peg_abs` is the |peg deviation| series spanning the window
/// plus one trailing step.
pub fn compute_features(
    windows: &[AgentWindow<'_>],
    peg_abs: &[f64],
    params: &TrustParams,
) -> Result<Vec<TrustFeatures>, TrustError> {
    let record_windows: Vec<Vec<AgentRecord>> =
        windows.iter().map(|w| w.records.to_vec()).collect();
    let embeddings = embed_histories(&record_windows, params.embed_dim);
    let mut out = Vec::with_capacity(windows.len());
    for (idx, w) in windows.iter().enumerate() {
        let consistency = feature_consistency(w.records)?;
        let profitability = feature_profitability(w.records, w.pnl)?;
        let similarity = feature_similarity(idx, &embeddings);
        let destabilization = feature_destabilization(w.records, peg_abs)?;
        out.push(TrustFeatures {
            consistency,
            profitability,
            similarity,
            destabilization,
        });
    }
    Ok(out)
}

/// Scores a population's features into reports with normalized weights.
pub fn build_reports(
    run_id: u64,
    step: u32,
    features: &[TrustFeatures],
    labels: &[bool],
    params: &TrustParams,
) -> Result<Vec<TrustReport>, TrustError> {
    if features.len() != labels.len() {
        return Err(TrustError::LengthMismatch {
            left: "features",
            left_len: features.len(),
            right: "labels",
            right_len: labels.len(),
        });
    }
    let scores: Vec<f64> = features.iter().map(|f| trust_score(f, params)).collect();
    let weights = normalized_weights(&scores);
    Ok(features
        .iter()
        .enumerate()
        .map(|(i, f)| TrustReport {
            run_id,
            step,
            agent: i,
            f1: f.consistency,
            f2: f.profitability,
            f3: f.similarity,
            f4: f.destabilization,
            score: scores[i],
            weight: weights[i],
            label: labels[i],
        })
        .collect())
}

/// Writes trust reports as CSV with one row per (run, step, agent).
pub fn write_reports_csv<W: std::io::Write>(
    writer: W,
    reports: &[TrustReport],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "run_id", "step", "agent", "f1", "f2", "f3", "f4", "score", "weight", "label",
    ])?;
    for r in reports {
        w.write_record([
            r.run_id.to_string(),
            r.step.to_string(),
            r.agent.to_string(),
            r.f1.to_string(),
            r.f2.to_string(),
            r.f3.to_string(),
            r.f4.to_string(),
            r.score.to_string(),
            r.weight.to_string(),
            r.label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
