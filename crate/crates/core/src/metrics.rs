//! Evaluation metrics: accuracy, negative log-likelihood, expected
//! calibration error with a frozen binning convention, rank-based AUROC,
//! OOD scores, and the post-hoc zeta adjustment of Dirichlet evidence.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EvibError, Result};

/// Default number of equal-width confidence bins for calibration.
pub const DEFAULT_BIN_COUNT: usize = 15;

/// Evidence floor for the post-hoc zeta adjustment: adjusted concentrations
/// must stay strictly above this value.
pub const ZETA_ETA_FLOOR: f64 = 1.0;

/// One scored prediction, as consumed by every metric in this module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    /// Predicted class probabilities; must sum to 1 within 1e-9.
    pub probabilities: Vec<f64>,
    /// Argmax of `probabilities` (ties resolved to the lowest index).
    pub predicted_class: usize,
    /// Ground-truth label.
    pub true_class: usize,
    /// Dirichlet uncertainty mass u; 0.0 for models without one.
    pub uncertainty_mass: f64,
    /// Total predicted noise scale; 0.0 for models without one.
    pub sigma_sum: f64,
    /// Whether the sample came from the OOD split.
    pub is_ood: bool,
}

/// Index of the largest entry; ties resolve to the lowest index.
///
/// This is the tie-break convention used everywhere a class is picked
/// from a score vector.
pub fn argmax_lowest_tie(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn require_nonempty(preds: &[ScoredPrediction]) -> Result<()> {
    if preds.is_empty() {
        return Err(EvibError::Empty("metric needs at least one prediction".into()));
    }
    Ok(())
}

fn validate_simplex(preds: &[ScoredPrediction]) -> Result<()> {
    for (i, p) in preds.iter().enumerate() {
        let sum: f64 = p.probabilities.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > 1e-9 {
            return Err(EvibError::Input(format!(
                "prediction {i}: probabilities sum to {sum}, expected 1 within 1e-9"
            )));
        }
        if p.true_class >= p.probabilities.len() {
            return Err(EvibError::Input(format!(
                "prediction {i}: true class {} outside [0, {})",
                p.true_class,
                p.probabilities.len()
            )));
        }
    }
    Ok(())
}

/// Fraction of predictions whose predicted class equals the true class.
pub fn accuracy(preds: &[ScoredPrediction]) -> Result<f64> {
    require_nonempty(preds)?;
    let correct = preds
        .iter()
        .filter(|p| p.predicted_class == p.true_class)
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Mean negative log-likelihood with an explicit count of samples whose
/// true-class probability was exactly zero (those drive the value to
/// positive infinity rather than erroring).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllMetric {
    /// Mean of -ln p(true class); +inf if any such probability is zero.
    pub value: f64,
    /// Number of samples with zero probability at the true class.
    pub zero_probability_count: usize,
}

/// Mean negative log-likelihood of the true class.
pub fn nll_metric(preds: &[ScoredPrediction]) -> Result<NllMetric> {
    require_nonempty(preds)?;
    validate_simplex(preds)?;
    let mut total = 0.0;
    let mut zeros = 0;
    for p in preds {
        let prob = p.probabilities[p.true_class];
        if prob <= 0.0 {
            zeros += 1;
        } else {
            total -= prob.ln();
        }
    }
    Ok(NllMetric {
        value: if zeros > 0 { f64::INFINITY } else { total / preds.len() as f64 },
        zero_probability_count: zeros,
    })
}

/// Statistics for one confidence bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    /// Inclusive lower edge for the first bin, exclusive otherwise.
    pub lower: f64,
    /// Inclusive upper edge.
    pub upper: f64,
    /// Samples assigned to the bin.
    pub count: usize,
    /// Mean max-probability confidence; absent for empty bins.
    pub mean_confidence: Option<f64>,
    /// Fraction of correct predictions; absent for empty bins.
    pub mean_accuracy: Option<f64>,
}

/// Accuracy, expected calibration error, and NLL over one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub accuracy: f64,
    pub ece: f64,
    pub nll: f64,
    pub bin_count: usize,
    pub bins: Vec<BinStat>,
}

/// Bin index for a confidence under the frozen convention: B equal-width
/// bins, the first closed `[0, 1/B]`, the rest half-open `(i/B, (i+1)/B]`;
/// confidence 1.0 lands in the last bin.
fn bin_index(confidence: f64, bin_count: usize) -> usize {
    let scaled = (confidence * bin_count as f64).ceil() as usize;
    scaled.saturating_sub(1).min(bin_count - 1)
}

/// Expected calibration error with `bin_count` equal-width bins over the
/// max-probability confidence. Empty bins contribute zero.
pub fn ece(preds: &[ScoredPrediction], bin_count: usize) -> Result<CalibrationReport> {
    if bin_count < 1 {
        return Err(EvibError::Config(format!(
            "bin_count must be at least 1, got {bin_count}"
        )));
    }
    require_nonempty(preds)?;
    validate_simplex(preds)?;

    let mut counts = vec![0usize; bin_count];
    let mut conf_sums = vec![0.0f64; bin_count];
    let mut correct = vec![0usize; bin_count];
    for p in preds {
        let conf = mp_score(p);
        let b = bin_index(conf, bin_count);
        counts[b] += 1;
        conf_sums[b] += conf;
        if p.predicted_class == p.true_class {
            correct[b] += 1;
        }
    }

    let n = preds.len() as f64;
    let mut ece_value = 0.0;
    let mut bins = Vec::with_capacity(bin_count);
    for b in 0..bin_count {
        let lower = b as f64 / bin_count as f64;
        let upper = (b + 1) as f64 / bin_count as f64;
        if counts[b] == 0 {
            bins.push(BinStat { lower, upper, count: 0, mean_confidence: None, mean_accuracy: None });
            continue;
        }
        let mean_conf = conf_sums[b] / counts[b] as f64;
        let mean_acc = correct[b] as f64 / counts[b] as f64;
        ece_value += counts[b] as f64 / n * (mean_acc - mean_conf).abs();
        bins.push(BinStat {
            lower,
            upper,
            count: counts[b],
            mean_confidence: Some(mean_conf),
            mean_accuracy: Some(mean_acc),
        });
    }

    Ok(CalibrationReport {
        accuracy: accuracy(preds)?,
        ece: ece_value,
        nll: nll_metric(preds)?.value,
        bin_count,
        bins,
    })
}

/// Area under the ROC curve for separating ID (flag true) from OOD
/// (flag false) by score, where higher scores should indicate ID.
///
/// Computed exactly from average ranks, so tied scores contribute 1/2;
/// O(n log n). A single-class flag vector is degenerate.
pub fn auroc(scores: &[f64], id_flags: &[bool]) -> Result<f64> {
    if scores.len() != id_flags.len() {
        return Err(EvibError::Dimension(format!(
            "{} scores vs {} flags",
            scores.len(),
            id_flags.len()
        )));
    }
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(EvibError::Input(format!("score {i} is not finite: {s}")));
        }
    }
    let n_id = id_flags.iter().filter(|&&f| f).count();
    let n_ood = id_flags.len() - n_id;
    if n_id == 0 || n_ood == 0 {
        return Err(EvibError::Degenerate(format!(
            "AUROC needs both classes, got {n_id} ID and {n_ood} OOD samples"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Average ranks over tie groups (ranks are 1-based).
    let mut id_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            if id_flags[idx] {
                id_rank_sum += avg_rank;
            }
        }
        start = end;
    }

    let n_id_f = n_id as f64;
    Ok((id_rank_sum - n_id_f * (n_id_f + 1.0) / 2.0) / (n_id_f * n_ood as f64))
}

/// Max-probability confidence score (higher = more ID-like).
pub fn mp_score(pred: &ScoredPrediction) -> f64 {
    pred.probabilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Inverse uncertainty-mass score 1/u (higher = more ID-like).
pub fn um_score(pred: &ScoredPrediction) -> Result<f64> {
    if pred.uncertainty_mass <= 0.0 {
        return Err(EvibError::Domain(format!(
            "uncertainty mass must be positive for the UM score, got {}",
            pred.uncertainty_mass
        )));
    }
    Ok(1.0 / pred.uncertainty_mass)
}

/// Result of the post-hoc zeta adjustment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZetaAdjusted {
    /// Adjusted concentrations alpha_j - zeta * sigma_j.
    pub alpha: Vec<f64>,
    /// Expected probabilities under the adjusted concentrations.
    pub probabilities: Vec<f64>,
    /// Uncertainty mass C / alpha0 under the adjusted concentrations.
    pub uncertainty: f64,
}

/// Shifts each concentration by `-zeta * sigma_j` to fold predicted noise
/// into the evidence. Every adjusted concentration must remain strictly
/// above [`ZETA_ETA_FLOOR`].
pub fn posthoc_zeta_adjust(alpha: &[f64], sigma: &[f64], zeta: f64) -> Result<ZetaAdjusted> {
    if alpha.is_empty() {
        return Err(EvibError::Empty("zeta adjustment needs at least one class".into()));
    }
    if alpha.len() != sigma.len() {
        return Err(EvibError::Dimension(format!(
            "{} concentrations vs {} noise scales",
            alpha.len(),
            sigma.len()
        )));
    }
    let mut adjusted = Vec::with_capacity(alpha.len());
    for (j, (&a, &s)) in alpha.iter().zip(sigma).enumerate() {
        let v = a - zeta * s;
        if !(v > ZETA_ETA_FLOOR) {
            return Err(EvibError::AdjustmentOverflow(format!(
                "coordinate {j}: adjusted concentration {v} is not above the floor {ZETA_ETA_FLOOR}"
            )));
        }
        adjusted.push(v);
    }
    let total: f64 = adjusted.iter().sum();
    Ok(ZetaAdjusted {
        probabilities: adjusted.iter().map(|&a| a / total).collect(),
        uncertainty: alpha.len() as f64 / total,
        alpha: adjusted,
    })
}

/// Writes a reliability curve as CSV with the header
/// `bin_lower,bin_upper,count,mean_confidence,mean_accuracy`.
/// Empty bins appear with count 0 and empty mean fields.
pub fn reliability_curve_export(report: &CalibrationReport, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("bin_lower,bin_upper,count,mean_confidence,mean_accuracy\n");
    for bin in &report.bins {
        let conf = bin.mean_confidence.map(|v| v.to_string()).unwrap_or_default();
        let acc = bin.mean_accuracy.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            bin.lower, bin.upper, bin.count, conf, acc
        ));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
