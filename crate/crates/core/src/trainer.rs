//! Training and inference for the three model families: the variational
//! information-bottleneck evidential model (`ib_edl`), deterministic
//! evidential learning (`edl`), and a maximum-likelihood softmax baseline
//! (`map`).
//!
//! Training builds one autodiff graph per mini-batch, clips the global
//! gradient norm, and applies Adam. Batches are contiguous slices of the
//! dataset in its stored order (callers shuffle when generating splits),
//! with a final partial batch when the size does not divide evenly; this
//! keeps runs bit-reproducible for a given seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    clip_gradient_norm, cosine_lr, optimizer_step, zero_gradients, Node, OptimizerState,
};
use crate::data::{LabeledDataset, SplitTag};
use crate::error::{EvibError, Result};
use crate::evidential::{
    alpha_from_pre_evidence, expected_probabilities, DirichletBelief, OneHotTarget, PreEvidence,
    DEFAULT_ETA,
};
use crate::losses::{edl_total, ib_total, mle_nll, BaseLoss, LossValue};
use crate::metrics::{argmax_lowest_tie, ScoredPrediction};
use crate::model::DualHeadModel;
use crate::tensor::Tensor;

/// Default Monte-Carlo sample count K for the variational objective.
pub const DEFAULT_K: usize = 20;
/// Default learning rate.
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
/// Default number of training epochs.
pub const DEFAULT_EPOCHS: usize = 500;
/// Default mini-batch size.
pub const DEFAULT_BATCH_SIZE: usize = 32;
/// Default global gradient-norm clip threshold.
pub const DEFAULT_CLIP_NORM: f64 = 20.0;

/// Which objective the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Variational objective: sampled Bayes-risk MSE plus beta times the
    /// Gaussian prior KL, through both heads.
    IbEdl,
    /// Deterministic evidential objective: Bayes-risk MSE plus lambda
    /// times the Dirichlet KL regularizer, through the mean head only.
    Edl,
    /// Maximum-likelihood softmax cross-entropy baseline.
    Map,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::IbEdl => "ib_edl",
            TrainMode::Edl => "edl",
            TrainMode::Map => "map",
        })
    }
}

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_learning_rate() -> f64 {
    DEFAULT_LEARNING_RATE
}
fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_clip_norm() -> f64 {
    DEFAULT_CLIP_NORM
}
fn default_schedule() -> Schedule {
    Schedule::Constant
}

/// Full training/inference configuration.
///
/// Unknown fields are rejected when deserializing so that typos in config
/// files fail loudly instead of silently using defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Weight on the Gaussian prior KL (ib_edl only).
    #[serde(default)]
    pub beta: f64,
    /// Weight on the Dirichlet KL regularizer (edl only).
    #[serde(default)]
    pub lambda: f64,
    /// Evidence offset eta added to SoftPlus outputs.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Monte-Carlo samples per forward pass (ib_edl only).
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Global gradient-norm clip threshold.
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// Diagnostic knob: when set, the noise head is replaced by this
    /// constant everywhere (training and prediction), cutting all
    /// gradients to it. Useful for checking that ib_edl with beta = 0 and
    /// a tiny frozen sigma reproduces the deterministic edl objective.
    #[serde(default)]
    pub sigma_freeze: Option<f64>,
}

impl TrainConfig {
    /// Configuration with every field at its default for the given mode.
    pub fn new(mode: TrainMode) -> Self {
        TrainConfig {
            mode,
            beta: 0.0,
            lambda: 0.0,
            eta: default_eta(),
            k: default_k(),
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            clip_norm: default_clip_norm(),
            seed: 0,
            schedule: default_schedule(),
            sigma_freeze: None,
        }
    }

    /// Checks hard constraints and returns soft warnings for fields that
    /// the selected mode ignores.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.beta >= 0.0) {
            return Err(EvibError::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0) {
            return Err(EvibError::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(EvibError::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.k < 1 {
            return Err(EvibError::Config("k must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(EvibError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(EvibError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(EvibError::Config("batch_size must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) || !self.clip_norm.is_finite() {
            return Err(EvibError::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if let Some(s) = self.sigma_freeze {
            if !(s > 0.0) || !s.is_finite() {
                return Err(EvibError::Config(format!(
                    "sigma_freeze must be positive when set, got {s}"
                )));
            }
        }

        let mut warnings = Vec::new();
        if self.mode != TrainMode::IbEdl && self.beta != 0.0 {
            warnings.push(format!("beta = {} is ignored in {} mode", self.beta, self.mode));
        }
        if self.mode != TrainMode::Edl && self.lambda != 0.0 {
            warnings.push(format!("lambda = {} is ignored in {} mode", self.lambda, self.mode));
        }
        if self.mode == TrainMode::Map && self.eta != DEFAULT_ETA {
            warnings.push(format!("eta = {} is ignored in map mode", self.eta));
        }
        if self.mode != TrainMode::IbEdl && self.k != DEFAULT_K {
            warnings.push(format!("k = {} is ignored in {} mode", self.k, self.mode));
        }
        if self.mode != TrainMode::IbEdl && self.sigma_freeze.is_some() {
            warnings.push(format!("sigma_freeze is ignored in {} mode", self.mode));
        }
        Ok(warnings)
    }
}

/// Loss summary for one epoch (means over the epoch's batches).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    /// Named loss components, keyed by the stable component names.
    pub components: BTreeMap<String, f64>,
    /// Mean global gradient norm before clipping.
    pub grad_norm_preclip: f64,
}

/// Per-epoch training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    /// Soft configuration warnings emitted before training started.
    pub warnings: Vec<String>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// Total loss of the final epoch.
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map(|e| e.loss_total).unwrap_or(f64::NAN)
    }

    /// Serializes the per-epoch records as JSON lines.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for record in &self.epochs {
            out.push_str(&serde_json::to_string(record).map_err(std::io::Error::from)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes the per-epoch records to a JSON-lines file.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }
}

/// Checks the dataset against the model and builds per-batch constants.
fn prepare_batches(
    model: &DualHeadModel,
    data: &LabeledDataset,
    batch_size: usize,
) -> Result<Vec<(Tensor, Vec<OneHotTarget>)>> {
    if data.is_empty() {
        return Err(EvibError::Empty("training data has no samples".into()));
    }
    if data.dim() != model.input_dim() {
        return Err(EvibError::Dimension(format!(
            "data dimension {} does not match model input dimension {}",
            data.dim(),
            model.input_dim()
        )));
    }
    if data.class_count != model.class_count() {
        return Err(EvibError::Dimension(format!(
            "data has {} classes but the model predicts {}",
            data.class_count,
            model.class_count()
        )));
    }
    for (i, &label) in data.labels.iter().enumerate() {
        if label >= data.class_count {
            return Err(EvibError::Data(format!(
                "label {label} at sample {i} outside [0, {})",
                data.class_count
            )));
        }
    }

    let d = data.dim();
    let mut batches = Vec::new();
    let mut start = 0;
    while start < data.len() {
        let end = (start + batch_size).min(data.len());
        let mut rows = Vec::with_capacity((end - start) * d);
        let mut targets = Vec::with_capacity(end - start);
        for i in start..end {
            rows.extend_from_slice(data.features.row_slice(i));
            targets.push(OneHotTarget::new(data.labels[i], data.class_count)?);
        }
        batches.push((Tensor::from_vec(end - start, d, rows), targets));
        start = end;
    }
    Ok(batches)
}

/// Builds the mode-specific batch loss.
fn batch_loss(
    model: &DualHeadModel,
    features: &Tensor,
    targets: &[OneHotTarget],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossValue> {
    let x = Node::constant(features.clone());
    match config.mode {
        TrainMode::IbEdl => {
            let (mu, sigma) = model.forward_dual(&x)?;
            let sigma = match config.sigma_freeze {
                Some(s) => Node::constant(Tensor::full(features.rows(), model.class_count(), s)),
                None => sigma,
            };
            ib_total(&mu, &sigma, targets, config.beta, config.eta, config.k, rng)
        }
        TrainMode::Edl => {
            let pre = model.forward_mu(&x)?;
            let alpha = pre.softplus().add(&Node::constant(Tensor::scalar(config.eta)))?;
            edl_total(&alpha, targets, config.lambda, BaseLoss::Mse)
        }
        TrainMode::Map => {
            let logits = model.forward_mu(&x)?;
            mle_nll(&logits, targets)
        }
    }
}

/// Trains the model in place and returns the per-epoch loss trace.
///
/// Runs are deterministic: the same model seed, data, and configuration
/// produce bit-identical parameters and reports.
pub fn train(
    model: &mut DualHeadModel,
    data: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let warnings = config.validate()?;
    let batches = prepare_batches(model, data, config.batch_size)?;
    let params = model.params();
    let mut optimizer = OptimizerState::adam(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    zero_gradients(&params);

    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = match config.schedule {
            Schedule::Constant => config.learning_rate,
            Schedule::Cosine => {
                cosine_lr(config.learning_rate, epoch as u64, config.epochs as u64)
            }
        };
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut component_sums: BTreeMap<String, f64> = BTreeMap::new();
        for (batch_index, (features, targets)) in batches.iter().enumerate() {
            let loss = batch_loss(model, features, targets, config, &mut rng).map_err(|e| {
                EvibError::Numerical(format!(
                    "aborting at epoch {epoch}, batch {batch_index}: {e}"
                ))
            })?;
            let total = loss.total();
            if !total.is_finite() {
                return Err(EvibError::Numerical(format!(
                    "aborting at epoch {epoch}, batch {batch_index}: loss is {total}"
                )));
            }
            loss.node.backward()?;
            let grad_norm = clip_gradient_norm(&params, config.clip_norm);
            if !grad_norm.is_finite() {
                return Err(EvibError::Numerical(format!(
                    "aborting at epoch {epoch}, batch {batch_index}: gradient norm is {grad_norm}"
                )));
            }
            optimizer_step(&params, &mut optimizer, lr)?;
            zero_gradients(&params);

            loss_sum += total;
            norm_sum += grad_norm;
            for (name, value) in &loss.components {
                *component_sums.entry(name.clone()).or_insert(0.0) += value;
            }
        }
        let batch_count = batches.len() as f64;
        records.push(EpochRecord {
            epoch,
            loss_total: loss_sum / batch_count,
            components: component_sums
                .into_iter()
                .map(|(name, sum)| (name, sum / batch_count))
                .collect(),
            grad_norm_preclip: norm_sum / batch_count,
        });
    }

    Ok(TrainReport { mode: config.mode, warnings, epochs: records })
}

/// One model prediction.
///
/// `alpha` and `uncertainty_mass` are absent for the map baseline, which
/// has no evidential interpretation; `sigma` is present only for ib_edl.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionOutput {
    pub alpha: Option<DirichletBelief>,
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
    pub uncertainty_mass: Option<f64>,
    /// Mean-head output (pre-evidence, or logits in map mode).
    pub mu: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

/// Numerically stable softmax of one logit row.
fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Predicts for every row of `features`.
///
/// In ib_edl mode this draws K pre-evidence samples per input, averages
/// them first, and only then applies SoftPlus and the eta offset (noise
/// draws are row-major per sample, so results are reproducible for a
/// given generator state). The edl and map modes are deterministic single
/// passes and never touch the generator.
pub fn predict_batch(
    model: &DualHeadModel,
    features: &Tensor,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PredictionOutput>> {
    config.validate()?;
    let rows = features.rows();
    let cols = model.class_count();
    let x = Node::constant(features.clone());
    let mut outputs = Vec::with_capacity(rows);

    match config.mode {
        TrainMode::IbEdl => {
            let (mu, sigma) = model.forward_dual(&x)?;
            let mu = mu.value_clone();
            let sigma = match config.sigma_freeze {
                Some(s) => Tensor::full(rows, cols, s),
                None => sigma.value_clone(),
            };
            let mut mean_pre = Tensor::zeros(rows, cols);
            for _ in 0..config.k {
                for idx in 0..rows * cols {
                    let noise: f64 = StandardNormal.sample(rng);
                    mean_pre.data_mut()[idx] += mu.data()[idx] + sigma.data()[idx] * noise;
                }
            }
            mean_pre.scale_assign(1.0 / config.k as f64);
            for i in 0..rows {
                let pre = PreEvidence::new(mean_pre.row_slice(i).to_vec());
                let belief = alpha_from_pre_evidence(&pre, config.eta)?;
                let probabilities = expected_probabilities(&belief);
                let uncertainty = cols as f64 / belief.alpha0();
                outputs.push(PredictionOutput {
                    predicted_class: argmax_lowest_tie(&probabilities),
                    alpha: Some(belief),
                    probabilities,
                    uncertainty_mass: Some(uncertainty),
                    mu: mu.row_slice(i).to_vec(),
                    sigma: Some(sigma.row_slice(i).to_vec()),
                });
            }
        }
        TrainMode::Edl => {
            let pre = model.forward_mu(&x)?.value_clone();
            for i in 0..rows {
                let belief = alpha_from_pre_evidence(
                    &PreEvidence::new(pre.row_slice(i).to_vec()),
                    config.eta,
                )?;
                let probabilities = expected_probabilities(&belief);
                let uncertainty = cols as f64 / belief.alpha0();
                outputs.push(PredictionOutput {
                    predicted_class: argmax_lowest_tie(&probabilities),
                    alpha: Some(belief),
                    probabilities,
                    uncertainty_mass: Some(uncertainty),
                    mu: pre.row_slice(i).to_vec(),
                    sigma: None,
                });
            }
        }
        TrainMode::Map => {
            let logits = model.forward_mu(&x)?.value_clone();
            for i in 0..rows {
                let probabilities = softmax_row(logits.row_slice(i));
                outputs.push(PredictionOutput {
                    predicted_class: argmax_lowest_tie(&probabilities),
                    alpha: None,
                    probabilities,
                    uncertainty_mass: None,
                    mu: logits.row_slice(i).to_vec(),
                    sigma: None,
                });
            }
        }
    }
    Ok(outputs)
}

/// Predicts for a single input vector.
pub fn predict(
    model: &DualHeadModel,
    x: &[f64],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PredictionOutput> {
    let mut outputs = predict_batch(model, &Tensor::row(x), config, rng)?;
    Ok(outputs.remove(0))
}

/// Converts a prediction into the record consumed by the metrics layer.
/// Models without an uncertainty mass or noise head score those fields 0.
pub fn score_prediction(
    output: &PredictionOutput,
    true_class: usize,
    is_ood: bool,
) -> ScoredPrediction {
    ScoredPrediction {
        probabilities: output.probabilities.clone(),
        predicted_class: output.predicted_class,
        true_class,
        uncertainty_mass: output.uncertainty_mass.unwrap_or(0.0),
        sigma_sum: output
            .sigma
            .as_ref()
            .map(|s| s.iter().sum())
            .unwrap_or(0.0),
        is_ood,
    }
}

/// Predicts a whole dataset and pairs each output with its true label.
/// Samples are marked OOD when the dataset carries the OOD split tag.
pub fn score_dataset(
    model: &DualHeadModel,
    data: &LabeledDataset,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ScoredPrediction>> {
    let outputs = predict_batch(model, &data.features, config, rng)?;
    Ok(outputs
        .iter()
        .zip(&data.labels)
        .map(|(out, &label)| score_prediction(out, label, data.split_tag == SplitTag::Ood))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_clusters, ClusterSpec};
    use crate::evidential::{pipeline_call_count, reset_pipeline_call_count};
    use crate::model::build_model;
    use approx::assert_abs_diff_eq;

    fn two_class_data(scale: f64, samples_per_class: usize, seed: u64) -> LabeledDataset {
        generate_clusters(&ClusterSpec {
            class_count: 2,
            dim: 2,
            means: vec![vec![-2.0, 0.0], vec![2.0, 0.0]],
            scale,
            samples_per_class,
            seed,
        })
        .unwrap()
    }

    fn small_config(mode: TrainMode) -> TrainConfig {
        TrainConfig {
            epochs: 40,
            k: 4,
            learning_rate: 0.02,
            ..TrainConfig::new(mode)
        }
    }

    #[test]
    fn config_validation_and_warnings() {
        let config = TrainConfig::new(TrainMode::IbEdl);
        assert!(config.validate().unwrap().is_empty());
        assert_eq!(config.eta, 1.0);
        assert_eq!(config.k, 20);
        assert_eq!(config.epochs, 500);
        assert_eq!(config.batch_size, 32);
        assert_eq!(config.clip_norm, 20.0);

        let bad = TrainConfig { beta: -0.1, ..TrainConfig::new(TrainMode::IbEdl) };
        assert!(matches!(bad.validate(), Err(EvibError::Config(_))));
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::new(TrainMode::Map) };
        assert!(matches!(bad.validate(), Err(EvibError::Config(_))));
        let bad = TrainConfig { sigma_freeze: Some(-1.0), ..TrainConfig::new(TrainMode::IbEdl) };
        assert!(matches!(bad.validate(), Err(EvibError::Config(_))));

        let noisy = TrainConfig {
            beta: 0.5,
            lambda: 0.1,
            sigma_freeze: Some(1e-8),
            ..TrainConfig::new(TrainMode::Map)
        };
        let warnings = noisy.validate().unwrap();
        assert_eq!(warnings.len(), 3);
        assert!(warnings[0].contains("beta"));
        assert!(warnings[1].contains("lambda"));
        assert!(warnings[2].contains("sigma_freeze"));
    }

    #[test]
    fn config_file_round_trip_rejects_unknown_keys() {
        let parsed: TrainConfig =
            serde_json::from_str("{\"mode\":\"ib_edl\",\"beta\":0.001}").unwrap();
        assert_eq!(parsed.mode, TrainMode::IbEdl);
        assert_eq!(parsed.beta, 0.001);
        assert_eq!(parsed.k, DEFAULT_K);
        assert_eq!(parsed.schedule, Schedule::Constant);

        let err = serde_json::from_str::<TrainConfig>("{\"mode\":\"map\",\"betta\":0.1}");
        assert!(err.is_err());
    }

    #[test]
    fn map_training_fits_separable_data() {
        let data = two_class_data(0.3, 10, 3);
        let mut model = build_model(&[2, 8], 2, 11).unwrap();
        let config = TrainConfig {
            epochs: 300,
            learning_rate: 0.05,
            ..TrainConfig::new(TrainMode::Map)
        };
        let report = train(&mut model, &data, &config).unwrap();
        assert_eq!(report.epochs.len(), 300);
        assert!(report.final_loss() < report.epochs[0].loss_total);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scored = score_dataset(&model, &data, &config, &mut rng).unwrap();
        let accuracy = crate::metrics::accuracy(&scored).unwrap();
        assert_abs_diff_eq!(accuracy, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn training_is_deterministic() {
        let data = two_class_data(0.6, 8, 4);
        let config = TrainConfig {
            beta: 1e-3,
            epochs: 10,
            k: 4,
            schedule: Schedule::Cosine,
            ..TrainConfig::new(TrainMode::IbEdl)
        };
        let mut model_a = build_model(&[2, 8], 2, 21).unwrap();
        let report_a = train(&mut model_a, &data, &config).unwrap();
        let mut model_b = build_model(&[2, 8], 2, 21).unwrap();
        let report_b = train(&mut model_b, &data, &config).unwrap();
        assert_eq!(report_a, report_b);

        let mut rng_a = ChaCha8Rng::seed_from_u64(5);
        let mut rng_b = ChaCha8Rng::seed_from_u64(5);
        let preds_a = predict_batch(&model_a, &data.features, &config, &mut rng_a).unwrap();
        let preds_b = predict_batch(&model_b, &data.features, &config, &mut rng_b).unwrap();
        assert_eq!(preds_a, preds_b);
    }

    #[test]
    fn prediction_averages_pre_evidence_before_softplus() {
        let model = build_model(&[2, 8], 2, 33).unwrap();
        let config = TrainConfig { k: 50, eta: 0.25, ..TrainConfig::new(TrainMode::IbEdl) };

        // At x = 0 the fresh model has mu = 0 and sigma = softplus(0) = ln 2
        // exactly, so the two orderings must disagree by a clear margin.
        let x = Tensor::row(&[0.0, 0.0]);
        let seed = 1234;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = predict(&model, &[0.0, 0.0], &config, &mut rng).unwrap();

        let node_x = Node::constant(x);
        let (mu, sigma) = model.forward_dual(&node_x).unwrap();
        let mu = mu.value_clone();
        let sigma = sigma.value_clone();
        let mut replay = ChaCha8Rng::seed_from_u64(seed);
        let mut mean_pre = vec![0.0; 2];
        let mut mean_alpha = vec![0.0; 2];
        for _ in 0..config.k {
            for j in 0..2 {
                let z: f64 = StandardNormal.sample(&mut replay);
                let pre = mu.data()[j] + sigma.data()[j] * z;
                mean_pre[j] += pre;
                mean_alpha[j] += crate::autodiff::softplus_scalar(pre) + config.eta;
            }
        }
        for j in 0..2 {
            mean_pre[j] /= config.k as f64;
            mean_alpha[j] /= config.k as f64;
        }

        let alpha = out.alpha.unwrap();
        for j in 0..2 {
            // Average-then-SoftPlus is what predict must compute.
            let expected = crate::autodiff::softplus_scalar(mean_pre[j]) + config.eta;
            assert_abs_diff_eq!(alpha.alpha()[j], expected, epsilon = 1e-12);
            // Averaging alpha instead lands measurably elsewhere.
            assert!((alpha.alpha()[j] - mean_alpha[j]).abs() > 1e-3);
        }
    }

    #[test]
    fn sigma_head_learns_unless_frozen() {
        let data = two_class_data(0.6, 8, 4);
        let mut model = build_model(&[2, 8], 2, 9).unwrap();
        let sigma_before = model.params()[4].node.value_clone();
        let config = TrainConfig {
            beta: 1e-2,
            epochs: 1,
            k: 4,
            ..TrainConfig::new(TrainMode::IbEdl)
        };
        train(&mut model, &data, &config).unwrap();
        let sigma_after = model.params()[4].node.value_clone();
        assert_ne!(sigma_before.data(), sigma_after.data());

        // Frozen sigma cuts every gradient to the noise head.
        let mut frozen = build_model(&[2, 8], 2, 9).unwrap();
        let frozen_before = frozen.params()[4].node.value_clone();
        let config = TrainConfig { sigma_freeze: Some(1e-3), ..config };
        train(&mut frozen, &data, &config).unwrap();
        let frozen_after = frozen.params()[4].node.value_clone();
        assert_eq!(frozen_before.data(), frozen_after.data());
    }

    #[test]
    fn map_mode_never_touches_the_evidential_pipeline() {
        let data = two_class_data(0.6, 6, 2);
        let mut model = build_model(&[2, 4], 2, 1).unwrap();
        let config = TrainConfig { epochs: 2, ..TrainConfig::new(TrainMode::Map) };

        reset_pipeline_call_count();
        train(&mut model, &data, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        predict_batch(&model, &data.features, &config, &mut rng).unwrap();
        assert_eq!(pipeline_call_count(), 0);

        // The evidential modes do use the pipeline.
        let config = TrainConfig { epochs: 2, ..TrainConfig::new(TrainMode::Edl) };
        predict_batch(&model, &data.features, &config, &mut rng).unwrap();
        assert!(pipeline_call_count() > 0);
    }

    #[test]
    fn ib_training_reduces_the_risk_component() {
        let data = two_class_data(0.5, 20, 6);
        let mut model = build_model(&[2, 8], 2, 17).unwrap();
        let config = TrainConfig { beta: 1e-3, ..small_config(TrainMode::IbEdl) };
        let report = train(&mut model, &data, &config).unwrap();
        let first = report.epochs.first().unwrap().components["ib_mse"];
        let last = report.epochs.last().unwrap().components["ib_mse"];
        assert!(last < first, "ib_mse should fall during training: {last} vs {first}");
    }

    #[test]
    fn large_beta_shrinks_the_mean_head() {
        let data = two_class_data(0.5, 20, 6);

        let mean_mu_norm = |model: &DualHeadModel| -> f64 {
            let x = Node::constant(data.features.clone());
            let (mu, _) = model.forward_dual(&x).unwrap();
            let mu = mu.value_clone();
            let mut total = 0.0;
            for i in 0..mu.rows() {
                total += mu.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            total / mu.rows() as f64
        };

        let mut free = build_model(&[2, 8], 2, 17).unwrap();
        train(&mut free, &data, &small_config(TrainMode::IbEdl)).unwrap();
        let mut constrained = build_model(&[2, 8], 2, 17).unwrap();
        let config = TrainConfig { beta: 1e3, ..small_config(TrainMode::IbEdl) };
        train(&mut constrained, &data, &config).unwrap();

        assert!(
            mean_mu_norm(&constrained) < mean_mu_norm(&free),
            "a large beta must shrink pre-evidence magnitudes"
        );
    }

    #[test]
    fn edl_mode_trains_and_reports_components() {
        let data = two_class_data(0.5, 10, 8);
        let mut model = build_model(&[2, 8], 2, 3).unwrap();
        let config = TrainConfig { lambda: 0.1, ..small_config(TrainMode::Edl) };
        let report = train(&mut model, &data, &config).unwrap();
        let record = report.epochs.last().unwrap();
        assert!(record.components.contains_key("mse"));
        assert!(record.components.contains_key("reg"));
        assert!(report.final_loss() < report.epochs[0].loss_total);
        assert!(record.grad_norm_preclip >= 0.0);
    }

    #[test]
    fn data_validation_errors() {
        let mut model = build_model(&[2, 4], 2, 1).unwrap();
        let config = TrainConfig { epochs: 1, ..TrainConfig::new(TrainMode::Map) };

        let mut bad = two_class_data(0.5, 4, 1);
        bad.labels[3] = 7;
        let err = train(&mut model, &bad, &config).unwrap_err();
        assert!(matches!(err, EvibError::Data(_)));

        let wrong_dim = generate_clusters(&ClusterSpec {
            class_count: 2,
            dim: 3,
            means: vec![vec![0.0; 3], vec![1.0; 3]],
            scale: 0.1,
            samples_per_class: 4,
            seed: 1,
        })
        .unwrap();
        assert!(matches!(
            train(&mut model, &wrong_dim, &config),
            Err(EvibError::Dimension(_))
        ));
    }

    #[test]
    fn non_finite_loss_aborts_with_batch_diagnostics() {
        let mut data = two_class_data(0.5, 4, 1);
        data.features.data_mut()[0] = f64::NAN;
        let mut model = build_model(&[2, 4], 2, 1).unwrap();
        let config = TrainConfig { epochs: 1, ..TrainConfig::new(TrainMode::Map) };
        let err = train(&mut model, &data, &config).unwrap_err();
        match err {
            EvibError::Numerical(msg) => {
                assert!(msg.contains("epoch 0"), "{msg}");
                assert!(msg.contains("batch 0"), "{msg}");
            }
            other => panic!("expected a numerical abort, got {other:?}"),
        }
    }

    #[test]
    fn partial_final_batches_are_trained() {
        let data = two_class_data(0.5, 5, 2); // 10 samples
        let mut model = build_model(&[2, 4], 2, 1).unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4, // batches of 4, 4, 2
            ..TrainConfig::new(TrainMode::Map)
        };
        let report = train(&mut model, &data, &config).unwrap();
        assert_eq!(report.epochs.len(), 2);
        assert!(report.final_loss().is_finite());
    }

    #[test]
    fn report_serializes_as_json_lines() {
        let data = two_class_data(0.5, 4, 1);
        let mut model = build_model(&[2, 4], 2, 1).unwrap();
        let config = TrainConfig { epochs: 3, ..TrainConfig::new(TrainMode::Map) };
        let report = train(&mut model, &data, &config).unwrap();
        let jsonl = report.to_jsonl().unwrap();
        let lines: Vec<&str> = jsonl.lines().collect();
        assert_eq!(lines.len(), 3);
        for (i, line) in lines.iter().enumerate() {
            let record: EpochRecord = serde_json::from_str(line).unwrap();
            assert_eq!(record.epoch, i);
            assert!(record.components.contains_key("mle_nll"));
        }
    }

    #[test]
    fn scored_predictions_fill_model_free_fields_with_zero() {
        let out = PredictionOutput {
            alpha: None,
            probabilities: vec![0.7, 0.3],
            predicted_class: 0,
            uncertainty_mass: None,
            mu: vec![1.0, -1.0],
            sigma: None,
        };
        let scored = score_prediction(&out, 1, true);
        assert_eq!(scored.uncertainty_mass, 0.0);
        assert_eq!(scored.sigma_sum, 0.0);
        assert!(scored.is_ood);
        assert_eq!(scored.true_class, 1);
    }
}
