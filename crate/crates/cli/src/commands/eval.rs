//! `evib eval`: ID calibration report for a trained checkpoint.
//!
//! Loads a checkpoint and a test set, scores every sample, and writes
//! `eval_report.json` (accuracy, ECE, NLL, per-bin stats) plus
//! `reliability.csv` for plotting. `--zeta` applies the post-hoc
//! concentration adjustment alpha_j - zeta * sigma_j before scoring;
//! positive zeta tempers overconfident predictions by discounting noisy
//! evidence, negative zeta sharpens underconfident ones. Zeta 0 skips the
//! adjustment entirely and equals omitting the flag.

use std::path::PathBuf;

use clap::Args;
use evib_core::data::{read_dataset, SplitTag};
use evib_core::metrics::{
    argmax_lowest_tie, ece, posthoc_zeta_adjust, reliability_curve_export, ScoredPrediction,
    DEFAULT_BIN_COUNT,
};
use evib_core::model::{load_checkpoint, DualHeadModel};
use evib_core::trainer::{predict_batch, score_prediction, TrainConfig, TrainMode};
use evib_core::{EvibError, Result};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::runcfg::{load_file_config, parse_mode, resolve, resolve_opt, write_resolved};

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint JSON from `evib train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Test dataset (JSONL).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Inference mode matching the checkpoint: ib_edl, edl, or map.
    #[arg(long)]
    mode: Option<String>,
    /// Monte-Carlo samples for ib_edl inference.
    #[arg(long)]
    k: Option<usize>,
    /// Evidence offset (must match training).
    #[arg(long)]
    eta: Option<f64>,
    /// Seed for the ib_edl inference draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Calibration bin count.
    #[arg(long)]
    bins: Option<usize>,
    /// Post-hoc concentration adjustment strength.
    #[arg(long)]
    zeta: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config file mirroring these flags; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    mode: Option<String>,
    k: Option<usize>,
    eta: Option<f64>,
    seed: Option<u64>,
    bins: Option<usize>,
    zeta: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    checkpoint: PathBuf,
    data: PathBuf,
    mode: TrainMode,
    k: usize,
    eta: f64,
    seed: u64,
    bins: usize,
    zeta: f64,
    out: PathBuf,
}

/// Scores a dataset through a checkpoint with optional zeta adjustment.
/// Shared with `ood-eval` and `sweep`.
pub fn score_checkpoint(
    model: &DualHeadModel,
    data: &evib_core::data::LabeledDataset,
    config: &TrainConfig,
    zeta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ScoredPrediction>> {
    if model.class_count() != data.class_count {
        return Err(EvibError::Config(format!(
            "checkpoint has {} classes but dataset has {}",
            model.class_count(),
            data.class_count
        )));
    }
    let outputs = predict_batch(model, &data.features, config, rng)?;
    let is_ood = data.split_tag == SplitTag::Ood;
    outputs
        .iter()
        .zip(&data.labels)
        .map(|(out, &label)| {
            if zeta == 0.0 {
                return Ok(score_prediction(out, label, is_ood));
            }
            let (alpha, sigma) = match (&out.alpha, &out.sigma) {
                (Some(a), Some(s)) => (a, s),
                _ => {
                    return Err(EvibError::Config(
                        "zeta adjustment needs an evidential mode with a noise head \
                         (ib_edl); this prediction has no concentration vector"
                            .into(),
                    ))
                }
            };
            let adjusted = posthoc_zeta_adjust(alpha.alpha(), sigma, zeta)?;
            Ok(ScoredPrediction {
                predicted_class: argmax_lowest_tie(&adjusted.probabilities),
                probabilities: adjusted.probabilities,
                true_class: label,
                uncertainty_mass: adjusted.uncertainty,
                sigma_sum: sigma.iter().sum(),
                is_ood,
            })
        })
        .collect()
}

pub fn run(args: EvalArgs) -> Result<()> {
    let file: FileConfig = load_file_config(&args.config)?;
    let mode = match resolve_opt(args.mode, file.mode) {
        Some(s) => parse_mode(&s)?,
        None => TrainMode::IbEdl,
    };
    let defaults = TrainConfig::new(mode);
    let resolved = Resolved {
        checkpoint: resolve_opt(args.checkpoint, file.checkpoint).ok_or_else(|| {
            EvibError::Config("--checkpoint is required (flag or config file)".into())
        })?,
        data: resolve_opt(args.data, file.data)
            .ok_or_else(|| EvibError::Config("--data is required (flag or config file)".into()))?,
        mode,
        k: resolve(args.k, file.k, defaults.k),
        eta: resolve(args.eta, file.eta, defaults.eta),
        seed: resolve(args.seed, file.seed, 0),
        bins: resolve(args.bins, file.bins, DEFAULT_BIN_COUNT),
        zeta: resolve(args.zeta, file.zeta, 0.0),
        out: resolve_opt(args.out, file.out)
            .ok_or_else(|| EvibError::Config("--out is required (flag or config file)".into()))?,
    };
    write_resolved(&resolved.out, "eval_config.json", &resolved)?;

    let model = load_checkpoint(&resolved.checkpoint)?;
    let data = read_dataset(&resolved.data)?;
    let config = TrainConfig {
        k: resolved.k,
        eta: resolved.eta,
        seed: resolved.seed,
        ..TrainConfig::new(resolved.mode)
    };
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(resolved.seed);
    let scored = score_checkpoint(&model, &data, &config, resolved.zeta, &mut rng)?;

    let report = ece(&scored, resolved.bins)?;
    crate::runcfg::write_json(&resolved.out.join("eval_report.json"), &report)?;
    reliability_curve_export(&report, resolved.out.join("reliability.csv"))?;
    println!(
        "accuracy {:.4}, ece {:.4}, nll {:.4} over {} samples ({} bins)",
        report.accuracy,
        report.ece,
        report.nll,
        data.len(),
        resolved.bins
    );
    Ok(())
}
