//! `evib ood-eval`: out-of-distribution detection report.
//!
//! Scores an ID test set and an OOD set through one checkpoint, then
//! reports the AUROC of two ID-vs-OOD scores: max probability (MP, all
//! modes) and reciprocal uncertainty mass (UM, evidential modes). For a
//! map-mode checkpoint `auroc_um` is null, since a softmax model carries
//! no uncertainty mass. Both sets are drawn through the same seeded
//! generator, ID first, so reports are reproducible byte-for-byte.

use std::path::PathBuf;

use clap::Args;
use evib_core::data::read_dataset;
use evib_core::metrics::{auroc, mp_score, um_score};
use evib_core::model::load_checkpoint;
use evib_core::trainer::{TrainConfig, TrainMode};
use evib_core::{EvibError, Result};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commands::eval::score_checkpoint;
use crate::runcfg::{load_file_config, parse_mode, resolve, resolve_opt, write_resolved};

#[derive(Args)]
pub struct OodEvalArgs {
    /// Checkpoint JSON from `evib train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// In-distribution test dataset (JSONL).
    #[arg(long)]
    id_data: Option<PathBuf>,
    /// Out-of-distribution dataset (JSONL).
    #[arg(long)]
    ood_data: Option<PathBuf>,
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
    id_data: Option<PathBuf>,
    ood_data: Option<PathBuf>,
    mode: Option<String>,
    k: Option<usize>,
    eta: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    checkpoint: PathBuf,
    id_data: PathBuf,
    ood_data: PathBuf,
    mode: TrainMode,
    k: usize,
    eta: f64,
    seed: u64,
    out: PathBuf,
}

/// The report contract: `auroc_um` is null for modes without an
/// uncertainty mass.
#[derive(Serialize)]
struct OodReport {
    auroc_mp: f64,
    auroc_um: Option<f64>,
    n_id: usize,
    n_ood: usize,
}

pub fn run(args: OodEvalArgs) -> Result<()> {
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
        id_data: resolve_opt(args.id_data, file.id_data).ok_or_else(|| {
            EvibError::Config("--id-data is required (flag or config file)".into())
        })?,
        ood_data: resolve_opt(args.ood_data, file.ood_data).ok_or_else(|| {
            EvibError::Config("--ood-data is required (flag or config file)".into())
        })?,
        mode,
        k: resolve(args.k, file.k, defaults.k),
        eta: resolve(args.eta, file.eta, defaults.eta),
        seed: resolve(args.seed, file.seed, 0),
        out: resolve_opt(args.out, file.out)
            .ok_or_else(|| EvibError::Config("--out is required (flag or config file)".into()))?,
    };
    write_resolved(&resolved.out, "ood_eval_config.json", &resolved)?;

    let model = load_checkpoint(&resolved.checkpoint)?;
    let id = read_dataset(&resolved.id_data)?;
    let ood = read_dataset(&resolved.ood_data)?;
    let config = TrainConfig {
        k: resolved.k,
        eta: resolved.eta,
        seed: resolved.seed,
        ..TrainConfig::new(resolved.mode)
    };
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(resolved.seed);
    let id_scored = score_checkpoint(&model, &id, &config, 0.0, &mut rng)?;
    let ood_scored = score_checkpoint(&model, &ood, &config, 0.0, &mut rng)?;

    // Flag by provenance file, not by split tag, so a same-distribution
    // control (two ID files) still produces a well-defined AUROC.
    let flags: Vec<bool> = std::iter::repeat(true)
        .take(id_scored.len())
        .chain(std::iter::repeat(false).take(ood_scored.len()))
        .collect();
    let pooled: Vec<_> = id_scored.iter().chain(&ood_scored).collect();

    let mp: Vec<f64> = pooled.iter().map(|p| mp_score(p)).collect();
    let auroc_mp = auroc(&mp, &flags)?;
    let auroc_um = match resolved.mode {
        TrainMode::Map => None,
        _ => {
            let um: Vec<f64> = pooled
                .iter()
                .map(|p| um_score(p))
                .collect::<Result<_>>()?;
            Some(auroc(&um, &flags)?)
        }
    };

    let report = OodReport {
        auroc_mp,
        auroc_um,
        n_id: id_scored.len(),
        n_ood: ood_scored.len(),
    };
    crate::runcfg::write_json(&resolved.out.join("ood_report.json"), &report)?;
    match report.auroc_um {
        Some(um) => println!(
            "auroc_mp {:.4}, auroc_um {:.4} ({} ID vs {} OOD)",
            report.auroc_mp, um, report.n_id, report.n_ood
        ),
        None => println!(
            "auroc_mp {:.4}, auroc_um null ({} ID vs {} OOD)",
            report.auroc_mp, report.n_id, report.n_ood
        ),
    }
    Ok(())
}
