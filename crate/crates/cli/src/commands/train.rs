//! `evib train`: fit a model and save checkpoint + epoch log.
//!
//! The network is a dual-head MLP with one hidden layer (`--hidden` units);
//! input width and class count come from the dataset header. The same
//! `--seed` drives parameter initialization and the training noise stream,
//! so repeated runs are byte-identical. Training aborts with exit code 4 if
//! the loss or gradient norm goes non-finite, naming the epoch and batch.

use std::path::PathBuf;

use clap::Args;
use evib_core::data::read_dataset;
use evib_core::model::{build_model, save_checkpoint};
use evib_core::trainer::{train, TrainConfig, TrainMode};
use evib_core::Result;
use serde::{Deserialize, Serialize};

use crate::runcfg::{load_file_config, parse_mode, parse_schedule, resolve, resolve_opt, write_resolved};

/// Default hidden-layer width.
const DEFAULT_HIDDEN: usize = 64;

#[derive(Args)]
pub struct TrainArgs {
    /// Training dataset (JSONL from gen-data).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Objective: ib_edl, edl, or map.
    #[arg(long)]
    mode: Option<String>,
    /// Weight on the Gaussian prior KL (ib_edl only).
    #[arg(long)]
    beta: Option<f64>,
    /// Weight on the Dirichlet KL regularizer (edl only).
    #[arg(long)]
    lambda: Option<f64>,
    /// Evidence offset added to SoftPlus outputs (evidential modes).
    #[arg(long)]
    eta: Option<f64>,
    /// Monte-Carlo samples per forward pass (ib_edl only).
    #[arg(long)]
    k: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Global gradient-norm clip threshold.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Seed for init and training noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden-layer width.
    #[arg(long)]
    hidden: Option<usize>,
    /// Learning-rate schedule: constant or cosine.
    #[arg(long)]
    schedule: Option<String>,
    /// Diagnostic: freeze the noise head at this constant.
    #[arg(long)]
    sigma_freeze: Option<f64>,
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
    data: Option<PathBuf>,
    mode: Option<String>,
    beta: Option<f64>,
    lambda: Option<f64>,
    eta: Option<f64>,
    k: Option<usize>,
    lr: Option<f64>,
    epochs: Option<usize>,
    batch: Option<usize>,
    clip_norm: Option<f64>,
    seed: Option<u64>,
    hidden: Option<usize>,
    schedule: Option<String>,
    sigma_freeze: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    data: PathBuf,
    hidden: usize,
    out: PathBuf,
    #[serde(flatten)]
    train: TrainConfig,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let file: FileConfig = load_file_config(&args.config)?;
    let mode = match resolve_opt(args.mode, file.mode) {
        Some(s) => parse_mode(&s)?,
        None => TrainMode::IbEdl,
    };
    let defaults = TrainConfig::new(mode);
    let config = TrainConfig {
        mode,
        beta: resolve(args.beta, file.beta, defaults.beta),
        lambda: resolve(args.lambda, file.lambda, defaults.lambda),
        eta: resolve(args.eta, file.eta, defaults.eta),
        k: resolve(args.k, file.k, defaults.k),
        learning_rate: resolve(args.lr, file.lr, defaults.learning_rate),
        epochs: resolve(args.epochs, file.epochs, defaults.epochs),
        batch_size: resolve(args.batch, file.batch, defaults.batch_size),
        clip_norm: resolve(args.clip_norm, file.clip_norm, defaults.clip_norm),
        seed: resolve(args.seed, file.seed, defaults.seed),
        schedule: match resolve_opt(args.schedule, file.schedule) {
            Some(s) => parse_schedule(&s)?,
            None => defaults.schedule,
        },
        sigma_freeze: resolve_opt(args.sigma_freeze, file.sigma_freeze),
    };
    let resolved = Resolved {
        data: resolve_opt(args.data, file.data).ok_or_else(|| {
            evib_core::EvibError::Config("--data is required (flag or config file)".into())
        })?,
        hidden: resolve(args.hidden, file.hidden, DEFAULT_HIDDEN),
        out: resolve_opt(args.out, file.out).ok_or_else(|| {
            evib_core::EvibError::Config("--out is required (flag or config file)".into())
        })?,
        train: config.clone(),
    };
    for warning in config.validate()? {
        eprintln!("warning: {warning}");
    }
    write_resolved(&resolved.out, "train_config.json", &resolved)?;

    let data = read_dataset(&resolved.data)?;
    let mut model = build_model(
        &[data.dim(), resolved.hidden],
        data.class_count,
        config.seed,
    )?;
    let report = train(&mut model, &data, &config)?;

    save_checkpoint(&model, resolved.out.join("checkpoint.json"))?;
    report.write_jsonl(resolved.out.join("train_log.jsonl"))?;
    println!(
        "trained {} for {} epochs, final loss {:.6}",
        config.mode,
        config.epochs,
        report.final_loss()
    );
    Ok(())
}
