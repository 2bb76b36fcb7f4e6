//! `evib sweep`: beta x seed grid study tabulated as CSV.
//!
//! Trains one ib_edl model per (beta, seed) cell on the training set,
//! scores it on the evaluation set, and appends one CSV row per cell in
//! grid order (betas outer, seeds inner). `--include-map` adds one map
//! baseline row per seed after the grid, with an empty beta column. Seeds
//! are derived as `--seed + index` with `index` in `0..seed_count`; the
//! same seeds repeat across betas so cells are paired. Runs are
//! independent and fan out across worker threads; `EVIB_THREADS` caps the
//! worker count. Reruns with identical settings produce an identical CSV.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::Args;
use evib_core::data::{read_dataset, LabeledDataset};
use evib_core::metrics::{ece, DEFAULT_BIN_COUNT};
use evib_core::model::build_model;
use evib_core::trainer::{train, TrainConfig, TrainMode};
use evib_core::{EvibError, Result};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commands::eval::score_checkpoint;
use crate::runcfg::{load_file_config, resolve, resolve_opt, write_resolved};

/// Default hidden-layer width (matches `evib train`).
const DEFAULT_HIDDEN: usize = 64;
/// Offset separating evaluation draws from the training stream.
const EVAL_SEED_OFFSET: u64 = 1_000_000;

#[derive(Args)]
pub struct SweepArgs {
    /// Training dataset (JSONL).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Evaluation dataset (JSONL) scored for each cell.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Comma-separated beta grid, e.g. --betas 1e-4,1e-3,1e-2.
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    /// Base seed; cell seeds are base + 0..seed_count.
    #[arg(long)]
    seed: Option<u64>,
    /// Seeds per beta.
    #[arg(long)]
    seed_count: Option<usize>,
    /// Append one map baseline row per seed (empty beta column).
    #[arg(long)]
    include_map: bool,
    /// Evidence offset for the ib_edl cells.
    #[arg(long)]
    eta: Option<f64>,
    /// Monte-Carlo samples per forward pass.
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
    /// Hidden-layer width.
    #[arg(long)]
    hidden: Option<usize>,
    /// Calibration bin count.
    #[arg(long)]
    bins: Option<usize>,
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
    eval_data: Option<PathBuf>,
    betas: Option<Vec<f64>>,
    seed: Option<u64>,
    seed_count: Option<usize>,
    include_map: Option<bool>,
    eta: Option<f64>,
    k: Option<usize>,
    lr: Option<f64>,
    epochs: Option<usize>,
    batch: Option<usize>,
    clip_norm: Option<f64>,
    hidden: Option<usize>,
    bins: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    data: PathBuf,
    eval_data: PathBuf,
    betas: Vec<f64>,
    seed: u64,
    seed_count: usize,
    include_map: bool,
    eta: f64,
    k: usize,
    lr: f64,
    epochs: usize,
    batch: usize,
    clip_norm: f64,
    hidden: usize,
    bins: usize,
    out: PathBuf,
}

/// One grid cell: `beta` is None for the map baseline rows.
struct Cell {
    beta: Option<f64>,
    seed: u64,
}

struct Row {
    beta: Option<f64>,
    seed: u64,
    accuracy: f64,
    ece: f64,
    nll: f64,
}

/// Worker-thread cap: EVIB_THREADS if set, else the machine's parallelism.
fn thread_cap(cells: usize) -> Result<usize> {
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = match std::env::var("EVIB_THREADS") {
        Err(std::env::VarError::NotPresent) => hw,
        Err(e) => return Err(EvibError::Config(format!("EVIB_THREADS: {e}"))),
        Ok(text) => text.parse::<usize>().map_err(|e| {
            EvibError::Config(format!("EVIB_THREADS must be a positive integer: {e}"))
        })?,
    };
    if cap == 0 {
        return Err(EvibError::Config("EVIB_THREADS must be at least 1".into()));
    }
    Ok(cap.min(cells).max(1))
}

/// Trains and scores one cell.
fn run_cell(cell: &Cell, cfg: &Resolved, data: &LabeledDataset, eval: &LabeledDataset) -> Result<Row> {
    let mode = if cell.beta.is_some() { TrainMode::IbEdl } else { TrainMode::Map };
    let config = TrainConfig {
        beta: cell.beta.unwrap_or(0.0),
        eta: cfg.eta,
        k: cfg.k,
        learning_rate: cfg.lr,
        epochs: cfg.epochs,
        batch_size: cfg.batch,
        clip_norm: cfg.clip_norm,
        seed: cell.seed,
        ..TrainConfig::new(mode)
    };
    let mut model = build_model(&[data.dim(), cfg.hidden], data.class_count, cell.seed)?;
    train(&mut model, data, &config)?;

    let mut rng =
        <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cell.seed + EVAL_SEED_OFFSET);
    let scored = score_checkpoint(&model, eval, &config, 0.0, &mut rng)?;
    let report = ece(&scored, cfg.bins)?;
    Ok(Row {
        beta: cell.beta,
        seed: cell.seed,
        accuracy: report.accuracy,
        ece: report.ece,
        nll: report.nll,
    })
}

pub fn run(args: SweepArgs) -> Result<()> {
    let file: FileConfig = load_file_config(&args.config)?;
    let resolved = Resolved {
        data: resolve_opt(args.data, file.data)
            .ok_or_else(|| EvibError::Config("--data is required (flag or config file)".into()))?,
        eval_data: resolve_opt(args.eval_data, file.eval_data).ok_or_else(|| {
            EvibError::Config("--eval-data is required (flag or config file)".into())
        })?,
        betas: resolve_opt(args.betas, file.betas)
            .ok_or_else(|| EvibError::Config("--betas is required (flag or config file)".into()))?,
        seed: resolve(args.seed, file.seed, 0),
        seed_count: resolve(args.seed_count, file.seed_count, 1),
        include_map: args.include_map || file.include_map.unwrap_or(false),
        eta: resolve(args.eta, file.eta, 1.0),
        k: resolve(args.k, file.k, evib_core::trainer::DEFAULT_K),
        lr: resolve(args.lr, file.lr, evib_core::trainer::DEFAULT_LEARNING_RATE),
        epochs: resolve(args.epochs, file.epochs, evib_core::trainer::DEFAULT_EPOCHS),
        batch: resolve(args.batch, file.batch, evib_core::trainer::DEFAULT_BATCH_SIZE),
        clip_norm: resolve(args.clip_norm, file.clip_norm, evib_core::trainer::DEFAULT_CLIP_NORM),
        hidden: resolve(args.hidden, file.hidden, DEFAULT_HIDDEN),
        bins: resolve(args.bins, file.bins, DEFAULT_BIN_COUNT),
        out: resolve_opt(args.out, file.out)
            .ok_or_else(|| EvibError::Config("--out is required (flag or config file)".into()))?,
    };
    if resolved.betas.is_empty() {
        return Err(EvibError::Config("the beta grid is empty".into()));
    }
    if resolved.seed_count == 0 {
        return Err(EvibError::Config("seed_count must be at least 1".into()));
    }
    write_resolved(&resolved.out, "sweep_config.json", &resolved)?;

    let data = read_dataset(&resolved.data)?;
    let eval_data = read_dataset(&resolved.eval_data)?;

    let mut cells = Vec::new();
    for &beta in &resolved.betas {
        for i in 0..resolved.seed_count {
            cells.push(Cell { beta: Some(beta), seed: resolved.seed + i as u64 });
        }
    }
    if resolved.include_map {
        for i in 0..resolved.seed_count {
            cells.push(Cell { beta: None, seed: resolved.seed + i as u64 });
        }
    }

    // Indexed slots keep CSV order independent of completion order.
    let results: Vec<Mutex<Option<Result<Row>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let workers = thread_cap(cells.len())?;

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::Relaxed) {
                    return;
                }
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= cells.len() {
                    return;
                }
                let outcome = run_cell(&cells[idx], &resolved, &data, &eval_data);
                if outcome.is_err() {
                    stop.store(true, Ordering::Relaxed);
                }
                *results[idx].lock().unwrap() = Some(outcome);
            });
        }
    });

    // Unclaimed cells form a suffix after the first failure, so an
    // in-order scan always reaches the error before any empty slot.
    let mut csv = String::from("beta,seed,accuracy,ece,nll\n");
    for slot in &results {
        match slot.lock().unwrap().take() {
            Some(Ok(row)) => {
                let beta = row.beta.map(|b| b.to_string()).unwrap_or_default();
                csv.push_str(&format!(
                    "{beta},{},{},{},{}\n",
                    row.seed, row.accuracy, row.ece, row.nll
                ));
            }
            Some(Err(e)) => return Err(e),
            None => {
                return Err(EvibError::Config(
                    "internal: sweep cell left unscored without a recorded failure".into(),
                ))
            }
        }
    }

    std::fs::write(resolved.out.join("sweep.csv"), &csv)?;
    println!(
        "swept {} cells ({} betas x {} seeds{}) into sweep.csv",
        cells.len(),
        resolved.betas.len(),
        resolved.seed_count,
        if resolved.include_map { " + map baseline" } else { "" }
    );
    Ok(())
}
