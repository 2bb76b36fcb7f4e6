//! Config-file loading and flag/file/default resolution.
//!
//! Every subcommand accepts `--config <path>` pointing at a JSON object
//! whose keys mirror the long flag names (underscored). Unknown keys are
//! rejected. Flags given on the command line override file values; fields
//! present in neither fall back to documented defaults. The fully resolved
//! configuration is echoed as pretty JSON next to the command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use evib_core::{EvibError, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Loads and strictly parses an optional JSON config file.
pub fn load_file_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| {
                EvibError::Config(format!("config file {}: {e}", p.display()))
            })
        }
    }
}

/// Flag value if given, else file value, else default.
pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Flag value if given, else file value.
pub fn resolve_opt<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// Creates the output directory and writes the resolved-config echo there.
pub fn write_resolved<T: Serialize>(out_dir: &Path, file_name: &str, resolved: &T) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut text = serde_json::to_string_pretty(resolved)
        .map_err(|e| EvibError::Config(format!("serializing resolved config: {e}")))?;
    text.push('\n');
    fs::write(out_dir.join(file_name), text)?;
    Ok(())
}

/// Writes pretty JSON plus a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| EvibError::Config(format!("serializing report: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Parses a mode string shared by several subcommands.
pub fn parse_mode(s: &str) -> Result<evib_core::trainer::TrainMode> {
    use evib_core::trainer::TrainMode;
    match s {
        "ib_edl" => Ok(TrainMode::IbEdl),
        "edl" => Ok(TrainMode::Edl),
        "map" => Ok(TrainMode::Map),
        other => Err(EvibError::Config(format!(
            "unknown mode {other:?}; expected ib_edl, edl, or map"
        ))),
    }
}

/// Parses a schedule string.
pub fn parse_schedule(s: &str) -> Result<evib_core::trainer::Schedule> {
    use evib_core::trainer::Schedule;
    match s {
        "constant" => Ok(Schedule::Constant),
        "cosine" => Ok(Schedule::Cosine),
        other => Err(EvibError::Config(format!(
            "unknown schedule {other:?}; expected constant or cosine"
        ))),
    }
}
