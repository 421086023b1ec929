pub mod analysis;
pub mod data;
pub mod evaluate;
pub mod sample;
pub mod train;

use std::path::{Path, PathBuf};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 0;

pub fn require<T>(value: Option<T>, what: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required option --{what}")))
}

pub fn prepare_out_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

/// Splits `"0,0.7"` into numbers.
pub fn parse_list(raw: &str) -> Result<Vec<f32>, CliError> {
    raw.split(',')
        .map(|s| s.trim().parse::<f32>().map_err(|e| CliError::Usage(format!("bad list entry {s:?}: {e}"))))
        .collect()
}

/// Prints a line to stdout; a reader that went away (`| head`) is not an error.
pub fn emit(line: &str) -> Result<(), CliError> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
