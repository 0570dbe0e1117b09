//! Subcommand implementations. Each returns `Result<(), Failure>` so the
//! binary can map failures onto documented exit codes.

pub mod bench;
pub mod eval;
pub mod gen;
pub mod inspect;
pub mod train;

use std::path::{Path, PathBuf};

use lgr_core::Result;

/// Writes text to a file atomically (temporary file + rename).
pub(crate) fn write_text_atomic(path: &Path, text: &str) -> Result<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(name);
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
