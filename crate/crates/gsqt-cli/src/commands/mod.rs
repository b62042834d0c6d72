pub mod analyze;
pub mod convert;
pub mod train;

use gsqt::io::atomic_write;
use gsqt::{Error, Result};
use std::path::{Path, PathBuf};

/// Write text to `out`, or to stdout when no path was given.
pub fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            atomic_write(path, text.as_bytes())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Load and parse a JSON config file. Both a missing file and malformed
/// JSON count as configuration errors.
pub fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
}
