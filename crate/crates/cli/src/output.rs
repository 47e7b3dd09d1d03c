//! Output directory handling: atomic writes and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

/// Writes `path` through a temporary file in the same directory, renamed into
/// place once `fill` succeeds.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Creates the output directory and checks that it accepts files.
pub fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let probe = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Io(format!("output directory {} is not writable: {e}", dir.display())))?;
    drop(probe);
    Ok(())
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub core_version: String,
    pub files: Vec<String>,
}

/// One entry per subcommand that has written into the directory.
pub type Manifest = BTreeMap<String, ManifestEntry>;

/// Adds or replaces the entry for `command` in `dir/manifest.json`.
pub fn record(dir: &Path, command: &str, entry: ManifestEntry) -> Result<()> {
    let path = dir.join(MANIFEST);
    let mut manifest: Manifest = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(_) => Manifest::new(),
    };
    manifest.insert(command.to_string(), entry);
    write_json(&path, &manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_required(path)?;
    serde_json::from_str(&text).map_err(|e| spfactor::Error::Format(format!("{}: {e}", path.display())).into())
}

/// Reads a file that must exist; absence is a usage error.
pub fn read_required(path: &Path) -> Result<String> {
    open_required(path)?;
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn open_required(path: &Path) -> Result<fs::File> {
    if !path.exists() {
        return Err(CliError::MissingRequired(format!("file {} does not exist", path.display())));
    }
    fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
