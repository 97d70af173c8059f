//! Deterministic artifact writing: 9-significant-digit CSV, atomic files and a run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Scientific notation with 9 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: &'a [String],
    config_hash: &'a str,
    version: &'a str,
    core_version: &'a str,
    /// Seconds since the Unix epoch. The only field that varies between identical runs.
    created_unix: u64,
    files: Vec<FileEntry>,
}

/// Collects the files of one subcommand and records them in `manifest.toml`.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Artifacts {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir, files: Vec::new() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.files.push(FileEntry { name: name.to_string(), sha256: hex::encode(Sha256::digest(bytes)) });
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        self.write(name, &csv_bytes(header, rows)?)
    }

    pub fn toml<S: Serialize>(&mut self, name: &str, value: &S) -> Result<PathBuf> {
        self.write(name, toml::to_string(value)?.as_bytes())
    }

    pub fn finish(self, command: &str, args: &[String], config_hash: &str) -> Result<PathBuf> {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let m = Manifest {
            command,
            args,
            config_hash,
            version: env!("CARGO_PKG_VERSION"),
            core_version: dcmg_core::VERSION,
            created_unix,
            files: self.files,
        };
        let path = self.dir.join("manifest.toml");
        write_atomic(&path, toml::to_string(&m)?.as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(num(109.24017), "1.09240170e2");
        assert_eq!(num(-24.0), "-2.40000000e1");
        assert_eq!(num(0.0), "0.00000000e0");
        assert_eq!(num(1.0 / 3.0).parse::<f64>().unwrap(), 0.333333333);
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.csv");
        write_atomic(&p, b"x\n").unwrap();
        write_atomic(&p, b"y\n").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"y\n");
        let names: Vec<_> =
            std::fs::read_dir(dir.path().join("sub")).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }
}
