//! Staged output: files are collected in memory and written together once
//! a command has finished, so a failed run leaves nothing behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::failure::Failure;

pub struct Staged {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    pub fn add_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_vec_pretty(value)
            .map_err(|e| Failure::runtime(format!("serializing {name}: {e}")))?;
        text.push(b'\n');
        self.add(name, text);
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Write every file through a temporary name and rename it into place.
    pub fn commit(self) -> Result<(), Failure> {
        let err = |p: &Path, e: std::io::Error| Failure::io(format!("{}: {e}", p.display()));
        fs::create_dir_all(&self.dir).map_err(|e| err(&self.dir, e))?;
        for (name, bytes) in &self.files {
            let target = self.dir.join(name);
            let tmp = self.dir.join(format!(".{name}.partial"));
            fs::write(&tmp, bytes).map_err(|e| err(&tmp, e))?;
            fs::rename(&tmp, &target).map_err(|e| err(&target, e))?;
        }
        Ok(())
    }
}

/// Append one timestamped line to `run.log` in `dir`.
pub fn log_run(dir: &Path, line: &str) -> Result<(), Failure> {
    let path = dir.join("run.log");
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    writeln!(f, "unix_time={now} {line}")
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}
