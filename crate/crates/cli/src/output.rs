//! Output staging: every file of a run is rendered in memory first and only
//! then written, so a failing run leaves no partial results behind.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, contents: Vec<u8>) {
        self.files.push((name.into(), contents));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Write every staged file into `dir`. On failure, files written so far
    /// (and `dir` itself, if this call created it) are removed.
    pub fn commit(self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        let created = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.to_path_buf(), e))?;
        let mut written = Vec::new();
        for (name, contents) in &self.files {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, contents) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                if created {
                    let _ = fs::remove_dir(dir);
                }
                return Err(CliError::io(&path, e));
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Serialize rows with a CSV writer into a byte buffer.
pub fn csv_bytes<F>(fill: F) -> CliResult<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> CliResult<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        fill(&mut w)?;
        w.flush().map_err(|e| CliError::Input(e.to_string()))?;
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_commit_removes_written_files() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("run");
        let mut out = OutputSet::new();
        out.add("a.txt", b"first".to_vec());
        // a name that cannot be created as a file
        out.add("missing/b.txt", b"second".to_vec());
        assert!(out.commit(&target).is_err());
        assert!(!target.exists());
    }

    #[test]
    fn commit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::new();
        out.add("a.txt", b"x".to_vec());
        out.add("b.txt", b"y".to_vec());
        let written = out.commit(dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(fs::read(dir.path().join("b.txt")).unwrap(), b"y");
    }
}
