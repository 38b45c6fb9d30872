//! Artifact staging: every file of a command is written to a temporary
//! sibling first and renamed into place only after all of them succeeded.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct Artifacts {
    dir: PathBuf,
    /// (temporary path, final path) of each staged file.
    staged: Vec<(PathBuf, PathBuf)>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self, String> {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            staged: Vec::new(),
        })
    }

    /// Stages `name` with the bytes `fill` writes.
    pub fn stage<F>(&mut self, name: &str, fill: F) -> Result<(), String>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.partial"));
        let io = |e: std::io::Error| format!("{}: {e}", tmp.display());
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        let written = fill(&mut w).and_then(|()| w.flush());
        drop(w);
        if let Err(e) = written {
            let _ = std::fs::remove_file(&tmp);
            return Err(io(e));
        }
        self.staged.push((tmp, target));
        Ok(())
    }

    /// Moves every staged file into place and returns the final paths.
    pub fn commit(mut self) -> Result<Vec<PathBuf>, String> {
        let staged = std::mem::take(&mut self.staged);
        let mut done = Vec::with_capacity(staged.len());
        for (i, (tmp, target)) in staged.iter().enumerate() {
            if let Err(e) = std::fs::rename(tmp, target) {
                for (t, _) in &staged[i..] {
                    let _ = std::fs::remove_file(t);
                }
                return Err(format!("{}: {e}", target.display()));
            }
            done.push(target.clone());
        }
        Ok(done)
    }
}

impl Drop for Artifacts {
    fn drop(&mut self) {
        for (tmp, _) in &self.staged {
            let _ = std::fs::remove_file(tmp);
        }
    }
}

/// `# `-prefixed header lines shared by every artifact of a run.
#[derive(Debug, Clone, Default)]
pub struct Header {
    lines: Vec<String>,
}

impl Header {
    pub fn new(command: &str) -> Self {
        Header {
            lines: vec![format!("bnbp {} {command}", env!("CARGO_PKG_VERSION"))],
        }
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.lines.push(format!("{key} = {value}"));
        self
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn write(&self, w: &mut dyn Write) -> std::io::Result<()> {
        for l in &self.lines {
            writeln!(w, "# {l}")?;
        }
        Ok(())
    }
}

/// Comma-joined list in shortest round-trip float form.
pub fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// An optional value as a CSV cell, empty when absent.
pub fn cell<T: std::fmt::Display>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_lands_until_commit() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::new(dir.path()).unwrap();
        a.stage("x.csv", |w| w.write_all(b"1\n")).unwrap();
        assert!(!dir.path().join("x.csv").exists());
        let paths = a.commit().unwrap();
        assert_eq!(paths, vec![dir.path().join("x.csv")]);
        assert_eq!(std::fs::read(dir.path().join("x.csv")).unwrap(), b"1\n");
    }

    #[test]
    fn abandoned_stage_leaves_no_files() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut a = Artifacts::new(dir.path()).unwrap();
            a.stage("a.csv", |w| w.write_all(b"1\n")).unwrap();
            assert!(a
                .stage("b.csv", |_| Err(std::io::Error::other("boom")))
                .is_err());
        }
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
