//! Staged output directories, run manifests and exit codes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use dspr_core::{Error, ErrorCategory};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, Config};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e.category() {
            ErrorCategory::Config => EXIT_CONFIG,
            ErrorCategory::Data => EXIT_DATA,
            ErrorCategory::Numeric => EXIT_NUMERIC,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| Error::io(path, e).into()
}

/// A sibling directory that receives every output and replaces the target
/// only once the command succeeds. Dropping it uncommitted deletes it.
pub struct Staging {
    dir: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(target: &Path, force: bool) -> CliResult<Self> {
        if target.exists() {
            let empty = fs::read_dir(target).map(|mut d| d.next().is_none()).unwrap_or(false);
            if !empty && !force {
                return Err(CliError::config(format!(
                    "output {} already exists; pass --force to replace it",
                    target.display()
                )));
            }
        }
        let name = target
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CliError::config(format!("bad output path {}", target.display())))?;
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(io_err(&parent))?;
        let dir = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir(&dir).map_err(io_err(&dir))?;
        Ok(Staging {
            dir,
            target: target.to_path_buf(),
            committed: false,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_json<T: Serialize>(&self, file: &str, value: &T) -> CliResult<()> {
        let path = self.path(file);
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(io_err(&path))
    }

    /// Writes the manifest and moves the staged directory into place.
    pub fn commit(mut self, manifest: Manifest) -> CliResult<()> {
        let manifest = manifest.with_outputs(&self.dir)?;
        self.write_json("manifest.json", &manifest)?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(io_err(&self.target))?;
        }
        fs::rename(&self.dir, &self.target).map_err(io_err(&self.target))?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Seeds {
    pub suite: u64,
    pub panel: u64,
    pub split: u64,
    pub smote: u64,
    pub classifier: u64,
}

/// Provenance of one run. Two runs with equal manifests (ignoring
/// `threads`) produce byte-identical numeric artifacts.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: Config,
}

impl Manifest {
    pub fn new(command: &str, config: &Config, inputs: &[&Path]) -> CliResult<Self> {
        let mut digests = Vec::new();
        for input in inputs {
            digests.extend(digest_tree(input, input)?);
        }
        Ok(Manifest {
            tool: "dspr",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: config.hash(),
            seeds: Seeds {
                suite: config.suite_seed,
                panel: config.panel.seed,
                split: config.pipeline.split_seed,
                smote: config.pipeline.self_train.smote_seed,
                classifier: config.classifier.seed,
            },
            threads: rayon::current_num_threads(),
            inputs: digests,
            outputs: Vec::new(),
            config: config.clone(),
        })
    }

    fn with_outputs(mut self, dir: &Path) -> CliResult<Self> {
        let mut outputs = digest_tree(dir, dir)?;
        outputs.retain(|d| d.path != "manifest.json");
        self.outputs = outputs;
        Ok(self)
    }
}

/// Digests of a file, or of every file below a directory in path order.
/// Paths are reported relative to `root` (or as given for a single file).
fn digest_tree(path: &Path, root: &Path) -> CliResult<Vec<FileDigest>> {
    let meta = fs::metadata(path).map_err(io_err(path))?;
    if meta.is_file() {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let shown = match path.strip_prefix(root) {
            Ok(rel) if !rel.as_os_str().is_empty() => rel.display().to_string(),
            _ => path.display().to_string(),
        };
        return Ok(vec![FileDigest {
            path: shown,
            sha256: hex(&Sha256::digest(&bytes)),
        }]);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    entries.sort();
    let mut out = Vec::new();
    for entry in entries {
        out.extend(digest_tree(&entry, root)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_staging_leaves_nothing_behind() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("out");
        {
            let staging = Staging::new(&target, false).unwrap();
            fs::write(staging.path("partial.csv"), "x").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    }

    #[test]
    fn existing_output_requires_force() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("out");
        fs::create_dir(&target).unwrap();
        fs::write(target.join("old.txt"), "old").unwrap();
        let err = Staging::new(&target, false).err().unwrap();
        assert_eq!(err.code, EXIT_CONFIG);

        let staging = Staging::new(&target, true).unwrap();
        fs::write(staging.path("new.txt"), "new").unwrap();
        let manifest = Manifest::new("test", &Config::default(), &[]).unwrap();
        staging.commit(manifest).unwrap();
        assert!(target.join("new.txt").exists());
        assert!(!target.join("old.txt").exists());
        assert!(target.join("manifest.json").exists());
    }
}
