//! File contract for classifiers that run outside this process.
//!
//! Each prediction round gets its own directory holding a dataset directory
//! (`dataset/`), a `manifest.json` naming the training and request indices,
//! and, once the runner returns, the probability CSV named in the manifest
//! with header `index,p1,p2,p3,p4`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{labels_of, Classifier, Probabilities};
use crate::dataset::{write_dataset, FeatureWindow, Partition, NUM_CLASSES};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_DIR: &str = "dataset";
pub const PROBABILITIES_FILE: &str = "probabilities.csv";
const CONTRACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRequest {
    /// Indices into the dataset directory to score.
    pub indices: Vec<usize>,
    /// Probability CSV the runner must write, relative to the round directory.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestManifest {
    pub contract_version: u32,
    pub round: usize,
    /// Dataset directory relative to the round directory.
    pub dataset: String,
    pub classes: usize,
    pub window: usize,
    /// Labeled windows to train on; labels are in the dataset index.
    pub train: Vec<usize>,
    pub predict: PredictionRequest,
    pub seed: u64,
}

/// Executes one round given the round directory and its manifest.
pub trait ExternalRunner {
    fn run(&self, round_dir: &Path, manifest: &RequestManifest) -> Result<()>;
}

/// Runs `program args... <manifest path>` and expects a zero exit status.
#[derive(Debug, Clone)]
pub struct CommandRunner {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalRunner for CommandRunner {
    fn run(&self, round_dir: &Path, _manifest: &RequestManifest) -> Result<()> {
        // The program runs inside the round directory, so hand it an absolute path.
        let round_dir = fs::canonicalize(round_dir).map_err(|e| Error::io(round_dir, e))?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(round_dir.join(MANIFEST_FILE))
            .current_dir(&round_dir)
            .status()
            .map_err(|e| Error::io(&self.program, e))?;
        if !status.success() {
            return Err(Error::Classifier(format!("external classifier `{}` exited with {status}", self.program)));
        }
        Ok(())
    }
}

/// Training is deferred to the external process: the model only keeps the
/// labeled windows to ship with the next request.
#[derive(Debug, Clone)]
pub struct ExternalModel {
    pub training: Vec<FeatureWindow>,
}

pub struct ExternalClassifier<R> {
    pub runner: R,
    pub workdir: PathBuf,
    pub seed: u64,
    round: AtomicUsize,
}

impl<R: ExternalRunner> ExternalClassifier<R> {
    pub fn new(runner: R, workdir: impl Into<PathBuf>, seed: u64) -> Self {
        ExternalClassifier {
            runner,
            workdir: workdir.into(),
            seed,
            round: AtomicUsize::new(0),
        }
    }

    pub fn rounds(&self) -> usize {
        self.round.load(Ordering::SeqCst)
    }
}

impl<R: ExternalRunner> Classifier for ExternalClassifier<R> {
    type Model = ExternalModel;

    fn train(&self, windows: &[FeatureWindow]) -> Result<ExternalModel> {
        if windows.is_empty() {
            return Err(Error::InvalidArgument("cannot train on an empty set".into()));
        }
        labels_of(windows)?;
        Ok(ExternalModel {
            training: windows.to_vec(),
        })
    }

    fn predict_proba(&self, model: &ExternalModel, windows: &[FeatureWindow]) -> Result<Vec<Probabilities>> {
        let round = self.round.fetch_add(1, Ordering::SeqCst) + 1;
        let round_dir = self.workdir.join(format!("round_{round:03}"));
        fs::create_dir_all(&round_dir).map_err(|e| Error::io(&round_dir, e))?;

        let n_train = model.training.len();
        let mut all = model.training.clone();
        all.extend_from_slice(windows);
        let mut partitions = vec![Some(Partition::TrainTrue); n_train];
        partitions.extend(std::iter::repeat_n(None, windows.len()));
        write_dataset(&round_dir.join(DATASET_DIR), &all, &partitions)?;

        let manifest = RequestManifest {
            contract_version: CONTRACT_VERSION,
            round,
            dataset: DATASET_DIR.into(),
            classes: NUM_CLASSES,
            window: all.first().map_or(0, |w| w.steps),
            train: (0..n_train).collect(),
            predict: PredictionRequest {
                indices: (n_train..all.len()).collect(),
                output: PROBABILITIES_FILE.into(),
            },
            seed: self.seed,
        };
        let manifest_path = round_dir.join(MANIFEST_FILE);
        fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&manifest_path, e))?;

        self.runner.run(&round_dir, &manifest)?;

        let by_index = read_probabilities(&round_dir.join(&manifest.predict.output))?;
        manifest
            .predict
            .indices
            .iter()
            .map(|i| {
                by_index
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::Classifier(format!("external classifier returned no row for window {i}")))
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProbabilityRow {
    index: usize,
    p1: f64,
    p2: f64,
    p3: f64,
    p4: f64,
}

pub fn write_probabilities(path: &Path, rows: &[(usize, Probabilities)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for &(index, p) in rows {
        w.serialize(ProbabilityRow {
            index,
            p1: p[0],
            p2: p[1],
            p3: p[2],
            p4: p[3],
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a probability CSV keyed by window index. Duplicate indices are
/// rejected; simplex checks are left to the caller.
pub fn read_probabilities(path: &Path) -> Result<BTreeMap<usize, Probabilities>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Classifier(format!("{}: {other:?}", path.display())),
    })?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize() {
        let row: ProbabilityRow = row.map_err(|e| Error::Classifier(format!("{}: {e}", path.display())))?;
        if out.insert(row.index, [row.p1, row.p2, row.p3, row.p4]).is_some() {
            return Err(Error::Classifier(format!("duplicate probability row for window {}", row.index)));
        }
    }
    Ok(out)
}
