//! Classifier contract, reference classifier, metrics and self-training.

mod external;
mod metrics;
mod selftrain;
mod softmax;

pub use external::{
    read_probabilities, write_probabilities, CommandRunner, ExternalClassifier, ExternalModel, ExternalRunner,
    PredictionRequest, RequestManifest, MANIFEST_FILE,
};
pub use metrics::{argmax, confusion_scores, evaluate, Metrics};
pub use selftrain::{self_train, AuditLog, IterationRecord, SelfTrainConfig, SelfTrainOutcome};
pub use softmax::{load_model, save_model, SoftmaxConfig, SoftmaxModel, SoftmaxRegression};

use crate::dataset::{FeatureWindow, NUM_CLASSES};
use crate::error::{Error, Result};

/// Class probabilities of one window, indexed by `rating - 1`.
pub type Probabilities = [f64; NUM_CLASSES];

/// Anything that can be trained on labeled windows and then score windows.
pub trait Classifier {
    type Model;

    /// Trains on windows that all carry a label.
    fn train(&self, windows: &[FeatureWindow]) -> Result<Self::Model>;

    fn predict_proba(&self, model: &Self::Model, windows: &[FeatureWindow]) -> Result<Vec<Probabilities>>;
}

/// Tolerance on the probability simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

pub fn check_simplex(rows: &[Probabilities]) -> Result<()> {
    for (i, p) in rows.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Classifier(format!("row {i} is not a probability vector: {p:?}")));
        }
    }
    Ok(())
}

/// Prediction with shape and simplex checks.
pub fn predict_checked<C: Classifier>(classifier: &C, model: &C::Model, windows: &[FeatureWindow]) -> Result<Vec<Probabilities>> {
    let probs = classifier.predict_proba(model, windows)?;
    if probs.len() != windows.len() {
        return Err(Error::Dimension {
            expected: windows.len(),
            found: probs.len(),
            context: "probability rows vs windows",
        });
    }
    check_simplex(&probs)?;
    Ok(probs)
}

/// Labels of windows that must all be labeled.
pub fn labels_of(windows: &[FeatureWindow]) -> Result<Vec<u8>> {
    windows
        .iter()
        .map(|w| match w.label {
            Some(l @ 1..=4) => Ok(l),
            Some(l) => Err(Error::Validation(format!("label {l} outside 1..=4"))),
            None => Err(Error::Validation(format!(
                "unlabeled window {}@{} passed where labels are required",
                w.source.scenario_id, w.source.end_frame
            ))),
        })
        .collect()
}
