use serde::{Deserialize, Serialize};

use super::{argmax, evaluate, labels_of, predict_checked, Classifier, Metrics};
use crate::dataset::{smote_nc, FeatureWindow, LabeledDataset, Partition, Provenance, DEFAULT_SMOTE_K};
use crate::error::{Error, Result};

/// Settings of the pseudo-labeling loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainConfig {
    /// A prediction is adopted when its top probability exceeds this.
    pub epsilon: f64,
    pub iterations: usize,
    /// Drop windows still unlabeled after the last iteration. When false they
    /// join the final training set with their predicted class.
    pub discard_residual: bool,
    pub smote_k: usize,
    pub smote_seed: u64,
    /// Oversample the true-labeled test windows before scoring.
    pub augment_test: bool,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            epsilon: 0.9,
            iterations: 5,
            discard_residual: true,
            smote_k: DEFAULT_SMOTE_K,
            smote_seed: 11,
            augment_test: false,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        // Values above 1 are allowed and simply disable adoption.
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("self-training needs at least one iteration".into()));
        }
        if self.smote_k == 0 {
            return Err(Error::InvalidArgument("SMOTE-NC needs k >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Unlabeled windows scored in this iteration.
    pub candidates: usize,
    pub adopted: usize,
    /// Pseudo-labels adopted so far.
    pub cumulative: usize,
    pub remaining: usize,
    /// Adoptions per predicted class.
    pub adopted_per_class: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub true_train: usize,
    pub balanced_train: usize,
    pub unlabeled_train: usize,
    pub iterations: Vec<IterationRecord>,
    /// Residual windows adopted at the end when they are not discarded.
    pub residual_adopted: usize,
    pub residual_discarded: usize,
    pub final_train: usize,
    pub test_windows: usize,
}

#[derive(Debug, Clone)]
pub struct SelfTrainOutcome<M> {
    pub model: M,
    pub audit: AuditLog,
    /// Scores on the true-labeled test windows.
    pub metrics: Metrics,
    /// Dataset indices and adopted classes, in adoption order.
    pub pseudo_labels: Vec<(usize, u8)>,
}

fn present_classes(windows: &[FeatureWindow]) -> Vec<u8> {
    let mut classes: Vec<u8> = windows.iter().filter_map(|w| w.label).collect();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// Balances the true-labeled training windows, then repeatedly adopts
/// confident predictions on unlabeled training windows and retrains.
pub fn self_train<C: Classifier>(
    classifier: &C,
    dataset: &LabeledDataset,
    config: &SelfTrainConfig,
) -> Result<SelfTrainOutcome<C::Model>> {
    config.validate()?;
    let train_true = dataset.subset(Partition::TrainTrue);
    if train_true.is_empty() {
        return Err(Error::InvalidArgument("no true-labeled training windows".into()));
    }
    let mut test_true = dataset.subset(Partition::TestTrue);
    if test_true.is_empty() {
        return Err(Error::InvalidArgument("no true-labeled test windows".into()));
    }
    let balanced = smote_nc(&train_true, &present_classes(&train_true), config.smote_k, config.smote_seed)?;
    let mut unlabeled = dataset.indices(Partition::TrainUnlabeled);
    let mut audit = AuditLog {
        true_train: train_true.len(),
        balanced_train: balanced.len(),
        unlabeled_train: unlabeled.len(),
        iterations: Vec::with_capacity(config.iterations),
        residual_adopted: 0,
        residual_discarded: 0,
        final_train: 0,
        test_windows: 0,
    };

    let mut training = balanced;
    let mut model = classifier.train(&training)?;
    let mut pseudo_labels = Vec::new();
    let adopt = |training: &mut Vec<FeatureWindow>, index: usize, class: u8| {
        let mut w = dataset.windows[index].clone();
        w.label = Some(class);
        w.provenance = Some(Provenance::Pseudo);
        training.push(w);
    };

    for iteration in 1..=config.iterations {
        let candidates = unlabeled.len();
        let mut adopted_per_class = [0; 4];
        if !unlabeled.is_empty() {
            let windows: Vec<FeatureWindow> = unlabeled.iter().map(|&i| dataset.windows[i].clone()).collect();
            let probs = predict_checked(classifier, &model, &windows)?;
            let mut rest = Vec::with_capacity(unlabeled.len());
            for (&index, p) in unlabeled.iter().zip(&probs) {
                let best = argmax(p);
                if p[best] > config.epsilon {
                    let class = best as u8 + 1;
                    adopt(&mut training, index, class);
                    pseudo_labels.push((index, class));
                    adopted_per_class[best] += 1;
                } else {
                    rest.push(index);
                }
            }
            unlabeled = rest;
        }
        let adopted: usize = adopted_per_class.iter().sum();
        audit.iterations.push(IterationRecord {
            iteration,
            candidates,
            adopted,
            cumulative: pseudo_labels.len(),
            remaining: unlabeled.len(),
            adopted_per_class,
        });
        // An unchanged training set reproduces the same model.
        if adopted > 0 {
            model = classifier.train(&training)?;
        }
    }

    if config.discard_residual {
        audit.residual_discarded = unlabeled.len();
    } else if !unlabeled.is_empty() {
        let windows: Vec<FeatureWindow> = unlabeled.iter().map(|&i| dataset.windows[i].clone()).collect();
        let probs = predict_checked(classifier, &model, &windows)?;
        for (&index, p) in unlabeled.iter().zip(&probs) {
            let class = argmax(p) as u8 + 1;
            adopt(&mut training, index, class);
            pseudo_labels.push((index, class));
        }
        audit.residual_adopted = unlabeled.len();
        model = classifier.train(&training)?;
    }
    audit.final_train = training.len();

    if config.augment_test {
        test_true = smote_nc(&test_true, &present_classes(&test_true), config.smote_k, config.smote_seed ^ 0x7e57)?;
    }
    audit.test_windows = test_true.len();
    let probs = predict_checked(classifier, &model, &test_true)?;
    let metrics = evaluate(&probs, &labels_of(&test_true)?)?;
    Ok(SelfTrainOutcome {
        model,
        audit,
        metrics,
        pseudo_labels,
    })
}
