//! Feature rows, sliding windows, rater-consistency labels and the
//! clip-level train/test split.

mod io;
mod smote;

pub use io::{read_dataset, write_dataset, DatasetIndexRow, StoredDataset};
pub use smote::{smote_nc, DEFAULT_SMOTE_K};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dspr::{risk_series, RiskModel, RiskVector};
use crate::error::{Error, Result};
use crate::scene::{Frame, RatingPanel, Scenario, SLOT_COUNT};

/// Width of one feature row: ego velocity, acceleration, heading, road class,
/// then the 40 risk slots.
pub const FEATURE_WIDTH: usize = 6 + SLOT_COUNT;
/// Column holding the categorical road condition.
pub const ROAD_COLUMN: usize = 5;
/// Default window length (1 s at 10 Hz).
pub const DEFAULT_WINDOW: usize = 10;
/// Number of rating classes after merging 5 into 4.
pub const NUM_CLASSES: usize = 4;
/// Default train fraction.
pub const DEFAULT_SPLIT: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureFrame(pub [f64; FEATURE_WIDTH]);

impl FeatureFrame {
    pub fn road_condition(&self) -> u8 {
        self.0[ROAD_COLUMN] as u8
    }
}

/// Concatenates ego kinematics, road class and the risk vector.
pub fn feature_frame(frame: &Frame, risk: &RiskVector) -> FeatureFrame {
    let mut row = [0.0; FEATURE_WIDTH];
    let ego = &frame.ego;
    row[..6].copy_from_slice(&[
        ego.velocity.x,
        ego.velocity.y,
        ego.acceleration.x,
        ego.acceleration.y,
        ego.heading,
        f64::from(frame.road_condition),
    ]);
    row[6..].copy_from_slice(risk.values());
    FeatureFrame(row)
}

/// Feature rows of one scenario together with their timestamps.
#[derive(Debug, Clone)]
pub struct ScenarioFeatures {
    pub scenario_id: String,
    pub timestamps: Vec<f64>,
    pub frames: Vec<FeatureFrame>,
}

pub fn scenario_features(model: &dyn RiskModel, scenario: &Scenario) -> ScenarioFeatures {
    let risks = risk_series(model, scenario);
    ScenarioFeatures {
        scenario_id: scenario.id.clone(),
        timestamps: scenario.frames.iter().map(|f| f.timestamp).collect(),
        frames: scenario
            .frames
            .iter()
            .zip(&risks)
            .map(|(f, r)| feature_frame(f, r))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Consistent rater label.
    True,
    /// Oversampled from true labels.
    Synthetic,
    /// Adopted classifier prediction.
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSource {
    pub scenario_id: String,
    pub end_frame: usize,
    pub end_timestamp: f64,
}

/// `T` consecutive feature rows, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub rows: Vec<f64>,
    pub steps: usize,
    /// Rating class in `1..=4` when labeled.
    pub label: Option<u8>,
    pub provenance: Option<Provenance>,
    /// Plurality rating of the panel regardless of consistency.
    pub raw_label: Option<u8>,
    pub source: WindowSource,
}

impl FeatureWindow {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t * FEATURE_WIDTH..(t + 1) * FEATURE_WIDTH]
    }
}

/// Sliding windows ending at every frame from `T - 1` on.
pub fn feature_windows(features: &ScenarioFeatures, steps: usize) -> Result<Vec<FeatureWindow>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("window length must be >= 1".into()));
    }
    let n = features.frames.len();
    if n < steps {
        return Ok(Vec::new());
    }
    Ok((steps - 1..n)
        .map(|end| {
            let rows = features.frames[end + 1 - steps..=end]
                .iter()
                .flat_map(|f| f.0)
                .collect();
            FeatureWindow {
                rows,
                steps,
                label: None,
                provenance: None,
                raw_label: None,
                source: WindowSource {
                    scenario_id: features.scenario_id.clone(),
                    end_frame: end,
                    end_timestamp: features.timestamps[end],
                },
            }
        })
        .collect())
}

/// Minimum consistency ratio required for a true label, per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassThresholds {
    pub p_true: [f64; NUM_CLASSES],
}

impl Default for ClassThresholds {
    fn default() -> Self {
        ClassThresholds {
            p_true: [0.9, 0.75, 0.65, 0.6],
        }
    }
}

impl ClassThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.p_true.iter().all(|p| *p > 0.0 && *p <= 1.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "p_true values {:?} must lie in (0, 1]",
                self.p_true
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameLabel {
    True(u8),
    Unlabeled,
}

impl FrameLabel {
    pub fn label(self) -> Option<u8> {
        match self {
            FrameLabel::True(r) => Some(r),
            FrameLabel::Unlabeled => None,
        }
    }
}

fn column_counts(panel: &RatingPanel, frame: usize) -> Result<[usize; NUM_CLASSES]> {
    let mut counts = [0usize; NUM_CLASSES];
    for row in &panel.ratings {
        match row.get(frame) {
            Some(&r @ 1..=4) => counts[usize::from(r) - 1] += 1,
            Some(&r) => {
                return Err(Error::Validation(format!(
                    "rating {r} in panel {}; validate the panel first",
                    panel.scenario_id
                )))
            }
            None => {
                return Err(Error::Dimension {
                    expected: panel.frames(),
                    found: row.len(),
                    context: "ragged rating panel",
                })
            }
        }
    }
    Ok(counts)
}

/// Per-frame consistency decision: the most common rating becomes a true
/// label when its share reaches that class's threshold. Ties are unlabeled.
pub fn consistency_filter(panel: &RatingPanel, thresholds: &ClassThresholds) -> Result<Vec<FrameLabel>> {
    let n = panel.participants();
    if n == 0 {
        return Err(Error::Validation(format!("panel {} has no participants", panel.scenario_id)));
    }
    (0..panel.frames())
        .map(|f| {
            let counts = column_counts(panel, f)?;
            let best = *counts.iter().max().unwrap_or(&0);
            let winners: Vec<usize> = (0..NUM_CLASSES).filter(|&c| counts[c] == best).collect();
            if winners.len() != 1 {
                return Ok(FrameLabel::Unlabeled);
            }
            let class = winners[0];
            let share = best as f64 / n as f64;
            Ok(if share >= thresholds.p_true[class] {
                FrameLabel::True(class as u8 + 1)
            } else {
                FrameLabel::Unlabeled
            })
        })
        .collect()
}

/// Most common rating per frame, ties resolved toward the lower rating.
pub fn plurality_labels(panel: &RatingPanel) -> Result<Vec<u8>> {
    (0..panel.frames())
        .map(|f| {
            let counts = column_counts(panel, f)?;
            let best = (0..NUM_CLASSES)
                .rev()
                .max_by_key(|&c| counts[c])
                .unwrap_or(0);
            Ok(best as u8 + 1)
        })
        .collect()
}

/// Attaches frame decisions to windows by their end frame.
pub fn label_windows(windows: &mut [FeatureWindow], decisions: &[FrameLabel], raw: &[u8]) -> Result<()> {
    for w in windows {
        let end = w.source.end_frame;
        let decision = decisions.get(end).ok_or(Error::Dimension {
            expected: end + 1,
            found: decisions.len(),
            context: "frame decisions vs window end",
        })?;
        w.label = decision.label();
        w.provenance = w.label.map(|_| Provenance::True);
        w.raw_label = raw.get(end).copied();
    }
    Ok(())
}

/// Builds labeled windows for a set of scenarios and their validated panels,
/// one scenario per worker.
pub fn build_windows(
    model: &dyn RiskModel,
    scenarios: &[Scenario],
    panels: &[RatingPanel],
    thresholds: &ClassThresholds,
    steps: usize,
) -> Result<Vec<FeatureWindow>> {
    let per_scenario: Vec<Result<Vec<FeatureWindow>>> = scenarios
        .par_iter()
        .map(|scenario| {
            let panel = panels
                .iter()
                .find(|p| p.scenario_id == scenario.id)
                .ok_or_else(|| Error::Validation(format!("no rating panel for scenario {}", scenario.id)))?;
            let panel = crate::scene::validate_panel(panel, scenario)?;
            let decisions = consistency_filter(&panel, thresholds)?;
            let raw = plurality_labels(&panel)?;
            let mut windows = feature_windows(&scenario_features(model, scenario), steps)?;
            label_windows(&mut windows, &decisions, &raw)?;
            Ok(windows)
        })
        .collect();
    let mut all = Vec::new();
    for w in per_scenario {
        all.extend(w?);
    }
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    TrainTrue,
    TrainUnlabeled,
    TestTrue,
    TestUnlabeled,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::TrainTrue => "train_true",
            Partition::TrainUnlabeled => "train_unlabeled",
            Partition::TestTrue => "test_true",
            Partition::TestUnlabeled => "test_unlabeled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Partition::TrainTrue,
            Partition::TrainUnlabeled,
            Partition::TestTrue,
            Partition::TestUnlabeled,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
    }

    pub fn is_train(self) -> bool {
        matches!(self, Partition::TrainTrue | Partition::TrainUnlabeled)
    }
}

/// Windows with their clip-level train/test and true/unlabeled partitions.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub windows: Vec<FeatureWindow>,
    pub partitions: Vec<Partition>,
    pub split_ratio: f64,
    pub seed: u64,
    pub train_scenarios: Vec<String>,
    pub test_scenarios: Vec<String>,
}

impl LabeledDataset {
    pub fn indices(&self, partition: Partition) -> Vec<usize> {
        self.partitions
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == partition)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn subset(&self, partition: Partition) -> Vec<FeatureWindow> {
        self.partitions
            .iter()
            .zip(&self.windows)
            .filter(|(p, _)| **p == partition)
            .map(|(_, w)| w.clone())
            .collect()
    }

    /// All windows of the train (or test) clips regardless of labels.
    pub fn side(&self, train: bool) -> Vec<FeatureWindow> {
        self.partitions
            .iter()
            .zip(&self.windows)
            .filter(|(p, _)| p.is_train() == train)
            .map(|(_, w)| w.clone())
            .collect()
    }
}

/// Splits windows by scenario clip: a seeded shuffle of clip ids puts
/// `round(s * clips)` clips in train, then windows are partitioned by
/// whether they carry a true label.
pub fn split_dataset(windows: Vec<FeatureWindow>, split_ratio: f64, seed: u64) -> Result<LabeledDataset> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {split_ratio} outside (0, 1)")));
    }
    let mut clips: Vec<String> = Vec::new();
    for w in &windows {
        if !clips.contains(&w.source.scenario_id) {
            clips.push(w.source.scenario_id.clone());
        }
    }
    if clips.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 scenarios to split, found {}",
            clips.len()
        )));
    }
    clips.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clips.shuffle(&mut rng);
    let n_train = ((split_ratio * clips.len() as f64).round() as usize).clamp(1, clips.len() - 1);
    let test_scenarios = clips.split_off(n_train);
    let train_scenarios = clips;
    let in_train: BTreeMap<&str, bool> = train_scenarios
        .iter()
        .map(|s| (s.as_str(), true))
        .chain(test_scenarios.iter().map(|s| (s.as_str(), false)))
        .collect();

    let partitions = windows
        .iter()
        .map(|w| match (in_train[w.source.scenario_id.as_str()], w.label.is_some()) {
            (true, true) => Partition::TrainTrue,
            (true, false) => Partition::TrainUnlabeled,
            (false, true) => Partition::TestTrue,
            (false, false) => Partition::TestUnlabeled,
        })
        .collect();
    Ok(LabeledDataset {
        windows,
        partitions,
        split_ratio,
        seed,
        train_scenarios,
        test_scenarios,
    })
}

/// Class histogram of labeled windows, indexed by `label - 1`.
pub fn class_counts<'a>(windows: impl IntoIterator<Item = &'a FeatureWindow>) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for w in windows {
        if let Some(l) = w.label {
            counts[usize::from(l) - 1] += 1;
        }
    }
    counts
}
