//! End-to-end orchestration: synthetic panels, dataset assembly, the
//! self-training study, supervised baselines and risk-model comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_windows, smote_nc, split_dataset, ClassThresholds, FeatureWindow, LabeledDataset, Partition, Provenance,
    DEFAULT_SPLIT, DEFAULT_WINDOW,
};
use crate::dspr::{risk_series, DsprModel, RiskModel};
use crate::error::{Error, Result};
use crate::learn::{evaluate, labels_of, predict_checked, self_train, AuditLog, Classifier, Metrics, SelfTrainConfig};
use crate::params::DsprParams;
use crate::scene::{RatingPanel, Scenario};
use crate::synth::{
    clip_seed, default_panel, default_suite, simulate_raters, RaterProfile, DEFAULT_NOISE_SD, DEFAULT_RATERS,
    DEFAULT_SENSITIVITY_SPREAD,
};
use crate::ttc::TtcModel;

/// Settings shared by every model run: labeling, windowing, split and
/// self-training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub thresholds: ClassThresholds,
    pub window: usize,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub self_train: SelfTrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            thresholds: ClassThresholds::default(),
            window: DEFAULT_WINDOW,
            split_ratio: DEFAULT_SPLIT,
            split_seed: 3,
            self_train: SelfTrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.window == 0 {
            return Err(Error::InvalidArgument("window length must be >= 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!("split ratio {} outside (0, 1)", self.split_ratio)));
        }
        self.self_train.validate()
    }
}

/// Synthetic rater panel settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelConfig {
    pub raters: usize,
    pub noise_sd: f64,
    /// Raters' cut-points are scaled by `exp(u)` with `u` spread evenly over
    /// `[-spread, spread]`.
    pub sensitivity_spread: f64,
    pub seed: u64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            raters: DEFAULT_RATERS,
            noise_sd: DEFAULT_NOISE_SD,
            sensitivity_spread: DEFAULT_SENSITIVITY_SPREAD,
            seed: 5,
        }
    }
}

impl PanelConfig {
    pub fn profiles(&self) -> Result<Vec<RaterProfile>> {
        if self.raters == 0 {
            return Err(Error::InvalidArgument("at least one rater required".into()));
        }
        if !(self.sensitivity_spread.is_finite() && self.sensitivity_spread >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sensitivity spread must be >= 0, got {}",
                self.sensitivity_spread
            )));
        }
        let profiles = default_panel(self.raters, self.noise_sd, self.sensitivity_spread);
        for p in &profiles {
            p.validate()?;
        }
        Ok(profiles)
    }
}

/// Rates every scenario from the DSPR aggregate of `params`, one seeded
/// stream per clip.
pub fn synthesize_panels(
    scenarios: &[Scenario],
    params: &DsprParams,
    profiles: &[RaterProfile],
    seed: u64,
) -> Result<Vec<RatingPanel>> {
    params.validate()?;
    let model = DsprModel::new(params.clone());
    scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| simulate_raters(&s.id, &risk_series(&model, s), profiles, clip_seed(seed, i)))
        .collect()
}

/// Features from `model`, consistency labels from `panels`, clip-level split.
pub fn prepare_dataset(
    model: &dyn RiskModel,
    scenarios: &[Scenario],
    panels: &[RatingPanel],
    config: &PipelineConfig,
) -> Result<LabeledDataset> {
    config.validate()?;
    let windows = build_windows(model, scenarios, panels, &config.thresholds, config.window)?;
    split_dataset(windows, config.split_ratio, config.split_seed)
}

/// Which labels the supervised baseline learns from and is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Plurality ratings of every train window, scored on every test window.
    Raw,
    /// Consistent labels only, trained on the true train set and scored on
    /// the true test set.
    Filtered,
}

fn with_raw_labels(windows: Vec<FeatureWindow>) -> Vec<FeatureWindow> {
    windows
        .into_iter()
        .filter(|w| w.raw_label.is_some())
        .map(|mut w| {
            w.label = w.raw_label;
            w.provenance = Some(Provenance::True);
            w
        })
        .collect()
}

fn present_classes(windows: &[FeatureWindow]) -> Vec<u8> {
    let mut c: Vec<u8> = windows.iter().filter_map(|w| w.label).collect();
    c.sort_unstable();
    c.dedup();
    c
}

/// Balanced supervised training without pseudo-labels.
pub fn supervised_baseline<C: Classifier>(
    classifier: &C,
    dataset: &LabeledDataset,
    mode: BaselineMode,
    config: &SelfTrainConfig,
) -> Result<(C::Model, Metrics)> {
    let (train, test) = match mode {
        BaselineMode::Raw => (with_raw_labels(dataset.side(true)), with_raw_labels(dataset.side(false))),
        BaselineMode::Filtered => (dataset.subset(Partition::TrainTrue), dataset.subset(Partition::TestTrue)),
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!("{mode:?} baseline needs labeled train and test windows")));
    }
    let balanced = smote_nc(&train, &present_classes(&train), config.smote_k, config.smote_seed)?;
    let model = classifier.train(&balanced)?;
    let probs = predict_checked(classifier, &model, &test)?;
    let metrics = evaluate(&probs, &labels_of(&test)?)?;
    Ok((model, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub model: String,
    pub metrics: Metrics,
    pub audit: AuditLog,
}

/// Runs the identical split, filter, SMOTE, self-train and evaluation path
/// on features from each risk model.
pub fn compare_models<C: Classifier>(
    models: &[&dyn RiskModel],
    scenarios: &[Scenario],
    panels: &[RatingPanel],
    classifier: &C,
    config: &PipelineConfig,
) -> Result<Vec<ModelRun>> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no risk models to compare".into()));
    }
    models
        .iter()
        .map(|m| {
            let dataset = prepare_dataset(*m, scenarios, panels, config)?;
            let outcome = self_train(classifier, &dataset, &config.self_train)?;
            Ok(ModelRun {
                model: m.name().to_string(),
                metrics: outcome.metrics,
                audit: outcome.audit,
            })
        })
        .collect()
}

/// Settings of a full synthetic study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub suite_seed: u64,
    pub params: DsprParams,
    pub panel: PanelConfig,
    pub pipeline: PipelineConfig,
    pub baseline: BaselineMode,
    /// Also rerun the pipeline on inverse-TTC features.
    pub compare_ttc: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            suite_seed: 7,
            params: DsprParams::default(),
            panel: PanelConfig::default(),
            pipeline: PipelineConfig::default(),
            baseline: BaselineMode::Raw,
            compare_ttc: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub windows: usize,
    pub train_true: usize,
    pub train_unlabeled: usize,
    pub test_true: usize,
    pub test_unlabeled: usize,
    pub train_scenarios: usize,
    pub test_scenarios: usize,
}

impl DatasetSummary {
    pub fn of(dataset: &LabeledDataset) -> Self {
        let count = |p| dataset.partitions.iter().filter(|&&q| q == p).count();
        DatasetSummary {
            windows: dataset.windows.len(),
            train_true: count(Partition::TrainTrue),
            train_unlabeled: count(Partition::TrainUnlabeled),
            test_true: count(Partition::TestTrue),
            test_unlabeled: count(Partition::TestUnlabeled),
            train_scenarios: dataset.train_scenarios.len(),
            test_scenarios: dataset.test_scenarios.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub dataset: DatasetSummary,
    pub self_train: Metrics,
    pub audit: AuditLog,
    pub baseline_mode: BaselineMode,
    pub baseline: Metrics,
    /// Self-trained accuracy minus baseline accuracy, in percentage points.
    pub gain_points: f64,
    /// Inverse-TTC features through the same path, when requested.
    pub ttc: Option<ModelRun>,
}

/// Generates the default suite, rates it, and runs [`analyze`] on it.
pub fn run_study<C: Classifier>(classifier: &C, config: &StudyConfig) -> Result<StudyReport> {
    config.params.validate()?;
    let scenarios = default_suite(config.suite_seed)?;
    let panels = synthesize_panels(&scenarios, &config.params, &config.panel.profiles()?, config.panel.seed)?;
    analyze(classifier, &scenarios, &panels, config)
}

/// Self-training, the supervised baseline and optionally the inverse-TTC
/// comparison on rated scenarios.
pub fn analyze<C: Classifier>(
    classifier: &C,
    scenarios: &[Scenario],
    panels: &[RatingPanel],
    config: &StudyConfig,
) -> Result<StudyReport> {
    config.params.validate()?;
    let dspr = DsprModel::new(config.params.clone());
    let dataset = prepare_dataset(&dspr, scenarios, panels, &config.pipeline)?;
    let outcome = self_train(classifier, &dataset, &config.pipeline.self_train)?;
    let (_, baseline) = supervised_baseline(classifier, &dataset, config.baseline, &config.pipeline.self_train)?;
    let ttc = if config.compare_ttc {
        let ttc = TtcModel::default();
        let mut runs = compare_models(&[&ttc], scenarios, panels, classifier, &config.pipeline)?;
        runs.pop()
    } else {
        None
    };
    Ok(StudyReport {
        dataset: DatasetSummary::of(&dataset),
        gain_points: 100.0 * (outcome.metrics.accuracy - baseline.accuracy),
        self_train: outcome.metrics,
        audit: outcome.audit,
        baseline_mode: config.baseline,
        baseline,
        ttc,
    })
}
