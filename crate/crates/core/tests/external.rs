use std::fs;
use std::path::{Path, PathBuf};

use dspr_core::dataset::{read_dataset, LabeledDataset};
use dspr_core::dspr::{DsprModel, RiskModel};
use dspr_core::learn::{
    self_train, write_probabilities, Classifier, ExternalClassifier, ExternalRunner, RequestManifest, SelfTrainConfig,
    SoftmaxConfig, SoftmaxRegression,
};
use dspr_core::pipeline::{compare_models, prepare_dataset, synthesize_panels, PanelConfig, PipelineConfig};
use dspr_core::synth::{clip_seed, gen_scenario, ScenarioKind};
use dspr_core::{DsprParams, Result};

/// Plays the external process in-process: reads the round's dataset
/// directory, trains the reference classifier on the listed windows and
/// writes the requested probabilities.
struct InProcess {
    classifier: SoftmaxRegression,
}

impl ExternalRunner for InProcess {
    fn run(&self, round_dir: &Path, manifest: &RequestManifest) -> Result<()> {
        let stored = read_dataset(&round_dir.join(&manifest.dataset))?;
        let train: Vec<_> = manifest.train.iter().map(|&i| stored.windows[i].clone()).collect();
        let request: Vec<_> = manifest.predict.indices.iter().map(|&i| stored.windows[i].clone()).collect();
        let model = self.classifier.train(&train)?;
        let probs = self.classifier.predict_proba(&model, &request)?;
        let rows: Vec<_> = manifest.predict.indices.iter().copied().zip(probs).collect();
        write_probabilities(&round_dir.join(&manifest.predict.output), &rows)
    }
}

fn reference() -> SoftmaxRegression {
    SoftmaxRegression::new(SoftmaxConfig {
        max_epochs: 60,
        ..SoftmaxConfig::default()
    })
}

fn scenarios() -> Vec<dspr_core::scene::Scenario> {
    let kinds = [ScenarioKind::LeadBrake, ScenarioKind::CutIn, ScenarioKind::CrossingPed, ScenarioKind::Mixed];
    (0..8)
        .map(|i| gen_scenario(&format!("c{i}"), kinds[i % 4], 6.0, clip_seed(41, i)).unwrap())
        .collect()
}

/// Dataset whose feature values are already f32-representable, so that the
/// dataset directory written for the external runner loses nothing.
fn dataset() -> LabeledDataset {
    let scenarios = scenarios();
    let params = DsprParams::default();
    let panels = synthesize_panels(&scenarios, &params, &PanelConfig::default().profiles().unwrap(), 5).unwrap();
    let mut ds = prepare_dataset(&DsprModel::new(params), &scenarios, &panels, &PipelineConfig::default()).unwrap();
    for w in &mut ds.windows {
        for v in &mut w.rows {
            *v = f64::from(*v as f32);
        }
    }
    ds
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

#[test]
fn external_contract_reproduces_the_in_process_loop() {
    let ds = dataset();
    let config = SelfTrainConfig {
        epsilon: 0.7,
        ..SelfTrainConfig::default()
    };
    let direct = self_train(&reference(), &ds, &config).unwrap();

    let work = tempfile::tempdir().unwrap();
    let external = ExternalClassifier::new(InProcess { classifier: reference() }, work.path(), 9);
    let via_files = self_train(&external, &ds, &config).unwrap();

    assert!(!direct.pseudo_labels.is_empty(), "test needs some adoptions");
    assert_eq!(via_files.pseudo_labels, direct.pseudo_labels);
    assert_eq!(via_files.audit, direct.audit);
    assert_eq!(via_files.metrics, direct.metrics);
    // One request per iteration with candidates, plus the final test scoring.
    let scored = direct.audit.iterations.iter().filter(|r| r.candidates > 0).count();
    assert_eq!(external.rounds(), scored + 1);
}

#[test]
fn identical_requests_produce_identical_round_files() {
    let ds = dataset();
    let config = SelfTrainConfig::default();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        let external = ExternalClassifier::new(InProcess { classifier: reference() }, dir, 9);
        self_train(&external, &ds, &config).unwrap();
    }
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    assert!(!fa.is_empty());
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a.path()).unwrap(), y.strip_prefix(b.path()).unwrap());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn external_probabilities_are_checked() {
    struct Broken;
    impl ExternalRunner for Broken {
        fn run(&self, round_dir: &Path, manifest: &RequestManifest) -> Result<()> {
            let rows: Vec<_> = manifest.predict.indices.iter().map(|&i| (i, [0.5, 0.5, 0.5, 0.0])).collect();
            write_probabilities(&round_dir.join(&manifest.predict.output), &rows)
        }
    }
    let work = tempfile::tempdir().unwrap();
    let Err(err) = self_train(&ExternalClassifier::new(Broken, work.path(), 1), &dataset(), &SelfTrainConfig::default())
    else {
        panic!("non-simplex rows must be rejected");
    };
    assert_eq!(err.category(), dspr_core::ErrorCategory::Numeric);
}

#[test]
fn compare_models_is_deterministic_and_one_row_per_model() {
    let scenarios = scenarios();
    let params = DsprParams::default();
    let panels = synthesize_panels(&scenarios, &params, &PanelConfig::default().profiles().unwrap(), 5).unwrap();
    let (a, b) = (DsprModel::new(params.clone()), DsprModel::new(params));
    let models: Vec<&dyn RiskModel> = vec![&a, &b];
    let runs = compare_models(&models, &scenarios, &panels, &reference(), &PipelineConfig::default()).unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0].metrics, runs[1].metrics);
    assert_eq!(runs[0].audit, runs[1].audit);

    let single = compare_models(&models[..1], &scenarios, &panels, &reference(), &PipelineConfig::default()).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].model, "dspr");
    assert_eq!(single[0].metrics, runs[0].metrics);
}
