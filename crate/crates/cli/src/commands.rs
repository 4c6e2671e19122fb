use std::fs;
use std::path::{Path, PathBuf};

use dspr_core::dataset::{
    consistency_filter, plurality_labels, read_dataset, scenario_features, feature_windows,
    write_dataset, FrameLabel, LabeledDataset, Partition, NUM_CLASSES,
};
use dspr_core::dspr::{risk_series, write_risk_dump, DsprModel, RiskModel};
use dspr_core::learn::{
    evaluate, labels_of, load_model, predict_checked, save_model, self_train, write_probabilities,
    AuditLog, CommandRunner, ExternalClassifier, Metrics, SoftmaxRegression,
};
use dspr_core::pipeline::{
    analyze, compare_models, prepare_dataset, supervised_baseline, synthesize_panels, BaselineMode, ModelRun,
    StudyReport,
};
use dspr_core::scene::{load_scenario, read_panels, save_scenario, validate_panel, write_panels, RatingPanel, Scenario};
use dspr_core::synth::{clip_seed, default_suite, gen_scenario, ScenarioKind};
use dspr_core::ttc::TtcModel;
use dspr_core::Error;
use serde::Serialize;

use crate::config::Config;
use crate::output::{io_err, CliError, CliResult, Manifest, Staging};
use crate::{
    Command, CompareArgs, EvalArgs, FeaturesArgs, GenArgs, LabelSource, LabelsArgs, ModelKind, ReportArgs,
    RiskArgs, SelfTrainArgs, Source, TrainArgs,
};

pub fn dispatch(command: &Command, config: &Config, force: bool) -> CliResult<()> {
    match command {
        Command::Gen(a) => gen(a, config, force),
        Command::Risk(a) => risk(a, config, force),
        Command::Features(a) => features(a, config, force),
        Command::Labels(a) => labels(a, config, force),
        Command::Train(a) => train(a, config, force),
        Command::Selftrain(a) => selftrain(a, config, force),
        Command::Compare(a) => compare(a, config, force),
        Command::Eval(a) => eval(a, config, force),
        Command::Report(a) => report(a, config, force),
    }
}

fn risk_model(kind: ModelKind, config: &Config) -> Box<dyn RiskModel> {
    match kind {
        ModelKind::Dspr => Box::new(DsprModel::new(config.params.clone())),
        ModelKind::Ttc => Box::new(TtcModel::default()),
    }
}

/// Loads one scene file, or every `.jsonl` file of a directory in name order.
fn load_scenarios(path: &Path) -> CliResult<Vec<Scenario>> {
    if path.is_file() {
        return Ok(vec![load_scenario(path)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(format!("no .jsonl scenario files in {}", path.display())));
    }
    files.iter().map(|f| Ok(load_scenario(f)?)).collect()
}

/// Rebuilds the split of a stored dataset from its partition column.
fn load_labeled(dir: &Path, config: &Config) -> CliResult<LabeledDataset> {
    let stored = read_dataset(dir)?;
    let mut partitions = Vec::with_capacity(stored.partitions.len());
    let mut train_scenarios: Vec<String> = Vec::new();
    let mut test_scenarios: Vec<String> = Vec::new();
    for (i, (p, w)) in stored.partitions.iter().zip(&stored.windows).enumerate() {
        let p = p.ok_or_else(|| {
            CliError::data(format!(
                "window {i} of {} has no partition; build the dataset with `features --panels`",
                dir.display()
            ))
        })?;
        let side = if p.is_train() { &mut train_scenarios } else { &mut test_scenarios };
        if !side.contains(&w.source.scenario_id) {
            side.push(w.source.scenario_id.clone());
        }
        partitions.push(p);
    }
    Ok(LabeledDataset {
        windows: stored.windows,
        partitions,
        split_ratio: config.pipeline.split_ratio,
        seed: config.pipeline.split_seed,
        train_scenarios,
        test_scenarios,
    })
}

fn resolve_source(source: &Source, config: &Config) -> CliResult<(LabeledDataset, Vec<PathBuf>)> {
    match (&source.dataset, &source.scenarios, &source.panels) {
        (Some(dir), _, _) => Ok((load_labeled(dir, config)?, vec![dir.clone()])),
        (None, Some(s), Some(p)) => {
            let scenarios = load_scenarios(s)?;
            let panels = read_panels(p)?;
            let model = DsprModel::new(config.params.clone());
            let dataset = prepare_dataset(&model, &scenarios, &panels, &config.pipeline)?;
            Ok((dataset, vec![s.clone(), p.clone()]))
        }
        _ => Err(CliError::config("give --dataset, or --scenarios together with --panels")),
    }
}

fn paths(list: &[PathBuf]) -> Vec<&Path> {
    list.iter().map(PathBuf::as_path).collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(path))
}

fn gen(a: &GenArgs, config: &Config, force: bool) -> CliResult<()> {
    let scenarios = match &a.kind {
        None => default_suite(config.suite_seed)?,
        Some(kind) => {
            let kind: ScenarioKind = kind.parse()?;
            if a.count == 0 {
                return Err(CliError::config("--count must be >= 1"));
            }
            (0..a.count)
                .map(|i| gen_scenario(&format!("{kind}_{i:02}"), kind, a.duration, clip_seed(config.suite_seed, i)))
                .collect::<Result<Vec<_>, Error>>()?
        }
    };
    let panels = synthesize_panels(&scenarios, &config.params, &config.panel.profiles()?, config.panel.seed)?;

    let staging = Staging::new(&a.out, force)?;
    let dir = staging.path("scenarios");
    fs::create_dir(&dir).map_err(io_err(&dir))?;
    for s in &scenarios {
        save_scenario(s, dir.join(format!("{}.jsonl", s.id)))?;
    }
    write_panels(&panels, staging.path("panels.csv"))?;
    staging.commit(Manifest::new("gen", config, &[])?)
}

fn risk(a: &RiskArgs, config: &Config, force: bool) -> CliResult<()> {
    let scenarios = load_scenarios(&a.scenarios)?;
    let model = risk_model(a.model, config);
    let staging = Staging::new(&a.out, force)?;
    for s in &scenarios {
        let path = staging.path(&format!("{}.csv", s.id));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_risk_dump(model.as_ref(), s, std::io::BufWriter::new(file))?;
    }
    staging.commit(Manifest::new("risk", config, &[&a.scenarios])?)
}

fn features(a: &FeaturesArgs, config: &Config, force: bool) -> CliResult<()> {
    let scenarios = load_scenarios(&a.scenarios)?;
    let model = risk_model(a.model, config);
    let staging = Staging::new(&a.out, force)?;
    let mut inputs = vec![a.scenarios.as_path()];
    match &a.panels {
        Some(p) => {
            let panels = read_panels(p)?;
            let dataset = prepare_dataset(model.as_ref(), &scenarios, &panels, &config.pipeline)?;
            let partitions: Vec<_> = dataset.partitions.iter().copied().map(Some).collect();
            write_dataset(staging.dir(), &dataset.windows, &partitions)?;
            inputs.push(p);
        }
        None => {
            let mut windows = Vec::new();
            for s in &scenarios {
                windows.extend(feature_windows(&scenario_features(model.as_ref(), s), config.pipeline.window)?);
            }
            write_dataset(staging.dir(), &windows, &vec![None; windows.len()])?;
        }
    }
    staging.commit(Manifest::new("features", config, &inputs)?)
}

#[derive(Serialize)]
struct LabelRow<'a> {
    scenario: &'a str,
    frame: usize,
    label: Option<u8>,
    raw_label: u8,
    agreement: f64,
}

#[derive(Serialize)]
struct LabelSummary {
    frames: usize,
    labeled: usize,
    unlabeled: usize,
    per_class: [usize; NUM_CLASSES],
}

fn labels(a: &LabelsArgs, config: &Config, force: bool) -> CliResult<()> {
    let mut panels = read_panels(&a.panels)?;
    let mut inputs = vec![a.panels.as_path()];
    if let Some(path) = &a.scenarios {
        let scenarios = load_scenarios(path)?;
        panels = panels
            .iter()
            .map(|p| {
                let s = scenarios
                    .iter()
                    .find(|s| s.id == p.scenario_id)
                    .ok_or_else(|| CliError::data(format!("no scenario for panel {}", p.scenario_id)))?;
                Ok(validate_panel(p, s)?)
            })
            .collect::<CliResult<Vec<RatingPanel>>>()?;
        inputs.push(path);
    }
    let mut rows = Vec::new();
    let mut summary = LabelSummary {
        frames: 0,
        labeled: 0,
        unlabeled: 0,
        per_class: [0; NUM_CLASSES],
    };
    for p in &panels {
        let decisions = consistency_filter(p, &config.pipeline.thresholds)?;
        let raw = plurality_labels(p)?;
        for (frame, (d, r)) in decisions.iter().zip(&raw).enumerate() {
            let agree = p.ratings.iter().filter(|row| row[frame] == *r).count();
            rows.push(LabelRow {
                scenario: &p.scenario_id,
                frame,
                label: d.label(),
                raw_label: *r,
                agreement: agree as f64 / p.participants() as f64,
            });
            summary.frames += 1;
            match d {
                FrameLabel::True(c) => {
                    summary.labeled += 1;
                    summary.per_class[usize::from(*c) - 1] += 1;
                }
                FrameLabel::Unlabeled => summary.unlabeled += 1,
            }
        }
    }
    let staging = Staging::new(&a.out, force)?;
    write_csv(&staging.path("labels.csv"), rows)?;
    staging.write_json("summary.json", &summary)?;
    staging.commit(Manifest::new("labels", config, &inputs)?)
}

fn train(a: &TrainArgs, config: &Config, force: bool) -> CliResult<()> {
    let (dataset, inputs) = resolve_source(&a.source, config)?;
    let classifier = SoftmaxRegression::new(config.classifier.clone());
    let mode = match a.labels {
        LabelSource::True => BaselineMode::Filtered,
        LabelSource::Raw => BaselineMode::Raw,
    };
    let (model, metrics) = supervised_baseline(&classifier, &dataset, mode, &config.pipeline.self_train)?;
    let staging = Staging::new(&a.out, force)?;
    save_model(&model, &staging.path("model.bin"))?;
    staging.write_json("metrics.json", &metrics)?;
    staging.commit(Manifest::new("train", config, &paths(&inputs))?)
}

#[derive(Serialize)]
struct AdoptionRow<'a> {
    model: &'a str,
    iteration: usize,
    candidates: usize,
    adopted: usize,
    cumulative: usize,
    remaining: usize,
    class1: usize,
    class2: usize,
    class3: usize,
    class4: usize,
}

fn adoption_rows<'a>(model: &'a str, audit: &AuditLog) -> Vec<AdoptionRow<'a>> {
    audit
        .iterations
        .iter()
        .map(|r| AdoptionRow {
            model,
            iteration: r.iteration,
            candidates: r.candidates,
            adopted: r.adopted,
            cumulative: r.cumulative,
            remaining: r.remaining,
            class1: r.adopted_per_class[0],
            class2: r.adopted_per_class[1],
            class3: r.adopted_per_class[2],
            class4: r.adopted_per_class[3],
        })
        .collect()
}

#[derive(Serialize)]
struct PseudoRow<'a> {
    index: usize,
    scenario: &'a str,
    end_frame: usize,
    label: u8,
}

fn write_self_train_outputs(
    staging: &Staging,
    dataset: &LabeledDataset,
    metrics: &Metrics,
    audit: &AuditLog,
    pseudo: &[(usize, u8)],
) -> CliResult<()> {
    staging.write_json("metrics.json", metrics)?;
    staging.write_json("audit.json", audit)?;
    write_csv(&staging.path("adoption.csv"), adoption_rows("dspr", audit))?;
    write_csv(
        &staging.path("pseudo_labels.csv"),
        pseudo.iter().map(|&(index, label)| PseudoRow {
            index,
            scenario: &dataset.windows[index].source.scenario_id,
            end_frame: dataset.windows[index].source.end_frame,
            label,
        }),
    )
}

fn selftrain(a: &SelfTrainArgs, config: &Config, force: bool) -> CliResult<()> {
    let (dataset, inputs) = resolve_source(&a.source, config)?;
    let staging = Staging::new(&a.out, force)?;
    match &a.external {
        None => {
            let classifier = SoftmaxRegression::new(config.classifier.clone());
            let outcome = self_train(&classifier, &dataset, &config.pipeline.self_train)?;
            save_model(&outcome.model, &staging.path("model.bin"))?;
            write_self_train_outputs(&staging, &dataset, &outcome.metrics, &outcome.audit, &outcome.pseudo_labels)?;
        }
        Some(program) => {
            let runner = CommandRunner {
                program: program.clone(),
                args: a.external_args.clone(),
            };
            let workdir = staging.path("external");
            let classifier = ExternalClassifier::new(runner, &workdir, config.classifier.seed);
            let outcome = self_train(&classifier, &dataset, &config.pipeline.self_train)?;
            write_self_train_outputs(&staging, &dataset, &outcome.metrics, &outcome.audit, &outcome.pseudo_labels)?;
        }
    }
    staging.commit(Manifest::new("selftrain", config, &paths(&inputs))?)
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    model: &'a str,
    samples: usize,
    accuracy: f64,
    macro_precision: f64,
    macro_recall: f64,
    macro_f1: f64,
    macro_auc: Option<f64>,
    pseudo_labels: usize,
}

fn comparison_row(run: &ModelRun) -> ComparisonRow<'_> {
    let m = &run.metrics;
    ComparisonRow {
        model: &run.model,
        samples: m.samples,
        accuracy: m.accuracy,
        macro_precision: m.macro_precision,
        macro_recall: m.macro_recall,
        macro_f1: m.macro_f1,
        macro_auc: m.macro_auc,
        pseudo_labels: run.audit.iterations.last().map_or(0, |r| r.cumulative),
    }
}

fn compare(a: &CompareArgs, config: &Config, force: bool) -> CliResult<()> {
    let scenarios = load_scenarios(&a.scenarios)?;
    let panels = read_panels(&a.panels)?;
    let mut kinds = a.models.clone();
    kinds.dedup();
    let models: Vec<Box<dyn RiskModel>> = kinds.iter().map(|&k| risk_model(k, config)).collect();
    let refs: Vec<&dyn RiskModel> = models.iter().map(|m| m.as_ref()).collect();
    let classifier = SoftmaxRegression::new(config.classifier.clone());
    let runs = compare_models(&refs, &scenarios, &panels, &classifier, &config.pipeline)?;

    let staging = Staging::new(&a.out, force)?;
    staging.write_json("comparison.json", &runs)?;
    write_csv(&staging.path("comparison.csv"), runs.iter().map(comparison_row))?;
    staging.commit(Manifest::new("compare", config, &[&a.scenarios, &a.panels])?)
}

#[derive(Serialize)]
struct ConfusionRow<'a> {
    model: &'a str,
    truth: usize,
    predicted: usize,
    count: usize,
}

fn confusion_rows<'a>(model: &'a str, m: &Metrics) -> impl Iterator<Item = ConfusionRow<'a>> + 'a {
    let confusion = m.confusion;
    (0..NUM_CLASSES).flat_map(move |t| {
        (0..NUM_CLASSES).map(move |p| ConfusionRow {
            model,
            truth: t + 1,
            predicted: p + 1,
            count: confusion[t][p],
        })
    })
}

fn eval(a: &EvalArgs, config: &Config, force: bool) -> CliResult<()> {
    let partition = Partition::parse(&a.partition)
        .filter(|p| matches!(p, Partition::TrainTrue | Partition::TestTrue))
        .ok_or_else(|| CliError::config(format!("--partition must be train_true or test_true, got `{}`", a.partition)))?;
    let model = load_model(&a.model)?;
    let dataset = load_labeled(&a.dataset, config)?;
    let indices = dataset.indices(partition);
    let windows = dataset.subset(partition);
    if windows.is_empty() {
        return Err(CliError::data(format!("partition {} is empty", partition.as_str())));
    }
    let classifier = SoftmaxRegression::new(config.classifier.clone());
    let probs = predict_checked(&classifier, &model, &windows)?;
    let metrics = evaluate(&probs, &labels_of(&windows)?)?;

    let staging = Staging::new(&a.out, force)?;
    staging.write_json("metrics.json", &metrics)?;
    let rows: Vec<_> = indices.iter().copied().zip(probs.iter().copied()).collect();
    write_probabilities(&staging.path("probabilities.csv"), &rows)?;
    write_csv(&staging.path("confusion.csv"), confusion_rows("dspr", &metrics))?;
    staging.commit(Manifest::new("eval", config, &[&a.model, &a.dataset])?)
}

fn risk_series_csv(path: &Path, model: &dyn RiskModel, scenarios: &[Scenario]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["scenario".to_string(), "frame".into(), "t".into(), "aggregate".into()];
    header.extend((1..=dspr_core::scene::SLOT_COUNT).map(|i| format!("r{i:02}")));
    w.write_record(&header)?;
    for s in scenarios {
        for (i, (frame, r)) in s.frames.iter().zip(risk_series(model, s)).enumerate() {
            let mut record = vec![s.id.clone(), i.to_string(), frame.timestamp.to_string(), r.max().to_string()];
            record.extend(r.values().iter().map(f64::to_string));
            w.write_record(&record)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// The fields reported for each classifier run.
#[derive(Serialize)]
struct ReportMetrics<'a> {
    self_train: &'a Metrics,
    baseline: &'a Metrics,
    gain_points: f64,
    ttc: Option<&'a Metrics>,
}

fn report(a: &ReportArgs, config: &Config, force: bool) -> CliResult<()> {
    let (scenarios, panels, inputs) = match (&a.scenarios, &a.panels) {
        (Some(s), Some(p)) => (load_scenarios(s)?, read_panels(p)?, vec![s.clone(), p.clone()]),
        _ => {
            let scenarios = default_suite(config.suite_seed)?;
            let panels =
                synthesize_panels(&scenarios, &config.params, &config.panel.profiles()?, config.panel.seed)?;
            (scenarios, panels, Vec::new())
        }
    };
    let classifier = SoftmaxRegression::new(config.classifier.clone());
    let study: StudyReport = analyze(&classifier, &scenarios, &panels, &config.study())?;

    let staging = Staging::new(&a.out, force)?;
    staging.write_json("report.json", &study)?;
    staging.write_json(
        "metrics.json",
        &ReportMetrics {
            self_train: &study.self_train,
            baseline: &study.baseline,
            gain_points: study.gain_points,
            ttc: study.ttc.as_ref().map(|r| &r.metrics),
        },
    )?;
    let dspr = DsprModel::new(config.params.clone());
    risk_series_csv(&staging.path("risk_series.csv"), &dspr, &scenarios)?;

    let mut confusion: Vec<ConfusionRow> = confusion_rows("dspr", &study.self_train).collect();
    confusion.extend(confusion_rows("baseline", &study.baseline));
    let mut adoption = adoption_rows("dspr", &study.audit);
    if let Some(ttc) = &study.ttc {
        confusion.extend(confusion_rows("ttc", &ttc.metrics));
        adoption.extend(adoption_rows("ttc", &ttc.audit));
    }
    write_csv(&staging.path("confusion.csv"), confusion)?;
    write_csv(&staging.path("adoption.csv"), adoption)?;
    staging.commit(Manifest::new("report", config, &paths(&inputs))?)
}
