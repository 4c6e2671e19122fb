//! Run configuration: TOML file, then command-line overrides.

use std::fs;
use std::path::Path;

use dspr_core::learn::{SelfTrainConfig, SoftmaxConfig};
use dspr_core::pipeline::{BaselineMode, PanelConfig, PipelineConfig, StudyConfig};
use dspr_core::DsprParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::output::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub suite_seed: u64,
    pub baseline: BaselineMode,
    pub compare_ttc: bool,
    pub params: DsprParams,
    pub panel: PanelConfig,
    pub pipeline: PipelineConfig,
    pub classifier: SoftmaxConfig,
}

impl Default for Config {
    fn default() -> Self {
        let study = StudyConfig::default();
        Config {
            threads: 0,
            suite_seed: study.suite_seed,
            baseline: study.baseline,
            compare_ttc: study.compare_ttc,
            params: study.params,
            panel: study.panel,
            pipeline: study.pipeline,
            classifier: SoftmaxConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed of the synthetic scenario suite.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Seed of the synthetic rater panel.
    #[arg(long, global = true)]
    pub panel_seed: Option<u64>,
    /// Number of synthetic raters.
    #[arg(long, global = true)]
    pub raters: Option<usize>,
    /// Rating noise standard deviation of synthetic raters.
    #[arg(long, global = true)]
    pub noise_sd: Option<f64>,
    /// Feature window length T.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Fraction of clips in the training split.
    #[arg(long, global = true)]
    pub split: Option<f64>,
    /// Seed of the clip-level split.
    #[arg(long, global = true)]
    pub split_seed: Option<u64>,
    /// Confidence a prediction must exceed to be adopted.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Self-training iterations.
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// Adopt windows still unlabeled after the last iteration.
    #[arg(long, global = true)]
    pub keep_residual: bool,
    /// Oversample the true-labeled test windows before scoring.
    #[arg(long, global = true)]
    pub augment_test: bool,
    /// Seed of SMOTE-NC oversampling.
    #[arg(long, global = true)]
    pub smote_seed: Option<u64>,
    /// Disable clamping of the spatial decay coefficients.
    #[arg(long, global = true)]
    pub no_clamp: bool,
    /// Labels of the supervised baseline.
    #[arg(long, global = true, value_parser = parse_baseline)]
    pub baseline: Option<BaselineMode>,
    /// Skip the inverse-TTC comparison in `report`.
    #[arg(long, global = true)]
    pub no_ttc: bool,
    /// L2 penalty of the reference classifier.
    #[arg(long, global = true)]
    pub l2: Option<f64>,
    /// Training epochs of the reference classifier.
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    /// Weight initialisation seed of the reference classifier.
    #[arg(long, global = true)]
    pub classifier_seed: Option<u64>,
}

fn parse_baseline(s: &str) -> Result<BaselineMode, String> {
    match s {
        "raw" => Ok(BaselineMode::Raw),
        "filtered" => Ok(BaselineMode::Filtered),
        _ => Err(format!("expected `raw` or `filtered`, got `{s}`")),
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        set(&mut self.threads, &o.threads);
        set(&mut self.suite_seed, &o.seed);
        set(&mut self.panel.seed, &o.panel_seed);
        set(&mut self.panel.raters, &o.raters);
        set(&mut self.panel.noise_sd, &o.noise_sd);
        set(&mut self.pipeline.window, &o.window);
        set(&mut self.pipeline.split_ratio, &o.split);
        set(&mut self.pipeline.split_seed, &o.split_seed);
        set(&mut self.baseline, &o.baseline);
        set(&mut self.classifier.l2, &o.l2);
        set(&mut self.classifier.max_epochs, &o.max_epochs);
        set(&mut self.classifier.seed, &o.classifier_seed);
        let st: &mut SelfTrainConfig = &mut self.pipeline.self_train;
        set(&mut st.epsilon, &o.epsilon);
        set(&mut st.iterations, &o.iterations);
        set(&mut st.smote_seed, &o.smote_seed);
        if o.keep_residual {
            st.discard_residual = false;
        }
        if o.augment_test {
            st.augment_test = true;
        }
        if o.no_clamp {
            self.params.clamp_spatial = false;
        }
        if o.no_ttc {
            self.compare_ttc = false;
        }
    }

    /// Checks every module's preconditions up front.
    pub fn validate(&self) -> Result<(), CliError> {
        self.params.validate()?;
        self.panel.profiles()?;
        self.pipeline.validate()?;
        self.classifier.validate()?;
        Ok(())
    }

    pub fn study(&self) -> StudyConfig {
        StudyConfig {
            suite_seed: self.suite_seed,
            params: self.params.clone(),
            panel: self.panel.clone(),
            pipeline: self.pipeline.clone(),
            baseline: self.baseline,
            compare_ttc: self.compare_ttc,
        }
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    /// The thread count is left out since it does not affect results.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.threads = 0;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
