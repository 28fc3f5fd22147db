//! TOML manifest that drives a full evaluation.
//!
//! Top-level keys carry the master seed and horizon. Inputs come either from
//! an `[inputs]` table of existing files or from a `[pipeline]` table that
//! builds them (fixture or readings file, household split, outlier
//! injection, reference generator). Each suite runs only when its table is
//! present; an empty table runs it with defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::FidelityConfig;
use crate::fixture::FixtureConfig;
use crate::generators::{GeneratorMetadata, SamplingMode};
use crate::poisoning::OutlierSpec;
use crate::privacy::{MiaConfig, ReconstructionConfig};
use crate::profile::{Horizon, SplitSpec};
use crate::utility::TstrConfig;

/// Demo: the bundled 5k-profile fixture through every stage and suite.
pub const DEMO_MANIFEST: &str = r#"
seed = 20240501
horizon = "daily"

[pipeline]
[pipeline.fixture]
households = 625
days_per_household = 10

[pipeline.split]
holdout_fraction = 0.2
train_years = [2012, 2013]
eval_years = [2014]

[pipeline.outliers]
count = 100
mu = 6.0
sigma = 1.0

[pipeline.generator]
kind = "gmm_sampler"
k = 25

[fidelity]

[privacy]
suites = ["recon", "recon_poisoned", "mia", "mia_poisoned"]

[utility]
tasks = ["classify", "forecast_mean", "forecast_q95"]
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: Horizon,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<InputFiles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineSpec>,
    /// Metadata for an external synthetic file when it has no sidecar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorMetadata>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<FidelityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilitySection>,
}

fn default_horizon() -> Horizon {
    Horizon::Daily
}

/// Paths are resolved against the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFiles {
    pub train: Option<PathBuf>,
    pub holdout: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    /// Real comparison set for fidelity; defaults to `train`.
    pub fidelity_real: Option<PathBuf>,
    pub real_fit: Option<PathBuf>,
    pub real_eval: Option<PathBuf>,
    pub synthetic_fit: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    /// Built-in fixture; ignored when `readings` is given.
    #[serde(default)]
    pub fixture: FixtureConfig,
    /// Long-format readings file to ingest instead of the fixture.
    #[serde(default)]
    pub readings: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitSpec,
    /// Outliers injected into train; no registry is built without them.
    #[serde(default)]
    pub outliers: Option<OutlierSpec>,
    /// Unseen, differently distributed attack rows.
    #[serde(default)]
    pub diff_outliers: Option<OutlierSpec>,
    pub generator: GeneratorSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineGenerator {
    Memorizer,
    GmmSampler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: PipelineGenerator,
    /// Rows to generate; defaults to the size of the (poisoned) train set.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_jitter")]
    pub jitter_sigma: f64,
    #[serde(default)]
    pub mode: SamplingMode,
    #[serde(default)]
    pub claimed_epsilon: Option<f64>,
}

fn default_k() -> usize {
    25
}

fn default_jitter() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacySuite {
    Recon,
    ReconPoisoned,
    Mia,
    MiaPoisoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySection {
    pub suites: Vec<PrivacySuite>,
    pub ks_sample_size: Option<usize>,
    pub policy_ratio: f64,
    pub max_fraction: f64,
    pub reconstruction: ReconstructionConfig,
    pub mia: MiaConfig,
}

impl Default for PrivacySection {
    fn default() -> Self {
        PrivacySection {
            suites: vec![
                PrivacySuite::Recon,
                PrivacySuite::ReconPoisoned,
                PrivacySuite::Mia,
                PrivacySuite::MiaPoisoned,
            ],
            ks_sample_size: None,
            policy_ratio: 0.3,
            max_fraction: 0.0,
            reconstruction: ReconstructionConfig::default(),
            mia: MiaConfig::default(),
        }
    }
}

impl PrivacySection {
    pub fn wants(&self, suite: PrivacySuite) -> bool {
        self.suites.contains(&suite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityTask {
    Classify,
    ForecastMean,
    ForecastQ95,
}

impl UtilityTask {
    pub fn file_stem(self) -> &'static str {
        match self {
            UtilityTask::Classify => "tstr_classify",
            UtilityTask::ForecastMean => "tstr_forecast_mean",
            UtilityTask::ForecastQ95 => "tstr_forecast_q95",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilitySection {
    pub tasks: Vec<UtilityTask>,
    /// Permit fit and eval sets that share calendar years.
    pub allow_overlap: bool,
    pub tstr: TstrConfig,
}

impl Default for UtilitySection {
    fn default() -> Self {
        UtilitySection {
            tasks: vec![UtilityTask::Classify, UtilityTask::ForecastMean, UtilityTask::ForecastQ95],
            allow_overlap: false,
            tstr: TstrConfig::default(),
        }
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let manifest: Manifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn demo() -> Manifest {
        Manifest::parse(DEMO_MANIFEST).expect("demo manifest parses")
    }

    /// Reads a manifest file. The name `demo` selects the built-in demo
    /// unless a file of that name exists.
    pub fn load(path: impl AsRef<Path>) -> Result<(Manifest, PathBuf)> {
        let path = path.as_ref();
        if path == Path::new("demo") && !path.exists() {
            return Ok((Manifest::demo(), PathBuf::from(".")));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Manifest::parse(&text)?, base))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        match (&self.inputs, &self.pipeline) {
            (Some(_), Some(_)) => Err(Error::Manifest("give either [inputs] or [pipeline], not both".into())),
            (None, None) => Err(Error::Manifest("one of [inputs] or [pipeline] is required".into())),
            _ => Ok(()),
        }
    }
}
