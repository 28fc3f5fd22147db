//! The unified evaluation report, the manifest that drives it, and the
//! release-policy verdict on reconstruction results.

mod manifest;
mod run;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fidelity::FidelityReport;
use crate::generators::GeneratorMetadata;
use crate::kernels::KsResult;
use crate::privacy::{MiaResult, ReconstructionResult};
use crate::utility::TstrResult;

pub use manifest::{
    GeneratorSpec, InputFiles, Manifest, PipelineGenerator, PipelineSpec, PrivacySection, PrivacySuite, UtilitySection, UtilityTask, DEMO_MANIFEST,
};
pub use run::{derive_seeds, run_full_evaluation, write_side_files, EvaluationRun, SideFile};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Outcome of one suite. Sections that were not requested are present as
/// `not_run`, never omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Section<T> {
    NotRun,
    Failed { error: String },
    Ok { result: T },
}

impl<T> Section<T> {
    pub fn from_result(result: Result<T>) -> Section<T> {
        match result {
            Ok(result) => Section::Ok { result },
            Err(e) => Section::Failed { error: e.to_string() },
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, Section::Failed { .. })
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            Section::Ok { result } => Some(result),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyVerdict {
    pub policy_ratio: f64,
    pub max_fraction: f64,
    pub fraction_reconstructed: f64,
    pub pass: bool,
}

/// Passes when the reconstructed fraction at `policy_ratio` does not exceed
/// `max_fraction`.
pub fn threshold_policy_check(result: &ReconstructionResult, policy_ratio: f64, max_fraction: f64) -> Result<PolicyVerdict> {
    let fraction = result.fraction_at(policy_ratio).ok_or(Error::RatioNotComputed(policy_ratio))?;
    Ok(PolicyVerdict {
        policy_ratio,
        max_fraction,
        fraction_reconstructed: fraction,
        pass: fraction <= max_fraction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub ks: Section<KsResult>,
    pub reconstruction: Section<ReconstructionResult>,
    pub policy: Section<PolicyVerdict>,
    pub mia_plain: Section<MiaResult>,
    pub mia_poisoned: Section<MiaResult>,
}

impl PrivacyReport {
    pub fn not_run() -> PrivacyReport {
        PrivacyReport {
            ks: Section::NotRun,
            reconstruction: Section::NotRun,
            policy: Section::NotRun,
            mia_plain: Section::NotRun,
            mia_poisoned: Section::NotRun,
        }
    }

    fn any_failed(&self) -> bool {
        self.ks.is_failed()
            || self.reconstruction.is_failed()
            || self.policy.is_failed()
            || self.mia_plain.is_failed()
            || self.mia_poisoned.is_failed()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub toolkit_version: String,
    pub timestamp: String,
    /// Keyed by input role (`train`, `holdout`, `synthetic`, ...).
    pub input_digests: BTreeMap<String, InputDigest>,
    pub generator_metadata: Option<GeneratorMetadata>,
    pub pipeline: Section<BTreeMap<String, serde_json::Value>>,
    pub fidelity: Section<FidelityReport>,
    pub privacy: PrivacyReport,
    pub utility: Section<Vec<TstrResult>>,
    pub config_echo: Manifest,
    pub seeds: BTreeMap<String, u64>,
}

impl EvalReport {
    /// True when no requested suite failed.
    pub fn all_ok(&self) -> bool {
        !(self.pipeline.is_failed() || self.fidelity.is_failed() || self.privacy.any_failed() || self.utility.is_failed())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The serialized report with the timestamp blanked: a pure function of
    /// the inputs and resolved configuration.
    pub fn body_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.timestamp = String::new();
        copy.to_json()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }
}

/// Reads a suite configuration from a TOML file, or JSON when the file
/// name ends in `.json`.
pub fn load_config<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        toml::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
