use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde_json::{json, Value};

use super::manifest::{InputFiles, Manifest, PipelineGenerator, PipelineSpec, PrivacySection, PrivacySuite, UtilitySection, UtilityTask};
use super::{sha256_file, threshold_policy_check, EvalReport, InputDigest, PrivacyReport, Section, TOOLKIT_VERSION};
use crate::error::{Error, Result};
use crate::fidelity::{self, FidelityConfig, FidelityReport};
use crate::fixture::lcl_style_readings;
use crate::generators::{gmm_generate, gmm_generate_by_season, memorizer_generate, GeneratorKind, GeneratorMetadata, MemorizerConfig};
use crate::gmm::FitConfig;
use crate::kernels::{pca_project, write_coordinates};
use crate::poisoning::{inject, make_attack_registry, OutlierRegistry, OutlierSpec};
use crate::privacy::{mia_plain, mia_poisoned, reconstruction_ks, reconstruction_poisoned, MiaConfig};
use crate::profile::{ingest, load_wide, save_wide, split_households, split_time, write_readings, Horizon, ProfileSet, Role};
use crate::rng::substream;
use crate::utility::{overlapping_years, tstr_classify, tstr_forecast_mean, tstr_forecast_quantile, TstrResult};

/// Every seeded stage, in the order its stream index is assigned.
const STAGES: [&str; 13] = [
    "fixture",
    "split",
    "outliers",
    "diff_outliers",
    "inject",
    "generator",
    "utility_generator",
    "fidelity",
    "ks",
    "reconstruction",
    "mia_plain",
    "mia_poisoned",
    "utility",
];

/// Per-stage seeds drawn from independent streams of the master seed.
pub fn derive_seeds(master: u64) -> BTreeMap<String, u64> {
    STAGES
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), substream(master, i as u64 + 1).random::<u64>()))
        .collect()
}

/// Overwrites every seed field in the manifest with its derived stage seed.
fn resolve(manifest: &Manifest, seeds: &BTreeMap<String, u64>) -> Manifest {
    let mut m = manifest.clone();
    if let Some(p) = m.pipeline.as_mut() {
        p.fixture.seed = seeds["fixture"];
        p.split.seed = seeds["split"];
        if let Some(o) = p.outliers.as_mut() {
            o.seed = seeds["outliers"];
            let mut diff = p.diff_outliers.clone().unwrap_or_else(|| OutlierSpec {
                count: o.count,
                ..OutlierSpec::different_distribution(0)
            });
            diff.seed = seeds["diff_outliers"];
            p.diff_outliers = Some(diff);
        }
    }
    if let Some(f) = m.fidelity.as_mut() {
        f.seed = seeds["fidelity"];
    }
    if let Some(p) = m.privacy.as_mut() {
        p.reconstruction.seed = seeds["reconstruction"];
        p.mia.seed = seeds["mia_plain"];
    }
    if let Some(u) = m.utility.as_mut() {
        u.tstr.seed = seeds["utility"];
    }
    m
}

/// A named delimited-text output kept in memory until report assembly.
pub type SideFile = (String, Vec<u8>);

/// Result of [`run_full_evaluation`]: the report and the files written.
#[derive(Debug, Clone)]
pub struct EvaluationRun {
    pub report: EvalReport,
    pub written: Vec<PathBuf>,
}

pub fn write_side_files(output_dir: &Path, files: &[SideFile]) -> Result<Vec<PathBuf>> {
    files
        .iter()
        .map(|(name, bytes)| {
            let path = output_dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Output of the pipeline stage: input file names inside the output
/// directory, plus counts.
struct Built {
    files: InputFiles,
    summary: BTreeMap<String, Value>,
    metadata: GeneratorMetadata,
}

fn save(path: &Path, set: &ProfileSet, written: &mut Vec<PathBuf>) -> Result<()> {
    save_wide(path, set)?;
    written.push(path.to_path_buf());
    Ok(())
}

fn generate(spec: &PipelineSpec, train: &ProfileSet, n: usize, seed: u64, summary: &mut BTreeMap<String, Value>, key: &str) -> Result<ProfileSet> {
    let g = &spec.generator;
    match g.kind {
        PipelineGenerator::Memorizer => memorizer_generate(
            train,
            n,
            &MemorizerConfig {
                jitter_sigma: g.jitter_sigma,
                seed,
                mode: g.mode,
            },
        ),
        PipelineGenerator::GmmSampler => {
            let out = gmm_generate(train, n, &FitConfig::with_k(g.k, seed))?;
            summary.insert(format!("{key}_clamped_values"), json!(out.clamped));
            Ok(out.synthetic)
        }
    }
}

fn run_pipeline(
    m: &Manifest,
    spec: &PipelineSpec,
    base: &Path,
    out: &Path,
    seeds: &BTreeMap<String, u64>,
    written: &mut Vec<PathBuf>,
) -> Result<Built> {
    let mut summary = BTreeMap::new();
    let readings_path = match &spec.readings {
        Some(p) => base.join(p),
        None => {
            let path = out.join("readings.csv");
            let readings = lcl_style_readings(&spec.fixture)?;
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_readings(BufWriter::new(file), &readings)?;
            written.push(path.clone());
            path
        }
    };
    let (data, stats) = ingest(&readings_path, m.horizon)?;
    summary.insert("ingest".into(), serde_json::to_value(&stats)?);

    let (train, holdout) = split_households(&data, &spec.split)?;
    summary.insert("train_profiles".into(), json!(train.len()));
    summary.insert("holdout_profiles".into(), json!(holdout.len()));
    let mut files = InputFiles {
        fidelity_real: Some("train.csv".into()),
        holdout: Some("holdout.csv".into()),
        ..InputFiles::default()
    };
    save(&out.join("train.csv"), &train, written)?;
    save(&out.join("holdout.csv"), &holdout, written)?;

    let poisoned = match &spec.outliers {
        Some(o) => {
            let diff = spec.diff_outliers.as_ref().expect("resolved manifest fills diff_outliers");
            let registry = make_attack_registry(o, m.horizon, diff)?;
            let registry_path = out.join("registry.csv");
            registry.save(&registry_path)?;
            written.push(registry_path.clone());
            written.push(OutlierRegistry::sidecar_path(&registry_path));
            files.registry = Some("registry.csv".into());
            summary.insert("injected_outliers".into(), json!(registry.seen.len()));
            let poisoned = inject(&train, &registry.seen, seeds["inject"])?;
            save(&out.join("poisoned_train.csv"), &poisoned, written)?;
            files.train = Some("poisoned_train.csv".into());
            poisoned
        }
        None => {
            files.train = Some("train.csv".into());
            train.clone()
        }
    };

    let n = spec.generator.n.unwrap_or(poisoned.len());
    let synthetic = generate(spec, &poisoned, n, seeds["generator"], &mut summary, "generator")?;
    let synthetic_path = out.join("synthetic.csv");
    save(&synthetic_path, &synthetic, written)?;
    let (name, kind) = match spec.generator.kind {
        PipelineGenerator::Memorizer => ("memorizer", GeneratorKind::Memorizer),
        PipelineGenerator::GmmSampler => ("gmm-sampler", GeneratorKind::GmmSampler),
    };
    let mut metadata = GeneratorMetadata::new(name, kind);
    metadata.claimed_epsilon = spec.generator.claimed_epsilon;
    metadata.save_sidecar(&synthetic_path)?;
    written.push(GeneratorMetadata::sidecar_path(&synthetic_path));
    files.synthetic = Some("synthetic.csv".into());

    if m.utility.is_some() {
        // the task models train on early years of the clean train households
        // and are scored on the eval years of the holdout households
        let real_fit = split_time(&train, &spec.split)?.fit;
        let real_eval = split_time(&holdout, &spec.split)?.eval;
        let seed = seeds["utility_generator"];
        let synthetic_fit = match spec.generator.kind {
            PipelineGenerator::GmmSampler => gmm_generate_by_season(&real_fit, real_fit.len(), &FitConfig::with_k(spec.generator.k, seed))?,
            PipelineGenerator::Memorizer => generate(spec, &real_fit, real_fit.len(), seed, &mut summary, "utility_generator")?,
        };
        for (key, set) in [("real_fit", &real_fit), ("real_eval", &real_eval), ("synthetic_fit", &synthetic_fit)] {
            let name = PathBuf::from(format!("{key}.csv"));
            save(&out.join(&name), set, written)?;
            match key {
                "real_fit" => files.real_fit = Some(name),
                "real_eval" => files.real_eval = Some(name),
                _ => files.synthetic_fit = Some(name),
            }
        }
    }
    Ok(Built { files, summary, metadata })
}

/// Loaded inputs by role. A role that failed to load keeps its error so
/// that only the suites needing it fail.
#[derive(Default)]
struct Loaded {
    sets: BTreeMap<&'static str, std::result::Result<ProfileSet, String>>,
    registry: Option<std::result::Result<OutlierRegistry, String>>,
    digests: BTreeMap<String, InputDigest>,
}

impl Loaded {
    fn load(files: &InputFiles, base: &Path, horizon: Horizon) -> Loaded {
        let mut loaded = Loaded::default();
        let roles: [(&'static str, &Option<PathBuf>, Role); 7] = [
            ("train", &files.train, Role::Train),
            ("holdout", &files.holdout, Role::Holdout),
            ("synthetic", &files.synthetic, Role::Synthetic),
            ("fidelity_real", &files.fidelity_real, Role::Train),
            ("real_fit", &files.real_fit, Role::Train),
            ("real_eval", &files.real_eval, Role::Holdout),
            ("synthetic_fit", &files.synthetic_fit, Role::Synthetic),
        ];
        for (role, path, r) in roles {
            if let Some(path) = path {
                let path = base.join(path);
                loaded.digest(role, &path);
                loaded.sets.insert(role, load_wide(&path, r, Some(horizon)).map_err(|e| e.to_string()));
            }
        }
        if let Some(path) = &files.registry {
            let path = base.join(path);
            loaded.digest("registry", &path);
            loaded.registry = Some(OutlierRegistry::load(&path, Some(horizon)).map_err(|e| e.to_string()));
        }
        loaded
    }

    fn digest(&mut self, role: &str, path: &Path) {
        if let Ok(sha256) = sha256_file(path) {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            self.digests.insert(role.to_string(), InputDigest { path: name, sha256 });
        }
    }

    fn get(&self, role: &str) -> Result<&ProfileSet> {
        match self.sets.get(role) {
            Some(Ok(set)) => Ok(set),
            Some(Err(e)) => Err(Error::InvalidConfig(format!("input `{role}` failed to load: {e}"))),
            None => Err(Error::InvalidConfig(format!("input `{role}` was not provided"))),
        }
    }

    fn registry(&self) -> Result<&OutlierRegistry> {
        match &self.registry {
            Some(Ok(r)) => Ok(r),
            Some(Err(e)) => Err(Error::InvalidConfig(format!("input `registry` failed to load: {e}"))),
            None => Err(Error::InvalidConfig("input `registry` was not provided".into())),
        }
    }

    fn fidelity_real(&self) -> Result<&ProfileSet> {
        if self.sets.contains_key("fidelity_real") {
            self.get("fidelity_real")
        } else {
            self.get("train")
        }
    }
}

fn fidelity_suite(inputs: &Loaded, cfg: &FidelityConfig) -> Result<(FidelityReport, Vec<SideFile>)> {
    let real = inputs.fidelity_real()?;
    let synthetic = inputs.get("synthetic")?;
    let report = fidelity::evaluate(real, synthetic, cfg)?;
    let mut slots = Vec::new();
    fidelity::write_slot_table(&mut slots, real, synthetic, &cfg.quantiles)?;
    let real_rows = real.rows();
    let syn_rows = synthetic.rows();
    let (_, projections) = pca_project(&real_rows, &[("real", &real_rows), ("synthetic", &syn_rows)])?;
    let mut pca = Vec::new();
    write_coordinates(&mut pca, &projections)?;
    Ok((report, vec![("fidelity_slots.csv".into(), slots), ("pca_coordinates.csv".into(), pca)]))
}

fn requested<T>(wanted: bool, run: impl FnOnce() -> Result<T>) -> Section<T> {
    if wanted {
        Section::from_result(run())
    } else {
        Section::NotRun
    }
}

fn privacy_suite(inputs: &Loaded, cfg: &PrivacySection, seeds: &BTreeMap<String, u64>) -> (PrivacyReport, Vec<SideFile>) {
    let mut side = Vec::new();
    let ks = requested(cfg.wants(PrivacySuite::Recon), || {
        reconstruction_ks(
            inputs.get("train")?,
            inputs.get("holdout")?,
            inputs.get("synthetic")?,
            cfg.ks_sample_size,
            seeds["ks"],
        )
    });
    let reconstruction = requested(cfg.wants(PrivacySuite::ReconPoisoned), || {
        let result = reconstruction_poisoned(inputs.registry()?, inputs.get("synthetic")?, &cfg.reconstruction)?;
        let mut curve = Vec::new();
        result.write_curve(&mut curve)?;
        side.push(("reconstruction_curve.csv".to_string(), curve));
        Ok(result)
    });
    let policy = match &reconstruction {
        Section::NotRun => Section::NotRun,
        Section::Failed { .. } => Section::Failed {
            error: "reconstruction did not complete".into(),
        },
        Section::Ok { result } => Section::from_result(threshold_policy_check(result, cfg.policy_ratio, cfg.max_fraction)),
    };
    let mia = requested(cfg.wants(PrivacySuite::Mia), || {
        mia_plain(inputs.get("train")?, inputs.get("holdout")?, inputs.get("synthetic")?, &cfg.mia)
    });
    let poisoned_cfg = MiaConfig {
        seed: seeds["mia_poisoned"],
        ..cfg.mia.clone()
    };
    let mia_poisoned = requested(cfg.wants(PrivacySuite::MiaPoisoned), || {
        mia_poisoned(inputs.registry()?, inputs.get("synthetic")?, inputs.get("holdout")?, &poisoned_cfg)
    });
    (
        PrivacyReport {
            ks,
            reconstruction,
            policy,
            mia_plain: mia,
            mia_poisoned,
        },
        side,
    )
}

fn utility_task(
    task: UtilityTask,
    real_fit: &ProfileSet,
    synthetic_fit: &ProfileSet,
    real_eval: &ProfileSet,
    cfg: &UtilitySection,
) -> Result<TstrResult> {
    if !cfg.allow_overlap {
        for (name, set) in [("real_fit", real_fit), ("synthetic_fit", synthetic_fit)] {
            let shared = overlapping_years(set, real_eval);
            if !shared.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "{name} shares years {shared:?} with real_eval; set allow_overlap to evaluate anyway"
                )));
            }
        }
    }
    match task {
        UtilityTask::Classify => tstr_classify(real_fit, synthetic_fit, real_eval, &cfg.tstr),
        UtilityTask::ForecastMean => tstr_forecast_mean(real_fit, synthetic_fit, real_eval, &cfg.tstr),
        UtilityTask::ForecastQ95 => tstr_forecast_quantile(real_fit, synthetic_fit, real_eval, 0.95, &cfg.tstr),
    }
}

fn utility_suite(inputs: &Loaded, cfg: &UtilitySection) -> Result<(Vec<TstrResult>, Vec<SideFile>)> {
    let real_fit = inputs.get("real_fit")?;
    let synthetic_fit = inputs.get("synthetic_fit")?;
    let real_eval = inputs.get("real_eval")?;
    let mut results = Vec::new();
    let mut side = Vec::new();
    for &task in &cfg.tasks {
        let result = utility_task(task, real_fit, synthetic_fit, real_eval, cfg)?;
        let mut trace = Vec::new();
        result.write_trace(&mut trace)?;
        side.push((format!("{}_epochs.csv", task.file_stem()), trace));
        results.push(result);
    }
    Ok((results, side))
}

fn split_side<T>(result: Result<(T, Vec<SideFile>)>, side: &mut Vec<SideFile>) -> Section<T> {
    Section::from_result(result.map(|(value, files)| {
        side.extend(files);
        value
    }))
}

fn failed_everywhere<T>(wanted: bool, error: &str) -> Section<T> {
    if wanted {
        Section::Failed { error: error.to_string() }
    } else {
        Section::NotRun
    }
}

/// Runs every suite the manifest requests and writes `report.json` plus the
/// side-files into `output_dir`. Suite failures are recorded in the report;
/// the error path is reserved for an unusable output directory.
pub fn run_full_evaluation(manifest: &Manifest, base_dir: &Path, output_dir: &Path) -> Result<EvaluationRun> {
    std::fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let seeds = derive_seeds(manifest.seed);
    let resolved = resolve(manifest, &seeds);
    let mut written = Vec::new();

    let (pipeline, files, base, mut metadata) = match &resolved.pipeline {
        Some(spec) => match run_pipeline(&resolved, spec, base_dir, output_dir, &seeds, &mut written) {
            Ok(built) => (
                Section::Ok { result: built.summary },
                Some(built.files),
                output_dir.to_path_buf(),
                Some(built.metadata),
            ),
            Err(e) => (Section::Failed { error: e.to_string() }, None, output_dir.to_path_buf(), None),
        },
        None => (Section::NotRun, resolved.inputs.clone(), base_dir.to_path_buf(), None),
    };

    let Some(files) = files else {
        let error = "pipeline failed; no inputs to evaluate";
        let privacy = match &resolved.privacy {
            Some(p) => PrivacyReport {
                ks: failed_everywhere(p.wants(PrivacySuite::Recon), error),
                reconstruction: failed_everywhere(p.wants(PrivacySuite::ReconPoisoned), error),
                policy: failed_everywhere(p.wants(PrivacySuite::ReconPoisoned), error),
                mia_plain: failed_everywhere(p.wants(PrivacySuite::Mia), error),
                mia_poisoned: failed_everywhere(p.wants(PrivacySuite::MiaPoisoned), error),
            },
            None => PrivacyReport::not_run(),
        };
        let report = EvalReport {
            toolkit_version: TOOLKIT_VERSION.into(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            input_digests: BTreeMap::new(),
            generator_metadata: None,
            pipeline,
            fidelity: failed_everywhere(resolved.fidelity.is_some(), error),
            privacy,
            utility: failed_everywhere(resolved.utility.is_some(), error),
            config_echo: resolved,
            seeds,
        };
        return finish(report, output_dir, written);
    };

    let inputs = Loaded::load(&files, &base, resolved.horizon);
    if metadata.is_none() {
        if let Some(path) = &files.synthetic {
            metadata = GeneratorMetadata::load_sidecar(&base.join(path)).ok().flatten();
        }
        if metadata.is_none() {
            metadata = resolved.generator.clone();
        }
    }

    let ((fidelity, mut side), ((privacy, privacy_side), (utility, utility_side))) = rayon::join(
        || {
            let mut side = Vec::new();
            let section = match &resolved.fidelity {
                Some(cfg) => split_side(fidelity_suite(&inputs, cfg), &mut side),
                None => Section::NotRun,
            };
            (section, side)
        },
        || {
            rayon::join(
                || match &resolved.privacy {
                    Some(cfg) => privacy_suite(&inputs, cfg, &seeds),
                    None => (PrivacyReport::not_run(), Vec::new()),
                },
                || {
                    let mut side = Vec::new();
                    let section = match &resolved.utility {
                        Some(cfg) => split_side(utility_suite(&inputs, cfg), &mut side),
                        None => Section::NotRun,
                    };
                    (section, side)
                },
            )
        },
    );
    side.extend(privacy_side);
    side.extend(utility_side);
    written.extend(write_side_files(output_dir, &side)?);

    let report = EvalReport {
        toolkit_version: TOOLKIT_VERSION.into(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        input_digests: inputs.digests,
        generator_metadata: metadata,
        pipeline,
        fidelity,
        privacy,
        utility,
        config_echo: resolved,
        seeds,
    };
    finish(report, output_dir, written)
}

fn finish(report: EvalReport, output_dir: &Path, mut written: Vec<PathBuf>) -> Result<EvaluationRun> {
    let path = output_dir.join("report.json");
    report.save(&path)?;
    written.push(path);
    Ok(EvaluationRun { report, written })
}
