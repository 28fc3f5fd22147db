//! Synthetic data sources: externally produced files plus two reference
//! generators at opposite ends of the privacy spectrum. The memorizer copies
//! training rows; the mixture sampler draws from a smooth density fit.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{self, FitConfig, GmmModel};
use crate::profile::{load_wide, Horizon, Profile, ProfileSet, Role, Season};
use crate::rng::{seeded, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    External,
    Memorizer,
    GmmSampler,
}

/// Descriptive metadata carried into reports. Privacy claims are echoed,
/// never computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMetadata {
    pub name: String,
    pub kind: GeneratorKind,
    #[serde(default)]
    pub claimed_epsilon: Option<f64>,
    #[serde(default)]
    pub claimed_delta: Option<f64>,
    #[serde(default)]
    pub notes: String,
}

impl GeneratorMetadata {
    pub fn new(name: impl Into<String>, kind: GeneratorKind) -> Self {
        GeneratorMetadata {
            name: name.into(),
            kind,
            claimed_epsilon: None,
            claimed_delta: None,
            notes: String::new(),
        }
    }

    /// Metadata for a synthetic file lives in `<file>.meta.json`.
    pub fn sidecar_path(synthetic: &Path) -> PathBuf {
        let mut name = synthetic.as_os_str().to_owned();
        name.push(".meta.json");
        PathBuf::from(name)
    }

    pub fn save_sidecar(&self, synthetic: &Path) -> Result<()> {
        let path = Self::sidecar_path(synthetic);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    /// `None` when the synthetic file has no sidecar.
    pub fn load_sidecar(synthetic: &Path) -> Result<Option<GeneratorMetadata>> {
        let path = Self::sidecar_path(synthetic);
        if !path.exists() {
            return Ok(None);
        }
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_reader(BufReader::new(file))?))
    }

    fn validate(&self) -> Result<()> {
        if let Some(eps) = self.claimed_epsilon {
            if !(eps >= 0.0) {
                return Err(Error::InvalidConfig(format!("claimed epsilon must be non-negative, got {eps}")));
            }
        }
        Ok(())
    }
}

/// Reads a synthetic file in the canonical wide format.
pub fn load_external(path: impl AsRef<Path>, metadata: GeneratorMetadata, horizon: Option<Horizon>) -> Result<(ProfileSet, GeneratorMetadata)> {
    metadata.validate()?;
    let set = load_wide(path, Role::Synthetic, horizon)?;
    Ok((set, metadata))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Each output copies a uniformly drawn training row.
    #[default]
    Uniform,
    /// Output `i` copies training row `i mod |train|`.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizerConfig {
    pub jitter_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: SamplingMode,
}

fn synthetic_id(i: usize) -> String {
    format!("syn-{i:07}")
}

/// Regurgitates training rows with optional per-slot Gaussian jitter,
/// clamped at zero.
pub fn memorizer_generate(train: &ProfileSet, n: usize, config: &MemorizerConfig) -> Result<ProfileSet> {
    if train.is_empty() {
        return Err(Error::InsufficientSamples("memorizer needs a non-empty training set".into()));
    }
    if !(config.jitter_sigma >= 0.0 && config.jitter_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "jitter_sigma must be non-negative, got {}",
            config.jitter_sigma
        )));
    }
    let mut rng = seeded(config.seed);
    let jitter = Normal::new(0.0, config.jitter_sigma).expect("sigma validated");
    let profiles = (0..n)
        .map(|i| {
            let src = match config.mode {
                SamplingMode::Uniform => &train.profiles()[rng.random_range(0..train.len())],
                SamplingMode::Sequential => &train.profiles()[i % train.len()],
            };
            let values = if config.jitter_sigma == 0.0 {
                src.values.clone()
            } else {
                src.values.iter().map(|v| (v + jitter.sample(&mut rng)).max(0.0)).collect()
            };
            Profile {
                household_id: synthetic_id(i),
                start_date: src.start_date,
                values,
                season: src.season,
            }
        })
        .collect();
    ProfileSet::new(profiles, train.horizon(), Role::Synthetic)
}

/// Output of [`gmm_generate`].
#[derive(Debug, Clone)]
pub struct GmmGenerated {
    pub synthetic: ProfileSet,
    pub model: GmmModel,
    pub clamped: usize,
}

const SAMPLE_STREAM: u64 = 0x5a4d;

/// Fits a diagonal mixture on `train` and samples `n` profiles from it.
pub fn gmm_generate(train: &ProfileSet, n: usize, config: &FitConfig) -> Result<GmmGenerated> {
    let fit = gmm::fit(train, config)?;
    let sample_seed = substream(config.seed, SAMPLE_STREAM).random::<u64>();
    let (synthetic, clamped) = gmm::sample(&fit.model, n, sample_seed, train.horizon())?;
    let profiles = synthetic
        .into_profiles()
        .into_iter()
        .enumerate()
        .map(|(i, mut p)| {
            p.household_id = synthetic_id(i);
            p
        })
        .collect();
    Ok(GmmGenerated {
        synthetic: ProfileSet::new(profiles, train.horizon(), Role::Synthetic)?,
        model: fit.model,
        clamped,
    })
}

/// One mixture per season label, sampled in proportion to the training
/// label shares; outputs carry the season they were drawn for.
pub fn gmm_generate_by_season(train: &ProfileSet, n: usize, config: &FitConfig) -> Result<ProfileSet> {
    let mut profiles = Vec::with_capacity(n);
    let labelled: Vec<&Profile> = train.profiles().iter().filter(|p| p.season.is_some()).collect();
    if labelled.len() != train.len() {
        return Err(Error::MissingLabels);
    }
    let seasons = [Season::WinterSpring, Season::SummerAutumn];
    let mut produced = 0;
    for (si, season) in seasons.iter().enumerate() {
        let subset: Vec<Profile> = labelled.iter().filter(|p| p.season == Some(*season)).map(|p| (*p).clone()).collect();
        if subset.is_empty() {
            continue;
        }
        let share = if si + 1 == seasons.len() {
            n - produced
        } else {
            (n as f64 * subset.len() as f64 / train.len() as f64).round() as usize
        };
        let set = ProfileSet::new(subset, train.horizon(), Role::Train)?;
        let cfg = FitConfig {
            seed: config.seed.wrapping_add(si as u64),
            ..config.clone()
        };
        let generated = gmm_generate(&set, share, &cfg)?;
        for mut p in generated.synthetic.into_profiles() {
            p.household_id = synthetic_id(produced);
            p.season = Some(*season);
            profiles.push(p);
            produced += 1;
        }
    }
    ProfileSet::new(profiles, train.horizon(), Role::Synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::nearest_neighbor_distances;
    use crate::profile::save_wide;
    use rand_distr::StandardNormal;

    fn random_set(seed: u64, n: usize) -> ProfileSet {
        let mut rng = seeded(seed);
        let rows = (0..n).map(|_| (0..48).map(|_| rng.random::<f64>()).collect()).collect();
        ProfileSet::from_rows(rows, Horizon::Daily, Role::Train).unwrap()
    }

    #[test]
    fn memorizer_without_jitter_copies() {
        let train = random_set(1, 50);
        let cfg = MemorizerConfig {
            jitter_sigma: 0.0,
            seed: 2,
            mode: SamplingMode::Uniform,
        };
        let syn = memorizer_generate(&train, 200, &cfg).unwrap();
        assert_eq!(syn.role(), Role::Synthetic);
        let nn = nearest_neighbor_distances(&syn, &train).unwrap();
        assert!(nn.nn_distance.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn sequential_memorizer_reproduces_train() {
        let train = random_set(3, 30);
        let cfg = MemorizerConfig {
            jitter_sigma: 0.0,
            seed: 0,
            mode: SamplingMode::Sequential,
        };
        let syn = memorizer_generate(&train, 30, &cfg).unwrap();
        assert_eq!(syn.rows(), train.rows());
    }

    #[test]
    fn jittered_memorizer_stays_close() {
        let train = random_set(4, 200);
        let holdout = random_set(5, 200);
        let cfg = MemorizerConfig {
            jitter_sigma: 0.01,
            seed: 6,
            mode: SamplingMode::Uniform,
        };
        let syn = memorizer_generate(&train, 300, &cfg).unwrap();
        let to_train = nearest_neighbor_distances(&syn, &train).unwrap().nn_distance;
        let to_holdout = nearest_neighbor_distances(&syn, &holdout).unwrap().nn_distance;
        let mean_train = to_train.iter().sum::<f64>() / 300.0;
        let mean_holdout = to_holdout.iter().sum::<f64>() / 300.0;
        // |N(0, 0.01² I_48)| concentrates at 0.01 sqrt(48)
        assert!((mean_train - 0.01 * 48f64.sqrt()).abs() < 0.01, "{mean_train}");
        assert!(mean_holdout > 20.0 * mean_train);
    }

    #[test]
    fn gmm_sampler_on_blobs() {
        let mut rng = seeded(7);
        let mut rows = Vec::new();
        for c in [0.5, 3.0] {
            for _ in 0..300 {
                rows.push(
                    (0..48)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            c + 0.1 * z
                        })
                        .collect::<Vec<f64>>(),
                );
            }
        }
        let train = ProfileSet::from_rows(rows, Horizon::Daily, Role::Train).unwrap();
        let generated = gmm_generate(&train, 2000, &FitConfig::with_k(2, 8)).unwrap();
        let mut lo = (0.0, 0usize);
        let mut hi = (0.0, 0usize);
        for p in generated.synthetic.profiles() {
            let m = p.values.iter().sum::<f64>() / 48.0;
            if m < 1.75 {
                lo = (lo.0 + m, lo.1 + 1);
            } else {
                hi = (hi.0 + m, hi.1 + 1);
            }
        }
        assert!((lo.0 / lo.1 as f64 - 0.5).abs() < 0.3);
        assert!((hi.0 / hi.1 as f64 - 3.0).abs() < 0.3);
        let again = gmm_generate(&train, 2000, &FitConfig::with_k(2, 8)).unwrap();
        assert_eq!(again.synthetic, generated.synthetic);
    }

    #[test]
    fn external_roundtrip_and_horizon_check() {
        let set = random_set(9, 25).with_role(Role::Synthetic);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("syn.csv");
        save_wide(&path, &set).unwrap();
        let meta = GeneratorMetadata::new("ext", GeneratorKind::External);
        let (back, _) = load_external(&path, meta.clone(), Some(Horizon::Daily)).unwrap();
        assert_eq!(back.rows(), set.rows());
        assert_eq!(back.role(), Role::Synthetic);
        assert!(matches!(
            load_external(&path, meta, Some(Horizon::Weekly)),
            Err(Error::HorizonMismatch { .. })
        ));
    }
}
