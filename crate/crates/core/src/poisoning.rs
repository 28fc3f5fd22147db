//! Artificial outliers, their injection into training data, and the labelled
//! registry that poisoned attacks are scored against.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{read_wide_raw, write_wide_with_labels, Horizon, Profile, ProfileSet, Role, ARTIFICIAL_PREFIX};
use crate::rng::{seeded, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierSpec {
    pub count: usize,
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for OutlierSpec {
    fn default() -> Self {
        OutlierSpec {
            count: 100,
            mu: 6.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

impl OutlierSpec {
    /// Default spec for the unseen, differently distributed attack rows.
    pub fn different_distribution(seed: u64) -> OutlierSpec {
        OutlierSpec {
            mu: 12.0,
            seed,
            ..OutlierSpec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidConfig("outlier count must be positive".into()));
        }
        if !self.mu.is_finite() || !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "invalid outlier distribution N({}, {}²)",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }
}

/// Outlier profiles plus how many slot values had to be clamped at zero.
#[derive(Debug, Clone)]
pub struct Outliers {
    pub profiles: ProfileSet,
    pub clamped: usize,
}

fn outlier_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date")
}

fn draw(spec: &OutlierSpec, horizon: Horizon, tag: &str, stream: u64) -> Result<Outliers> {
    spec.validate()?;
    let mut rng = substream(spec.seed, stream);
    let normal = Normal::new(spec.mu, spec.sigma).expect("validated");
    let mut clamped = 0;
    let profiles = (0..spec.count)
        .map(|i| {
            let values = (0..horizon.len())
                .map(|_| {
                    let v: f64 = normal.sample(&mut rng);
                    if v < 0.0 {
                        clamped += 1;
                    }
                    v.max(0.0)
                })
                .collect();
            Profile {
                household_id: format!("{ARTIFICIAL_PREFIX}{tag}-{i:04}"),
                start_date: outlier_date(),
                values,
                season: None,
            }
        })
        .collect();
    Ok(Outliers {
        profiles: ProfileSet::new(profiles, horizon, Role::Train)?,
        clamped,
    })
}

const SEEN_STREAM: u64 = 1;
const UNSEEN_SAME_STREAM: u64 = 2;
const UNSEEN_DIFF_STREAM: u64 = 3;

/// `spec.count` profiles of i.i.d. N(mu, sigma²) slot values, clamped at 0.
/// These are the rows that get injected.
pub fn make_outliers(spec: &OutlierSpec, horizon: Horizon) -> Result<Outliers> {
    draw(spec, horizon, "seen", SEEN_STREAM)
}

/// Union of `train` and `outliers` in a seeded random order.
pub fn inject(train: &ProfileSet, outliers: &ProfileSet, seed: u64) -> Result<ProfileSet> {
    train.ensure_same_horizon(outliers)?;
    if outliers.is_empty() {
        return Ok(train.clone());
    }
    let mut rows: Vec<Profile> = train.profiles().iter().chain(outliers.profiles()).cloned().collect();
    rows.shuffle(&mut seeded(seed));
    ProfileSet::new(rows, train.horizon(), train.role())
}

/// Ground truth for poisoned attacks.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierRegistry {
    /// Injected into training data; label True.
    pub seen: ProfileSet,
    /// Same distribution as `seen`, never injected; label False.
    pub unseen_same: ProfileSet,
    /// A different implausible distribution; label False.
    pub unseen_diff: ProfileSet,
    pub spec: OutlierSpec,
    pub diff_spec: OutlierSpec,
}

#[derive(Serialize, Deserialize)]
struct RegistrySidecar {
    spec: OutlierSpec,
    diff_spec: OutlierSpec,
}

/// Builds all three registry sets. `seen` is identical to
/// `make_outliers(spec, horizon)`, so it can be injected directly.
pub fn make_attack_registry(spec: &OutlierSpec, horizon: Horizon, diff_spec: &OutlierSpec) -> Result<OutlierRegistry> {
    if diff_spec.mu == spec.mu && diff_spec.sigma == spec.sigma {
        return Err(Error::InvalidConfig(
            "the different-distribution spec must differ from the injected spec".into(),
        ));
    }
    let same_count = OutlierSpec { ..spec.clone() };
    let diff_count = OutlierSpec {
        count: spec.count,
        ..diff_spec.clone()
    };
    Ok(OutlierRegistry {
        seen: make_outliers(spec, horizon)?.profiles,
        unseen_same: draw(&same_count, horizon, "same", UNSEEN_SAME_STREAM)?.profiles,
        unseen_diff: draw(&diff_count, horizon, "diff", UNSEEN_DIFF_STREAM)?.profiles,
        spec: spec.clone(),
        diff_spec: diff_count,
    })
}

impl OutlierRegistry {
    pub fn horizon(&self) -> Horizon {
        self.seen.horizon()
    }

    /// All registry rows (seen, unseen-same, unseen-diff) with membership
    /// labels.
    pub fn attack_set(&self) -> (ProfileSet, Vec<bool>) {
        let mut profiles = Vec::new();
        let mut labels = Vec::new();
        for (set, label) in [(&self.seen, true), (&self.unseen_same, false), (&self.unseen_diff, false)] {
            profiles.extend(set.profiles().iter().cloned());
            labels.extend(std::iter::repeat_n(label, set.len()));
        }
        let set = ProfileSet::new(profiles, self.horizon(), Role::Attack).expect("registry sets share a horizon");
        (set, labels)
    }

    /// The spec sidecar lives next to the registry file.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".spec.json");
        PathBuf::from(name)
    }

    /// Wide format with `label` = True/False, plus a JSON spec sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (set, labels) = self.attack_set();
        let labels: Vec<String> = labels.iter().map(|&l| if l { "True" } else { "False" }.to_string()).collect();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        write_wide_with_labels(BufWriter::new(file), &set, Some(&labels))?;
        let sidecar = Self::sidecar_path(path);
        let file = File::create(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        serde_json::to_writer_pretty(
            BufWriter::new(file),
            &RegistrySidecar {
                spec: self.spec.clone(),
                diff_spec: self.diff_spec.clone(),
            },
        )?;
        Ok(())
    }

    /// Rows are routed by the `seen`/`same`/`diff` tag in their household id;
    /// the label column must agree with that routing.
    pub fn load(path: impl AsRef<Path>, horizon: Option<Horizon>) -> Result<OutlierRegistry> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let (profiles, labels, horizon) = read_wide_raw(BufReader::new(file), horizon)?;
        let (mut seen, mut same, mut diff) = (Vec::new(), Vec::new(), Vec::new());
        for (i, (p, label)) in profiles.into_iter().zip(labels).enumerate() {
            let bad = |reason: String| Error::MalformedRow { line: i + 2, reason };
            let truth = match label.as_str() {
                "True" => true,
                "False" => false,
                other => return Err(bad(format!("registry label must be True or False, got `{other}`"))),
            };
            let tag = p
                .household_id
                .strip_prefix(ARTIFICIAL_PREFIX)
                .and_then(|rest| rest.split('-').next())
                .unwrap_or("");
            match (tag, truth) {
                ("seen", true) => seen.push(p),
                ("same", false) => same.push(p),
                ("diff", false) => diff.push(p),
                _ => return Err(bad(format!("row `{}` labelled {label} does not match a registry set", p.household_id))),
            }
        }
        let sidecar = Self::sidecar_path(path);
        let file = File::open(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let specs: RegistrySidecar = serde_json::from_reader(BufReader::new(file))?;
        Ok(OutlierRegistry {
            seen: ProfileSet::new(seen, horizon, Role::Attack)?,
            unseen_same: ProfileSet::new(same, horizon, Role::Attack)?,
            unseen_diff: ProfileSet::new(diff, horizon, Role::Attack)?,
            spec: specs.spec,
            diff_spec: specs.diff_spec,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_outliers_are_implausible() {
        let out = make_outliers(&OutlierSpec::default(), Horizon::Daily).unwrap();
        assert_eq!(out.profiles.len(), 100);
        assert_eq!(out.clamped, 0);
        let all: Vec<f64> = out.profiles.profiles().iter().flat_map(|p| p.values.iter().copied()).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!((mean - 6.0).abs() < 3.0 / 4800f64.sqrt(), "{mean}");
        assert!(out.profiles.profiles().iter().all(Profile::is_artificial));
    }

    #[test]
    fn zero_sigma_is_constant() {
        let spec = OutlierSpec {
            sigma: 0.0,
            count: 3,
            ..OutlierSpec::default()
        };
        let out = make_outliers(&spec, Horizon::Weekly).unwrap();
        assert!(out
            .profiles
            .profiles()
            .iter()
            .all(|p| p.values.len() == 336 && p.values.iter().all(|&v| v == 6.0)));
    }

    #[test]
    fn clamping_is_counted() {
        let spec = OutlierSpec {
            mu: 0.0,
            count: 10,
            ..OutlierSpec::default()
        };
        let out = make_outliers(&spec, Horizon::Daily).unwrap();
        assert!(out.clamped > 100);
        assert!(out.profiles.profiles().iter().flat_map(|p| &p.values).all(|&v| v >= 0.0));
    }

    fn small_train() -> ProfileSet {
        let rows = (0..20).map(|i| vec![i as f64 * 0.01; 48]).collect();
        ProfileSet::from_rows(rows, Horizon::Daily, Role::Train).unwrap()
    }

    #[test]
    fn inject_is_a_pure_union() {
        let train = small_train();
        let before = train.clone();
        let out = make_outliers(
            &OutlierSpec {
                count: 5,
                ..OutlierSpec::default()
            },
            Horizon::Daily,
        )
        .unwrap();
        let poisoned = inject(&train, &out.profiles, 3).unwrap();
        assert_eq!(train, before);
        assert_eq!(poisoned.len(), 25);
        for o in out.profiles.profiles() {
            assert_eq!(poisoned.profiles().iter().filter(|p| *p == o).count(), 1);
        }
        let empty = ProfileSet::new(vec![], Horizon::Daily, Role::Train).unwrap();
        assert_eq!(inject(&train, &empty, 3).unwrap(), train);
    }

    #[test]
    fn inject_rejects_mixed_horizons() {
        let out = make_outliers(
            &OutlierSpec {
                count: 2,
                ..OutlierSpec::default()
            },
            Horizon::Weekly,
        )
        .unwrap();
        assert!(matches!(inject(&small_train(), &out.profiles, 0), Err(Error::HorizonMismatch { .. })));
    }

    #[test]
    fn registry_sets_are_disjoint() {
        let spec = OutlierSpec {
            seed: 11,
            ..OutlierSpec::default()
        };
        let reg = make_attack_registry(&spec, Horizon::Daily, &OutlierSpec::different_distribution(11)).unwrap();
        let (set, labels) = reg.attack_set();
        assert_eq!(set.len(), 300);
        assert_eq!(labels.iter().filter(|&&l| l).count(), 100);
        for a in reg.seen.profiles() {
            assert!(reg.unseen_same.profiles().iter().all(|b| a.values != b.values));
        }
        assert_eq!(reg.seen, make_outliers(&spec, Horizon::Daily).unwrap().profiles);
        assert!(make_attack_registry(&spec, Horizon::Daily, &spec).is_err());
    }

    #[test]
    fn registry_of_one_per_set() {
        let spec = OutlierSpec {
            count: 1,
            ..OutlierSpec::default()
        };
        let reg = make_attack_registry(&spec, Horizon::Daily, &OutlierSpec::different_distribution(0)).unwrap();
        assert_eq!(reg.attack_set().0.len(), 3);
    }

    #[test]
    fn registry_roundtrip() {
        let spec = OutlierSpec {
            count: 7,
            seed: 5,
            ..OutlierSpec::default()
        };
        let reg = make_attack_registry(&spec, Horizon::Daily, &OutlierSpec::different_distribution(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.csv");
        reg.save(&path).unwrap();
        let back = OutlierRegistry::load(&path, Some(Horizon::Daily)).unwrap();
        assert_eq!(back.seen.rows(), reg.seen.rows());
        assert_eq!(back.unseen_same.rows(), reg.unseen_same.rows());
        assert_eq!(back.unseen_diff.rows(), reg.unseen_diff.rows());
        assert_eq!(back.spec, reg.spec);
        assert_eq!(back.diff_spec, reg.diff_spec);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().contains(",True,"));
    }
}
