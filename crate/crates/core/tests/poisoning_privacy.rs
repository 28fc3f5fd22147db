mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use synthmeter::fixture::{lcl_style_profiles, FixtureConfig};
use synthmeter::generators::{memorizer_generate, MemorizerConfig, SamplingMode};
use synthmeter::poisoning::{inject, make_attack_registry, make_outliers, OutlierRegistry, OutlierSpec};
use synthmeter::privacy::{
    reconstruction_curve, reconstruction_ks, reconstruction_poisoned, threshold_precision, top_fraction_precision, ReconstructionConfig,
};
use synthmeter::{Horizon, Profile, ProfileSet, Role};

fn registry(count: usize, seed: u64) -> OutlierRegistry {
    let spec = OutlierSpec {
        count,
        seed,
        ..OutlierSpec::default()
    };
    make_attack_registry(&spec, Horizon::Daily, &OutlierSpec::different_distribution(seed + 1)).unwrap()
}

fn rows_of(set: &ProfileSet) -> Vec<Vec<f64>> {
    set.profiles().iter().map(|p| p.values.clone()).collect()
}

fn with_rows(rows: Vec<Vec<f64>>) -> ProfileSet {
    ProfileSet::from_rows(rows, Horizon::Daily, Role::Synthetic).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Reference: fraction of outliers whose nearest synthetic row is within
/// `r * ||outlier||`, by brute force.
fn reference_curve(seen: &[Vec<f64>], synthetic: &[Vec<f64>], ratios: &[f64]) -> Vec<f64> {
    let (dist, _) = common::brute_nn(seen, synthetic);
    ratios
        .iter()
        .map(|r| seen.iter().zip(&dist).filter(|(o, d)| **d <= r * norm(o)).count() as f64 / seen.len() as f64)
        .collect()
}

#[test]
fn registry_sets_are_pairwise_disjoint_and_sized() {
    let reg = registry(40, 11);
    let ids = |s: &ProfileSet| s.profiles().iter().map(|p| p.household_id.clone()).collect::<BTreeSet<_>>();
    let (a, b, c) = (ids(&reg.seen), ids(&reg.unseen_same), ids(&reg.unseen_diff));
    assert_eq!((a.len(), b.len(), c.len()), (40, 40, 40));
    assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    let (ra, rb) = (rows_of(&reg.seen), rows_of(&reg.unseen_same));
    assert!(ra.iter().all(|r| !rb.contains(r)));
    assert!(reg.seen.profiles().iter().all(Profile::is_artificial));

    let mean = |s: &ProfileSet| s.profiles().iter().flat_map(|p| p.values.iter()).sum::<f64>() / (s.len() * 48) as f64;
    assert!((mean(&reg.seen) - 6.0).abs() < 0.1);
    assert!((mean(&reg.unseen_same) - 6.0).abs() < 0.1);
    assert!((mean(&reg.unseen_diff) - 12.0).abs() < 0.1);
}

#[test]
fn seen_registry_rows_are_exactly_the_injected_outliers() {
    let spec = OutlierSpec {
        count: 15,
        seed: 3,
        ..OutlierSpec::default()
    };
    let reg = make_attack_registry(&spec, Horizon::Daily, &OutlierSpec::different_distribution(4)).unwrap();
    let injected = make_outliers(&spec, Horizon::Daily).unwrap().profiles;
    assert_eq!(rows_of(&reg.seen), rows_of(&injected));
}

#[test]
fn registry_roundtrips_through_disk() {
    let reg = registry(25, 21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.csv");
    reg.save(&path).unwrap();
    assert!(OutlierRegistry::sidecar_path(&path).exists());
    let back = OutlierRegistry::load(&path, Some(Horizon::Daily)).unwrap();
    assert_eq!(rows_of(&back.seen), rows_of(&reg.seen));
    assert_eq!(rows_of(&back.unseen_same), rows_of(&reg.unseen_same));
    assert_eq!(rows_of(&back.unseen_diff), rows_of(&reg.unseen_diff));
    assert_eq!(back.spec, reg.spec);
    assert_eq!(back.diff_spec, reg.diff_spec);
}

#[test]
fn registry_load_rejects_mislabelled_rows() {
    let reg = registry(5, 31);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.csv");
    reg.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let flipped = text.replacen(",True,", ",False,", 1);
    std::fs::write(&path, flipped).unwrap();
    assert!(OutlierRegistry::load(&path, None).is_err());
}

#[test]
fn injection_is_a_permuted_union() {
    let train = lcl_style_profiles(&FixtureConfig {
        households: 20,
        days_per_household: 2,
        years: vec![2013],
        seed: 1,
    })
    .unwrap();
    let outliers = make_outliers(
        &OutlierSpec {
            count: 7,
            seed: 2,
            ..OutlierSpec::default()
        },
        Horizon::Daily,
    )
    .unwrap()
    .profiles;
    let poisoned = inject(&train, &outliers, 5).unwrap();
    assert_eq!(poisoned.len(), train.len() + outliers.len());
    let mut got = rows_of(&poisoned);
    let mut want: Vec<Vec<f64>> = rows_of(&train).into_iter().chain(rows_of(&outliers)).collect();
    let cmp = |a: &Vec<f64>, b: &Vec<f64>| a.partial_cmp(b).unwrap();
    got.sort_by(cmp);
    want.sort_by(cmp);
    assert_eq!(got, want);
    assert_eq!(inject(&train, &outliers, 5).unwrap(), poisoned);
    assert_ne!(inject(&train, &outliers, 6).unwrap(), poisoned);
}

#[test]
fn reconstruction_matches_brute_force() {
    let reg = registry(30, 41);
    let mut rng = common::rng(42);
    let seen = rows_of(&reg.seen);
    // half the outliers copied with growing noise, plus unrelated rows
    let mut synthetic: Vec<Vec<f64>> = seen
        .iter()
        .take(15)
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .map(|v| v + 0.05 * i as f64 * rand::Rng::random_range(&mut rng, -1.0..1.0))
                .collect()
        })
        .collect();
    synthetic.extend(common::random_rows(&mut rng, 40, 48));
    let synthetic: Vec<Vec<f64>> = synthetic.iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect();
    let config = ReconstructionConfig::default();
    let got = reconstruction_poisoned(&reg, &with_rows(synthetic.clone()), &config).unwrap();
    let want = reference_curve(&seen, &synthetic, &config.threshold_ratios);
    for (p, w) in got.fraction_reconstructed.iter().zip(&want) {
        assert_eq!(p.fraction, *w, "ratio {}", p.ratio);
    }
}

#[test]
fn exact_copies_are_reconstructed_at_every_ratio() {
    let reg = registry(20, 51);
    let synthetic = with_rows(rows_of(&reg.seen));
    let got = reconstruction_poisoned(&reg, &synthetic, &ReconstructionConfig::default()).unwrap();
    assert!(got.fraction_reconstructed.iter().all(|p| p.fraction == 1.0));
    assert!(got.per_outlier_nn_distance_ratio.iter().all(|r| *r == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reconstruction_ignores_synthetic_row_order(seed in 0u64..1000, rot in 0usize..50) {
        let reg = registry(10, seed);
        let mut rng = common::rng(seed);
        let mut rows: Vec<Vec<f64>> = rows_of(&reg.seen)
            .into_iter()
            .map(|r| r.into_iter().map(|v| (v + rand::Rng::random_range(&mut rng, -2.0..2.0)).max(0.0)).collect())
            .collect();
        rows.extend(rows_of(&reg.unseen_same));
        let config = ReconstructionConfig::default();
        let a = reconstruction_poisoned(&reg, &with_rows(rows.clone()), &config).unwrap();
        let k = rot % rows.len();
        rows.rotate_left(k);
        let b = reconstruction_poisoned(&reg, &with_rows(rows), &config).unwrap();
        prop_assert_eq!(a.fraction_reconstructed, b.fraction_reconstructed);
    }

    #[test]
    fn adding_distant_rows_never_changes_the_curve(seed in 0u64..1000) {
        let reg = registry(10, seed);
        let base: Vec<Vec<f64>> = rows_of(&reg.unseen_same);
        let config = ReconstructionConfig::default();
        let a = reconstruction_poisoned(&reg, &with_rows(base.clone()), &config).unwrap();
        let mut more = base;
        more.extend((0..5).map(|i| vec![1000.0 + i as f64; 48]));
        let b = reconstruction_poisoned(&reg, &with_rows(more), &config).unwrap();
        prop_assert_eq!(a.fraction_reconstructed, b.fraction_reconstructed);
    }

    #[test]
    fn scaling_everything_leaves_the_curve_alone(seed in 0u64..1000, scale in prop::sample::select(vec![0.5f64, 2.0, 4.0, 0.25])) {
        // powers of two keep the arithmetic exact
        let reg = registry(10, seed);
        let synthetic: Vec<Vec<f64>> = rows_of(&reg.unseen_same);
        let config = ReconstructionConfig::default();
        let a = reconstruction_poisoned(&reg, &with_rows(synthetic.clone()), &config).unwrap();
        let scaled = |s: &ProfileSet| ProfileSet::new(
            s.profiles().iter().map(|p| Profile { values: p.values.iter().map(|v| v * scale).collect(), ..p.clone() }).collect(),
            Horizon::Daily,
            s.role(),
        ).unwrap();
        let reg2 = OutlierRegistry { seen: scaled(&reg.seen), ..reg.clone() };
        let syn2: Vec<Vec<f64>> = synthetic.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        let b = reconstruction_poisoned(&reg2, &with_rows(syn2), &config).unwrap();
        prop_assert_eq!(a.fraction_reconstructed, b.fraction_reconstructed);
    }

    #[test]
    fn curve_is_monotone_in_the_ratio(values in prop::collection::vec(0.0f64..2.0, 1..60)) {
        let ratios: Vec<f64> = (1..=20).map(|i| i as f64 * 0.05).collect();
        let curve = reconstruction_curve(&values, &ratios);
        prop_assert!(curve.windows(2).all(|w| w[0].fraction <= w[1].fraction));
        prop_assert!(curve.iter().all(|p| (0.0..=1.0).contains(&p.fraction)));
    }

    #[test]
    fn top_third_gives_precision_equal_to_recall(scores in prop::collection::vec(-5.0f64..5.0, 3..40), seed in 0u64..100) {
        let n = scores.len() - scores.len() % 3;
        let scores = &scores[..n];
        let mut labels: Vec<bool> = (0..n).map(|i| i < n / 3).collect();
        use rand::seq::SliceRandom;
        labels.shuffle(&mut common::rng(seed));
        let (p, r, k) = top_fraction_precision(scores, &labels, 1.0 / 3.0);
        prop_assert_eq!(k, n / 3);
        prop_assert!((p - r).abs() < 1e-12);
    }

    #[test]
    fn threshold_precision_counts_like_a_confusion_matrix(probs in prop::collection::vec(0.0f64..1.0, 1..40), seed in 0u64..100) {
        use rand::Rng;
        let mut rng = common::rng(seed);
        let labels: Vec<bool> = probs.iter().map(|_| rng.random()).collect();
        let (p, r, pp) = threshold_precision(&probs, &labels);
        let tp = probs.iter().zip(&labels).filter(|(q, l)| **q > 0.5 && **l).count();
        let fp = probs.iter().zip(&labels).filter(|(q, l)| **q > 0.5 && !**l).count();
        let pos = labels.iter().filter(|l| **l).count();
        prop_assert_eq!(pp, tp + fp);
        if pp > 0 { prop_assert_eq!(p, tp as f64 / pp as f64); } else { prop_assert_eq!(p, 0.5); }
        if pos > 0 { prop_assert_eq!(r, tp as f64 / pos as f64); }
    }
}

#[test]
fn ks_attack_flags_a_copier_but_not_an_independent_draw() {
    let data = lcl_style_profiles(&FixtureConfig {
        households: 200,
        days_per_household: 2,
        years: vec![2013],
        seed: 61,
    })
    .unwrap();
    let (train, holdout) = synthmeter::profile::split_households(
        &data,
        &synthmeter::SplitSpec {
            holdout_fraction: 0.5,
            seed: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let copier = memorizer_generate(
        &train,
        train.len(),
        &MemorizerConfig {
            jitter_sigma: 0.0,
            seed: 2,
            mode: SamplingMode::Sequential,
        },
    )
    .unwrap();
    let ks = reconstruction_ks(&train, &holdout, &copier, None, 3).unwrap();
    assert!(ks.p_value < 0.05, "copier p = {}", ks.p_value);

    let fresh = lcl_style_profiles(&FixtureConfig {
        households: 200,
        days_per_household: 2,
        years: vec![2013],
        seed: 62,
    })
    .unwrap()
    .with_role(Role::Synthetic);
    let ks = reconstruction_ks(&train, &holdout, &fresh, None, 3).unwrap();
    assert!(ks.statistic < 0.2, "independent D+ = {}", ks.statistic);
}
