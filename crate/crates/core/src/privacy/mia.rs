use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{train, Loss, MlpModel, OutputHead, TrainConfig, DEFAULT_HIDDEN};
use crate::poisoning::OutlierRegistry;
use crate::profile::ProfileSet;
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiaConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Share of the (plain-protocol) holdout used to train the discriminator.
    pub discriminator_holdout_share: f64,
    pub holdout_split: HoldoutSplit,
    /// Down-sample the larger class before training the discriminator. Off
    /// by default: every synthetic row then reaches the discriminator.
    pub balance_discriminator: bool,
    pub seed: u64,
}

/// How the plain protocol divides the holdout set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutSplit {
    Rows,
    Households,
}

impl Default for MiaConfig {
    fn default() -> Self {
        MiaConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            epochs: 50,
            learning_rate: 0.01,
            batch_size: 64,
            discriminator_holdout_share: 0.5,
            holdout_split: HoldoutSplit::Households,
            balance_discriminator: false,
            seed: 0,
        }
    }
}

impl MiaConfig {
    pub fn with_seed(seed: u64) -> MiaConfig {
        MiaConfig {
            seed,
            ..MiaConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    pub precision: f64,
    pub recall: f64,
    pub attack_set_size: usize,
    pub positive_fraction: f64,
    pub predicted_positive: usize,
    pub discriminator_train_loss_trace: Vec<f64>,
}

const SPLIT_STREAM: u64 = 1;
const BALANCE_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const INIT_STREAM: u64 = 4;
const SHUFFLE_STREAM: u64 = 5;

fn stream_seed(seed: u64, stream: u64) -> u64 {
    use rand::Rng;
    substream(seed, stream).random()
}

/// Precision and recall of thresholding probabilities at 0.5 (strictly
/// greater is positive). With no positive predictions the precision is
/// undefined and reported as 0.5, the random-guess value on a balanced set.
pub fn threshold_precision(probabilities: &[f64], labels: &[bool]) -> (f64, f64, usize) {
    let predicted: Vec<bool> = probabilities.iter().map(|&p| p > 0.5).collect();
    let tp = predicted.iter().zip(labels).filter(|(p, l)| **p && **l).count();
    let pp = predicted.iter().filter(|p| **p).count();
    let positives = labels.iter().filter(|l| **l).count();
    let precision = if pp == 0 { 0.5 } else { tp as f64 / pp as f64 };
    let recall = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
    (precision, recall, pp)
}

/// Marks the `ceil(fraction * n)` highest scores as positive (ties by input
/// order) and returns precision and recall. When `fraction` equals the
/// positive share the two coincide.
pub fn top_fraction_precision(scores: &[f64], labels: &[bool], fraction: f64) -> (f64, f64, usize) {
    let n = scores.len();
    let k = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps input order among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let tp = order[..k].iter().filter(|&&i| labels[i]).count();
    let positives = labels.iter().filter(|l| **l).count();
    let precision = if k == 0 { 0.0 } else { tp as f64 / k as f64 };
    let recall = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
    (precision, recall, k)
}

fn subsample(rows: Vec<&[f64]>, size: usize, seed: u64) -> Vec<&[f64]> {
    if rows.len() <= size {
        return rows;
    }
    let mut keep = index::sample(&mut crate::rng::seeded(seed), rows.len(), size).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| rows[i]).collect()
}

/// Trains the synthetic-vs-real discriminator, optionally class-balanced by
/// down-sampling the larger class.
fn train_discriminator(synthetic: Vec<&[f64]>, real: Vec<&[f64]>, config: &MiaConfig) -> Result<(MlpModel, Vec<f64>)> {
    if synthetic.len().min(real.len()) < 2 {
        return Err(Error::InsufficientSamples("discriminator needs at least two rows per class".into()));
    }
    let (synthetic, real) = if config.balance_discriminator {
        let size = synthetic.len().min(real.len());
        (
            subsample(synthetic, size, stream_seed(config.seed, BALANCE_STREAM)),
            subsample(real, size, stream_seed(config.seed, BALANCE_STREAM + 100)),
        )
    } else {
        (synthetic, real)
    };
    let positives = synthetic.len();
    let dim = synthetic[0].len();
    let mut inputs = synthetic;
    inputs.extend(real);
    let targets: Vec<[f64; 1]> = (0..inputs.len()).map(|i| [if i < positives { 1.0 } else { 0.0 }]).collect();

    let mut sizes = vec![dim];
    sizes.extend(&config.hidden);
    sizes.push(1);
    let model = MlpModel::new(&sizes, OutputHead::SigmoidLogit, stream_seed(config.seed, INIT_STREAM))?;
    let cfg = TrainConfig {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size.min(inputs.len()),
        epochs: config.epochs,
        ..TrainConfig::new(Loss::BinaryCrossEntropy, stream_seed(config.seed, TRAIN_STREAM))
    };
    let trained = train(model, &inputs, &targets, &cfg)?;
    Ok((trained.model, trained.loss_trace))
}

/// Splits holdout rows into two halves by household, so no household
/// contributes to both the discriminator and the attack set. Falls back to
/// a row split when there is only one household.
fn split_holdout(holdout: &ProfileSet, share: f64, by: HoldoutSplit, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let households: Vec<&str> = holdout.household_ids().into_iter().collect();
    let mut rng = crate::rng::seeded(seed);
    if by == HoldoutSplit::Households && households.len() >= 2 {
        let mut shuffled = households.clone();
        shuffled.shuffle(&mut rng);
        let cut = ((shuffled.len() as f64 * share).round() as usize).clamp(1, shuffled.len() - 1);
        let first: BTreeSet<&str> = shuffled[..cut].iter().copied().collect();
        let (a, b): (Vec<usize>, Vec<usize>) = (0..holdout.len()).partition(|&i| first.contains(holdout.profiles()[i].household_id.as_str()));
        (a, b)
    } else {
        let mut idx: Vec<usize> = (0..holdout.len()).collect();
        idx.shuffle(&mut rng);
        let cut = ((idx.len() as f64 * share).round() as usize).clamp(1, idx.len() - 1);
        let (a, b) = idx.split_at(cut);
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_unstable();
        b.sort_unstable();
        (a, b)
    }
}

/// Discriminator membership inference. The discriminator learns synthetic
/// (True) against one holdout half (False); it then scores train rows (True)
/// against the other half (False), balanced by down-sampling.
pub fn mia_plain(train_set: &ProfileSet, holdout: &ProfileSet, synthetic: &ProfileSet, config: &MiaConfig) -> Result<MiaResult> {
    train_set.ensure_same_horizon(holdout)?;
    train_set.ensure_same_horizon(synthetic)?;
    if holdout.len() < 4 || train_set.is_empty() || synthetic.is_empty() {
        return Err(Error::InsufficientSamples(format!(
            "plain MIA needs non-empty train and synthetic sets and at least 4 holdout rows, got {}",
            holdout.len()
        )));
    }
    let (disc_idx, attack_idx) = split_holdout(
        holdout,
        config.discriminator_holdout_share,
        config.holdout_split,
        stream_seed(config.seed, SPLIT_STREAM),
    );
    let holdout_rows = holdout.rows();
    let disc_real: Vec<&[f64]> = disc_idx.iter().map(|&i| holdout_rows[i]).collect();
    let (model, trace) = train_discriminator(synthetic.rows(), disc_real, config)?;

    let attack_false: Vec<&[f64]> = attack_idx.iter().map(|&i| holdout_rows[i]).collect();
    let size = attack_false.len().min(train_set.len());
    let attack_true = subsample(train_set.rows(), size, stream_seed(config.seed, BALANCE_STREAM + 200));
    let attack_false = subsample(attack_false, size, stream_seed(config.seed, BALANCE_STREAM + 300));
    let mut attack = attack_true;
    attack.extend(attack_false);
    let labels: Vec<bool> = (0..attack.len()).map(|i| i < size).collect();
    let probabilities = model.predict(&attack)?;
    let (precision, recall, predicted_positive) = threshold_precision(&probabilities, &labels);
    Ok(MiaResult {
        precision,
        recall,
        attack_set_size: attack.len(),
        positive_fraction: 0.5,
        predicted_positive,
        discriminator_train_loss_trace: trace,
    })
}

/// Membership inference against the outlier registry. The discriminator
/// learns synthetic (True) against holdout (False); registry rows are shown
/// in a seeded shuffled order, ranked by logit, and the top third is called
/// a member.
pub fn mia_poisoned(registry: &OutlierRegistry, synthetic: &ProfileSet, holdout: &ProfileSet, config: &MiaConfig) -> Result<MiaResult> {
    registry.seen.ensure_same_horizon(synthetic)?;
    registry.seen.ensure_same_horizon(holdout)?;
    let (attack, labels) = registry.attack_set();
    if attack.is_empty() || registry.seen.is_empty() {
        return Err(Error::InsufficientSamples("poisoned MIA needs a populated registry".into()));
    }
    let (model, trace) = train_discriminator(synthetic.rows(), holdout.rows(), config)?;

    // the registry is stored grouped by label, so scoring must not see that order
    let mut order: Vec<usize> = (0..attack.len()).collect();
    order.shuffle(&mut crate::rng::seeded(stream_seed(config.seed, SHUFFLE_STREAM)));
    let rows = attack.rows();
    let shuffled: Vec<&[f64]> = order.iter().map(|&i| rows[i]).collect();
    let shuffled_labels: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
    let scores = model.logits(&shuffled)?;
    let positive_fraction = registry.seen.len() as f64 / attack.len() as f64;
    let (precision, recall, predicted_positive) = top_fraction_precision(&scores, &shuffled_labels, positive_fraction);
    Ok(MiaResult {
        precision,
        recall,
        attack_set_size: attack.len(),
        positive_fraction,
        predicted_positive,
        discriminator_train_loss_trace: trace,
    })
}
