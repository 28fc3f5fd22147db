//! Train on synthetic, test on real: identical task models are fit on a real
//! and a synthetic set and scored on the same held-out real set. The gap
//! between the two scores is the utility measure.

use std::collections::BTreeSet;
use std::io::Write;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{pinball_loss, train_with, Loss, MlpModel, OutputHead, TrainConfig, DEFAULT_HIDDEN};
use crate::profile::{Horizon, ProfileSet, Season};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TstrConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Record eval scores after every epoch.
    pub trace_epochs: bool,
}

impl Default for TstrConfig {
    fn default() -> Self {
        TstrConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            epochs: 30,
            learning_rate: 0.01,
            batch_size: 64,
            seed: 0,
            trace_epochs: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Metric {
    Accuracy,
    Rmse,
    PinballLoss { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochScore {
    pub epoch: usize,
    pub real: f64,
    pub synthetic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TstrResult {
    pub metric: Metric,
    pub score_real_trained: f64,
    pub score_synthetic_trained: f64,
    pub absolute_gap: f64,
    pub epochs_trace: Option<Vec<EpochScore>>,
}

impl TstrResult {
    /// `epoch,acc_real,acc_synthetic` for accuracy runs, and
    /// `epoch,<metric>_real,<metric>_synthetic` otherwise.
    pub fn write_trace<W: Write>(&self, writer: W) -> Result<()> {
        let prefix = match self.metric {
            Metric::Accuracy => "acc",
            Metric::Rmse => "rmse",
            Metric::PinballLoss { .. } => "pinball",
        };
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["epoch".to_string(), format!("{prefix}_real"), format!("{prefix}_synthetic")])?;
        for e in self.epochs_trace.iter().flatten() {
            wtr.write_record([e.epoch.to_string(), e.real.to_string(), e.synthetic.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }
}

/// Calendar years present in both sets.
pub fn overlapping_years(a: &ProfileSet, b: &ProfileSet) -> Vec<i32> {
    let years = |s: &ProfileSet| s.profiles().iter().map(|p| p.start_date.year()).collect::<BTreeSet<i32>>();
    years(a).intersection(&years(b)).copied().collect()
}

struct Task {
    inputs: Vec<Vec<f64>>,
    targets: Vec<[f64; 1]>,
}

fn season_task(set: &ProfileSet) -> Result<Task> {
    let mut targets = Vec::with_capacity(set.len());
    for p in set.profiles() {
        let season = p.season.ok_or(Error::MissingLabels)?;
        targets.push([if season == Season::WinterSpring { 1.0 } else { 0.0 }]);
    }
    Ok(Task {
        inputs: set.rows().iter().map(|r| r.to_vec()).collect(),
        targets,
    })
}

fn last_slot_task(set: &ProfileSet) -> Result<Task> {
    if set.horizon() != Horizon::Daily {
        return Err(Error::HorizonMismatch {
            expected: Horizon::Daily.len(),
            found: set.horizon().len(),
        });
    }
    let rows = set.rows();
    Ok(Task {
        inputs: rows.iter().map(|r| r[..47].to_vec()).collect(),
        targets: rows.iter().map(|r| [r[47]]).collect(),
    })
}

fn accuracy(model: &MlpModel, task: &Task) -> f64 {
    let p = model.predict(&task.inputs).expect("eval inputs match the model");
    let hits = p.iter().zip(&task.targets).filter(|(p, t)| (**p > 0.5) == (t[0] == 1.0)).count();
    hits as f64 / task.targets.len() as f64
}

fn rmse(model: &MlpModel, task: &Task) -> f64 {
    let p = model.predict(&task.inputs).expect("eval inputs match the model");
    let mse = p.iter().zip(&task.targets).map(|(p, t)| (p - t[0]) * (p - t[0])).sum::<f64>() / p.len() as f64;
    mse.sqrt()
}

fn pinball(model: &MlpModel, task: &Task, q: f64) -> f64 {
    let p = model.predict(&task.inputs).expect("eval inputs match the model");
    p.iter().zip(&task.targets).map(|(p, t)| pinball_loss(t[0], *p, q)).sum::<f64>() / p.len() as f64
}

/// Trains one arm, scoring `eval` after each epoch when tracing.
fn fit_arm(
    fit: &Task,
    eval: &Task,
    loss: Loss,
    head: OutputHead,
    config: &TstrConfig,
    score: &dyn Fn(&MlpModel, &Task) -> f64,
) -> Result<(f64, Vec<f64>)> {
    if fit.inputs.is_empty() {
        return Err(Error::InsufficientSamples("TSTR fit sets must be non-empty".into()));
    }
    let dim = fit.inputs[0].len();
    let mut sizes = vec![dim];
    sizes.extend(&config.hidden);
    sizes.push(1);
    let model = MlpModel::new(&sizes, head, config.seed)?;
    let cfg = TrainConfig {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size.min(fit.inputs.len()),
        epochs: config.epochs,
        ..TrainConfig::new(loss, config.seed)
    };
    let mut trace = Vec::new();
    let trained = train_with(model, &fit.inputs, &fit.targets, &cfg, |_, m| {
        if config.trace_epochs {
            trace.push(score(m, eval));
        }
    })?;
    Ok((score(&trained.model, eval), trace))
}

#[allow(clippy::too_many_arguments)]
fn run(
    real_fit: &Task,
    synthetic_fit: &Task,
    eval: &Task,
    metric: Metric,
    loss: Loss,
    head: OutputHead,
    config: &TstrConfig,
    score: &dyn Fn(&MlpModel, &Task) -> f64,
) -> Result<TstrResult> {
    if eval.inputs.is_empty() {
        return Err(Error::InsufficientSamples("TSTR eval set must be non-empty".into()));
    }
    let (real, real_trace) = fit_arm(real_fit, eval, loss, head, config, score)?;
    let (synthetic, syn_trace) = fit_arm(synthetic_fit, eval, loss, head, config, score)?;
    let epochs_trace = config.trace_epochs.then(|| {
        real_trace
            .iter()
            .zip(&syn_trace)
            .enumerate()
            .map(|(epoch, (&real, &synthetic))| EpochScore { epoch, real, synthetic })
            .collect()
    });
    Ok(TstrResult {
        metric,
        score_real_trained: real,
        score_synthetic_trained: synthetic,
        absolute_gap: (real - synthetic).abs(),
        epochs_trace,
    })
}

fn check_horizons(real_fit: &ProfileSet, synthetic_fit: &ProfileSet, real_eval: &ProfileSet) -> Result<()> {
    real_fit.ensure_same_horizon(synthetic_fit)?;
    real_fit.ensure_same_horizon(real_eval)
}

/// Season classification (winter/spring against summer/autumn) from the raw
/// profile; scored by accuracy.
pub fn tstr_classify(real_fit: &ProfileSet, synthetic_fit: &ProfileSet, real_eval: &ProfileSet, config: &TstrConfig) -> Result<TstrResult> {
    check_horizons(real_fit, synthetic_fit, real_eval)?;
    let (a, b, e) = (season_task(real_fit)?, season_task(synthetic_fit)?, season_task(real_eval)?);
    run(
        &a,
        &b,
        &e,
        Metric::Accuracy,
        Loss::BinaryCrossEntropy,
        OutputHead::SigmoidLogit,
        config,
        &accuracy,
    )
}

/// Predicts slot 47 from slots 0..=46 under squared error; scored by RMSE.
pub fn tstr_forecast_mean(real_fit: &ProfileSet, synthetic_fit: &ProfileSet, real_eval: &ProfileSet, config: &TstrConfig) -> Result<TstrResult> {
    check_horizons(real_fit, synthetic_fit, real_eval)?;
    let (a, b, e) = (last_slot_task(real_fit)?, last_slot_task(synthetic_fit)?, last_slot_task(real_eval)?);
    run(&a, &b, &e, Metric::Rmse, Loss::MeanSquaredError, OutputHead::Linear, config, &rmse)
}

/// Slot-47 forecast under pinball loss at quantile `q`; scored by mean
/// pinball loss.
pub fn tstr_forecast_quantile(
    real_fit: &ProfileSet,
    synthetic_fit: &ProfileSet,
    real_eval: &ProfileSet,
    q: f64,
    config: &TstrConfig,
) -> Result<TstrResult> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig(format!("quantile {q} outside (0,1)")));
    }
    check_horizons(real_fit, synthetic_fit, real_eval)?;
    let (a, b, e) = (last_slot_task(real_fit)?, last_slot_task(synthetic_fit)?, last_slot_task(real_eval)?);
    run(
        &a,
        &b,
        &e,
        Metric::PinballLoss { q },
        Loss::Pinball(q),
        OutputHead::Linear,
        config,
        &|m, t| pinball(m, t, q),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{Profile, Role};
    use crate::rng::seeded;
    use chrono::NaiveDate;
    use rand::Rng;

    /// Winter days carry an evening bump; slot 47 copies slot 46.
    fn seasonal(seed: u64, n: usize, year: i32) -> ProfileSet {
        let mut rng = seeded(seed);
        let profiles = (0..n)
            .map(|i| {
                let month = 1 + (i % 12) as u32;
                let date = NaiveDate::from_ymd_opt(year, month, 10).unwrap();
                let winter = Season::from_date(date) == Season::WinterSpring;
                let mut v: Vec<f64> = (0..48)
                    .map(|s| 0.2 + 0.05 * rng.random::<f64>() + if winter && (34..40).contains(&s) { 0.4 } else { 0.0 })
                    .collect();
                v[47] = v[46];
                Profile::labelled(format!("H{i}"), date, v)
            })
            .collect();
        ProfileSet::new(profiles, Horizon::Daily, Role::Train).unwrap()
    }

    #[test]
    fn same_data_has_zero_gap() {
        let fit = seasonal(1, 300, 2013);
        let eval = seasonal(2, 200, 2014);
        let cfg = TstrConfig {
            epochs: 10,
            ..TstrConfig::default()
        };
        let r = tstr_classify(&fit, &fit, &eval, &cfg).unwrap();
        assert_eq!(r.absolute_gap, 0.0);
        assert!(r.score_real_trained > 0.95);
        assert_eq!(r.epochs_trace.as_ref().unwrap().len(), 10);
    }

    #[test]
    fn identity_relation_is_learnable() {
        let fit = seasonal(3, 2000, 2013);
        let eval = seasonal(4, 300, 2014);
        let f = tstr_forecast_mean(&fit, &fit, &eval, &TstrConfig::default()).unwrap();
        assert_eq!(f.absolute_gap, 0.0);
        assert!(f.score_real_trained < 0.05, "rmse {}", f.score_real_trained);
    }

    #[test]
    fn unlabelled_sets_are_rejected() {
        let fit = seasonal(1, 20, 2013);
        let bare = ProfileSet::from_rows(vec![vec![0.1; 48]; 20], Horizon::Daily, Role::Synthetic).unwrap();
        assert!(matches!(
            tstr_classify(&fit, &bare, &fit, &TstrConfig::default()),
            Err(Error::MissingLabels)
        ));
    }

    #[test]
    fn weekly_forecast_is_rejected() {
        let weekly = ProfileSet::from_rows(vec![vec![0.1; 336]; 4], Horizon::Weekly, Role::Train).unwrap();
        assert!(matches!(
            tstr_forecast_mean(&weekly, &weekly, &weekly, &TstrConfig::default()),
            Err(Error::HorizonMismatch { .. })
        ));
    }

    #[test]
    fn trace_table() {
        let r = TstrResult {
            metric: Metric::Accuracy,
            score_real_trained: 0.9,
            score_synthetic_trained: 0.8,
            absolute_gap: 0.1,
            epochs_trace: Some(vec![EpochScore {
                epoch: 0,
                real: 0.5,
                synthetic: 0.25,
            }]),
        };
        let mut out = Vec::new();
        r.write_trace(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,acc_real,acc_synthetic\n0,0.5,0.25\n");
    }

    #[test]
    fn overlap_detection() {
        let a = seasonal(1, 5, 2013);
        let b = seasonal(1, 5, 2014);
        assert!(overlapping_years(&a, &b).is_empty());
        assert_eq!(overlapping_years(&a, &a), vec![2013]);
    }
}
