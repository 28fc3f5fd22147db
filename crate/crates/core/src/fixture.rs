//! Deterministic LCL-style household load fixture.
//!
//! Households get an individual base load, morning and evening peaks and a
//! seasonal swing; days add appliance spikes and multiplicative noise. The
//! population mean sits near 0.3 kWh per half hour.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate, NaiveTime};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::profile::{Horizon, Profile, ProfileSet, Reading, Role};
use crate::rng::{seeded, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub households: usize,
    pub days_per_household: usize,
    pub years: Vec<i32>,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            households: 500,
            days_per_household: 14,
            years: vec![2012, 2013, 2014],
            seed: 2024,
        }
    }
}

struct Household {
    base: f64,
    morning_amp: f64,
    morning_at: f64,
    evening_amp: f64,
    evening_at: f64,
    width: f64,
    heating: f64,
}

fn bump(slot: f64, at: f64, width: f64) -> f64 {
    let d = (slot - at) / width;
    (-0.5 * d * d).exp()
}

impl Household {
    fn draw(rng: &mut impl Rng) -> Household {
        let normal = Normal::new(0.0, 1.0).unwrap();
        Household {
            base: LogNormal::new((0.12f64).ln(), 0.35).unwrap().sample(rng),
            morning_amp: rng.random_range(0.05..0.35),
            morning_at: 15.0 + 1.5 * normal.sample(rng),
            evening_amp: rng.random_range(0.2..0.8),
            evening_at: 37.0 + 2.0 * normal.sample(rng),
            width: rng.random_range(1.5..3.5),
            heating: rng.random_range(0.1..0.6),
        }
    }

    fn day(&self, date: NaiveDate, rng: &mut impl Rng) -> Vec<f64> {
        // 1 in mid-January, -1 in mid-July
        let winter = (2.0 * PI * (date.ordinal() as f64 - 15.0) / 365.25).cos();
        let season = 1.0 + self.heating * winter.max(0.0) * 0.8 + 0.1 * winter;
        let day_scale = LogNormal::new(0.0, 0.15).unwrap().sample(rng);
        let noise = LogNormal::new(0.0, 0.25).unwrap();
        // darker evenings bring the peak forward
        let evening_at = self.evening_at - 2.0 * winter;
        let mut values: Vec<f64> = (0..48)
            .map(|s| {
                let s = s as f64;
                let shape =
                    self.base + self.morning_amp * bump(s, self.morning_at, self.width) + self.evening_amp * bump(s, evening_at, self.width * 1.5);
                shape * season * day_scale * noise.sample(rng)
            })
            .collect();
        let spikes = rng.random_range(0..3);
        for _ in 0..spikes {
            let at = rng.random_range(12..46);
            let amp = rng.random_range(0.3..1.5);
            values[at] += amp;
            values[at + 1] += 0.5 * amp;
        }
        values
    }
}

fn pick_dates(years: &[i32], count: usize, rng: &mut impl Rng) -> Vec<NaiveDate> {
    let first = NaiveDate::from_ymd_opt(*years.iter().min().unwrap(), 1, 1).unwrap();
    let last = NaiveDate::from_ymd_opt(*years.iter().max().unwrap(), 12, 31).unwrap();
    let span = (last - first).num_days();
    let mut dates = BTreeSet::new();
    while dates.len() < count.min(span as usize) {
        let d = first + Duration::days(rng.random_range(0..=span));
        if years.contains(&d.year()) {
            dates.insert(d);
        }
    }
    dates.into_iter().collect()
}

/// Daily profiles, ordered by household then date.
pub fn lcl_style_profiles(config: &FixtureConfig) -> Result<ProfileSet> {
    let mut master = seeded(config.seed);
    let mut profiles = Vec::with_capacity(config.households * config.days_per_household);
    for h in 0..config.households {
        let mut rng = substream(config.seed, h as u64 + 1);
        let household = Household::draw(&mut master);
        for date in pick_dates(&config.years, config.days_per_household, &mut rng) {
            profiles.push(Profile::labelled(format!("MAC{h:06}"), date, household.day(date, &mut rng)));
        }
    }
    ProfileSet::new(profiles, Horizon::Daily, Role::Train)
}

/// The same fixture as long-format half-hourly readings.
pub fn lcl_style_readings(config: &FixtureConfig) -> Result<Vec<Reading>> {
    let set = lcl_style_profiles(config)?;
    let mut readings = Vec::with_capacity(set.len() * 48);
    for p in set.profiles() {
        for (slot, &kwh) in p.values.iter().enumerate() {
            let time = NaiveTime::from_hms_opt(slot as u32 / 2, (slot as u32 % 2) * 30, 0).unwrap();
            readings.push(Reading {
                household_id: p.household_id.clone(),
                timestamp: p.start_date.and_time(time),
                // round-trip through decimal text is exact at this precision
                kwh: (kwh * 1e6).round() / 1e6,
            });
        }
    }
    Ok(readings)
}
