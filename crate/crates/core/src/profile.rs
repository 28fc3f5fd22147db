//! Load profiles: ingestion of raw half-hourly readings, the canonical wide
//! file format, and household/time splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Household ids with this prefix denote artificial (injected) profiles.
pub const ARTIFICIAL_PREFIX: &str = "outlier-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizon {
    Daily,
    Weekly,
}

#[allow(clippy::len_without_is_empty)] // a horizon is never empty
impl Horizon {
    pub const fn len(self) -> usize {
        match self {
            Horizon::Daily => 48,
            Horizon::Weekly => 336,
        }
    }

    pub fn from_len(len: usize) -> Option<Horizon> {
        match len {
            48 => Some(Horizon::Daily),
            336 => Some(Horizon::Weekly),
            _ => None,
        }
    }
}

impl FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "daily" => Ok(Horizon::Daily),
            "weekly" => Ok(Horizon::Weekly),
            other => Err(Error::InvalidConfig(format!("unknown horizon `{other}`"))),
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Horizon::Daily => "daily",
            Horizon::Weekly => "weekly",
        })
    }
}

/// Binary season label: December to May vs June to November.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Season {
    WinterSpring,
    SummerAutumn,
}

impl Season {
    pub fn from_date(date: NaiveDate) -> Season {
        match date.month() {
            12 | 1..=5 => Season::WinterSpring,
            _ => Season::SummerAutumn,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Season::WinterSpring => "WS",
            Season::SummerAutumn => "SA",
        }
    }

    fn parse_code(s: &str) -> Option<Option<Season>> {
        match s {
            "" => Some(None),
            "WS" => Some(Some(Season::WinterSpring)),
            "SA" => Some(Some(Season::SummerAutumn)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Holdout,
    Synthetic,
    Attack,
}

/// A single raw meter reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub household_id: String,
    pub timestamp: NaiveDateTime,
    pub kwh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub household_id: String,
    pub start_date: NaiveDate,
    pub values: Vec<f64>,
    pub season: Option<Season>,
}

impl Profile {
    /// A profile labelled with the season of its start date.
    pub fn labelled(household_id: impl Into<String>, start_date: NaiveDate, values: Vec<f64>) -> Self {
        Profile {
            household_id: household_id.into(),
            start_date,
            values,
            season: Some(Season::from_date(start_date)),
        }
    }

    pub fn is_artificial(&self) -> bool {
        self.household_id.starts_with(ARTIFICIAL_PREFIX)
    }
}

/// Fixed-horizon collection of profiles sharing a role.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    profiles: Vec<Profile>,
    horizon: Horizon,
    role: Role,
}

impl ProfileSet {
    pub fn new(profiles: Vec<Profile>, horizon: Horizon, role: Role) -> Result<Self> {
        for p in &profiles {
            if p.values.len() != horizon.len() {
                return Err(Error::HorizonMismatch {
                    expected: horizon.len(),
                    found: p.values.len(),
                });
            }
        }
        Ok(ProfileSet { profiles, horizon, role })
    }

    /// Builds an unlabelled set from raw rows, using synthetic household ids.
    pub fn from_rows(rows: Vec<Vec<f64>>, horizon: Horizon, role: Role) -> Result<Self> {
        let date = NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date");
        let profiles = rows
            .into_iter()
            .enumerate()
            .map(|(i, values)| Profile {
                household_id: format!("row-{i:06}"),
                start_date: date,
                values,
                season: None,
            })
            .collect();
        ProfileSet::new(profiles, horizon, role)
    }

    pub fn profiles(&self) -> &[Profile] {
        &self.profiles
    }

    pub fn into_profiles(self) -> Vec<Profile> {
        self.profiles
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.profiles.iter().map(|p| p.values.as_slice()).collect()
    }

    /// Same profiles under a different role.
    pub fn with_role(&self, role: Role) -> ProfileSet {
        ProfileSet {
            profiles: self.profiles.clone(),
            horizon: self.horizon,
            role,
        }
    }

    pub fn household_ids(&self) -> BTreeSet<&str> {
        self.profiles.iter().map(|p| p.household_id.as_str()).collect()
    }

    pub fn ensure_same_horizon(&self, other: &ProfileSet) -> Result<()> {
        if self.horizon != other.horizon {
            return Err(Error::HorizonMismatch {
                expected: self.horizon.len(),
                found: other.horizon.len(),
            });
        }
        Ok(())
    }

    /// Subset by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> ProfileSet {
        ProfileSet {
            profiles: indices.iter().map(|&i| self.profiles[i].clone()).collect(),
            horizon: self.horizon,
            role: self.role,
        }
    }
}

/// Counts reported by [`ingest`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows: usize,
    pub profiles: usize,
    pub dropped_incomplete: usize,
    pub dropped_duplicate: usize,
}

impl IngestStats {
    pub fn dropped(&self) -> usize {
        self.dropped_incomplete + self.dropped_duplicate
    }
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
}

/// Parses long-format readings (`household_id,timestamp,kwh`).
pub fn read_readings<R: Read>(reader: R) -> Result<Vec<Reading>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |reason: &str| Error::MalformedRow {
            line,
            reason: reason.to_string(),
        };
        if record.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let timestamp = parse_timestamp(&record[1]).ok_or_else(|| bad("unparseable timestamp"))?;
        if timestamp.minute() % 30 != 0 || timestamp.second() != 0 || timestamp.nanosecond() != 0 {
            return Err(bad("timestamp not on a half-hour boundary"));
        }
        let kwh: f64 = record[2].parse().map_err(|_| bad("unparseable kwh"))?;
        if !kwh.is_finite() || kwh < 0.0 {
            return Err(bad("kwh must be finite and non-negative"));
        }
        out.push(Reading {
            household_id: record[0].to_string(),
            timestamp,
            kwh,
        });
    }
    Ok(out)
}

pub fn write_readings<W: Write>(writer: W, readings: &[Reading]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["household_id", "timestamp", "kwh"])?;
    for r in readings {
        wtr.write_record([
            r.household_id.as_str(),
            &r.timestamp.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            &r.kwh.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

fn period_start(ts: NaiveDateTime, horizon: Horizon) -> NaiveDate {
    let date = ts.date();
    match horizon {
        Horizon::Daily => date,
        Horizon::Weekly => date - Duration::days(date.weekday().num_days_from_monday() as i64),
    }
}

fn slot_index(ts: NaiveDateTime, start: NaiveDate) -> usize {
    let days = (ts.date() - start).num_days() as usize;
    days * 48 + ts.hour() as usize * 2 + ts.minute() as usize / 30
}

/// Builds one profile per household per complete day (or Monday-based week).
/// Periods with a missing or duplicated slot are dropped.
pub fn ingest_readings(readings: &[Reading], horizon: Horizon) -> Result<(ProfileSet, IngestStats)> {
    let len = horizon.len();
    // (household, period start) -> (slot values, readings seen per slot)
    type Slots = (Vec<f64>, Vec<u16>);
    let mut periods: BTreeMap<(&str, NaiveDate), Slots> = BTreeMap::new();
    for r in readings {
        let start = period_start(r.timestamp, horizon);
        let slot = slot_index(r.timestamp, start);
        let entry = periods
            .entry((r.household_id.as_str(), start))
            .or_insert_with(|| (vec![0.0; len], vec![0; len]));
        entry.0[slot] = r.kwh;
        entry.1[slot] = entry.1[slot].saturating_add(1);
    }

    let mut stats = IngestStats {
        rows: readings.len(),
        ..IngestStats::default()
    };
    let mut profiles = Vec::new();
    for ((household, start), (values, counts)) in periods {
        if counts.iter().any(|&c| c > 1) {
            stats.dropped_duplicate += 1;
        } else if counts.contains(&0) {
            stats.dropped_incomplete += 1;
        } else {
            profiles.push(Profile::labelled(household, start, values));
        }
    }
    stats.profiles = profiles.len();
    if profiles.is_empty() {
        return Err(Error::EmptyResult("no complete period survived ingestion".into()));
    }
    Ok((ProfileSet::new(profiles, horizon, Role::Train)?, stats))
}

/// Reads a long-format file and builds profiles.
pub fn ingest(path: impl AsRef<Path>, horizon: Horizon) -> Result<(ProfileSet, IngestStats)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let readings = read_readings(file)?;
    ingest_readings(&readings, horizon)
}

fn wide_header(len: usize) -> Vec<String> {
    let mut header = vec!["household_id".to_string(), "start_date".into(), "label".into()];
    header.extend((0..len).map(|i| format!("hh_{i:02}")));
    header
}

/// Writes the canonical wide format. `labels` overrides the label column
/// (used by the outlier registry); otherwise the season code is written.
pub fn write_wide_with_labels<W: Write>(writer: W, set: &ProfileSet, labels: Option<&[String]>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(wide_header(set.horizon().len()))?;
    for (i, p) in set.profiles().iter().enumerate() {
        let label = match labels {
            Some(l) => l[i].clone(),
            None => p.season.map(Season::code).unwrap_or("").to_string(),
        };
        let mut record = Vec::with_capacity(3 + p.values.len());
        record.push(p.household_id.clone());
        record.push(p.start_date.format("%Y-%m-%d").to_string());
        record.push(label);
        record.extend(p.values.iter().map(|v| v.to_string()));
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn write_wide<W: Write>(writer: W, set: &ProfileSet) -> Result<()> {
    write_wide_with_labels(writer, set, None)
}

pub fn save_wide(path: impl AsRef<Path>, set: &ProfileSet) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_wide(std::io::BufWriter::new(file), set)
}

/// Raw wide-format rows: profiles plus the untouched label column.
pub(crate) fn read_wide_raw<R: Read>(reader: R, expected: Option<Horizon>) -> Result<(Vec<Profile>, Vec<String>, Horizon)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 4 || &header[0] != "household_id" || &header[1] != "start_date" || &header[2] != "label" {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "expected header household_id,start_date,label,hh_00,...".into(),
        });
    }
    let width = header.len() - 3;
    let horizon = match expected {
        Some(h) if h.len() != width => {
            return Err(Error::HorizonMismatch {
                expected: h.len(),
                found: width,
            })
        }
        Some(h) => h,
        None => Horizon::from_len(width).ok_or(Error::HorizonMismatch {
            expected: Horizon::Daily.len(),
            found: width,
        })?,
    };

    let mut profiles = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |reason: String| Error::MalformedRow { line, reason };
        let household_id = record[0].to_string();
        let start_date = NaiveDate::parse_from_str(&record[1], "%Y-%m-%d").map_err(|_| bad(format!("bad start_date `{}`", &record[1])))?;
        let artificial = household_id.starts_with(ARTIFICIAL_PREFIX);
        let mut values = Vec::with_capacity(width);
        for field in record.iter().skip(3) {
            let v: f64 = field.parse().map_err(|_| bad(format!("bad value `{field}`")))?;
            if !v.is_finite() || (v < 0.0 && !artificial) {
                return Err(bad(format!("value {v} must be finite and non-negative")));
            }
            values.push(v);
        }
        labels.push(record[2].to_string());
        profiles.push(Profile {
            household_id,
            start_date,
            values,
            season: None,
        });
    }
    Ok((profiles, labels, horizon))
}

/// Reads the canonical wide format.
pub fn read_wide<R: Read>(reader: R, role: Role, expected: Option<Horizon>) -> Result<ProfileSet> {
    let (mut profiles, labels, horizon) = read_wide_raw(reader, expected)?;
    for (i, (p, label)) in profiles.iter_mut().zip(&labels).enumerate() {
        p.season = Season::parse_code(label).ok_or_else(|| Error::MalformedRow {
            line: i + 2,
            reason: format!("label must be empty, WS or SA, got `{label}`"),
        })?;
    }
    ProfileSet::new(profiles, horizon, role)
}

pub fn load_wide(path: impl AsRef<Path>, role: Role, expected: Option<Horizon>) -> Result<ProfileSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_wide(std::io::BufReader::new(file), role, expected)
}

/// Parameters for household and time splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub holdout_fraction: f64,
    pub train_years: Vec<i32>,
    pub eval_years: Vec<i32>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            holdout_fraction: 0.2,
            train_years: vec![2012, 2013],
            eval_years: vec![2014],
            seed: 0,
        }
    }
}

/// Randomly assigns whole households to train or holdout.
pub fn split_households(data: &ProfileSet, spec: &SplitSpec) -> Result<(ProfileSet, ProfileSet)> {
    if !(spec.holdout_fraction > 0.0 && spec.holdout_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "holdout_fraction must lie in (0,1), got {}",
            spec.holdout_fraction
        )));
    }
    let mut households: Vec<&str> = data.household_ids().into_iter().collect();
    let n_holdout = (households.len() as f64 * spec.holdout_fraction).round() as usize;
    let n_train = households.len() - n_holdout;
    if n_train < 2 {
        return Err(Error::TooFewHouseholds {
            side: "train",
            count: n_train,
        });
    }
    if n_holdout < 2 {
        return Err(Error::TooFewHouseholds {
            side: "holdout",
            count: n_holdout,
        });
    }
    households.shuffle(&mut seeded(spec.seed));
    let holdout_ids: BTreeSet<&str> = households[..n_holdout].iter().copied().collect();

    let (holdout, train): (Vec<Profile>, Vec<Profile>) = data
        .profiles()
        .iter()
        .cloned()
        .partition(|p| holdout_ids.contains(p.household_id.as_str()));
    Ok((
        ProfileSet::new(train, data.horizon(), Role::Train)?,
        ProfileSet::new(holdout, data.horizon(), Role::Holdout)?,
    ))
}

/// Result of [`split_time`].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSplit {
    pub fit: ProfileSet,
    pub eval: ProfileSet,
    /// Profiles dated in neither year list.
    pub discarded: usize,
}

/// Partitions profiles by the calendar year of their start date.
pub fn split_time(data: &ProfileSet, spec: &SplitSpec) -> Result<TimeSplit> {
    if spec.train_years.is_empty() || spec.eval_years.is_empty() {
        return Err(Error::InvalidConfig("train_years and eval_years must be non-empty".into()));
    }
    if spec.train_years.iter().any(|y| spec.eval_years.contains(y)) {
        return Err(Error::InvalidConfig("train_years and eval_years overlap".into()));
    }
    let mut fit = Vec::new();
    let mut eval = Vec::new();
    let mut discarded = 0;
    for p in data.profiles() {
        let year = p.start_date.year();
        if spec.train_years.contains(&year) {
            fit.push(p.clone());
        } else if spec.eval_years.contains(&year) {
            eval.push(p.clone());
        } else {
            discarded += 1;
        }
    }
    if fit.is_empty() {
        return Err(Error::EmptyResult("no profiles in the fit years".into()));
    }
    if eval.is_empty() {
        return Err(Error::EmptyResult("no profiles in the evaluation years".into()));
    }
    Ok(TimeSplit {
        fit: ProfileSet::new(fit, data.horizon(), data.role())?,
        eval: ProfileSet::new(eval, data.horizon(), data.role())?,
        discarded,
    })
}
