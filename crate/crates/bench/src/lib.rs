//! Shared inputs for the benchmarks under `benches/`.

use rand::Rng;
use synthmeter::fixture::{lcl_style_profiles, FixtureConfig};
use synthmeter::rng::seeded;
use synthmeter::ProfileSet;

/// `n` rows of `d` uniform values in `[0, 1)`.
pub fn uniform_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Daily fixture profiles, `days` per household.
pub fn daily_profiles(households: usize, days: usize, seed: u64) -> ProfileSet {
    lcl_style_profiles(&FixtureConfig {
        households,
        days_per_household: days,
        years: vec![2013],
        seed,
    })
    .expect("fixture config is valid")
}
