use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::ProfileSet;

/// Per-query nearest neighbour in a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestNeighbors {
    pub nn_distance: Vec<f64>,
    pub nn_index: Vec<usize>,
}

/// Squared Euclidean distance, accumulated left to right.
#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Squared distance with early exit once the running sum reaches `bound`.
/// The accumulation order matches [`squared_euclidean`], so whenever the full
/// sum is returned it is bit-identical.
#[inline]
fn squared_euclidean_bounded(a: &[f64], b: &[f64], bound: f64) -> f64 {
    let mut acc = 0.0;
    for (ca, cb) in a.chunks(8).zip(b.chunks(8)) {
        for (x, y) in ca.iter().zip(cb) {
            let d = x - y;
            acc += d * d;
        }
        if acc >= bound {
            return acc;
        }
    }
    acc
}

/// Exact nearest neighbour of every query row among `reference` rows.
/// Ties resolve to the lowest reference index.
pub fn nearest_neighbors<Q, R>(query: &[Q], reference: &[R]) -> NearestNeighbors
where
    Q: AsRef<[f64]> + Sync,
    R: AsRef<[f64]> + Sync,
{
    assert!(!reference.is_empty(), "reference set must be non-empty");
    let (nn_distance, nn_index) = query
        .par_iter()
        .map(|q| {
            let q = q.as_ref();
            let mut best = f64::INFINITY;
            let mut best_idx = 0;
            for (j, r) in reference.iter().enumerate() {
                let d = squared_euclidean_bounded(q, r.as_ref(), best);
                if d < best {
                    best = d;
                    best_idx = j;
                }
            }
            (best.sqrt(), best_idx)
        })
        .unzip();
    NearestNeighbors { nn_distance, nn_index }
}

pub fn nearest_neighbor_distances(query: &ProfileSet, reference: &ProfileSet) -> Result<NearestNeighbors> {
    query.ensure_same_horizon(reference)?;
    if query.is_empty() || reference.is_empty() {
        return Err(Error::InsufficientSamples("nearest neighbours need non-empty sets".into()));
    }
    Ok(nearest_neighbors(&query.rows(), &reference.rows()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{Horizon, Role};
    use rand::Rng;

    fn brute(query: &[Vec<f64>], reference: &[Vec<f64>]) -> Vec<(f64, usize)> {
        query
            .iter()
            .map(|q| {
                let mut best = (f64::INFINITY, 0);
                for (j, r) in reference.iter().enumerate() {
                    let d = q.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).fold(0.0, |s, v| s + v).sqrt();
                    if d < best.0 {
                        best = (d, j);
                    }
                }
                best
            })
            .collect()
    }

    #[test]
    fn hand_example() {
        let nn = nearest_neighbors(&[vec![0.0, 0.0]], &[vec![3.0, 4.0], vec![6.0, 8.0]]);
        assert_eq!(nn.nn_distance, vec![5.0]);
        assert_eq!(nn.nn_index, vec![0]);
    }

    #[test]
    fn self_match_is_zero() {
        let mut rng = crate::rng::seeded(3);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..48).map(|_| rng.random::<f64>()).collect()).collect();
        let set = ProfileSet::from_rows(rows, Horizon::Daily, Role::Train).unwrap();
        let nn = nearest_neighbor_distances(&set, &set).unwrap();
        assert!(nn.nn_distance.iter().all(|&d| d == 0.0));
        assert_eq!(nn.nn_index, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = crate::rng::seeded(9);
        let q: Vec<Vec<f64>> = (0..50).map(|_| (0..48).map(|_| rng.random::<f64>()).collect()).collect();
        let r: Vec<Vec<f64>> = (0..100).map(|_| (0..48).map(|_| rng.random::<f64>()).collect()).collect();
        let nn = nearest_neighbors(&q, &r);
        for (i, (d, j)) in brute(&q, &r).into_iter().enumerate() {
            assert_eq!(nn.nn_distance[i], d);
            assert_eq!(nn.nn_index[i], j);
        }
    }

    #[test]
    fn horizon_mismatch() {
        let a = ProfileSet::from_rows(vec![vec![0.0; 48]], Horizon::Daily, Role::Train).unwrap();
        let b = ProfileSet::from_rows(vec![vec![0.0; 336]], Horizon::Weekly, Role::Train).unwrap();
        assert!(matches!(nearest_neighbor_distances(&a, &b), Err(Error::HorizonMismatch { .. })));
    }
}
