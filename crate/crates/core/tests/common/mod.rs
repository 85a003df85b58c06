//! Shared helpers for the integration suites.
#![allow(dead_code)] // each suite uses a different subset

use pairweight::geometry::{l2_normalize, pairwise_distances, DistanceMatrix};
use pairweight::Mat;
use rand::Rng;
use rand_distr::StandardNormal;

/// Random rows on the unit sphere.
pub fn random_unit_embeddings(n: usize, dim: usize, rng: &mut impl Rng) -> Mat {
    let mut raw = Mat::zeros(n, dim);
    for v in raw.data_mut() {
        *v = rng.sample(StandardNormal);
    }
    let (normalized, _) = l2_normalize(&raw).expect("gaussian rows are nondegenerate");
    normalized
}

/// Random labels drawn from `0..num_classes`.
pub fn random_labels(n: usize, num_classes: usize, rng: &mut impl Rng) -> Vec<i64> {
    (0..n).map(|_| rng.gen_range(0..num_classes) as i64).collect()
}

/// Distances of a random spherical batch.
pub fn random_distances(n: usize, dim: usize, rng: &mut impl Rng) -> DistanceMatrix {
    pairwise_distances(&random_unit_embeddings(n, dim, rng))
}

/// Relative error with a small-magnitude skip; returns None when both values
/// are negligible.
pub fn rel_err(a: f64, b: f64) -> Option<f64> {
    if a.abs() < 1e-8 && b.abs() < 1e-8 {
        return None;
    }
    Some((a - b).abs() / a.abs().max(b.abs()))
}
