//! Mini-batch samplers and informative pair/triplet selection.
//!
//! Samplers own their RNG state; one sampler per training thread. The mining
//! functions themselves are pure. All selection conditions use non-strict
//! inequalities, matching the printed formulations.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{DistanceMatrix, PairMask};

/// How training batches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SamplerMode {
    /// Uniform without replacement over the whole dataset.
    Random { batch_size: usize },
    /// P classes, K samples per class, class-major order.
    Pk {
        classes_per_batch: usize,
        samples_per_class: usize,
    },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    #[serde(flatten)]
    pub mode: SamplerMode,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            SamplerMode::Random { batch_size } => {
                if batch_size < 2 {
                    return Err(Error::InvalidConfig {
                        field: "sampler.batch_size".into(),
                        message: format!("must be >= 2, got {batch_size}"),
                    });
                }
            }
            SamplerMode::Pk {
                classes_per_batch,
                samples_per_class,
            } => {
                if classes_per_batch < 2 {
                    return Err(Error::InvalidConfig {
                        field: "sampler.classes_per_batch".into(),
                        message: format!("must be >= 2, got {classes_per_batch}"),
                    });
                }
                if samples_per_class < 2 {
                    return Err(Error::InvalidConfig {
                        field: "sampler.samples_per_class".into(),
                        message: format!("must be >= 2, got {samples_per_class}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Per-anchor mined positive and negative index sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorPairs {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Mined pair sets, one entry per anchor in the batch. Anchors that mined
/// nothing keep empty sets and contribute zero loss downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedPairs {
    pub per_anchor: Vec<AnchorPairs>,
}

impl MinedPairs {
    pub fn n_anchors(&self) -> usize {
        self.per_anchor.len()
    }

    /// Total (positive, negative) pair counts across anchors.
    pub fn pair_counts(&self) -> (usize, usize) {
        let pos = self.per_anchor.iter().map(|a| a.positives.len()).sum();
        let neg = self.per_anchor.iter().map(|a| a.negatives.len()).sum();
        (pos, neg)
    }
}

/// An (anchor, positive, negative) index triple with `y_ap = 1`, `y_an = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Mined triplets plus the anchors that had to be skipped for lack of a
/// positive or negative partner.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinedTriplets {
    pub triplets: Vec<Triplet>,
    pub skipped_anchors: Vec<usize>,
}

fn choose_without_replacement(n: usize, take: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..take {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(take);
    idx
}

/// Draw P classes and K samples per class, without replacement within a
/// class, class-major order. Classes with fewer than K samples are not
/// eligible; if that leaves fewer than P classes the call fails.
pub fn pk_sample(
    class_index: &BTreeMap<i64, Vec<usize>>,
    classes_per_batch: usize,
    samples_per_class: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if class_index.len() < classes_per_batch {
        return Err(Error::InsufficientClasses {
            requested: classes_per_batch,
            available: class_index.len(),
        });
    }
    let eligible: Vec<(&i64, &Vec<usize>)> = class_index
        .iter()
        .filter(|(_, rows)| rows.len() >= samples_per_class)
        .collect();
    if eligible.len() < classes_per_batch {
        // Enough classes exist, but too few hold K samples; name one culprit.
        let (class, rows) = class_index
            .iter()
            .find(|(_, rows)| rows.len() < samples_per_class)
            .expect("some class must be too small");
        return Err(Error::InsufficientSamplesPerClass {
            class: *class,
            requested: samples_per_class,
            available: rows.len(),
        });
    }
    let picked = choose_without_replacement(eligible.len(), classes_per_batch, rng);
    let mut batch = Vec::with_capacity(classes_per_batch * samples_per_class);
    for ci in picked {
        let rows = eligible[ci].1;
        let within = choose_without_replacement(rows.len(), samples_per_class, rng);
        for w in within {
            batch.push(rows[w]);
        }
    }
    Ok(batch)
}

/// Draw `batch_size` distinct indices uniformly from `0..dataset_size`.
pub fn random_sample(
    dataset_size: usize,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if batch_size > dataset_size {
        return Err(Error::BatchTooLarge {
            requested: batch_size,
            available: dataset_size,
        });
    }
    Ok(choose_without_replacement(dataset_size, batch_size, rng))
}

/// Threshold mining: per anchor, keep positives with `D >= m1` and negatives
/// with `D <= m2`.
pub fn mine_thresholds(
    d: &DistanceMatrix,
    mask: &PairMask,
    m1: f64,
    m2: f64,
) -> Result<MinedPairs> {
    if !(m1 >= 0.0 && m1 <= m2) {
        return Err(Error::InvalidThresholds { m1, m2 });
    }
    let n = d.n();
    let mut per_anchor = Vec::with_capacity(n);
    for i in 0..n {
        let mut sets = AnchorPairs::default();
        for j in 0..n {
            if mask.is_positive(i, j) && d.get(i, j) >= m1 {
                sets.positives.push(j);
            } else if mask.is_negative(i, j) && d.get(i, j) <= m2 {
                sets.negatives.push(j);
            }
        }
        per_anchor.push(sets);
    }
    Ok(MinedPairs { per_anchor })
}

/// Triplet-margin mining: all (i, j, k) with `y_ij = 1`, `y_ik = 0` and
/// `D_ij + m >= D_ik`.
pub fn mine_triplet_margin(
    d: &DistanceMatrix,
    mask: &PairMask,
    margin: f64,
) -> Result<MinedTriplets> {
    if !(margin >= 0.0) {
        return Err(Error::NegativeMargin { margin });
    }
    let n = d.n();
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if !mask.is_positive(i, j) {
                continue;
            }
            let dij = d.get(i, j);
            for k in 0..n {
                if mask.is_negative(i, k) && dij + margin >= d.get(i, k) {
                    triplets.push(Triplet {
                        anchor: i,
                        positive: j,
                        negative: k,
                    });
                }
            }
        }
    }
    Ok(MinedTriplets {
        triplets,
        skipped_anchors: Vec::new(),
    })
}

fn argmax_by_distance(d: &DistanceMatrix, anchor: usize, candidates: &[usize]) -> usize {
    let mut best = candidates[0];
    let mut best_d = d.get(anchor, best);
    for &c in &candidates[1..] {
        let dc = d.get(anchor, c);
        // strict > keeps the lowest index on ties
        if dc > best_d {
            best = c;
            best_d = dc;
        }
    }
    best
}

/// One triplet per anchor: the farthest positive and the farthest negative,
/// exactly as printed (argmax for both sides). Ties break to the lowest
/// index. Anchors lacking a positive or a negative are recorded as skipped.
pub fn mine_hardest_triplets(d: &DistanceMatrix, mask: &PairMask) -> MinedTriplets {
    let n = d.n();
    let mut triplets = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..n {
        let pos = mask.positives_of(i);
        let neg = mask.negatives_of(i);
        if pos.is_empty() || neg.is_empty() {
            skipped.push(i);
            continue;
        }
        triplets.push(Triplet {
            anchor: i,
            positive: argmax_by_distance(d, i, &pos),
            negative: argmax_by_distance(d, i, &neg),
        });
    }
    MinedTriplets {
        triplets,
        skipped_anchors: skipped,
    }
}

/// Relative mining: per anchor, keep positives no closer than the nearest
/// negative minus epsilon, and negatives no farther than the farthest
/// positive plus epsilon. Anchors lacking either side are skipped.
pub fn mine_ms(d: &DistanceMatrix, mask: &PairMask, epsilon: f64) -> MinedPairs {
    let n = d.n();
    let mut per_anchor = Vec::with_capacity(n);
    for i in 0..n {
        let pos = mask.positives_of(i);
        let neg = mask.negatives_of(i);
        if pos.is_empty() || neg.is_empty() {
            per_anchor.push(AnchorPairs::default());
            continue;
        }
        let min_neg = neg
            .iter()
            .map(|&k| d.get(i, k))
            .fold(f64::INFINITY, f64::min);
        let max_pos = pos
            .iter()
            .map(|&j| d.get(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        let sets = AnchorPairs {
            positives: pos
                .into_iter()
                .filter(|&j| d.get(i, j) >= min_neg - epsilon)
                .collect(),
            negatives: neg
                .into_iter()
                .filter(|&k| d.get(i, k) <= max_pos + epsilon)
                .collect(),
        };
        per_anchor.push(sets);
    }
    MinedPairs { per_anchor }
}
