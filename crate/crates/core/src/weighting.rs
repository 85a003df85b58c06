//! Per-pair and per-triplet weight computation.
//!
//! Weights are evaluated from the current distances and then treated as
//! frozen constants during backpropagation, so the gradient a pair receives
//! is exactly the weight assigned to it. Supported families: constant,
//! p-th power of the hinged margin, and exponential, each with optional
//! normalization over the anchor's mined set (or the whole batch).

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::geometry::DistanceMatrix;
use crate::mining::{MinedPairs, MinedTriplets};

/// Exponent arguments are clamped here before `exp` to avoid overflow at
/// large temperatures. Normalized exponential weights bypass the clamp via
/// max-subtraction, which is exact.
pub const EXP_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum WeightVariant {
    Constant,
    /// `w+ = (D - m1)^p`, `w- = (m2 - D)^q`, `w_t = (D_ij - D_ik + m)^p`,
    /// with the convention `0^0 = 1` so `p = q = 0` reduces to constant.
    Power { p: f64, q: f64 },
    /// `w+ = exp(alpha (D - m1))`, `w- = exp(beta (m2 - D))`,
    /// `w_t = exp(alpha (D_ij - D_ik + m))`.
    Exponential { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeightScheme {
    #[serde(flatten)]
    pub variant: WeightVariant,
    #[serde(default)]
    pub normalize: bool,
}

impl WeightScheme {
    pub fn constant() -> Self {
        WeightScheme {
            variant: WeightVariant::Constant,
            normalize: false,
        }
    }

    pub fn power(p: f64, q: f64, normalize: bool) -> Self {
        WeightScheme {
            variant: WeightVariant::Power { p, q },
            normalize,
        }
    }

    pub fn exponential(alpha: f64, beta: f64, normalize: bool) -> Self {
        WeightScheme {
            variant: WeightVariant::Exponential { alpha, beta },
            normalize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| -> Result<()> {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig {
                    field: format!("scheme.{name}"),
                    message: format!("must be finite and >= 0, got {v}"),
                });
            }
            Ok(())
        };
        match self.variant {
            WeightVariant::Constant => Ok(()),
            WeightVariant::Power { p, q } => {
                check("p", p)?;
                check("q", q)
            }
            WeightVariant::Exponential { alpha, beta } => {
                check("alpha", alpha)?;
                check("beta", beta)
            }
        }
    }
}

/// Which set a normalization sum runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationScope {
    /// Sums run over each anchor's mined positives / negatives / triplets.
    PerAnchor,
    /// Sums run over all mined positives / negatives / triplets in the batch.
    Batch,
}

/// Pair weights aligned entry-for-entry with a [`MinedPairs`] structure.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorWeights {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights {
    pub per_anchor: Vec<AnchorWeights>,
}

/// Triplet weights aligned with a [`MinedTriplets`] list.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletWeights {
    pub values: Vec<f64>,
}

fn check_pair_margins(
    d: &DistanceMatrix,
    mined: &MinedPairs,
    m1: f64,
    m2: f64,
) -> Result<()> {
    for (i, sets) in mined.per_anchor.iter().enumerate() {
        for &j in &sets.positives {
            if d.get(i, j) < m1 {
                return Err(Error::PreconditionViolation {
                    context: format!(
                        "mined positive ({i},{j}) has D={} < m1={m1}",
                        d.get(i, j)
                    ),
                });
            }
        }
        for &k in &sets.negatives {
            if d.get(i, k) > m2 {
                return Err(Error::PreconditionViolation {
                    context: format!(
                        "mined negative ({i},{k}) has D={} > m2={m2}",
                        d.get(i, k)
                    ),
                });
            }
        }
    }
    Ok(())
}

fn check_triplet_margins(d: &DistanceMatrix, mined: &MinedTriplets, m: f64) -> Result<()> {
    for t in &mined.triplets {
        let term = d.get(t.anchor, t.positive) - d.get(t.anchor, t.negative) + m;
        if term < 0.0 {
            return Err(Error::PreconditionViolation {
                context: format!(
                    "triplet ({},{},{}) has D_ij - D_ik + m = {term} < 0",
                    t.anchor, t.positive, t.negative
                ),
            });
        }
    }
    Ok(())
}

/// `w+ = (D - m1)^p`, `w- = (m2 - D)^q` over the mined sets.
pub fn power_pair_weights(
    d: &DistanceMatrix,
    mined: &MinedPairs,
    p: f64,
    q: f64,
    m1: f64,
    m2: f64,
) -> Result<PairWeights> {
    check_pair_margins(d, mined, m1, m2)?;
    let per_anchor = mined
        .per_anchor
        .iter()
        .enumerate()
        .map(|(i, sets)| AnchorWeights {
            positives: sets
                .positives
                .iter()
                .map(|&j| (d.get(i, j) - m1).powf(p))
                .collect(),
            negatives: sets
                .negatives
                .iter()
                .map(|&k| (m2 - d.get(i, k)).powf(q))
                .collect(),
        })
        .collect();
    Ok(PairWeights { per_anchor })
}

/// `w = (D_ij - D_ik + m)^p` over the mined triplets.
pub fn power_triplet_weights(
    d: &DistanceMatrix,
    mined: &MinedTriplets,
    p: f64,
    m: f64,
) -> Result<TripletWeights> {
    check_triplet_margins(d, mined, m)?;
    let values = mined
        .triplets
        .iter()
        .map(|t| (d.get(t.anchor, t.positive) - d.get(t.anchor, t.negative) + m).powf(p))
        .collect();
    Ok(TripletWeights { values })
}

fn clamped_exp(x: f64) -> f64 {
    x.min(EXP_CLAMP).exp()
}

/// `w+ = exp(alpha (D - m1))`, `w- = exp(beta (m2 - D))`, exponent clamped
/// at [`EXP_CLAMP`].
pub fn exp_pair_weights(
    d: &DistanceMatrix,
    mined: &MinedPairs,
    alpha: f64,
    beta: f64,
    m1: f64,
    m2: f64,
) -> Result<PairWeights> {
    check_pair_margins(d, mined, m1, m2)?;
    let per_anchor = mined
        .per_anchor
        .iter()
        .enumerate()
        .map(|(i, sets)| AnchorWeights {
            positives: sets
                .positives
                .iter()
                .map(|&j| clamped_exp(alpha * (d.get(i, j) - m1)))
                .collect(),
            negatives: sets
                .negatives
                .iter()
                .map(|&k| clamped_exp(beta * (m2 - d.get(i, k))))
                .collect(),
        })
        .collect();
    Ok(PairWeights { per_anchor })
}

/// `w = exp(alpha (D_ij - D_ik + m))`, exponent clamped at [`EXP_CLAMP`].
pub fn exp_triplet_weights(
    d: &DistanceMatrix,
    mined: &MinedTriplets,
    alpha: f64,
    m: f64,
) -> Result<TripletWeights> {
    check_triplet_margins(d, mined, m)?;
    let values = mined
        .triplets
        .iter()
        .map(|t| {
            clamped_exp(alpha * (d.get(t.anchor, t.positive) - d.get(t.anchor, t.negative) + m))
        })
        .collect();
    Ok(TripletWeights { values })
}

fn normalize_group(values: &mut [f64]) {
    let sum: f64 = values.iter().sum();
    // zero-sum groups stay zero: the anchor contributes no gradient
    if sum > 0.0 {
        for v in values {
            *v /= sum;
        }
    }
}

/// Divide each weight by its group sum. Per-anchor scope normalizes every
/// anchor's positive and negative lists independently; batch scope pools all
/// positives (and all negatives) across anchors.
pub fn normalize_pair_weights(weights: &mut PairWeights, scope: NormalizationScope) {
    match scope {
        NormalizationScope::PerAnchor => {
            for aw in &mut weights.per_anchor {
                normalize_group(&mut aw.positives);
                normalize_group(&mut aw.negatives);
            }
        }
        NormalizationScope::Batch => {
            let pos_sum: f64 = weights
                .per_anchor
                .iter()
                .flat_map(|a| a.positives.iter())
                .sum();
            let neg_sum: f64 = weights
                .per_anchor
                .iter()
                .flat_map(|a| a.negatives.iter())
                .sum();
            for aw in &mut weights.per_anchor {
                if pos_sum > 0.0 {
                    for v in &mut aw.positives {
                        *v /= pos_sum;
                    }
                }
                if neg_sum > 0.0 {
                    for v in &mut aw.negatives {
                        *v /= neg_sum;
                    }
                }
            }
        }
    }
}

/// Triplet analogue of [`normalize_pair_weights`]; per-anchor groups are the
/// triplets sharing an anchor.
pub fn normalize_triplet_weights(
    weights: &mut TripletWeights,
    mined: &MinedTriplets,
    scope: NormalizationScope,
) {
    assert_eq!(
        weights.values.len(),
        mined.triplets.len(),
        "triplet weights misaligned with mined triplets"
    );
    match scope {
        NormalizationScope::PerAnchor => {
            let mut sums: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
            for (w, t) in weights.values.iter().zip(&mined.triplets) {
                *sums.entry(t.anchor).or_insert(0.0) += *w;
            }
            for (w, t) in weights.values.iter_mut().zip(&mined.triplets) {
                let sum = sums[&t.anchor];
                if sum > 0.0 {
                    *w /= sum;
                }
            }
        }
        NormalizationScope::Batch => {
            normalize_group(&mut weights.values);
        }
    }
}

fn softmax_groups(args_per_group: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    args_per_group
        .into_iter()
        .map(|args| {
            if args.is_empty() {
                return args;
            }
            let max = args.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let exps: Vec<f64> = args.iter().map(|&a| (a - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Compute pair weights for a scheme. Normalized exponential weights use
/// max-subtraction instead of clamping, which is exact for any temperature.
pub fn compute_pair_weights(
    d: &DistanceMatrix,
    mined: &MinedPairs,
    scheme: &WeightScheme,
    m1: f64,
    m2: f64,
    scope: NormalizationScope,
) -> Result<PairWeights> {
    let mut weights = match scheme.variant {
        WeightVariant::Constant => PairWeights {
            per_anchor: mined
                .per_anchor
                .iter()
                .map(|sets| AnchorWeights {
                    positives: vec![1.0; sets.positives.len()],
                    negatives: vec![1.0; sets.negatives.len()],
                })
                .collect(),
        },
        WeightVariant::Power { p, q } => power_pair_weights(d, mined, p, q, m1, m2)?,
        WeightVariant::Exponential { alpha, beta } => {
            if scheme.normalize {
                check_pair_margins(d, mined, m1, m2)?;
                return Ok(stable_normalized_exp_pairs(d, mined, alpha, beta, m1, m2, scope));
            }
            exp_pair_weights(d, mined, alpha, beta, m1, m2)?
        }
    };
    if scheme.normalize {
        normalize_pair_weights(&mut weights, scope);
    }
    Ok(weights)
}

fn stable_normalized_exp_pairs(
    d: &DistanceMatrix,
    mined: &MinedPairs,
    alpha: f64,
    beta: f64,
    m1: f64,
    m2: f64,
    scope: NormalizationScope,
) -> PairWeights {
    let pos_args: Vec<Vec<f64>> = mined
        .per_anchor
        .iter()
        .enumerate()
        .map(|(i, sets)| {
            sets.positives
                .iter()
                .map(|&j| alpha * (d.get(i, j) - m1))
                .collect()
        })
        .collect();
    let neg_args: Vec<Vec<f64>> = mined
        .per_anchor
        .iter()
        .enumerate()
        .map(|(i, sets)| {
            sets.negatives
                .iter()
                .map(|&k| beta * (m2 - d.get(i, k)))
                .collect()
        })
        .collect();
    match scope {
        NormalizationScope::PerAnchor => {
            let pos = softmax_groups(pos_args);
            let neg = softmax_groups(neg_args);
            PairWeights {
                per_anchor: pos
                    .into_iter()
                    .zip(neg)
                    .map(|(positives, negatives)| AnchorWeights {
                        positives,
                        negatives,
                    })
                    .collect(),
            }
        }
        NormalizationScope::Batch => {
            let pos_flat: Vec<f64> = pos_args.iter().flatten().copied().collect();
            let neg_flat: Vec<f64> = neg_args.iter().flatten().copied().collect();
            let pos_soft = softmax_groups(vec![pos_flat]).remove(0);
            let neg_soft = softmax_groups(vec![neg_flat]).remove(0);
            let mut pos_it = pos_soft.into_iter();
            let mut neg_it = neg_soft.into_iter();
            PairWeights {
                per_anchor: mined
                    .per_anchor
                    .iter()
                    .map(|sets| AnchorWeights {
                        positives: (0..sets.positives.len())
                            .map(|_| pos_it.next().unwrap())
                            .collect(),
                        negatives: (0..sets.negatives.len())
                            .map(|_| neg_it.next().unwrap())
                            .collect(),
                    })
                    .collect(),
            }
        }
    }
}

/// Compute triplet weights for a scheme; power uses `p`, exponential uses
/// `alpha`. Normalized exponential weights take the stable softmax path.
pub fn compute_triplet_weights(
    d: &DistanceMatrix,
    mined: &MinedTriplets,
    scheme: &WeightScheme,
    m: f64,
    scope: NormalizationScope,
) -> Result<TripletWeights> {
    let mut weights = match scheme.variant {
        WeightVariant::Constant => TripletWeights {
            values: vec![1.0; mined.triplets.len()],
        },
        WeightVariant::Power { p, .. } => power_triplet_weights(d, mined, p, m)?,
        WeightVariant::Exponential { alpha, .. } => {
            if scheme.normalize {
                check_triplet_margins(d, mined, m)?;
                return Ok(stable_normalized_exp_triplets(d, mined, alpha, m, scope));
            }
            exp_triplet_weights(d, mined, alpha, m)?
        }
    };
    if scheme.normalize {
        normalize_triplet_weights(&mut weights, mined, scope);
    }
    Ok(weights)
}

fn stable_normalized_exp_triplets(
    d: &DistanceMatrix,
    mined: &MinedTriplets,
    alpha: f64,
    m: f64,
    scope: NormalizationScope,
) -> TripletWeights {
    let args: Vec<f64> = mined
        .triplets
        .iter()
        .map(|t| alpha * (d.get(t.anchor, t.positive) - d.get(t.anchor, t.negative) + m))
        .collect();
    match scope {
        NormalizationScope::Batch => TripletWeights {
            values: softmax_groups(vec![args]).remove(0),
        },
        NormalizationScope::PerAnchor => {
            // group triplet indices by anchor, softmax within each group
            let mut groups: std::collections::BTreeMap<usize, Vec<usize>> =
                std::collections::BTreeMap::new();
            for (idx, t) in mined.triplets.iter().enumerate() {
                groups.entry(t.anchor).or_default().push(idx);
            }
            let mut values = vec![0.0; args.len()];
            for (_, idxs) in groups {
                let group_args: Vec<f64> = idxs.iter().map(|&i| args[i]).collect();
                let soft = softmax_groups(vec![group_args]).remove(0);
                for (slot, w) in idxs.into_iter().zip(soft) {
                    values[slot] = w;
                }
            }
            TripletWeights { values }
        }
    }
}

/// Tabulate unnormalized positive/negative weights over a distance grid,
/// for plotting. Power weights use the hinged margin so fractional
/// exponents stay real; exponential weights use the raw exponent.
pub fn weight_curves(
    variant: &WeightVariant,
    m1: f64,
    m2: f64,
    grid: &[f64],
) -> Vec<(f64, f64, f64)> {
    grid.iter()
        .map(|&dist| {
            let (wp, wn) = match *variant {
                WeightVariant::Constant => (1.0, 1.0),
                WeightVariant::Power { p, q } => (
                    (dist - m1).max(0.0).powf(p),
                    (m2 - dist).max(0.0).powf(q),
                ),
                WeightVariant::Exponential { alpha, beta } => (
                    clamped_exp(alpha * (dist - m1)),
                    clamped_exp(beta * (m2 - dist)),
                ),
            };
            (dist, wp, wn)
        })
        .collect()
}

/// Write a weight-curve table as CSV: `distance,w_pos,w_neg`, six decimals.
pub fn write_weight_curves_csv<W: Write>(
    mut out: W,
    rows: &[(f64, f64, f64)],
) -> io::Result<()> {
    writeln!(out, "distance,w_pos,w_neg")?;
    for (dist, wp, wn) in rows {
        writeln!(out, "{dist:.6},{wp:.6},{wn:.6}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pair_mask;
    use crate::mat::Mat;
    use crate::mining::{mine_thresholds, mine_triplet_margin, AnchorPairs, Triplet};

    fn dm(rows: &[&[f64]]) -> DistanceMatrix {
        DistanceMatrix::from_values(Mat::from_rows(rows)).unwrap()
    }

    /// 3-point instance: anchor 0 has positive 1 at 0.5 and negative 2 at 0.5.
    fn simple_instance() -> (DistanceMatrix, MinedPairs) {
        let d = dm(&[
            &[0.0, 0.5, 0.5],
            &[0.5, 0.0, 0.7],
            &[0.5, 0.7, 0.0],
        ]);
        let mask = pair_mask(&[0, 0, 1]);
        let mined = mine_thresholds(&d, &mask, 0.0, 0.8).unwrap();
        (d, mined)
    }

    #[test]
    fn power_zero_exponents_are_constant() {
        let (d, mined) = simple_instance();
        let w = power_pair_weights(&d, &mined, 0.0, 0.0, 0.0, 0.8).unwrap();
        for aw in &w.per_anchor {
            assert!(aw.positives.iter().all(|&v| v == 1.0));
            assert!(aw.negatives.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn power_negative_weight_scalar_cases() {
        let (d, mined) = simple_instance();
        // q=1, D=0.5, m2=0.8 -> 0.3
        let w = power_pair_weights(&d, &mined, 0.0, 1.0, 0.0, 0.8).unwrap();
        assert!((w.per_anchor[0].negatives[0] - 0.3).abs() < 1e-15);
        // boundary zero: q=2, D=m2 (only anchor 0's negative stays mined)
        let boundary = MinedPairs {
            per_anchor: vec![
                AnchorPairs {
                    positives: vec![],
                    negatives: vec![2],
                },
                AnchorPairs::default(),
                AnchorPairs::default(),
            ],
        };
        let w = power_pair_weights(&d, &boundary, 0.0, 2.0, 0.0, 0.5).unwrap();
        assert_eq!(w.per_anchor[0].negatives[0], 0.0);
    }

    #[test]
    fn power_precondition_violation() {
        let (d, _) = simple_instance();
        // hand-build a mined set that violates m2
        let mined = MinedPairs {
            per_anchor: vec![
                AnchorPairs {
                    positives: vec![],
                    negatives: vec![2],
                },
                AnchorPairs::default(),
                AnchorPairs::default(),
            ],
        };
        assert!(matches!(
            power_pair_weights(&d, &mined, 0.0, 1.0, 0.0, 0.3),
            Err(Error::PreconditionViolation { .. })
        ));
    }

    #[test]
    fn power_triplet_scalar_cases() {
        let d = dm(&[
            &[0.0, 0.6, 0.5],
            &[0.6, 0.0, 0.7],
            &[0.5, 0.7, 0.0],
        ]);
        let mined = MinedTriplets {
            triplets: vec![Triplet {
                anchor: 0,
                positive: 1,
                negative: 2,
            }],
            skipped_anchors: vec![],
        };
        let w = power_triplet_weights(&d, &mined, 1.0, 0.1).unwrap();
        assert!((w.values[0] - 0.2).abs() < 1e-15);
        let w = power_triplet_weights(&d, &mined, 0.0, 0.1).unwrap();
        assert_eq!(w.values[0], 1.0);
        // boundary zero at exact margin (values chosen exactly representable)
        let d2 = dm(&[
            &[0.0, 0.5, 0.75],
            &[0.5, 0.0, 0.7],
            &[0.75, 0.7, 0.0],
        ]);
        let w = power_triplet_weights(&d2, &mined, 5.0, 0.25).unwrap();
        assert_eq!(w.values[0], 0.0);
    }

    #[test]
    fn exp_pair_scalar_cases() {
        let (d, mined) = simple_instance();
        // alpha = beta = 0 -> constant
        let w = exp_pair_weights(&d, &mined, 0.0, 0.0, 0.0, 0.8).unwrap();
        assert!(w.per_anchor[0].positives.iter().all(|&v| v == 1.0));
        // beta=2, D=0.5, m2=0.8 -> e^0.6
        let w = exp_pair_weights(&d, &mined, 0.0, 2.0, 0.0, 0.8).unwrap();
        assert!((w.per_anchor[0].negatives[0] - 0.6_f64.exp()).abs() < 1e-12);
        // alpha=2, D=m1: zero exponent
        let w = exp_pair_weights(&d, &mined, 2.0, 0.0, 0.5, 0.8).unwrap();
        assert_eq!(w.per_anchor[0].positives[0], 1.0);
    }

    #[test]
    fn exp_clamp_contract() {
        let d = dm(&[
            &[0.0, 0.6, 2.0],
            &[0.6, 0.0, 1.9],
            &[2.0, 1.9, 0.0],
        ]);
        let mined = MinedTriplets {
            triplets: vec![Triplet {
                anchor: 0,
                positive: 1,
                negative: 2,
            }],
            skipped_anchors: vec![],
        };
        // alpha=40, term = 0.6 - 2.0 + 2.0 = 0.6 -> exponent 24; now push it
        // over the clamp with a big alpha
        let term: f64 = 0.6 - 2.0 + 2.0;
        let w = exp_triplet_weights(&d, &mined, 40.0, 2.0).unwrap();
        // exponent 40 * 0.6 = 24 < 50: unclamped
        assert!((w.values[0] / (40.0 * term).exp() - 1.0).abs() < 1e-12);
        let w = exp_triplet_weights(&d, &mined, 100.0, 2.0).unwrap();
        // exponent 100 * 0.6 = 60 -> clamped to 50
        assert!((w.values[0] / 50.0_f64.exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_triplet_scalar_case() {
        let d = dm(&[
            &[0.0, 0.6, 0.5],
            &[0.6, 0.0, 0.7],
            &[0.5, 0.7, 0.0],
        ]);
        let mined = MinedTriplets {
            triplets: vec![Triplet {
                anchor: 0,
                positive: 1,
                negative: 2,
            }],
            skipped_anchors: vec![],
        };
        let w = exp_triplet_weights(&d, &mined, 1.0, 0.1).unwrap();
        assert!((w.values[0] - 0.2_f64.exp()).abs() < 1e-12);
        let w = exp_triplet_weights(&d, &mined, 0.0, 0.1).unwrap();
        assert_eq!(w.values[0], 1.0);
    }

    #[test]
    fn normalization_scalar_case() {
        // negatives {e^0.6, e^0.2} normalize to e^0.6/(e^0.6+e^0.2) and its
        // complement
        let mut w = PairWeights {
            per_anchor: vec![AnchorWeights {
                positives: vec![],
                negatives: vec![0.6_f64.exp(), 0.2_f64.exp()],
            }],
        };
        normalize_pair_weights(&mut w, NormalizationScope::PerAnchor);
        let expected0 = 0.6_f64.exp() / (0.6_f64.exp() + 0.2_f64.exp());
        assert!((w.per_anchor[0].negatives[0] - expected0).abs() < 1e-12);
        assert!((w.per_anchor[0].negatives[1] - (1.0 - expected0)).abs() < 1e-12);
        let sum: f64 = w.per_anchor[0].negatives.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalization_single_element_and_average() {
        let mut w = PairWeights {
            per_anchor: vec![AnchorWeights {
                positives: vec![3.7],
                negatives: vec![1.0, 1.0, 1.0, 1.0],
            }],
        };
        normalize_pair_weights(&mut w, NormalizationScope::PerAnchor);
        assert_eq!(w.per_anchor[0].positives[0], 1.0);
        // constant weights over n elements -> 1/n each (the average operation)
        assert!(w.per_anchor[0].negatives.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn normalization_zero_sum_group_stays_zero() {
        let mut w = PairWeights {
            per_anchor: vec![AnchorWeights {
                positives: vec![0.0, 0.0],
                negatives: vec![],
            }],
        };
        normalize_pair_weights(&mut w, NormalizationScope::PerAnchor);
        assert!(w.per_anchor[0].positives.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn power_zero_and_exp_zero_bitwise_equal() {
        let (d, mined) = simple_instance();
        let scope = NormalizationScope::PerAnchor;
        let a = compute_pair_weights(
            &d,
            &mined,
            &WeightScheme::power(0.0, 0.0, false),
            0.0,
            0.8,
            scope,
        )
        .unwrap();
        let b = compute_pair_weights(
            &d,
            &mined,
            &WeightScheme::exponential(0.0, 0.0, false),
            0.0,
            0.8,
            scope,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stable_softmax_matches_naive_for_small_exponents() {
        let (d, mined) = simple_instance();
        let scheme = WeightScheme::exponential(0.5, 1.5, true);
        let stable = compute_pair_weights(
            &d,
            &mined,
            &scheme,
            0.0,
            0.8,
            NormalizationScope::PerAnchor,
        )
        .unwrap();
        let mut naive =
            exp_pair_weights(&d, &mined, 0.5, 1.5, 0.0, 0.8).unwrap();
        normalize_pair_weights(&mut naive, NormalizationScope::PerAnchor);
        for (a, b) in stable.per_anchor.iter().zip(&naive.per_anchor) {
            for (x, y) in a.positives.iter().zip(&b.positives) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.negatives.iter().zip(&b.negatives) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalized_triplet_weights_group_by_anchor() {
        let d = dm(&[
            &[0.0, 0.6, 0.5, 0.4],
            &[0.6, 0.0, 0.7, 0.3],
            &[0.5, 0.7, 0.0, 0.8],
            &[0.4, 0.3, 0.8, 0.0],
        ]);
        let mask = pair_mask(&[0, 0, 1, 1]);
        let mined = mine_triplet_margin(&d, &mask, 1.0).unwrap();
        let mut w = power_triplet_weights(&d, &mined, 1.0, 1.0).unwrap();
        normalize_triplet_weights(&mut w, &mined, NormalizationScope::PerAnchor);
        // per anchor, weights sum to 1
        let mut sums: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for (v, t) in w.values.iter().zip(&mined.triplets) {
            *sums.entry(t.anchor).or_insert(0.0) += v;
        }
        for (_, s) in sums {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn weight_curve_shapes() {
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 / 100.0).collect();
        // constant: flat ones
        let rows = weight_curves(&WeightVariant::Constant, 0.0, 0.8, &grid);
        assert!(rows.iter().all(|&(_, wp, wn)| wp == 1.0 && wn == 1.0));
        // power q=1: linearly decreasing negative weight until m2
        let rows = weight_curves(&WeightVariant::Power { p: 0.0, q: 1.0 }, 0.0, 0.8, &grid);
        for pair in rows.windows(2) {
            assert!(pair[1].2 <= pair[0].2 + 1e-12);
        }
        // exponential beta=2: strictly decreasing convex negative weight
        let rows = weight_curves(
            &WeightVariant::Exponential {
                alpha: 0.0,
                beta: 2.0,
            },
            0.0,
            0.8,
            &grid,
        );
        for (dist, _, wn) in &rows {
            assert!((wn - (2.0 * (0.8 - dist)).exp()).abs() < 1e-12);
        }
        for pair in rows.windows(2) {
            assert!(pair[1].2 < pair[0].2);
        }
    }

    #[test]
    fn weight_monotonicity_on_grid() {
        // positive weights nondecreasing in D, negative weights nonincreasing
        let grid: Vec<f64> = (0..=400).map(|i| i as f64 / 200.0).collect();
        for variant in [
            WeightVariant::Power { p: 0.7, q: 1.3 },
            WeightVariant::Exponential {
                alpha: 1.1,
                beta: 2.5,
            },
        ] {
            let rows = weight_curves(&variant, 0.0, 2.0, &grid);
            for pair in rows.windows(2) {
                assert!(pair[1].1 >= pair[0].1 - 1e-12, "w+ must not decrease");
                assert!(pair[1].2 <= pair[0].2 + 1e-12, "w- must not increase");
            }
        }
    }

    #[test]
    fn curves_csv_format() {
        let rows = vec![(0.0, 1.0, 2.5), (0.5, 0.25, 0.125)];
        let mut buf = Vec::new();
        write_weight_curves_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "distance,w_pos,w_neg\n0.000000,1.000000,2.500000\n0.500000,0.250000,0.125000\n"
        );
    }
}
