//! Loss functions over pair distances, each with its analytic gradient
//! with respect to the distance matrix.
//!
//! Two general forms cover the weighted families:
//!
//! ```text
//! L_pair    = sum_{y_ij=1} w_ij [D_ij - m1]_+  +  sum_{y_ij=0} w_ij [m2 - D_ij]_+
//! L_triplet = sum_{(i,j,k)} w_ijk [D_ij - D_ik + m]_+
//! ```
//!
//! where the weights are frozen constants, so the gradient of each active
//! term is exactly its weight. The remaining functions are the reviewed
//! losses (contrastive, triplet, N-pair, lifted structured, multi-similarity
//! v1/v2) and the square-distance variants.
//!
//! Conventions shared by every loss here:
//! - the batch value is the per-anchor sum divided by the number of anchors;
//! - `grad_wrt_d[i][j]` is the derivative with respect to the `(i, j)` entry
//!   as the loss reads it (pairs are enumerated per anchor, so `(i, j)` and
//!   `(j, i)` are distinct terms);
//! - hinge terms contribute gradient only while strictly active;
//! - log-sum-exp computations subtract the maximum exponent first.

use crate::error::{Error, Result};
use crate::geometry::{DistanceMatrix, PairMask};
use crate::mat::Mat;
use crate::mining::{MinedPairs, MinedTriplets};
use crate::weighting::{PairWeights, TripletWeights};

/// Scalar loss plus its gradient over the distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_wrt_d: Mat,
    /// Number of loss terms that contributed a nonzero value.
    pub active_pair_count: usize,
}

/// log(zero_term + sum_j exp(x_j)) with max-subtraction; `include_one` adds
/// an implicit exp(0) term.
fn stable_lse(xs: &[f64], include_one: bool) -> f64 {
    let mut max = if include_one { 0.0 } else { f64::NEG_INFINITY };
    for &x in xs {
        if x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = if include_one { (-max).exp() } else { 0.0 };
    for &x in xs {
        sum += (x - max).exp();
    }
    max + sum.ln()
}

/// exp(x_j) / (zero_term + sum_k exp(x_k)), computed stably.
fn stable_softmax(xs: &[f64], include_one: bool) -> Vec<f64> {
    let mut max = if include_one { 0.0 } else { f64::NEG_INFINITY };
    for &x in xs {
        if x > max {
            max = x;
        }
    }
    let mut sum = if include_one { (-max).exp() } else { 0.0 };
    let exps: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let e = (x - max).exp();
            sum += e;
            e
        })
        .collect();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_pair_alignment(mined: &MinedPairs, weights: &PairWeights) -> Result<()> {
    if mined.per_anchor.len() != weights.per_anchor.len() {
        return Err(Error::WeightMiningMismatch {
            context: format!(
                "{} anchors mined, {} anchors weighted",
                mined.per_anchor.len(),
                weights.per_anchor.len()
            ),
        });
    }
    for (i, (sets, aw)) in mined.per_anchor.iter().zip(&weights.per_anchor).enumerate() {
        if sets.positives.len() != aw.positives.len() || sets.negatives.len() != aw.negatives.len()
        {
            return Err(Error::WeightMiningMismatch {
                context: format!(
                    "anchor {i}: mined {}+/{}- vs weighted {}+/{}-",
                    sets.positives.len(),
                    sets.negatives.len(),
                    aw.positives.len(),
                    aw.negatives.len()
                ),
            });
        }
    }
    Ok(())
}

/// General pair-based weighting loss over mined sets with frozen weights.
///
/// Gradient: `+w_ij / N` on active positives, `-w_ij / N` on active
/// negatives, zero elsewhere.
pub fn general_pair_loss(
    d: &DistanceMatrix,
    mined: &MinedPairs,
    weights: &PairWeights,
    m1: f64,
    m2: f64,
) -> Result<LossResult> {
    let n = d.n();
    if mined.per_anchor.len() != n {
        return Err(Error::ShapeMismatch {
            context: format!("{} mined anchors for a {n}-row batch", mined.per_anchor.len()),
        });
    }
    check_pair_alignment(mined, weights)?;
    let mut grad = Mat::zeros(n, n);
    let mut value = 0.0;
    let mut active = 0usize;
    for (i, (sets, aw)) in mined.per_anchor.iter().zip(&weights.per_anchor).enumerate() {
        for (&j, &w) in sets.positives.iter().zip(&aw.positives) {
            let margin = d.get(i, j) - m1;
            if margin > 0.0 {
                value += w * margin;
                grad.add_at(i, j, w);
                active += 1;
            }
        }
        for (&k, &w) in sets.negatives.iter().zip(&aw.negatives) {
            let margin = m2 - d.get(i, k);
            if margin > 0.0 {
                value += w * margin;
                grad.add_at(i, k, -w);
                active += 1;
            }
        }
    }
    let inv = 1.0 / n as f64;
    grad.scale(inv);
    Ok(LossResult {
        value: value * inv,
        grad_wrt_d: grad,
        active_pair_count: active,
    })
}

fn check_triplet_alignment(mined: &MinedTriplets, weights: &TripletWeights) -> Result<()> {
    if mined.triplets.len() != weights.values.len() {
        return Err(Error::WeightMiningMismatch {
            context: format!(
                "{} triplets mined, {} weighted",
                mined.triplets.len(),
                weights.values.len()
            ),
        });
    }
    Ok(())
}

/// General triplet-based weighting loss with frozen weights: each active
/// triplet pushes `+w` at `(i, j)` and `-w` at `(i, k)`.
pub fn general_triplet_loss(
    d: &DistanceMatrix,
    mined: &MinedTriplets,
    weights: &TripletWeights,
    m: f64,
) -> Result<LossResult> {
    check_triplet_alignment(mined, weights)?;
    let n = d.n();
    let mut grad = Mat::zeros(n, n);
    let mut value = 0.0;
    let mut active = 0usize;
    for (t, &w) in mined.triplets.iter().zip(&weights.values) {
        let term = d.get(t.anchor, t.positive) - d.get(t.anchor, t.negative) + m;
        if term > 0.0 {
            value += w * term;
            grad.add_at(t.anchor, t.positive, w);
            grad.add_at(t.anchor, t.negative, -w);
            active += 1;
        }
    }
    let inv = 1.0 / n as f64;
    grad.scale(inv);
    Ok(LossResult {
        value: value * inv,
        grad_wrt_d: grad,
        active_pair_count: active,
    })
}

/// Contrastive loss: positive pairs pay their distance, negative pairs pay
/// `[m - D]_+`.
pub fn contrastive_loss(d: &DistanceMatrix, mask: &PairMask, m: f64) -> LossResult {
    debug_assert!(m >= 0.0, "contrastive margin must be nonnegative");
    let n = d.n();
    let mut grad = Mat::zeros(n, n);
    let mut value = 0.0;
    let mut active = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if mask.is_positive(i, j) {
                value += d.get(i, j);
                grad.add_at(i, j, 1.0);
                active += 1;
            } else if mask.is_negative(i, j) {
                let h = m - d.get(i, j);
                if h > 0.0 {
                    value += h;
                    grad.add_at(i, j, -1.0);
                    active += 1;
                }
            }
        }
    }
    let inv = 1.0 / n as f64;
    grad.scale(inv);
    LossResult {
        value: value * inv,
        grad_wrt_d: grad,
        active_pair_count: active,
    }
}

/// Plain triplet loss `[D_ij - D_ik + m]_+` over mined triplets.
pub fn triplet_loss(d: &DistanceMatrix, mined: &MinedTriplets, m: f64) -> LossResult {
    debug_assert!(m >= 0.0, "triplet margin must be nonnegative");
    let n = d.n();
    let mut grad = Mat::zeros(n, n);
    let mut value = 0.0;
    let mut active = 0usize;
    for t in &mined.triplets {
        let term = d.get(t.anchor, t.positive) - d.get(t.anchor, t.negative) + m;
        if term > 0.0 {
            value += term;
            grad.add_at(t.anchor, t.positive, 1.0);
            grad.add_at(t.anchor, t.negative, -1.0);
            active += 1;
        }
    }
    let inv = 1.0 / n as f64;
    grad.scale(inv);
    LossResult {
        value: value * inv,
        grad_wrt_d: grad,
        active_pair_count: active,
    }
}

/// N-pair loss. The batch must hold exactly two samples per class (an
/// anchor and its positive, in batch order); the negatives of an anchor are
/// the positives of every other class.
///
/// Per anchor: `log(1 + sum_{k != i} exp(D_ii - D_ik))`, averaged over the
/// class anchors. The gradient weight on each negative is the printed
/// softmax fraction; the positive entry receives their sum.
pub fn npair_loss(d: &DistanceMatrix, labels: &[i64]) -> Result<LossResult> {
    let n = d.n();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            context: format!("{} labels for a {n}-row distance matrix", labels.len()),
        });
    }
    // group by label in first-occurrence order
    let mut classes: Vec<(i64, Vec<usize>)> = Vec::new();
    for (idx, &label) in labels.iter().enumerate() {
        match classes.iter_mut().find(|(l, _)| *l == label) {
            Some((_, rows)) => rows.push(idx),
            None => classes.push((label, vec![idx])),
        }
    }
    for (label, rows) in &classes {
        if rows.len() != 2 {
            return Err(Error::StructureViolation {
                context: format!(
                    "N-pair batches need exactly one positive pair per class; class {label} has {} samples",
                    rows.len()
                ),
            });
        }
    }
    if classes.len() < 2 {
        return Err(Error::StructureViolation {
            context: "N-pair batches need at least 2 classes".into(),
        });
    }
    let n_classes = classes.len();
    let mut grad = Mat::zeros(n, n);
    let mut value = 0.0;
    for (ci, (_, rows)) in classes.iter().enumerate() {
        let anchor = rows[0];
        let positive = rows[1];
        let d_pos = d.get(anchor, positive);
        let mut terms = Vec::with_capacity(n_classes - 1);
        let mut neg_indices = Vec::with_capacity(n_classes - 1);
        for (ck, (_, other)) in classes.iter().enumerate() {
            if ck == ci {
                continue;
            }
            let neg = other[1];
            terms.push(d_pos - d.get(anchor, neg));
            neg_indices.push(neg);
        }
        value += stable_lse(&terms, true);
        let ws = stable_softmax(&terms, true);
        let w_sum: f64 = ws.iter().sum();
        grad.add_at(anchor, positive, w_sum);
        for (&neg, &w) in neg_indices.iter().zip(&ws) {
            grad.add_at(anchor, neg, -w);
        }
    }
    let inv = 1.0 / n_classes as f64;
    grad.scale(inv);
    Ok(LossResult {
        value: value * inv,
        grad_wrt_d: grad,
        active_pair_count: n_classes,
    })
}

/// Lifted structured loss, un-squared hinge form:
/// `[D_ij + log sum_k exp(m - D_ik) + log sum_l exp(m - D_jl)]_+` over
/// ordered positive pairs. Active terms give the positive pair weight 1 and
/// each negative a softmax weight over its side's negatives.
pub fn lifted_structured_loss(d: &DistanceMatrix, mask: &PairMask, m: f64) -> LossResult {
    debug_assert!(m >= 0.0, "lifted margin must be nonnegative");
    let n = d.n();
    let mut grad = Mat::zeros(n, n);
    let mut value = 0.0;
    let mut active = 0usize;
    for i in 0..n {
        let negs_i = mask.negatives_of(i);
        if negs_i.is_empty() {
            continue;
        }
        let args_i: Vec<f64> = negs_i.iter().map(|&k| m - d.get(i, k)).collect();
        let lse_i = stable_lse(&args_i, false);
        for j in 0..n {
            if !mask.is_positive(i, j) {
                continue;
            }
            let negs_j = mask.negatives_of(j);
            if negs_j.is_empty() {
                continue;
            }
            let args_j: Vec<f64> = negs_j.iter().map(|&l| m - d.get(j, l)).collect();
            let expr = d.get(i, j) + lse_i + stable_lse(&args_j, false);
            if expr > 0.0 {
                value += expr;
                active += 1;
                grad.add_at(i, j, 1.0);
                let wi = stable_softmax(&args_i, false);
                for (&k, &w) in negs_i.iter().zip(&wi) {
                    grad.add_at(i, k, -w);
                }
                let wj = stable_softmax(&args_j, false);
                for (&l, &w) in negs_j.iter().zip(&wj) {
                    grad.add_at(j, l, -w);
                }
            }
        }
    }
    let inv = 1.0 / n as f64;
    grad.scale(inv);
    LossResult {
        value: value * inv,
        grad_wrt_d: grad,
        active_pair_count: active,
    }
}

/// Multi-similarity loss over MS-mined sets. `plus_one` selects the original
/// form with the `1 +` inside each log (v1); without it (v2) the log runs
/// over the exponential sums alone, and its gradient weights drop the 1
/// from the denominator. Anchors with an empty mined side skip that term.
pub fn multi_similarity_loss(
    d: &DistanceMatrix,
    mined: &MinedPairs,
    alpha: f64,
    beta: f64,
    m: f64,
    plus_one: bool,
) -> Result<LossResult> {
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::InvalidTemperature { alpha, beta });
    }
    let n = d.n();
    if mined.per_anchor.len() != n {
        return Err(Error::ShapeMismatch {
            context: format!("{} mined anchors for a {n}-row batch", mined.per_anchor.len()),
        });
    }
    let mut grad = Mat::zeros(n, n);
    let mut value = 0.0;
    let mut active = 0usize;
    for (i, sets) in mined.per_anchor.iter().enumerate() {
        if !sets.positives.is_empty() {
            let args: Vec<f64> = sets
                .positives
                .iter()
                .map(|&j| alpha * (d.get(i, j) - m))
                .collect();
            value += stable_lse(&args, plus_one) / alpha;
            let ws = stable_softmax(&args, plus_one);
            for (&j, &w) in sets.positives.iter().zip(&ws) {
                grad.add_at(i, j, w);
            }
            active += sets.positives.len();
        }
        if !sets.negatives.is_empty() {
            let args: Vec<f64> = sets
                .negatives
                .iter()
                .map(|&k| beta * (m - d.get(i, k)))
                .collect();
            value += stable_lse(&args, plus_one) / beta;
            let ws = stable_softmax(&args, plus_one);
            for (&k, &w) in sets.negatives.iter().zip(&ws) {
                grad.add_at(i, k, -w);
            }
            active += sets.negatives.len();
        }
    }
    let inv = 1.0 / n as f64;
    grad.scale(inv);
    Ok(LossResult {
        value: value * inv,
        grad_wrt_d: grad,
        active_pair_count: active,
    })
}

/// Square-distance pair loss over mined sets:
/// `[D^2 - m1]_+` for positives, `[m2 - D^2]_+` for negatives. Active pairs
/// get gradient magnitude `2 D`, so zero-distance negatives receive no push.
pub fn square_pair_loss(
    d: &DistanceMatrix,
    mined: &MinedPairs,
    m1: f64,
    m2: f64,
) -> Result<LossResult> {
    let n = d.n();
    if mined.per_anchor.len() != n {
        return Err(Error::ShapeMismatch {
            context: format!("{} mined anchors for a {n}-row batch", mined.per_anchor.len()),
        });
    }
    let mut grad = Mat::zeros(n, n);
    let mut value = 0.0;
    let mut active = 0usize;
    for (i, sets) in mined.per_anchor.iter().enumerate() {
        for &j in &sets.positives {
            let dij = d.get(i, j);
            let term = dij * dij - m1;
            if term > 0.0 {
                value += term;
                grad.add_at(i, j, 2.0 * dij);
                active += 1;
            }
        }
        for &k in &sets.negatives {
            let dik = d.get(i, k);
            let term = m2 - dik * dik;
            if term > 0.0 {
                value += term;
                grad.add_at(i, k, -2.0 * dik);
                active += 1;
            }
        }
    }
    let inv = 1.0 / n as f64;
    grad.scale(inv);
    Ok(LossResult {
        value: value * inv,
        grad_wrt_d: grad,
        active_pair_count: active,
    })
}

/// Squared-hinge contrastive loss over the full mask:
/// `[D - m1]_+^2` for positives, `[m2 - D]_+^2` for negatives. Active pairs
/// get gradient `2 (D - m1)` resp. `-2 (m2 - D)`.
pub fn square_contrastive_loss(
    d: &DistanceMatrix,
    mask: &PairMask,
    m1: f64,
    m2: f64,
) -> LossResult {
    let n = d.n();
    let mut grad = Mat::zeros(n, n);
    let mut value = 0.0;
    let mut active = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if mask.is_positive(i, j) {
                let h = d.get(i, j) - m1;
                if h > 0.0 {
                    value += h * h;
                    grad.add_at(i, j, 2.0 * h);
                    active += 1;
                }
            } else if mask.is_negative(i, j) {
                let h = m2 - d.get(i, j);
                if h > 0.0 {
                    value += h * h;
                    grad.add_at(i, j, -2.0 * h);
                    active += 1;
                }
            }
        }
    }
    let inv = 1.0 / n as f64;
    grad.scale(inv);
    LossResult {
        value: value * inv,
        grad_wrt_d: grad,
        active_pair_count: active,
    }
}

/// Square-distance triplet loss `[D_ij^2 - D_ik^2 + m]_+`; active triplets
/// get gradients `+2 D_ij` and `-2 D_ik`.
pub fn square_triplet_loss(d: &DistanceMatrix, mined: &MinedTriplets, m: f64) -> LossResult {
    debug_assert!(m >= 0.0, "triplet margin must be nonnegative");
    let n = d.n();
    let mut grad = Mat::zeros(n, n);
    let mut value = 0.0;
    let mut active = 0usize;
    for t in &mined.triplets {
        let dij = d.get(t.anchor, t.positive);
        let dik = d.get(t.anchor, t.negative);
        let term = dij * dij - dik * dik + m;
        if term > 0.0 {
            value += term;
            grad.add_at(t.anchor, t.positive, 2.0 * dij);
            grad.add_at(t.anchor, t.negative, -2.0 * dik);
            active += 1;
        }
    }
    let inv = 1.0 / n as f64;
    grad.scale(inv);
    LossResult {
        value: value * inv,
        grad_wrt_d: grad,
        active_pair_count: active,
    }
}
