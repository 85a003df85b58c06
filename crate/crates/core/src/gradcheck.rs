//! End-to-end finite-difference verification of every loss variant.
//!
//! For each variant, random batches are pushed through a two-layer embedder,
//! the mined sets and frozen weights are captured once at the base point,
//! and then central differences over the model parameters are compared with
//! the analytic chain loss -> distances -> embeddings -> parameters.
//! Freezing mining and weights in the probe matches what training actually
//! optimizes: weights are constants with respect to gradient flow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::geometry::{
    distance_backward, l2_normalize, l2_normalize_backward, pair_mask, pairwise_distances,
};
use crate::mat::Mat;
use crate::model::{finite_diff_gradient, MlpConfig, MlpEmbedder};
use crate::trainer::{
    loss_for_spec, mine_for_spec, weights_for_spec, LossConfig, LossMode, LossPipelineSpec,
    MiningMode,
};
use crate::weighting::{NormalizationScope, WeightScheme};

/// Maximum relative error accepted by the default gradient check.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Coordinates where both gradients are below this are skipped as noise.
pub const SKIP_MAGNITUDE: f64 = 1e-8;

const INPUT_DIM: usize = 8;
const CLASSES_PER_BATCH: usize = 4;

/// A named loss configuration exercised by the gradient suite.
#[derive(Debug, Clone)]
pub struct GradcheckVariant {
    pub name: &'static str,
    pub spec: LossPipelineSpec,
    pub samples_per_class: usize,
}

fn spec(
    loss_mode: LossMode,
    mining: MiningMode,
    scheme: WeightScheme,
    loss: LossConfig,
) -> LossPipelineSpec {
    LossPipelineSpec {
        loss_mode,
        mining,
        scheme,
        loss,
        norm_scope: NormalizationScope::PerAnchor,
    }
}

/// Every loss variant the suite covers, with the headline hyper-parameters:
/// power pair (p, q = 0, 1), exponential pair (alpha, beta = 0, 2), power
/// triplet (p = 5), exponential triplet (alpha = 40), each unnormalized and
/// normalized, plus the reviewed and square-distance losses.
pub fn all_variants() -> Vec<GradcheckVariant> {
    let pair_loss = LossConfig {
        m1: 0.0,
        m2: 0.8,
        ..LossConfig::default()
    };
    let triplet_loss_cfg = LossConfig {
        m: 0.1,
        ..LossConfig::default()
    };
    let ms_loss = LossConfig {
        m: 1.0,
        epsilon: 0.1,
        ..LossConfig::default()
    };
    let lifted_cfg = LossConfig {
        m: 1.0,
        ..LossConfig::default()
    };
    let mut variants = vec![
        GradcheckVariant {
            name: "pair-p",
            spec: spec(
                LossMode::GeneralPair,
                MiningMode::Thresholds,
                WeightScheme::power(0.0, 1.0, false),
                pair_loss,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "pair-p-norm",
            spec: spec(
                LossMode::GeneralPair,
                MiningMode::Thresholds,
                WeightScheme::power(0.0, 1.0, true),
                pair_loss,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "pair-e",
            spec: spec(
                LossMode::GeneralPair,
                MiningMode::Thresholds,
                WeightScheme::exponential(0.0, 2.0, false),
                pair_loss,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "pair-e-norm",
            spec: spec(
                LossMode::GeneralPair,
                MiningMode::Thresholds,
                WeightScheme::exponential(0.0, 2.0, true),
                pair_loss,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "triplet-p",
            spec: spec(
                LossMode::GeneralTriplet,
                MiningMode::TripletMargin,
                WeightScheme::power(5.0, 0.0, false),
                triplet_loss_cfg,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "triplet-p-norm",
            spec: spec(
                LossMode::GeneralTriplet,
                MiningMode::TripletMargin,
                WeightScheme::power(5.0, 0.0, true),
                triplet_loss_cfg,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "triplet-e",
            spec: spec(
                LossMode::GeneralTriplet,
                MiningMode::TripletMargin,
                WeightScheme::exponential(40.0, 0.0, false),
                triplet_loss_cfg,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "triplet-e-norm",
            spec: spec(
                LossMode::GeneralTriplet,
                MiningMode::TripletMargin,
                WeightScheme::exponential(40.0, 0.0, true),
                triplet_loss_cfg,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "contrastive",
            spec: spec(
                LossMode::Contrastive,
                MiningMode::Thresholds,
                WeightScheme::constant(),
                pair_loss,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "triplet",
            spec: spec(
                LossMode::Triplet,
                MiningMode::TripletMargin,
                WeightScheme::constant(),
                triplet_loss_cfg,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "npair",
            spec: spec(
                LossMode::NPair,
                MiningMode::Thresholds,
                WeightScheme::constant(),
                LossConfig::default(),
            ),
            samples_per_class: 2,
        },
        GradcheckVariant {
            name: "lifted",
            spec: spec(
                LossMode::LiftedStructured,
                MiningMode::Thresholds,
                WeightScheme::constant(),
                lifted_cfg,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "ms-v1",
            spec: spec(
                LossMode::MultiSimilarity,
                MiningMode::Ms,
                WeightScheme::exponential(2.0, 50.0, false),
                ms_loss,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "ms-v2",
            spec: spec(
                LossMode::MultiSimilarity,
                MiningMode::Ms,
                WeightScheme::exponential(2.0, 50.0, false),
                LossConfig {
                    ms_plus_one: false,
                    ..ms_loss
                },
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "square-pair",
            spec: spec(
                LossMode::SquarePair,
                MiningMode::Thresholds,
                WeightScheme::constant(),
                pair_loss,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "square-contrastive",
            spec: spec(
                LossMode::SquareContrastive,
                MiningMode::Thresholds,
                WeightScheme::constant(),
                pair_loss,
            ),
            samples_per_class: 3,
        },
        GradcheckVariant {
            name: "square-triplet",
            spec: spec(
                LossMode::SquareTriplet,
                MiningMode::TripletMargin,
                WeightScheme::constant(),
                triplet_loss_cfg,
            ),
            samples_per_class: 3,
        },
    ];
    for v in &variants {
        debug_assert!(v.spec.validate().is_ok(), "variant {} invalid", v.name);
    }
    variants.sort_by_key(|v| v.name);
    variants
}

/// Result of checking one variant over a number of batches.
#[derive(Debug, Clone)]
pub struct GradcheckOutcome {
    pub variant: String,
    pub batches: usize,
    pub checked_coords: usize,
    pub max_rel_err: f64,
}

impl GradcheckOutcome {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tolerance
    }
}

fn mix_seed(base: u64, name: &str) -> u64 {
    name.bytes()
        .fold(base, |acc, b| acc.wrapping_mul(31).wrapping_add(b as u64))
}

/// Check one variant on `batches` random batches, alternating fusion off/on.
/// `inject_error` corrupts one analytic gradient entry; a healthy harness
/// must then report a failure.
pub fn run_variant(
    variant: &GradcheckVariant,
    batches: usize,
    seed: u64,
    h: f64,
    inject_error: bool,
) -> Result<GradcheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, variant.name));
    let mut max_rel_err = 0.0f64;
    let mut checked = 0usize;
    for batch_idx in 0..batches {
        let fusion = batch_idx % 2 == 1;
        let batch_size = CLASSES_PER_BATCH * variant.samples_per_class;
        let labels: Vec<i64> = (0..batch_size)
            .map(|i| (i / variant.samples_per_class) as i64)
            .collect();
        let mut features = Mat::zeros(batch_size, INPUT_DIM);
        for v in features.data_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut model = MlpEmbedder::new(&MlpConfig {
            input_dim: INPUT_DIM,
            hidden_dims: vec![10, 8],
            embed_dim: 8,
            fusion,
            seed: rng.gen(),
        })?;

        // capture mining and weights at the base point
        let (raw, fwd_cache) = model.forward(&features)?;
        let (normalized, norm_cache) = l2_normalize(&raw)?;
        let d = pairwise_distances(&normalized);
        let mask = pair_mask(&labels);
        let mined = mine_for_spec(&d, &mask, &variant.spec)?;
        let weights = weights_for_spec(&d, &mined, &variant.spec)?;

        let result = loss_for_spec(&d, &labels, &mask, &mined, &weights, &variant.spec)?;
        let grad_embedding = distance_backward(&result.grad_wrt_d, &normalized, &d);
        let grad_raw = l2_normalize_backward(&grad_embedding, &norm_cache)?;
        let mut analytic = model.backward(&fwd_cache, &grad_raw)?.flat();
        if inject_error && batch_idx == 0 && !analytic.is_empty() {
            analytic[0] += 1.0;
        }

        let base = model.flat_params();
        let spec = variant.spec.clone();
        let numeric = finite_diff_gradient(
            |params| {
                if model.set_flat_params(params).is_err() {
                    return f64::INFINITY;
                }
                let value = model
                    .forward(&features)
                    .and_then(|(raw, _)| l2_normalize(&raw))
                    .map(|(normalized, _)| pairwise_distances(&normalized))
                    .and_then(|d| loss_for_spec(&d, &labels, &mask, &mined, &weights, &spec))
                    .map(|r| r.value);
                value.unwrap_or(f64::INFINITY)
            },
            &base,
            h,
        );
        model.set_flat_params(&base)?;

        for (a, n) in analytic.iter().zip(&numeric) {
            if a.abs() < SKIP_MAGNITUDE && n.abs() < SKIP_MAGNITUDE {
                continue;
            }
            checked += 1;
            let rel = (a - n).abs() / a.abs().max(n.abs());
            if !rel.is_finite() {
                max_rel_err = f64::INFINITY;
            } else if rel > max_rel_err {
                max_rel_err = rel;
            }
        }
    }
    Ok(GradcheckOutcome {
        variant: variant.name.to_string(),
        batches,
        checked_coords: checked,
        max_rel_err,
    })
}
