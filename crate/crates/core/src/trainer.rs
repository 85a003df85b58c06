//! End-to-end training loop: sample a batch, embed, normalize, compute
//! distances, mine, weight, take the loss, backpropagate, and update with
//! Adam. The mine -> weight -> loss stages are exposed separately so
//! gradient checks can freeze mining and weights while perturbing the model.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{recall_at_k, RetrievalReport};
use crate::geometry::{
    distance_backward, l2_normalize, l2_normalize_backward, pair_mask, pairwise_distances,
    DistanceMatrix, PairMask,
};
use crate::losses::{
    contrastive_loss, general_pair_loss, general_triplet_loss, lifted_structured_loss,
    multi_similarity_loss, npair_loss, square_contrastive_loss, square_pair_loss,
    square_triplet_loss, triplet_loss, LossResult,
};
use crate::mat::Mat;
use crate::mining::{
    mine_hardest_triplets, mine_ms, mine_thresholds, mine_triplet_margin, pk_sample,
    random_sample, MinedPairs, MinedTriplets, SamplerConfig, SamplerMode,
};
use crate::model::{AdamState, MlpConfig, MlpEmbedder};
use crate::weighting::{
    compute_pair_weights, compute_triplet_weights, NormalizationScope, PairWeights,
    TripletWeights, WeightScheme, WeightVariant,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    GeneralPair,
    GeneralTriplet,
    Contrastive,
    Triplet,
    NPair,
    LiftedStructured,
    MultiSimilarity,
    SquarePair,
    SquareContrastive,
    SquareTriplet,
}

impl LossMode {
    pub fn uses_pair_mining(self) -> bool {
        matches!(
            self,
            LossMode::GeneralPair | LossMode::SquarePair | LossMode::MultiSimilarity
        )
    }

    pub fn uses_triplet_mining(self) -> bool {
        matches!(
            self,
            LossMode::GeneralTriplet | LossMode::Triplet | LossMode::SquareTriplet
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningMode {
    Thresholds,
    TripletMargin,
    Hardest,
    Ms,
}

/// Scalar knobs shared by the losses: thresholds `m1 <= m2`, the triplet /
/// legacy margin `m`, the relative-mining slack `epsilon`, and the
/// multi-similarity form toggle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default)]
    pub m1: f64,
    #[serde(default = "default_m2")]
    pub m2: f64,
    #[serde(default = "default_m")]
    pub m: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Multi-similarity v1 keeps the `1 +` inside the logs; v2 drops it.
    #[serde(default = "default_true")]
    pub ms_plus_one: bool,
}

fn default_m2() -> f64 {
    0.8
}

fn default_m() -> f64 {
    0.1
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            m1: 0.0,
            m2: default_m2(),
            m: default_m(),
            epsilon: default_epsilon(),
            ms_plus_one: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m1 >= 0.0 && self.m1 <= self.m2) {
            return Err(Error::InvalidConfig {
                field: "loss.m1/loss.m2".into(),
                message: format!("need 0 <= m1 <= m2, got m1={}, m2={}", self.m1, self.m2),
            });
        }
        if !(self.m >= 0.0) {
            return Err(Error::InvalidConfig {
                field: "loss.m".into(),
                message: format!("margin must be >= 0, got {}", self.m),
            });
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig {
                field: "loss.epsilon".into(),
                message: format!("epsilon must be >= 0, got {}", self.epsilon),
            });
        }
        Ok(())
    }
}

/// Everything the mine -> weight -> loss pipeline needs, independent of the
/// training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPipelineSpec {
    pub loss_mode: LossMode,
    pub mining: MiningMode,
    pub scheme: WeightScheme,
    pub loss: LossConfig,
    pub norm_scope: NormalizationScope,
}

impl LossPipelineSpec {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.scheme.validate()?;
        match self.loss_mode {
            LossMode::GeneralPair | LossMode::SquarePair => {
                if !matches!(self.mining, MiningMode::Thresholds | MiningMode::Ms) {
                    return Err(Error::InvalidConfig {
                        field: "mining".into(),
                        message: "pair losses mine with `thresholds` or `ms`".into(),
                    });
                }
            }
            LossMode::GeneralTriplet | LossMode::Triplet | LossMode::SquareTriplet => {
                if !matches!(self.mining, MiningMode::TripletMargin | MiningMode::Hardest) {
                    return Err(Error::InvalidConfig {
                        field: "mining".into(),
                        message: "triplet losses mine with `triplet-margin` or `hardest`".into(),
                    });
                }
            }
            LossMode::MultiSimilarity => {
                if self.mining != MiningMode::Ms {
                    return Err(Error::InvalidConfig {
                        field: "mining".into(),
                        message: "multi-similarity mines with `ms`".into(),
                    });
                }
                match self.scheme.variant {
                    WeightVariant::Exponential { alpha, beta } if alpha > 0.0 && beta > 0.0 => {}
                    _ => {
                        return Err(Error::InvalidConfig {
                            field: "scheme".into(),
                            message:
                                "multi-similarity takes its temperatures from an exponential scheme with alpha, beta > 0"
                                    .into(),
                        });
                    }
                }
            }
            LossMode::Contrastive | LossMode::LiftedStructured | LossMode::SquareContrastive
            | LossMode::NPair => {}
        }
        Ok(())
    }
}

/// Mined selection for one batch, shaped by the loss family.
#[derive(Debug, Clone, PartialEq)]
pub enum MinedSelection {
    Pairs(MinedPairs),
    Triplets(MinedTriplets),
    /// Losses that read the mask or labels directly.
    Unmined,
}

/// Weights computed for a mined selection; legacy losses carry their own
/// weighting inside the loss formula.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectedWeights {
    Pairs(PairWeights),
    Triplets(TripletWeights),
    Unweighted,
}

/// Run the spec's mining stage on one batch.
///
/// For pair losses under `ms` mining, the relative criterion is applied on
/// top of threshold mining, so mined pairs still satisfy the `m1`/`m2`
/// margins their weights assume. For the general triplet loss under
/// `hardest` mining, hardest triplets that violate the margin are dropped
/// for the same reason (their hinge is inactive anyway).
pub fn mine_for_spec(
    d: &DistanceMatrix,
    mask: &PairMask,
    spec: &LossPipelineSpec,
) -> Result<MinedSelection> {
    let cfg = &spec.loss;
    match spec.loss_mode {
        LossMode::GeneralPair | LossMode::SquarePair => {
            let base = mine_thresholds(d, mask, cfg.m1, cfg.m2)?;
            match spec.mining {
                MiningMode::Thresholds => Ok(MinedSelection::Pairs(base)),
                MiningMode::Ms => Ok(MinedSelection::Pairs(restrict_to_ms(
                    d,
                    mask,
                    base,
                    cfg.epsilon,
                ))),
                _ => unreachable!("validated"),
            }
        }
        LossMode::MultiSimilarity => Ok(MinedSelection::Pairs(mine_ms(d, mask, cfg.epsilon))),
        LossMode::GeneralTriplet | LossMode::Triplet | LossMode::SquareTriplet => {
            let mut mined = match spec.mining {
                MiningMode::TripletMargin => mine_triplet_margin(d, mask, cfg.m)?,
                MiningMode::Hardest => mine_hardest_triplets(d, mask),
                _ => unreachable!("validated"),
            };
            if spec.loss_mode == LossMode::GeneralTriplet && spec.mining == MiningMode::Hardest {
                mined
                    .triplets
                    .retain(|t| d.get(t.anchor, t.positive) - d.get(t.anchor, t.negative) + cfg.m >= 0.0);
            }
            Ok(MinedSelection::Triplets(mined))
        }
        LossMode::Contrastive | LossMode::LiftedStructured | LossMode::SquareContrastive
        | LossMode::NPair => Ok(MinedSelection::Unmined),
    }
}

fn restrict_to_ms(
    d: &DistanceMatrix,
    mask: &PairMask,
    base: MinedPairs,
    epsilon: f64,
) -> MinedPairs {
    let ms = mine_ms(d, mask, epsilon);
    let per_anchor = base
        .per_anchor
        .into_iter()
        .zip(ms.per_anchor)
        .map(|(b, m)| crate::mining::AnchorPairs {
            positives: b
                .positives
                .into_iter()
                .filter(|j| m.positives.binary_search(j).is_ok())
                .collect(),
            negatives: b
                .negatives
                .into_iter()
                .filter(|k| m.negatives.binary_search(k).is_ok())
                .collect(),
        })
        .collect();
    MinedPairs { per_anchor }
}

/// Compute the frozen weights for the general losses; legacy losses return
/// `Unweighted`.
pub fn weights_for_spec(
    d: &DistanceMatrix,
    mined: &MinedSelection,
    spec: &LossPipelineSpec,
) -> Result<SelectedWeights> {
    match (spec.loss_mode, mined) {
        (LossMode::GeneralPair, MinedSelection::Pairs(pairs)) => {
            Ok(SelectedWeights::Pairs(compute_pair_weights(
                d,
                pairs,
                &spec.scheme,
                spec.loss.m1,
                spec.loss.m2,
                spec.norm_scope,
            )?))
        }
        (LossMode::GeneralTriplet, MinedSelection::Triplets(triplets)) => {
            Ok(SelectedWeights::Triplets(compute_triplet_weights(
                d,
                triplets,
                &spec.scheme,
                spec.loss.m,
                spec.norm_scope,
            )?))
        }
        _ => Ok(SelectedWeights::Unweighted),
    }
}

/// Evaluate the configured loss on one batch given mined sets and weights.
pub fn loss_for_spec(
    d: &DistanceMatrix,
    labels: &[i64],
    mask: &PairMask,
    mined: &MinedSelection,
    weights: &SelectedWeights,
    spec: &LossPipelineSpec,
) -> Result<LossResult> {
    let cfg = &spec.loss;
    let mismatch = || Error::InvalidConfig {
        field: "loss_mode".into(),
        message: "mined selection does not match the loss family".into(),
    };
    match spec.loss_mode {
        LossMode::GeneralPair => match (mined, weights) {
            (MinedSelection::Pairs(p), SelectedWeights::Pairs(w)) => {
                general_pair_loss(d, p, w, cfg.m1, cfg.m2)
            }
            _ => Err(mismatch()),
        },
        LossMode::GeneralTriplet => match (mined, weights) {
            (MinedSelection::Triplets(t), SelectedWeights::Triplets(w)) => {
                general_triplet_loss(d, t, w, cfg.m)
            }
            _ => Err(mismatch()),
        },
        LossMode::Contrastive => Ok(contrastive_loss(d, mask, cfg.m)),
        LossMode::Triplet => match mined {
            MinedSelection::Triplets(t) => Ok(triplet_loss(d, t, cfg.m)),
            _ => Err(mismatch()),
        },
        LossMode::NPair => npair_loss(d, labels),
        LossMode::LiftedStructured => Ok(lifted_structured_loss(d, mask, cfg.m)),
        LossMode::MultiSimilarity => match mined {
            MinedSelection::Pairs(p) => {
                let (alpha, beta) = match spec.scheme.variant {
                    WeightVariant::Exponential { alpha, beta } => (alpha, beta),
                    _ => return Err(mismatch()),
                };
                multi_similarity_loss(d, p, alpha, beta, cfg.m, cfg.ms_plus_one)
            }
            _ => Err(mismatch()),
        },
        LossMode::SquarePair => match mined {
            MinedSelection::Pairs(p) => square_pair_loss(d, p, cfg.m1, cfg.m2),
            _ => Err(mismatch()),
        },
        LossMode::SquareContrastive => Ok(square_contrastive_loss(d, mask, cfg.m1, cfg.m2)),
        LossMode::SquareTriplet => match mined {
            MinedSelection::Triplets(t) => Ok(square_triplet_loss(d, t, cfg.m)),
            _ => Err(mismatch()),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub sampler: SamplerConfig,
    pub loss_mode: LossMode,
    pub mining: MiningMode,
    pub scheme: WeightScheme,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "default_norm_scope")]
    pub norm_scope: NormalizationScope,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub seed: u64,
    /// Train only the heads for this many initial epochs.
    #[serde(default)]
    pub freeze_trunk_epochs: usize,
    pub model: MlpConfig,
}

fn default_norm_scope() -> NormalizationScope {
    NormalizationScope::PerAnchor
}

fn default_lr() -> f64 {
    1e-5
}

impl TrainConfig {
    pub fn pipeline_spec(&self) -> LossPipelineSpec {
        LossPipelineSpec {
            loss_mode: self.loss_mode,
            mining: self.mining,
            scheme: self.scheme,
            loss: self.loss,
            norm_scope: self.norm_scope,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.pipeline_spec().validate()?;
        self.model.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "lr".into(),
                message: format!("must be finite and >= 0, got {}", self.lr),
            });
        }
        if self.steps_per_epoch == 0 && self.epochs > 0 {
            return Err(Error::InvalidConfig {
                field: "steps_per_epoch".into(),
                message: "must be >= 1 when training".into(),
            });
        }
        if self.loss_mode == LossMode::NPair {
            match self.sampler.mode {
                SamplerMode::Pk {
                    samples_per_class: 2,
                    ..
                } => {}
                _ => {
                    return Err(Error::InvalidConfig {
                        field: "sampler".into(),
                        message: "n-pair batches need the pk sampler with samples_per_class = 2"
                            .into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Recall snapshot taken after an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSnapshot {
    pub epoch: usize,
    pub recall: RetrievalReport,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    /// One loss value per optimization step.
    pub losses: Vec<f64>,
    pub snapshots: Vec<EpochSnapshot>,
    /// Wall-clock seconds per epoch; informational only, never serialized.
    pub epoch_seconds: Vec<f64>,
}

impl TrainHistory {
    /// Mean of the `window` losses ending at 1-based step `step`.
    pub fn smoothed_loss(&self, step: usize, window: usize) -> f64 {
        assert!(step >= window && step <= self.losses.len());
        let slice = &self.losses[step - window..step];
        slice.iter().sum::<f64>() / window as f64
    }

    /// CSV with header `step,loss`, one row per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, loss) in self.losses.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, loss));
        }
        out
    }
}

fn sample_batch(
    dataset: &Dataset,
    mode: &SamplerMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    match *mode {
        SamplerMode::Random { batch_size } => random_sample(dataset.len(), batch_size, rng),
        SamplerMode::Pk {
            classes_per_batch,
            samples_per_class,
        } => pk_sample(dataset.class_index(), classes_per_batch, samples_per_class, rng),
    }
}

/// One optimization step on an explicit batch. Exposed for testing; `train`
/// drives it. `freeze_trunk` zeroes the trunk gradients before the update.
pub fn train_step(
    model: &mut MlpEmbedder,
    optimizer: &mut AdamState,
    features: &Mat,
    labels: &[i64],
    spec: &LossPipelineSpec,
    freeze_trunk: bool,
) -> Result<f64> {
    let (raw, fwd_cache) = model.forward(features)?;
    let (normalized, norm_cache) = l2_normalize(&raw)?;
    let d = pairwise_distances(&normalized);
    let mask = pair_mask(labels);
    let mined = mine_for_spec(&d, &mask, spec)?;
    let weights = weights_for_spec(&d, &mined, spec)?;
    let result = loss_for_spec(&d, labels, &mask, &mined, &weights, spec)?;
    if !result.value.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            value: result.value,
        });
    }
    let grad_embedding = distance_backward(&result.grad_wrt_d, &normalized, &d);
    let grad_raw = l2_normalize_backward(&grad_embedding, &norm_cache)?;
    let mut grads = model.backward(&fwd_cache, &grad_raw)?;
    if freeze_trunk {
        grads.zero_trunk();
    }
    optimizer.step(model, &grads)?;
    Ok(result.value)
}

/// Train a fresh model on `dataset`. When `eval_set` is given, a recall
/// snapshot over `eval_ks` is taken after every epoch. Deterministic in the
/// config seeds.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    eval_set: Option<&Dataset>,
    eval_ks: &[usize],
) -> Result<(MlpEmbedder, TrainHistory)> {
    config.validate()?;
    if config.model.input_dim != dataset.input_dim() {
        return Err(Error::InvalidConfig {
            field: "model.input_dim".into(),
            message: format!(
                "model expects {} features, dataset has {}",
                config.model.input_dim,
                dataset.input_dim()
            ),
        });
    }
    let mut model = MlpEmbedder::new(&config.model)?;
    let mut optimizer = AdamState::new(&model, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.sampler.seed);
    let spec = config.pipeline_spec();
    let mut history = TrainHistory::default();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        let freeze = epoch < config.freeze_trunk_epochs;
        for _ in 0..config.steps_per_epoch {
            step += 1;
            let batch = sample_batch(dataset, &config.sampler.mode, &mut rng)?;
            let features = dataset.gather_features(&batch);
            let labels = dataset.gather_labels(&batch);
            let loss = train_step(&mut model, &mut optimizer, &features, &labels, &spec, freeze)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { value, .. } => Error::NonFiniteLoss { step, value },
                    other => other,
                })?;
            history.losses.push(loss);
        }
        if let Some(eval) = eval_set {
            let recall = evaluate_model(&model, eval, eval_ks)?;
            history.snapshots.push(EpochSnapshot {
                epoch: epoch + 1,
                recall,
            });
        }
        history.epoch_seconds.push(epoch_start.elapsed().as_secs_f64());
    }
    Ok((model, history))
}

/// Forward a dataset through the model and L2-normalize the embeddings.
pub fn embed_dataset(model: &MlpEmbedder, dataset: &Dataset) -> Result<Mat> {
    let (raw, _) = model.forward(dataset.features())?;
    let (normalized, _) = l2_normalize(&raw)?;
    Ok(normalized)
}

/// Recall@K of a model's embeddings over a dataset.
pub fn evaluate_model(
    model: &MlpEmbedder,
    dataset: &Dataset,
    ks: &[usize],
) -> Result<RetrievalReport> {
    let embeddings = embed_dataset(model, dataset)?;
    recall_at_k(&embeddings, dataset.labels(), ks)
}
