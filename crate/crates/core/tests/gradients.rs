//! Finite-difference verification of every analytic gradient, and the
//! identity between loss gradients and the printed per-pair weights.

mod common;

use common::{random_distances, random_labels, random_unit_embeddings, rel_err};
use pairweight::geometry::{
    distance_backward, l2_normalize, l2_normalize_backward, pair_mask, pairwise_distances,
    DistanceMatrix,
};
use pairweight::losses::{
    lifted_structured_loss, multi_similarity_loss, npair_loss, LossResult,
};
use pairweight::mining::mine_ms;
use pairweight::model::finite_diff_gradient;
use pairweight::trainer::{
    loss_for_spec, mine_for_spec, weights_for_spec, LossConfig, LossMode, LossPipelineSpec,
    MiningMode,
};
use pairweight::weighting::{NormalizationScope, WeightScheme};
use pairweight::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pipeline_specs() -> Vec<(&'static str, LossPipelineSpec, usize)> {
    let pair_cfg = LossConfig {
        m1: 0.0,
        m2: 0.8,
        ..LossConfig::default()
    };
    let trip_cfg = LossConfig {
        m: 0.1,
        ..LossConfig::default()
    };
    let ms_cfg = LossConfig {
        m: 1.0,
        epsilon: 0.1,
        ..LossConfig::default()
    };
    let mk = |loss_mode, mining, scheme, loss| LossPipelineSpec {
        loss_mode,
        mining,
        scheme,
        loss,
        norm_scope: NormalizationScope::PerAnchor,
    };
    vec![
        (
            "pair-p",
            mk(
                LossMode::GeneralPair,
                MiningMode::Thresholds,
                WeightScheme::power(0.0, 1.0, false),
                pair_cfg,
            ),
            3,
        ),
        (
            "pair-e-norm",
            mk(
                LossMode::GeneralPair,
                MiningMode::Thresholds,
                WeightScheme::exponential(0.0, 2.0, true),
                pair_cfg,
            ),
            3,
        ),
        (
            "pair-p-ms-mined",
            mk(
                LossMode::GeneralPair,
                MiningMode::Ms,
                WeightScheme::power(0.5, 1.5, true),
                pair_cfg,
            ),
            3,
        ),
        (
            "triplet-p",
            mk(
                LossMode::GeneralTriplet,
                MiningMode::TripletMargin,
                WeightScheme::power(5.0, 0.0, false),
                trip_cfg,
            ),
            3,
        ),
        (
            "triplet-e-norm",
            mk(
                LossMode::GeneralTriplet,
                MiningMode::TripletMargin,
                WeightScheme::exponential(40.0, 0.0, true),
                trip_cfg,
            ),
            3,
        ),
        (
            "triplet-e-hardest",
            mk(
                LossMode::GeneralTriplet,
                MiningMode::Hardest,
                WeightScheme::exponential(2.0, 0.0, false),
                trip_cfg,
            ),
            3,
        ),
        (
            "contrastive",
            mk(
                LossMode::Contrastive,
                MiningMode::Thresholds,
                WeightScheme::constant(),
                pair_cfg,
            ),
            3,
        ),
        (
            "triplet",
            mk(
                LossMode::Triplet,
                MiningMode::TripletMargin,
                WeightScheme::constant(),
                trip_cfg,
            ),
            3,
        ),
        (
            "npair",
            mk(
                LossMode::NPair,
                MiningMode::Thresholds,
                WeightScheme::constant(),
                LossConfig::default(),
            ),
            2,
        ),
        (
            "lifted",
            mk(
                LossMode::LiftedStructured,
                MiningMode::Thresholds,
                WeightScheme::constant(),
                LossConfig {
                    m: 1.0,
                    ..LossConfig::default()
                },
            ),
            3,
        ),
        (
            "ms-v1",
            mk(
                LossMode::MultiSimilarity,
                MiningMode::Ms,
                WeightScheme::exponential(2.0, 50.0, false),
                ms_cfg,
            ),
            3,
        ),
        (
            "ms-v2",
            mk(
                LossMode::MultiSimilarity,
                MiningMode::Ms,
                WeightScheme::exponential(2.0, 50.0, false),
                LossConfig {
                    ms_plus_one: false,
                    ..ms_cfg
                },
            ),
            3,
        ),
        (
            "square-pair",
            mk(
                LossMode::SquarePair,
                MiningMode::Thresholds,
                WeightScheme::constant(),
                pair_cfg,
            ),
            3,
        ),
        (
            "square-contrastive",
            mk(
                LossMode::SquareContrastive,
                MiningMode::Thresholds,
                WeightScheme::constant(),
                pair_cfg,
            ),
            3,
        ),
        (
            "square-triplet",
            mk(
                LossMode::SquareTriplet,
                MiningMode::TripletMargin,
                WeightScheme::constant(),
                trip_cfg,
            ),
            3,
        ),
    ]
}

#[test]
fn distance_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for &(n, dim) in &[(3usize, 2usize), (5, 4), (8, 6)] {
        let z = random_unit_embeddings(n, dim, &mut rng);
        let mut weights = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    weights.set(i, j, rng.gen_range(-1.0..1.0));
                }
            }
        }
        let d = pairwise_distances(&z);
        let analytic = distance_backward(&weights, &z, &d);
        let base: Vec<f64> = z.data().to_vec();
        let numeric = finite_diff_gradient(
            |flat| {
                let zp = Mat::from_vec(n, dim, flat.to_vec());
                let dp = pairwise_distances(&zp);
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += weights.get(i, j) * dp.get(i, j);
                    }
                }
                acc
            },
            &base,
            1e-6,
        );
        for (a, f) in analytic.data().iter().zip(&numeric) {
            if let Some(rel) = rel_err(*a, *f) {
                assert!(rel < 1e-5, "distance grad mismatch: {a} vs {f}");
            }
        }
    }
}

#[test]
fn normalize_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut raw = Mat::zeros(5, 4);
    for v in raw.data_mut() {
        *v = rng.gen_range(-2.0..2.0f64) + 0.1;
    }
    let mut upstream = Mat::zeros(5, 4);
    for v in upstream.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let (_, cache) = l2_normalize(&raw).unwrap();
    let analytic = l2_normalize_backward(&upstream, &cache).unwrap();
    let base: Vec<f64> = raw.data().to_vec();
    let numeric = finite_diff_gradient(
        |flat| {
            let rp = Mat::from_vec(5, 4, flat.to_vec());
            let (np, _) = l2_normalize(&rp).unwrap();
            np.data()
                .iter()
                .zip(upstream.data())
                .map(|(z, g)| z * g)
                .sum()
        },
        &base,
        1e-6,
    );
    for (a, f) in analytic.data().iter().zip(&numeric) {
        if let Some(rel) = rel_err(*a, *f) {
            assert!(rel < 1e-5, "normalize grad mismatch: {a} vs {f}");
        }
    }
}

/// For every loss variant, the gradient over the distance matrix matches
/// central finite differences of the loss with mining and weights frozen.
#[test]
fn loss_gradients_match_fd_over_distance_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, spec, k) in pipeline_specs() {
        for trial in 0..3 {
            let n_classes = 4;
            let n = n_classes * k;
            let labels: Vec<i64> = (0..n).map(|i| (i / k) as i64).collect();
            let z = random_unit_embeddings(n, 6, &mut rng);
            let d = pairwise_distances(&z);
            let mask = pair_mask(&labels);
            let mined = mine_for_spec(&d, &mask, &spec).unwrap();
            let weights = weights_for_spec(&d, &mined, &spec).unwrap();
            let eval = |dm: &DistanceMatrix| -> LossResult {
                loss_for_spec(dm, &labels, &mask, &mined, &weights, &spec).unwrap()
            };
            let base = eval(&d);
            let h = 1e-5;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let mut plus = d.values().clone();
                    plus.add_at(i, j, h);
                    let mut minus = d.values().clone();
                    minus.add_at(i, j, -h);
                    let fp = eval(&DistanceMatrix::from_values_unchecked(plus)).value;
                    let fm = eval(&DistanceMatrix::from_values_unchecked(minus)).value;
                    let fd = (fp - fm) / (2.0 * h);
                    let a = base.grad_wrt_d.get(i, j);
                    // mixed tolerance: tiny gradients drown in FD cancellation
                    let tol = 1e-8 + 1e-5 * a.abs().max(fd.abs());
                    assert!(
                        (a - fd).abs() < tol,
                        "{name} trial {trial}: grad({i},{j}) {a} vs fd {fd}"
                    );
                }
            }
        }
    }
}

/// Chain every loss through distance_backward and l2_normalize_backward and
/// compare against finite differences of the end-to-end loss over the raw
/// embeddings (mining and weights frozen at the base point).
#[test]
fn chained_gradients_match_fd_over_raw_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for (name, spec, k) in pipeline_specs() {
        let n_classes = 4;
        let n = n_classes * k;
        let dim = 8;
        let labels: Vec<i64> = (0..n).map(|i| (i / k) as i64).collect();
        let mut raw = Mat::zeros(n, dim);
        for v in raw.data_mut() {
            *v = rng.gen_range(-1.0..1.0f64);
        }
        let (normalized, cache) = l2_normalize(&raw).unwrap();
        let d = pairwise_distances(&normalized);
        let mask = pair_mask(&labels);
        let mined = mine_for_spec(&d, &mask, &spec).unwrap();
        let weights = weights_for_spec(&d, &mined, &spec).unwrap();

        let result = loss_for_spec(&d, &labels, &mask, &mined, &weights, &spec).unwrap();
        let grad_z = distance_backward(&result.grad_wrt_d, &normalized, &d);
        let analytic = l2_normalize_backward(&grad_z, &cache).unwrap();

        let base: Vec<f64> = raw.data().to_vec();
        let numeric = finite_diff_gradient(
            |flat| {
                let rp = Mat::from_vec(n, dim, flat.to_vec());
                let (np, _) = l2_normalize(&rp).unwrap();
                let dp = pairwise_distances(&np);
                loss_for_spec(&dp, &labels, &mask, &mined, &weights, &spec)
                    .unwrap()
                    .value
            },
            &base,
            1e-5,
        );
        let mut worst = 0.0f64;
        for (a, f) in analytic.data().iter().zip(&numeric) {
            if let Some(rel) = rel_err(*a, *f) {
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "{name}: worst relative error {worst}");
    }
}

/// The analytic gradient entries of the softmax-weighted losses equal the
/// printed weight formulas, reproduced here with naive arithmetic.
#[test]
fn gradients_equal_printed_weight_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..10 {
        let n_list = [6, 8, 10, 12];
        let n = n_list[trial % n_list.len()];

        // --- multi-similarity, both forms ---
        let labels = random_labels(n, 3, &mut rng);
        let d = random_distances(n, 5, &mut rng);
        let mask = pair_mask(&labels);
        let (alpha, beta, m) = (2.0, 50.0, 1.0);
        let mined = mine_ms(&d, &mask, 0.1);
        for plus_one in [true, false] {
            let res = multi_similarity_loss(&d, &mined, alpha, beta, m, plus_one).unwrap();
            let one = if plus_one { 1.0 } else { 0.0 };
            let mut expected = Mat::zeros(n, n);
            for (i, sets) in mined.per_anchor.iter().enumerate() {
                if !sets.positives.is_empty() {
                    let den = one
                        + sets
                            .positives
                            .iter()
                            .map(|&j| (alpha * (d.get(i, j) - m)).exp())
                            .sum::<f64>();
                    for &j in &sets.positives {
                        expected.add_at(i, j, (alpha * (d.get(i, j) - m)).exp() / den);
                    }
                }
                if !sets.negatives.is_empty() {
                    let den = one
                        + sets
                            .negatives
                            .iter()
                            .map(|&k| (beta * (m - d.get(i, k))).exp())
                            .sum::<f64>();
                    for &k in &sets.negatives {
                        expected.add_at(i, k, -(beta * (m - d.get(i, k))).exp() / den);
                    }
                }
            }
            expected.scale(1.0 / n as f64);
            for (a, e) in res.grad_wrt_d.data().iter().zip(expected.data()) {
                assert!(
                    (a - e).abs() < 1e-10,
                    "ms plus_one={plus_one}: {a} vs printed {e}"
                );
            }
        }

        // --- lifted structured ---
        let res = lifted_structured_loss(&d, &mask, m);
        let mut expected = Mat::zeros(n, n);
        for i in 0..n {
            let negs_i = mask.negatives_of(i);
            if negs_i.is_empty() {
                continue;
            }
            let den_i: f64 = negs_i.iter().map(|&k| (m - d.get(i, k)).exp()).sum();
            for j in 0..n {
                if !mask.is_positive(i, j) {
                    continue;
                }
                let negs_j = mask.negatives_of(j);
                if negs_j.is_empty() {
                    continue;
                }
                let den_j: f64 = negs_j.iter().map(|&l| (m - d.get(j, l)).exp()).sum();
                let expr = d.get(i, j) + den_i.ln() + den_j.ln();
                if expr > 0.0 {
                    expected.add_at(i, j, 1.0);
                    for &k in &negs_i {
                        expected.add_at(i, k, -(m - d.get(i, k)).exp() / den_i);
                    }
                    for &l in &negs_j {
                        expected.add_at(j, l, -(m - d.get(j, l)).exp() / den_j);
                    }
                }
            }
        }
        expected.scale(1.0 / n as f64);
        for (a, e) in res.grad_wrt_d.data().iter().zip(expected.data()) {
            assert!((a - e).abs() < 1e-10, "lifted: {a} vs printed {e}");
        }

        // --- n-pair ---
        let classes = n / 2;
        let np_labels: Vec<i64> = (0..n).map(|i| (i % classes) as i64).collect();
        let dnp = random_distances(n, 5, &mut rng);
        let res = npair_loss(&dnp, &np_labels).unwrap();
        let mut expected = Mat::zeros(n, n);
        for ci in 0..classes {
            let anchor = ci;
            let positive = ci + classes;
            let d_pos = dnp.get(anchor, positive);
            let mut den = 1.0;
            for ck in 0..classes {
                if ck != ci {
                    den += (d_pos - dnp.get(anchor, ck + classes)).exp();
                }
            }
            let mut w_sum = 0.0;
            for ck in 0..classes {
                if ck == ci {
                    continue;
                }
                let w = (d_pos - dnp.get(anchor, ck + classes)).exp() / den;
                expected.add_at(anchor, ck + classes, -w);
                w_sum += w;
            }
            expected.add_at(anchor, positive, w_sum);
        }
        expected.scale(1.0 / classes as f64);
        for (a, e) in res.grad_wrt_d.data().iter().zip(expected.data()) {
            assert!((a - e).abs() < 1e-10, "npair: {a} vs printed {e}");
        }
    }
}
