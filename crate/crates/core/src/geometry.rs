//! Embedding batches, row-wise L2 normalization with its backward pass,
//! pairwise Euclidean distance matrices, and label-derived pair masks.
//!
//! All functions here are pure; there is no shared mutable state.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Row norms below this are treated as degenerate (zero) rows.
pub const NORM_EPSILON: f64 = 1e-12;

/// Guard for the D -> 0 singularity in the distance gradient. Pairs closer
/// than this contribute a zero subgradient instead of NaN.
pub const DISTANCE_EPSILON: f64 = 1e-12;

/// State saved by [`l2_normalize`] for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    norms: Vec<f64>,
    normalized: Mat,
}

impl NormCache {
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }
}

/// Divide each row by its Euclidean norm.
///
/// Rows with norm below [`NORM_EPSILON`] are an error rather than silently
/// patched: a zero activation row is a data or model bug worth surfacing.
pub fn l2_normalize(raw: &Mat) -> Result<(Mat, NormCache)> {
    let mut out = raw.clone();
    let mut norms = Vec::with_capacity(raw.rows());
    for i in 0..raw.rows() {
        let norm = raw.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < NORM_EPSILON {
            return Err(Error::DegenerateRow { row: i, norm });
        }
        for v in out.row_mut(i) {
            *v /= norm;
        }
        norms.push(norm);
    }
    let cache = NormCache {
        norms,
        normalized: out.clone(),
    };
    Ok((out, cache))
}

/// Backward pass of row-wise normalization.
///
/// For each row, applies the Jacobian `(I - z z^T) / |x|` where `z` is the
/// normalized row, so radial gradient components vanish.
pub fn l2_normalize_backward(grad: &Mat, cache: &NormCache) -> Result<Mat> {
    if grad.shape() != cache.normalized.shape() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "l2_normalize_backward: grad is {:?}, cache is {:?}",
                grad.shape(),
                cache.normalized.shape()
            ),
        });
    }
    let mut out = Mat::zeros(grad.rows(), grad.cols());
    for i in 0..grad.rows() {
        let g = grad.row(i);
        let z = cache.normalized.row(i);
        let radial: f64 = g.iter().zip(z).map(|(a, b)| a * b).sum();
        let inv_norm = 1.0 / cache.norms[i];
        let o = out.row_mut(i);
        for j in 0..g.len() {
            o[j] = (g[j] - radial * z[j]) * inv_norm;
        }
    }
    Ok(out)
}

/// N x N Euclidean pair distances: symmetric, zero diagonal, nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: Mat,
}

impl DistanceMatrix {
    /// Wrap a raw matrix, validating symmetry (1e-9), zero diagonal and
    /// nonnegativity.
    pub fn from_values(values: Mat) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(Error::ShapeMismatch {
                context: format!("distance matrix must be square, got {:?}", values.shape()),
            });
        }
        let n = values.rows();
        for i in 0..n {
            if values.get(i, i) != 0.0 {
                return Err(Error::InvalidParams {
                    context: format!("distance matrix diagonal entry ({i},{i}) is nonzero"),
                });
            }
            for j in 0..n {
                let v = values.get(i, j);
                if v < 0.0 {
                    return Err(Error::InvalidParams {
                        context: format!("negative distance at ({i},{j})"),
                    });
                }
                if (v - values.get(j, i)).abs() > 1e-9 {
                    return Err(Error::InvalidParams {
                        context: format!("distance matrix asymmetric at ({i},{j})"),
                    });
                }
            }
        }
        Ok(DistanceMatrix { values })
    }

    /// Wrap a raw matrix without validation. Used by perturbation-based
    /// gradient checks that need to move single entries independently.
    pub fn from_values_unchecked(values: Mat) -> Self {
        DistanceMatrix { values }
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }
}

/// Pairwise Euclidean distances between rows. The diagonal is exactly zero
/// and the result is symmetric by construction.
pub fn pairwise_distances(normalized: &Mat) -> DistanceMatrix {
    let n = normalized.rows();
    let mut values = Mat::zeros(n, n);
    for i in 0..n {
        let zi = normalized.row(i);
        for j in (i + 1)..n {
            let zj = normalized.row(j);
            let mut acc = 0.0;
            for (a, b) in zi.iter().zip(zj) {
                let d = a - b;
                acc += d * d;
            }
            let dist = acc.sqrt();
            values.set(i, j, dist);
            values.set(j, i, dist);
        }
    }
    DistanceMatrix { values }
}

/// Chain an upstream gradient over distances back to the embeddings.
///
/// Entry `(i, j)` contributes `g * (z_i - z_j) / D_ij` to row `i` and the
/// negated term to row `j`. Pairs with `D_ij < DISTANCE_EPSILON` contribute
/// nothing (subgradient choice at the singularity).
pub fn distance_backward(grad_d: &Mat, normalized: &Mat, d: &DistanceMatrix) -> Mat {
    let n = normalized.rows();
    assert_eq!(grad_d.shape(), (n, n), "distance_backward: grad shape");
    assert_eq!(d.n(), n, "distance_backward: distance matrix size");
    let dim = normalized.cols();
    let mut out = Mat::zeros(n, dim);
    let mut delta = vec![0.0; dim];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let g = grad_d.get(i, j);
            if g == 0.0 {
                continue;
            }
            let dij = d.get(i, j);
            if dij < DISTANCE_EPSILON {
                continue;
            }
            let scale = g / dij;
            let zi = normalized.row(i);
            let zj = normalized.row(j);
            for (k, dv) in delta.iter_mut().enumerate() {
                *dv = scale * (zi[k] - zj[k]);
            }
            {
                let ri = out.row_mut(i);
                for (o, &dv) in ri.iter_mut().zip(&delta) {
                    *o += dv;
                }
            }
            {
                let rj = out.row_mut(j);
                for (o, &dv) in rj.iter_mut().zip(&delta) {
                    *o -= dv;
                }
            }
        }
    }
    out
}

/// Boolean positive/negative masks over ordered pairs, diagonal excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMask {
    n: usize,
    positive: Vec<bool>,
    negative: Vec<bool>,
}

impl PairMask {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_positive(&self, i: usize, j: usize) -> bool {
        self.positive[i * self.n + j]
    }

    #[inline]
    pub fn is_negative(&self, i: usize, j: usize) -> bool {
        self.negative[i * self.n + j]
    }

    /// Indices j with `y_ij = 1`, ascending.
    pub fn positives_of(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.is_positive(i, j)).collect()
    }

    /// Indices j with `y_ij = 0`, ascending.
    pub fn negatives_of(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.is_negative(i, j)).collect()
    }
}

/// Build the positive/negative masks from class labels. `positive[i][j]`
/// holds iff `labels[i] == labels[j]` and `i != j`; `negative` is the
/// off-diagonal complement, so the two are disjoint.
pub fn pair_mask(labels: &[i64]) -> PairMask {
    let n = labels.len();
    let mut positive = vec![false; n * n];
    let mut negative = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if labels[i] == labels[j] {
                positive[i * n + j] = true;
            } else {
                negative[i * n + j] = true;
            }
        }
    }
    PairMask {
        n,
        positive,
        negative,
    }
}

/// A batch of embeddings: raw activations, their unit-norm rows, and labels.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    raw: Mat,
    normalized: Mat,
    cache: NormCache,
    labels: Vec<i64>,
}

impl EmbeddingBatch {
    pub fn from_raw(raw: Mat, labels: Vec<i64>) -> Result<Self> {
        if raw.rows() < 2 || raw.cols() < 1 {
            return Err(Error::InvalidParams {
                context: format!("embedding batch needs N >= 2 and d >= 1, got {:?}", raw.shape()),
            });
        }
        if labels.len() != raw.rows() {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "{} labels for {} embedding rows",
                    labels.len(),
                    raw.rows()
                ),
            });
        }
        let (normalized, cache) = l2_normalize(&raw)?;
        Ok(EmbeddingBatch {
            raw,
            normalized,
            cache,
            labels,
        })
    }

    pub fn raw(&self) -> &Mat {
        &self.raw
    }

    pub fn normalized(&self) -> &Mat {
        &self.normalized
    }

    pub fn norm_cache(&self) -> &NormCache {
        &self.cache
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.raw.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.rows() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_three_four_five() {
        let raw = Mat::from_rows(&[&[3.0, 4.0]]);
        let (out, cache) = l2_normalize(&raw).unwrap();
        assert!((out.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((out.get(0, 1) - 0.8).abs() < 1e-15);
        assert!((cache.norms()[0] - 5.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_idempotent_on_unit_vector() {
        let raw = Mat::from_rows(&[&[0.6, 0.8]]);
        let (out, _) = l2_normalize(&raw).unwrap();
        assert!((out.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((out.get(0, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_zero_row_is_error() {
        let raw = Mat::from_rows(&[&[0.0, 0.0]]);
        match l2_normalize(&raw) {
            Err(Error::DegenerateRow { row: 0, .. }) => {}
            other => panic!("expected DegenerateRow, got {other:?}"),
        }
    }

    #[test]
    fn normalize_backward_hand_jacobian() {
        // raw = (2, 0): z = (1, 0), |x| = 2. Tangential gradient halves,
        // radial gradient vanishes.
        let raw = Mat::from_rows(&[&[2.0, 0.0]]);
        let (_, cache) = l2_normalize(&raw).unwrap();

        let g_tangent = Mat::from_rows(&[&[0.0, 1.0]]);
        let back = l2_normalize_backward(&g_tangent, &cache).unwrap();
        assert!((back.get(0, 0) - 0.0).abs() < 1e-15);
        assert!((back.get(0, 1) - 0.5).abs() < 1e-15);

        let g_radial = Mat::from_rows(&[&[1.0, 0.0]]);
        let back = l2_normalize_backward(&g_radial, &cache).unwrap();
        assert!(back.get(0, 0).abs() < 1e-15);
        assert!(back.get(0, 1).abs() < 1e-15);

        let g_zero = Mat::zeros(1, 2);
        let back = l2_normalize_backward(&g_zero, &cache).unwrap();
        assert_eq!(back.max_abs(), 0.0);
    }

    #[test]
    fn normalize_backward_shape_mismatch() {
        let raw = Mat::from_rows(&[&[2.0, 0.0]]);
        let (_, cache) = l2_normalize(&raw).unwrap();
        let bad = Mat::zeros(2, 2);
        assert!(matches!(
            l2_normalize_backward(&bad, &cache),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn distances_on_known_points() {
        let z = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[1.0, 0.0]]);
        let d = pairwise_distances(&z);
        assert!((d.get(0, 1) - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((d.get(0, 2) - 2.0).abs() < 1e-12);
        assert_eq!(d.get(0, 3), 0.0);
        assert_eq!(d.get(0, 0), 0.0);
        // symmetry by construction
        assert_eq!(d.get(1, 0), d.get(0, 1));
    }

    #[test]
    fn distance_backward_hand_gradient() {
        let z = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = pairwise_distances(&z);
        let mut g = Mat::zeros(2, 2);
        g.set(0, 1, 1.0);
        let back = distance_backward(&g, &z, &d);
        let s = 1.0 / std::f64::consts::SQRT_2;
        assert!((back.get(0, 0) - s).abs() < 1e-12);
        assert!((back.get(0, 1) + s).abs() < 1e-12);
        assert!((back.get(1, 0) + s).abs() < 1e-12);
        assert!((back.get(1, 1) - s).abs() < 1e-12);
    }

    #[test]
    fn distance_backward_zero_distance_guard() {
        let z = Mat::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let d = pairwise_distances(&z);
        let mut g = Mat::zeros(2, 2);
        g.set(0, 1, 3.0);
        let back = distance_backward(&g, &z, &d);
        assert_eq!(back.max_abs(), 0.0);
    }

    #[test]
    fn distance_backward_zero_gradient() {
        let z = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = pairwise_distances(&z);
        let g = Mat::zeros(2, 2);
        let back = distance_backward(&g, &z, &d);
        assert_eq!(back.max_abs(), 0.0);
    }

    #[test]
    fn pair_mask_basic() {
        // labels [a, a, b] in 1-based spec terms: positives {(1,2),(2,1)}.
        let mask = pair_mask(&[0, 0, 1]);
        assert!(mask.is_positive(0, 1));
        assert!(mask.is_positive(1, 0));
        assert!(!mask.is_positive(0, 0));
        assert!(mask.is_negative(0, 2));
        assert!(mask.is_negative(2, 0));
        assert!(mask.is_negative(1, 2));
        assert!(!mask.is_negative(0, 1));
        assert_eq!(mask.positives_of(0), vec![1]);
        assert_eq!(mask.negatives_of(0), vec![2]);
    }

    #[test]
    fn pair_mask_all_same_and_all_distinct() {
        let same = pair_mask(&[7, 7, 7]);
        for i in 0..3 {
            assert!(same.negatives_of(i).is_empty());
            assert_eq!(same.positives_of(i).len(), 2);
        }
        let distinct = pair_mask(&[1, 2, 3]);
        for i in 0..3 {
            assert!(distinct.positives_of(i).is_empty());
            assert_eq!(distinct.negatives_of(i).len(), 2);
        }
    }

    #[test]
    fn scale_invariance_of_normalization() {
        let raw = Mat::from_rows(&[&[0.3, -1.2, 0.5], &[2.0, 0.1, -0.7]]);
        let mut scaled = raw.clone();
        scaled.scale(37.5);
        let (a, _) = l2_normalize(&raw).unwrap();
        let (b, _) = l2_normalize(&scaled).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_rows_keep_distances_at_most_two() {
        let raw = Mat::from_rows(&[&[1.0, 2.0], &[-3.0, 0.5], &[0.2, -0.9]]);
        let (z, _) = l2_normalize(&raw).unwrap();
        let d = pairwise_distances(&z);
        for i in 0..3 {
            for j in 0..3 {
                assert!(d.get(i, j) <= 2.0 + 1e-9);
                assert!(d.get(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn embedding_batch_validates() {
        let raw = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let batch = EmbeddingBatch::from_raw(raw.clone(), vec![0, 1]).unwrap();
        assert_eq!(batch.len(), 2);
        assert!(EmbeddingBatch::from_raw(raw.clone(), vec![0]).is_err());
        let single = Mat::from_rows(&[&[1.0, 0.0]]);
        assert!(EmbeddingBatch::from_raw(single, vec![0]).is_err());
    }

    #[test]
    fn from_values_validates() {
        let good = Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(DistanceMatrix::from_values(good).is_ok());
        let asym = Mat::from_rows(&[&[0.0, 1.0], &[0.5, 0.0]]);
        assert!(DistanceMatrix::from_values(asym).is_err());
        let diag = Mat::from_rows(&[&[0.1, 1.0], &[1.0, 0.0]]);
        assert!(DistanceMatrix::from_values(diag).is_err());
    }
}
