//! Zero-shot retrieval evaluation: Recall@K over a leave-one-out gallery,
//! and class-disjoint dataset splits.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Recall@K values for a set of cutoffs, nondecreasing in K.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub num_queries: usize,
    /// Queries dropped because their class has no second member.
    pub excluded_singletons: usize,
}

impl RetrievalReport {
    /// JSON with recall values rounded to four decimal places, keys in
    /// ascending K order.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\"recall_at\": {");
        let mut first = true;
        for (k, v) in &self.recall_at {
            if !first {
                out.push_str(", ");
            }
            first = false;
            out.push_str(&format!("\"{k}\": {v:.4}"));
        }
        out.push_str(&format!("}}, \"num_queries\": {}}}", self.num_queries));
        out
    }
}

/// Leave-one-out Recall@K: each row queries the remaining N-1 rows by
/// Euclidean distance (ties broken toward the lower index) and succeeds at
/// cutoff K if a same-label row appears among the K nearest. Queries whose
/// label is unique are excluded and counted.
pub fn recall_at_k(embeddings: &Mat, labels: &[i64], ks: &[usize]) -> Result<RetrievalReport> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            context: format!("{} labels for {n} embedding rows", labels.len()),
        });
    }
    if ks.is_empty() {
        return Err(Error::InvalidParams {
            context: "need at least one K".into(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidParams {
            context: "recall needs at least 2 rows".into(),
        });
    }
    for &k in ks {
        if k == 0 || k > n - 1 {
            return Err(Error::KTooLarge { k, max_k: n - 1 });
        }
    }
    let mut label_counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &l in labels {
        *label_counts.entry(l).or_default() += 1;
    }
    let mut first_hit_ranks = Vec::new();
    let mut excluded = 0usize;
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for q in 0..n {
        if label_counts[&labels[q]] < 2 {
            excluded += 1;
            continue;
        }
        order.clear();
        order.extend((0..n).filter(|&i| i != q));
        let qrow = embeddings.row(q);
        let mut dists = vec![0.0; n];
        for &i in &order {
            let mut acc = 0.0;
            for (a, b) in qrow.iter().zip(embeddings.row(i)) {
                let d = a - b;
                acc += d * d;
            }
            dists[i] = acc;
        }
        order.sort_by(|&a, &b| {
            dists[a]
                .partial_cmp(&dists[b])
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        let rank = order
            .iter()
            .position(|&i| labels[i] == labels[q])
            .expect("non-singleton query has a same-label row")
            + 1;
        first_hit_ranks.push(rank);
    }
    if first_hit_ranks.is_empty() {
        return Err(Error::InvalidParams {
            context: "every query class is a singleton; recall is undefined".into(),
        });
    }
    let num_queries = first_hit_ranks.len();
    let mut recall_at = BTreeMap::new();
    for &k in ks {
        let hits = first_hit_ranks.iter().filter(|&&r| r <= k).count();
        recall_at.insert(k, hits as f64 / num_queries as f64);
    }
    Ok(RetrievalReport {
        recall_at,
        num_queries,
        excluded_singletons: excluded,
    })
}

/// Split a dataset into class-disjoint train and test parts. The class list
/// is shuffled deterministically by the seed; the first
/// `floor(fraction * C)` classes go to train. Row order within each part
/// follows the original dataset.
pub fn zero_shot_split(
    dataset: &Dataset,
    train_class_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let classes: Vec<i64> = dataset.class_index().keys().copied().collect();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses {
            available: classes.len(),
        });
    }
    if !(train_class_fraction > 0.0 && train_class_fraction.is_finite()) {
        return Err(Error::InvalidParams {
            context: format!("train_class_fraction must be positive, got {train_class_fraction}"),
        });
    }
    let n_train = (classes.len() as f64 * train_class_fraction + 1e-9).floor() as usize;
    if n_train == 0 || n_train >= classes.len() {
        return Err(Error::InvalidParams {
            context: format!(
                "fraction {train_class_fraction} leaves {} train and {} test classes; both sides need at least one",
                n_train,
                classes.len() - n_train
            ),
        });
    }
    let mut shuffled = classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..shuffled.len()).rev() {
        let j = rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let train_classes: std::collections::BTreeSet<i64> =
        shuffled[..n_train].iter().copied().collect();
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (i, label) in dataset.labels().iter().enumerate() {
        if train_classes.contains(label) {
            train_rows.push(i);
        } else {
            test_rows.push(i);
        }
    }
    Ok((dataset.subset(&train_rows), dataset.subset(&test_rows)))
}
