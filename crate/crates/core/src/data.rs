//! Synthetic benchmark generation and CSV dataset ingestion.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Feature rows with integer class labels, plus a label -> rows index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Mat,
    labels: Vec<i64>,
    class_index: BTreeMap<i64, Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Mat, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "{} labels for {} feature rows",
                    labels.len(),
                    features.rows()
                ),
            });
        }
        let mut class_index: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &label) in labels.iter().enumerate() {
            class_index.entry(label).or_default().push(i);
        }
        Ok(Dataset {
            features,
            labels,
            class_index,
        })
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn class_index(&self) -> &BTreeMap<i64, Vec<usize>> {
        &self.class_index
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    /// Gather rows into a new dataset, preserving the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Mat::zeros(indices.len(), self.input_dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &idx) in indices.iter().enumerate() {
            features.row_mut(row).copy_from_slice(self.features.row(idx));
            labels.push(self.labels[idx]);
        }
        Dataset::new(features, labels).expect("subset preserves label/row alignment")
    }

    /// Feature rows for a batch of indices.
    pub fn gather_features(&self, indices: &[usize]) -> Mat {
        let mut out = Mat::zeros(indices.len(), self.input_dim());
        for (row, &idx) in indices.iter().enumerate() {
            out.row_mut(row).copy_from_slice(self.features.row(idx));
        }
        out
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<i64> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Gaussian blobs: class centers drawn uniformly in
/// `[-center_scale, center_scale]^d`, points = center + N(0, sigma^2) noise.
/// Labels are `0..num_classes`, rows class-major. Deterministic in the seed.
pub fn gen_synthetic_clusters(
    num_classes: usize,
    per_class: usize,
    input_dim: usize,
    center_scale: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidParams {
            context: format!("need at least 2 classes, got {num_classes}"),
        });
    }
    if per_class < 2 {
        return Err(Error::InvalidParams {
            context: format!("need at least 2 samples per class, got {per_class}"),
        });
    }
    if input_dim == 0 {
        return Err(Error::InvalidParams {
            context: "input_dim must be >= 1".into(),
        });
    }
    if !(center_scale > 0.0 && center_scale.is_finite()) {
        return Err(Error::InvalidParams {
            context: format!("center_scale must be positive and finite, got {center_scale}"),
        });
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParams {
            context: format!("noise_sigma must be nonnegative and finite, got {noise_sigma}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Mat::zeros(num_classes, input_dim);
    for v in centers.data_mut() {
        *v = rng.gen_range(-center_scale..center_scale);
    }
    let noise = Normal::new(0.0, noise_sigma).expect("validated sigma");
    let mut features = Mat::zeros(num_classes * per_class, input_dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        for s in 0..per_class {
            let row = features.row_mut(c * per_class + s);
            for (v, &center) in row.iter_mut().zip(centers.row(c)) {
                *v = center + noise.sample(&mut rng);
            }
            labels.push(c as i64);
        }
    }
    Dataset::new(features, labels)
}

/// Load a `label,f1,...,fd` CSV. A header row is detected by a non-numeric
/// first cell and skipped. Every data row must have the same width.
pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        context: format!("opening {}: {e}", path.display()),
    })?;
    let reader = BufReader::new(file);
    let mut labels = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Io {
            context: format!("reading {}: {e}", path.display()),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if labels.is_empty() && width.is_none() && cells[0].trim().parse::<i64>().is_err() {
            // header row
            continue;
        }
        let label: i64 = cells[0].trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("label `{}` is not an integer", cells[0].trim()),
        })?;
        let feat_width = cells.len() - 1;
        if feat_width == 0 {
            return Err(Error::Parse {
                line: lineno,
                message: "row has a label but no features".into(),
            });
        }
        match width {
            None => width = Some(feat_width),
            Some(w) if w != feat_width => {
                return Err(Error::RaggedRow {
                    line: lineno,
                    expected: w,
                    got: feat_width,
                });
            }
            _ => {}
        }
        labels.push(label);
        for cell in &cells[1..] {
            values.push(cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("feature `{}` is not a number", cell.trim()),
            })?);
        }
    }
    let width = width.ok_or(Error::Parse {
        line: 0,
        message: "no data rows".into(),
    })?;
    Dataset::new(Mat::from_vec(labels.len(), width, values), labels)
}

/// Write a dataset as `label,f1,...,fd` CSV with a header row. Features use
/// the shortest round-trip decimal form, so save -> load is exact.
pub fn save_csv_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io {
        context: format!("creating {}: {e}", path.display()),
    })?;
    let mut out = BufWriter::new(file);
    write_dataset_csv(dataset, &mut out)?;
    out.flush()?;
    Ok(())
}

fn write_dataset_csv<W: Write>(dataset: &Dataset, out: &mut W) -> Result<()> {
    write!(out, "label")?;
    for j in 1..=dataset.input_dim() {
        write!(out, ",f{j}")?;
    }
    writeln!(out)?;
    for i in 0..dataset.len() {
        write!(out, "{}", dataset.labels()[i])?;
        for v in dataset.features().row(i) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Export embeddings as `label,e1,...,ed` CSV.
pub fn write_embeddings_csv<W: Write>(
    out: &mut W,
    embeddings: &Mat,
    labels: &[i64],
) -> Result<()> {
    if labels.len() != embeddings.rows() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "{} labels for {} embedding rows",
                labels.len(),
                embeddings.rows()
            ),
        });
    }
    write!(out, "label")?;
    for j in 1..=embeddings.cols() {
        write!(out, ",e{j}")?;
    }
    writeln!(out)?;
    for i in 0..embeddings.rows() {
        write!(out, "{}", labels[i])?;
        for v in embeddings.row(i) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
