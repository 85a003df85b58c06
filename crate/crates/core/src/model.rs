//! Small MLP embedder with explicit forward/backward passes, optional
//! multi-level head fusion, Adam, and checkpoint serialization.
//!
//! The trunk is a stack of linear layers with a rectifier between them. One
//! projection head sits on the last trunk activation; with fusion enabled
//! every trunk layer gets a head and the embedding is their concatenation.

use std::io::{self, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Width of the input features. May be left 0 in config files and filled
    /// in from the dataset before use.
    #[serde(default)]
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    #[serde(default)]
    pub fusion: bool,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig {
                field: "model.input_dim".into(),
                message: "must be >= 1 (or inferred from the dataset)".into(),
            });
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig {
                field: "model.hidden_dims".into(),
                message: "need at least one nonzero hidden width".into(),
            });
        }
        if self.embed_dim == 0 {
            return Err(Error::InvalidConfig {
                field: "model.embed_dim".into(),
                message: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// One linear layer: `out x in` weight, `out` bias, and a per-layer learning
/// rate multiplier (new heads can train faster than the trunk).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub lr_scale: f64,
}

impl LayerParams {
    fn init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut weight = Mat::zeros(out_dim, in_dim);
        for v in weight.data_mut() {
            *v = rng.gen_range(-limit..limit);
        }
        let bias = (0..out_dim).map(|_| rng.gen_range(-limit..limit)).collect();
        LayerParams {
            weight,
            bias,
            lr_scale: 1.0,
        }
    }

    fn num_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpEmbedder {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub fusion: bool,
    pub seed: u64,
    pub trunk: Vec<LayerParams>,
    pub heads: Vec<LayerParams>,
}

/// Activations saved by [`MlpEmbedder::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Mat,
    pre_acts: Vec<Mat>,
    acts: Vec<Mat>,
}

/// Parameter gradients mirroring the model layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub trunk: Vec<LayerGrads>,
    pub heads: Vec<LayerGrads>,
}

impl ModelGrads {
    pub fn zero_trunk(&mut self) {
        for g in &mut self.trunk {
            g.weight.scale(0.0);
            for b in &mut g.bias {
                *b = 0.0;
            }
        }
    }

    /// Parameter-tensor slices in the canonical order (trunk then heads,
    /// weight then bias per layer).
    pub fn tensor_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in self.trunk.iter().chain(&self.heads) {
            out.push(g.weight.data());
            out.push(g.bias.as_slice());
        }
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensor_slices().concat()
    }
}

fn relu(m: &Mat) -> Mat {
    let mut out = m.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

fn linear(inputs: &Mat, layer: &LayerParams) -> Mat {
    let mut out = inputs.dot_t(&layer.weight);
    for i in 0..out.rows() {
        for (v, b) in out.row_mut(i).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    out
}

impl MlpEmbedder {
    pub fn new(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut trunk = Vec::with_capacity(config.hidden_dims.len());
        let mut in_dim = config.input_dim;
        for &width in &config.hidden_dims {
            trunk.push(LayerParams::init(width, in_dim, &mut rng));
            in_dim = width;
        }
        let heads = if config.fusion {
            config
                .hidden_dims
                .iter()
                .map(|&w| LayerParams::init(config.embed_dim, w, &mut rng))
                .collect()
        } else {
            vec![LayerParams::init(
                config.embed_dim,
                *config.hidden_dims.last().unwrap(),
                &mut rng,
            )]
        };
        Ok(MlpEmbedder {
            input_dim: config.input_dim,
            embed_dim: config.embed_dim,
            fusion: config.fusion,
            seed: config.seed,
            trunk,
            heads,
        })
    }

    /// Width of the raw embedding: `heads * embed_dim` under fusion.
    pub fn output_dim(&self) -> usize {
        self.heads.len() * self.embed_dim
    }

    pub fn num_params(&self) -> usize {
        self.trunk
            .iter()
            .chain(&self.heads)
            .map(LayerParams::num_params)
            .sum()
    }

    /// Trunk layer index feeding head `hi`.
    fn head_source(&self, hi: usize) -> usize {
        if self.fusion {
            hi
        } else {
            self.trunk.len() - 1
        }
    }

    pub fn forward(&self, inputs: &Mat) -> Result<(Mat, ForwardCache)> {
        if inputs.cols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "forward: inputs have width {}, model expects {}",
                    inputs.cols(),
                    self.input_dim
                ),
            });
        }
        let mut pre_acts = Vec::with_capacity(self.trunk.len());
        let mut acts = Vec::with_capacity(self.trunk.len());
        let mut h = inputs.clone();
        for layer in &self.trunk {
            let a = linear(&h, layer);
            h = relu(&a);
            pre_acts.push(a);
            acts.push(h.clone());
        }
        let mut raw = Mat::zeros(inputs.rows(), self.output_dim());
        for (hi, head) in self.heads.iter().enumerate() {
            let projected = linear(&acts[self.head_source(hi)], head);
            raw.copy_cols_from(&projected, hi * self.embed_dim);
        }
        Ok((
            raw,
            ForwardCache {
                inputs: inputs.clone(),
                pre_acts,
                acts,
            },
        ))
    }

    /// Exact reverse-mode gradients for all parameters given the gradient of
    /// the loss with respect to the raw embeddings.
    pub fn backward(&self, cache: &ForwardCache, grad_raw: &Mat) -> Result<ModelGrads> {
        if cache.acts.len() != self.trunk.len() || cache.inputs.cols() != self.input_dim {
            return Err(Error::CacheMismatch {
                context: "forward cache does not belong to this model".into(),
            });
        }
        let batch = cache.inputs.rows();
        if grad_raw.shape() != (batch, self.output_dim()) {
            return Err(Error::CacheMismatch {
                context: format!(
                    "grad has shape {:?}, expected ({batch}, {})",
                    grad_raw.shape(),
                    self.output_dim()
                ),
            });
        }
        let mut d_acts: Vec<Mat> = cache
            .acts
            .iter()
            .map(|a| Mat::zeros(a.rows(), a.cols()))
            .collect();
        let mut head_grads = Vec::with_capacity(self.heads.len());
        for (hi, head) in self.heads.iter().enumerate() {
            let src = self.head_source(hi);
            let g = grad_raw.col_slice(hi * self.embed_dim, self.embed_dim);
            head_grads.push(LayerGrads {
                weight: g.t_dot(&cache.acts[src]),
                bias: g.col_sums(),
            });
            d_acts[src].add_assign(&g.dot(&head.weight));
        }
        let mut trunk_grads: Vec<Option<LayerGrads>> = vec![None; self.trunk.len()];
        for t in (0..self.trunk.len()).rev() {
            // rectifier subgradient: zero at and below the kink
            let mut da = d_acts[t].clone();
            let pre = &cache.pre_acts[t];
            for i in 0..da.rows() {
                let row = da.row_mut(i);
                let pre_row = pre.row(i);
                for (v, &p) in row.iter_mut().zip(pre_row) {
                    if p <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            let layer_input = if t == 0 {
                &cache.inputs
            } else {
                &cache.acts[t - 1]
            };
            trunk_grads[t] = Some(LayerGrads {
                weight: da.t_dot(layer_input),
                bias: da.col_sums(),
            });
            if t > 0 {
                let upstream = da.dot(&self.trunk[t].weight);
                d_acts[t - 1].add_assign(&upstream);
            }
        }
        Ok(ModelGrads {
            trunk: trunk_grads.into_iter().map(Option::unwrap).collect(),
            heads: head_grads,
        })
    }

    /// Mutable slices over every parameter tensor with its lr multiplier, in
    /// the canonical order (trunk then heads, weight then bias).
    pub fn param_slices_mut(&mut self) -> Vec<(&mut [f64], f64)> {
        let mut out = Vec::new();
        for layer in self.trunk.iter_mut().chain(self.heads.iter_mut()) {
            let LayerParams {
                weight,
                bias,
                lr_scale,
            } = layer;
            let scale = *lr_scale;
            out.push((weight.data_mut(), scale));
            out.push((bias.as_mut_slice(), scale));
        }
        out
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in self.trunk.iter().chain(&self.heads) {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "set_flat_params: {} values for {} parameters",
                    params.len(),
                    self.num_params()
                ),
            });
        }
        let mut offset = 0;
        for (slice, _) in self.param_slices_mut() {
            slice.copy_from_slice(&params[offset..offset + slice.len()]);
            offset += slice.len();
        }
        Ok(())
    }
}

/// Adam with bias correction; moment buffers mirror the parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &MlpEmbedder, lr: f64) -> Self {
        let sizes: Vec<usize> = model
            .trunk
            .iter()
            .chain(&model.heads)
            .flat_map(|l| {
                [
                    l.weight.rows() * l.weight.cols(),
                    l.bias.len(),
                ]
            })
            .collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// One Adam update over every parameter tensor.
    pub fn step(&mut self, model: &mut MlpEmbedder, grads: &ModelGrads) -> Result<()> {
        let grad_slices = grads.tensor_slices();
        let param_slices = model.param_slices_mut();
        if grad_slices.len() != param_slices.len() || grad_slices.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                context: "adam_step: gradients do not mirror the model".into(),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (ti, (params, lr_scale)) in param_slices.into_iter().enumerate() {
            let grad = grad_slices[ti];
            if grad.len() != params.len() {
                return Err(Error::ShapeMismatch {
                    context: format!("adam_step: tensor {ti} size mismatch"),
                });
            }
            let lr = self.lr * lr_scale;
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for i in 0..params.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Central finite differences of `f` at `x`: `(f(x+h) - f(x-h)) / 2h` per
/// coordinate. The verification oracle used throughout the test suites.
pub fn finite_diff_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite differences need h > 0");
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

// --- checkpoint serialization -------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointLayer {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    lr_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    input_dim: usize,
    embed_dim: usize,
    fusion: bool,
    seed: u64,
    trunk: Vec<CheckpointLayer>,
    heads: Vec<CheckpointLayer>,
}

fn layer_to_checkpoint(layer: &LayerParams) -> CheckpointLayer {
    CheckpointLayer {
        rows: layer.weight.rows(),
        cols: layer.weight.cols(),
        weight: layer.weight.data().to_vec(),
        bias: layer.bias.clone(),
        lr_scale: layer.lr_scale,
    }
}

fn layer_from_checkpoint(layer: CheckpointLayer) -> Result<LayerParams> {
    if layer.weight.len() != layer.rows * layer.cols || layer.bias.len() != layer.rows {
        return Err(Error::ShapeMismatch {
            context: "checkpoint layer dimensions are inconsistent".into(),
        });
    }
    Ok(LayerParams {
        weight: Mat::from_vec(layer.rows, layer.cols, layer.weight),
        bias: layer.bias,
        lr_scale: layer.lr_scale,
    })
}

/// JSON formatter that writes every f64 with 17 significant digits so
/// checkpoints round-trip bit-exactly and byte-identically across runs.
struct SciFloatFormatter;

impl serde_json::ser::Formatter for SciFloatFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

pub fn save_checkpoint<W: Write>(model: &MlpEmbedder, writer: W) -> Result<()> {
    let file = CheckpointFile {
        input_dim: model.input_dim,
        embed_dim: model.embed_dim,
        fusion: model.fusion,
        seed: model.seed,
        trunk: model.trunk.iter().map(layer_to_checkpoint).collect(),
        heads: model.heads.iter().map(layer_to_checkpoint).collect(),
    };
    let mut ser = serde_json::Serializer::with_formatter(writer, SciFloatFormatter);
    file.serialize(&mut ser).map_err(|e| Error::Io {
        context: format!("writing checkpoint: {e}"),
    })
}

pub fn load_checkpoint<R: Read>(reader: R) -> Result<MlpEmbedder> {
    let file: CheckpointFile = serde_json::from_reader(reader).map_err(|e| Error::Parse {
        line: 0,
        message: format!("checkpoint: {e}"),
    })?;
    let trunk: Result<Vec<LayerParams>> =
        file.trunk.into_iter().map(layer_from_checkpoint).collect();
    let heads: Result<Vec<LayerParams>> =
        file.heads.into_iter().map(layer_from_checkpoint).collect();
    let trunk = trunk?;
    let heads = heads?;
    if trunk.is_empty() || heads.is_empty() {
        return Err(Error::ShapeMismatch {
            context: "checkpoint has no layers".into(),
        });
    }
    Ok(MlpEmbedder {
        input_dim: file.input_dim,
        embed_dim: file.embed_dim,
        fusion: file.fusion,
        seed: file.seed,
        trunk,
        heads,
    })
}

pub fn save_checkpoint_file(model: &MlpEmbedder, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io {
        context: format!("creating {}: {e}", path.display()),
    })?;
    save_checkpoint(model, io::BufWriter::new(file))
}

pub fn load_checkpoint_file(path: &Path) -> Result<MlpEmbedder> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        context: format!("opening {}: {e}", path.display()),
    })?;
    load_checkpoint(io::BufReader::new(file))
}
