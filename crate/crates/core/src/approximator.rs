//! Fully connected ReLU network with a shared trunk and a linear output layer that is
//! split into the three NAF heads: `V`, `μ` and the raw lower-triangular entries of `L`.
//!
//! All parameters live in one flat buffer so that Adam, Polyak averaging, gradient
//! checks and checkpoints are plain slice operations. Each layer stores its weight
//! matrix (`out × in`, column-major) followed by its bias.

use crate::numerics::{Matrix, Vector};
use crate::textfmt::{Block, TextDocument, TextError};
use nalgebra::DMatrixView;
use rand::Rng;
use thiserror::Error;

pub const CHECKPOINT_KIND: &str = "naf-mlp";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApproxError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] TextError),
}

/// Number of free entries in a `d × d` lower-triangular matrix.
pub fn tri_len(d: usize) -> usize {
    d * (d + 1) / 2
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub action_dim: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, action_dim: usize) -> Result<Self, ApproxError> {
        if input_dim == 0 || action_dim == 0 {
            return Err(ApproxError::Architecture(
                "input and action dimensions must be positive".into(),
            ));
        }
        if hidden.contains(&0) {
            return Err(ApproxError::Architecture("hidden layers must be non-empty".into()));
        }
        Ok(Self {
            input_dim,
            hidden,
            action_dim,
        })
    }

    /// `1 + d + d(d+1)/2` outputs: value, mean, raw triangle.
    pub fn output_dim(&self) -> usize {
        1 + self.action_dim + tri_len(self.action_dim)
    }

    /// `(out, in)` per layer, trunk first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.output_dim());
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// Per-state network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NafHeads {
    pub value: f64,
    pub mu: Vector,
    /// Raw entries of `L`, row-major lower triangle: (0,0), (1,0), (1,1), (2,0), ...
    pub l_entries: Vector,
}

impl NafHeads {
    fn from_output(col: &[f64], d: usize) -> Self {
        Self {
            value: col[0],
            mu: Vector::from_column_slice(&col[1..1 + d]),
            l_entries: Vector::from_column_slice(&col[1 + d..1 + d + tri_len(d)]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    weights: usize,
    bias: usize,
    rows: usize,
    cols: usize,
}

/// Intermediate values kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by every post-ReLU hidden activation; one column per sample.
    activations: Vec<Matrix>,
    /// Linear output layer, `output_dim × batch`.
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.param_count();
        Self {
            arch,
            params: vec![0.0; n],
        }
    }

    /// Uniform `±1/√fan_in` initialization; the output layer is additionally scaled by
    /// `head_scale` so the initial `P` is close to the identity and `μ` close to zero.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, head_scale: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        let layers = net.layers();
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            let bound = 1.0 / (l.cols as f64).sqrt();
            let scale = if i == last { head_scale } else { 1.0 };
            for v in &mut net.params[l.weights..l.bias + l.rows] {
                *v = scale * rng.random_range(-bound..=bound);
            }
        }
        net
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self, ApproxError> {
        if params.len() != arch.param_count() {
            return Err(ApproxError::Architecture(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> Vec<LayerOffsets> {
        let mut off = 0;
        self.arch
            .layer_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let l = LayerOffsets {
                    weights: off,
                    bias: off + rows * cols,
                    rows,
                    cols,
                };
                off += rows * cols + rows;
                l
            })
            .collect()
    }

    fn weights(&self, l: &LayerOffsets) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.params[l.weights..l.bias], l.rows, l.cols)
    }

    /// Batched forward pass; `inputs` holds one sample per column.
    pub fn forward_batch(&self, inputs: &Matrix) -> ForwardCache {
        assert_eq!(inputs.nrows(), self.arch.input_dim, "input dimension mismatch");
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut activations = Vec::with_capacity(layers.len());
        let mut current = inputs.clone();
        for (i, l) in layers.iter().enumerate() {
            let mut z = self.weights(l) * &current;
            let bias = &self.params[l.bias..l.bias + l.rows];
            for mut col in z.column_iter_mut() {
                for (v, b) in col.iter_mut().zip(bias) {
                    *v += b;
                }
            }
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            activations.push(current);
            current = z;
        }
        ForwardCache {
            activations,
            output: current,
        }
    }

    /// Backpropagates `d_output` (`output_dim × batch`) into a flat gradient.
    pub fn backward_batch(&self, cache: &ForwardCache, d_output: &Matrix) -> Vec<f64> {
        let layers = self.layers();
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = d_output.clone();
        for (i, l) in layers.iter().enumerate().rev() {
            let input = &cache.activations[i];
            let gw = &delta * input.transpose();
            grad[l.weights..l.bias].copy_from_slice(gw.as_slice());
            for (r, g) in grad[l.bias..l.bias + l.rows].iter_mut().enumerate() {
                *g = delta.row(r).sum();
            }
            if i > 0 {
                let mut back = self.weights(l).transpose() * &delta;
                // input[i] is the post-ReLU activation of layer i-1
                back.zip_apply(input, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        grad
    }

    /// Heads for a single feature vector.
    pub fn forward(&self, x: &Vector) -> NafHeads {
        let cache = self.forward_batch(&Matrix::from_column_slice(x.len(), 1, x.as_slice()));
        NafHeads::from_output(cache.output.column(0).as_slice(), self.arch.action_dim)
    }

    /// Splits column `j` of a batched output into heads.
    pub fn heads_of(&self, output: &Matrix, j: usize) -> NafHeads {
        NafHeads::from_output(output.column(j).as_slice(), self.arch.action_dim)
    }

    pub fn to_document(&self) -> TextDocument {
        let mut doc = TextDocument::new(CHECKPOINT_KIND);
        doc.push_meta("input_dim", [self.arch.input_dim]);
        doc.push_meta("hidden", self.arch.hidden.iter().copied());
        doc.push_meta("action_dim", [self.arch.action_dim]);
        doc.push_block(Block {
            name: "params".into(),
            rows: 1,
            cols: self.params.len(),
            values: self.params.clone(),
        });
        doc
    }

    pub fn from_document(doc: &TextDocument) -> Result<Self, ApproxError> {
        doc.expect_kind(CHECKPOINT_KIND)?;
        let arch = Architecture::new(
            doc.meta_usize("input_dim")?,
            doc.meta_usizes("hidden")?,
            doc.meta_usize("action_dim")?,
        )?;
        Self::from_params(arch, doc.block("params")?.values.clone())
    }

    pub fn save_string(&self) -> String {
        self.to_document().render()
    }

    pub fn load_str(text: &str) -> Result<Self, ApproxError> {
        Self::from_document(&TextDocument::parse(text)?)
    }
}

/// `target ← τ·source + (1 − τ)·target`, elementwise.
pub fn soft_update(target: &mut Mlp, source: &Mlp, tau: f64) {
    assert_eq!(target.arch, source.arch, "soft update between different architectures");
    for (t, s) in target.params.iter_mut().zip(&source.params) {
        *t = tau * s + (1.0 - tau) * *t;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
