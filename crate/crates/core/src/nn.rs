//! Dense matrices and a ReLU multi-layer perceptron with hand-derived
//! gradients for mean softmax cross-entropy.
//!
//! Parameter layout (shared by gradients, importance estimates and the
//! consolidation matrix): for each layer `l` in order, the weight matrix
//! `W_l` (shape `dims[l] x dims[l+1]`, row-major) followed by the bias
//! vector `b_l` (length `dims[l+1]`).

use std::ops::{Deref, DerefMut};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Error::check_len("matrix values", rows * cols, values.len())?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix values",
                index,
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        Error::check_len("matmul inner dimension", self.cols, other.rows)?;
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            Operand::plain(&self.values, self.cols),
            Operand::plain(&other.values, other.cols),
            &mut out.values,
            0.0,
        );
        Ok(out)
    }
}

/// Strided view of a row-major buffer, optionally transposed.
#[derive(Clone, Copy)]
struct Operand<'a> {
    data: &'a [f64],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Operand<'a> {
    fn plain(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `c = a (m x k) * b (k x n) + beta * c`, with `c` row-major `m x n`.
fn gemm(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, c: &mut [f64], beta: f64) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the operands describe in-bounds strided views: for every
    // (i, p) with i < m, p < k the offset i*rs + p*cs lies inside `a.data`,
    // and likewise for `b` and `c`. All callers build them from buffers of
    // exactly these shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Flat parameter-shaped vector: parameters, gradients, importance, consolidation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Largest absolute entry; 0 for an empty vector.
    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// A mini-batch of normalized features and class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        Error::check_len("batch labels", features.rows(), labels.len())?;
        check_labels(&labels, num_classes)?;
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= num_classes) {
        Some(&label) => Err(Error::InvalidLabel { label, num_classes }),
        None => Ok(()),
    }
}

/// Fully connected network with ReLU on every hidden layer and linear logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<DenseMatrix>,
    biases: Vec<Vec<f64>>,
}

impl MlpModel {
    /// All-zero model with the given layer widths `[input, hidden..., output]`.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| DenseMatrix::zeros(w[0], w[1]))
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(layer_dims: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        for w in &mut model.weights {
            let limit = (6.0 / (w.rows + w.cols) as f64).sqrt();
            for v in &mut w.values {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    pub fn weight(&self, layer: usize) -> &DenseMatrix {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.layer_dims)
    }

    pub fn flatten(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(&w.values);
            out.extend_from_slice(b);
        }
        ParamVector(out)
    }

    pub fn unflatten(layer_dims: &[usize], params: &ParamVector) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        model.load_params(params)?;
        Ok(model)
    }

    /// Overwrite every parameter from a flat vector in the documented layout.
    pub fn load_params(&mut self, params: &[f64]) -> Result<()> {
        Error::check_len("parameter vector", self.param_count(), params.len())?;
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.values.len();
            w.values.copy_from_slice(&params[offset..offset + n]);
            offset += n;
            let m = b.len();
            b.copy_from_slice(&params[offset..offset + m]);
            offset += m;
        }
        Ok(())
    }

    pub fn forward(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        Error::check_len("input features", self.input_dim(), features.cols())?;
        let mut act = features.clone();
        for layer in 0..self.num_layers() {
            let mut z = self.affine(layer, &act);
            if layer + 1 < self.num_layers() {
                relu_in_place(&mut z.values);
            }
            act = z;
        }
        if let Some(index) = act.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "logits",
                index,
            });
        }
        Ok(act)
    }

    /// Argmax class per row.
    pub fn predict(&self, features: &DenseMatrix) -> Result<Vec<usize>> {
        let logits = self.forward(features)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    /// Mean cross-entropy loss and its gradient in the flat parameter layout.
    pub fn backward(&self, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.check_batch(batch)?;
        let trace = self.trace(&batch.features);
        let logits = trace.last().expect("at least one layer");
        let loss = loss(logits, &batch.labels)?;
        let scale = 1.0 / batch.len() as f64;
        let mut delta = softmax_minus_onehot(logits, &batch.labels, scale);
        let mut grad = ParamVector::zeros(self.param_count());
        self.backpropagate(&batch.features, &trace, &mut delta, &mut grad, false);
        Ok((loss, grad))
    }

    /// Sum over samples of the elementwise-squared per-sample gradient.
    ///
    /// For a dense layer the per-sample weight gradient is the outer product
    /// `a_i ⊗ δ_i`, so its square sums to `(a²)ᵀ (δ²)`, which lets the whole
    /// batch go through one matrix product per layer.
    pub fn per_sample_sq_grad_sum(&self, batch: &Batch) -> Result<ParamVector> {
        self.check_batch(batch)?;
        let trace = self.trace(&batch.features);
        let logits = trace.last().expect("at least one layer");
        let mut delta = softmax_minus_onehot(logits, &batch.labels, 1.0);
        let mut out = ParamVector::zeros(self.param_count());
        self.backpropagate(&batch.features, &trace, &mut delta, &mut out, true);
        Ok(out)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        Error::check_len("input features", self.input_dim(), batch.features.cols())?;
        Error::check_len("batch labels", batch.features.rows(), batch.labels.len())?;
        check_labels(&batch.labels, self.num_classes())
    }

    fn affine(&self, layer: usize, input: &DenseMatrix) -> DenseMatrix {
        let w = &self.weights[layer];
        let b = &self.biases[layer];
        let mut z = DenseMatrix::zeros(input.rows, w.cols);
        for row in z.values.chunks_exact_mut(w.cols) {
            row.copy_from_slice(b);
        }
        gemm(
            input.rows,
            input.cols,
            w.cols,
            Operand::plain(&input.values, input.cols),
            Operand::plain(&w.values, w.cols),
            &mut z.values,
            1.0,
        );
        z
    }

    /// Pre-activations of every layer; the last entry is the logits.
    fn trace(&self, features: &DenseMatrix) -> Vec<DenseMatrix> {
        let mut zs: Vec<DenseMatrix> = Vec::with_capacity(self.num_layers());
        for layer in 0..self.num_layers() {
            let z = match zs.last() {
                None => self.affine(layer, features),
                Some(prev) => {
                    let mut a = prev.clone();
                    relu_in_place(&mut a.values);
                    self.affine(layer, &a)
                }
            };
            zs.push(z);
        }
        zs
    }

    fn backpropagate(
        &self,
        features: &DenseMatrix,
        trace: &[DenseMatrix],
        delta: &mut DenseMatrix,
        out: &mut ParamVector,
        squared: bool,
    ) {
        let offsets = layer_offsets(&self.layer_dims);
        let rows = features.rows;
        for layer in (0..self.num_layers()).rev() {
            let w = &self.weights[layer];
            let (fan_in, fan_out) = (w.rows, w.cols);
            let mut input = match layer {
                0 => features.clone(),
                _ => {
                    let mut a = trace[layer - 1].clone();
                    relu_in_place(&mut a.values);
                    a
                }
            };
            let delta_for_grad = if squared {
                input.values.iter_mut().for_each(|v| *v *= *v);
                DenseMatrix {
                    rows,
                    cols: fan_out,
                    values: delta.values.iter().map(|v| v * v).collect(),
                }
            } else {
                delta.clone()
            };

            let start = offsets[layer];
            let (w_grad, rest) = out[start..].split_at_mut(fan_in * fan_out);
            gemm(
                fan_in,
                rows,
                fan_out,
                Operand::transposed(&input.values, fan_in),
                Operand::plain(&delta_for_grad.values, fan_out),
                w_grad,
                0.0,
            );
            let b_grad = &mut rest[..fan_out];
            for row in delta_for_grad.values.chunks_exact(fan_out) {
                for (g, d) in b_grad.iter_mut().zip(row) {
                    *g += d;
                }
            }

            if layer > 0 {
                let mut prev = DenseMatrix::zeros(rows, fan_in);
                gemm(
                    rows,
                    fan_out,
                    fan_in,
                    Operand::plain(&delta.values, fan_out),
                    Operand::transposed(&w.values, fan_out),
                    &mut prev.values,
                    0.0,
                );
                // ReLU derivative, taking 0 at the kink.
                for (d, z) in prev.values.iter_mut().zip(&trace[layer - 1].values) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
                *delta = prev;
            }
        }
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an MLP needs at least input and output widths, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer widths must be positive, got {layer_dims:?}"
        )));
    }
    Ok(())
}

/// Number of parameters of an MLP with these widths.
pub fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Offset of each layer's weight block in the flat layout.
pub fn layer_offsets(layer_dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layer_dims.len().saturating_sub(1));
    let mut acc = 0;
    for w in layer_dims.windows(2) {
        offsets.push(acc);
        acc += w[0] * w[1] + w[1];
    }
    offsets
}

fn relu_in_place(values: &mut [f64]) {
    for v in values {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-row cross-entropy `logsumexp(z) - z_y`.
pub fn row_losses(logits: &DenseMatrix, labels: &[usize]) -> Result<Vec<f64>> {
    Error::check_len("loss labels", logits.rows(), labels.len())?;
    check_labels(labels, logits.cols())?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let row = logits.row(r);
            (log_sum_exp(row) - row[y]).max(0.0)
        })
        .collect())
}

/// Mean softmax cross-entropy over the rows of `logits`.
pub fn loss(logits: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset("loss over an empty batch"));
    }
    let losses = row_losses(logits, labels)?;
    Ok(losses.iter().sum::<f64>() / labels.len() as f64)
}

fn softmax_minus_onehot(logits: &DenseMatrix, labels: &[usize], scale: f64) -> DenseMatrix {
    let mut out = logits.clone();
    for (row, &y) in out.values.chunks_exact_mut(logits.cols).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    out
}
