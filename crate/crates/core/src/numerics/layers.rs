//! Forward and backward passes for the fixed layer set used by the classifier.
//!
//! Every layer exists in two forms: a pure `*_forward` function and an op
//! struct that caches what its backward pass needs. Calling `backward` on an
//! op that has not run `forward` yields [`Error::State`].

use super::rng::Rng;
use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
    Softmax,
    Identity,
}

impl Activation {
    /// Applies the activation in place; softmax acts on each row of width `width`.
    fn apply(self, data: &mut [f64], width: usize) {
        match self {
            Activation::Identity => {}
            Activation::Relu => data.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Sigmoid => data.iter_mut().for_each(|x| *x = sigmoid(*x)),
            Activation::Softmax => data.chunks_mut(width).for_each(softmax_in_place),
        }
    }

    /// Gradient w.r.t. the pre-activation given the activation output and
    /// the gradient w.r.t. that output.
    fn backprop(self, output: &[f64], upstream: &[f64], width: usize) -> Vec<f64> {
        match self {
            Activation::Identity => upstream.to_vec(),
            Activation::Relu => output
                .iter()
                .zip(upstream)
                .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Sigmoid => output
                .iter()
                .zip(upstream)
                .map(|(&y, &g)| g * y * (1.0 - y))
                .collect(),
            Activation::Softmax => {
                let mut out = Vec::with_capacity(output.len());
                for (y, g) in output.chunks(width).zip(upstream.chunks(width)) {
                    let s = dot(y, g);
                    out.extend(y.iter().zip(g).map(|(&yi, &gi)| yi * (gi - s)));
                }
                out
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Gradients produced by one backward call.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    /// One tensor per parameter, same order and shape as the layer's parameters.
    pub params: Vec<Tensor>,
    /// Gradient w.r.t. the layer input; `None` for integer inputs (embedding).
    pub input: Option<Tensor>,
}

fn output_shape(input: &Tensor, width: usize) -> Vec<usize> {
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = width;
    shape
}

// ---------------------------------------------------------------------------
// Dense

/// `activation(input · weights + bias)` applied row-wise over the last axis.
pub fn dense_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Result<Tensor> {
    if weights.shape().len() != 2 || input.last_dim() != weights.shape()[0] {
        return Err(Error::Dimension(format!(
            "dense input {:?} does not conform with weights {:?}",
            input.shape(),
            weights.shape()
        )));
    }
    let n_out = weights.shape()[1];
    if bias.len() != n_out {
        return Err(Error::Dimension(format!(
            "dense bias {:?} does not match weights {:?}",
            bias.shape(),
            weights.shape()
        )));
    }
    let rows = input.rows();
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        let mut acc = bias.data().to_vec();
        for (i, &x) in input.row(r).iter().enumerate() {
            if x != 0.0 {
                axpy(x, &weights.data()[i * n_out..(i + 1) * n_out], &mut acc);
            }
        }
        out.extend_from_slice(&acc);
    }
    activation.apply(&mut out, n_out);
    Tensor::new(output_shape(input, n_out), out)
}

#[derive(Debug, Clone)]
struct Cache {
    input: Tensor,
    output: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseOp {
    activation: Activation,
    cache: Option<Cache>,
}

impl DenseOp {
    pub fn new(activation: Activation) -> Self {
        DenseOp {
            activation,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let output = dense_forward(input, weights, bias, self.activation)?;
        self.cache = Some(Cache {
            input: input.clone(),
            output: output.clone(),
        });
        Ok(output)
    }

    /// Returns grads `[weights, bias]` and the input gradient.
    pub fn backward(&self, weights: &Tensor, upstream: &Tensor) -> Result<LayerGrads> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("dense backward before forward".into()))?;
        if !upstream.same_shape(&cache.output) {
            return Err(Error::Dimension(format!(
                "dense upstream {:?} vs output {:?}",
                upstream.shape(),
                cache.output.shape()
            )));
        }
        let (n_in, n_out) = (weights.shape()[0], weights.shape()[1]);
        let delta = self
            .activation
            .backprop(cache.output.data(), upstream.data(), n_out);
        let mut dw = Tensor::zeros(&[n_in, n_out]);
        let mut db = Tensor::zeros(&[n_out]);
        let mut dx = Tensor::zeros(cache.input.shape());
        for r in 0..cache.input.rows() {
            let d = &delta[r * n_out..(r + 1) * n_out];
            axpy(1.0, d, db.data_mut());
            let x = cache.input.row(r);
            for (i, &xi) in x.iter().enumerate() {
                axpy(xi, d, &mut dw.data_mut()[i * n_out..(i + 1) * n_out]);
                dx.data_mut()[r * n_in + i] = dot(&weights.data()[i * n_out..(i + 1) * n_out], d);
            }
        }
        Ok(LayerGrads {
            params: vec![dw, db],
            input: Some(dx),
        })
    }
}

// ---------------------------------------------------------------------------
// Conv1d

fn conv_dims(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if input.shape().len() != 2 || kernels.shape().len() != 3 {
        return Err(Error::Dimension(format!(
            "conv1d expects input [length × channels] and kernels [width × channels × filters], got {:?} and {:?}",
            input.shape(),
            kernels.shape()
        )));
    }
    let (length, channels) = (input.shape()[0], input.shape()[1]);
    let (width, k_channels, filters) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    if k_channels != channels {
        return Err(Error::Dimension(format!(
            "conv1d input {:?} has {channels} channels but kernels {:?} expect {k_channels}",
            input.shape(),
            kernels.shape()
        )));
    }
    if width > length {
        return Err(Error::Dimension(format!(
            "conv1d kernel width {width} exceeds input length {length}"
        )));
    }
    if bias.len() != filters {
        return Err(Error::Dimension(format!(
            "conv1d bias {:?} does not match {filters} filters",
            bias.shape()
        )));
    }
    Ok((length, channels, width, filters))
}

/// Valid-mode 1-D convolution over token positions.
pub fn conv1d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Result<Tensor> {
    let (length, channels, width, filters) = conv_dims(input, kernels, bias)?;
    let out_len = length - width + 1;
    let x = input.data();
    let k = kernels.data();
    let mut out = Vec::with_capacity(out_len * filters);
    for t in 0..out_len {
        let mut acc = bias.data().to_vec();
        // the window [t, t+width) is contiguous in both input and kernel
        let window = &x[t * channels..(t + width) * channels];
        for (idx, &xv) in window.iter().enumerate() {
            if xv != 0.0 {
                axpy(xv, &k[idx * filters..(idx + 1) * filters], &mut acc);
            }
        }
        out.extend_from_slice(&acc);
    }
    activation.apply(&mut out, filters);
    Tensor::new(vec![out_len, filters], out)
}

#[derive(Debug, Clone)]
pub struct Conv1dOp {
    activation: Activation,
    cache: Option<Cache>,
}

impl Conv1dOp {
    pub fn new(activation: Activation) -> Self {
        Conv1dOp {
            activation,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let output = conv1d_forward(input, kernels, bias, self.activation)?;
        self.cache = Some(Cache {
            input: input.clone(),
            output: output.clone(),
        });
        Ok(output)
    }

    /// Returns grads `[kernels, bias]` and the input gradient.
    pub fn backward(&self, kernels: &Tensor, upstream: &Tensor) -> Result<LayerGrads> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("conv1d backward before forward".into()))?;
        if !upstream.same_shape(&cache.output) {
            return Err(Error::Dimension(format!(
                "conv1d upstream {:?} vs output {:?}",
                upstream.shape(),
                cache.output.shape()
            )));
        }
        let channels = cache.input.shape()[1];
        let (width, filters) = (kernels.shape()[0], kernels.shape()[2]);
        let out_len = cache.output.shape()[0];
        let delta = self
            .activation
            .backprop(cache.output.data(), upstream.data(), filters);
        let x = cache.input.data();
        let k = kernels.data();
        let mut dk = Tensor::zeros(kernels.shape());
        let mut db = Tensor::zeros(&[filters]);
        let mut dx = Tensor::zeros(cache.input.shape());
        for t in 0..out_len {
            let d = &delta[t * filters..(t + 1) * filters];
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            axpy(1.0, d, db.data_mut());
            let base = t * channels;
            for idx in 0..width * channels {
                let row = idx * filters..(idx + 1) * filters;
                let xv = x[base + idx];
                if xv != 0.0 {
                    axpy(xv, d, &mut dk.data_mut()[row.clone()]);
                }
                dx.data_mut()[base + idx] += dot(&k[row], d);
            }
        }
        Ok(LayerGrads {
            params: vec![dk, db],
            input: Some(dx),
        })
    }
}

// ---------------------------------------------------------------------------
// MaxPool1d

/// Max over consecutive windows of `pool_width` positions, per filter.
///
/// A final window shorter than `pool_width` is pooled as-is, so any input
/// length is accepted. Returns the pooled tensor and, for every output
/// entry, the flat input index that produced it.
pub fn maxpool1d_forward(input: &Tensor, pool_width: usize) -> Result<(Tensor, Vec<usize>)> {
    if pool_width == 0 {
        return Err(Error::Argument("pool width must be positive".into()));
    }
    let (length, filters) = match input.shape() {
        [l, f] => (*l, *f),
        [l] => (*l, 1),
        s => {
            return Err(Error::Dimension(format!(
                "maxpool1d expects [length × filters], got {s:?}"
            )))
        }
    };
    let out_len = length.div_ceil(pool_width);
    let x = input.data();
    let mut out = Vec::with_capacity(out_len * filters);
    let mut argmax = Vec::with_capacity(out_len * filters);
    for w in 0..out_len {
        let start = w * pool_width;
        let end = (start + pool_width).min(length);
        for f in 0..filters {
            let mut best = start * filters + f;
            for t in start + 1..end {
                let idx = t * filters + f;
                if x[idx] > x[best] {
                    best = idx;
                }
            }
            out.push(x[best]);
            argmax.push(best);
        }
    }
    let shape = if input.shape().len() == 1 {
        vec![out_len]
    } else {
        vec![out_len, filters]
    };
    Ok((Tensor::new(shape, out)?, argmax))
}

#[derive(Debug, Clone)]
pub struct MaxPool1dOp {
    pool_width: usize,
    cache: Option<(Vec<usize>, Vec<usize>, Vec<usize>)>,
}

impl MaxPool1dOp {
    pub fn new(pool_width: usize) -> Self {
        MaxPool1dOp {
            pool_width,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (out, argmax) = maxpool1d_forward(input, self.pool_width)?;
        self.cache = Some((input.shape().to_vec(), out.shape().to_vec(), argmax));
        Ok(out)
    }

    /// No parameters; routes the upstream gradient to the argmax positions.
    pub fn backward(&self, upstream: &Tensor) -> Result<LayerGrads> {
        let (in_shape, out_shape, argmax) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("maxpool1d backward before forward".into()))?;
        if upstream.shape() != out_shape.as_slice() {
            return Err(Error::Dimension(format!(
                "maxpool1d upstream {:?} vs output {:?}",
                upstream.shape(),
                out_shape
            )));
        }
        let mut dx = Tensor::zeros(in_shape);
        for (&src, &g) in argmax.iter().zip(upstream.data()) {
            dx.data_mut()[src] += g;
        }
        Ok(LayerGrads {
            params: vec![],
            input: Some(dx),
        })
    }
}

// ---------------------------------------------------------------------------
// Embedding

/// Gathers one table row per id.
pub fn embedding_forward(ids: &[usize], table: &Tensor) -> Result<Tensor> {
    if table.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "embedding table must be [vocab × dim], got {:?}",
            table.shape()
        )));
    }
    let (vocab, dim) = (table.shape()[0], table.shape()[1]);
    if ids.is_empty() {
        return Err(Error::Dimension("embedding of an empty id sequence".into()));
    }
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        if id >= vocab {
            return Err(Error::Vocabulary {
                id,
                vocab_size: vocab,
            });
        }
        out.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), dim], out)
}

#[derive(Debug, Clone, Default)]
pub struct EmbeddingOp {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl EmbeddingOp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, ids: &[usize], table: &Tensor) -> Result<Tensor> {
        let out = embedding_forward(ids, table)?;
        self.cache = Some((ids.to_vec(), table.shape().to_vec()));
        Ok(out)
    }

    /// Scatter-adds the upstream rows into a table-shaped gradient.
    pub fn backward(&self, upstream: &Tensor) -> Result<LayerGrads> {
        let (ids, table_shape) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("embedding backward before forward".into()))?;
        let dim = table_shape[1];
        if upstream.shape() != [ids.len(), dim] {
            return Err(Error::Dimension(format!(
                "embedding upstream {:?} vs output [{}, {dim}]",
                upstream.shape(),
                ids.len()
            )));
        }
        let mut dt = Tensor::zeros(table_shape);
        for (t, &id) in ids.iter().enumerate() {
            axpy(
                1.0,
                upstream.row(t),
                &mut dt.data_mut()[id * dim..(id + 1) * dim],
            );
        }
        Ok(LayerGrads {
            params: vec![dt],
            input: None,
        })
    }
}

// ---------------------------------------------------------------------------
// Dropout

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    McInference,
    Off,
}

/// Keep/drop pattern over the last axis of a layer output.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<bool>,
    rate: f64,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

impl DropoutMask {
    /// Each entry kept independently with probability `1 - rate`.
    pub fn sample(width: usize, rate: f64, rng: &mut Rng) -> Result<Self> {
        check_rate(rate)?;
        let keep = if rate == 0.0 {
            vec![true; width]
        } else {
            (0..width).map(|_| !rng.bernoulli(rate)).collect()
        };
        Ok(DropoutMask { keep, rate })
    }

    pub fn from_keep(keep: Vec<bool>, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(DropoutMask { keep, rate })
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    fn scale(&self) -> f64 {
        1.0 / (1.0 - self.rate)
    }
}

/// Inverted dropout: dropped entries become 0, kept entries are scaled by
/// `1 / (1 - rate)`. `Off` returns the input untouched.
pub fn dropout_apply(input: &Tensor, mask: &DropoutMask, mode: DropoutMode) -> Result<Tensor> {
    check_rate(mask.rate)?;
    if mask.len() != input.last_dim() {
        return Err(Error::Dimension(format!(
            "dropout mask of width {} vs input {:?}",
            mask.len(),
            input.shape()
        )));
    }
    if mode == DropoutMode::Off || mask.rate == 0.0 {
        return Ok(input.clone());
    }
    let scale = mask.scale();
    let width = mask.len();
    let mut out = input.clone();
    for (i, x) in out.data_mut().iter_mut().enumerate() {
        *x = if mask.keep[i % width] { *x * scale } else { 0.0 };
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DropoutOp {
    mode: DropoutMode,
    cache: Option<(DropoutMask, Vec<usize>)>,
}

impl DropoutOp {
    pub fn new(mode: DropoutMode) -> Self {
        DropoutOp { mode, cache: None }
    }

    pub fn forward(&mut self, input: &Tensor, mask: &DropoutMask) -> Result<Tensor> {
        let out = dropout_apply(input, mask, self.mode)?;
        self.cache = Some((mask.clone(), input.shape().to_vec()));
        Ok(out)
    }

    pub fn backward(&self, upstream: &Tensor) -> Result<LayerGrads> {
        let (mask, shape) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("dropout backward before forward".into()))?;
        if upstream.shape() != shape.as_slice() {
            return Err(Error::Dimension(format!(
                "dropout upstream {:?} vs input {:?}",
                upstream.shape(),
                shape
            )));
        }
        Ok(LayerGrads {
            params: vec![],
            input: Some(dropout_apply(upstream, mask, self.mode)?),
        })
    }
}
