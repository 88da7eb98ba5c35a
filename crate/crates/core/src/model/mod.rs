//! The convolutional text classifier.
//!
//! Layer stack: embedding → conv1d (ReLU) → conv1d (ReLU) → max pool →
//! flatten → dropout → dense → softmax over the five risk classes. The single
//! dropout site sits between the flattened features and the dense head, so
//! stochastic passes only need to re-run the head.

mod checkpoint;
mod mc;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use mc::{mc_predict, PredictiveDistribution};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelDistribution, CLASS_COUNT};
use crate::numerics::{
    self, cce_loss, sgd_step, softmax_cce_backward, Activation, Conv1dOp, DenseOp, DropoutMask,
    DropoutMode, DropoutOp, EmbeddingOp, MaxPool1dOp, Parameterized, Rng, Tensor,
};
use crate::textpipe::{EncodedPost, PAD_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Id space of the vocabulary, reserved ids included.
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub conv1_filters: usize,
    pub conv1_width: usize,
    pub conv2_filters: usize,
    pub conv2_width: usize,
    /// `None` pools over the whole remaining sequence (global max pool).
    pub pool_width: Option<usize>,
    pub dropout_rate: f64,
    pub max_len: usize,
    pub class_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 2,
            emb_dim: 32,
            conv1_filters: 32,
            conv1_width: 5,
            conv2_filters: 32,
            conv2_width: 3,
            pool_width: None,
            dropout_rate: 0.5,
            max_len: crate::textpipe::DEFAULT_MAX_LEN,
            class_count: CLASS_COUNT,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.class_count != CLASS_COUNT {
            return fail(format!("class_count must be {CLASS_COUNT}, got {}", self.class_count));
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must cover the reserved ids, got {}", self.vocab_size));
        }
        for (name, v) in [
            ("emb_dim", self.emb_dim),
            ("conv1_filters", self.conv1_filters),
            ("conv1_width", self.conv1_width),
            ("conv2_filters", self.conv2_filters),
            ("conv2_width", self.conv2_width),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.pool_width == Some(0) {
            return fail("pool_width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.max_len + 2 < self.conv1_width + self.conv2_width + 1 {
            return fail(format!(
                "max_len {} too short for kernel widths {} and {}",
                self.max_len, self.conv1_width, self.conv2_width
            ));
        }
        Ok(())
    }

    /// Length of the second convolution's output.
    pub fn conv2_len(&self) -> usize {
        self.max_len + 2 - self.conv1_width - self.conv2_width
    }

    pub fn effective_pool_width(&self) -> usize {
        self.pool_width.unwrap_or_else(|| self.conv2_len())
    }

    pub fn flatten_dim(&self) -> usize {
        self.conv2_len().div_ceil(self.effective_pool_width()) * self.conv2_filters
    }
}

/// All trainable tensors. Also used as the gradient carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: Tensor,
    pub conv1_kernels: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_kernels: Tensor,
    pub conv2_bias: Tensor,
    pub dense_weights: Tensor,
    pub dense_bias: Tensor,
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|x| *x = rng.uniform(-limit, limit));
    t
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, zero padding row.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut embedding = glorot(&[cfg.vocab_size, cfg.emb_dim], cfg.vocab_size, cfg.emb_dim, rng);
        embedding.data_mut()[..cfg.emb_dim].fill(0.0);
        let conv1_kernels = glorot(
            &[cfg.conv1_width, cfg.emb_dim, cfg.conv1_filters],
            cfg.conv1_width * cfg.emb_dim,
            cfg.conv1_width * cfg.conv1_filters,
            rng,
        );
        let conv2_kernels = glorot(
            &[cfg.conv2_width, cfg.conv1_filters, cfg.conv2_filters],
            cfg.conv2_width * cfg.conv1_filters,
            cfg.conv2_width * cfg.conv2_filters,
            rng,
        );
        let dense_weights = glorot(
            &[cfg.flatten_dim(), cfg.class_count],
            cfg.flatten_dim(),
            cfg.class_count,
            rng,
        );
        Ok(ModelParams {
            embedding,
            conv1_kernels,
            conv1_bias: Tensor::zeros(&[cfg.conv1_filters]),
            conv2_kernels,
            conv2_bias: Tensor::zeros(&[cfg.conv2_filters]),
            dense_weights,
            dense_bias: Tensor::zeros(&[cfg.class_count]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.shape());
        ModelParams {
            embedding: z(&self.embedding),
            conv1_kernels: z(&self.conv1_kernels),
            conv1_bias: z(&self.conv1_bias),
            conv2_kernels: z(&self.conv2_kernels),
            conv2_bias: z(&self.conv2_bias),
            dense_weights: z(&self.dense_weights),
            dense_bias: z(&self.dense_bias),
        }
    }

    /// Shapes the configuration implies, in declaration order.
    pub fn expected_shapes(cfg: &ModelConfig) -> [Vec<usize>; 7] {
        [
            vec![cfg.vocab_size, cfg.emb_dim],
            vec![cfg.conv1_width, cfg.emb_dim, cfg.conv1_filters],
            vec![cfg.conv1_filters],
            vec![cfg.conv2_width, cfg.conv1_filters, cfg.conv2_filters],
            vec![cfg.conv2_filters],
            vec![cfg.flatten_dim(), cfg.class_count],
            vec![cfg.class_count],
        ]
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        for ((name, t), expected) in self.params().into_iter().zip(Self::expected_shapes(cfg)) {
            if t.shape() != expected.as_slice() {
                return Err(Error::Config(format!(
                    "{name} has shape {:?}, configuration implies {expected:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        for ((_, a), (_, b)) in self.params_mut().into_iter().zip(other.params()) {
            a.add_scaled(b, scale)?;
        }
        Ok(())
    }
}

impl Parameterized for ModelParams {
    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("embedding", &self.embedding),
            ("conv1_kernels", &self.conv1_kernels),
            ("conv1_bias", &self.conv1_bias),
            ("conv2_kernels", &self.conv2_kernels),
            ("conv2_bias", &self.conv2_bias),
            ("dense_weights", &self.dense_weights),
            ("dense_bias", &self.dense_bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("embedding", &mut self.embedding),
            ("conv1_kernels", &mut self.conv1_kernels),
            ("conv1_bias", &mut self.conv1_bias),
            ("conv2_kernels", &mut self.conv2_kernels),
            ("conv2_bias", &mut self.conv2_bias),
            ("dense_weights", &mut self.dense_weights),
            ("dense_bias", &mut self.dense_bias),
        ]
    }
}

/// How dropout behaves during a forward pass.
pub enum Dropout<'a> {
    Off,
    /// A fresh mask is drawn from the given stream.
    Masked(&'a mut Rng),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 20,
            seed: 0,
        }
    }
}

/// Cached state of one forward pass, consumed by [`Classifier::backward`].
pub struct Trace {
    embedding: EmbeddingOp,
    conv1: Conv1dOp,
    conv2: Conv1dOp,
    pool: MaxPool1dOp,
    pooled_shape: Vec<usize>,
    dropout: DropoutOp,
    dense: DenseOp,
    probs: Tensor,
}

impl Trace {
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Classifier {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, &mut Rng::new(seed))?;
        Ok(Classifier { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Classifier { config, params })
    }

    fn check_post(&self, post: &EncodedPost) -> Result<()> {
        if post.len() != self.config.max_len {
            return Err(Error::Config(format!(
                "post has length {}, model expects {}",
                post.len(),
                self.config.max_len
            )));
        }
        Ok(())
    }

    /// Deterministic part of the network: the flattened pooled features.
    pub fn features(&self, post: &EncodedPost) -> Result<Tensor> {
        self.check_post(post)?;
        let p = &self.params;
        let emb = numerics::embedding_forward(post.ids(), &p.embedding)?;
        let h1 = numerics::conv1d_forward(&emb, &p.conv1_kernels, &p.conv1_bias, Activation::Relu)?;
        let h2 = numerics::conv1d_forward(&h1, &p.conv2_kernels, &p.conv2_bias, Activation::Relu)?;
        let (pooled, _) = numerics::maxpool1d_forward(&h2, self.config.effective_pool_width())?;
        let n = pooled.len();
        pooled.reshape(vec![n])
    }

    /// Dense softmax head on (optionally masked) features.
    pub fn head(&self, features: &Tensor, mask: Option<&DropoutMask>) -> Result<[f64; CLASS_COUNT]> {
        let x = match mask {
            Some(m) => numerics::dropout_apply(features, m, DropoutMode::McInference)?,
            None => features.clone(),
        };
        let out = numerics::dense_forward(
            &x,
            &self.params.dense_weights,
            &self.params.dense_bias,
            Activation::Softmax,
        )?;
        let mut probs = [0.0; CLASS_COUNT];
        probs.copy_from_slice(out.data());
        Ok(probs)
    }

    fn draw_mask(&self, rng: &mut Rng) -> Result<DropoutMask> {
        DropoutMask::sample(self.config.flatten_dim(), self.config.dropout_rate, rng)
    }

    pub fn forward(&self, post: &EncodedPost, dropout: Dropout<'_>) -> Result<LabelDistribution> {
        let features = self.features(post)?;
        let probs = match dropout {
            Dropout::Off => self.head(&features, None)?,
            Dropout::Masked(rng) => {
                let mask = self.draw_mask(rng)?;
                self.head(&features, Some(&mask))?
            }
        };
        LabelDistribution::new(probs)
    }

    pub fn predict_class(&self, post: &EncodedPost) -> Result<usize> {
        Ok(self.forward(post, Dropout::Off)?.argmax())
    }

    /// Forward pass that records every layer's state for backpropagation.
    pub fn forward_traced(&self, post: &EncodedPost, mask: &DropoutMask) -> Result<Trace> {
        self.check_post(post)?;
        let p = &self.params;
        let mut embedding = EmbeddingOp::new();
        let mut conv1 = Conv1dOp::new(Activation::Relu);
        let mut conv2 = Conv1dOp::new(Activation::Relu);
        let mut pool = MaxPool1dOp::new(self.config.effective_pool_width());
        let mut dropout = DropoutOp::new(DropoutMode::Train);
        let mut dense = DenseOp::new(Activation::Identity);

        let emb = embedding.forward(post.ids(), &p.embedding)?;
        let h1 = conv1.forward(&emb, &p.conv1_kernels, &p.conv1_bias)?;
        let h2 = conv2.forward(&h1, &p.conv2_kernels, &p.conv2_bias)?;
        let pooled = pool.forward(&h2)?;
        let pooled_shape = pooled.shape().to_vec();
        let n = pooled.len();
        let flat = pooled.reshape(vec![1, n])?;
        let dropped = dropout.forward(&flat, mask)?;
        let logits = dense.forward(&dropped, &p.dense_weights, &p.dense_bias)?;
        let mut probs = logits;
        probs.data_mut().chunks_mut(CLASS_COUNT).for_each(numerics::layers::softmax_in_place);
        Ok(Trace {
            embedding,
            conv1,
            conv2,
            pool,
            pooled_shape,
            dropout,
            dense,
            probs,
        })
    }

    /// Gradients of the cross-entropy between the traced prediction and
    /// `target`. The padding row of the embedding never receives gradient.
    pub fn backward(&self, trace: &Trace, target: &LabelDistribution) -> Result<ModelParams> {
        let p = &self.params;
        let y = Tensor::new(vec![1, CLASS_COUNT], target.probs().to_vec())?;
        let dlogits = softmax_cce_backward(&trace.probs, &y)?;
        let dense = trace.dense.backward(&p.dense_weights, &dlogits)?;
        let dflat = trace.dropout.backward(&expect_input(dense.input, "dense")?)?;
        let dpooled = expect_input(dflat.input, "dropout")?.reshape(trace.pooled_shape.clone())?;
        let dh2 = expect_input(trace.pool.backward(&dpooled)?.input, "pool")?;
        let conv2 = trace.conv2.backward(&p.conv2_kernels, &dh2)?;
        let conv1 = trace
            .conv1
            .backward(&p.conv1_kernels, &expect_input(conv2.input, "conv2")?)?;
        let emb = trace
            .embedding
            .backward(&expect_input(conv1.input, "conv1")?)?;

        let mut grads = emb.params.into_iter().chain(conv1.params).chain(conv2.params).chain(dense.params);
        let mut next = || grads.next().expect("seven gradient tensors");
        let mut out = ModelParams {
            embedding: next(),
            conv1_kernels: next(),
            conv1_bias: next(),
            conv2_kernels: next(),
            conv2_bias: next(),
            dense_weights: next(),
            dense_bias: next(),
        };
        out.embedding.data_mut()[PAD_ID * self.config.emb_dim..(PAD_ID + 1) * self.config.emb_dim]
            .fill(0.0);
        Ok(out)
    }

    /// Mean cross-entropy of the deterministic predictions against `data`.
    pub fn loss(&self, data: &[(EncodedPost, LabelDistribution)]) -> Result<f64> {
        let mut total = 0.0;
        for (post, target) in data {
            let pred = self.forward(post, Dropout::Off)?;
            total += example_loss(pred.probs(), target)?;
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// Mini-batch gradient descent with dropout masks drawn from `cfg.seed`.
    ///
    /// Returns the mean training loss of each epoch.
    pub fn train(
        &mut self,
        data: &[(EncodedPost, LabelDistribution)],
        cfg: &TrainConfig,
    ) -> Result<Vec<f64>> {
        self.train_observed(data, cfg, |_, _| {})
    }

    /// [`Classifier::train`] with `observe(epoch, model)` called after every epoch.
    pub fn train_observed(
        &mut self,
        data: &[(EncodedPost, LabelDistribution)],
        cfg: &TrainConfig,
        mut observe: impl FnMut(usize, &Classifier),
    ) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Argument("cannot train on an empty dataset".into()));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Argument("batch_size must be positive".into()));
        }
        for (post, _) in data {
            self.check_post(post)?;
        }
        let mut rng = Rng::new(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
                let mut grads = self.params.zeros_like();
                let mut batch_loss = 0.0;
                for &i in batch {
                    let (post, target) = &data[i];
                    let mask = self.draw_mask(&mut rng)?;
                    let trace = self.forward_traced(post, &mask)?;
                    let mut probs = [0.0; CLASS_COUNT];
                    probs.copy_from_slice(trace.probs().data());
                    batch_loss += example_loss(&probs, target)?;
                    grads.add_scaled(&self.backward(&trace, target)?, 1.0)?;
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss at epoch {epoch}, batch {batch_idx}"
                    )));
                }
                epoch_loss += batch_loss;
                for (_, g) in grads.params_mut() {
                    g.scale(1.0 / batch.len() as f64);
                }
                sgd_step(&mut self.params, &grads, cfg.learning_rate).map_err(|e| match e {
                    Error::Training(m) => {
                        Error::Training(format!("{m} at epoch {epoch}, batch {batch_idx}"))
                    }
                    other => other,
                })?;
            }
            history.push(epoch_loss / data.len() as f64);
            observe(epoch, self);
        }
        Ok(history)
    }
}

fn expect_input(t: Option<Tensor>, layer: &str) -> Result<Tensor> {
    t.ok_or_else(|| Error::State(format!("{layer} produced no input gradient")))
}

fn example_loss(probs: &[f64; CLASS_COUNT], target: &LabelDistribution) -> Result<f64> {
    let p = Tensor::new(vec![1, CLASS_COUNT], probs.to_vec())?;
    let y = Tensor::new(vec![1, CLASS_COUNT], target.probs().to_vec())?;
    cce_loss(&p, &y)
}

/// Trains a fresh model and returns it with its loss history.
pub fn train(
    config: &ModelConfig,
    init_seed: u64,
    data: &[(EncodedPost, LabelDistribution)],
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let mut model = Classifier::new(config.clone(), init_seed)?;
    let history = model.train(data, cfg)?;
    Ok((model, history))
}
