use super::Classifier;
use crate::error::{Error, Result};
use crate::labels::{LabelDistribution, CLASS_COUNT};
use crate::numerics::{DropoutMask, Rng};
use crate::textpipe::EncodedPost;

/// Mean and spread of the class probabilities over `passes` stochastic passes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: LabelDistribution,
    /// Population variance of each class probability across passes.
    pub variance: [f64; CLASS_COUNT],
    pub passes: usize,
}

impl PredictiveDistribution {
    /// Aggregates per-pass softmax outputs with a running (Welford) mean, so
    /// identical passes reproduce their common value exactly.
    pub fn from_passes<I>(passes: I) -> Result<Self>
    where
        I: IntoIterator<Item = [f64; CLASS_COUNT]>,
    {
        let mut mean = [0.0; CLASS_COUNT];
        let mut m2 = [0.0; CLASS_COUNT];
        let mut n = 0usize;
        for p in passes {
            n += 1;
            for k in 0..CLASS_COUNT {
                let delta = p[k] - mean[k];
                mean[k] += delta / n as f64;
                m2[k] += delta * (p[k] - mean[k]);
            }
        }
        if n == 0 {
            return Err(Error::Argument("need at least one pass".into()));
        }
        let variance = m2.map(|v| (v / n as f64).max(0.0));
        Ok(PredictiveDistribution {
            mean: LabelDistribution::new(mean)?,
            variance,
            passes: n,
        })
    }
}

/// Monte-Carlo dropout prediction: averages `passes` softmax outputs, each
/// under an independent dropout mask.
///
/// One base seed is drawn from `rng`; pass `t` uses substream `t` of it, so a
/// pass's mask does not depend on evaluation order.
pub fn mc_predict(
    model: &Classifier,
    post: &EncodedPost,
    passes: usize,
    rng: &mut Rng,
) -> Result<PredictiveDistribution> {
    if passes == 0 {
        return Err(Error::Argument("MC pass count must be at least 1".into()));
    }
    let features = model.features(post)?;
    let base = rng.next_u64();
    let width = model.config.flatten_dim();
    let rate = model.config.dropout_rate;
    let outputs = (0..passes as u64)
        .map(|t| {
            let mut stream = Rng::substream(base, t);
            let mask = DropoutMask::sample(width, rate, &mut stream)?;
            model.head(&features, Some(&mask))
        })
        .collect::<Result<Vec<_>>>()?;
    PredictiveDistribution::from_passes(outputs)
}
