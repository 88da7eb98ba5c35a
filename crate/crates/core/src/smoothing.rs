//! Label-generation strategies: hard one-hot, uniform smoothing, and
//! Monte-Carlo-dropout (Bayesian) smoothing.
//!
//! Bayesian smoothing runs in three stages: train a model on the current
//! labels, run [`mc_predict`] on every training example, then blend each
//! predictive mean into the annotated one-hot label:
//!
//! ```text
//! y' = (1 - alpha) * one_hot + alpha * p_mc        (retention blend)
//! y' = p_mc                                        (pure mode)
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelDistribution, RiskClass, CLASS_COUNT};
use crate::model::{self, mc_predict, ModelConfig, PredictiveDistribution, TrainConfig};
use crate::numerics::Rng;
use crate::textpipe::EncodedPost;

fn default_rounds() -> usize {
    1
}

fn default_passes() -> usize {
    100
}

fn default_alpha() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmoothingConfig {
    Hard,
    Uniform {
        alpha: f64,
    },
    Bayesian {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_passes")]
        passes: usize,
        /// Emit the predictive mean itself instead of the retention blend.
        #[serde(default)]
        pure: bool,
        /// Smooth → retrain rounds used to produce the labels.
        #[serde(default = "default_rounds")]
        rounds: usize,
    },
}

impl SmoothingConfig {
    pub fn bayesian(alpha: f64, passes: usize) -> Self {
        SmoothingConfig::Bayesian {
            alpha,
            passes,
            pure: false,
            rounds: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_alpha = |a: f64| {
            if (0.0..=1.0).contains(&a) {
                Ok(())
            } else {
                Err(Error::Argument(format!("alpha must lie in [0, 1], got {a}")))
            }
        };
        match *self {
            SmoothingConfig::Hard => Ok(()),
            SmoothingConfig::Uniform { alpha } => check_alpha(alpha),
            SmoothingConfig::Bayesian {
                alpha,
                passes,
                rounds,
                ..
            } => {
                check_alpha(alpha)?;
                if passes == 0 {
                    return Err(Error::Argument("MC pass count must be at least 1".into()));
                }
                if rounds == 0 {
                    return Err(Error::Argument("rounds must be at least 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Condition name used in result tables.
    pub fn name(&self) -> String {
        match *self {
            SmoothingConfig::Hard => "hard".into(),
            SmoothingConfig::Uniform { alpha } => format!("uniform_{alpha}"),
            SmoothingConfig::Bayesian { pure: true, .. } => "bayesian_pure".into(),
            SmoothingConfig::Bayesian { alpha, .. } => format!("bayesian_{alpha}"),
        }
    }
}

pub fn one_hot(class_index: usize) -> Result<LabelDistribution> {
    LabelDistribution::one_hot(class_index)
}

/// True class gets `1 - alpha`, every other class `alpha / (k - 1)`.
pub fn uniform_smooth(label: &LabelDistribution, alpha: f64) -> Result<LabelDistribution> {
    let class = label
        .hard_class()
        .ok_or_else(|| Error::Argument(format!("uniform smoothing needs a one-hot label, got {:?}", label.probs())))?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let off = alpha / (CLASS_COUNT - 1) as f64;
    let mut p = [off; CLASS_COUNT];
    p[class] = 1.0 - alpha;
    LabelDistribution::new(p)
}

/// Retention blend of a hard class with a predictive mean.
pub fn blend(hard_class: usize, predictive: &LabelDistribution, alpha: f64) -> Result<LabelDistribution> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let hard = LabelDistribution::one_hot(hard_class)?;
    let mut p = [0.0; CLASS_COUNT];
    for (k, out) in p.iter_mut().enumerate() {
        *out = (1.0 - alpha) * hard.probs()[k] + alpha * predictive.probs()[k];
    }
    LabelDistribution::new(p)
}

/// Seeds for the internal stages of Bayesian smoothing.
const STAGE_INIT: u64 = 1;
const STAGE_TRAIN: u64 = 2;
const STAGE_MC: u64 = 3;

/// Soft labels plus the predictive distributions they were built from.
#[derive(Debug, Clone)]
pub struct BayesianLabels {
    pub labels: Vec<LabelDistribution>,
    pub predictive: Vec<PredictiveDistribution>,
}

/// Trains on the current labels, simulates `passes` MC-dropout passes per
/// example, and emits non-uniform soft labels. With `rounds > 1` the next
/// round trains on the previous round's soft labels.
#[allow(clippy::too_many_arguments)]
pub fn bayesian_smooth_labels(
    posts: &[EncodedPost],
    hard_labels: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    alpha: f64,
    passes: usize,
    pure: bool,
    rounds: usize,
    seed: u64,
) -> Result<BayesianLabels> {
    if posts.is_empty() {
        return Err(Error::Argument("cannot smooth an empty dataset".into()));
    }
    if posts.len() != hard_labels.len() {
        return Err(Error::Argument(format!(
            "{} posts but {} labels",
            posts.len(),
            hard_labels.len()
        )));
    }
    SmoothingConfig::Bayesian {
        alpha,
        passes,
        pure,
        rounds,
    }
    .validate()?;

    let mut current: Vec<LabelDistribution> = hard_labels
        .iter()
        .map(|&c| LabelDistribution::one_hot(c))
        .collect::<Result<_>>()?;
    let mut predictive = Vec::new();
    for round in 0..rounds as u64 {
        let round_seed = Rng::derive(seed, round);
        let data: Vec<(EncodedPost, LabelDistribution)> =
            posts.iter().cloned().zip(current.iter().copied()).collect();
        let stage_train = TrainConfig {
            seed: Rng::derive(round_seed, STAGE_TRAIN),
            ..*train_cfg
        };
        let (teacher, _) = model::train(model_cfg, Rng::derive(round_seed, STAGE_INIT), &data, &stage_train)?;

        let mc_seed = Rng::derive(round_seed, STAGE_MC);
        predictive = posts
            .iter()
            .enumerate()
            .map(|(i, post)| mc_predict(&teacher, post, passes, &mut Rng::substream(mc_seed, i as u64)))
            .collect::<Result<_>>()?;

        current = predictive
            .iter()
            .zip(hard_labels)
            .map(|(pd, &c)| if pure { Ok(pd.mean) } else { blend(c, &pd.mean, alpha) })
            .collect::<Result<_>>()?;
    }
    Ok(BayesianLabels {
        labels: current,
        predictive,
    })
}

/// Training-ready labels for one experimental condition.
pub fn run_smoothing_condition(
    condition: &SmoothingConfig,
    posts: &[EncodedPost],
    hard_labels: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<(EncodedPost, LabelDistribution)>> {
    condition.validate()?;
    if posts.len() != hard_labels.len() {
        return Err(Error::Argument(format!(
            "{} posts but {} labels",
            posts.len(),
            hard_labels.len()
        )));
    }
    let labels: Vec<LabelDistribution> = match *condition {
        SmoothingConfig::Hard => hard_labels
            .iter()
            .map(|&c| one_hot(c))
            .collect::<Result<_>>()?,
        SmoothingConfig::Uniform { alpha } => hard_labels
            .iter()
            .map(|&c| uniform_smooth(&one_hot(c)?, alpha))
            .collect::<Result<_>>()?,
        SmoothingConfig::Bayesian {
            alpha,
            passes,
            pure,
            rounds,
        } => {
            bayesian_smooth_labels(posts, hard_labels, model_cfg, train_cfg, alpha, passes, pure, rounds, seed)?
                .labels
        }
    };
    Ok(posts.iter().cloned().zip(labels).collect())
}

/// Writes `example_id,p_SU,p_IN,p_ID,p_SB,p_AT` rows with six decimals.
pub fn write_labels_csv<W: Write>(mut out: W, ids: &[String], labels: &[LabelDistribution]) -> Result<()> {
    let mut header = String::from("example_id");
    for c in RiskClass::ALL {
        write!(header, ",p_{}", c.code()).unwrap();
    }
    writeln!(out, "{header}")?;
    for (id, label) in ids.iter().zip(labels) {
        let mut line = id.clone();
        for micros in to_micros(label) {
            write!(line, ",{}.{:06}", micros / 1_000_000, micros % 1_000_000).unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Probabilities in millionths summing to exactly 1,000,000; the largest
/// entry absorbs the rounding residue.
fn to_micros(label: &LabelDistribution) -> [i64; CLASS_COUNT] {
    let mut micros = label.probs().map(|p| (p * 1e6).round() as i64);
    let residue = 1_000_000 - micros.iter().sum::<i64>();
    micros[label.argmax()] += residue;
    micros
}

/// Parses the label CSV back into raw rows (not renormalized).
pub fn read_labels_csv<R: BufRead>(input: R) -> Result<Vec<(String, [f64; CLASS_COUNT])>> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate().skip(1) {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CLASS_COUNT + 1 {
            return Err(Error::Argument(format!("label csv line {}: expected {} fields", i + 1, CLASS_COUNT + 1)));
        }
        let mut p = [0.0; CLASS_COUNT];
        for (k, f) in fields[1..].iter().enumerate() {
            p[k] = f
                .parse()
                .map_err(|_| Error::Argument(format!("label csv line {}: bad number {f:?}", i + 1)))?;
        }
        rows.push((fields[0].to_string(), p));
    }
    Ok(rows)
}
