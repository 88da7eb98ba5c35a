//! Independent oracles shared by the integration tests: central finite
//! differences for gradients and a direct per-example transcription of the
//! evaluation formulas.

#![allow(dead_code)]

use bayes_smooth::labels::{LabelDistribution, CLASS_COUNT};
use bayes_smooth::model::{Classifier, ModelConfig};
use bayes_smooth::numerics::{
    cce_loss, softmax, softmax_cce_backward, Activation, Conv1dOp, DenseOp, DropoutMask, DropoutMode,
    DropoutOp, EmbeddingOp, MaxPool1dOp, Parameterized, Rng, Tensor,
};
use bayes_smooth::textpipe::EncodedPost;

pub const FD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or 0 when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-10 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central-difference gradient of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|j| {
            let orig = probe.data()[j];
            probe.data_mut()[j] = orig + FD_EPS;
            let up = f(&probe);
            probe.data_mut()[j] = orig - FD_EPS;
            let down = f(&probe);
            probe.data_mut()[j] = orig;
            (up - down) / (2.0 * FD_EPS)
        })
        .collect()
}

pub fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Scalar probe `Σ output ⊙ weights`, whose gradient w.r.t. the output is `weights`.
fn project(out: &Tensor, weights: &Tensor) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error over the named gradients of one layer check.
#[derive(Debug)]
pub struct GradCheck {
    pub layer: &'static str,
    pub errors: Vec<(&'static str, f64)>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

pub fn check_dense(rng: &mut Rng, activation: Activation) -> GradCheck {
    let rows = 1 + rng.below(3);
    let (n_in, n_out) = (1 + rng.below(6), 1 + rng.below(6));
    let x = random_tensor(&[rows, n_in], rng);
    let w = random_tensor(&[n_in, n_out], rng);
    let b = random_tensor(&[n_out], rng);
    let r = random_tensor(&[rows, n_out], rng);
    let mut op = DenseOp::new(activation);
    op.forward(&x, &w, &b).unwrap();
    let g = op.backward(&w, &r).unwrap();
    let f = |x: &Tensor, w: &Tensor, b: &Tensor| project(&DenseOp::new(activation).forward(x, w, b).unwrap(), &r);
    GradCheck {
        layer: "dense",
        errors: vec![
            ("weights", rel_err(g.params[0].data(), &numeric_grad(&w, |w| f(&x, w, &b)))),
            ("bias", rel_err(g.params[1].data(), &numeric_grad(&b, |b| f(&x, &w, b)))),
            ("input", rel_err(g.input.as_ref().unwrap().data(), &numeric_grad(&x, |x| f(x, &w, &b)))),
        ],
    }
}

pub fn check_conv1d(rng: &mut Rng, activation: Activation) -> GradCheck {
    let length = 2 + rng.below(9);
    let channels = 1 + rng.below(4);
    let width = 1 + rng.below(length.min(5));
    let filters = 1 + rng.below(4);
    let x = random_tensor(&[length, channels], rng);
    let k = random_tensor(&[width, channels, filters], rng);
    let b = random_tensor(&[filters], rng);
    let r = random_tensor(&[length - width + 1, filters], rng);
    let mut op = Conv1dOp::new(activation);
    op.forward(&x, &k, &b).unwrap();
    let g = op.backward(&k, &r).unwrap();
    let f = |x: &Tensor, k: &Tensor, b: &Tensor| project(&Conv1dOp::new(activation).forward(x, k, b).unwrap(), &r);
    GradCheck {
        layer: "conv1d",
        errors: vec![
            ("kernels", rel_err(g.params[0].data(), &numeric_grad(&k, |k| f(&x, k, &b)))),
            ("bias", rel_err(g.params[1].data(), &numeric_grad(&b, |b| f(&x, &k, b)))),
            ("input", rel_err(g.input.as_ref().unwrap().data(), &numeric_grad(&x, |x| f(x, &k, &b)))),
        ],
    }
}

pub fn check_maxpool(rng: &mut Rng) -> GradCheck {
    let length = 1 + rng.below(12);
    let channels = 1 + rng.below(4);
    let width = 1 + rng.below(length + 2);
    let x = random_tensor(&[length, channels], rng);
    let mut op = MaxPool1dOp::new(width);
    let out = op.forward(&x).unwrap();
    let r = random_tensor(out.shape(), rng);
    let g = op.backward(&r).unwrap();
    let numeric = numeric_grad(&x, |x| project(&MaxPool1dOp::new(width).forward(x).unwrap(), &r));
    GradCheck {
        layer: "maxpool1d",
        errors: vec![("input", rel_err(g.input.as_ref().unwrap().data(), &numeric))],
    }
}

pub fn check_embedding(rng: &mut Rng) -> GradCheck {
    let vocab = 2 + rng.below(8);
    let dim = 1 + rng.below(5);
    let ids: Vec<usize> = (0..1 + rng.below(10)).map(|_| rng.below(vocab)).collect();
    let table = random_tensor(&[vocab, dim], rng);
    let r = random_tensor(&[ids.len(), dim], rng);
    let mut op = EmbeddingOp::new();
    op.forward(&ids, &table).unwrap();
    let g = op.backward(&r).unwrap();
    let numeric = numeric_grad(&table, |t| project(&EmbeddingOp::new().forward(&ids, t).unwrap(), &r));
    GradCheck {
        layer: "embedding",
        errors: vec![("table", rel_err(g.params[0].data(), &numeric))],
    }
}

pub fn check_dropout(rng: &mut Rng) -> GradCheck {
    let width = 1 + rng.below(12);
    let rate = rng.uniform(0.0, 0.9);
    let mask = DropoutMask::sample(width, rate, rng).unwrap();
    let x = random_tensor(&[width], rng);
    let r = random_tensor(&[width], rng);
    let mut op = DropoutOp::new(DropoutMode::Train);
    op.forward(&x, &mask).unwrap();
    let g = op.backward(&r).unwrap();
    let numeric = numeric_grad(&x, |x| project(&DropoutOp::new(DropoutMode::Train).forward(x, &mask).unwrap(), &r));
    GradCheck {
        layer: "dropout",
        errors: vec![("input", rel_err(g.input.as_ref().unwrap().data(), &numeric))],
    }
}

fn random_distribution(rng: &mut Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Softmax output layer with categorical cross-entropy, w.r.t. the logits.
pub fn check_softmax_cce(rng: &mut Rng) -> GradCheck {
    let rows = 1 + rng.below(4);
    let k = 2 + rng.below(5);
    let z = Tensor::new(vec![rows, k], (0..rows * k).map(|_| rng.uniform(-3.0, 3.0)).collect()).unwrap();
    let y = Tensor::new(vec![rows, k], (0..rows).flat_map(|_| random_distribution(rng, k)).collect()).unwrap();
    let probs_of = |z: &Tensor| {
        let data: Vec<f64> = (0..rows).flat_map(|r| softmax(z.row(r))).collect();
        Tensor::new(vec![rows, k], data).unwrap()
    };
    let analytic = softmax_cce_backward(&probs_of(&z), &y).unwrap();
    let numeric = numeric_grad(&z, |z| cce_loss(&probs_of(z), &y).unwrap());
    GradCheck {
        layer: "softmax+cce",
        errors: vec![("logits", rel_err(analytic.data(), &numeric))],
    }
}

/// Random small network, random post, random soft target, fixed dropout mask.
pub fn check_network(rng: &mut Rng) -> GradCheck {
    let conv1_width = 1 + rng.below(3);
    let conv2_width = 1 + rng.below(3);
    let max_len = conv1_width + conv2_width + rng.below(6);
    let cfg = ModelConfig {
        vocab_size: 3 + rng.below(6),
        emb_dim: 1 + rng.below(3),
        conv1_filters: 1 + rng.below(3),
        conv1_width,
        conv2_filters: 1 + rng.below(3),
        conv2_width,
        pool_width: if rng.bernoulli(0.5) { None } else { Some(1 + rng.below(3)) },
        dropout_rate: rng.uniform(0.0, 0.6),
        max_len,
        ..ModelConfig::default()
    };
    let mut model = Classifier::new(cfg.clone(), rng.next_u64()).unwrap();
    // spread the parameters so ReLUs are not all dead at initialization
    for (_, t) in model.params.params_mut() {
        for v in t.data_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
    }
    for v in &mut model.params.embedding.data_mut()[..cfg.emb_dim] {
        *v = 0.0;
    }
    let ids: Vec<usize> = (0..max_len).map(|_| 1 + rng.below(cfg.vocab_size - 1)).collect();
    let post = EncodedPost::from_ids(ids);
    let target = LabelDistribution::new(random_distribution(rng, CLASS_COUNT).try_into().unwrap()).unwrap();
    let mask = DropoutMask::sample(cfg.flatten_dim(), cfg.dropout_rate, rng).unwrap();

    let trace = model.forward_traced(&post, &mask).unwrap();
    let grads = model.backward(&trace, &target).unwrap();
    let y = Tensor::new(vec![1, CLASS_COUNT], target.probs().to_vec()).unwrap();

    let mut errors = Vec::new();
    let names: Vec<&'static str> = grads.params().iter().map(|(n, _)| *n).collect();
    for (pi, name) in names.into_iter().enumerate() {
        let base = model.params.params()[pi].1.clone();
        let mut numeric = numeric_grad(&base, |t| {
            let mut probe = model.clone();
            *probe.params.params_mut()[pi].1 = t.clone();
            let out = probe.forward_traced(&post, &mask).unwrap();
            cce_loss(out.probs(), &y).unwrap()
        });
        if name == "embedding" {
            // the padding row is frozen and reports a zero gradient
            for v in numeric.iter_mut().take(cfg.emb_dim) {
                *v = 0.0;
            }
        }
        errors.push((name, rel_err(grads.params()[pi].1.data(), &numeric)));
    }
    GradCheck { layer: "network", errors }
}

/// Every per-layer check, for one random draw.
pub fn all_layer_checks(rng: &mut Rng) -> Vec<GradCheck> {
    vec![
        check_dense(rng, Activation::Identity),
        check_dense(rng, Activation::Relu),
        check_dense(rng, Activation::Sigmoid),
        check_dense(rng, Activation::Softmax),
        check_conv1d(rng, Activation::Relu),
        check_conv1d(rng, Activation::Identity),
        check_maxpool(rng),
        check_embedding(rng),
        check_dropout(rng),
        check_softmax_cce(rng),
        check_network(rng),
    ]
}

/// Metrics computed straight from the definitions, one example at a time.
#[derive(Debug)]
pub struct OracleMetrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub micro_precision: f64,
    pub weighted_balanced_accuracy: f64,
}

pub fn oracle_metrics(truth: &[usize], predicted: &[usize], k: usize) -> OracleMetrics {
    let n = truth.len();
    let pairs = || truth.iter().zip(predicted);
    let mut precision = vec![0.0; k];
    let mut recall = vec![0.0; k];
    let mut f1 = vec![0.0; k];
    for c in 0..k {
        let tp = pairs().filter(|&(&t, &p)| t == c && p == c).count();
        let fp = pairs().filter(|&(&t, &p)| t != c && p == c).count();
        let fn_ = pairs().filter(|&(&t, &p)| t == c && p != c).count();
        precision[c] = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        recall[c] = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        f1[c] = if precision[c] + recall[c] == 0.0 {
            0.0
        } else {
            2.0 * precision[c] * recall[c] / (precision[c] + recall[c])
        };
    }
    let correct = pairs().filter(|(t, p)| t == p).count();
    let predicted_total: usize = (0..k).map(|c| predicted.iter().filter(|&&p| p == c).count()).sum();

    let (mut num, mut den) = (0.0, 0.0);
    for c in 0..k {
        let n_c = truth.iter().filter(|&&t| t == c).count();
        if n_c == 0 {
            continue;
        }
        let w = n_c as f64 / n as f64;
        num += recall[c] / w;
        den += 1.0 / w;
    }

    OracleMetrics {
        accuracy: correct as f64 / n as f64,
        macro_precision: precision.iter().sum::<f64>() / k as f64,
        macro_recall: recall.iter().sum::<f64>() / k as f64,
        micro_precision: correct as f64 / predicted_total as f64,
        weighted_balanced_accuracy: num / den,
        precision,
        recall,
        f1,
    }
}

/// Largest absolute deviation between a report and the oracle.
pub fn report_deviation(report: &bayes_smooth::metrics::MetricsReport, oracle: &OracleMetrics) -> f64 {
    let mut worst: f64 = 0.0;
    let mut upd = |a: f64, b: f64| worst = worst.max((a - b).abs());
    upd(report.accuracy, oracle.accuracy);
    upd(report.macro_precision, oracle.macro_precision);
    upd(report.macro_recall, oracle.macro_recall);
    upd(report.micro_precision, oracle.micro_precision);
    upd(report.weighted_balanced_accuracy, oracle.weighted_balanced_accuracy);
    for c in 0..oracle.precision.len() {
        upd(report.precision[c], oracle.precision[c]);
        upd(report.recall[c], oracle.recall[c]);
        upd(report.f1[c], oracle.f1[c]);
    }
    worst
}

/// Random prediction set: `n ≤ max_n` examples over `k` classes, with some
/// classes optionally absent from truth or predictions.
pub fn random_prediction_set(rng: &mut Rng, max_n: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let n = 1 + rng.below(max_n);
    let truth_classes: Vec<usize> = (0..k).filter(|_| rng.bernoulli(0.85)).collect();
    let truth_classes = if truth_classes.is_empty() { vec![rng.below(k)] } else { truth_classes };
    let skill = rng.next_f64();
    let truth: Vec<usize> = (0..n).map(|_| truth_classes[rng.below(truth_classes.len())]).collect();
    let predicted = truth
        .iter()
        .map(|&t| if rng.bernoulli(skill) { t } else { rng.below(k) })
        .collect();
    (truth, predicted)
}
