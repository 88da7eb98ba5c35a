//! Corpus ingestion (JSON lines), stratified splitting, and a synthetic
//! corpus generator with simulated annotator disagreement.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelDistribution, RiskClass, CLASS_COUNT};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub user_id: String,
    pub text: String,
    pub label: RiskClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub user_id: String,
    pub text: String,
    pub label: RiskClass,
    /// Probability of each class under a single annotator's vote.
    pub true_distribution: [f64; CLASS_COUNT],
    pub annotator_votes: Vec<RiskClass>,
}

impl SynthRecord {
    pub fn post(&self) -> PostRecord {
        PostRecord {
            user_id: self.user_id.clone(),
            text: self.text.clone(),
            label: self.label,
        }
    }

    pub fn true_label_distribution(&self) -> Result<LabelDistribution> {
        LabelDistribution::new(self.true_distribution)
    }

    /// Fraction of annotators voting for each class.
    pub fn vote_shares(&self) -> [f64; CLASS_COUNT] {
        let mut shares = [0.0; CLASS_COUNT];
        for v in &self.annotator_votes {
            shares[v.index()] += 1.0;
        }
        let n = self.annotator_votes.len().max(1) as f64;
        shares.map(|s| s / n)
    }

    /// Share of annotator pairs that agree.
    pub fn pairwise_agreement(&self) -> Option<f64> {
        let votes = &self.annotator_votes;
        let n = votes.len();
        if n < 2 {
            return None;
        }
        let mut agree = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                agree += usize::from(votes[i] == votes[j]);
            }
        }
        Some(agree as f64 / (n * (n - 1) / 2) as f64)
    }
}

/// Anything carrying a risk-class label.
pub trait Labeled {
    fn label(&self) -> RiskClass;
}

impl Labeled for PostRecord {
    fn label(&self) -> RiskClass {
        self.label
    }
}

impl Labeled for SynthRecord {
    fn label(&self) -> RiskClass {
        self.label
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Argument(format!("{} holds no records", path.display())));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSON-lines corpus with fields `user_id`, `text`, `label`.
/// Extra fields (such as those of synthetic corpora) are ignored.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<PostRecord>> {
    let path = path.as_ref();
    let records: Vec<PostRecord> = read_jsonl(path)?;
    // line numbers here count records; blank lines are never produced by save_corpus
    for (i, r) in records.iter().enumerate() {
        if r.text.trim().is_empty() {
            return Err(Error::Ingestion {
                path: path.to_path_buf(),
                line: i + 1,
                message: "empty text".into(),
            });
        }
    }
    Ok(records)
}

pub fn save_corpus(path: impl AsRef<Path>, records: &[PostRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

pub fn load_synthetic(path: impl AsRef<Path>) -> Result<Vec<SynthRecord>> {
    read_jsonl(path.as_ref())
}

pub fn save_synthetic(path: impl AsRef<Path>, records: &[SynthRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

/// Stratified split returning sorted `(train, test)` index lists.
///
/// Each class with at least two members contributes `floor` or `ceil` of
/// `test_fraction * n_k` test examples; leftover slots go to the classes with
/// the largest fractional quota so the test total is `round(test_fraction * N)`.
/// Classes with fewer than two members stay entirely in train.
pub fn split_indices(
    labels: &[RiskClass],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASS_COUNT];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    let mut quota = [0usize; CLASS_COUNT];
    let mut remainders = Vec::new();
    let mut eligible_total = 0usize;
    for (k, members) in by_class.iter().enumerate() {
        let n = members.len();
        if n == 0 {
            continue;
        }
        if n < 2 {
            log::warn!(
                "class {} has {n} example(s); keeping it entirely in the training split",
                RiskClass::ALL[k]
            );
            continue;
        }
        eligible_total += n;
        let exact = test_fraction * n as f64;
        quota[k] = (exact.floor() as usize).min(n - 1);
        remainders.push((exact - exact.floor(), k));
    }
    let target = (test_fraction * eligible_total as f64).round() as usize;
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut assigned: usize = quota.iter().sum();
    for &(_, k) in &remainders {
        if assigned >= target {
            break;
        }
        if quota[k] + 1 < by_class[k].len() {
            quota[k] += 1;
            assigned += 1;
        }
    }

    let mut rng = Rng::new(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (k, members) in by_class.iter().enumerate() {
        let mut shuffled = members.clone();
        rng.shuffle(&mut shuffled);
        test.extend_from_slice(&shuffled[..quota[k]]);
        train.extend_from_slice(&shuffled[quota[k]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split<T: Labeled + Clone>(records: &[T], test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let labels: Vec<RiskClass> = records.iter().map(Labeled::label).collect();
    let (train, test) = split_indices(&labels, test_fraction, seed)?;
    Ok((
        train.into_iter().map(|i| records[i].clone()).collect(),
        test.into_iter().map(|i| records[i].clone()).collect(),
    ))
}

/// Class counts of the reference Reddit corpus in class-index order
/// (SU, IN, ID, SB, AT).
pub const REFERENCE_CLASS_COUNTS: [u64; CLASS_COUNT] = [108, 99, 171, 77, 45];

pub fn reference_prior() -> [f64; CLASS_COUNT] {
    let total: u64 = REFERENCE_CLASS_COUNTS.iter().sum();
    REFERENCE_CLASS_COUNTS.map(|c| c as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub users: usize,
    pub class_prior: [f64; CLASS_COUNT],
    /// Target mean pairwise annotator agreement.
    pub agreement: f64,
    pub annotators: usize,
    /// Probability that a marker token belongs to the user's true class
    /// rather than an adjacent severity class.
    pub marker_strength: f64,
    pub seed: u64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that a token position holds a class marker.
    pub marker_rate: f64,
    pub markers_per_class: usize,
    pub filler_vocab: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 500,
            class_prior: reference_prior(),
            agreement: 0.7,
            annotators: 4,
            marker_strength: 0.6,
            seed: 1,
            min_tokens: 20,
            max_tokens: 60,
            marker_rate: 0.15,
            markers_per_class: 10,
            filler_vocab: 100,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.users == 0 {
            return arg("users must be positive".into());
        }
        let sum: f64 = self.class_prior.iter().sum();
        if self.class_prior.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return arg(format!("class_prior {:?} is not a distribution", self.class_prior));
        }
        if !(self.agreement > 0.0 && self.agreement <= 1.0) {
            return arg(format!("agreement must lie in (0, 1], got {}", self.agreement));
        }
        if self.annotators == 0 {
            return arg("annotators must be positive".into());
        }
        for (name, v) in [("marker_strength", self.marker_strength), ("marker_rate", self.marker_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return arg(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return arg(format!(
                "token range [{}, {}] is empty",
                self.min_tokens, self.max_tokens
            ));
        }
        if self.markers_per_class == 0 || self.filler_vocab == 0 {
            return arg("markers_per_class and filler_vocab must be positive".into());
        }
        Ok(())
    }
}

/// Σ_c prior_c / (number of severity neighbors of c).
fn neighbor_mass(prior: &[f64; CLASS_COUNT]) -> f64 {
    RiskClass::ALL
        .iter()
        .map(|c| prior[c.index()] / c.neighbors().len() as f64)
        .sum()
}

/// Expected agreement of two annotators who each pick the true class with
/// probability `accuracy` and otherwise a uniformly chosen neighbor.
pub fn expected_agreement(accuracy: f64, prior: &[f64; CLASS_COUNT]) -> f64 {
    let s = neighbor_mass(prior);
    accuracy * accuracy + (1.0 - accuracy).powi(2) * s
}

/// Annotator accuracy whose expected pairwise agreement equals `target`.
///
/// Expected agreement is `a² + (1-a)² S`, minimized at `a = S/(1+S)` with
/// value `S/(1+S)`; the root on the increasing branch is returned.
pub fn calibrate_annotator_accuracy(target: f64, prior: &[f64; CLASS_COUNT]) -> Result<f64> {
    let s = neighbor_mass(prior);
    let floor = (s / (1.0 + s)).max(1.0 / CLASS_COUNT as f64);
    if !(target >= floor && target <= 1.0) {
        return Err(Error::Argument(format!(
            "agreement {target} is unreachable; this prior supports [{floor:.4}, 1]"
        )));
    }
    let disc = (s * s - (1.0 + s) * (s - target)).max(0.0);
    Ok(((s + disc.sqrt()) / (1.0 + s)).min(1.0))
}

fn marker_token(class: RiskClass, j: usize) -> String {
    format!("{}{j}", class.code().to_lowercase())
}

fn filler_token(j: usize) -> String {
    format!("w{j}")
}

/// Majority vote; ties go to the lowest class index.
pub fn majority_vote(votes: &[RiskClass]) -> Option<RiskClass> {
    let mut counts = [0usize; CLASS_COUNT];
    for v in votes {
        counts[v.index()] += 1;
    }
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    counts.iter().position(|&c| c == best).map(|i| RiskClass::ALL[i])
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<SynthRecord>> {
    cfg.validate()?;
    let accuracy = calibrate_annotator_accuracy(cfg.agreement, &cfg.class_prior)?;
    let mut rng = Rng::new(cfg.seed);
    let mut records = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let truth = RiskClass::ALL[rng.categorical(&cfg.class_prior)];
        let neighbors = truth.neighbors();

        let mut true_distribution = [0.0; CLASS_COUNT];
        true_distribution[truth.index()] = accuracy;
        for n in &neighbors {
            true_distribution[n.index()] += (1.0 - accuracy) / neighbors.len() as f64;
        }
        let annotator_votes: Vec<RiskClass> = (0..cfg.annotators)
            .map(|_| RiskClass::ALL[rng.categorical(&true_distribution)])
            .collect();
        let label = majority_vote(&annotator_votes).expect("at least one annotator");

        let len = cfg.min_tokens + rng.below(cfg.max_tokens - cfg.min_tokens + 1);
        let mut is_marker: Vec<bool> = (0..len).map(|_| rng.bernoulli(cfg.marker_rate)).collect();
        if !is_marker.iter().any(|&m| m) {
            let at = rng.below(len);
            is_marker[at] = true;
        }
        let tokens: Vec<String> = is_marker
            .into_iter()
            .map(|marker| {
                if marker {
                    let class = if rng.bernoulli(cfg.marker_strength) {
                        truth
                    } else {
                        neighbors[rng.below(neighbors.len())]
                    };
                    marker_token(class, rng.below(cfg.markers_per_class))
                } else {
                    filler_token(rng.below(cfg.filler_vocab))
                }
            })
            .collect();

        records.push(SynthRecord {
            user_id: format!("user{u:05}"),
            text: tokens.join(" "),
            label,
            true_distribution,
            annotator_votes,
        });
    }
    Ok(records)
}

/// Mean pairwise annotator agreement over a synthetic corpus.
pub fn mean_pairwise_agreement(records: &[SynthRecord]) -> f64 {
    let vals: Vec<f64> = records.iter().filter_map(SynthRecord::pairwise_agreement).collect();
    vals.iter().sum::<f64>() / vals.len().max(1) as f64
}
