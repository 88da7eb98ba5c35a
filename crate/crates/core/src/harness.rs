//! Multi-seed comparison of labelling conditions.
//!
//! For every `(condition, seed)` cell the corpus is split, a vocabulary is
//! built from the training texts, training labels are produced by the
//! condition, a fresh model is trained, and its argmax predictions are scored
//! against the hard labels of the held-out split.
//!
//! Seeds for the split, the model initialization, and the shuffling/dropout
//! stream are derived from the experiment seed alone, so every condition sees
//! the same split and starting weights for a given seed.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{self, PostRecord, SynthConfig, SynthRecord};
use crate::error::{Error, Result};
use crate::labels::LabelDistribution;
use crate::metrics::{BalancedWeighting, ConfusionMatrix, MetricsReport};
use crate::model::{self, save_checkpoint, Classifier, Dropout, ModelConfig, TrainConfig};
use crate::numerics::Rng;
use crate::smoothing::{run_smoothing_condition, write_labels_csv, SmoothingConfig};
use crate::textpipe::{encode, tokenize, EncodedPost, Vocabulary};

pub const SCHEMA_VERSION: u32 = 1;

const SEED_SPLIT: u64 = 10;
const SEED_INIT: u64 = 11;
const SEED_TRAIN: u64 = 12;
const SEED_SMOOTH: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// JSON-lines file; a synthetic file also enables label-fidelity output.
    Path(PathBuf),
    Synthetic(SynthConfig),
}

fn default_conditions() -> Vec<SmoothingConfig> {
    vec![
        SmoothingConfig::Hard,
        SmoothingConfig::Uniform { alpha: 0.1 },
        SmoothingConfig::Uniform { alpha: 0.05 },
        SmoothingConfig::bayesian(0.1, 100),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub corpus: CorpusSource,
    /// `vocab_size` is replaced by the size of the vocabulary built per seed.
    pub model: ModelConfig,
    /// `seed` is replaced by a per-seed derived value.
    pub train: TrainConfig,
    pub conditions: Vec<SmoothingConfig>,
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub max_vocab: usize,
    pub weighting: BalancedWeighting,
    pub save_checkpoints: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            corpus: CorpusSource::Synthetic(SynthConfig::default()),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            conditions: default_conditions(),
            seeds: vec![1, 2, 3, 4, 5],
            test_fraction: 0.2,
            max_vocab: 5000,
            weighting: BalancedWeighting::InverseFrequency,
            save_checkpoints: true,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {}; expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.conditions.is_empty() {
            return Err(Error::Config("at least one condition is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut names: Vec<String> = self.conditions.iter().map(SmoothingConfig::name).collect();
        names.sort();
        names.dedup();
        if names.len() != self.conditions.len() {
            return Err(Error::Config("condition names must be distinct".into()));
        }
        for c in &self.conditions {
            c.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let CorpusSource::Synthetic(s) = &self.corpus {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.max_vocab < 3 {
            return Err(Error::Config(format!("max_vocab must be at least 3, got {}", self.max_vocab)));
        }
        // vocab_size is filled in later; check the rest with a placeholder
        ModelConfig { vocab_size: self.max_vocab, ..self.model.clone() }.validate()
    }
}

/// Corpus as loaded, with generator ground truth when available.
pub struct LoadedCorpus {
    pub posts: Vec<PostRecord>,
    pub truth: Option<Vec<LabelDistribution>>,
}

fn from_synthetic(records: Vec<SynthRecord>) -> Result<LoadedCorpus> {
    let truth = records
        .iter()
        .map(SynthRecord::true_label_distribution)
        .collect::<Result<_>>()?;
    Ok(LoadedCorpus {
        posts: records.iter().map(SynthRecord::post).collect(),
        truth: Some(truth),
    })
}

pub fn load_source(source: &CorpusSource) -> Result<LoadedCorpus> {
    match source {
        CorpusSource::Synthetic(cfg) => from_synthetic(corpus::generate_synthetic(cfg)?),
        CorpusSource::Path(path) => match corpus::load_synthetic(path) {
            Ok(records) => from_synthetic(records),
            Err(_) => Ok(LoadedCorpus {
                posts: corpus::load_corpus(path)?,
                truth: None,
            }),
        },
    }
}

/// Split, vocabulary, and encodings shared by all conditions of one seed.
pub struct SeedData {
    pub seed: u64,
    pub vocab: Vocabulary,
    pub model: ModelConfig,
    pub train_ids: Vec<String>,
    pub train_posts: Vec<EncodedPost>,
    pub train_labels: Vec<usize>,
    pub train_truth: Option<Vec<LabelDistribution>>,
    pub test_posts: Vec<EncodedPost>,
    pub test_labels: Vec<usize>,
}

impl SeedData {
    pub fn prepare(cfg: &ExperimentConfig, corpus: &LoadedCorpus, seed: u64) -> Result<Self> {
        let labels: Vec<_> = corpus.posts.iter().map(|p| p.label).collect();
        let (train, test) =
            corpus::split_indices(&labels, cfg.test_fraction, Rng::derive(seed, SEED_SPLIT))?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Argument("split left an empty partition".into()));
        }
        let tokens: Vec<Vec<String>> = corpus.posts.iter().map(|p| tokenize(&p.text)).collect();
        let train_tokens: Vec<Vec<String>> = train.iter().map(|&i| tokens[i].clone()).collect();
        let vocab = Vocabulary::build(&train_tokens, cfg.max_vocab)?;
        let model = ModelConfig {
            vocab_size: vocab.size(),
            ..cfg.model.clone()
        };
        let enc = |idx: &[usize]| -> Vec<EncodedPost> {
            idx.iter().map(|&i| encode(&tokens[i], &vocab, model.max_len)).collect()
        };
        Ok(SeedData {
            seed,
            train_ids: train.iter().map(|&i| corpus.posts[i].user_id.clone()).collect(),
            train_posts: enc(&train),
            train_labels: train.iter().map(|&i| labels[i].index()).collect(),
            train_truth: corpus
                .truth
                .as_ref()
                .map(|t| train.iter().map(|&i| t[i]).collect()),
            test_posts: enc(&test),
            test_labels: test.iter().map(|&i| labels[i].index()).collect(),
            vocab,
            model,
        })
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            seed: Rng::derive(self.seed, SEED_TRAIN),
            ..*base
        }
    }

    pub fn init_seed(&self) -> u64 {
        Rng::derive(self.seed, SEED_INIT)
    }

    pub fn smoothing_seed(&self) -> u64 {
        Rng::derive(self.seed, SEED_SMOOTH)
    }
}

/// Everything produced by one `(condition, seed)` cell.
pub struct CellOutput {
    pub labels: Vec<LabelDistribution>,
    pub model: Classifier,
    pub report: MetricsReport,
}

pub fn evaluate(
    model: &Classifier,
    posts: &[EncodedPost],
    labels: &[usize],
    weighting: BalancedWeighting,
) -> Result<MetricsReport> {
    let predicted = posts
        .iter()
        .map(|p| model.forward(p, Dropout::Off).map(|d| d.argmax()))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_confusion(&ConfusionMatrix::from_labels(labels, &predicted)?, weighting)
}

pub fn run_cell(
    cfg: &ExperimentConfig,
    data: &SeedData,
    condition: &SmoothingConfig,
) -> Result<CellOutput> {
    let train_cfg = data.train_config(&cfg.train);
    let labelled = run_smoothing_condition(
        condition,
        &data.train_posts,
        &data.train_labels,
        &data.model,
        &train_cfg,
        data.smoothing_seed(),
    )?;
    let (model, _) = model::train(&data.model, data.init_seed(), &labelled, &train_cfg)?;
    let report = evaluate(&model, &data.test_posts, &data.test_labels, cfg.weighting)?;
    Ok(CellOutput {
        labels: labelled.into_iter().map(|(_, l)| l).collect(),
        model,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub condition: String,
    pub seed: u64,
    /// The failure message when the cell aborted.
    pub outcome: std::result::Result<MetricsReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSummary {
    pub condition: String,
    pub completed: usize,
    pub failed: usize,
    /// Per [`MetricsReport::CSV_COLUMNS`] entry: (mean, sample stddev).
    pub stats: [(f64, f64); 5],
}

/// Mean KL(true ‖ training label) for one cell of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityRow {
    pub condition: String,
    pub seed: u64,
    pub mean_kl: f64,
    /// The same quantity for the hard one-hot labels of that split.
    pub hard_kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<ConditionSummary>,
    pub fidelity: Vec<FidelityRow>,
}

impl ExperimentOutcome {
    pub fn summary_for(&self, condition: &str) -> Option<&ConditionSummary> {
        self.summary.iter().find(|s| s.condition == condition)
    }

    pub fn fidelity_for(&self, condition: &str) -> Vec<&FidelityRow> {
        self.fidelity.iter().filter(|f| f.condition == condition).collect()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

pub fn summarize(conditions: &[String], rows: &[ResultRow]) -> Vec<ConditionSummary> {
    conditions
        .iter()
        .map(|name| {
            let reports: Vec<&MetricsReport> = rows
                .iter()
                .filter(|r| &r.condition == name)
                .filter_map(|r| r.outcome.as_ref().ok())
                .collect();
            let failed = rows
                .iter()
                .filter(|r| &r.condition == name && r.outcome.is_err())
                .count();
            let mut stats = [(0.0, 0.0); 5];
            for (j, s) in stats.iter_mut().enumerate() {
                let vals: Vec<f64> = reports.iter().map(|r| r.summary_values()[j]).collect();
                *s = mean_std(&vals);
            }
            ConditionSummary {
                condition: name.clone(),
                completed: reports.len(),
                failed,
                stats,
            }
        })
        .collect()
}

fn mean_kl(truth: &[LabelDistribution], labels: &[LabelDistribution]) -> f64 {
    truth
        .iter()
        .zip(labels)
        .map(|(t, l)| t.kl_divergence(l))
        .sum::<f64>()
        / truth.len() as f64
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("condition,seed,{}\n", MetricsReport::CSV_COLUMNS.join(","));
    for r in rows {
        match &r.outcome {
            Ok(m) => writeln!(out, "{},{},{}", r.condition, r.seed, m.csv_fields()),
            Err(_) => writeln!(out, "{},{},NaN,NaN,NaN,NaN,NaN", r.condition, r.seed),
        }
        .unwrap();
    }
    out
}

pub fn summary_csv(summary: &[ConditionSummary]) -> String {
    let mut out = String::from("condition,completed,failed");
    for c in MetricsReport::CSV_COLUMNS {
        write!(out, ",{c}_mean,{c}_std").unwrap();
    }
    out.push('\n');
    for s in summary {
        write!(out, "{},{},{}", s.condition, s.completed, s.failed).unwrap();
        for (m, sd) in s.stats {
            write!(out, ",{m},{sd}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Human-readable `mean ± stddev` table.
pub fn summary_table(summary: &[ConditionSummary]) -> String {
    let mut out = format!("{:<16}", "condition");
    for c in MetricsReport::CSV_COLUMNS {
        write!(out, " {c:>28}").unwrap();
    }
    out.push('\n');
    for s in summary {
        write!(out, "{:<16}", s.condition).unwrap();
        for (m, sd) in s.stats {
            write!(out, " {:>28}", format!("{m:.4} ± {sd:.4}")).unwrap();
        }
        out.push('\n');
    }
    out
}

fn fidelity_csv(rows: &[FidelityRow]) -> String {
    let mut out = String::from("condition,seed,mean_kl,hard_kl\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.condition, r.seed, r.mean_kl, r.hard_kl).unwrap();
    }
    out
}

fn write_cell_artifacts(out_dir: &Path, name: &str, data: &SeedData, cell: &CellOutput, checkpoint: bool) -> Result<()> {
    let labels_path = out_dir.join(format!("labels_{name}_seed{}.csv", data.seed));
    write_labels_csv(BufWriter::new(fs::File::create(labels_path)?), &data.train_ids, &cell.labels)?;
    if checkpoint {
        save_checkpoint(&cell.model, out_dir.join(format!("model_{name}_seed{}.ckpt", data.seed)))?;
    }
    Ok(())
}

/// Runs every `(condition, seed)` cell and writes `results.csv`,
/// `summary.csv`, per-cell label CSVs and checkpoints, per-seed vocabularies,
/// and (for synthetic corpora) `label_fidelity.csv` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let corpus = load_source(&cfg.corpus)?;
    let names: Vec<String> = cfg.conditions.iter().map(SmoothingConfig::name).collect();

    let mut rows = Vec::new();
    let mut fidelity = Vec::new();
    for &seed in &cfg.seeds {
        let data = match SeedData::prepare(cfg, &corpus, seed) {
            Ok(d) => d,
            Err(e) => {
                log::error!("seed {seed}: {e}");
                rows.extend(names.iter().map(|n| ResultRow {
                    condition: n.clone(),
                    seed,
                    outcome: Err(e.to_string()),
                }));
                continue;
            }
        };
        data.vocab.save(out_dir.join(format!("vocab_seed{seed}.txt")))?;
        for (condition, name) in cfg.conditions.iter().zip(&names) {
            log::info!("running {name} with seed {seed}");
            let outcome = run_cell(cfg, &data, condition).and_then(|cell| {
                write_cell_artifacts(out_dir, name, &data, &cell, cfg.save_checkpoints)?;
                if let Some(truth) = &data.train_truth {
                    let hard: Vec<LabelDistribution> = data
                        .train_labels
                        .iter()
                        .map(|&c| LabelDistribution::one_hot(c))
                        .collect::<Result<_>>()?;
                    fidelity.push(FidelityRow {
                        condition: name.clone(),
                        seed,
                        mean_kl: mean_kl(truth, &cell.labels),
                        hard_kl: mean_kl(truth, &hard),
                    });
                }
                Ok(cell.report)
            });
            if let Err(e) = &outcome {
                log::error!("{name} seed {seed}: {e}");
            }
            rows.push(ResultRow {
                condition: name.clone(),
                seed,
                outcome: outcome.map_err(|e| e.to_string()),
            });
        }
    }

    let rank = |n: &str| names.iter().position(|x| x == n).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| rank(&a.condition).cmp(&rank(&b.condition)).then(a.seed.cmp(&b.seed)));
    fidelity.sort_by(|a, b| rank(&a.condition).cmp(&rank(&b.condition)).then(a.seed.cmp(&b.seed)));

    let summary = summarize(&names, &rows);
    fs::write(out_dir.join("results.csv"), results_csv(&rows))?;
    fs::write(out_dir.join("summary.csv"), summary_csv(&summary))?;
    let failures: String = rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().err().map(|e| format!("{},{},{e}\n", r.condition, r.seed)))
        .collect();
    if !failures.is_empty() {
        fs::write(out_dir.join("failures.csv"), format!("condition,seed,error\n{failures}"))?;
    }
    if !fidelity.is_empty() {
        fs::write(out_dir.join("label_fidelity.csv"), fidelity_csv(&fidelity))?;
    }
    Ok(ExperimentOutcome {
        rows,
        summary,
        fidelity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            corpus: CorpusSource::Synthetic(SynthConfig {
                users: 60,
                agreement: 1.0,
                marker_strength: 1.0,
                min_tokens: 8,
                max_tokens: 12,
                marker_rate: 0.3,
                ..SynthConfig::default()
            }),
            model: ModelConfig {
                emb_dim: 8,
                conv1_filters: 4,
                conv2_filters: 4,
                max_len: 12,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                learning_rate: 0.1,
                batch_size: 4,
                epochs: 3,
                seed: 0,
            },
            conditions: vec![SmoothingConfig::Hard, SmoothingConfig::bayesian(0.1, 5)],
            seeds: vec![1, 2],
            save_checkpoints: false,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_defaults_and_json() {
        let cfg = ExperimentConfig::from_json(r#"{"schema_version":1,"seeds":[3]}"#).unwrap();
        assert_eq!(cfg.seeds, vec![3]);
        assert_eq!(cfg.conditions.len(), 4);
        assert!(ExperimentConfig::from_json(r#"{"schema_version":2}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"seeds":[]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"conditions":[]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"bogus":1}"#).is_err());
        let round: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&tiny_config()).unwrap()).unwrap();
        assert_eq!(round, tiny_config());
    }

    #[test]
    fn one_row_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&tiny_config(), dir.path()).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert_eq!(out.fidelity.len(), 4);
        assert_eq!(out.summary.len(), 2);
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert!(csv.starts_with(
            "condition,seed,accuracy,weighted_balanced_accuracy,macro_precision,macro_recall,micro_precision\nhard,1,"
        ));
        assert!(dir.path().join("labels_bayesian_0.1_seed2.csv").exists());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn failed_cells_are_recorded() {
        let rows = vec![
            ResultRow { condition: "hard".into(), seed: 1, outcome: Err("boom".into()) },
        ];
        assert!(results_csv(&rows).ends_with("hard,1,NaN,NaN,NaN,NaN,NaN\n"));
        let s = summarize(&["hard".into()], &rows);
        assert_eq!((s[0].completed, s[0].failed), (0, 1));
    }
}
