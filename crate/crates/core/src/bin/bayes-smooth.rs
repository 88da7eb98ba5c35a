use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bayes_smooth::corpus::{self, SynthConfig};
use bayes_smooth::harness::{self, ExperimentConfig, LoadedCorpus, SeedData};
use bayes_smooth::metrics::BalancedWeighting;
use bayes_smooth::model::{load_checkpoint, save_checkpoint, ModelConfig};
use bayes_smooth::smoothing::{bayesian_smooth_labels, write_labels_csv, SmoothingConfig};
use bayes_smooth::textpipe::{encode, tokenize, Vocabulary};
use bayes_smooth::{Error, Result};

#[derive(Parser)]
#[command(name = "bayes-smooth", version, about = "Label-smoothing experiments for risk-level text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic JSON-lines corpus.
    Generate {
        /// Generator settings (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one condition (the first in the config) on one split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit Bayesian soft labels for the whole corpus as CSV.
    Smooth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a corpus and print the metrics as JSON.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "inverse-frequency")]
        weighting: Weighting,
        /// Also write the metrics JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every condition over every seed.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Weighting {
    InverseFrequency,
    Uniform,
}

fn load_experiment(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable value")
}

fn generate(config: Option<PathBuf>, seed: Option<u64>, out: PathBuf) -> Result<()> {
    let mut cfg = match config {
        Some(p) => serde_json::from_str::<SynthConfig>(&fs::read_to_string(&p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let records = corpus::generate_synthetic(&cfg)?;
    corpus::save_synthetic(&out, &records)?;
    println!(
        "wrote {} records to {} (mean pairwise agreement {:.4})",
        records.len(),
        out.display(),
        corpus::mean_pairwise_agreement(&records)
    );
    Ok(())
}

fn train(config: PathBuf, seed: Option<u64>, out: PathBuf) -> Result<()> {
    let cfg = load_experiment(&config, seed)?;
    cfg.validate()?;
    fs::create_dir_all(&out)?;
    let corpus = harness::load_source(&cfg.corpus)?;
    let data = SeedData::prepare(&cfg, &corpus, cfg.seeds[0])?;
    let condition = &cfg.conditions[0];
    let cell = harness::run_cell(&cfg, &data, condition)?;
    save_checkpoint(&cell.model, out.join("model.ckpt"))?;
    data.vocab.save(out.join("vocab.txt"))?;
    write_labels_csv(BufWriter::new(fs::File::create(out.join("labels.csv"))?), &data.train_ids, &cell.labels)?;
    let json = to_json(&cell.report);
    fs::write(out.join("metrics.json"), &json)?;
    println!("{json}");
    Ok(())
}

fn smooth(config: PathBuf, seed: Option<u64>, out: PathBuf) -> Result<()> {
    let cfg = load_experiment(&config, seed)?;
    let LoadedCorpus { posts, .. } = harness::load_source(&cfg.corpus)?;
    let (alpha, passes, pure, rounds) = cfg
        .conditions
        .iter()
        .find_map(|c| match *c {
            SmoothingConfig::Bayesian { alpha, passes, pure, rounds } => Some((alpha, passes, pure, rounds)),
            _ => None,
        })
        .unwrap_or((0.1, 100, false, 1));
    let tokens: Vec<Vec<String>> = posts.iter().map(|p| tokenize(&p.text)).collect();
    let vocab = Vocabulary::build(&tokens, cfg.max_vocab)?;
    let model = ModelConfig {
        vocab_size: vocab.size(),
        ..cfg.model.clone()
    };
    let encoded: Vec<_> = tokens.iter().map(|t| encode(t, &vocab, model.max_len)).collect();
    let hard: Vec<usize> = posts.iter().map(|p| p.label.index()).collect();
    let seed = cfg.seeds[0];
    let train_cfg = bayes_smooth::model::TrainConfig { seed, ..cfg.train };
    let result = bayesian_smooth_labels(&encoded, &hard, &model, &train_cfg, alpha, passes, pure, rounds, seed)?;
    let ids: Vec<String> = posts.iter().map(|p| p.user_id.clone()).collect();
    write_labels_csv(BufWriter::new(fs::File::create(&out)?), &ids, &result.labels)?;
    println!("wrote {} soft labels to {}", ids.len(), out.display());
    Ok(())
}

fn evaluate(checkpoint: PathBuf, vocab: PathBuf, corpus_path: PathBuf, weighting: Weighting, out: Option<PathBuf>) -> Result<()> {
    let model = load_checkpoint(&checkpoint)?;
    let vocab = Vocabulary::load(&vocab)?;
    if vocab.size() > model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} ids but the checkpoint embeds {}",
            vocab.size(),
            model.config.vocab_size
        )));
    }
    let posts = corpus::load_corpus(&corpus_path)?;
    let encoded: Vec<_> = posts
        .iter()
        .map(|p| encode(&tokenize(&p.text), &vocab, model.config.max_len))
        .collect();
    let labels: Vec<usize> = posts.iter().map(|p| p.label.index()).collect();
    let weighting = match weighting {
        Weighting::InverseFrequency => BalancedWeighting::InverseFrequency,
        Weighting::Uniform => BalancedWeighting::Uniform,
    };
    let report = harness::evaluate(&model, &encoded, &labels, weighting)?;
    let json = to_json(&report);
    if let Some(p) = out {
        fs::write(p, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn experiment(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_experiment(&config, seed)?;
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    let outcome = harness::run_experiment(&cfg, &out)?;
    print!("{}", harness::summary_table(&outcome.summary));
    let failed = outcome.rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        return Err(Error::Training(format!(
            "{failed} of {} cells failed; see {}",
            outcome.rows.len(),
            out.join("failures.csv").display()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, seed, out } => generate(config, seed, out),
        Command::Train { config, seed, out } => train(config, seed, out),
        Command::Smooth { config, seed, out } => smooth(config, seed, out),
        Command::Evaluate { checkpoint, vocab, corpus, weighting, out } => {
            evaluate(checkpoint, vocab, corpus, weighting, out)
        }
        Command::Experiment { config, seed, out } => experiment(config, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
