//! The `scvi` command line: `train`, `eval` and `generate`.
//!
//! Settings resolve as flags, then the `--config` file, then built-in
//! defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, split, OovPolicy, Sampling, Vocab, VocabPolicy};
use crate::error::{Error, Result};
use crate::metrics::{MetricRecord, MetricsWriter};
use crate::persist::{load_model, save_model};
use crate::synthetic::{generate_synthetic, SyntheticSpec};
use crate::train::{Algorithm, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(name = "scvi", version, about = "Stochastic collapsed variational inference for HMMs and HDP-HMMs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a metrics CSV.
    Train(Box<TrainArgs>),
    /// Print the held-out per-time-step log-likelihood of a model.
    Eval(EvalArgs),
    /// Sample a corpus from an HMM described in a TOML file.
    Generate(GenerateArgs),
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training corpus: one sequence per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Held-out corpus; when absent the training corpus is split.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Fixed vocabulary file; unknown tokens map to <unk>.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Output checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,

    /// scvi-hmm, scvi-hdphmm or svi-hmm.
    #[arg(long = "algo")]
    pub algorithm: Option<Algorithm>,
    /// Hidden states (truncation level for scvi-hdphmm).
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long)]
    pub large_batch: Option<usize>,
    #[arg(long)]
    pub passes: Option<usize>,
    /// Training time budget in seconds.
    #[arg(long)]
    pub seconds: Option<f64>,
    #[arg(long)]
    pub trans_prior: Option<f64>,
    #[arg(long)]
    pub emit_prior: Option<f64>,
    #[arg(long)]
    pub alpha_shape: Option<f64>,
    #[arg(long)]
    pub alpha_rate: Option<f64>,
    #[arg(long)]
    pub gamma_shape: Option<f64>,
    #[arg(long)]
    pub gamma_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate every N minibatches as well as every pass.
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Evaluate after this many seconds of training since the last record.
    #[arg(long)]
    pub eval_seconds: Option<f64>,
    /// shuffle or iid.
    #[arg(long)]
    pub sampling: Option<Sampling>,
    /// Worker threads; 1 is bit-for-bit reproducible.
    #[arg(long, env = "SCVI_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary file to use instead of the one stored in the model.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Append a record to this metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// TOML file describing the HMM and corpus shape.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output corpus.
    #[arg(long)]
    pub out: PathBuf,
    /// Output vocabulary file.
    #[arg(long)]
    pub vocab_out: Option<PathBuf>,
    /// Override the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub train_fraction: f64,
    pub model: PathBuf,
    pub metrics: PathBuf,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            test: None,
            vocab: None,
            train_fraction: 0.9,
            model: PathBuf::from("model.scvi"),
            metrics: PathBuf::from("metrics.csv"),
            train: TrainConfig::default(),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl TrainArgs {
    /// Resolves flags over the config file over defaults.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut rc = match &self.config {
            Some(path) => toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($flag:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { $dst = v; })*
            };
        }
        take!(
            train_fraction => rc.train_fraction,
            model => rc.model,
            metrics => rc.metrics,
            algorithm => rc.train.algorithm,
            states => rc.train.states,
            kappa => rc.train.kappa,
            minibatch => rc.train.minibatch,
            large_batch => rc.train.large_batch,
            passes => rc.train.passes,
            trans_prior => rc.train.trans_prior,
            emit_prior => rc.train.emit_prior,
            alpha_shape => rc.train.alpha_prior.0,
            alpha_rate => rc.train.alpha_prior.1,
            gamma_shape => rc.train.gamma_prior.0,
            gamma_rate => rc.train.gamma_prior.1,
            seed => rc.train.seed,
            sampling => rc.train.sampling,
            threads => rc.train.threads,
        );
        if self.corpus.is_some() {
            rc.corpus = self.corpus.clone();
        }
        if self.test.is_some() {
            rc.test = self.test.clone();
        }
        if self.vocab.is_some() {
            rc.vocab = self.vocab.clone();
        }
        if self.seconds.is_some() {
            rc.train.seconds = self.seconds;
        }
        if self.eval_every.is_some() {
            rc.train.eval_every = self.eval_every;
        }
        if self.eval_seconds.is_some() {
            rc.train.eval_seconds = self.eval_seconds;
        }
        rc.train.validate()?;
        Ok(rc)
    }
}

/// Trains, writing the checkpoint and metrics. Returns the metric trace.
pub fn cmd_train(args: &TrainArgs) -> Result<Vec<MetricRecord>> {
    let rc = args.resolve()?;
    let corpus_path = rc.corpus.as_ref().ok_or_else(|| Error::Config("no training corpus given (--corpus)".into()))?;
    let policy = match &rc.vocab {
        Some(v) => VocabPolicy::Frozen {
            vocab: Vocab::load(v)?,
            oov: OovPolicy::Unk,
        },
        None => VocabPolicy::Build,
    };
    let (corpus, _) = load_corpus(corpus_path, &policy)?;
    let (train_corpus, heldout) = match &rc.test {
        Some(test) => {
            let frozen = VocabPolicy::Frozen {
                vocab: corpus.vocab.clone(),
                oov: OovPolicy::Unk,
            };
            let (test_corpus, _) = load_corpus(test, &frozen)?;
            (corpus, test_corpus.sequences)
        }
        None => {
            let (tr, te) = split(&corpus, rc.train_fraction, rc.train.seed)?;
            (tr, te.sequences)
        }
    };

    let mut writer = MetricsWriter::create(&rc.metrics)?;
    let mut metrics = Vec::new();
    let mut trainer = Trainer::new(&train_corpus, &heldout, &rc.train)?;
    trainer.run(|r| {
        writer.write(r)?;
        metrics.push(r.clone());
        Ok(())
    })?;
    save_model(&rc.model, &trainer.into_checkpoint())?;
    Ok(metrics)
}

/// Evaluates a checkpoint on a corpus; returns the per-time-step log-likelihood.
pub fn cmd_eval(args: &EvalArgs) -> Result<f64> {
    let ck = load_model(&args.model)?;
    let vocab = match &args.vocab {
        Some(path) => {
            let v = Vocab::load(path)?;
            if v.len() != ck.model.vocab_size() {
                return Err(Error::VocabMismatch {
                    model: ck.model.vocab_size(),
                    supplied: v.len(),
                });
            }
            v
        }
        None => ck.vocab.clone(),
    };
    let oov = if vocab.has_unk() { OovPolicy::Unk } else { OovPolicy::Error };
    let (corpus, _) = load_corpus(&args.corpus, &VocabPolicy::Frozen { vocab, oov })?;
    let ll = ck.model.predictive_log_likelihood(&corpus.sequences)?;
    if let Some(path) = &args.metrics {
        MetricsWriter::append(path)?.write(&MetricRecord {
            step: ck.step,
            pass: ck.passes,
            seconds: ck.seconds,
            heldout_ll: ll,
            k_effective: ck.model.k_effective(),
        })?;
    }
    Ok(ll)
}

/// Samples a corpus and writes it (and optionally its vocabulary).
pub fn cmd_generate(args: &GenerateArgs) -> Result<usize> {
    let mut spec = SyntheticSpec::from_toml(&read_text(&args.spec)?)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (corpus, _) = generate_synthetic(&spec)?;
    corpus.save(&args.out)?;
    if let Some(path) = &args.vocab_out {
        corpus.vocab.save(path)?;
    }
    Ok(corpus.len())
}

/// Entry point shared by the binary: parses `args` and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => e.exit(),
        _ => Error::Config(e.to_string()),
    })?;
    match cli.command {
        Command::Train(a) => {
            let metrics = cmd_train(&a)?;
            if let Some(last) = metrics.last() {
                eprintln!(
                    "step {} pass {:.2}: held-out log-likelihood {:.6} per token, {} effective states",
                    last.step, last.pass, last.heldout_ll, last.k_effective
                );
            }
        }
        Command::Eval(a) => println!("{}", cmd_eval(&a)?),
        Command::Generate(a) => {
            let n = cmd_generate(&a)?;
            eprintln!("wrote {n} sequences to {}", a.out.display());
        }
    }
    Ok(())
}
