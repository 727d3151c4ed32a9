//! Training driver: the large-batch / minibatch / sequence loop for SCVI
//! (finite and HDP) and the SVI baseline, with periodic held-out evaluation.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{minibatches, Corpus, Minibatches, Sampling, Vocab};
use crate::emissions::EmissionPrior;
use crate::engine::{
    build_surrogate, initialize_stats, k_effective, per_step_loglik, step_size_at, with_step, Executor, GlobalStats,
    ModelMode, Schedule,
};
use crate::error::{Error, Result};
use crate::hdp::{expected_tables, update_hdp, HdpPosterior, HdpPriors, TableInputs};
use crate::messages::SurrogateParams;
use crate::metrics::MetricRecord;
use crate::special::GammaParams;
use crate::svi::{blend_rows, svi_message_params, DirichletRows, SviPriors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "scvi-hmm")]
    ScviHmm,
    #[serde(rename = "scvi-hdphmm")]
    ScviHdpHmm,
    #[serde(rename = "svi-hmm")]
    SviHmm,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ScviHmm => "scvi-hmm",
            Algorithm::ScviHdpHmm => "scvi-hdphmm",
            Algorithm::SviHmm => "svi-hmm",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scvi-hmm" => Ok(Algorithm::ScviHmm),
            "scvi-hdphmm" => Ok(Algorithm::ScviHdpHmm),
            "svi-hmm" => Ok(Algorithm::SviHmm),
            other => Err(Error::Config(format!(
                "unknown algorithm `{other}` (expected scvi-hmm, scvi-hdphmm or svi-hmm)"
            ))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Training hyperparameters. Missing fields in a config file take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Number of hidden states, or the truncation level for the HDP-HMM.
    pub states: usize,
    pub kappa: f64,
    pub minibatch: usize,
    /// Sequences between HDP posterior updates.
    pub large_batch: usize,
    pub passes: usize,
    /// Optional wall-clock budget for training, in seconds.
    pub seconds: Option<f64>,
    pub trans_prior: f64,
    pub emit_prior: f64,
    /// Gamma hyperprior (shape, rate) on α.
    pub alpha_prior: (f64, f64),
    /// Gamma hyperprior (shape, rate) on γ.
    pub gamma_prior: (f64, f64),
    pub seed: u64,
    /// Evaluate every this many minibatches, in addition to every pass.
    pub eval_every: Option<u64>,
    /// Evaluate whenever this much training time has passed since the last
    /// evaluation.
    pub eval_seconds: Option<f64>,
    pub sampling: Sampling,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::ScviHmm,
            states: 45,
            kappa: 0.5,
            minibatch: 1000,
            large_batch: 10_000,
            passes: 10,
            seconds: None,
            trans_prior: 0.1,
            emit_prior: 0.1,
            alpha_prior: (1.0, 0.1),
            gamma_prior: (1.0, 0.1),
            seed: 0,
            eval_every: None,
            eval_seconds: None,
            sampling: Sampling::Shuffle,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.states == 0 {
            return Err(Error::Config("states must be at least 1".into()));
        }
        if !(self.kappa >= 0.5 && self.kappa <= 1.0) {
            return Err(Error::Config(format!("kappa = {} must lie in [0.5, 1]", self.kappa)));
        }
        if self.minibatch == 0 {
            return Err(Error::Config("minibatch must be at least 1".into()));
        }
        if self.large_batch < self.minibatch {
            return Err(Error::Config(format!(
                "large_batch ({}) must be at least minibatch ({})",
                self.large_batch, self.minibatch
            )));
        }
        for (name, v) in [("trans_prior", self.trans_prior), ("emit_prior", self.emit_prior)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        self.hdp_priors()?;
        if let Some(s) = self.seconds {
            if !(s >= 0.0) {
                return Err(Error::Config(format!("seconds must be non-negative, got {s}")));
            }
        }
        if self.eval_every == Some(0) {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if let Some(s) = self.eval_seconds {
            if !(s > 0.0) {
                return Err(Error::Config(format!("eval_seconds must be positive, got {s}")));
            }
        }
        Ok(())
    }

    pub fn hdp_priors(&self) -> Result<HdpPriors> {
        let gp = |name: &str, (a, b): (f64, f64)| {
            GammaParams::new(a, b).map_err(|_| Error::Config(format!("{name} must have positive shape and rate, got ({a}, {b})")))
        };
        Ok(HdpPriors {
            alpha: gp("alpha_prior", self.alpha_prior)?,
            gamma: gp("gamma_prior", self.gamma_prior)?,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// The learned state of any of the three algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Scvi {
        stats: GlobalStats,
        mode: ModelMode,
        prior: EmissionPrior,
    },
    Svi {
        rows: DirichletRows,
        priors: SviPriors,
    },
}

impl Model {
    /// Randomly initialized model for `config` over a corpus of
    /// `token_count` tokens and `vocab_size` symbols.
    pub fn initialize(config: &TrainConfig, vocab_size: usize, token_count: usize) -> Result<Self> {
        config.validate()?;
        let prior = EmissionPrior::symmetric(vocab_size, config.emit_prior)?;
        let k = config.states;
        Ok(match config.algorithm {
            Algorithm::ScviHmm => Model::Scvi {
                stats: initialize_stats(k, vocab_size, token_count, config.seed)?,
                mode: ModelMode::FiniteHmm {
                    prior_count: config.trans_prior,
                },
                prior,
            },
            Algorithm::ScviHdpHmm => Model::Scvi {
                stats: initialize_stats(k, vocab_size, token_count, config.seed)?,
                mode: ModelMode::HdpHmm(HdpPosterior::from_prior(k, &config.hdp_priors()?)?),
                prior,
            },
            Algorithm::SviHmm => {
                let priors = SviPriors {
                    trans: config.trans_prior,
                    emit: prior,
                };
                Model::Svi {
                    rows: DirichletRows::initialize(k, &priors, token_count, config.seed)?,
                    priors,
                }
            }
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Model::Scvi {
                mode: ModelMode::FiniteHmm { .. },
                ..
            } => Algorithm::ScviHmm,
            Model::Scvi {
                mode: ModelMode::HdpHmm(_), ..
            } => Algorithm::ScviHdpHmm,
            Model::Svi { .. } => Algorithm::SviHmm,
        }
    }

    pub fn states(&self) -> usize {
        match self {
            Model::Scvi { stats, .. } => stats.states(),
            Model::Svi { rows, .. } => rows.states(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Model::Scvi { stats, .. } => stats.vocab_size(),
            Model::Svi { rows, .. } => rows.vocab_size(),
        }
    }

    /// Parameters used for per-sequence inference during training.
    pub fn inference_params(&self) -> Result<SurrogateParams> {
        match self {
            Model::Scvi { stats, mode, prior } => build_surrogate(stats, mode, prior),
            Model::Svi { rows, .. } => svi_message_params(rows),
        }
    }

    /// Point parameters used for held-out evaluation: the collapsed
    /// surrogate for SCVI, the posterior mean for SVI.
    pub fn eval_params(&self) -> Result<SurrogateParams> {
        match self {
            Model::Scvi { stats, mode, prior } => build_surrogate(stats, mode, prior),
            Model::Svi { rows, .. } => {
                rows.validate()?;
                Ok(rows.mean_params())
            }
        }
    }

    pub fn predictive_log_likelihood(&self, heldout: &[Vec<u32>]) -> Result<f64> {
        per_step_loglik(&self.eval_params()?, heldout)
    }

    pub fn k_effective(&self) -> usize {
        match self {
            Model::Scvi { stats, .. } => k_effective(&stats.trans),
            Model::Svi { rows, priors } => k_effective(&rows.excess_transitions(priors.trans)),
        }
    }
}

/// A model together with everything needed to evaluate or resume it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    /// Minibatches processed.
    pub step: u64,
    /// HDP posterior updates applied.
    pub hdp_step: u64,
    /// Passes over the training data consumed.
    pub passes: f64,
    /// Training wall-clock seconds.
    pub seconds: f64,
    pub vocab: Vocab,
}

/// Stateful driver over one training corpus.
pub struct Trainer<'a> {
    config: TrainConfig,
    corpus: &'a Corpus,
    heldout: &'a [Vec<u32>],
    model: Model,
    schedule: Schedule,
    hdp_step: u64,
    pending: Option<(TableInputs, usize)>,
    exec: Executor,
    stream: Minibatches,
    sequences_seen: u64,
    train_time: Duration,
    last_eval_time: Duration,
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &'a Corpus, heldout: &'a [Vec<u32>], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("training corpus is empty".into()));
        }
        let model = Model::initialize(config, corpus.vocab_size(), corpus.token_count())?;
        Self::resume(corpus, heldout, config, model, 0, 0)
    }

    /// Continues from an existing model and step counters.
    pub fn resume(
        corpus: &'a Corpus,
        heldout: &'a [Vec<u32>],
        config: &TrainConfig,
        model: Model,
        step: u64,
        hdp_step: u64,
    ) -> Result<Self> {
        config.validate()?;
        if model.vocab_size() != corpus.vocab_size() {
            return Err(Error::VocabMismatch {
                model: model.vocab_size(),
                supplied: corpus.vocab_size(),
            });
        }
        let v = corpus.vocab_size();
        if let Some(&w) = heldout.iter().flatten().find(|&&w| w as usize >= v) {
            return Err(Error::OutOfVocabulary { index: w as usize, size: v });
        }
        let mut schedule = Schedule {
            kappa: config.kappa,
            step: 0,
            minibatch_size: config.minibatch,
            large_batch_size: config.large_batch,
        };
        schedule.step = step;
        Ok(Trainer {
            exec: Executor::new(config.threads)?,
            stream: minibatches(corpus.len(), config.minibatch, config.seed, config.sampling)?,
            config: config.clone(),
            corpus,
            heldout,
            model,
            schedule,
            hdp_step,
            pending: None,
            sequences_seen: 0,
            train_time: Duration::ZERO,
            last_eval_time: Duration::ZERO,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn steps(&self) -> u64 {
        self.schedule.step
    }

    /// Passes over the training data consumed so far.
    pub fn passes(&self) -> f64 {
        self.sequences_seen as f64 / self.corpus.len() as f64
    }

    pub fn train_seconds(&self) -> f64 {
        self.train_time.as_secs_f64()
    }

    /// Processes one minibatch (and, at large-batch boundaries, one HDP update).
    pub fn step(&mut self) -> Result<()> {
        let started = Instant::now();
        let indices = self.stream.next().expect("minibatch stream is endless");
        let batch: Vec<&[u32]> = indices.iter().map(|&i| self.corpus.sequences[i].as_slice()).collect();
        let n = self.corpus.len() as f64;
        let scale = n / batch.len() as f64;
        let rho = self.schedule.step_size();
        let step = self.schedule.step;
        let params = self.model.inference_params()?;
        let is_hdp = matches!(self.model.algorithm(), Algorithm::ScviHdpHmm);
        let stats = self.exec.infer_batch(&params, &batch, is_hdp).map_err(|e| with_step(e, step))?;

        match &mut self.model {
            Model::Scvi { stats: global, .. } => {
                global.blend(&stats.local, rho, scale);
                global.validate().map_err(|_| Error::NonFinite { step, sequence: 0 })?;
            }
            Model::Svi { rows, priors } => blend_rows(rows, &stats.local, priors, rho, scale),
        }
        self.schedule.step += 1;
        self.sequences_seen += batch.len() as u64;

        if let Some(tables) = stats.tables {
            let (acc, count) = self.pending.get_or_insert_with(|| (TableInputs::zeros(self.config.states), 0));
            acc.add_assign(&tables);
            *count += stats.sequences;
            if *count >= self.config.large_batch {
                let (acc, count) = self.pending.take().expect("just inserted");
                self.update_hdp(&acc.scaled(1.0 / count as f64), n)?;
            }
        }
        self.train_time += started.elapsed();
        Ok(())
    }

    fn update_hdp(&mut self, inputs: &TableInputs, replicates: f64) -> Result<()> {
        let priors = self.config.hdp_priors()?;
        if let Model::Scvi {
            mode: ModelMode::HdpHmm(post),
            ..
        } = &mut self.model
        {
            let tables = expected_tables(inputs, replicates, post)?;
            let rho = step_size_at(self.hdp_step, self.config.kappa);
            *post = update_hdp(post, &tables, rho, &priors)?;
            self.hdp_step += 1;
        }
        Ok(())
    }

    /// Evaluates the held-out per-time-step log-likelihood now.
    pub fn evaluate(&mut self) -> Result<MetricRecord> {
        let ll = self.model.predictive_log_likelihood(self.heldout)?;
        if !ll.is_finite() {
            return Err(Error::NonFinite {
                step: self.schedule.step,
                sequence: 0,
            });
        }
        self.last_eval_time = self.train_time;
        Ok(MetricRecord {
            step: self.schedule.step,
            pass: self.passes(),
            seconds: self.train_seconds(),
            heldout_ll: ll,
            k_effective: self.model.k_effective(),
        })
    }

    /// Runs the configured number of passes (or until the time budget is
    /// spent), reporting a metric record at start, at every pass boundary and
    /// at the configured intervals. With an empty held-out set no records
    /// are produced.
    pub fn run(&mut self, mut sink: impl FnMut(&MetricRecord) -> Result<()>) -> Result<()> {
        let eval = !self.heldout.is_empty();
        if eval {
            let r = self.evaluate()?;
            sink(&r)?;
        }
        let per_pass = self.stream.batches_per_pass();
        let budget = self.config.seconds.map(Duration::from_secs_f64);
        'passes: for _ in 0..self.config.passes {
            for b in 0..per_pass {
                self.step()?;
                let out_of_time = budget.is_some_and(|t| self.train_time >= t);
                let at_pass_end = b + 1 == per_pass;
                let periodic = self.config.eval_every.is_some_and(|e| self.schedule.step.is_multiple_of(e))
                    || self
                        .config
                        .eval_seconds
                        .is_some_and(|s| (self.train_time - self.last_eval_time).as_secs_f64() >= s);
                if eval && (at_pass_end || periodic || out_of_time) {
                    let r = self.evaluate()?;
                    sink(&r)?;
                }
                if out_of_time {
                    break 'passes;
                }
            }
        }
        Ok(())
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        Checkpoint {
            passes: self.passes(),
            seconds: self.train_seconds(),
            config: self.config,
            model: self.model,
            step: self.schedule.step,
            hdp_step: self.hdp_step,
            vocab: self.corpus.vocab.clone(),
        }
    }
}

/// Trained model plus the metric trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRecord>,
}

/// Trains on `corpus`, evaluating on `heldout`.
pub fn train(corpus: &Corpus, heldout: &[Vec<u32>], config: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(corpus, heldout, config)?;
    let mut metrics = Vec::new();
    trainer.run(|r| {
        metrics.push(r.clone());
        Ok(())
    })?;
    Ok(TrainOutcome {
        checkpoint: trainer.into_checkpoint(),
        metrics,
    })
}
