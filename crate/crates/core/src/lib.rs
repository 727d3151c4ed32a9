//! Stochastic collapsed variational inference (SCVI) for hidden Markov
//! models and HDP-HMMs over discrete sequence corpora.
//!
//! The collapsed model keeps only expected transition counts and emission
//! statistics ([`engine::GlobalStats`]). Each minibatch builds point
//! surrogate parameters from them, runs forward–backward per sequence
//! ([`messages`]), and folds the rescaled local statistics back in with a
//! decaying step size. For HDP-HMMs the stick-breaking posterior and the
//! concentration parameters are updated after every large batch from
//! expected table counts ([`hdp`]). An uncollapsed SVI baseline ([`svi`])
//! shares the same message passing.
//!
//! ```
//! use scvi::corpus::Corpus;
//! use scvi::synthetic::{generate_synthetic, SyntheticSpec};
//! use scvi::train::{train, Algorithm, TrainConfig};
//!
//! let spec = SyntheticSpec::random(2, 6, 0.5, 0.3, 120, 5, 10, 1).unwrap();
//! let (corpus, truth) = generate_synthetic(&spec).unwrap();
//! let (tr, te) = scvi::corpus::split(&corpus, 0.9, 0).unwrap();
//! let config = TrainConfig {
//!     algorithm: Algorithm::ScviHmm,
//!     states: 2,
//!     kappa: 0.7,
//!     minibatch: 10,
//!     large_batch: 10,
//!     passes: 3,
//!     ..TrainConfig::default()
//! };
//! let out = train(&tr, &te.sequences, &config).unwrap();
//! let ll = out.metrics.last().unwrap().heldout_ll;
//! assert!(ll <= truth.per_step_loglik(&te.sequences).unwrap() + 0.5);
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod emissions;
pub mod engine;
pub mod error;
pub mod hdp;
pub mod messages;
pub mod metrics;
pub mod persist;
pub mod special;
pub mod svi;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
