//! Bayesian nonparametric modeling of higher-order Markov chains.
//!
//! The transition law of a categorical sequence is factorized through
//! per-lag soft clusterings of the lag values and a shared pool of
//! Dirichlet-process kernels. A collapsed Gibbs sampler explores the number
//! of clusters per lag, so lags whose values all fall in one cluster drop
//! out of the model. Posterior summaries give lag inclusion proportions,
//! order distributions, Bayes factors for lag hypotheses and one-step
//! predictions.
//!
//! Categories are 0-based throughout the library; lag `j` (1-based in all
//! user-facing text) is stored at index `j - 1`.

pub mod error;
pub mod inference;
pub mod init;
pub mod model;
pub mod random;
pub mod sampler;
pub mod seqdata;
pub mod simgen;
pub mod special;

pub use error::{Error, Result};
pub use inference::{ChainMeta, ChainSample, Hypothesis, HypothesisTest, PosteriorChain};
pub use model::{Hyperparams, LatentState, RatioMode, Schedule, TransitionModel, TransitionTensor};
pub use sampler::{fit, run_chain, ChainOptions, Fit};
pub use seqdata::{Alphabet, EncodedSequence, Format, SequenceData};
