//! Black-box insertion attacks on recurrent API-sequence malware classifiers.
//!
//! A generator reads a malware API sequence and, after each original call,
//! decodes a short piece of extra calls (or the null symbol). Gumbel-Softmax
//! makes the inserted pieces differentiable, so a substitute classifier fit to
//! the victim's hard labels can pass gradients back to the generator.
//!
//! * [`autodiff`]: tape-based reverse-mode differentiation, Adam, gradient checks.
//! * [`seqnets`]: LSTM classifiers and the six victim variants.
//! * [`attack`]: generator, Gumbel-Softmax, substitute and the training loop.
//! * [`corpus`]: synthetic planted-motif corpora and the five-way split.
//! * [`eval`]: AUC, detection rates, transfer matrices, CSV reports.
//! * [`cli`]: config files and the `seqadv` subcommands.

pub mod attack;
pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod seqnets;

pub use error::{Error, Result};
