//! FairLink: fairness-enhanced graph learning for link prediction.
//!
//! The library learns a synthetic graph (node features plus a perceptron link
//! generator) whose training gradients track those of an input graph while a
//! dyadic fairness penalty shrinks the gap between intra- and inter-group link
//! probabilities. A link predictor trained on the enhanced graph keeps most of
//! its accuracy but shows substantially smaller demographic-parity and
//! equal-opportunity gaps.
//!
//! Modules:
//! - [`graph`]: attributed graphs, SBM benchmark generation, edge splits;
//! - [`autodiff`]: reverse-mode engine with meta-gradient support;
//! - [`predictor`]: GCN/GraphSAGE/MLP encoders, dot-product decoder, training;
//! - [`fairness`]: dyadic fairness metrics and the differentiable fairness loss;
//! - [`distill`]: the gradient-matching optimization and artifact export;
//! - [`eval`]: metric computation and experiment sweeps;
//! - [`config`]: `key = value` run configuration;
//! - [`cli`]: command-line orchestration.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod distill;
pub mod error;
pub mod eval;
pub mod fairness;
pub mod graph;
pub mod predictor;
pub mod seeds;

pub use error::{Error, Result};
