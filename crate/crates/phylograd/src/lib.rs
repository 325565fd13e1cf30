//! phylograd: sequence-alignment log-likelihoods and their gradients with
//! respect to all branch-length parameters in linear time, computed by
//! paired post-order/pre-order tree traversals on a block-tiled
//! data-parallel backend, with a quadratic-time oracle and finite
//! differences for verification, and a small HMC sampler driving the
//! gradients end to end.

pub mod backend;
pub mod core;
pub mod hmc;
pub mod model;
pub mod sim;
pub mod treedata;

pub use crate::core::{
    finite_difference_gradient, full_gradient, oracle_gradient_quadratic, EvalError, EvalOptions,
    Evaluator, GradientReport, PartialBuffers,
};
pub use backend::{Backend, BackendConfig, BackendKind};
pub use model::{ModelConfig, ModelInstance};
pub use treedata::{
    compress_patterns, parse_fasta, parse_newick, Alphabet, PatternizedAlignment, Phylogeny,
};
