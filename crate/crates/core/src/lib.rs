//! Markov random field inference over region x gene x time expression data.
//!
//! The crate answers two questions about a spatio-temporal transcriptome:
//! which (region, gene, period) cells are expressed, and which (region, gene,
//! period transition) cells are differentially expressed. Both use a binary
//! pairwise MRF prior over the lattice, fitted by Monte Carlo EM with Gibbs
//! sampling and pseudolikelihood M-steps.

pub mod de;
pub mod emission;
pub mod error;
pub mod io;
pub mod lattice;
pub mod mcem;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod sim;

pub use error::{Error, ErrorCategory, Result};
pub use lattice::{build_edges, Cell, LatentGrid, LatticeShape};
pub use model::{DeMrfParams, MrfParams, Prior, RegionGroup};
