//! Bayesian distributed-lag non-linear models (DLNM) for areal count
//! panels, with finite-mixture clustering of exposure–lag-response surfaces
//! and spatially-smoothed cluster assignment.
//!
//! The crate provides:
//! - natural cubic spline bases and the exposure×lag cross-basis
//!   ([`spline`]);
//! - adjacency graphs and intrinsic CAR quantities ([`graph`]);
//! - the negative binomial model with BYM spatial and RW2 temporal random
//!   effects, in standard, flat-mixture, and spatial-mixture variants
//!   ([`model`]);
//! - an adaptive Metropolis-within-Gibbs sampler with checkpointing and
//!   post-hoc relabeling ([`sampler`]);
//! - posterior products: relative-risk surfaces, cumulative relative risk,
//!   WAIC, membership entropy, and effect summaries ([`outputs`]);
//! - a forward simulator and recovery scoring for validation ([`sim`]);
//! - file formats and run configuration for the CLI ([`io`], [`config`]).
//!
//! Numeric kernels are generic over [`num::Scalar`] (`f32`/`f64`); the
//! sampling pipeline itself runs at [`Real`] precision.

pub mod assign;
pub mod config;
pub mod graph;
pub mod io;
pub mod model;
pub mod num;
pub mod outputs;
pub mod sampler;
pub mod sim;
pub mod spline;

/// Scalar type of the fitting pipeline.
pub type Real = f64;

/// Cross-basis at pipeline precision.
pub type CrossBasis = spline::CrossBasis<Real>;
/// Cross-basis spec at pipeline precision.
pub type CrossBasisSpec = spline::CrossBasisSpec<Real>;
/// Spline spec at pipeline precision.
pub type SplineSpec = spline::SplineSpec<Real>;

pub use graph::AdjacencyGraph;
pub use model::{ModelSpec, PanelDataset, ParameterState, PriorSpec, Variant};
pub use sampler::{PosteriorDraws, Sampler, SamplerConfig};
