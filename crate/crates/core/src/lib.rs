//! Peaceman-Rachford splitting on the Fenchel dual for regularized MIMO
//! channel estimation, with a hybrid far/near-field channel simulator,
//! reference estimators, a learned-denoiser runtime and benchmarking tools.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod baselines;
pub mod bench;
pub mod channel;
mod codec;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod metrics;
pub mod model;
pub mod prox;
pub mod resolvent;
pub mod rng;
pub mod selftest;
pub mod solver;

pub use bench::Algorithm;
pub use config::RunConfig;
pub use error::{Error, Result, WeightError};
pub use model::{
    apply_operator, build_real_operator, embed_complex, extract_complex, ComplexVector,
    MeasurementOperator, ProblemInstance, RealEmbedding,
};
pub use prox::{L1SoftThreshold, ProxOperator, ZeroRegularizer};
pub use resolvent::{QuadraticResolvent, ResolventStrategy};
pub use solver::{SolveOutcome, SolverConfig, SolverMode, SolverState, SolverTrace, StopRule};
