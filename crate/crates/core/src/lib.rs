//! Joint spectral unmixing, clustering and semi-supervised classification of
//! hyperspectral images by cofactorization, solved with proximal alternating
//! linearized minimization.
//!
//! Pixels are columns: observations `Y` are `L × P`, the dictionary `W` is
//! `L × R`. Class ids are 0-based in the library and 1-based in files.

pub mod cli;
pub mod error;
pub mod init;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod objective;
pub mod parallel;
pub mod prox;
pub mod solver;
pub mod synth;
pub mod types;
pub mod vtv;

pub use error::{Error, Result};
pub use objective::{Block, ObjectiveBreakdown};
pub use solver::{solve, SolveReport, SolverConfig, StopReason};
pub use types::{ClassWeights, Hyperparameters, Problem, SpatialGrid, State, Variant};
