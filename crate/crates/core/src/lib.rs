//! Mean-field analysis of Markov population processes.
//!
//! A model is a finite set of agent states with per-agent transition rates
//! written as expressions of the occupancy measure `m` and the population
//! size `N`. From it the crate builds the drift and its Poisson-averaged
//! variant, integrates the corresponding ODEs, solves the exact lumped chain
//! by uniformization and runs stochastic simulations with the diagnostics
//! needed to compare all of them.

pub mod compare;
pub mod drift;
pub mod error;
pub mod exact;
pub mod expr;
pub mod meandrift;
pub mod model;
pub mod odesolve;
pub mod sim;

pub use compare::{compare, CompareOptions, CompareRow, SimColumn};
pub use drift::{drift, intensity, limit_drift, FieldKind, LimitMode, VectorField};
pub use error::{Error, ErrorKind, Result};
pub use exact::{LumpedDistribution, LumpedStateSpace, SparseGenerator};
pub use expr::Expr;
pub use meandrift::{mean_drift, MeanDriftField};
pub use model::{builtin_example, load_model, CountVector, ModelSpec, OccupancyMeasure, StateId, ValidationReport};
pub use odesolve::{solve, Trajectory, Variant};
pub use sim::{ensemble, GeneratorReport, Path, SimConfig, SimMode, SimStats};
