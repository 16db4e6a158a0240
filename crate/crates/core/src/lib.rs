//! Branching processes in i.i.d. random environments: offspring and
//! environment laws, trajectory simulation, weighted-moment criteria and
//! estimators, and slowly varying weight functions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod engine;
pub mod environment;
pub mod estimate;
pub mod offspring;
pub mod output;
pub mod quad;
pub mod scalar;
pub mod scenario;
pub mod slowvary;
pub mod weight;

pub use scalar::{Extended, Real};

pub type EnvironmentLaw = environment::EnvironmentLaw<f64>;
pub type OffspringLaw = offspring::OffspringLaw<f64>;
pub type Trajectory = engine::Trajectory<f64>;
pub type SlowVaryFn = slowvary::SlowVaryFn<f64>;
pub type WeightFn = slowvary::WeightFn<f64>;
pub type EnvironmentLawF32 = environment::EnvironmentLaw<f32>;
pub type OffspringLawF32 = offspring::OffspringLaw<f32>;
