//! Teacher-student hinge-loss perceptron trained by SGD: direct simulation,
//! population-average theory, the reduced two-dimensional ODE, and sweep
//! tooling for the scaling laws that connect them.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`, which is what the CLI uses.

pub mod cli;
pub mod distribution;
pub mod experiments;
pub mod error;
pub mod io;
pub mod quadrature;
pub mod real;
pub mod rng;
pub mod ode;
pub mod perceptron;
pub mod theory;

pub use error::{Error, Result};
pub use real::Real;

pub type DataDistribution = distribution::DataDistribution<f64>;
pub type Dataset = distribution::Dataset<f64>;
pub type Datum = distribution::Datum<f64>;
pub type ReducedCoords = theory::ReducedCoords<f64>;
pub type TheoryEvaluation = theory::TheoryEvaluation<f64>;
pub type AsymptoticConstants = theory::AsymptoticConstants<f64>;
pub type PerceptronState = perceptron::PerceptronState<f64>;
pub use perceptron::{ModelParams, Observables, RunRecord, StopReason, TestOracle};
pub type SummaryState = ode::SummaryState<f64>;
pub type OdeParams = ode::OdeParams<f64>;
pub use ode::TheoryPrediction;
