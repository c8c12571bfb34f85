//! Gain function of the feedback particle filter from particles alone.
//!
//! The gain `K = ∇φ` solves the weighted Poisson equation
//! `−∇·(ρ∇φ) = (h − ĥ)ρ`. Given samples of `ρ`, [`kernel::MarkovOperator`]
//! approximates the semigroup `e^{εΔ_ρ}` by a row-stochastic matrix,
//! [`solver::solve_fixed_point`] solves `Φ = TΦ + ε(h − ĥ)`, and the gain
//! formulas in [`solver`] turn `Φ` into `K` at every particle.
//!
//! [`oracle`] holds exact solutions used as ground truth, [`fpf`] runs the
//! filter itself and [`bench`] drives the error experiments behind the CLI.

pub mod bench;
pub mod density;
pub mod error;
pub mod fpf;
pub mod kernel;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod solver;

pub use density::{DensitySpec, Gaussian, GaussianMixture, ObservationFn, ParticleEnsemble};
pub use error::{Error, Result};
pub use kernel::{GradientOperator, MarkovOperator};
pub use oracle::{OracleGain, Provenance};
pub use scalar::Scalar;
pub use solver::{
    estimate_gain, gain_constant, gain_g1, gain_g2, solve_fixed_point, GainEstimate, GainMethod,
    SolverConfig,
};

/// Double-precision ensemble.
pub type Ensemble = ParticleEnsemble<f64>;
/// Double-precision Markov operator.
pub type Operator = MarkovOperator<f64>;
/// Double-precision gain estimate.
pub type Gain = GainEstimate<f64>;
