//! Experiment harness behind the `fpf-gain` command line.
//!
//! Every runner takes an [`ExperimentConfig`] and an output directory and
//! writes CSV tables plus a JSON summary that echoes the configuration.
//! Outputs depend only on the configuration: simulations are seeded from the
//! master seed and the cell key, never from scheduling.

pub mod bias;
pub mod config;
pub mod demo;
pub mod fit;
pub mod records;
pub mod sweep;

pub use bias::{bias_curve, run_bias_curve, BiasCurve, BiasPoint};
pub use config::{BiasConfig, DensityConfig, ExperimentConfig, FilterConfig, FitConfig, ObservationConfig, Precision};
pub use demo::{fpf_demo, run_fpf_demo, DemoSummary};
pub use fit::{fit_exponent, fit_power_law, run_fit_exponent, ExponentFit};
pub use records::{fmt_f, summarize, CellSummary, ErrorRecord};
pub use sweep::{error_sweep, ensemble_seed, gains_over_grid, rms_error, run_error_sweep, run_gain_curve, SweepResult};
