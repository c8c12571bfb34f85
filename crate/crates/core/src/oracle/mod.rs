//! Exact and high-accuracy solutions of the Poisson equation, used as ground
//! truth for the kernel gain.

pub mod hermite;
pub mod linear_gaussian;
pub mod quadrature;
pub mod scalar;
pub mod spectral;

use nalgebra::DVector;
use ndarray::{Array2, ArrayView2};

use crate::density::{DensitySpec, ObservationFn};
use crate::error::{Error, Result};

pub use hermite::{hermite, GaussHermite};
pub use quadrature::Romberg;
pub use scalar::{scalar_exact_gain, ScalarOracle};
pub use spectral::{
    gaussian_eigenpair, spectral_exact_solution, Eigenfunction, HermiteIndex, SpectralSolution,
    DEFAULT_TRUNCATION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ScalarQuadrature,
    GaussianSpectral,
    KalmanClosedForm,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::ScalarQuadrature => "scalar-quadrature",
            Provenance::GaussianSpectral => "gaussian-spectral",
            Provenance::KalmanClosedForm => "kalman-closed-form",
        }
    }
}

/// Exact gain evaluator together with how it was obtained.
#[derive(Debug, Clone)]
pub enum OracleGain {
    Scalar(ScalarOracle),
    Spectral(SpectralSolution),
    /// Constant gain `ΣH` of a Gaussian density with linear observation.
    Kalman(Vec<f64>),
}

impl OracleGain {
    /// Picks the cheapest exact oracle for `(spec, h)`:
    /// Kalman for Gaussian/linear, spectral for other Gaussian problems,
    /// quadrature for mixtures that reduce to one coordinate.
    pub fn for_problem(spec: &DensitySpec, h: &ObservationFn) -> Result<Self> {
        h.check_dimension(spec.dim())?;
        if let Some(g) = spec.as_gaussian() {
            let hvec = match h {
                ObservationFn::Linear(v) => Some(v.clone()),
                ObservationFn::Coordinate(i) => {
                    let mut v = vec![0.0; spec.dim()];
                    v[*i] = 1.0;
                    Some(v)
                }
                _ => None,
            };
            if let Some(v) = hvec {
                let k = g.covariance() * DVector::from_vec(v);
                return Ok(OracleGain::Kalman(k.iter().cloned().collect()));
            }
            let trunc = h.polynomial_degree().unwrap_or(DEFAULT_TRUNCATION);
            return Ok(OracleGain::Spectral(spectral_exact_solution(spec, h, trunc)?));
        }
        ScalarOracle::new(spec, h).map(OracleGain::Scalar).map_err(|e| match e {
            Error::NoOracle(msg) => Error::NoOracle(format!("mixture density: {msg}")),
            other => other,
        })
    }

    pub fn provenance(&self) -> Provenance {
        match self {
            OracleGain::Scalar(_) => Provenance::ScalarQuadrature,
            OracleGain::Spectral(_) => Provenance::GaussianSpectral,
            OracleGain::Kalman(_) => Provenance::KalmanClosedForm,
        }
    }

    /// Exact gain at every row of `points`.
    pub fn evaluate(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            OracleGain::Scalar(o) => o.evaluate(points),
            OracleGain::Spectral(s) => s.evaluate(points),
            OracleGain::Kalman(k) => {
                if points.ncols() != k.len() {
                    return Err(Error::DimensionMismatch { expected: k.len(), got: points.ncols() });
                }
                let mut out = Array2::zeros(points.raw_dim());
                for mut row in out.rows_mut() {
                    row.assign(&ndarray::ArrayView1::from(k.as_slice()));
                }
                Ok(out)
            }
        }
    }
}
