//! Gain of a one-dimensional Poisson problem by direct integration.
//!
//! In one dimension the Poisson equation integrates once to
//! `K(x) = −(1/ρ(x)) ∫_{−∞}^{x} ρ(z)(h(z) − ĥ) dz`.
//!
//! A density on `R^d` qualifies when it factorises into a mixture along one
//! axis times a fixed Gaussian on the remaining axes, and `h` depends on that
//! axis only. The gain is then `K₁(x_a)` on the axis and zero elsewhere.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::quadrature::Romberg;
use crate::density::{log_sum_exp, DensitySpec, ObservationFn};
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone)]
pub struct ScalarOracle {
    axis: usize,
    dim: usize,
    log_weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
    h: ObservationFn,
    h_mean: f64,
    centre: f64,
    lo: f64,
    hi: f64,
    pad: f64,
    quad: Romberg,
}

impl ScalarOracle {
    pub fn new(spec: &DensitySpec, h: &ObservationFn) -> Result<Self> {
        Self::with_quadrature(spec, h, Romberg::default())
    }

    pub fn with_quadrature(spec: &DensitySpec, h: &ObservationFn, quad: Romberg) -> Result<Self> {
        let dim = spec.dim();
        h.check_dimension(dim)?;
        let axis = h
            .single_axis(dim)
            .ok_or_else(|| Error::NoOracle("observation depends on more than one coordinate".into()))?;
        let comps = spec.components();
        let first = comps[0].1;
        for (_, g) in &comps {
            for j in 0..dim {
                if j != axis && g.covariance()[(axis, j)] != 0.0 {
                    return Err(Error::NoOracle("density couples the observed axis to others".into()));
                }
                for k in 0..dim {
                    if j != axis
                        && k != axis
                        && (g.covariance()[(j, k)] != first.covariance()[(j, k)])
                    {
                        return Err(Error::NoOracle("unobserved covariance differs across components".into()));
                    }
                }
                if j != axis && g.mean()[j] != first.mean()[j] {
                    return Err(Error::NoOracle("unobserved means differ across components".into()));
                }
            }
        }
        let (weights, components): (Vec<f64>, Vec<_>) =
            comps.iter().filter(|(w, _)| *w > 0.0).cloned().unzip();
        let means: Vec<f64> = components.iter().map(|g| g.mean()[axis]).collect();
        let stds: Vec<f64> = components.iter().map(|g| g.covariance()[(axis, axis)].sqrt()).collect();
        let max_std = stds.iter().cloned().fold(0.0, f64::max);
        let sigma_eff = max_std + means.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min_mean = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_mean = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let centre = weights.iter().zip(&means).map(|(w, m)| w * m).sum();
        let mut oracle = Self {
            axis,
            dim,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            means,
            stds,
            h: h.clone(),
            h_mean: 0.0,
            centre,
            lo: min_mean - 6.0 * sigma_eff,
            hi: max_mean + 6.0 * sigma_eff,
            pad: 8.0 * max_std,
            quad,
        };
        let (lo, hi) = (oracle.lo, oracle.hi);
        oracle.h_mean = oracle.quad.integrate(|z| oracle.log_rho(z).exp() * oracle.h1(z), lo, hi)?;
        Ok(oracle)
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    /// `ĥ = ∫ h ρ`.
    pub fn h_mean(&self) -> f64 {
        self.h_mean
    }

    /// Log of the marginal density along the observed axis.
    pub fn log_rho(&self, z: f64) -> f64 {
        log_sum_exp(self.log_weights.iter().zip(&self.means).zip(&self.stds).map(|((lw, m), s)| {
            let u = (z - m) / s;
            lw - 0.5 * u * u - s.ln() - LN_SQRT_2PI
        }))
    }

    fn h1(&self, z: f64) -> f64 {
        let mut x = vec![0.0; self.dim];
        x[self.axis] = z;
        self.h.value(&x)
    }

    /// Scalar gain `K₁(x)` on the observed axis.
    pub fn gain(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::NonFinite("oracle evaluation point".into()));
        }
        let log_rx = self.log_rho(x);
        let integrand = |z: f64| (self.log_rho(z) - log_rx).exp() * (self.h1(z) - self.h_mean);
        // Integrate over the side away from the bulk of the mass; the two
        // tails have equal and opposite integrals.
        if x <= self.centre {
            let lo = self.lo.min(x - self.pad);
            Ok(-self.quad.integrate(integrand, lo, x)?)
        } else {
            let hi = self.hi.max(x + self.pad);
            Ok(self.quad.integrate(integrand, x, hi)?)
        }
    }

    /// Gain vector `[0, …, K₁(x_a), …, 0]` at every row of `points`.
    pub fn evaluate(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        if points.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: points.ncols() });
        }
        let column: Vec<f64> = points
            .column(self.axis)
            .to_vec()
            .par_iter()
            .map(|&x| self.gain(x))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros(points.raw_dim());
        for (i, k) in column.into_iter().enumerate() {
            out[(i, self.axis)] = k;
        }
        Ok(out)
    }
}

/// `K(x)` for a problem that reduces to one coordinate; see [`ScalarOracle`].
pub fn scalar_exact_gain(spec: &DensitySpec, h: &ObservationFn, x: f64) -> Result<f64> {
    ScalarOracle::new(spec, h)?.gain(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Gaussian;

    fn normal_cdf(x: f64) -> f64 {
        0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
    }

    #[test]
    fn standard_normal_linear_is_flat() {
        let spec = DensitySpec::Gaussian(Gaussian::standard(1).unwrap());
        let o = ScalarOracle::new(&spec, &ObservationFn::Coordinate(0)).unwrap();
        for x in [-7.0, -3.0, -0.5, 0.0, 0.1, 2.0, 6.5] {
            assert!((o.gain(x).unwrap() - 1.0).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn constant_h_gives_zero_gain() {
        let spec = DensitySpec::symmetric_bimodal(1, 1.0, 0.2).unwrap();
        let o = ScalarOracle::new(&spec, &ObservationFn::custom(|_| 3.0)).unwrap();
        for x in [-2.0, 0.0, 1.5] {
            assert!(o.gain(x).unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn bimodal_matches_closed_form() {
        // ∫_{−∞}^x z N(z; m, s²) dz = m Φ((x−m)/s) − s² N(x; m, s²)
        let s2: f64 = 0.2;
        let s = s2.sqrt();
        let spec = DensitySpec::symmetric_bimodal(1, 1.0, s2).unwrap();
        let o = ScalarOracle::new(&spec, &ObservationFn::Coordinate(0)).unwrap();
        let npdf = |x: f64, m: f64| (-(x - m).powi(2) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
        for x in [-1.8, -1.0, -0.3, 0.0, 0.4, 1.2] {
            let partial: f64 = [-1.0, 1.0]
                .iter()
                .map(|&m| 0.5 * (m * normal_cdf((x - m) / s) - s2 * npdf(x, m)))
                .sum();
            let rho = 0.5 * (npdf(x, -1.0) + npdf(x, 1.0));
            let exact = -partial / rho;
            let got = o.gain(x).unwrap();
            assert!((got - exact).abs() < 1e-7 * exact.abs().max(1.0), "x={x}: {got} vs {exact}");
        }
        // peak between the modes
        assert!(o.gain(0.0).unwrap() > o.gain(1.0).unwrap());
        assert!(o.gain(0.0).unwrap() > 5.0);
    }

    #[test]
    fn embeds_into_higher_dimension() {
        let spec = DensitySpec::symmetric_bimodal(3, 1.0, 0.2).unwrap();
        let o = ScalarOracle::new(&spec, &ObservationFn::Coordinate(0)).unwrap();
        let pts = ndarray::array![[0.2, 5.0, -1.0]];
        let k = o.evaluate(pts.view()).unwrap();
        let one_d = scalar_exact_gain(&DensitySpec::symmetric_bimodal(1, 1.0, 0.2).unwrap(), &ObservationFn::Coordinate(0), 0.2).unwrap();
        assert!((k[(0, 0)] - one_d).abs() < 1e-10);
        assert_eq!(k[(0, 1)], 0.0);
        assert!(ScalarOracle::new(&spec, &ObservationFn::Bilinear(0, 1)).is_err());
    }
}
