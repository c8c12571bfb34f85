//! Fixed-point solver `Φ = TΦ + ε(h − ĥ)` and the gain formulas built on it.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::density::{ObservationFn, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::kernel::MarkovOperator;
use crate::scalar::{max_abs, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Bound on `‖Φ − P(TΦ + b)‖_∞ / max(1, ‖Φ‖_∞)` where `P` removes the mean.
    pub residual_tol: f64,
    /// Initial iterate; centred before use.
    #[serde(skip)]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iterations: 10_000, residual_tol: 1e-10, warm_start: None }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
        }
        if !(self.residual_tol > 0.0) || !self.residual_tol.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "residual_tol must be positive, got {}",
                self.residual_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostics {
    /// Applications of `T`.
    pub iterations: usize,
    /// Relative centred residual of the returned iterate.
    pub final_residual: f64,
    pub converged: bool,
    /// Relative centred residual of each iterate, in order.
    pub residual_history: Vec<f64>,
    /// Largest `|mean(Φ_t)| / max(1, ‖Φ_t‖_∞)` seen after centring.
    pub max_mean_drift: f64,
}

#[derive(Debug, Clone)]
pub struct FixedPoint<T> {
    /// Mean-zero solution at the particles.
    pub phi: Array1<T>,
    /// Particle average of the observation values.
    pub h_mean: T,
    pub diagnostics: SolverDiagnostics,
}

fn centre<T: Scalar>(v: &mut Array1<T>) -> T {
    let mean = v.sum() / T::of(v.len() as f64);
    v.mapv_inplace(|x| x - mean);
    v.sum() / T::of(v.len() as f64)
}

/// Picard iteration `Φ_t = P(TΦ_{t−1} + ε(h − ĥ))`, `P` removing the mean.
///
/// Returns the first iterate whose centred residual is within
/// `residual_tol · max(1, ‖Φ‖_∞)`. Hitting `max_iterations` is not an error:
/// the last iterate comes back with `converged = false`.
pub fn solve_fixed_point<T: Scalar>(
    op: &MarkovOperator<T>,
    h_values: ArrayView1<T>,
    cfg: &SolverConfig,
) -> Result<FixedPoint<T>> {
    cfg.validate()?;
    let n = op.len();
    if h_values.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h_values.len() });
    }
    let eps = op.epsilon();
    let h_mean = h_values.sum() / T::of(n as f64);
    let source = h_values.mapv(|h| eps * (h - h_mean));
    let mut phi = match &cfg.warm_start {
        Some(w) if w.len() != n => return Err(Error::DimensionMismatch { expected: n, got: w.len() }),
        Some(w) => Array1::from_iter(w.iter().map(|v| T::of(*v))),
        None => Array1::zeros(n),
    };
    let mut drift = centre(&mut phi).abs().as_f64();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut final_residual = f64::INFINITY;
    while iterations < cfg.max_iterations {
        let mut next = op.apply(phi.view())? + &source;
        let after = centre(&mut next);
        iterations += 1;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("fixed-point iterate {iterations}")));
        }
        let next_scale = max_abs(next.iter().cloned()).as_f64().max(1.0);
        drift = drift.max(after.abs().as_f64() / next_scale);
        let scale = max_abs(phi.iter().cloned()).as_f64().max(1.0);
        let residual = max_abs(next.iter().zip(phi.iter()).map(|(a, b)| *a - *b)).as_f64() / scale;
        history.push(residual);
        final_residual = residual;
        if residual <= cfg.residual_tol {
            converged = true;
            break;
        }
        phi = next;
    }
    if !converged {
        // `phi` now holds the last iterate; its residual is one application away.
        let mut next = op.apply(phi.view())? + &source;
        centre(&mut next);
        let scale = max_abs(phi.iter().cloned()).as_f64().max(1.0);
        final_residual = max_abs(next.iter().zip(phi.iter()).map(|(a, b)| *a - *b)).as_f64() / scale;
    }
    Ok(FixedPoint {
        phi,
        h_mean,
        diagnostics: SolverDiagnostics {
            iterations,
            final_residual,
            converged,
            residual_history: history,
            max_mean_drift: drift,
        },
    })
}

/// `‖Φ − P(TΦ + ε(h − ĥ))‖_∞`, the residual modulo constants.
pub fn fixed_point_residual<T: Scalar>(
    op: &MarkovOperator<T>,
    phi: ArrayView1<T>,
    h_values: ArrayView1<T>,
) -> Result<T> {
    let eps = op.epsilon();
    let h_mean = h_values.sum() / T::of(h_values.len() as f64);
    let mut next = op.apply(phi)? + &h_values.mapv(|h| eps * (h - h_mean));
    centre(&mut next);
    Ok(max_abs(next.iter().zip(phi.iter()).map(|(a, b)| *a - *b)))
}

/// Solves the bordered system `[[I − T, 1], [1ᵀ/N, 0]] [Φ; c] = [ε(h − ĥ); 0]`
/// by LU factorisation. Reference for testing the iteration; `N ≤ 500`.
#[doc(hidden)]
pub fn direct_solve<T: Scalar>(op: &MarkovOperator<T>, h_values: ArrayView1<T>) -> Result<Array1<f64>> {
    let n = op.len();
    if n > 500 {
        return Err(Error::InvalidParameter(format!("direct solve is limited to N ≤ 500, got {n}")));
    }
    if h_values.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h_values.len() });
    }
    let eps = op.epsilon().as_f64();
    let h: Vec<f64> = h_values.iter().map(|v| v.as_f64()).collect();
    let h_mean = h.iter().sum::<f64>() / n as f64;
    let mut a = nalgebra::DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut b = nalgebra::DVector::<f64>::zeros(n + 1);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = if i == j { 1.0 } else { 0.0 } - op.entry(i, j).as_f64();
        }
        a[(i, n)] = 1.0;
        a[(n, i)] = 1.0 / n as f64;
        b[i] = eps * (h[i] - h_mean);
    }
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("bordered system is singular".into()))?;
    Ok(Array1::from_iter(x.iter().take(n).cloned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainMethod {
    /// `∇TΦ + ε∇h`
    G1,
    /// `∇T(Φ + ε(h − ĥ))`
    G2,
    /// `(1/N) Σ (h_i − ĥ) Xⁱ` at every particle
    Constant,
}

impl GainMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            GainMethod::G1 => "g1",
            GainMethod::G2 => "g2",
            GainMethod::Constant => "constant",
        }
    }
}

impl fmt::Display for GainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g1" => Ok(GainMethod::G1),
            "g2" => Ok(GainMethod::G2),
            "constant" => Ok(GainMethod::Constant),
            other => Err(Error::Config(format!("unknown gain method {other:?}"))),
        }
    }
}

/// `∇TΦ + ε∇h(Xⁱ)` at every particle. Needs the gradient of `h`.
pub fn gain_g1<T: Scalar>(op: &MarkovOperator<T>, phi: ArrayView1<T>, h: &ObservationFn) -> Result<Array2<T>> {
    if !h.has_gradient() {
        return Err(Error::MissingGradient);
    }
    let mut k = op.apply_gradient(phi)?;
    let eps = op.epsilon();
    let mut x = vec![0.0; op.dim()];
    for (mut row, point) in k.axis_iter_mut(Axis(0)).zip(op.points().axis_iter(Axis(0))) {
        for (xi, p) in x.iter_mut().zip(point.iter()) {
            *xi = p.as_f64();
        }
        let grad = h.gradient(&x).ok_or(Error::MissingGradient)?;
        if grad.len() != op.dim() {
            return Err(Error::DimensionMismatch { expected: op.dim(), got: grad.len() });
        }
        for (kc, gc) in row.iter_mut().zip(grad) {
            *kc += eps * T::of(gc);
        }
    }
    Ok(k)
}

/// `(1/2ε) Σ_j T_ij (Φ_j + ε(h_j − ĥ))(Xʲ − Σ_k T_ik Xᵏ)` at every particle.
pub fn gain_g2<T: Scalar>(op: &MarkovOperator<T>, phi: ArrayView1<T>, h_values: ArrayView1<T>) -> Result<Array2<T>> {
    if phi.len() != h_values.len() {
        return Err(Error::DimensionMismatch { expected: phi.len(), got: h_values.len() });
    }
    let eps = op.epsilon();
    let h_mean = h_values.sum() / T::of(h_values.len() as f64);
    let f = Array1::from_iter(phi.iter().zip(h_values.iter()).map(|(p, h)| *p + eps * (*h - h_mean)));
    op.apply_gradient_centred(f.view())
}

/// `(1/N) Σ_i (h_i − ĥ) Xⁱ`.
pub fn gain_constant<T: Scalar>(ensemble: &ParticleEnsemble<T>) -> Array1<T> {
    let h_mean = ensemble.h_mean();
    let n = T::of(ensemble.len() as f64);
    let mut k = Array1::zeros(ensemble.dim());
    for (x, h) in ensemble.points().axis_iter(Axis(0)).zip(ensemble.h_values()) {
        k.scaled_add(*h - h_mean, &x);
    }
    k / n
}

/// Gain at every particle together with the solver state that produced it.
#[derive(Debug, Clone)]
pub struct GainEstimate<T> {
    pub phi: Array1<T>,
    /// `N × d`, row `i` is `K(Xⁱ)`.
    pub gain: Array2<T>,
    pub method: GainMethod,
    pub epsilon: f64,
    pub iterations_used: usize,
    pub final_residual: f64,
    pub converged: bool,
}

/// Builds `T`, solves for `Φ` and applies `method`. The constant method skips
/// the kernel entirely.
pub fn estimate_gain<T: Scalar>(
    ensemble: &ParticleEnsemble<T>,
    h: &ObservationFn,
    epsilon: f64,
    method: GainMethod,
    cfg: &SolverConfig,
) -> Result<GainEstimate<T>> {
    if method == GainMethod::Constant {
        let k = gain_constant(ensemble);
        let gain = k.broadcast((ensemble.len(), ensemble.dim())).expect("broadcast").to_owned();
        return Ok(GainEstimate {
            phi: Array1::zeros(ensemble.len()),
            gain,
            method,
            epsilon,
            iterations_used: 0,
            final_residual: 0.0,
            converged: true,
        });
    }
    let op = MarkovOperator::build(ensemble.points().view(), T::of(epsilon))?;
    let fp = solve_fixed_point(&op, ensemble.h_values().view(), cfg)?;
    let gain = match method {
        GainMethod::G1 => gain_g1(&op, fp.phi.view(), h)?,
        _ => gain_g2(&op, fp.phi.view(), ensemble.h_values().view())?,
    };
    Ok(GainEstimate {
        phi: fp.phi,
        gain,
        method,
        epsilon,
        iterations_used: fp.diagnostics.iterations,
        final_residual: fp.diagnostics.final_residual,
        converged: fp.diagnostics.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{DensitySpec, Gaussian};
    use ndarray::array;

    fn bimodal(n: usize, seed: u64) -> ParticleEnsemble<f64> {
        let spec = DensitySpec::symmetric_bimodal(1, 1.0, 0.2).unwrap();
        ParticleEnsemble::sample(&spec, &ObservationFn::Coordinate(0), n, seed).unwrap()
    }

    #[test]
    fn constant_h_gives_zero_after_one_iteration() {
        let pts = array![[0.0], [0.4], [1.0]];
        let op = MarkovOperator::build(pts.view(), 0.1).unwrap();
        let fp = solve_fixed_point(&op, array![2.0, 2.0, 2.0].view(), &SolverConfig::default()).unwrap();
        assert_eq!(fp.diagnostics.iterations, 1);
        assert!(fp.diagnostics.converged);
        assert!(fp.phi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_direct_solve() {
        let e = bimodal(120, 3);
        let op = MarkovOperator::build(e.points().view(), 0.1).unwrap();
        let cfg = SolverConfig { residual_tol: 1e-13, ..SolverConfig::default() };
        let fp = solve_fixed_point(&op, e.h_values().view(), &cfg).unwrap();
        assert!(fp.diagnostics.converged);
        let direct = direct_solve(&op, e.h_values().view()).unwrap();
        let err = max_abs(fp.phi.iter().zip(direct.iter()).map(|(a, b)| a - b));
        assert!(err < 1e-9, "{err}");
        let res = fixed_point_residual(&op, fp.phi.view(), e.h_values().view()).unwrap();
        assert!(res <= cfg.residual_tol * (1.0 + max_abs(fp.phi.iter().cloned())));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let e = bimodal(100, 4);
        let op = MarkovOperator::build(e.points().view(), 0.01).unwrap();
        let cfg = SolverConfig { max_iterations: 5, ..SolverConfig::default() };
        let fp = solve_fixed_point(&op, e.h_values().view(), &cfg).unwrap();
        assert!(!fp.diagnostics.converged);
        assert_eq!(fp.diagnostics.iterations, 5);
        assert!(fp.diagnostics.final_residual > cfg.residual_tol);
    }

    #[test]
    fn rejects_invalid_config() {
        let op = MarkovOperator::build(array![[0.0], [1.0]].view(), 0.5).unwrap();
        let h = array![0.0, 1.0];
        for cfg in [
            SolverConfig { max_iterations: 0, ..SolverConfig::default() },
            SolverConfig { residual_tol: 0.0, ..SolverConfig::default() },
            SolverConfig { warm_start: Some(vec![0.0]), ..SolverConfig::default() },
        ] {
            assert!(solve_fixed_point(&op, h.view(), &cfg).is_err());
        }
        assert!(solve_fixed_point(&op, array![1.0].view(), &SolverConfig::default()).is_err());
    }

    #[test]
    fn constant_gain_by_hand() {
        let e = ParticleEnsemble::from_points(array![[-1.0f64], [0.0], [1.0]], &ObservationFn::Coordinate(0), 0)
            .unwrap();
        let k = gain_constant(&e);
        assert!((k[0] - 2.0 / 3.0).abs() < 1e-15);
        let flat = ParticleEnsemble::from_points(array![[-1.0], [3.0]], &ObservationFn::custom(|_| 1.0), 0).unwrap();
        assert_eq!(gain_constant(&flat)[0], 0.0);
    }

    #[test]
    fn g1_needs_gradient() {
        let e = ParticleEnsemble::from_points(array![[-1.0], [0.5]], &ObservationFn::custom(|x| x[0].sin()), 0)
            .unwrap();
        let h = ObservationFn::custom(|x| x[0].sin());
        let r = estimate_gain(&e, &h, 0.5, GainMethod::G1, &SolverConfig::default());
        assert!(matches!(r, Err(Error::MissingGradient)));
        assert!(estimate_gain(&e, &h, 0.5, GainMethod::G2, &SolverConfig::default()).is_ok());
    }

    #[test]
    fn g2_single_sum_matches_covariance_form() {
        let e = bimodal(40, 8);
        let op = MarkovOperator::build(e.points().view(), 0.2).unwrap();
        let fp = solve_fixed_point(&op, e.h_values().view(), &SolverConfig::default()).unwrap();
        let a = gain_g2(&op, fp.phi.view(), e.h_values().view()).unwrap();
        let f = &fp.phi + &e.h_values().mapv(|h| 0.2 * (h - fp.h_mean));
        let b = op.apply_gradient(f.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn huge_bandwidth_reduces_to_constant_gain() {
        let e = bimodal(200, 5);
        let est = estimate_gain(&e, &ObservationFn::Coordinate(0), 1e6, GainMethod::G2, &SolverConfig::default())
            .unwrap();
        let k = gain_constant(&e);
        for row in est.gain.rows() {
            assert!((row[0] - k[0]).abs() < 1e-4, "{} vs {}", row[0], k[0]);
        }
    }

    #[test]
    fn warm_start_converges_to_same_point() {
        let e = bimodal(150, 6);
        let op = MarkovOperator::build(e.points().view(), 0.5).unwrap();
        let cfg = SolverConfig { residual_tol: 1e-9, ..SolverConfig::default() };
        let cold = solve_fixed_point(&op, e.h_values().view(), &cfg).unwrap();
        let warm_cfg = SolverConfig {
            warm_start: Some(e.points().column(0).mapv(|x| 3.0 * x + 1.0).to_vec()),
            ..cfg.clone()
        };
        let warm = solve_fixed_point(&op, e.h_values().view(), &warm_cfg).unwrap();
        let diff = max_abs(cold.phi.iter().zip(warm.phi.iter()).map(|(a, b)| a - b));
        let scale = max_abs(cold.phi.iter().cloned()).max(1.0);
        assert!(diff <= 10.0 * cfg.residual_tol * scale, "{diff}");
        let again = SolverConfig { warm_start: Some(cold.phi.to_vec()), ..cfg };
        let restart = solve_fixed_point(&op, e.h_values().view(), &again).unwrap();
        assert_eq!(restart.diagnostics.iterations, 1);
    }

    #[test]
    fn kalman_limit_for_gaussian() {
        let spec = DensitySpec::Gaussian(Gaussian::standard(1).unwrap());
        let e = ParticleEnsemble::<f64>::sample(&spec, &ObservationFn::Coordinate(0), 400, 11).unwrap();
        let est =
            estimate_gain(&e, &ObservationFn::Coordinate(0), 0.05, GainMethod::G1, &SolverConfig::default()).unwrap();
        let mean = est.gain.column(0).mean().unwrap();
        assert!((mean - 1.0).abs() < 0.2, "{mean}");
    }
}
