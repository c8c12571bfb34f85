//! Empirical bias of the two kernel gain formulas on a scalar Gaussian with
//! linear observation, next to the closed forms.

use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentConfig, Precision};
use super::records::{fmt_f, mean_and_se, write_json};
use crate::density::{DensitySpec, ObservationFn, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::kernel::MarkovOperator;
use crate::oracle::linear_gaussian::{bias_g1, bias_g2};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::solver::{gain_g1, gain_g2, solve_fixed_point, GainMethod, SolverConfig};

/// Particle-averaged G1 and G2 gains of one ensemble at one ε.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchGain {
    pub epsilon: f64,
    pub batch: usize,
    pub seed: u64,
    pub mean_g1: f64,
    pub mean_g2: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasPoint {
    pub epsilon: f64,
    pub method: GainMethod,
    /// `K − mean over batches of the particle-averaged gain`.
    pub bias: f64,
    /// Standard error over batches; NaN for a single batch.
    pub std_error: f64,
    pub closed_form: f64,
    pub converged_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasCurve {
    pub config: ExperimentConfig,
    pub sigma2: f64,
    pub h: f64,
    /// Exact gain `σ²H`.
    pub exact_gain: f64,
    pub points: Vec<BiasPoint>,
    pub batches: Vec<BatchGain>,
}

/// `(σ², H)` of a scalar Gaussian with linear observation.
pub fn linear_gaussian_parameters(spec: &DensitySpec, h: &ObservationFn) -> Result<(f64, f64)> {
    let g = spec
        .as_gaussian()
        .filter(|g| g.dim() == 1)
        .ok_or_else(|| Error::Config("bias curves need a one-dimensional Gaussian density".into()))?;
    let slope = match h {
        ObservationFn::Linear(v) if v.len() == 1 => v[0],
        ObservationFn::Coordinate(0) => 1.0,
        _ => return Err(Error::Config("bias curves need a linear observation".into())),
    };
    Ok((g.covariance()[(0, 0)], slope))
}

fn batch_gains<T: Scalar>(
    spec: &DensitySpec,
    h: &ObservationFn,
    n: usize,
    seed: u64,
    batch: usize,
    epsilons: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<BatchGain>> {
    let ens = ParticleEnsemble::<T>::sample(spec, h, n, seed)?;
    let mut order: Vec<usize> = (0..epsilons.len()).collect();
    order.sort_by(|&a, &b| epsilons[b].total_cmp(&epsilons[a]));
    let mut warm: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(epsilons.len());
    for &e in &order {
        let eps = epsilons[e];
        let op = MarkovOperator::build(ens.points().view(), T::of(eps))?;
        let cfg = SolverConfig { warm_start: warm.take(), ..cfg.clone() };
        let fp = solve_fixed_point(&op, ens.h_values().view(), &cfg)?;
        let mean = |k: ndarray::Array2<T>| k.column(0).iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        let mean_g1 = mean(gain_g1(&op, fp.phi.view(), h)?);
        let mean_g2 = mean(gain_g2(&op, fp.phi.view(), ens.h_values().view())?);
        warm = Some(fp.phi.iter().map(|v| v.as_f64()).collect());
        out.push(BatchGain {
            epsilon: eps,
            batch,
            seed,
            mean_g1,
            mean_g2,
            converged: fp.diagnostics.converged,
            iterations: fp.diagnostics.iterations,
            final_residual: fp.diagnostics.final_residual,
        });
    }
    out.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    Ok(out)
}

/// Bias of G1 and G2 at every ε, averaged over `bias.batches` ensembles of
/// `bias.particles` particles. Batches run one after another: each holds an
/// `N × N` kernel.
pub fn bias_curve(cfg: &ExperimentConfig) -> Result<BiasCurve> {
    cfg.validate()?;
    let spec = cfg.density.build(1)?;
    let h = cfg.observation.build(1)?;
    let (sigma2, slope) = linear_gaussian_parameters(&spec, &h)?;
    let exact = sigma2 * slope;
    let mut batches = Vec::new();
    for b in 0..cfg.bias.batches {
        let seed = derive_seed(cfg.seed, &[1, b as u64]);
        let n = cfg.bias.particles;
        batches.extend(match cfg.bias.precision {
            Precision::F64 => batch_gains::<f64>(&spec, &h, n, seed, b, &cfg.epsilons, &cfg.solver)?,
            Precision::F32 => batch_gains::<f32>(&spec, &h, n, seed, b, &cfg.epsilons, &cfg.solver)?,
        });
    }
    let mut points = Vec::new();
    let mut eps: Vec<f64> = cfg.epsilons.clone();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    for e in eps {
        let rows: Vec<&BatchGain> = batches.iter().filter(|g| g.epsilon == e).collect();
        let conv = rows.iter().filter(|r| r.converged).count() as f64 / rows.len() as f64;
        for (method, closed) in [(GainMethod::G1, bias_g1(e, sigma2)), (GainMethod::G2, bias_g2(e, sigma2))] {
            let biases: Vec<f64> = rows
                .iter()
                .map(|r| exact - if method == GainMethod::G1 { r.mean_g1 } else { r.mean_g2 })
                .collect();
            let (bias, std_error) = mean_and_se(&biases);
            points.push(BiasPoint { epsilon: e, method, bias, std_error, closed_form: closed * slope, converged_fraction: conv });
        }
    }
    Ok(BiasCurve { config: cfg.clone(), sigma2, h: slope, exact_gain: exact, points, batches })
}

/// Runs [`bias_curve`] and writes `bias_curve.csv`, `bias_batches.csv` and
/// `bias_curve_summary.json`.
pub fn run_bias_curve(cfg: &ExperimentConfig, out: &Path) -> Result<BiasCurve> {
    std::fs::create_dir_all(out)?;
    let curve = bias_curve(cfg)?;
    let n = cfg.bias.particles.to_string();
    let mut w = csv::Writer::from_path(out.join("bias_curve.csv"))?;
    w.write_record([
        "d",
        "epsilon",
        "n",
        "seed",
        "method",
        "batches",
        "bias",
        "std_error",
        "abs_bias",
        "closed_form",
        "abs_closed_form",
        "converged_fraction",
    ])?;
    for p in &curve.points {
        w.write_record([
            "1".to_string(),
            fmt_f(p.epsilon),
            n.clone(),
            cfg.seed.to_string(),
            p.method.to_string(),
            cfg.bias.batches.to_string(),
            fmt_f(p.bias),
            fmt_f(p.std_error),
            fmt_f(p.bias.abs()),
            fmt_f(p.closed_form),
            fmt_f(p.closed_form.abs()),
            fmt_f(p.converged_fraction),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("bias_batches.csv"))?;
    w.write_record(["d", "epsilon", "n", "seed", "method", "batch", "mean_gain", "bias", "converged", "iterations", "final_residual"])?;
    for b in &curve.batches {
        for (method, gain) in [(GainMethod::G1, b.mean_g1), (GainMethod::G2, b.mean_g2)] {
            w.write_record([
                "1".to_string(),
                fmt_f(b.epsilon),
                n.clone(),
                b.seed.to_string(),
                method.to_string(),
                b.batch.to_string(),
                fmt_f(gain),
                fmt_f(curve.exact_gain - gain),
                b.converged.to_string(),
                b.iterations.to_string(),
                fmt_f(b.final_residual),
            ])?;
        }
    }
    w.flush()?;
    write_json(&out.join("bias_curve_summary.json"), &curve)?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::{BiasConfig, DensityConfig};

    #[test]
    fn rejects_non_gaussian_or_nonlinear() {
        let mut cfg = ExperimentConfig { epsilons: vec![0.5], ..Default::default() };
        assert!(matches!(bias_curve(&cfg), Err(Error::Config(_))));
        cfg.density = DensityConfig::IsotropicGaussian { variance: 1.0, mean: 0.0 };
        cfg.observation = crate::bench::config::ObservationConfig::Bilinear { i: 0, j: 0 };
        assert!(matches!(bias_curve(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn small_ensemble_has_the_closed_form_sign_pattern() {
        let cfg = ExperimentConfig {
            density: DensityConfig::IsotropicGaussian { variance: 1.0, mean: 0.0 },
            epsilons: vec![0.1, 1.0],
            bias: BiasConfig { particles: 1500, batches: 2, precision: Precision::F64 },
            seed: 4,
            ..Default::default()
        };
        let c = bias_curve(&cfg).unwrap();
        assert_eq!(c.points.len(), 4);
        let at = |e: f64, m: GainMethod| c.points.iter().find(|p| p.epsilon == e && p.method == m).unwrap();
        // G1 bias is positive below σ²/4 and negative above
        assert!(at(0.1, GainMethod::G1).bias > 0.0);
        assert!(at(1.0, GainMethod::G1).bias < -0.3);
        assert!((at(1.0, GainMethod::G1).bias - at(1.0, GainMethod::G1).closed_form).abs() < 0.1);
        assert!(at(1.0, GainMethod::G2).std_error.is_finite());
    }
}
