//! Power-law fits `error ≈ c · ε^{−α}` over the variance-dominated end of a sweep.

use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentConfig, FitConfig};
use super::records::{read_records, summarize, write_json, CellSummary, ErrorRecord};
use super::sweep::{error_sweep, write_sweep, SweepResult};
use crate::error::{Error, Result};
use crate::solver::GainMethod;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub d: usize,
    pub method: GainMethod,
    /// Slope of `log(mean error)` against `log(1/ε)`.
    pub alpha: f64,
    pub intercept: f64,
    pub min_epsilon: f64,
    pub max_epsilon: f64,
    pub points: usize,
    /// RMS residual of the fit in log space.
    pub residual: f64,
}

/// Least-squares line through `(log(1/ε), log(error))`.
pub fn fit_power_law(epsilons: &[f64], errors: &[f64]) -> Result<(f64, f64, f64)> {
    if epsilons.len() != errors.len() {
        return Err(Error::DimensionMismatch { expected: epsilons.len(), got: errors.len() });
    }
    if epsilons.len() < 3 {
        return Err(Error::InvalidParameter(format!("an exponent fit needs at least 3 points, got {}", epsilons.len())));
    }
    if epsilons.iter().chain(errors).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("fit data must be positive and finite".into()));
    }
    let x: Vec<f64> = epsilons.iter().map(|e| -e.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("fit needs at least two distinct ε".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok((slope, intercept, (ss / n).sqrt()))
}

/// Cells of one `(d, method)` used for the fit, in increasing ε.
///
/// With bounds in `window` every fully converged cell inside them is used.
/// Otherwise the window is the contiguous run of fully converged cells,
/// ending at the smallest mean error, along which the mean error decreases
/// as ε grows.
pub fn fit_window<'a>(cells: &'a [CellSummary], d: usize, method: GainMethod, window: &FitConfig) -> Vec<&'a CellSummary> {
    let mut cs: Vec<&CellSummary> = cells.iter().filter(|c| c.d == d && c.method == method).collect();
    cs.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    if window.min_epsilon.is_some() || window.max_epsilon.is_some() {
        let lo = window.min_epsilon.unwrap_or(0.0);
        let hi = window.max_epsilon.unwrap_or(f64::INFINITY);
        return cs
            .into_iter()
            .filter(|c| c.epsilon >= lo && c.epsilon <= hi && c.converged_fraction == 1.0)
            .collect();
    }
    let Some(best) = (0..cs.len())
        .filter(|&i| cs[i].converged_fraction == 1.0)
        .min_by(|&a, &b| cs[a].mean_error.total_cmp(&cs[b].mean_error))
    else {
        return Vec::new();
    };
    let mut start = best;
    while start > 0 && cs[start - 1].converged_fraction == 1.0 && cs[start - 1].mean_error > cs[start].mean_error {
        start -= 1;
    }
    cs[start..=best].to_vec()
}

/// Exponent of the mean error of `(d, method)` over [`fit_window`].
pub fn fit_exponent(records: &[ErrorRecord], d: usize, method: GainMethod, window: &FitConfig) -> Result<ExponentFit> {
    let cells = summarize(records);
    let used = fit_window(&cells, d, method, window);
    if used.len() < 3 {
        return Err(Error::Numerical(format!(
            "d = {d}, {method}: only {} grid points in the fit window, need 3",
            used.len()
        )));
    }
    let eps: Vec<f64> = used.iter().map(|c| c.epsilon).collect();
    let err: Vec<f64> = used.iter().map(|c| c.mean_error).collect();
    let (alpha, intercept, residual) = fit_power_law(&eps, &err)?;
    Ok(ExponentFit {
        d,
        method,
        alpha,
        intercept,
        min_epsilon: eps[0],
        max_epsilon: eps[eps.len() - 1],
        points: eps.len(),
        residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub config: ExperimentConfig,
    pub fits: Vec<ExponentFit>,
    /// `(d, method, message)` for fits that could not be made.
    pub unfitted: Vec<(usize, GainMethod, String)>,
}

/// Fits every `(d, kernel method)`, reading records from `fit.records` or
/// running the sweep (whose outputs are written as well). Writes
/// `exponents.json`.
pub fn run_fit_exponent(cfg: &ExperimentConfig, out: &Path) -> Result<FitSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let records = match &cfg.fit.records {
        Some(path) => read_records(Path::new(path))?,
        None => {
            let sweep: SweepResult = error_sweep(cfg)?;
            write_sweep(&sweep, cfg, out)?;
            sweep.records
        }
    };
    let mut fits = Vec::new();
    let mut unfitted = Vec::new();
    for &d in &cfg.dimensions {
        for &m in cfg.methods.iter().filter(|m| **m != GainMethod::Constant) {
            match fit_exponent(&records, d, m, &cfg.fit) {
                Ok(f) => fits.push(f),
                Err(e) if e.is_numerical() => unfitted.push((d, m, e.to_string())),
                Err(e) => return Err(e),
            }
        }
    }
    if fits.is_empty() {
        let why = unfitted.first().map(|u| u.2.clone()).unwrap_or_else(|| "no kernel method to fit".into());
        return Err(Error::Numerical(why));
    }
    let summary = FitSummary { config: cfg.clone(), fits, unfitted };
    write_json(&out.join("exponents.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(d: usize, eps: &[f64], f: impl Fn(f64) -> f64) -> Vec<ErrorRecord> {
        eps.iter()
            .map(|&e| ErrorRecord {
                d,
                epsilon: e,
                n: 200,
                seed: 0,
                simulation: 0,
                method: GainMethod::G2,
                error: f(e),
                converged: true,
                iterations: 1,
                final_residual: 0.0,
                wall_time: 0.0,
            })
            .collect()
    }

    #[test]
    fn exact_power_law() {
        let eps: Vec<f64> = (0..8).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect();
        let recs = synthetic(1, &eps, |e| 3.0 * e.powf(-1.5));
        let f = fit_exponent(&recs, 1, GainMethod::G2, &FitConfig::default()).unwrap();
        assert!((f.alpha - 1.5).abs() < 1e-10);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
        assert_eq!(f.points, 8);
    }

    #[test]
    fn theorem_rate_is_recovered_per_dimension() {
        let eps: Vec<f64> = (0..10).map(|k| 10f64.powf(-3.0 + 0.1 * k as f64)).collect();
        for d in 1..=4 {
            let rate = 1.0 + d as f64 / 4.0;
            let recs = synthetic(d, &eps, |e| e.powf(-rate) / 200f64.sqrt());
            let f = fit_exponent(&recs, d, GainMethod::G2, &FitConfig::default()).unwrap();
            assert!((f.alpha - rate).abs() < 1e-10);
        }
    }

    #[test]
    fn auto_window_stops_at_the_minimum() {
        // variance branch ε^{-1}, bias branch ε beyond the minimum at ε = 1
        let eps: Vec<f64> = (0..21).map(|k| 10f64.powf(-1.0 + 0.1 * k as f64)).collect();
        let recs = synthetic(1, &eps, |e| 1.0 / e + e);
        let f = fit_exponent(&recs, 1, GainMethod::G2, &FitConfig::default()).unwrap();
        assert_eq!(f.points, 11);
        assert!((f.max_epsilon - 1.0).abs() < 1e-12);
        let bounded = FitConfig { min_epsilon: Some(0.09), max_epsilon: Some(0.2), records: None };
        let f = fit_exponent(&recs, 1, GainMethod::G2, &bounded).unwrap();
        assert_eq!(f.points, 4);
        assert!((f.alpha - 1.0).abs() < 0.05);
    }

    #[test]
    fn too_few_points() {
        let recs = synthetic(1, &[0.1, 0.2], |e| 1.0 / e);
        assert!(fit_exponent(&recs, 1, GainMethod::G2, &FitConfig::default()).is_err());
        assert!(fit_power_law(&[0.1, 0.2], &[1.0, 2.0]).is_err());
        assert!(fit_power_law(&[0.1, 0.2, 0.3], &[1.0, 0.0, 2.0]).is_err());
    }
}
