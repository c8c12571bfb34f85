//! Gain curves and ε/d error sweeps against an exact oracle.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::records::{fmt_f, sort_records, summarize, write_cells, write_json, write_records, write_timings, CellSummary, ErrorRecord};
use crate::density::{ObservationFn, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::kernel::MarkovOperator;
use crate::oracle::OracleGain;
use crate::rng::derive_seed;
use crate::solver::{gain_constant, gain_g1, gain_g2, solve_fixed_point, GainMethod, SolverConfig};

/// Seed of simulation `sim` in dimension `d`. Every ε and method sees the
/// same ensemble.
pub fn ensemble_seed(master: u64, d: usize, sim: usize) -> u64 {
    derive_seed(master, &[d as u64, sim as u64])
}

/// `√((1/N) Σ |K_est(Xⁱ) − K(Xⁱ)|²)`
pub fn rms_error(estimate: &Array2<f64>, exact: &Array2<f64>) -> f64 {
    let diff = estimate - exact;
    (diff.mapv(|v| v * v).sum() / diff.nrows() as f64).sqrt()
}

/// One gain estimate on a given ensemble.
#[derive(Debug, Clone)]
pub struct MethodGain {
    pub method: GainMethod,
    pub epsilon: f64,
    pub gain: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub wall_time: f64,
}

/// Gains of `methods` at every ε on one ensemble. The ε grid is walked from
/// large to small, each solve warm-started from the previous fixed point.
/// Failures are reported per `(ε, method)` and do not stop the walk.
pub fn gains_over_grid(
    ens: &ParticleEnsemble<f64>,
    h: &ObservationFn,
    epsilons: &[f64],
    methods: &[GainMethod],
    cfg: &SolverConfig,
) -> Vec<std::result::Result<MethodGain, (f64, GainMethod, Error)>> {
    let mut order: Vec<usize> = (0..epsilons.len()).collect();
    order.sort_by(|&a, &b| epsilons[b].total_cmp(&epsilons[a]));
    let kernel_methods: Vec<GainMethod> = methods.iter().copied().filter(|m| *m != GainMethod::Constant).collect();
    let constant = methods.contains(&GainMethod::Constant).then(|| {
        let start = Instant::now();
        let k = gain_constant(ens);
        let gain = k.broadcast((ens.len(), ens.dim())).expect("shape").to_owned();
        (gain, start.elapsed().as_secs_f64())
    });
    let mut warm: Option<Vec<f64>> = None;
    let mut out = Vec::new();
    for &e in &order {
        let eps = epsilons[e];
        if let Some((gain, t)) = &constant {
            out.push(Ok(MethodGain {
                method: GainMethod::Constant,
                epsilon: eps,
                gain: gain.clone(),
                converged: true,
                iterations: 0,
                final_residual: 0.0,
                wall_time: *t,
            }));
        }
        if kernel_methods.is_empty() {
            continue;
        }
        let start = Instant::now();
        let solved = MarkovOperator::build(ens.points().view(), eps).and_then(|op| {
            let cfg = SolverConfig { warm_start: warm.clone(), ..cfg.clone() };
            let fp = solve_fixed_point(&op, ens.h_values().view(), &cfg)?;
            Ok((op, fp))
        });
        let shared = start.elapsed().as_secs_f64();
        let (op, fp) = match solved {
            Ok(v) => v,
            Err(err) => {
                let msg = err.to_string();
                for &m in &kernel_methods {
                    out.push(Err((eps, m, Error::Numerical(msg.clone()))));
                }
                continue;
            }
        };
        warm = Some(fp.phi.to_vec());
        for &m in &kernel_methods {
            let start = Instant::now();
            let gain = match m {
                GainMethod::G1 => gain_g1(&op, fp.phi.view(), h),
                _ => gain_g2(&op, fp.phi.view(), ens.h_values().view()),
            };
            out.push(match gain {
                Ok(gain) => Ok(MethodGain {
                    method: m,
                    epsilon: eps,
                    gain,
                    converged: fp.diagnostics.converged,
                    iterations: fp.diagnostics.iterations,
                    final_residual: fp.diagnostics.final_residual,
                    wall_time: shared + start.elapsed().as_secs_f64(),
                }),
                Err(err) => Err((eps, m, err)),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveDistance {
    pub d: usize,
    pub epsilon: f64,
    pub method: GainMethod,
    /// RMS distance of the kernel gain to the constant gain on the axis.
    pub rms_to_constant: f64,
    /// RMS distance of the kernel gain to the exact gain on the axis.
    pub rms_to_exact: f64,
    pub file: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainCurveSummary {
    pub config: ExperimentConfig,
    pub axis: usize,
    pub oracle: Vec<String>,
    pub curves: Vec<CurveDistance>,
}

/// Writes `gain_curve_eps{k}.csv` for the `k`-th ε, each holding every
/// dimension and kernel method with particles sorted along the observed axis,
/// plus `gain_curve_summary.json`.
pub fn run_gain_curve(cfg: &ExperimentConfig, out: &Path) -> Result<GainCurveSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let mut methods: Vec<GainMethod> = cfg.methods.iter().copied().filter(|m| *m != GainMethod::Constant).collect();
    if methods.is_empty() {
        methods.push(GainMethod::G2);
    }
    let mut all = methods.clone();
    all.push(GainMethod::Constant);
    let mut axis = None;
    let mut per_d = Vec::new();
    let mut oracle_names = Vec::new();
    for &d in &cfg.dimensions {
        let spec = cfg.density.build(d)?;
        let h = cfg.observation.build(d)?;
        let a = h
            .single_axis(d)
            .ok_or_else(|| Error::Config("gain curves need an observation of one coordinate".into()))?;
        axis = Some(a);
        let oracle = OracleGain::for_problem(&spec, &h).map_err(|e| Error::Config(e.to_string()))?;
        oracle_names.push(oracle.provenance().as_str().to_string());
        let seed = ensemble_seed(cfg.seed, d, 0);
        let ens = ParticleEnsemble::<f64>::sample(&spec, &h, cfg.particles, seed)?;
        let exact = oracle.evaluate(ens.points().view())?;
        let gains = gains_over_grid(&ens, &h, &cfg.epsilons, &all, &cfg.solver)
            .into_iter()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|(eps, m, e)| match e {
                Error::Numerical(msg) => Error::Numerical(format!("d = {d}, ε = {eps}, {m}: {msg}")),
                other => other,
            })?;
        per_d.push((d, seed, a, ens, exact, gains));
    }
    let mut curves = Vec::new();
    for (k, &eps) in cfg.epsilons.iter().enumerate() {
        let name = format!("gain_curve_eps{k:03}.csv");
        let mut w = csv::Writer::from_path(out.join(&name))?;
        w.write_record(["d", "epsilon", "n", "seed", "method", "particle", "x", "k_exact", "k_kernel", "k_constant"])?;
        for (d, seed, a, ens, exact, gains) in &per_d {
            let find = |m: GainMethod| {
                gains.iter().find(|g| g.method == m && g.epsilon.to_bits() == eps.to_bits()).expect("computed")
            };
            let constant = find(GainMethod::Constant);
            let xs = ens.points().column(*a);
            let mut idx: Vec<usize> = (0..ens.len()).collect();
            idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]).then(i.cmp(&j)));
            for &m in &methods {
                let g = find(m);
                let axis_rms = |other: &Array2<f64>| {
                    let s: f64 = g.gain.column(*a).iter().zip(other.column(*a)).map(|(p, q)| (p - q).powi(2)).sum();
                    (s / ens.len() as f64).sqrt()
                };
                curves.push(CurveDistance {
                    d: *d,
                    epsilon: eps,
                    method: m,
                    rms_to_constant: axis_rms(&constant.gain),
                    rms_to_exact: axis_rms(exact),
                    file: name.clone(),
                });
                for &i in &idx {
                    w.write_record([
                        d.to_string(),
                        fmt_f(eps),
                        ens.len().to_string(),
                        seed.to_string(),
                        m.to_string(),
                        i.to_string(),
                        fmt_f(xs[i]),
                        fmt_f(exact[(i, *a)]),
                        fmt_f(g.gain[(i, *a)]),
                        fmt_f(constant.gain[(i, *a)]),
                    ])?;
                }
            }
        }
        w.flush()?;
    }
    let summary = GainCurveSummary { config: cfg.clone(), axis: axis.unwrap_or(0), oracle: oracle_names, curves };
    write_json(&out.join("gain_curve_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub d: usize,
    pub epsilon: f64,
    pub simulation: usize,
    pub method: GainMethod,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Sorted by `(d, ε, method, simulation)`.
    pub records: Vec<ErrorRecord>,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<Failure>,
    pub oracle: Vec<(usize, String)>,
}

/// Scores every `(d, ε, method, simulation)` against the oracle. Simulations
/// run in parallel; results do not depend on scheduling.
pub fn error_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let mut problems = Vec::new();
    let mut oracle_names = Vec::new();
    for &d in &cfg.dimensions {
        let spec = cfg.density.build(d)?;
        let h = cfg.observation.build(d)?;
        let oracle = OracleGain::for_problem(&spec, &h).map_err(|e| Error::Config(e.to_string()))?;
        oracle_names.push((d, oracle.provenance().as_str().to_string()));
        problems.push((d, spec, h, oracle));
    }
    let jobs: Vec<(usize, usize)> =
        (0..problems.len()).flat_map(|p| (0..cfg.simulations).map(move |s| (p, s))).collect();
    let results: Vec<Result<(Vec<ErrorRecord>, Vec<Failure>)>> = jobs
        .par_iter()
        .map(|&(p, sim)| {
            let (d, spec, h, oracle) = &problems[p];
            let seed = ensemble_seed(cfg.seed, *d, sim);
            let ens = ParticleEnsemble::<f64>::sample(spec, h, cfg.particles, seed)?;
            let exact = oracle.evaluate(ens.points().view())?;
            let mut records = Vec::new();
            let mut failures = Vec::new();
            for g in gains_over_grid(&ens, h, &cfg.epsilons, &cfg.methods, &cfg.solver) {
                match g {
                    Ok(g) => records.push(ErrorRecord {
                        d: *d,
                        epsilon: g.epsilon,
                        n: cfg.particles,
                        seed,
                        simulation: sim,
                        method: g.method,
                        error: rms_error(&g.gain, &exact),
                        converged: g.converged,
                        iterations: g.iterations,
                        final_residual: g.final_residual,
                        wall_time: g.wall_time,
                    }),
                    Err((epsilon, method, err)) => {
                        if !err.is_numerical() {
                            return Err(err);
                        }
                        warn!("skipping d = {d}, ε = {epsilon}, {method}, simulation {sim}: {err}");
                        failures.push(Failure { d: *d, epsilon, simulation: sim, method, message: err.to_string() });
                    }
                }
            }
            Ok((records, failures))
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        let (rs, fs) = r?;
        records.extend(rs);
        failures.extend(fs);
    }
    sort_records(&mut records);
    if let Some(r) = records.iter().find(|r| !r.error.is_finite()) {
        return Err(Error::NonFinite(format!("error at d = {}, ε = {}, simulation {}", r.d, r.epsilon, r.simulation)));
    }
    let cells = summarize(&records);
    Ok(SweepResult { records, cells, failures, oracle: oracle_names })
}

#[derive(Debug, Clone, Serialize)]
struct SweepSummary<'a> {
    config: &'a ExperimentConfig,
    oracle: &'a [(usize, String)],
    cells: &'a [CellSummary],
    failures: &'a [Failure],
}

/// Runs [`error_sweep`] and writes `records.csv`, `cells.csv`,
/// `timings.csv` and `error_sweep_summary.json`.
pub fn run_error_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepResult> {
    std::fs::create_dir_all(out)?;
    let result = error_sweep(cfg)?;
    write_sweep(&result, cfg, out)?;
    Ok(result)
}

pub(crate) fn write_sweep(result: &SweepResult, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let files = ["records.csv", "cells.csv", "timings.csv", "error_sweep_summary.json"].map(|f| out.join(f));
    write_records(&files[0], &result.records)?;
    write_cells(&files[1], &result.cells)?;
    write_timings(&files[2], &result.records)?;
    let summary = SweepSummary { config: cfg, oracle: &result.oracle, cells: &result.cells, failures: &result.failures };
    write_json(&files[3], &summary)?;
    Ok(files.to_vec())
}

/// Particle mean of a gain matrix.
pub fn mean_gain(gain: &Array2<f64>) -> Vec<f64> {
    gain.mean_axis(Axis(0)).expect("non-empty").to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::DensityConfig;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            methods: vec![GainMethod::G1, GainMethod::G2, GainMethod::Constant],
            epsilons: vec![0.1, 0.4],
            dimensions: vec![1, 2],
            particles: 40,
            simulations: 3,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn sweep_shape_and_determinism() {
        let cfg = small();
        let a = error_sweep(&cfg).unwrap();
        assert_eq!(a.records.len(), 2 * 2 * 3 * 3);
        assert_eq!(a.cells.len(), 2 * 2 * 3);
        assert!(a.failures.is_empty());
        assert!(a.records.iter().all(|r| r.error > 0.0 && r.error.is_finite()));
        let b = error_sweep(&cfg).unwrap();
        let strip = |rs: &[ErrorRecord]| rs.iter().map(|r| (r.d, r.epsilon, r.simulation, r.method, r.error)).collect::<Vec<_>>();
        assert_eq!(strip(&a.records), strip(&b.records));
        // the constant gain ignores ε
        let c: Vec<_> = a.records.iter().filter(|r| r.method == GainMethod::Constant && r.d == 1 && r.simulation == 0).collect();
        assert_eq!(c[0].error, c[1].error);
    }

    #[test]
    fn warm_started_grid_matches_cold_solves() {
        let cfg = small();
        let spec = cfg.density.build(1).unwrap();
        let h = cfg.observation.build(1).unwrap();
        let ens = ParticleEnsemble::<f64>::sample(&spec, &h, 60, 3).unwrap();
        let grid = gains_over_grid(&ens, &h, &[0.05, 0.3], &[GainMethod::G2], &cfg.solver);
        for g in grid {
            let g = g.unwrap();
            let cold = crate::solver::estimate_gain(&ens, &h, g.epsilon, GainMethod::G2, &cfg.solver).unwrap();
            let diff = (&g.gain - &cold.gain).mapv(f64::abs).fold(0.0f64, |m, v| m.max(*v));
            assert!(diff < 1e-7, "ε = {}: {diff}", g.epsilon);
        }
    }

    #[test]
    fn missing_oracle_is_a_config_error() {
        let cfg = ExperimentConfig {
            density: DensityConfig::Bimodal { separation: 1.0, variance: 0.2 },
            observation: crate::bench::config::ObservationConfig::Bilinear { i: 0, j: 1 },
            dimensions: vec![2],
            ..small()
        };
        assert!(matches!(error_sweep(&cfg), Err(Error::Config(_))));
    }
}
