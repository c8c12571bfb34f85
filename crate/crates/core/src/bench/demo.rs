//! Filtering runs comparing gain modes on one scenario.

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::records::{fmt_f, mean_and_se, write_json};
use crate::error::{Error, Result};
use crate::fpf::{kalman_bucy, mean_square_error, run_filter, simulate_truth, FilterScenario, GainMode, KalmanBucy, Trajectory};
use crate::rng::derive_seed;

/// Filter output of one mode on one run.
#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: String,
    pub means: Array2<f64>,
    pub mse: f64,
    /// Particle mean at the horizon minus the Kalman–Bucy mean, when available.
    pub final_offset: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DemoRun {
    pub run: usize,
    pub seed: u64,
    pub truth: Trajectory,
    pub kalman: Option<KalmanBucy>,
    pub kalman_mse: Option<f64>,
    pub modes: Vec<ModeRun>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeSummary {
    pub mode: String,
    pub mean_mse: f64,
    pub mse_std_error: f64,
    /// Per coordinate: mean over runs of the final particle mean minus the
    /// final Kalman–Bucy mean, and its standard error.
    pub final_offset: Option<Vec<(f64, f64)>>,
    /// Whether every coordinate of `final_offset` is within 3 standard errors of 0.
    pub tracks_kalman: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoSummary {
    pub config: ExperimentConfig,
    pub runs: usize,
    pub kalman_mean_mse: Option<f64>,
    pub kalman_mse_std_error: Option<f64>,
    pub modes: Vec<ModeSummary>,
}

fn parse_mode(name: &str, scenario: &FilterScenario, kb: Option<&KalmanBucy>) -> Result<GainMode> {
    Ok(match name {
        "g1" => GainMode::G1,
        "g2" => GainMode::G2,
        "constant" => GainMode::Constant,
        "zero" => GainMode::zero(),
        "kalman" => kb
            .ok_or_else(|| Error::Config("kalman mode needs a linear Gaussian scenario".into()))?
            .gain_mode(scenario)?,
        other => return Err(Error::Config(format!("unknown filter mode {other:?}"))),
    })
}

/// Runs every mode of `filter.modes` on `filter.runs` independent scenarios.
pub fn fpf_demo(cfg: &ExperimentConfig) -> Result<(Vec<DemoRun>, DemoSummary)> {
    cfg.validate()?;
    let probe = cfg.scenario(cfg.seed)?;
    let linear = kalman_bucy(&probe, &simulate_truth(&probe)?).is_ok();
    for m in &cfg.filter.modes {
        if m == "kalman" && !linear {
            return Err(Error::Config("kalman mode needs a linear Gaussian scenario".into()));
        }
        if !["g1", "g2", "constant", "zero", "kalman"].contains(&m.as_str()) {
            return Err(Error::Config(format!("unknown filter mode {m:?}")));
        }
    }
    let runs: Vec<DemoRun> = (0..cfg.filter.runs)
        .into_par_iter()
        .map(|run| {
            let seed = derive_seed(cfg.seed, &[2, run as u64]);
            let scenario = cfg.scenario(seed)?;
            let truth = simulate_truth(&scenario)?;
            let kalman = if linear { Some(kalman_bucy(&scenario, &truth)?) } else { None };
            let kalman_mse = kalman.as_ref().map(|k| mean_square_error(&truth, &k.means));
            let mut modes = Vec::new();
            for name in &cfg.filter.modes {
                let mode = parse_mode(name, &scenario, kalman.as_ref())?;
                let fr = run_filter(&scenario, &truth, &mode, cfg.filter.epsilon, &cfg.solver)?;
                let last = fr.means.nrows() - 1;
                let final_offset = kalman
                    .as_ref()
                    .map(|k| (0..scenario.dim()).map(|c| fr.means[(last, c)] - k.means[(last, c)]).collect());
                modes.push(ModeRun { mode: name.clone(), mse: mean_square_error(&truth, &fr.means), means: fr.means, final_offset });
            }
            Ok(DemoRun { run, seed, truth, kalman, kalman_mse, modes })
        })
        .collect::<Result<_>>()?;
    let d = cfg.dimensions[0];
    let modes = cfg
        .filter
        .modes
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mses: Vec<f64> = runs.iter().map(|r| r.modes[k].mse).collect();
            let (mean_mse, mse_std_error) = mean_and_se(&mses);
            let final_offset = linear.then(|| {
                (0..d)
                    .map(|c| {
                        let xs: Vec<f64> = runs.iter().map(|r| r.modes[k].final_offset.as_ref().expect("linear")[c]).collect();
                        mean_and_se(&xs)
                    })
                    .collect::<Vec<_>>()
            });
            let tracks_kalman = final_offset
                .as_ref()
                .map(|o| o.iter().all(|(m, se)| m.abs() <= 3.0 * se || (*m == 0.0 && *se == 0.0)));
            ModeSummary { mode: name.clone(), mean_mse, mse_std_error, final_offset, tracks_kalman }
        })
        .collect();
    let (kalman_mean_mse, kalman_mse_std_error) = if linear {
        let xs: Vec<f64> = runs.iter().map(|r| r.kalman_mse.expect("linear")).collect();
        let (m, se) = mean_and_se(&xs);
        (Some(m), Some(se))
    } else {
        (None, None)
    };
    let summary = DemoSummary { config: cfg.clone(), runs: runs.len(), kalman_mean_mse, kalman_mse_std_error, modes };
    Ok((runs, summary))
}

/// Runs [`fpf_demo`] and writes `trajectory.csv` (first run),
/// `runs.csv` and `fpf_summary.json`.
pub fn run_fpf_demo(cfg: &ExperimentConfig, out: &Path) -> Result<DemoSummary> {
    std::fs::create_dir_all(out)?;
    let (runs, summary) = fpf_demo(cfg)?;
    let first = &runs[0];
    let d = first.truth.states.ncols();
    let mut w = csv::Writer::from_path(out.join("trajectory.csv"))?;
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|c| format!("x{c}")));
    header.push("z".into());
    let mut estimators: Vec<(String, &Array2<f64>)> = first.modes.iter().map(|m| (m.mode.clone(), &m.means)).collect();
    if let Some(k) = &first.kalman {
        estimators.push(("kalman_bucy".into(), &k.means));
    }
    for (name, _) in &estimators {
        header.extend((0..d).map(|c| format!("mean_{name}_{c}")));
        header.push(format!("sq_error_{name}"));
    }
    w.write_record(&header)?;
    for (k, t) in first.truth.times.iter().enumerate() {
        let mut row = vec![fmt_f(*t)];
        row.extend((0..d).map(|c| fmt_f(first.truth.states[(k, c)])));
        row.push(fmt_f(first.truth.observations[k]));
        for (_, means) in &estimators {
            row.extend((0..d).map(|c| fmt_f(means[(k, c)])));
            row.push(fmt_f((0..d).map(|c| (means[(k, c)] - first.truth.states[(k, c)]).powi(2)).sum()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("runs.csv"))?;
    let mut header: Vec<String> = ["run", "seed", "mode", "mse", "kalman_mse"].map(String::from).to_vec();
    header.extend((0..d).map(|c| format!("final_offset_{c}")));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(fmt_f).unwrap_or_default();
    for r in &runs {
        for m in &r.modes {
            let mut row = vec![r.run.to_string(), r.seed.to_string(), m.mode.clone(), fmt_f(m.mse), opt(r.kalman_mse)];
            row.extend((0..d).map(|c| opt(m.final_offset.as_ref().map(|o| o[c]))));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    write_json(&out.join("fpf_summary.json"), &summary)?;
    Ok(summary)
}
