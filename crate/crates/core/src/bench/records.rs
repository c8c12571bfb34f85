//! Error records, per-cell summaries and their CSV form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::GainMethod;

/// Floats in every CSV are written with 17 significant digits.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

/// Score of one gain estimate on one ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub d: usize,
    pub epsilon: f64,
    pub n: usize,
    /// Seed of the ensemble.
    pub seed: u64,
    pub simulation: usize,
    pub method: GainMethod,
    /// `√((1/N) Σ |K_est(Xⁱ) − K(Xⁱ)|²)`
    pub error: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    /// Seconds; kept out of the records CSV so reruns are byte-identical.
    pub wall_time: f64,
}

pub const RECORD_COLUMNS: [&str; 10] =
    ["d", "epsilon", "n", "seed", "simulation", "method", "error", "converged", "iterations", "final_residual"];

impl ErrorRecord {
    fn key(&self) -> (usize, u64, GainMethod, usize) {
        (self.d, self.epsilon.to_bits(), self.method, self.simulation)
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.d.to_string(),
            fmt_f(self.epsilon),
            self.n.to_string(),
            self.seed.to_string(),
            self.simulation.to_string(),
            self.method.to_string(),
            fmt_f(self.error),
            self.converged.to_string(),
            self.iterations.to_string(),
            fmt_f(self.final_residual),
        ]
    }
}

/// Orders records by `(d, ε, method, simulation)`.
pub fn sort_records(records: &mut [ErrorRecord]) {
    records.sort_by_key(|r| r.key());
}

pub fn write_records(path: &Path, records: &[ErrorRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings(path: &Path, records: &[ErrorRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["d", "epsilon", "n", "seed", "simulation", "method", "wall_time"])?;
    for r in records {
        let f = r.fields();
        w.write_record([&f[0], &f[1], &f[2], &f[3], &f[4], &f[5], &fmt_f(r.wall_time)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ErrorRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().ne(RECORD_COLUMNS.iter().copied()) {
        return Err(Error::Config(format!("{} is not a records file", path.display())));
    }
    let bad = |what: &str, line: usize| Error::Config(format!("{}: bad {what} on record {line}", path.display()));
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let num = |i: usize| row[i].parse::<f64>().map_err(|_| bad(RECORD_COLUMNS[i], line));
        let int = |i: usize| row[i].parse::<u64>().map_err(|_| bad(RECORD_COLUMNS[i], line));
        out.push(ErrorRecord {
            d: int(0)? as usize,
            epsilon: num(1)?,
            n: int(2)? as usize,
            seed: int(3)?,
            simulation: int(4)? as usize,
            method: row[5].parse()?,
            error: num(6)?,
            converged: row[7].parse().map_err(|_| bad("converged", line))?,
            iterations: int(8)? as usize,
            final_residual: num(9)?,
            wall_time: f64::NAN,
        });
    }
    Ok(out)
}

/// Aggregate of the records sharing `(d, ε, method)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub d: usize,
    pub epsilon: f64,
    pub n: usize,
    pub method: GainMethod,
    pub simulations: usize,
    pub mean_error: f64,
    /// Standard error of `mean_error`; NaN for a single simulation.
    pub std_error: f64,
    pub converged_fraction: f64,
    pub mean_iterations: f64,
}

pub const CELL_COLUMNS: [&str; 9] =
    ["d", "epsilon", "n", "method", "simulations", "mean_error", "std_error", "converged_fraction", "mean_iterations"];

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Cells in `(d, ε, method)` order.
pub fn summarize(records: &[ErrorRecord]) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(usize, u64, GainMethod), Vec<&ErrorRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.d, r.epsilon.to_bits(), r.method)).or_default().push(r);
    }
    cells
        .into_values()
        .map(|rs| {
            let errors: Vec<f64> = rs.iter().map(|r| r.error).collect();
            let (mean_error, std_error) = mean_and_se(&errors);
            let m = rs.len() as f64;
            CellSummary {
                d: rs[0].d,
                epsilon: rs[0].epsilon,
                n: rs[0].n,
                method: rs[0].method,
                simulations: rs.len(),
                mean_error,
                std_error,
                converged_fraction: rs.iter().filter(|r| r.converged).count() as f64 / m,
                mean_iterations: rs.iter().map(|r| r.iterations as f64).sum::<f64>() / m,
            }
        })
        .collect()
}

pub fn write_cells(path: &Path, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CELL_COLUMNS)?;
    for c in cells {
        w.write_record([
            c.d.to_string(),
            fmt_f(c.epsilon),
            c.n.to_string(),
            c.method.to_string(),
            c.simulations.to_string(),
            fmt_f(c.mean_error),
            fmt_f(c.std_error),
            fmt_f(c.converged_fraction),
            fmt_f(c.mean_iterations),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(eps: f64, sim: usize, error: f64) -> ErrorRecord {
        ErrorRecord {
            d: 1,
            epsilon: eps,
            n: 10,
            seed: 7,
            simulation: sim,
            method: GainMethod::G2,
            error,
            converged: sim != 1,
            iterations: 4,
            final_residual: 1e-11,
            wall_time: 0.5,
        }
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 6.02e23, -2.5] {
            let s = fmt_f(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn summary_and_csv_round_trip() {
        let mut recs = vec![record(0.2, 1, 3.0), record(0.1, 0, 1.0), record(0.2, 0, 1.0), record(0.1, 1, 3.0)];
        sort_records(&mut recs);
        assert_eq!(recs.iter().map(|r| (r.epsilon, r.simulation)).collect::<Vec<_>>(), vec![
            (0.1, 0),
            (0.1, 1),
            (0.2, 0),
            (0.2, 1)
        ]);
        let cells = summarize(&recs);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].mean_error, 2.0);
        assert!((cells[0].std_error - 1.0).abs() < 1e-15);
        assert_eq!(cells[0].converged_fraction, 0.5);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_records(&path, &recs).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.fields(), b.fields());
        }
    }
}
