//! One-dimensional adaptive quadrature.

use crate::error::{Error, Result};

/// Trapezoid rule with interval doubling, accelerated by Richardson
/// extrapolation (Romberg).
#[derive(Debug, Clone, Copy)]
pub struct Romberg {
    /// Stop when successive diagonal estimates differ by less than
    /// `rel_tol · ∫|f|`.
    pub rel_tol: f64,
    /// Finest level has `2^max_level` intervals.
    pub max_level: usize,
    pub min_level: usize,
}

impl Default for Romberg {
    fn default() -> Self {
        Self { rel_tol: 1e-9, max_level: 22, min_level: 4 }
    }
}

impl Romberg {
    /// `∫_a^b f`. Returns [`Error::Quadrature`] with the last achieved relative
    /// change when `max_level` is exhausted.
    pub fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        let width = b - a;
        let (fa, fb) = (f(a), f(b));
        let mut trap = 0.5 * width * (fa + fb);
        let mut trap_abs = 0.5 * width.abs() * (fa.abs() + fb.abs());
        let mut prev_row = vec![trap];
        let mut achieved = f64::INFINITY;
        for level in 1..=self.max_level {
            let n_new = 1usize << (level - 1);
            let step = width / (n_new as f64 * 2.0);
            let (mut sum, mut sum_abs) = (0.0, 0.0);
            for k in 0..n_new {
                let v = f(a + step * (2 * k + 1) as f64);
                sum += v;
                sum_abs += v.abs();
            }
            if !sum.is_finite() {
                return Err(Error::NonFinite("integrand".into()));
            }
            trap = 0.5 * trap + step * sum;
            trap_abs = 0.5 * trap_abs + step.abs() * sum_abs;
            let mut row = Vec::with_capacity(level + 1);
            row.push(trap);
            let mut factor = 1.0;
            for j in 1..=level {
                factor *= 4.0;
                let r = row[j - 1] + (row[j - 1] - prev_row[j - 1]) / (factor - 1.0);
                row.push(r);
            }
            let change = (row[level] - prev_row[level - 1]).abs();
            let scale = trap_abs.max(f64::MIN_POSITIVE);
            achieved = change / scale;
            if level >= self.min_level && (achieved < self.rel_tol || change == 0.0) {
                return Ok(row[level]);
            }
            prev_row = row;
        }
        Err(Error::Quadrature { achieved })
    }
}
