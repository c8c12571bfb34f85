//! Hermite eigen-expansion of the Poisson solution for a Gaussian density.
//!
//! For `ρ = N(μ, Σ)` with `Σ = V D Vᵀ`, the weighted Laplacian has
//! eigenfunctions `e_n(x) = Π_j ℏ_{n_j}(V_j·(x−μ)/σ_j)` with eigenvalues
//! `−λ_n`, `λ_n = Σ_j n_j/σ_j²`. The Poisson solution is
//! `φ = Σ_n ⟨e_n, h − ĥ⟩ e_n / λ_n`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};

use super::hermite::{hermite, hermite_all, hermite_derivative, GaussHermite};
use crate::density::{DensitySpec, Gaussian, ObservationFn};
use crate::error::{Error, Result};

/// Truncation used for observation functions that are not polynomials.
pub const DEFAULT_TRUNCATION: usize = 8;

/// Multi-index `n ∈ Z₊^d` with total degree at least one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HermiteIndex(Vec<usize>);

impl HermiteIndex {
    pub fn new(n: Vec<usize>) -> Result<Self> {
        if n.iter().sum::<usize>() == 0 {
            return Err(Error::InvalidParameter("Hermite index must have total degree ≥ 1".into()));
        }
        Ok(Self(n))
    }

    pub fn degrees(&self) -> &[usize] {
        &self.0
    }

    pub fn total_degree(&self) -> usize {
        self.0.iter().sum()
    }

    /// Every index in `d` dimensions with total degree in `1..=max_degree`,
    /// in graded lexicographic order.
    pub fn enumerate(d: usize, max_degree: usize) -> Vec<HermiteIndex> {
        fn rec(prefix: &mut Vec<usize>, d: usize, budget: usize, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == d {
                out.push(prefix.clone());
                return;
            }
            for k in 0..=budget {
                prefix.push(k);
                rec(prefix, d, budget - k, out);
                prefix.pop();
            }
        }
        let mut all = Vec::new();
        rec(&mut Vec::with_capacity(d), d, max_degree, &mut all);
        let mut idx: Vec<HermiteIndex> =
            all.into_iter().filter(|n| n.iter().sum::<usize>() > 0).map(HermiteIndex).collect();
        idx.sort_by_key(|n| (n.total_degree(), std::cmp::Reverse(n.0.clone())));
        idx
    }
}

/// Eigenfunction `e_n` of the weighted Laplacian of a Gaussian, unit norm in `L²(ρ)`.
#[derive(Debug, Clone)]
pub struct Eigenfunction {
    index: HermiteIndex,
    mean: DVector<f64>,
    axes: DMatrix<f64>,
    stds: Vec<f64>,
}

impl Eigenfunction {
    pub fn index(&self) -> &HermiteIndex {
        &self.index
    }

    fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let d = self.stds.len();
        (0..d)
            .map(|j| {
                let proj: f64 = (0..d).map(|k| self.axes[(k, j)] * (x[k] - self.mean[k])).sum();
                proj / self.stds[j]
            })
            .collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let y = self.whiten(x);
        self.index.0.iter().zip(&y).map(|(&n, &yj)| hermite(n, yj)).product()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = self.stds.len();
        let y = self.whiten(x);
        let vals: Vec<f64> = self.index.0.iter().zip(&y).map(|(&n, &yj)| hermite(n, yj)).collect();
        let mut grad = vec![0.0; d];
        for j in 0..d {
            let others: f64 = (0..d).filter(|&k| k != j).map(|k| vals[k]).product();
            let dy = hermite_derivative(self.index.0[j], y[j]) * others / self.stds[j];
            for (k, g) in grad.iter_mut().enumerate() {
                *g += dy * self.axes[(k, j)];
            }
        }
        grad
    }
}

/// Eigenvalue `λ_n = Σ_j n_j/σ_j²` and eigenfunction `e_n` for a Gaussian density.
pub fn gaussian_eigenpair(spec: &DensitySpec, n: &HermiteIndex) -> Result<(f64, Eigenfunction)> {
    let g = spec
        .as_gaussian()
        .ok_or_else(|| Error::NoOracle("eigenpairs are only available for Gaussian densities".into()))?;
    eigenpair(g, n)
}

fn eigenpair(g: &Gaussian, n: &HermiteIndex) -> Result<(f64, Eigenfunction)> {
    if n.0.len() != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), got: n.0.len() });
    }
    let vars = g.principal_variances();
    let lambda = n.0.iter().zip(vars).map(|(&k, v)| k as f64 / v).sum();
    Ok((
        lambda,
        Eigenfunction {
            index: n.clone(),
            mean: g.mean().clone(),
            axes: g.principal_axes().clone(),
            stds: vars.iter().map(|v| v.sqrt()).collect(),
        },
    ))
}

/// Truncated eigen-expansion of the Poisson solution.
#[derive(Debug, Clone)]
pub struct SpectralSolution {
    terms: Vec<(f64, Eigenfunction)>,
    h_mean: f64,
    truncation: usize,
    truncation_residual: f64,
    dim: usize,
}

impl SpectralSolution {
    /// `ĥ = ∫ h ρ`.
    pub fn h_mean(&self) -> f64 {
        self.h_mean
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// `L²(ρ)` norm of the part of `h − ĥ` outside the retained eigenspaces.
    pub fn truncation_residual(&self) -> f64 {
        self.truncation_residual
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(c, e)| c * e.value(x)).sum()
    }

    pub fn gain(&self, x: &[f64]) -> Vec<f64> {
        let mut k = vec![0.0; self.dim];
        for (c, e) in &self.terms {
            for (kj, gj) in k.iter_mut().zip(e.gradient(x)) {
                *kj += c * gj;
            }
        }
        k
    }

    pub fn evaluate(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        if points.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: points.ncols() });
        }
        let mut out = Array2::zeros(points.raw_dim());
        for (i, row) in points.rows().into_iter().enumerate() {
            let x = row.to_vec();
            for (j, v) in self.gain(&x).into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

/// Tensor Gauss–Hermite rule in whitened coordinates of `g`.
pub(crate) struct TensorRule {
    /// Physical nodes, one per row.
    pub points: Vec<Vec<f64>>,
    /// Whitened nodes, one per row.
    pub whitened: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

pub(crate) fn tensor_rule(g: &Gaussian, q: usize) -> TensorRule {
    let gh = GaussHermite::new(q);
    let d = g.dim();
    let stds: Vec<f64> = g.principal_variances().iter().map(|v| v.sqrt()).collect();
    let total = q.pow(d as u32);
    let mut rule = TensorRule {
        points: Vec::with_capacity(total),
        whitened: Vec::with_capacity(total),
        weights: Vec::with_capacity(total),
    };
    let mut digits = vec![0usize; d];
    for _ in 0..total {
        let y: Vec<f64> = digits.iter().map(|&k| gh.nodes[k]).collect();
        let w: f64 = digits.iter().map(|&k| gh.weights[k]).product();
        let x: Vec<f64> = (0..d)
            .map(|k| g.mean()[k] + (0..d).map(|j| g.principal_axes()[(k, j)] * stds[j] * y[j]).sum::<f64>())
            .collect();
        rule.points.push(x);
        rule.whitened.push(y);
        rule.weights.push(w);
        for digit in digits.iter_mut() {
            *digit += 1;
            if *digit < q {
                break;
            }
            *digit = 0;
        }
    }
    rule
}

/// Poisson solution for a Gaussian density by eigen-expansion up to total
/// degree `truncation`. Exact for polynomial `h` of degree `≤ truncation`;
/// polynomial `h` of higher degree is refused.
pub fn spectral_exact_solution(
    spec: &DensitySpec,
    h: &ObservationFn,
    truncation: usize,
) -> Result<SpectralSolution> {
    let g = spec
        .as_gaussian()
        .ok_or_else(|| Error::NoOracle("spectral solution needs a Gaussian density".into()))?;
    let d = g.dim();
    h.check_dimension(d)?;
    let degree = h.polynomial_degree();
    if let Some(p) = degree {
        if p > truncation {
            return Err(Error::InvalidParameter(format!(
                "truncation {truncation} is below the polynomial degree {p} of h"
            )));
        }
    }
    let q = match degree {
        Some(p) => (truncation + p + 2) / 2,
        None => truncation + 8,
    }
    .max(1);
    let rule = tensor_rule(g, q);
    let h_vals: Vec<f64> = rule.points.iter().map(|x| h.value(x)).collect();
    if h_vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observation function at a quadrature node".into()));
    }
    let h_mean: f64 = h_vals.iter().zip(&rule.weights).map(|(v, w)| v * w).sum();
    let variance: f64 = h_vals.iter().zip(&rule.weights).map(|(v, w)| w * (v - h_mean).powi(2)).sum();
    // per node, per axis: ℏ_0..ℏ_truncation
    let tables: Vec<Vec<Vec<f64>>> = rule
        .whitened
        .iter()
        .map(|y| y.iter().map(|&yj| hermite_all(truncation, yj)).collect())
        .collect();
    let mut terms = Vec::new();
    let mut captured = 0.0;
    let floor = 1e-13 * variance.sqrt().max(f64::MIN_POSITIVE);
    for n in HermiteIndex::enumerate(d, truncation) {
        let mut ip = 0.0;
        for ((table, w), hv) in tables.iter().zip(&rule.weights).zip(&h_vals) {
            let e: f64 = n.0.iter().enumerate().map(|(j, &k)| table[j][k]).product();
            ip += w * e * (hv - h_mean);
        }
        captured += ip * ip;
        if ip.abs() > floor {
            let (lambda, ef) = eigenpair(g, &n)?;
            terms.push((ip / lambda, ef));
        }
    }
    Ok(SpectralSolution {
        terms,
        h_mean,
        truncation,
        truncation_residual: (variance - captured).max(0.0).sqrt(),
        dim: d,
    })
}
