//! Normalised probabilists' Hermite polynomials and Gauss–Hermite quadrature.
//!
//! `hermite(n, x) = He_n(x) / √(n!)`, orthonormal in `L²(N(0, 1))`. They are
//! the eigenfunctions of the weighted Laplacian of the standard normal
//! density, with eigenvalue `−n`.

use nalgebra::{DMatrix, SymmetricEigen};

/// `He_n(x) / √(n!)`.
pub fn hermite(n: usize, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

/// Values of `hermite(0..=n_max, x)`.
pub fn hermite_all(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    if n_max >= 1 {
        out.push(x);
    }
    for k in 1..n_max {
        let next = (x * out[k] - (k as f64).sqrt() * out[k - 1]) / ((k + 1) as f64).sqrt();
        out.push(next);
    }
    out
}

/// Derivative of [`hermite`]: `√n · hermite(n − 1, x)`.
pub fn hermite_derivative(n: usize, x: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        (n as f64).sqrt() * hermite(n - 1, x)
    }
}

/// `q`-point Gauss–Hermite rule for the standard normal measure.
///
/// Exact for polynomials of degree `≤ 2q − 1`; the weights sum to one.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch: eigen-decomposition of the Jacobi matrix of the
    /// three-term recurrence.
    pub fn new(q: usize) -> Self {
        assert!(q >= 1, "quadrature needs at least one node");
        let mut jacobi = DMatrix::<f64>::zeros(q, q);
        for k in 1..q {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..q)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(Y)]` for `Y ~ N(0, 1)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}
