//! Gaussian-kernel Markov operator over a particle ensemble.
//!
//! Built in three stages, each available on its own:
//!
//! 1. affinity `g_ij = exp(−|Xⁱ − Xʲ|²/4ε)`,
//! 2. symmetric normalisation `k_ij = g_ij/(√s_i √s_j)`, `s_i = Σ_l g_il`,
//! 3. row normalisation `T_ij = k_ij/r_i`, `r_i = Σ_l k_il`.
//!
//! `k` is stored once as a packed upper triangle; `T` is never materialised.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense symmetric `n × n` matrix stored as its packed upper triangle.
#[derive(Debug, Clone)]
pub struct SymmetricMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymmetricMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * (n + 1) / 2] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn row_start(&self, i: usize) -> usize {
        i * (2 * self.n - i + 1) / 2
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.row_start(a) + (b - a)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[self.offset(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.offset(i, j);
        self.data[k] = v;
    }

    /// Mutable upper-triangle rows: row `i` holds columns `i..n`.
    fn rows_mut(&mut self) -> Vec<&mut [T]> {
        let mut rows = Vec::with_capacity(self.n);
        let mut rest = self.data.as_mut_slice();
        for i in 0..self.n {
            let (row, tail) = rest.split_at_mut(self.n - i);
            rows.push(row);
            rest = tail;
        }
        rows
    }

    /// Packed rows: row `i` holds columns `i..n`.
    fn rows(&self) -> impl Iterator<Item = (usize, &[T])> {
        let mut start = 0;
        (0..self.n).map(move |i| {
            let len = self.n - i;
            let row = &self.data[start..start + len];
            start += len;
            (i, row)
        })
    }

    /// Full row sums `Σ_j a_ij`.
    pub fn row_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.n];
        for (i, row) in self.rows() {
            sums[i] += row.iter().cloned().sum::<T>();
            for (s, v) in sums[i + 1..].iter_mut().zip(&row[1..]) {
                *s += *v;
            }
        }
        sums
    }

    /// `A · f`.
    pub fn matvec(&self, f: &[T]) -> Vec<T> {
        assert_eq!(f.len(), self.n);
        let mut out = vec![T::zero(); self.n];
        for (i, row) in self.rows() {
            let fi = f[i];
            let (head, tail) = out[i..].split_at_mut(1);
            head[0] += row_pass(row, &f[i..], tail, fi);
        }
        out
    }

    /// `A · B` for a tall `n × m` matrix `B`, in one pass over the storage.
    pub fn matmul(&self, b: ArrayView2<T>) -> Array2<T> {
        assert_eq!(b.nrows(), self.n);
        let cols: Vec<Vec<T>> = b.columns().into_iter().map(|c| c.to_vec()).collect();
        let mut out: Vec<Vec<T>> = vec![vec![T::zero(); self.n]; cols.len()];
        for (i, row) in self.rows() {
            for (col, o) in cols.iter().zip(out.iter_mut()) {
                let (head, tail) = o[i..].split_at_mut(1);
                head[0] += row_pass(row, &col[i..], tail, col[i]);
            }
        }
        Array2::from_shape_fn((self.n, cols.len()), |(i, c)| out[c][i])
    }

    pub fn to_dense(&self) -> Array2<T> {
        Array2::from_shape_fn((self.n, self.n), |(i, j)| self.get(i, j))
    }
}

/// Dot product with eight independent partial sums.
#[inline(always)]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

#[inline(always)]
fn axpy<T: Scalar>(y: &mut [T], x: &[T], a: T) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += *xi * a;
    }
}

/// One packed row of a symmetric product: returns `row · f` and adds
/// `row[1..] · fi` to `tail`.
#[inline(always)]
fn row_pass<T: Scalar>(row: &[T], f: &[T], tail: &mut [T], fi: T) -> T {
    axpy(tail, &row[1..], fi);
    dot(row, f)
}

/// `g_ij = exp(−|Xⁱ − Xʲ|²/(4ε))`; rows are computed in parallel.
pub fn gaussian_affinity<T: Scalar>(points: ArrayView2<T>, epsilon: T) -> Result<SymmetricMatrix<T>> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!("kernel bandwidth must be positive, got {epsilon}")));
    }
    let n = points.nrows();
    let mut g = SymmetricMatrix::<T>::zeros(n);
    let scale = T::one() / (T::of(4.0) * epsilon);
    let cols: Vec<Vec<T>> = points.columns().into_iter().map(|c| c.to_vec()).collect();
    g.rows_mut().into_par_iter().enumerate().for_each(|(i, row)| {
        for col in &cols {
            let xi = col[i];
            for (slot, xj) in row.iter_mut().zip(&col[i..]) {
                *slot += (xi - *xj) * (xi - *xj);
            }
        }
        for slot in row.iter_mut() {
            *slot = (-*slot * scale).exp();
        }
    });
    Ok(g)
}

/// Turns `g` into `k_ij = g_ij/(√s_i √s_j)` in place and returns `√s`.
pub fn symmetric_normalize<T: Scalar>(g: &mut SymmetricMatrix<T>) -> Result<Vec<T>> {
    let sums = g.row_sums();
    if let Some(i) = sums.iter().position(|s| !(*s > T::zero()) || !s.is_finite()) {
        return Err(Error::Numerical(format!("affinity row {i} sums to {}", sums[i])));
    }
    let degree: Vec<T> = sums.iter().map(|s| s.sqrt()).collect();
    let inv: Vec<T> = degree.iter().map(|v| T::one() / *v).collect();
    let inv = &inv;
    g.rows_mut().into_par_iter().enumerate().for_each(|(i, row)| {
        let a = inv[i];
        for (slot, b) in row.iter_mut().zip(&inv[i..]) {
            *slot = *slot * a * *b;
        }
    });
    Ok(degree)
}

/// Row-stochastic matrix `T = diag(r)⁻¹ k` approximating `e^{εΔ_ρ}`.
#[derive(Debug, Clone)]
pub struct MarkovOperator<T> {
    epsilon: T,
    points: Array2<T>,
    degree: Vec<T>,
    kernel: SymmetricMatrix<T>,
    row_sums: Vec<T>,
    /// `m_i = Σ_j T_ij Xʲ`
    row_means: Array2<T>,
}

impl<T: Scalar> MarkovOperator<T> {
    /// Assembles `T` for the given particle positions (`N × d`).
    pub fn build(points: ArrayView2<T>, epsilon: T) -> Result<Self> {
        if points.nrows() < 2 {
            return Err(Error::InvalidParameter(format!(
                "the kernel needs at least 2 particles, got {}",
                points.nrows()
            )));
        }
        let mut kernel = gaussian_affinity(points, epsilon)?;
        let degree = symmetric_normalize(&mut kernel)?;
        let row_sums = kernel.row_sums();
        if let Some(i) = row_sums.iter().position(|r| !(*r > T::zero()) || !r.is_finite()) {
            return Err(Error::Numerical(format!("kernel row {i} sums to {}", row_sums[i])));
        }
        let points = points.to_owned();
        let mut row_means = kernel.matmul(points.view());
        for (mut row, r) in row_means.axis_iter_mut(Axis(0)).zip(&row_sums) {
            row /= *r;
        }
        Ok(Self { epsilon, points, degree, kernel, row_sums, row_means })
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<T> {
        &self.points
    }

    /// `√s_i`, the symmetric-normalisation denominators.
    pub fn degree(&self) -> &[T] {
        &self.degree
    }

    /// The symmetric kernel `k` before row normalisation.
    pub fn kernel(&self) -> &SymmetricMatrix<T> {
        &self.kernel
    }

    /// `r_i = Σ_l k_il`.
    pub fn row_sums(&self) -> &[T] {
        &self.row_sums
    }

    /// `π_i = r_i / Σ r`, the stationary distribution; `T` is self-adjoint in `ℓ²(π)`.
    pub fn stationary_distribution(&self) -> Vec<T> {
        let total: T = self.row_sums.iter().cloned().sum();
        self.row_sums.iter().map(|r| *r / total).collect()
    }

    /// `m_i = Σ_j T_ij Xʲ`.
    pub fn row_means(&self) -> &Array2<T> {
        &self.row_means
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> T {
        self.kernel.get(i, j) / self.row_sums[i]
    }

    pub fn to_dense(&self) -> Array2<T> {
        Array2::from_shape_fn((self.len(), self.len()), |(i, j)| self.entry(i, j))
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: n });
        }
        Ok(())
    }

    /// `T f`.
    pub fn apply(&self, f: ArrayView1<T>) -> Result<Array1<T>> {
        self.check_len(f.len())?;
        let f = f.to_vec();
        let mut out = self.kernel.matvec(&f);
        for (o, r) in out.iter_mut().zip(&self.row_sums) {
            *o /= *r;
        }
        Ok(Array1::from_vec(out))
    }

    pub fn gradient(&self) -> GradientOperator<'_, T> {
        GradientOperator { op: self }
    }

    /// `∇T f` at every particle; see [`GradientOperator::apply`].
    pub fn apply_gradient(&self, f: ArrayView1<T>) -> Result<Array2<T>> {
        self.gradient().apply(f)
    }

    /// `(1/2ε) Σ_j T_ij f_j (Xʲ − m_i)` accumulated term by term, without
    /// expanding into two weighted moments.
    pub fn apply_gradient_centred(&self, f: ArrayView1<T>) -> Result<Array2<T>> {
        self.check_len(f.len())?;
        let (n, d) = (self.len(), self.dim());
        let f = f.to_vec();
        let x: Vec<Vec<T>> = self.points.columns().into_iter().map(|c| c.to_vec()).collect();
        let m: Vec<Vec<T>> = self.row_means.columns().into_iter().map(|c| c.to_vec()).collect();
        // unnormalised sums Σ_j k_ij f_j (Xʲ − m_i), split by triangle
        let mut acc: Vec<Vec<T>> = vec![vec![T::zero(); n]; d];
        for (i, row) in self.kernel.rows() {
            let fi = f[i];
            for c in 0..d {
                let (xc, mc) = (&x[c], &m[c]);
                let mi = mc[i];
                let mut upper = T::zero();
                for ((v, fj), xj) in row.iter().zip(&f[i..]).zip(&xc[i..]) {
                    upper += *v * *fj * (*xj - mi);
                }
                acc[c][i] += upper;
                let xi = xc[i];
                for ((a, v), mj) in acc[c][i + 1..].iter_mut().zip(&row[1..]).zip(&mc[i + 1..]) {
                    *a += *v * fi * (xi - *mj);
                }
            }
        }
        let two_eps = T::of(2.0) * self.epsilon;
        Ok(Array2::from_shape_fn((n, d), |(i, c)| acc[c][i] / self.row_sums[i] / two_eps))
    }
}

/// View of a [`MarkovOperator`] as the map `f ↦ ∇T f`.
#[derive(Debug, Clone, Copy)]
pub struct GradientOperator<'a, T> {
    op: &'a MarkovOperator<T>,
}

impl<T: Scalar> GradientOperator<'_, T> {
    /// Row `i` is `(1/2ε)[Σ_j T_ij Xʲ f_j − m_i Σ_j T_ij f_j]`: the covariance
    /// of position and `f` under the weights of row `i`.
    pub fn apply(&self, f: ArrayView1<T>) -> Result<Array2<T>> {
        let op = self.op;
        op.check_len(f.len())?;
        let (n, d) = (op.len(), op.dim());
        let mut rhs = Array2::<T>::zeros((n, d + 1));
        for i in 0..n {
            rhs[(i, 0)] = f[i];
            for c in 0..d {
                rhs[(i, c + 1)] = op.points[(i, c)] * f[i];
            }
        }
        let prod = op.kernel.matmul(rhs.view());
        let two_eps = T::of(2.0) * op.epsilon;
        let mut out = Array2::<T>::zeros((n, d));
        for i in 0..n {
            let r = op.row_sums[i];
            let tf = prod[(i, 0)] / r;
            for c in 0..d {
                out[(i, c)] = (prod[(i, c + 1)] / r - op.row_means[(i, c)] * tf) / two_eps;
            }
        }
        Ok(out)
    }
}
