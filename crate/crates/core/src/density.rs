//! Probability densities, observation functions and particle ensembles.
//!
//! Densities are Gaussians or finite Gaussian mixtures, described in `f64`.
//! Particles are drawn with a seeded [`StreamRng`](crate::rng::StreamRng) and
//! can be materialised in any [`Scalar`] precision.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, StreamRng};
use crate::scalar::Scalar;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal `N(mean, covariance)`.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cholesky: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
    principal_variances: Vec<f64>,
    principal_axes: DMatrix<f64>,
}

impl Gaussian {
    /// Validates symmetry and strict positive definiteness of `covariance`.
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidDensity("dimension must be positive".into()));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::InvalidDensity(format!(
                "covariance is {}x{}, mean has length {d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity("non-finite parameter".into()));
        }
        let scale = covariance.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidDensity("covariance is not symmetric".into()));
                }
            }
        }
        let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || covariance[(i, j)] == 0.0));
        let (principal_variances, principal_axes) = if diagonal {
            ((0..d).map(|i| covariance[(i, i)]).collect::<Vec<_>>(), DMatrix::identity(d, d))
        } else {
            principal_decomposition(&covariance)
        };
        if principal_variances.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::InvalidDensity(
                "covariance must have strictly positive eigenvalues".into(),
            ));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidDensity("covariance is not positive definite".into()))?;
        let cholesky = chol.l();
        let log_det = 2.0 * cholesky.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(Self {
            mean: DVector::from_vec(mean),
            covariance,
            cholesky,
            precision,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
            principal_variances,
            principal_axes,
        })
    }

    /// `N(mean, variance * I)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::from_diagonal_element(d, d, variance))
    }

    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        Self::new(mean, DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    pub fn standard(d: usize) -> Result<Self> {
        Self::isotropic(vec![0.0; d], 1.0)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Eigenvalues `σ_j²` of the covariance. For a diagonal covariance they
    /// follow coordinate order, otherwise they are sorted in decreasing order.
    pub fn principal_variances(&self) -> &[f64] {
        &self.principal_variances
    }

    /// Orthonormal eigenvectors of the covariance, one per column, matching
    /// [`principal_variances`](Self::principal_variances).
    pub fn principal_axes(&self) -> &DMatrix<f64> {
        &self.principal_axes
    }

    pub fn max_variance(&self) -> f64 {
        self.principal_variances.iter().cloned().fold(0.0, f64::max)
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(self.dim(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let q = diff.dot(&(&self.precision * &diff));
        self.log_norm - 0.5 * q
    }

    fn sample_into(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            let mut acc = self.mean[i];
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                acc += self.cholesky[(i, j)] * zj;
            }
            out[i] = acc;
        }
    }
}

fn principal_decomposition(covariance: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = covariance.nrows();
    let eig = SymmetricEigen::new(covariance.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = DMatrix::zeros(d, d);
    let mut variances = Vec::with_capacity(d);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        // sign convention: largest-magnitude component positive
        let lead = v.iter().cloned().fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
        if lead < 0.0 {
            v.neg_mut();
        }
        axes.set_column(col, &v);
        variances.push(eig.eigenvalues[k]);
    }
    (variances, axes)
}

/// Finite mixture `Σ w_c N(μ_c, Σ_c)`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    components: Vec<Gaussian>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if components.is_empty() || weights.len() != components.len() {
            return Err(Error::InvalidDensity(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::InvalidDensity("components differ in dimension".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDensity("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDensity(format!("mixture weights sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self { weights, cumulative, components })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        log_sum_exp(
            self.weights
                .iter()
                .zip(&self.components)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, c)| w.ln() + c.log_pdf(x)),
        )
    }

    fn pick(&self, u: f64) -> usize {
        self.cumulative.partition_point(|&c| c <= u).min(self.components.len() - 1)
    }
}

pub(crate) fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Declarative description of the density particles are drawn from.
#[derive(Debug, Clone)]
pub enum DensitySpec {
    Gaussian(Gaussian),
    Mixture(GaussianMixture),
}

impl DensitySpec {
    /// `½ N(−μ, σ² I) + ½ N(+μ, σ² I)` with `μ = [separation, 0, …, 0]`.
    pub fn symmetric_bimodal(d: usize, separation: f64, variance: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDensity("dimension must be positive".into()));
        }
        let mut left = vec![0.0; d];
        let mut right = vec![0.0; d];
        left[0] = -separation;
        right[0] = separation;
        Ok(DensitySpec::Mixture(GaussianMixture::new(
            vec![0.5, 0.5],
            vec![Gaussian::isotropic(left, variance)?, Gaussian::isotropic(right, variance)?],
        )?))
    }

    pub fn dim(&self) -> usize {
        match self {
            DensitySpec::Gaussian(g) => g.dim(),
            DensitySpec::Mixture(m) => m.dim(),
        }
    }

    pub fn as_gaussian(&self) -> Option<&Gaussian> {
        match self {
            DensitySpec::Gaussian(g) => Some(g),
            DensitySpec::Mixture(_) => None,
        }
    }

    /// Weighted components; a single Gaussian is a one-component mixture.
    pub fn components(&self) -> Vec<(f64, &Gaussian)> {
        match self {
            DensitySpec::Gaussian(g) => vec![(1.0, g)],
            DensitySpec::Mixture(m) => m.weights.iter().cloned().zip(m.components.iter()).collect(),
        }
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        match self {
            DensitySpec::Gaussian(g) => g.log_pdf(x),
            DensitySpec::Mixture(m) => m.log_pdf(x),
        }
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Draws `n` i.i.d. points; a pure function of `(self, n, seed)`.
    pub fn sample<T: Scalar>(&self, n: usize, seed: u64) -> Result<Array2<T>> {
        let mut rng = rng_from_seed(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<T: Scalar>(&self, n: usize, rng: &mut StreamRng) -> Result<Array2<T>> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample size must be positive".into()));
        }
        let d = self.dim();
        let mut buf = vec![0.0; d];
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            match self {
                DensitySpec::Gaussian(g) => g.sample_into(rng, &mut buf),
                DensitySpec::Mixture(m) => {
                    let u: f64 = rng.random();
                    m.components[m.pick(u)].sample_into(rng, &mut buf);
                }
            }
            for (dst, src) in row.iter_mut().zip(&buf) {
                *dst = T::of(*src);
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper around [`DensitySpec::sample`].
pub fn sample<T: Scalar>(spec: &DensitySpec, n: usize, seed: u64) -> Result<Array2<T>> {
    spec.sample(n, seed)
}

pub type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Scalar observation function `h: R^d → R`.
///
/// Indices are zero-based: `Bilinear(0, 1)` is `x₀·x₁`.
#[derive(Clone)]
pub enum ObservationFn {
    /// `H · x`
    Linear(Vec<f64>),
    /// `x[index]`
    Coordinate(usize),
    /// `x[i] · x[j]`
    Bilinear(usize, usize),
    Custom { value: ValueFn, gradient: Option<GradientFn> },
}

impl fmt::Debug for ObservationFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservationFn::Linear(h) => f.debug_tuple("Linear").field(h).finish(),
            ObservationFn::Coordinate(i) => f.debug_tuple("Coordinate").field(i).finish(),
            ObservationFn::Bilinear(i, j) => f.debug_tuple("Bilinear").field(i).field(j).finish(),
            ObservationFn::Custom { gradient, .. } => f
                .debug_struct("Custom")
                .field("has_gradient", &gradient.is_some())
                .finish(),
        }
    }
}

impl ObservationFn {
    /// Custom function without a gradient. Only the gradient-free gain
    /// formulas accept it.
    pub fn custom(value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ObservationFn::Custom { value: Arc::new(value), gradient: None }
    }

    /// Custom function with an analytic gradient. The gradient is checked
    /// against central differences at seeded probe points in `R^dim`.
    pub fn custom_with_gradient(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        dim: usize,
    ) -> Result<Self> {
        let value: ValueFn = Arc::new(value);
        let gradient: GradientFn = Arc::new(gradient);
        let mut rng = rng_from_seed(0x6772_6164);
        for _ in 0..16 {
            let x: Vec<f64> = (0..dim).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let g = gradient(&x);
            if g.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: g.len() });
            }
            for j in 0..dim {
                let step = 1e-5 * x[j].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += step;
                xm[j] -= step;
                let fd = (value(&xp) - value(&xm)) / (2.0 * step);
                if !fd.is_finite() || (fd - g[j]).abs() > 1e-5 * g[j].abs().max(1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gradient component {j} disagrees with finite differences ({} vs {fd})",
                        g[j]
                    )));
                }
            }
        }
        Ok(ObservationFn::Custom { value, gradient: Some(gradient) })
    }

    /// Checks that the function is defined on `R^d`.
    pub fn check_dimension(&self, d: usize) -> Result<()> {
        match self {
            ObservationFn::Linear(h) if h.len() != d => {
                Err(Error::DimensionMismatch { expected: d, got: h.len() })
            }
            ObservationFn::Coordinate(i) if *i >= d => {
                Err(Error::DimensionMismatch { expected: d, got: i + 1 })
            }
            ObservationFn::Bilinear(i, j) if (*i).max(*j) >= d => {
                Err(Error::DimensionMismatch { expected: d, got: (*i).max(*j) + 1 })
            }
            _ => Ok(()),
        }
    }

    /// Raw evaluation; `x` must have a valid dimension.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ObservationFn::Linear(h) => h.iter().zip(x).map(|(a, b)| a * b).sum(),
            ObservationFn::Coordinate(i) => x[*i],
            ObservationFn::Bilinear(i, j) => x[*i] * x[*j],
            ObservationFn::Custom { value, .. } => value(x),
        }
    }

    pub fn has_gradient(&self) -> bool {
        !matches!(self, ObservationFn::Custom { gradient: None, .. })
    }

    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            ObservationFn::Linear(h) => Some(h.clone()),
            ObservationFn::Coordinate(i) => {
                let mut g = vec![0.0; x.len()];
                g[*i] = 1.0;
                Some(g)
            }
            ObservationFn::Bilinear(i, j) => {
                let mut g = vec![0.0; x.len()];
                g[*i] += x[*j];
                g[*j] += x[*i];
                Some(g)
            }
            ObservationFn::Custom { gradient, .. } => gradient.as_ref().map(|g| g(x)),
        }
    }

    /// Total degree when `h` is a known polynomial, `None` for custom functions.
    pub fn polynomial_degree(&self) -> Option<usize> {
        match self {
            ObservationFn::Linear(h) => Some(if h.iter().all(|v| *v == 0.0) { 0 } else { 1 }),
            ObservationFn::Coordinate(_) => Some(1),
            ObservationFn::Bilinear(..) => Some(2),
            ObservationFn::Custom { .. } => None,
        }
    }

    /// `Some(axis)` when `h` is a function of the single coordinate `axis`
    /// in `R^d` (checked structurally; custom functions qualify only for `d = 1`).
    pub fn single_axis(&self, d: usize) -> Option<usize> {
        match self {
            ObservationFn::Coordinate(i) => Some(*i),
            ObservationFn::Bilinear(i, j) if i == j => Some(*i),
            ObservationFn::Linear(h) => {
                let nz: Vec<usize> = (0..h.len()).filter(|&k| h[k] != 0.0).collect();
                match nz.len() {
                    0 => Some(0),
                    1 => Some(nz[0]),
                    _ => None,
                }
            }
            _ if d == 1 => Some(0),
            _ => None,
        }
    }
}

/// Evaluates `h` at every row of `points`.
pub fn evaluate_h<T: Scalar>(h: &ObservationFn, points: ArrayView2<T>) -> Result<Array1<T>> {
    let d = points.ncols();
    h.check_dimension(d)?;
    let mut buf = vec![0.0; d];
    let mut out = Array1::zeros(points.nrows());
    for (i, row) in points.rows().into_iter().enumerate() {
        for (b, v) in buf.iter_mut().zip(row.iter()) {
            *b = v.as_f64();
        }
        let v = h.value(&buf);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("observation function at particle {i} returned {v}")));
        }
        out[i] = T::of(v);
    }
    Ok(out)
}

/// `N` particles in `R^d` and the observation function evaluated at each.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble<T> {
    points: Array2<T>,
    h_values: Array1<T>,
    seed: u64,
}

impl<T: Scalar> ParticleEnsemble<T> {
    pub fn sample(spec: &DensitySpec, h: &ObservationFn, n: usize, seed: u64) -> Result<Self> {
        Self::from_points(spec.sample(n, seed)?, h, seed)
    }

    pub fn from_points(points: Array2<T>, h: &ObservationFn, seed: u64) -> Result<Self> {
        let h_values = evaluate_h(h, points.view())?;
        Self::with_values(points, h_values, seed)
    }

    /// Ensemble from precomputed observation values.
    pub fn with_values(points: Array2<T>, h_values: Array1<T>, seed: u64) -> Result<Self> {
        if points.nrows() < 2 {
            return Err(Error::InvalidParameter(format!(
                "an ensemble needs at least 2 particles, got {}",
                points.nrows()
            )));
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidParameter("particles must have positive dimension".into()));
        }
        if h_values.len() != points.nrows() {
            return Err(Error::DimensionMismatch { expected: points.nrows(), got: h_values.len() });
        }
        if points.iter().chain(h_values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble contains non-finite values".into()));
        }
        Ok(Self { points, h_values, seed })
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

    pub fn h_values(&self) -> &Array1<T> {
        &self.h_values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Particle average `ĥ^(N)` of the observation values.
    pub fn h_mean(&self) -> T {
        mean(self.h_values.iter().cloned())
    }
}

pub(crate) fn mean<T: Scalar>(xs: impl ExactSizeIterator<Item = T>) -> T {
    let n = xs.len();
    xs.sum::<T>() / T::of(n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn degenerate_covariance_is_rejected() {
        assert!(Gaussian::isotropic(vec![0.0], 0.0).is_err());
        assert!(Gaussian::new(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).is_err());
        assert!(Gaussian::new(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(Gaussian::new(vec![0.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn mixture_weights_validated() {
        let g = || Gaussian::standard(1).unwrap();
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![g(), g()]).is_err());
        assert!(GaussianMixture::new(vec![-0.5, 1.5], vec![g(), g()]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![]).is_err());
        assert!(GaussianMixture::new(vec![0.25, 0.75], vec![g(), g()]).is_ok());
    }

    #[test]
    fn bimodal_benchmark_spec() {
        let spec = DensitySpec::symmetric_bimodal(3, 1.0, 0.2).unwrap();
        assert_eq!(spec.dim(), 3);
        let comps = spec.components();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].1.mean().as_slice(), &[-1.0, 0.0, 0.0]);
        assert_eq!(comps[1].1.mean().as_slice(), &[1.0, 0.0, 0.0]);
        assert!((comps[0].1.covariance()[(2, 2)] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn log_pdf_matches_closed_form() {
        let g = Gaussian::new(vec![1.0, -1.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let x = [0.3, 0.2];
        // direct evaluation
        let det: f64 = 2.0 * 1.0 - 0.25;
        let (a, b) = (x[0] - 1.0, x[1] + 1.0);
        let q = (1.0 * a * a - 2.0 * 0.5 * a * b + 2.0 * b * b) / det;
        let expected = -0.5 * q - (2.0 * std::f64::consts::PI) .ln() - 0.5 * det.ln();
        assert!((g.log_pdf(&x) - expected).abs() < 1e-12);
    }

    #[test]
    fn principal_axes_orthonormal_and_sorted() {
        let g = Gaussian::new(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0])).unwrap();
        let v = g.principal_axes();
        let eye = v.transpose() * v;
        assert!((eye - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-12);
        let s = g.principal_variances();
        assert!(s[0] >= s[1]);
        let rebuilt = v * DMatrix::from_diagonal(&DVector::from_column_slice(s)) * v.transpose();
        assert!((rebuilt - g.covariance()).abs().max() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = DensitySpec::symmetric_bimodal(2, 1.0, 0.2).unwrap();
        let a: Array2<f64> = spec.sample(50, 9).unwrap();
        let b: Array2<f64> = spec.sample(50, 9).unwrap();
        let c: Array2<f64> = spec.sample(50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let f: Array2<f32> = spec.sample(50, 9).unwrap();
        assert!((f[(3, 0)] as f64 - a[(3, 0)]).abs() < 1e-6);
        assert!(spec.sample::<f64>(0, 1).is_err());
    }

    #[test]
    fn gaussian_sample_moments() {
        let d = 3;
        let n = 100_000;
        let spec = DensitySpec::Gaussian(Gaussian::standard(d).unwrap());
        let x: Array2<f64> = spec.sample(n, 2024).unwrap();
        let m = x.mean_axis(ndarray::Axis(0)).unwrap();
        let bound = 3.0 * (d as f64).sqrt() / (n as f64).sqrt();
        assert!(m.iter().all(|v| v.abs() < bound), "{m}");
        let centered = &x - &m;
        let cov = centered.t().dot(&centered) / n as f64;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - target).abs() < 0.05, "cov[{i},{j}] = {}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn mixture_frequencies_pass_chi_square() {
        let comps = vec![
            Gaussian::isotropic(vec![-20.0], 1.0).unwrap(),
            Gaussian::isotropic(vec![0.0], 1.0).unwrap(),
            Gaussian::isotropic(vec![20.0], 1.0).unwrap(),
        ];
        let w = vec![0.2, 0.5, 0.3];
        let spec = DensitySpec::Mixture(GaussianMixture::new(w.clone(), comps).unwrap());
        let n = 100_000;
        let x: Array2<f64> = spec.sample(n, 77).unwrap();
        let mut counts = [0usize; 3];
        for v in x.column(0) {
            counts[if *v < -10.0 { 0 } else if *v < 10.0 { 1 } else { 2 }] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&w)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // 0.99 quantile of chi-square with 2 degrees of freedom
        assert!(chi2 < 9.2103, "chi2 = {chi2}");
    }

    #[test]
    fn observation_examples() {
        let pts = array![[3.0, 7.0], [2.0, 5.0]];
        let lin = evaluate_h(&ObservationFn::Linear(vec![1.0, 0.0]), pts.view()).unwrap();
        assert_eq!(lin[0], 3.0);
        let bil = evaluate_h(&ObservationFn::Bilinear(0, 1), pts.view()).unwrap();
        assert_eq!(bil[1], 10.0);
        let nan = ObservationFn::custom(|_| f64::NAN);
        assert!(matches!(evaluate_h(&nan, pts.view()), Err(Error::NonFinite(_))));
        assert!(matches!(
            evaluate_h(&ObservationFn::Linear(vec![1.0]), pts.view()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(evaluate_h(&ObservationFn::Coordinate(2), pts.view()).is_err());
    }

    #[test]
    fn custom_gradient_is_validated() {
        let ok = ObservationFn::custom_with_gradient(
            |x| x[0].sin() * x[1],
            |x| vec![x[0].cos() * x[1], x[0].sin()],
            2,
        );
        assert!(ok.unwrap().has_gradient());
        let bad = ObservationFn::custom_with_gradient(|x| x[0] * x[0], |x| vec![x[0]], 1);
        assert!(bad.is_err());
        assert!(!ObservationFn::custom(|x| x[0]).has_gradient());
    }

    #[test]
    fn bilinear_gradient() {
        let g = ObservationFn::Bilinear(0, 1).gradient(&[2.0, 5.0]).unwrap();
        assert_eq!(g, vec![5.0, 2.0]);
        let sq = ObservationFn::Bilinear(1, 1).gradient(&[2.0, 5.0]).unwrap();
        assert_eq!(sq, vec![0.0, 10.0]);
    }

    #[test]
    fn ensemble_requires_two_particles() {
        let h = ObservationFn::Coordinate(0);
        assert!(ParticleEnsemble::from_points(array![[1.0]], &h, 0).is_err());
        let e = ParticleEnsemble::from_points(array![[1.0], [3.0]], &h, 0).unwrap();
        assert_eq!(e.h_mean(), 2.0);
    }

    #[test]
    fn linear_h_mean_concentrates() {
        // |ĥ| ≤ 4 |H| σ_max / √N for a centered Gaussian, checked on 100 seeds
        let spec = DensitySpec::Gaussian(Gaussian::diagonal(vec![0.0, 0.0], &[1.0, 2.0]).unwrap());
        let h = ObservationFn::Linear(vec![0.6, -0.8]);
        let n = 400;
        let bound = 4.0 * 1.0 * 2f64.sqrt() / (n as f64).sqrt();
        let inside = (0..100)
            .filter(|&s| {
                let e = ParticleEnsemble::<f64>::sample(&spec, &h, n, s).unwrap();
                e.h_mean().abs() <= bound
            })
            .count();
        assert!(inside >= 99, "{inside}");
    }
}
