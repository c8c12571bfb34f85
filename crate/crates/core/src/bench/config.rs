//! Experiment configuration, read from TOML.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density::{DensitySpec, Gaussian, GaussianMixture, ObservationFn};
use crate::error::{Error, Result};
use crate::fpf::{Drift, FilterScenario};
use crate::solver::{GainMethod, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    /// `½N(−μ, σ²I) + ½N(μ, σ²I)` with `μ = separation·e₁`.
    Bimodal {
        #[serde(default = "one")]
        separation: f64,
        #[serde(default = "bimodal_variance")]
        variance: f64,
    },
    /// `N(mean·1, variance·I)` in whatever dimension is requested.
    IsotropicGaussian {
        variance: f64,
        #[serde(default)]
        mean: f64,
    },
    /// Fixed-dimension Gaussian; `covariance` is given row by row.
    Gaussian { mean: Vec<f64>, covariance: Vec<Vec<f64>> },
    Mixture { weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>> },
}

fn one() -> f64 {
    1.0
}

fn bimodal_variance() -> f64 {
    0.2
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

impl DensityConfig {
    /// The density in dimension `d`. Fixed-dimension variants reject any
    /// other `d`.
    pub fn build(&self, d: usize) -> Result<DensitySpec> {
        let fixed = |dim: usize| {
            if dim != d {
                Err(Error::Config(format!("density has dimension {dim}, requested {d}")))
            } else {
                Ok(())
            }
        };
        match self {
            DensityConfig::Bimodal { separation, variance } => DensitySpec::symmetric_bimodal(d, *separation, *variance),
            DensityConfig::IsotropicGaussian { variance, mean } => {
                Ok(DensitySpec::Gaussian(Gaussian::isotropic(vec![*mean; d], *variance)?))
            }
            DensityConfig::Gaussian { mean, covariance } => {
                fixed(mean.len())?;
                Ok(DensitySpec::Gaussian(Gaussian::new(mean.clone(), matrix(covariance, "covariance")?)?))
            }
            DensityConfig::Mixture { weights, means, covariances } => {
                if means.len() != weights.len() || covariances.len() != weights.len() {
                    return Err(Error::Config("mixture needs one mean and covariance per weight".into()));
                }
                let comps = means
                    .iter()
                    .zip(covariances)
                    .map(|(m, c)| {
                        fixed(m.len())?;
                        Gaussian::new(m.clone(), matrix(c, "covariance")?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(DensitySpec::Mixture(GaussianMixture::new(weights.clone(), comps)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationConfig {
    /// `h(x) = x_index`
    Coordinate {
        #[serde(default)]
        index: usize,
    },
    /// `h(x) = H·x`
    Linear { h: Vec<f64> },
    /// `h(x) = x_i x_j`
    Bilinear { i: usize, j: usize },
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig::Coordinate { index: 0 }
    }
}

impl ObservationConfig {
    pub fn build(&self, d: usize) -> Result<ObservationFn> {
        let h = match self {
            ObservationConfig::Coordinate { index } => ObservationFn::Coordinate(*index),
            ObservationConfig::Linear { h } => ObservationFn::Linear(h.clone()),
            ObservationConfig::Bilinear { i, j } => ObservationFn::Bilinear(*i, *j),
        };
        h.check_dimension(d).map_err(|e| Error::Config(format!("observation: {e}")))?;
        Ok(h)
    }
}

/// Window of the exponent fit. Without bounds the window is chosen from the
/// data; see [`super::fit_exponent`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub min_epsilon: Option<f64>,
    pub max_epsilon: Option<f64>,
    /// Records CSV of an earlier sweep; when absent the sweep is run.
    pub records: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasConfig {
    pub particles: usize,
    /// Independent ensembles per ε; the standard error needs at least 2.
    pub batches: usize,
    pub precision: Precision,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self { particles: 10_000, batches: 1, precision: Precision::F64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Drift matrix `A` in `a(x) = Ax`, row by row; absent means `a ≡ 0`.
    pub drift: Option<Vec<Vec<f64>>>,
    pub dt: f64,
    pub horizon: f64,
    pub particles: usize,
    /// Any of `g1`, `g2`, `constant`, `kalman`, `zero`.
    pub modes: Vec<String>,
    pub epsilon: f64,
    pub runs: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            drift: None,
            dt: 0.01,
            horizon: 1.0,
            particles: 200,
            modes: vec!["constant".into(), "g2".into(), "kalman".into()],
            epsilon: 0.1,
            runs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub density: DensityConfig,
    pub observation: ObservationConfig,
    pub methods: Vec<GainMethod>,
    pub epsilons: Vec<f64>,
    pub dimensions: Vec<usize>,
    pub particles: usize,
    pub simulations: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub fit: FitConfig,
    pub bias: BiasConfig,
    pub filter: FilterConfig,
}

/// `10^(−3 + k/10)` for `k = 0..=30`.
pub fn default_epsilons() -> Vec<f64> {
    (0..=30).map(|k| 10f64.powf(-3.0 + k as f64 / 10.0)).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            density: DensityConfig::Bimodal { separation: 1.0, variance: 0.2 },
            observation: ObservationConfig::default(),
            methods: vec![GainMethod::G2],
            epsilons: default_epsilons(),
            dimensions: vec![1],
            particles: 200,
            simulations: 100,
            seed: 0,
            solver: SolverConfig::default(),
            fit: FitConfig::default(),
            bias: BiasConfig::default(),
            filter: FilterConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return bad("epsilons must be a non-empty list of positive numbers");
        }
        if self.dimensions.is_empty() || self.dimensions.contains(&0) {
            return bad("dimensions must be a non-empty list of positive integers");
        }
        if self.particles < 2 {
            return bad("particles must be at least 2");
        }
        if self.simulations == 0 {
            return bad("simulations must be at least 1");
        }
        if self.bias.particles < 2 || self.bias.batches == 0 {
            return bad("bias needs at least 2 particles and 1 batch");
        }
        if let (Some(lo), Some(hi)) = (self.fit.min_epsilon, self.fit.max_epsilon) {
            if !(lo < hi) {
                return bad("fit.min_epsilon must be below fit.max_epsilon");
            }
        }
        if self.filter.runs == 0 || self.filter.modes.is_empty() {
            return bad("filter needs at least one run and one mode");
        }
        self.solver.validate().map_err(|e| Error::Config(e.to_string()))?;
        for &d in &self.dimensions {
            self.density.build(d).map_err(config_error)?;
            self.observation.build(d)?;
        }
        Ok(())
    }

    /// Filter scenario of run `seed` in the first listed dimension.
    pub fn scenario(&self, seed: u64) -> Result<FilterScenario> {
        let d = self.dimensions[0];
        let drift = match &self.filter.drift {
            None => Drift::Zero,
            Some(rows) => Drift::Linear(matrix(rows, "filter.drift")?),
        };
        let scenario = FilterScenario {
            drift,
            observation: self.observation.build(d)?,
            prior: self.density.build(d).map_err(config_error)?,
            dt: self.filter.dt,
            horizon: self.filter.horizon,
            particles: self.filter.particles,
            seed,
        };
        scenario.validate().map_err(config_error)?;
        Ok(scenario)
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
