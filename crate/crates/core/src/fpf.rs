//! Signal/observation simulation and the feedback particle filter.
//!
//! The signal follows `dX = a(X) dt + dB` and the scalar observation
//! `dZ = h(X) dt + dW`, with independent standard Brownian motions. Each
//! particle moves by
//! `dXⁱ = a(Xⁱ) dt + dBⁱ + K(Xⁱ)(dZ − ½(h(Xⁱ) + ĥ) dt)`,
//! discretised by Euler–Maruyama.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::density::{evaluate_h, DensitySpec, ObservationFn, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::kernel::MarkovOperator;
use crate::rng::{derive_seed, rng_from_seed, StreamRng};
use crate::solver::{gain_constant, gain_g1, gain_g2, solve_fixed_point, SolverConfig};

const TRUTH_STREAM: u64 = 0;
const PARTICLE_STREAM: u64 = 1;

pub type DriftFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// Externally supplied gain: `(step, particles) -> K` with one row per particle.
pub type GainFn = Arc<dyn Fn(usize, ArrayView2<f64>) -> Result<Array2<f64>> + Send + Sync>;

/// Drift `a: R^d → R^d` of the signal.
#[derive(Clone)]
pub enum Drift {
    Zero,
    /// `a(x) = A x`
    Linear(DMatrix<f64>),
    Custom(DriftFn),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Zero => f.write_str("Zero"),
            Drift::Linear(a) => f.debug_tuple("Linear").field(a).finish(),
            Drift::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl Drift {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Drift::Zero => vec![0.0; x.len()],
            Drift::Linear(a) => (a * DVector::from_column_slice(x)).iter().cloned().collect(),
            Drift::Custom(f) => f(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterScenario {
    pub drift: Drift,
    pub observation: ObservationFn,
    pub prior: DensitySpec,
    pub dt: f64,
    pub horizon: f64,
    pub particles: usize,
    pub seed: u64,
}

impl FilterScenario {
    pub fn validate(&self) -> Result<()> {
        let d = self.prior.dim();
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon {} is shorter than the time step {}",
                self.horizon, self.dt
            )));
        }
        if self.particles < 2 {
            return Err(Error::InvalidParameter("the filter needs at least 2 particles".into()));
        }
        if let Drift::Linear(a) = &self.drift {
            if a.nrows() != d || a.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: a.nrows() });
            }
        }
        self.observation.check_dimension(d)
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// Number of Euler steps, `⌈T/Δt⌉`.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Sampled signal path and observation increments.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `t_k = k Δt`, `k = 0..=steps`.
    pub times: Vec<f64>,
    /// `X_{t_k}`, one row per time.
    pub states: Array2<f64>,
    /// `Z_{t_k}` with `Z_0 = 0`.
    pub observations: Vec<f64>,
    /// `ΔZ_k = Z_{t_{k+1}} − Z_{t_k}`.
    pub increments: Vec<f64>,
}

fn check_finite(v: &[f64], what: &str, t: f64) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{what} at t = {t}")));
    }
    Ok(())
}

/// Euler–Maruyama path of the signal and its observation.
pub fn simulate_truth(scenario: &FilterScenario) -> Result<Trajectory> {
    scenario.validate()?;
    let d = scenario.dim();
    let steps = scenario.steps();
    let dt = scenario.dt;
    let sdt = dt.sqrt();
    let mut rng = rng_from_seed(derive_seed(scenario.seed, &[TRUTH_STREAM]));
    let x0: Array2<f64> = scenario.prior.sample_with(1, &mut rng)?;
    let mut x: Vec<f64> = x0.row(0).to_vec();
    let mut states = Array2::zeros((steps + 1, d));
    states.row_mut(0).assign(&Array1::from_vec(x.clone()));
    let mut times = vec![0.0];
    let mut observations = vec![0.0];
    let mut increments = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * dt;
        let a = scenario.drift.eval(&x);
        check_finite(&a, "drift", t)?;
        let hx = scenario.observation.value(&x);
        check_finite(&[hx], "observation function", t)?;
        let dz = hx * dt + sdt * rng.sample::<f64, _>(StandardNormal);
        for (xi, ai) in x.iter_mut().zip(&a) {
            *xi += ai * dt + sdt * rng.sample::<f64, _>(StandardNormal);
        }
        check_finite(&x, "state", t + dt)?;
        increments.push(dz);
        observations.push(observations[k] + dz);
        times.push((k + 1) as f64 * dt);
        states.row_mut(k + 1).assign(&Array1::from_vec(x.clone()));
    }
    Ok(Trajectory { times, states, observations, increments })
}

/// How the gain is obtained at each step.
#[derive(Clone)]
pub enum GainMode {
    G1,
    G2,
    Constant,
    /// Externally supplied gain, e.g. an exact solution or zero.
    Oracle(GainFn),
}

impl GainMode {
    pub fn name(&self) -> &'static str {
        match self {
            GainMode::G1 => "g1",
            GainMode::G2 => "g2",
            GainMode::Constant => "constant",
            GainMode::Oracle(_) => "oracle",
        }
    }

    /// The gain `K ≡ 0`.
    pub fn zero() -> Self {
        GainMode::Oracle(Arc::new(|_, pts: ArrayView2<f64>| Ok(Array2::zeros(pts.raw_dim()))))
    }

    /// The constant gain `K ≡ k`.
    pub fn fixed(k: Vec<f64>) -> Self {
        GainMode::Oracle(Arc::new(move |_, pts: ArrayView2<f64>| {
            let row = Array1::from_vec(k.clone());
            Ok(row.broadcast(pts.raw_dim()).expect("gain dimension").to_owned())
        }))
    }
}

impl fmt::Debug for GainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct FilterState {
    pub time: f64,
    pub step: usize,
    pub particles: Array2<f64>,
    pub h_values: Array1<f64>,
    /// Particle average of `h`.
    pub h_hat: f64,
    /// Previous fixed point, reused as the next initial iterate.
    phi: Option<Vec<f64>>,
    rng: StreamRng,
}

impl FilterState {
    /// Particles drawn from the prior on the scenario's particle stream.
    pub fn initial(scenario: &FilterScenario) -> Result<Self> {
        scenario.validate()?;
        let mut rng = rng_from_seed(derive_seed(scenario.seed, &[PARTICLE_STREAM]));
        let particles = scenario.prior.sample_with(scenario.particles, &mut rng)?;
        let h_values = evaluate_h(&scenario.observation, particles.view())?;
        let h_hat = h_values.mean().expect("non-empty");
        Ok(Self { time: 0.0, step: 0, particles, h_values, h_hat, phi: None, rng })
    }

    pub fn mean(&self) -> Array1<f64> {
        self.particles.mean_axis(Axis(0)).expect("non-empty")
    }

    pub fn covariance(&self) -> Array2<f64> {
        let centred = &self.particles - &self.mean();
        centred.t().dot(&centred) / (self.particles.nrows() as f64 - 1.0)
    }

    fn gain(&mut self, scenario: &FilterScenario, mode: &GainMode, epsilon: f64, cfg: &SolverConfig) -> Result<Array2<f64>> {
        match mode {
            GainMode::Constant => {
                let ens = ParticleEnsemble::with_values(self.particles.clone(), self.h_values.clone(), 0)?;
                let k = gain_constant(&ens);
                Ok(k.broadcast(self.particles.raw_dim()).expect("shape").to_owned())
            }
            GainMode::Oracle(f) => {
                let k = f(self.step, self.particles.view())?;
                if k.raw_dim() != self.particles.raw_dim() {
                    return Err(Error::DimensionMismatch { expected: self.particles.ncols(), got: k.ncols() });
                }
                Ok(k)
            }
            GainMode::G1 | GainMode::G2 => {
                let op = MarkovOperator::build(self.particles.view(), epsilon)?;
                let cfg = SolverConfig { warm_start: self.phi.take(), ..cfg.clone() };
                let fp = solve_fixed_point(&op, self.h_values.view(), &cfg)?;
                let k = if matches!(mode, GainMode::G1) {
                    gain_g1(&op, fp.phi.view(), &scenario.observation)?
                } else {
                    gain_g2(&op, fp.phi.view(), self.h_values.view())?
                };
                self.phi = Some(fp.phi.to_vec());
                Ok(k)
            }
        }
    }
}

/// Advances every particle by one Euler step driven by the observation
/// increment `dz`.
pub fn step_fpf(
    scenario: &FilterScenario,
    mut state: FilterState,
    dz: f64,
    mode: &GainMode,
    epsilon: f64,
    cfg: &SolverConfig,
) -> Result<FilterState> {
    let step = state.step;
    let wrap = |e: Error| Error::Step { step, source: Box::new(e) };
    let dt = scenario.dt;
    let sdt = dt.sqrt();
    let k = state.gain(scenario, mode, epsilon, cfg).map_err(wrap)?;
    let d = scenario.dim();
    let h_hat = state.h_hat;
    let mut x = vec![0.0; d];
    for i in 0..state.particles.nrows() {
        x.iter_mut().zip(state.particles.row(i)).for_each(|(a, b)| *a = *b);
        let a = scenario.drift.eval(&x);
        check_finite(&a, "drift", state.time).map_err(wrap)?;
        let innovation = dz - 0.5 * (state.h_values[i] + h_hat) * dt;
        for c in 0..d {
            let noise: f64 = state.rng.sample(StandardNormal);
            state.particles[(i, c)] += a[c] * dt + sdt * noise + k[(i, c)] * innovation;
        }
    }
    state.h_values = evaluate_h(&scenario.observation, state.particles.view()).map_err(wrap)?;
    state.h_hat = state.h_values.mean().expect("non-empty");
    state.step += 1;
    state.time = state.step as f64 * dt;
    Ok(state)
}

/// Particle means along a filter run.
#[derive(Debug, Clone)]
pub struct FilterRun {
    /// Particle mean at every time, one row per time.
    pub means: Array2<f64>,
    /// Particle covariance at the final time.
    pub final_covariance: Array2<f64>,
}

/// Runs the filter over the observation increments of `truth`.
pub fn run_filter(
    scenario: &FilterScenario,
    truth: &Trajectory,
    mode: &GainMode,
    epsilon: f64,
    cfg: &SolverConfig,
) -> Result<FilterRun> {
    let mut state = FilterState::initial(scenario)?;
    let steps = truth.increments.len();
    let mut means = Array2::zeros((steps + 1, scenario.dim()));
    means.row_mut(0).assign(&state.mean());
    for (k, dz) in truth.increments.iter().enumerate() {
        state = step_fpf(scenario, state, *dz, mode, epsilon, cfg)?;
        means.row_mut(k + 1).assign(&state.mean());
    }
    let final_covariance = state.covariance();
    Ok(FilterRun { means, final_covariance })
}

/// Kalman–Bucy filter for a linear scenario, integrated with the same time
/// step and increments as the particle filter.
#[derive(Debug, Clone)]
pub struct KalmanBucy {
    pub means: Array2<f64>,
    pub covariances: Vec<DMatrix<f64>>,
}

fn linear_observation(scenario: &FilterScenario) -> Result<DVector<f64>> {
    match &scenario.observation {
        ObservationFn::Linear(v) => Ok(DVector::from_column_slice(v)),
        ObservationFn::Coordinate(i) => {
            let mut v = DVector::zeros(scenario.dim());
            v[*i] = 1.0;
            Ok(v)
        }
        _ => Err(Error::NoOracle("Kalman–Bucy needs a linear observation".into())),
    }
}

pub fn kalman_bucy(scenario: &FilterScenario, truth: &Trajectory) -> Result<KalmanBucy> {
    scenario.validate()?;
    let d = scenario.dim();
    let a = match &scenario.drift {
        Drift::Zero => DMatrix::zeros(d, d),
        Drift::Linear(a) => a.clone(),
        Drift::Custom(_) => return Err(Error::NoOracle("Kalman–Bucy needs a linear drift".into())),
    };
    let h = linear_observation(scenario)?;
    let prior = scenario
        .prior
        .as_gaussian()
        .ok_or_else(|| Error::NoOracle("Kalman–Bucy needs a Gaussian prior".into()))?;
    let dt = scenario.dt;
    let mut m = prior.mean().clone();
    let mut p = prior.covariance().clone();
    let steps = truth.increments.len();
    let mut means = Array2::zeros((steps + 1, d));
    let mut covariances = Vec::with_capacity(steps + 1);
    let store = |means: &mut Array2<f64>, k: usize, m: &DVector<f64>| {
        for c in 0..d {
            means[(k, c)] = m[c];
        }
    };
    store(&mut means, 0, &m);
    covariances.push(p.clone());
    let eye = DMatrix::<f64>::identity(d, d);
    for (k, dz) in truth.increments.iter().enumerate() {
        let ph = &p * &h;
        let innovation = dz - h.dot(&m) * dt;
        let dm = &a * &m * dt + &ph * innovation;
        let dp = (&a * &p + &p * a.transpose() + &eye - &ph * ph.transpose()) * dt;
        m += dm;
        p += dp;
        store(&mut means, k + 1, &m);
        covariances.push(p.clone());
    }
    Ok(KalmanBucy { means, covariances })
}

impl KalmanBucy {
    /// Gain mode injecting the Kalman gain `P_k H` at step `k`.
    pub fn gain_mode(&self, scenario: &FilterScenario) -> Result<GainMode> {
        let h = linear_observation(scenario)?;
        let gains: Vec<Vec<f64>> = self.covariances.iter().map(|p| (p * &h).iter().cloned().collect()).collect();
        Ok(GainMode::Oracle(Arc::new(move |step, pts: ArrayView2<f64>| {
            let k = gains
                .get(step)
                .ok_or_else(|| Error::InvalidParameter(format!("no Kalman gain for step {step}")))?;
            let row = ndarray::ArrayView1::from(k.as_slice());
            Ok(row.broadcast(pts.raw_dim()).expect("gain dimension").to_owned())
        })))
    }
}

/// Time average of `|X_t − m_t|²` over all recorded times.
pub fn mean_square_error(truth: &Trajectory, means: &Array2<f64>) -> f64 {
    let diff = &truth.states - means;
    diff.mapv(|v| v * v).sum_axis(Axis(1)).mean().expect("non-empty")
}
