//! Stochastic recurrent networks as SDEs, and their simulation.
//!
//! The hidden state follows the input-affine SDE
//!
//! ```text
//! dh = (-Γ h + a(W h + b) + C u_t) dt + σ dW_t,
//! ```
//!
//! with a scalar observable `y = f(h)` read out at the horizon. The output
//! functional is the ensemble average `F_T[u] = E f(h_T)`, estimated here by
//! Monte Carlo over Euler–Maruyama trajectories.
//!
//! One step of the scheme is an affine discrete-RNN update
//!
//! ```text
//! h' = α h + β (a(W h + b) + C u) + θ ξ,    α = I - Δt Γ, β = Δt, θ = √Δt σ,
//! ```
//!
//! and [`euler_maruyama`] literally steps through [`DiscreteRnn`], so the
//! discrete-RNN correspondence returned by [`discretize`] is bit-for-bit,
//! not merely up to round-off. All noise comes from counter-based
//! substreams: trajectory `k` of a run draws from stream `(master_seed, k)`,
//! making parallel and serial execution equivalent.
//!
//! Per trajectory the draw order is fixed: first the initial state (`n`
//! standard normals if the initial law is Gaussian, none for a point mass),
//! then `r` standard normals per step.

use crate::numeric::{matvec_seq, mean_stderr, simpson, NumericError};
use crate::path::Path;
use crate::rng::SeedStream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// State bound beyond which a trajectory is declared divergent. Compactness
/// of the dynamics is an assumption of the theory, not something the
/// integrator can enforce.
pub const DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Error)]
pub enum SrnnError {
    #[error("inconsistent parameter shapes: {0}")]
    BadShape(String),
    #[error("gamma must be positive stable (eigenvalue with real part {0:.3e} found)")]
    GammaNotPositiveStable(f64),
    #[error("initial covariance must be symmetric positive definite")]
    InitCovNotPd,
    #[error("readout references coordinate {coord} but hidden dim is {n}")]
    ReadoutOutOfRange { coord: usize, n: usize },
    #[error("horizon {t} is not an integer number of steps of {dt}")]
    NonIntegralHorizon { t: f64, dt: f64 },
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
    #[error("input path covers [{u0}, {u1}] but the simulation needs [0, {t}]")]
    InputDomain { u0: f64, u1: f64, t: f64 },
    #[error("trajectory diverged at step {step} (|h| > {DIVERGENCE_BOUND:.0e})")]
    Diverged { step: usize },
    #[error("need at least 2 Monte-Carlo samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Hidden-layer activation, selectable by name in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Zero,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Zero => 0.0,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "zero" => Ok(Activation::Zero),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Scalar readout `f(h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// `f(h) = h_i`.
    Coordinate(usize),
    /// `f(h) = w·h`.
    Linear(Vec<f64>),
    /// `f(h) = tanh(w·h)`.
    TanhLinear(Vec<f64>),
}

impl Readout {
    pub fn apply(&self, h: &[f64]) -> f64 {
        match self {
            Readout::Coordinate(i) => h[*i],
            Readout::Linear(w) => w.iter().zip(h).map(|(a, b)| a * b).sum(),
            Readout::TanhLinear(w) => w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>().tanh(),
        }
    }
}

/// Law of the initial hidden state.
#[derive(Debug, Clone, PartialEq)]
pub enum InitLaw {
    Point(Vec<f64>),
    Gaussian { mean: Vec<f64>, cov: DMatrix<f64> },
}

/// Validated parameter set `(Γ, a, W, b, C, σ, f, ρ_init)`.
#[derive(Debug, Clone)]
pub struct SrnnParams {
    gamma: DMatrix<f64>,
    w: DMatrix<f64>,
    b: DVector<f64>,
    input_matrix: DMatrix<f64>,
    sigma: DMatrix<f64>,
    activation: Activation,
    readout: Readout,
    init: InitLaw,
    /// Cholesky factor of the Gaussian initial covariance, precomputed.
    init_chol: Option<DMatrix<f64>>,
}

impl SrnnParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gamma: DMatrix<f64>,
        w: DMatrix<f64>,
        b: DVector<f64>,
        input_matrix: DMatrix<f64>,
        sigma: DMatrix<f64>,
        activation: Activation,
        readout: Readout,
        init: InitLaw,
    ) -> Result<Self, SrnnError> {
        let n = gamma.nrows();
        if gamma.ncols() != n {
            return Err(SrnnError::BadShape(format!(
                "gamma is {}x{}",
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        if w.shape() != (n, n) {
            return Err(SrnnError::BadShape(format!(
                "w is {}x{}, expected {n}x{n}",
                w.nrows(),
                w.ncols()
            )));
        }
        if b.len() != n {
            return Err(SrnnError::BadShape(format!(
                "b has length {}, expected {n}",
                b.len()
            )));
        }
        if input_matrix.nrows() != n {
            return Err(SrnnError::BadShape(format!(
                "input matrix has {} rows, expected {n}",
                input_matrix.nrows()
            )));
        }
        if sigma.nrows() != n {
            return Err(SrnnError::BadShape(format!(
                "sigma has {} rows, expected {n}",
                sigma.nrows()
            )));
        }
        for eig in gamma.complex_eigenvalues().iter() {
            if eig.re <= 0.0 {
                return Err(SrnnError::GammaNotPositiveStable(eig.re));
            }
        }
        match &readout {
            Readout::Coordinate(i) if *i >= n => {
                return Err(SrnnError::ReadoutOutOfRange { coord: *i, n });
            }
            Readout::Linear(v) | Readout::TanhLinear(v) if v.len() != n => {
                return Err(SrnnError::BadShape(format!(
                    "readout weight has length {}, expected {n}",
                    v.len()
                )));
            }
            _ => {}
        }
        let init_chol = match &init {
            InitLaw::Point(h0) => {
                if h0.len() != n {
                    return Err(SrnnError::BadShape(format!(
                        "initial point has length {}, expected {n}",
                        h0.len()
                    )));
                }
                None
            }
            InitLaw::Gaussian { mean, cov } => {
                if mean.len() != n || cov.shape() != (n, n) {
                    return Err(SrnnError::BadShape("initial law shapes".into()));
                }
                let chol = cov.clone().cholesky().ok_or(SrnnError::InitCovNotPd)?;
                Some(chol.l())
            }
        };
        Ok(Self {
            gamma,
            w,
            b,
            input_matrix,
            sigma,
            activation,
            readout,
            init,
            init_chol,
        })
    }

    /// One-dimensional linear network `dh = (-γ h + c u) dt + σ dW` with
    /// coordinate readout: the Ornstein–Uhlenbeck workhorse of the tests.
    pub fn scalar_ou(gamma: f64, c: f64, sigma: f64, init: InitLaw) -> Result<Self, SrnnError> {
        Self::new(
            DMatrix::from_element(1, 1, gamma),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, sigma),
            Activation::Zero,
            Readout::Coordinate(0),
            init,
        )
    }

    /// Hidden dimension `n`.
    pub fn hidden_dim(&self) -> usize {
        self.gamma.nrows()
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.input_matrix.ncols()
    }

    /// Noise dimension `r`.
    pub fn noise_dim(&self) -> usize {
        self.sigma.ncols()
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.input_matrix
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn readout(&self) -> &Readout {
        &self.readout
    }

    pub fn init(&self) -> &InitLaw {
        &self.init
    }

    /// Mean of the initial law.
    pub fn init_mean(&self) -> DVector<f64> {
        match &self.init {
            InitLaw::Point(h0) => DVector::from_column_slice(h0),
            InitLaw::Gaussian { mean, .. } => DVector::from_column_slice(mean),
        }
    }

    /// `Σ = σ σᵀ`.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        &self.sigma * self.sigma.transpose()
    }

    /// Is the drift linear (`a = zero`)?
    pub fn is_linear(&self) -> bool {
        self.activation == Activation::Zero
    }

    /// Stationary covariance `Σ∞` of the unperturbed linear dynamics,
    /// solving `Γ Σ∞ + Σ∞ Γᵀ = σ σᵀ`.
    pub fn stationary_covariance(&self) -> Result<DMatrix<f64>, SrnnError> {
        Ok(crate::numeric::lyapunov_stationary(
            &self.gamma,
            &self.noise_covariance(),
        )?)
    }

    /// Copy of the parameters with `ρ_init = N(0, Σ∞)`.
    pub fn with_stationary_init(&self) -> Result<Self, SrnnError> {
        let cov = self.stationary_covariance()?;
        let mut p = self.clone();
        let chol = cov.clone().cholesky().ok_or(SrnnError::InitCovNotPd)?;
        p.init = InitLaw::Gaussian {
            mean: vec![0.0; self.hidden_dim()],
            cov,
        };
        p.init_chol = Some(chol.l());
        Ok(p)
    }

    /// Draws an initial state, consuming `n` standard normals for a
    /// Gaussian law and none for a point mass.
    pub(crate) fn sample_init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match (&self.init, &self.init_chol) {
            (InitLaw::Point(h0), _) => h0.clone(),
            (InitLaw::Gaussian { mean, .. }, Some(l)) => {
                let n = mean.len();
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let lz = matvec_seq(l, &z);
                mean.iter().zip(lz).map(|(m, x)| m + x).collect()
            }
            _ => unreachable!("gaussian init always has a cached factor"),
        }
    }
}

/// The one-step affine map `h' = α h + β (a(W h + b) + C u) + θ ξ` that an
/// Euler–Maruyama step performs.
#[derive(Debug, Clone)]
pub struct DiscreteRnn {
    /// `α = I - Δt Γ`.
    pub alpha: DMatrix<f64>,
    /// Scalar form of `α` when `Γ = γ I`.
    pub alpha_scalar: Option<f64>,
    /// `β = Δt`.
    pub beta: f64,
    /// `θ = √Δt σ`.
    pub theta: DMatrix<f64>,
    pub activation: Activation,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub input_matrix: DMatrix<f64>,
}

/// Reusable work buffers for [`DiscreteRnn::step_into`], so the per-step
/// cost carries no allocations.
#[derive(Debug, Clone)]
pub struct StepScratch {
    ah: Vec<f64>,
    pre: Vec<f64>,
    cu: Vec<f64>,
    txi: Vec<f64>,
}

impl StepScratch {
    pub fn new(dim: usize) -> Self {
        Self {
            ah: vec![0.0; dim],
            pre: vec![0.0; dim],
            cu: vec![0.0; dim],
            txi: vec![0.0; dim],
        }
    }
}

impl DiscreteRnn {
    /// Applies the update once. `u` is the input at the current grid node,
    /// `xi` the standard-normal draw for this step.
    pub fn step(&self, h: &[f64], u: &[f64], xi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.alpha.nrows()];
        let mut scratch = StepScratch::new(self.alpha.nrows());
        self.step_into(h, u, xi, &mut scratch, &mut out);
        out
    }

    /// [`DiscreteRnn::step`] into a caller-provided buffer, with identical
    /// arithmetic (and therefore identical rounding).
    pub fn step_into(
        &self,
        h: &[f64],
        u: &[f64],
        xi: &[f64],
        scratch: &mut StepScratch,
        out: &mut [f64],
    ) {
        matvec_seq_into(&self.alpha, h, &mut scratch.ah);
        matvec_seq_into(&self.w, h, &mut scratch.pre);
        for (p, bi) in scratch.pre.iter_mut().zip(self.b.iter()) {
            *p = self.activation.apply(*p + bi);
        }
        matvec_seq_into(&self.input_matrix, u, &mut scratch.cu);
        matvec_seq_into(&self.theta, xi, &mut scratch.txi);
        for (i, o) in out.iter_mut().enumerate() {
            *o = scratch.ah[i] + self.beta * (scratch.pre[i] + scratch.cu[i]) + scratch.txi[i];
        }
    }
}

/// Discrete-RNN description of one Euler–Maruyama step of size `dt`.
///
/// With `Γ = γ I` this is the textbook reduction
/// `(α, β, θ) = (1 - γ Δt, Δt, √Δt σ)`; `alpha_scalar` reports that case.
pub fn discretize(p: &SrnnParams, dt: f64) -> DiscreteRnn {
    let n = p.hidden_dim();
    let alpha = DMatrix::identity(n, n) - &p.gamma * dt;
    let diag = p.gamma[(0, 0)];
    let is_scalar_gamma = p.gamma == DMatrix::from_diagonal_element(n, n, diag);
    DiscreteRnn {
        alpha,
        alpha_scalar: is_scalar_gamma.then_some(1.0 - diag * dt),
        beta: dt,
        theta: &p.sigma * dt.sqrt(),
        activation: p.activation,
        w: p.w.clone(),
        b: p.b.clone(),
        input_matrix: p.input_matrix.clone(),
    }
}

/// A simulated trajectory on the uniform grid `0, Δt, ..., T`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dt: f64,
    dim: usize,
    /// Row-major states, `steps + 1` rows.
    states: Vec<f64>,
    seed: SeedStream,
}

impl Trajectory {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states (`steps + 1`).
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn seed(&self) -> SeedStream {
        self.seed
    }

    pub fn state(&self, step: usize) -> &[f64] {
        &self.states[step * self.dim..(step + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// State at time `t` (must sit on the grid up to round-off).
    pub fn state_at(&self, t: f64) -> &[f64] {
        let step = (t / self.dt).round() as usize;
        self.state(step.min(self.len() - 1))
    }

    /// Writes the trajectory as CSV `t,h1,...,hn`.
    pub fn write_csv<P: AsRef<std::path::Path>>(&self, file: P) -> std::io::Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(file)?);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim).map(|k| format!("h{k}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for step in 0..self.len() {
            let row: Vec<String> = std::iter::once(format!("{:.17e}", self.time(step)))
                .chain(self.state(step).iter().map(|v| format!("{v:.17e}")))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn step_count(t_end: f64, dt: f64) -> Result<usize, SrnnError> {
    if !(dt > 0.0) {
        return Err(SrnnError::BadStep(dt));
    }
    let steps = (t_end / dt).round();
    if steps < 1.0 || (steps * dt - t_end).abs() > 1e-9 * t_end.abs().max(1.0) {
        return Err(SrnnError::NonIntegralHorizon { t: t_end, dt });
    }
    Ok(steps as usize)
}

fn check_input_domain(u: &Path, t_end: f64) -> Result<(), SrnnError> {
    let eps = 1e-9 * t_end.abs().max(1.0);
    if u.start_time() > eps || u.end_time() < t_end - eps {
        return Err(SrnnError::InputDomain {
            u0: u.start_time(),
            u1: u.end_time(),
            t: t_end,
        });
    }
    Ok(())
}

/// Euler–Maruyama trajectory of the SRNN driven by `u` over `[0, t_end]`.
///
/// The input is sampled at grid nodes by linear interpolation (the declared
/// path semantics), the initial state is drawn from `ρ_init` using the
/// stream in `seed`, and the run aborts with [`SrnnError::Diverged`] if the
/// state leaves the bound [`DIVERGENCE_BOUND`].
pub fn euler_maruyama(
    p: &SrnnParams,
    u: &Path,
    t_end: f64,
    dt: f64,
    seed: SeedStream,
) -> Result<Trajectory, SrnnError> {
    if u.dim() != p.input_dim() {
        return Err(SrnnError::BadShape(format!(
            "input path has {} channels, network expects {}",
            u.dim(),
            p.input_dim()
        )));
    }
    let steps = step_count(t_end, dt)?;
    check_input_domain(u, t_end)?;

    let rnn = discretize(p, dt);
    let n = p.hidden_dim();
    let r = p.noise_dim();
    let mut rng = seed.rng();

    let u_nodes: Vec<Vec<f64>> = (0..steps).map(|j| u.value_at(j as f64 * dt)).collect();

    let mut states = Vec::with_capacity((steps + 1) * n);
    let mut h = p.sample_init(&mut rng);
    states.extend_from_slice(&h);
    let mut xi = vec![0.0; r];
    for (j, uj) in u_nodes.iter().enumerate() {
        for x in xi.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        h = rnn.step(&h, uj, &xi);
        if h.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(SrnnError::Diverged { step: j + 1 });
        }
        states.extend_from_slice(&h);
    }
    Ok(Trajectory {
        dt,
        dim: n,
        states,
        seed,
    })
}

/// Monte-Carlo estimate of the output functional `F_T[u] = E f(h_T)`.
///
/// Runs `k_samples` independent trajectories on substreams
/// `(master_seed, k)` and returns the sample mean of `f(h_T)` with its
/// standard error. Trajectories are embarrassingly parallel; the reduction
/// order is fixed, so the result is independent of the thread schedule.
pub fn output_functional(
    p: &SrnnParams,
    u: &Path,
    t_end: f64,
    dt: f64,
    k_samples: usize,
    master_seed: u64,
) -> Result<(f64, f64), SrnnError> {
    if k_samples < 2 {
        return Err(SrnnError::TooFewSamples(k_samples));
    }
    let values: Vec<f64> = (0..k_samples)
        .into_par_iter()
        .map(|k| {
            let traj = euler_maruyama(p, u, t_end, dt, SeedStream::new(master_seed, k as u64))?;
            Ok(p.readout.apply(traj.final_state()))
        })
        .collect::<Result<_, SrnnError>>()?;
    Ok(mean_stderr(&values))
}

/// Exact mean of the linear (`a = zero`) network:
/// `E h_t = e^{-Γt} h̄₀ + ∫_0^t e^{-Γ(t-s)} C u_s ds`,
/// with the matrix exponential by scaling-and-squaring and the integral by
/// composite Simpson on the input's grid refined per segment.
pub fn ou_mean_analytic(
    gamma: &DMatrix<f64>,
    input_matrix: &DMatrix<f64>,
    u: &Path,
    h0_mean: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    assert!(
        t <= u.end_time() + 1e-9 * t.abs().max(1.0),
        "t beyond the input horizon"
    );
    let homogeneous = (-(gamma * t)).exp() * h0_mean;
    if t <= 0.0 {
        return homogeneous;
    }

    // Integration knots: the input's sample times clipped to (0, t),
    // bracketed by 0 and t, so each Simpson panel sees a smooth integrand.
    let mut knots = vec![0.0];
    for &s in u.times() {
        if s > 0.0 && s < t {
            knots.push(s);
        }
    }
    knots.push(t);

    let n = gamma.nrows();
    let integrand = |s: f64| -> DVector<f64> {
        let uv = DVector::from_vec(u.value_at(s));
        (-(gamma * (t - s))).exp() * (input_matrix * uv)
    };
    let mut acc = DVector::zeros(n);
    for win in knots.windows(2) {
        acc += simpson(&integrand, win[0], win[1], 32, n);
    }
    homogeneous + acc
}
