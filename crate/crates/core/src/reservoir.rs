//! A single frozen leaky-integrator echo state network and its readouts.
//!
//! State update:
//!
//! ```text
//! x_t = (1 − α) x_{t−1} + α tanh(W_in h_t + θ + W x_{t−1})
//! ```
//!
//! `W_in` and `θ` are drawn according to an [`InitScheme`]; `W` is drawn
//! uniformly and rescaled so that either `W` itself or the effective leaky
//! matrix `(1 − α) I + α W` has spectral radius `ρ`. Nothing here changes
//! after [`Reservoir::init`].

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::codec::{DumpReader, DumpWriter};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{eigenvalues, rescale_spectral_radius, ridge_solve, spectral_radius, Matrix};
use crate::rng::{derive_seed, sample_normal, sample_uniform, Rng};

/// Distribution for `W_in` and `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitScheme {
    /// Uniform on `[−σ_in, σ_in]`.
    RandomUniform,
    Zero,
    /// Every entry equal to `σ_in`.
    Constant,
    /// Gaussian with standard deviation `σ_in`.
    Normal,
    /// Uniform on `[0, σ_in]`.
    Uniform,
}

impl InitScheme {
    pub const ALL: [InitScheme; 5] =
        [InitScheme::RandomUniform, InitScheme::Zero, InitScheme::Constant, InitScheme::Normal, InitScheme::Uniform];

    pub fn name(&self) -> &'static str {
        match self {
            InitScheme::RandomUniform => "random",
            InitScheme::Zero => "zero",
            InitScheme::Constant => "constant",
            InitScheme::Normal => "normal",
            InitScheme::Uniform => "uniform",
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitScheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown init scheme '{s}'")))
    }
}

/// Which matrix the target spectral radius applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RescaleTarget {
    RawW,
    /// `(1 − α) I + α W`
    LeakyMatrix,
}

impl RescaleTarget {
    pub fn name(&self) -> &'static str {
        match self {
            RescaleTarget::RawW => "raw_w",
            RescaleTarget::LeakyMatrix => "leaky_matrix",
        }
    }
}

impl FromStr for RescaleTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw_w" => Ok(RescaleTarget::RawW),
            "leaky_matrix" => Ok(RescaleTarget::LeakyMatrix),
            _ => Err(Error::Config(format!("unknown rescale target '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReservoirConfig {
    pub n_r: usize,
    pub d_in: usize,
    pub alpha: f64,
    pub rho: f64,
    pub sigma_in: f64,
    pub seed: u64,
    pub init_scheme: InitScheme,
    pub rescale_target: RescaleTarget,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            n_r: 100,
            d_in: 1,
            alpha: 0.7,
            rho: 0.9,
            sigma_in: 1.0,
            seed: 0,
            init_scheme: InitScheme::RandomUniform,
            rescale_target: RescaleTarget::LeakyMatrix,
        }
    }
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.d_in == 0 {
            return Err(Error::Config("reservoir needs n_r ≥ 1 and d_in ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("leak rate must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("spectral radius must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.sigma_in > 0.0) {
            return Err(Error::Config(format!("input scaling must be positive, got {}", self.sigma_in)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    pub config: ReservoirConfig,
    /// N_r × d_in
    pub w_in: Matrix,
    /// N_r × N_r
    pub w: Matrix,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub x: Vec<f64>,
    pub t: usize,
}

impl ReservoirState {
    pub fn zeros(n_r: usize) -> Self {
        Self { x: vec![0.0; n_r], t: 0 }
    }
}

const MAX_INIT_RETRIES: u64 = 3;

impl Reservoir {
    pub fn init(config: ReservoirConfig) -> Result<Self> {
        config.validate()?;
        let mut last_err = None;
        for attempt in 0..=MAX_INIT_RETRIES {
            let seed = if attempt == 0 { config.seed } else { derive_seed(config.seed, attempt) };
            match Self::init_with_seed(&config, seed) {
                Ok(r) => return Ok(r),
                Err(e @ Error::Degenerate(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.unwrap_or_else(|| Error::Degenerate("reservoir initialization failed".into())))
    }

    fn init_with_seed(config: &ReservoirConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let n = config.n_r;
        let raw = sample_uniform(&mut rng, -1.0, 1.0, n, n)?;
        let s = config.sigma_in;
        let (w_in, theta) = match config.init_scheme {
            InitScheme::RandomUniform => {
                (sample_uniform(&mut rng, -s, s, n, config.d_in)?, sample_uniform(&mut rng, -s, s, 1, n)?)
            }
            InitScheme::Zero => (Matrix::zeros(n, config.d_in), Matrix::zeros(1, n)),
            InitScheme::Constant => (Matrix::filled(n, config.d_in, s), Matrix::filled(1, n, s)),
            InitScheme::Normal => (sample_normal(&mut rng, 0.0, s, n, config.d_in), sample_normal(&mut rng, 0.0, s, 1, n)),
            InitScheme::Uniform => {
                (sample_uniform(&mut rng, 0.0, s, n, config.d_in)?, sample_uniform(&mut rng, 0.0, s, 1, n)?)
            }
        };
        let w = match config.rescale_target {
            RescaleTarget::RawW => rescale_spectral_radius(&raw, config.rho)?,
            RescaleTarget::LeakyMatrix => rescale_leaky(&raw, config.alpha, config.rho)?,
        };
        Ok(Self { config: *config, w_in, w, theta: theta.into_vec() })
    }

    pub fn n_r(&self) -> usize {
        self.config.n_r
    }

    pub fn d_in(&self) -> usize {
        self.config.d_in
    }

    /// `(1 − α) I + α W`
    pub fn leaky_matrix(&self) -> Matrix {
        let a = self.config.alpha;
        let mut m = self.w.scale(a);
        for i in 0..self.n_r() {
            m[(i, i)] += 1.0 - a;
        }
        m
    }

    pub fn step(&self, state: &ReservoirState, h: &[f64]) -> Result<ReservoirState> {
        if state.x.len() != self.n_r() {
            return dim_err(format!("state has {} units, reservoir has {}", state.x.len(), self.n_r()));
        }
        if h.len() != self.d_in() {
            return dim_err(format!("input has length {}, reservoir expects {}", h.len(), self.d_in()));
        }
        if !h.iter().chain(&state.x).all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite reservoir input or state".into()));
        }
        let mut x = state.x.clone();
        let mut scratch = vec![0.0; self.n_r()];
        self.step_in_place(&mut x, h, &mut scratch);
        Ok(ReservoirState { x, t: state.t + 1 })
    }

    /// Unchecked update used on hot paths; `scratch` must have length N_r.
    pub fn step_in_place(&self, x: &mut [f64], h: &[f64], scratch: &mut [f64]) {
        let a = self.config.alpha;
        if a == 0.0 {
            return;
        }
        let n = self.n_r();
        let d = self.d_in();
        let win = self.w_in.as_slice();
        let w = self.w.as_slice();
        for i in 0..n {
            let mut acc = self.theta[i];
            let wi = &win[i * d..(i + 1) * d];
            for (p, q) in wi.iter().zip(h) {
                acc += p * q;
            }
            let wr = &w[i * n..(i + 1) * n];
            for (p, q) in wr.iter().zip(x.iter()) {
                acc += p * q;
            }
            scratch[i] = acc.tanh();
        }
        for (xi, s) in x.iter_mut().zip(scratch.iter()) {
            *xi = (1.0 - a) * *xi + a * s;
        }
    }

    /// States after each input, starting from `x0`.
    pub fn run(&self, inputs: &[Vec<f64>], x0: &ReservoirState) -> Result<Vec<ReservoirState>> {
        let mut out = Vec::with_capacity(inputs.len());
        let mut cur = x0.clone();
        for h in inputs {
            cur = self.step(&cur, h)?;
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Runs over every row of `inputs` from the zero state and returns the
    /// `T × N_r` state matrix.
    pub fn run_matrix(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.d_in() {
            return dim_err(format!("inputs have width {}, reservoir expects {}", inputs.cols(), self.d_in()));
        }
        let n = self.n_r();
        let mut states = Matrix::zeros(inputs.rows(), n);
        let mut x = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        for t in 0..inputs.rows() {
            self.step_in_place(&mut x, inputs.row(t), &mut scratch);
            states.row_mut(t).copy_from_slice(&x);
        }
        Ok(states)
    }

    /// SHA-256 over the bits of `W_in`, `W` and `θ`.
    pub fn param_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in self.w_in.as_slice().iter().chain(self.w.as_slice()).chain(&self.theta) {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }

    /// Bytes held by the frozen parameters plus one state vector.
    pub fn retained_bytes(&self) -> usize {
        8 * (self.w_in.len() + self.w.len() + self.theta.len() + self.n_r())
    }

    pub fn dump(&self) -> String {
        let c = &self.config;
        let mut w = DumpWriter::new("reservoir v1");
        w.int("n_r", c.n_r as u64)
            .int("d_in", c.d_in as u64)
            .float("alpha", c.alpha)
            .float("rho", c.rho)
            .float("sigma_in", c.sigma_in)
            .int("seed", c.seed)
            .text("scheme", c.init_scheme.name())
            .text("rescale", c.rescale_target.name())
            .tensor("w_in", &self.w_in)
            .tensor("w", &self.w)
            .tensor("theta", &Matrix::row_vector(&self.theta));
        w.finish()
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut r = DumpReader::new(text);
        let res = Self::read(&mut r)?;
        Ok(res)
    }

    pub(crate) fn read(r: &mut DumpReader<'_>) -> Result<Self> {
        r.header("reservoir v1")?;
        let config = ReservoirConfig {
            n_r: r.int("n_r")? as usize,
            d_in: r.int("d_in")? as usize,
            alpha: r.float("alpha")?,
            rho: r.float("rho")?,
            sigma_in: r.float("sigma_in")?,
            seed: r.int("seed")?,
            init_scheme: r.text("scheme")?.parse()?,
            rescale_target: r.text("rescale")?.parse()?,
        };
        let w_in = r.tensor("w_in")?;
        let w = r.tensor("w")?;
        let theta = r.tensor("theta")?.into_vec();
        if w_in.shape() != (config.n_r, config.d_in) || w.shape() != (config.n_r, config.n_r) || theta.len() != config.n_r
        {
            return Err(Error::Format("reservoir tensor shapes do not match header".into()));
        }
        Ok(Self { config, w_in, w, theta })
    }
}

/// Scales `raw` by `s` so that `ρ((1 − α) I + α s W) = target`.
///
/// The spectrum of `W` is computed once; each candidate eigenvalue then maps
/// to `(1 − α) + α s λ`, and the largest magnitude is convex in `s` with value
/// `1 − α < target` at `s = 0`, so bisection finds the unique crossing. If
/// the target is not above `1 − α` no scale can reach it and `W` itself is
/// rescaled to `target` instead.
fn rescale_leaky(raw: &Matrix, alpha: f64, target: f64) -> Result<Matrix> {
    if target <= 1.0 - alpha + 1e-9 {
        return rescale_spectral_radius(raw, target);
    }
    let eig = eigenvalues(raw)?;
    let max_mag = eig.iter().map(|(re, im)| re.hypot(*im)).fold(0.0, f64::max);
    if max_mag <= f64::EPSILON * raw.max_abs().max(1.0) {
        return Err(Error::Degenerate("spectral radius is zero; cannot rescale".into()));
    }
    let radius_at = |s: f64| {
        eig.iter().map(|(re, im)| ((1.0 - alpha) + alpha * s * re).hypot(alpha * s * im)).fold(0.0, f64::max)
    };
    let mut lo = 0.0;
    let mut hi = 1.0 / max_mag;
    while radius_at(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if radius_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    Ok(raw.scale(0.5 * (lo + hi)))
}

/// Spectral radius of the matrix a reservoir's `rescale_target` refers to.
pub fn effective_radius(res: &Reservoir) -> Result<f64> {
    let m = match res.config.rescale_target {
        RescaleTarget::LeakyMatrix if res.config.rho > 1.0 - res.config.alpha + 1e-9 => res.leaky_matrix(),
        _ => res.w.clone(),
    };
    Ok(spectral_radius(&m, 1e-13, 500_000)?.radius)
}

/// `y = W_out x + θ_out`
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReadout {
    /// m × N_r
    pub w_out: Matrix,
    /// 1 × m
    pub theta_out: Matrix,
}

impl LinearReadout {
    pub fn zeros(m: usize, n_r: usize) -> Self {
        Self { w_out: Matrix::zeros(m, n_r), theta_out: Matrix::zeros(1, m) }
    }

    pub fn init(m: usize, n_r: usize, rng: &mut Rng) -> Result<Self> {
        let a = 1.0 / (n_r as f64).sqrt();
        Ok(Self { w_out: sample_uniform(rng, -a, a, m, n_r)?, theta_out: Matrix::zeros(1, m) })
    }

    pub fn m(&self) -> usize {
        self.w_out.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.w_out.matvec(x)?;
        for (yi, b) in y.iter_mut().zip(self.theta_out.as_slice()) {
            *yi += b;
        }
        Ok(y)
    }
}

pub fn linear_readout(ro: &LinearReadout, x: &[f64]) -> Result<Vec<f64>> {
    ro.apply(x)
}

/// Ridge fit of `[W_out | θ_out]` on bias-augmented states. The penalty
/// applies to the bias column as well.
pub fn fit_linear_readout(states: &Matrix, targets: &Matrix, lambda: f64) -> Result<LinearReadout> {
    if states.rows() == 0 || states.rows() != targets.rows() {
        return dim_err(format!(
            "readout fit needs equal, non-zero row counts; got {} states and {} targets",
            states.rows(),
            targets.rows()
        ));
    }
    let aug = augment_with_ones(states);
    let sol = ridge_solve(&aug, targets, lambda)?; // (N_r + 1) × m
    let n = states.cols();
    let m = targets.cols();
    let mut w_out = Matrix::zeros(m, n);
    let mut theta = Matrix::zeros(1, m);
    for j in 0..m {
        for i in 0..n {
            w_out[(j, i)] = sol[(i, j)];
        }
        theta[(0, j)] = sol[(n, j)];
    }
    Ok(LinearReadout { w_out, theta_out: theta })
}

pub fn augment_with_ones(states: &Matrix) -> Matrix {
    let (t, n) = states.shape();
    let mut aug = Matrix::zeros(t, n + 1);
    for r in 0..t {
        aug.row_mut(r)[..n].copy_from_slice(states.row(r));
        aug[(r, n)] = 1.0;
    }
    aug
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            _ => Err(Error::Config(format!("unknown activation '{s}'"))),
        }
    }
}

pub fn nonlinear_readout(y: &[f64], activation: Activation) -> Vec<f64> {
    y.iter().map(|&v| activation.apply(v)).collect()
}
