//! Leaky-integrator echo state network.
//!
//! The reservoir (`w_in`, `w_res`, `b_res`) is drawn once from a seed and
//! never trained. Row-vector convention throughout: a batch of states is an
//! `M × input_dim` matrix and the hidden state is `M × reservoir_size`.
//!
//! The default [`LeakyForm::Paper`] update is
//!
//! ```text
//! h = (1 − η)·h_prev + f(x·W_in + η·h_prev·W_res + b_res)
//! ```
//!
//! At `η = 0` the recurrent weights drop out and activations accumulate.
//! [`LeakyForm::Standard`] is the conventional
//! `h = (1 − η)·h_prev + η·f(x·W_in + h_prev·W_res + b_res)`.

use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, serde_matrix, serde_vector, Matrix, Vector};

const MAX_INIT_ATTEMPTS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Rectifier,
    /// Linear reservoir; used to check the recurrence against a plain RNN.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Rectifier => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakyForm {
    #[default]
    Paper,
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReservoirConfig {
    pub input_dim: usize,
    pub reservoir_size: usize,
    pub target_radius: f64,
    /// Fraction of nonzero entries in `w_res`.
    pub density: f64,
    pub input_scale: f64,
    pub bias_scale: f64,
    pub leak_rate: f64,
    pub activation: Activation,
    pub leaky_form: LeakyForm,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        ReservoirConfig {
            input_dim: 4,
            reservoir_size: 256,
            target_radius: 0.95,
            density: 0.25,
            input_scale: 1.0,
            bias_scale: 1.0,
            leak_rate: 0.0,
            activation: Activation::Rectifier,
            leaky_form: LeakyForm::Paper,
        }
    }
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be at least 1".into()));
        }
        if self.reservoir_size == 0 {
            return Err(Error::InvalidConfig("reservoir_size must be at least 1".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidConfig(format!("density {} outside (0, 1]", self.density)));
        }
        if !(0.0..=1.0).contains(&self.leak_rate) {
            return Err(Error::InvalidConfig(format!("leak rate {} outside [0, 1]", self.leak_rate)));
        }
        if !(self.target_radius > 0.0) || self.input_scale < 0.0 || self.bias_scale < 0.0 {
            return Err(Error::InvalidConfig("radius must be positive and scales non-negative".into()));
        }
        Ok(())
    }

    /// Width of a regressor row: `[state, hidden, 1]`.
    pub fn regressor_dim(&self) -> usize {
        self.input_dim + self.reservoir_size + 1
    }
}

/// Fixed random reservoir parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirWeights {
    pub config: ReservoirConfig,
    pub seed: u64,
    /// `input_dim × reservoir_size`
    #[serde(with = "serde_matrix")]
    pub w_in: Matrix,
    /// `reservoir_size × reservoir_size`
    #[serde(with = "serde_matrix")]
    pub w_res: Matrix,
    #[serde(with = "serde_vector")]
    pub b_res: Vector,
}

/// Per-batch reservoir state, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Matrix,
}

impl HiddenState {
    pub fn zeros(rows: usize, reservoir_size: usize) -> Self {
        HiddenState {
            h: Matrix::zeros((rows, reservoir_size)),
        }
    }
}

/// Trainable readout `Θ = [W_out; b_out]`, shape `regressor_dim × num_actions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputParams {
    #[serde(with = "serde_matrix")]
    pub theta: Matrix,
}

impl OutputParams {
    pub fn zeros(rows: usize, num_actions: usize) -> Self {
        OutputParams {
            theta: Matrix::zeros((rows, num_actions)),
        }
    }

    /// I.i.d. uniform entries on `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, num_actions: usize, scale: f64, rng: &mut R) -> Self {
        let theta = if scale > 0.0 {
            Matrix::from_shape_fn((rows, num_actions), |_| rng.random_range(-scale..=scale))
        } else {
            Matrix::zeros((rows, num_actions))
        };
        OutputParams { theta }
    }

    pub fn num_actions(&self) -> usize {
        self.theta.ncols()
    }
}

fn uniform_matrix<R: Rng + ?Sized>(shape: (usize, usize), scale: f64, rng: &mut R) -> Matrix {
    if scale > 0.0 {
        Matrix::from_shape_fn(shape, |_| rng.random_range(-scale..=scale))
    } else {
        Matrix::zeros(shape)
    }
}

/// Draws a reservoir for `config` deterministically from `seed`.
///
/// `w_res` gets exactly `⌊density·N²⌋` nonzero positions, chosen without
/// replacement, with values uniform on `[-1, 1]`, and is then rescaled to
/// `target_radius`. A draw with zero spectral radius is retried on the next
/// ChaCha stream, up to ten times.
pub fn init_reservoir(config: &ReservoirConfig, seed: u64) -> Result<ReservoirWeights> {
    config.validate()?;
    let n = config.reservoir_size;
    let nonzero = (config.density * (n * n) as f64).floor() as usize;

    for attempt in 0..MAX_INIT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);

        let w_in = uniform_matrix((config.input_dim, n), config.input_scale, &mut rng);
        let b_res: Vector = if config.bias_scale > 0.0 {
            (0..n).map(|_| rng.random_range(-config.bias_scale..=config.bias_scale)).collect()
        } else {
            Vector::zeros(n)
        };

        let mut w_raw = Matrix::zeros((n, n));
        for pos in index::sample(&mut rng, n * n, nonzero) {
            w_raw[[pos / n, pos % n]] = rng.random_range(-1.0..=1.0);
        }
        match numerics::spectral_scale(&w_raw, config.target_radius) {
            Ok(w_res) => {
                return Ok(ReservoirWeights {
                    config: config.clone(),
                    seed,
                    w_in,
                    w_res,
                    b_res,
                })
            }
            Err(Error::ZeroSpectralRadius) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::ZeroSpectralRadius)
}

impl ReservoirWeights {
    pub fn input_dim(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn reservoir_size(&self) -> usize {
        self.w_res.nrows()
    }

    pub fn regressor_dim(&self) -> usize {
        self.input_dim() + self.reservoir_size() + 1
    }

    // Coefficients (carry, recurrent, activation) of the update for `eta`.
    fn coefficients(&self, eta: f64) -> (f64, f64, f64) {
        match self.config.leaky_form {
            LeakyForm::Paper => (1.0 - eta, eta, 1.0),
            LeakyForm::Standard => (1.0 - eta, 1.0, eta),
        }
    }

    /// One reservoir update for a single sample.
    pub fn step(&self, h_prev: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>, eta: f64) -> Result<Vector> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("reservoir_step: x", self.input_dim(), x.len()));
        }
        if h_prev.len() != self.reservoir_size() {
            return Err(Error::dim("reservoir_step: h_prev", self.reservoir_size(), h_prev.len()));
        }
        let (carry, recurrent, gain) = self.coefficients(eta);
        let mut pre = x.dot(&self.w_in) + &self.b_res;
        if recurrent != 0.0 {
            pre.scaled_add(recurrent, &h_prev.dot(&self.w_res));
        }
        let act = self.config.activation;
        let h: Vector = pre
            .iter()
            .zip(h_prev.iter())
            .map(|(&p, &hp)| carry * hp + gain * act.apply(p))
            .collect();
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("reservoir_step: hidden state"));
        }
        Ok(h)
    }

    /// Runs the reservoir over `T` batches from a zero state and returns the
    /// hidden state after each one.
    pub fn forward_series(&self, series: &[Matrix], eta: f64) -> Result<Vec<HiddenState>> {
        let first = series.first().ok_or(Error::Empty("batch_reservoir_forward: series"))?;
        let rows = first.nrows();
        let (carry, recurrent, gain) = self.coefficients(eta);
        let act = self.config.activation;

        let mut h = Matrix::zeros((rows, self.reservoir_size()));
        let mut out = Vec::with_capacity(series.len());
        for (k, batch) in series.iter().enumerate() {
            if batch.nrows() != rows || batch.ncols() != self.input_dim() {
                return Err(Error::dim(
                    "batch_reservoir_forward: batch",
                    format!("{rows}x{}", self.input_dim()),
                    format!("{}x{}", batch.nrows(), batch.ncols()),
                ));
            }
            let mut pre = batch.dot(&self.w_in) + &self.b_res;
            if recurrent != 0.0 {
                pre.scaled_add(recurrent, &h.dot(&self.w_res));
            }
            ndarray::Zip::from(&mut h).and(&pre).for_each(|hv, &p| {
                *hv = carry * *hv + gain * act.apply(p);
            });
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("batch_reservoir_forward: series step {}", k + 1)));
            }
            out.push(HiddenState { h: h.clone() });
        }
        Ok(out)
    }
}

/// Free-function form of [`ReservoirWeights::step`].
pub fn reservoir_step(
    w: &ReservoirWeights,
    h_prev: ArrayView1<'_, f64>,
    x: ArrayView1<'_, f64>,
    eta: f64,
) -> Result<Vector> {
    w.step(h_prev, x, eta)
}

/// Free-function form of [`ReservoirWeights::forward_series`].
pub fn batch_reservoir_forward(w: &ReservoirWeights, series: &[Matrix], eta: f64) -> Result<Vec<HiddenState>> {
    w.forward_series(series, eta)
}

/// `[S, H, 1]`, one regressor row per sample.
pub fn build_regressor(states: ArrayView2<'_, f64>, hidden: &HiddenState) -> Result<Matrix> {
    if states.nrows() != hidden.h.nrows() {
        return Err(Error::dim("build_regressor: rows", states.nrows(), hidden.h.nrows()));
    }
    let ones = Array2::<f64>::ones((states.nrows(), 1));
    Ok(concatenate(Axis(1), &[states, hidden.h.view(), ones.view()]).expect("row counts checked"))
}

/// `Q = U·Θ`.
pub fn readout(theta: &OutputParams, u: ArrayView2<'_, f64>) -> Result<Matrix> {
    if u.ncols() != theta.theta.nrows() {
        return Err(Error::dim("readout: regressor width", theta.theta.nrows(), u.ncols()));
    }
    Ok(u.dot(&theta.theta))
}

/// Single-sample regressor `[x, h, 1]`.
pub fn regressor_row(x: ArrayView1<'_, f64>, h: ArrayView1<'_, f64>) -> Vector {
    let mut row = Vector::ones(x.len() + h.len() + 1);
    row.slice_mut(s![..x.len()]).assign(&x);
    row.slice_mut(s![x.len()..x.len() + h.len()]).assign(&h);
    row
}
