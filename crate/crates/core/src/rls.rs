//! Mean-approximation recursive least squares for the ESN readout.
//!
//! A replayed mini-batch contributes `M·T` regressor rows. Instead of a
//! rank-`M·T` update of the autocorrelation matrix, the filter folds the
//! batch into the outer product of its mean regressor `ū`, which keeps the
//! inverse update rank-one (Sherman–Morrison). The readout then moves along
//! the gain by the mean innovation `Q̄ᵖ − Q̄`, with an optional L1 shrinkage
//! term `κ·P·sgn(Θ)` evaluated at the prior `P`.
//!
//! [`batch_loss`] and [`loss_gradient`] evaluate the exponentially weighted
//! least-squares objective the filter tracks. They keep an explicit history
//! and exist for verification only.

use ndarray::{ArrayView1, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esn::OutputParams;
use crate::numerics::{self, serde_matrix, Matrix, Vector};

/// Inverse autocorrelation matrix with its forgetting and L1 factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlsState {
    #[serde(with = "serde_matrix")]
    pub p: Matrix,
    pub lambda: f64,
    pub kappa: f64,
}

impl RlsState {
    /// `P₀ = p0_scale · I`.
    pub fn new(dim: usize, p0_scale: f64, lambda: f64, kappa: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidConfig(format!("forgetting factor {lambda} outside (0, 1]")));
        }
        if kappa < 0.0 || !kappa.is_finite() {
            return Err(Error::InvalidConfig(format!("regularization factor {kappa} must be >= 0")));
        }
        if !(p0_scale > 0.0) {
            return Err(Error::InvalidConfig(format!("initial P scale {p0_scale} must be positive")));
        }
        Ok(RlsState {
            p: Matrix::eye(dim) * p0_scale,
            lambda,
            kappa,
        })
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }
}

/// Target and prediction matrices restricted to the taken action of each
/// row; every other entry is exactly zero in both.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTargets {
    pub q_pi: Matrix,
    pub q_pred: Matrix,
}

impl MaskedTargets {
    pub fn new(q_pi_full: &Matrix, q_pred_full: &Matrix, actions: &[usize]) -> Result<Self> {
        if q_pi_full.dim() != q_pred_full.dim() {
            return Err(Error::dim(
                "MaskedTargets",
                format!("{:?}", q_pi_full.dim()),
                format!("{:?}", q_pred_full.dim()),
            ));
        }
        Ok(MaskedTargets {
            q_pi: mask_to_actions(q_pi_full, actions)?,
            q_pred: mask_to_actions(q_pred_full, actions)?,
        })
    }
}

/// Keeps `q[i, actions[i]]` and zeroes everything else.
pub fn mask_to_actions(q: &Matrix, actions: &[usize]) -> Result<Matrix> {
    if q.nrows() != actions.len() {
        return Err(Error::dim("mask_to_actions: rows", q.nrows(), actions.len()));
    }
    let mut out = Matrix::zeros(q.dim());
    for (i, &a) in actions.iter().enumerate() {
        if a >= q.ncols() {
            return Err(Error::dim("mask_to_actions: action index", format!("< {}", q.ncols()), a));
        }
        out[[i, a]] = q[[i, a]];
    }
    Ok(out)
}

fn row_mean(series: &[Matrix], context: &'static str) -> Result<Vector> {
    let first = series.first().ok_or(Error::Empty(context))?;
    let (rows, cols) = first.dim();
    if rows == 0 {
        return Err(Error::Empty(context));
    }
    let mut acc = Vector::zeros(cols);
    for m in series {
        if m.dim() != (rows, cols) {
            return Err(Error::dim(context, format!("{rows}x{cols}"), format!("{}x{}", m.nrows(), m.ncols())));
        }
        acc += &m.sum_axis(Axis(0));
    }
    acc /= (rows * series.len()) as f64;
    Ok(acc)
}

/// `ū`: mean of every regressor row across the `T` steps of a batch.
pub fn mean_features(u_series: &[Matrix]) -> Result<Vector> {
    row_mean(u_series, "mean_features")
}

/// `Q̄ᵖ` or `Q̄`: mean of every (masked) row across the `T` steps.
pub fn mean_targets(q_series: &[Matrix]) -> Result<Vector> {
    row_mean(q_series, "mean_targets")
}

/// One filter step on `theta` and `state`.
///
/// `Θ ← Θ + g·(Q̄ᵖ − Q̄)ᵀ − κ·P·sgn(Θ)` with the prior `P`, then
/// `P ← (P − g·vᵀ)/λ`, where `v = P·ū` and `g = v/(λ + vᵀū)`.
pub fn rls_update(
    state: &mut RlsState,
    theta: &mut OutputParams,
    u_bar: ArrayView1<'_, f64>,
    q_pi_bar: ArrayView1<'_, f64>,
    q_bar: ArrayView1<'_, f64>,
) -> Result<()> {
    let d = state.dim();
    let actions = theta.theta.ncols();
    if theta.theta.nrows() != d {
        return Err(Error::dim("rls_update: theta rows", d, theta.theta.nrows()));
    }
    if u_bar.len() != d {
        return Err(Error::dim("rls_update: u_bar", d, u_bar.len()));
    }
    if q_pi_bar.len() != actions || q_bar.len() != actions {
        return Err(Error::dim(
            "rls_update: mean targets",
            actions,
            format!("{} / {}", q_pi_bar.len(), q_bar.len()),
        ));
    }

    let shrink = if state.kappa != 0.0 {
        let signs = theta.theta.mapv(numerics::sgn);
        Some(state.p.dot(&signs) * state.kappa)
    } else {
        None
    };

    let (_v, g) = numerics::rank_one_inverse_update_in_place(&mut state.p, u_bar, state.lambda)?;

    let innovation = &q_pi_bar - &q_bar;
    for (i, mut row) in theta.theta.axis_iter_mut(Axis(0)).enumerate() {
        let gi = g[i];
        Zip::from(&mut row).and(&innovation).for_each(|t, &e| *t += gi * e);
    }
    if let Some(shrink) = shrink {
        theta.theta -= &shrink;
    }
    if theta.theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::non_finite("rls_update: theta"));
    }
    Ok(())
}

/// One past mini-batch in the weighted least-squares objective.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySample {
    /// `T` regressor matrices, `M × D`.
    pub u_series: Vec<Matrix>,
    /// `T` target matrices, `M × |A|`, zero outside the taken action.
    pub targets: Vec<Matrix>,
    /// `T × M` taken actions.
    pub actions: Vec<Vec<usize>>,
}

impl HistorySample {
    fn check(&self, theta: &OutputParams) -> Result<(usize, usize)> {
        let steps = self.u_series.len();
        if steps == 0 || self.targets.len() != steps || self.actions.len() != steps {
            return Err(Error::dim("history sample: series length", steps, self.targets.len()));
        }
        let rows = self.u_series[0].nrows();
        for k in 0..steps {
            let u = &self.u_series[k];
            let q = &self.targets[k];
            if u.nrows() != rows || q.nrows() != rows || self.actions[k].len() != rows {
                return Err(Error::dim("history sample: rows", rows, u.nrows()));
            }
            if u.ncols() != theta.theta.nrows() || q.ncols() != theta.theta.ncols() {
                return Err(Error::dim(
                    "history sample: width",
                    format!("{:?}", theta.theta.dim()),
                    format!("{}/{}", u.ncols(), q.ncols()),
                ));
            }
        }
        Ok((rows, steps))
    }

    // Masked residual δ = Qᵖ − mask(U·Θ) at step k.
    fn residual(&self, theta: &OutputParams, k: usize) -> Result<Matrix> {
        let pred = mask_to_actions(&self.u_series[k].dot(&theta.theta), &self.actions[k])?;
        let target = mask_to_actions(&self.targets[k], &self.actions[k])?;
        Ok(target - pred)
    }
}

fn history_weights(len: usize, lambda: f64) -> impl Iterator<Item = f64> {
    // λ^{t−n} for n = 1..=t
    (0..len).map(move |n| lambda.powi((len - 1 - n) as i32))
}

/// Exponentially weighted masked squared error over `history`.
pub fn batch_loss(theta: &OutputParams, history: &[HistorySample], lambda: f64) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::Empty("batch_loss: history"));
    }
    let mut loss = 0.0;
    for (sample, w) in history.iter().zip(history_weights(history.len(), lambda)) {
        let (m, t) = sample.check(theta)?;
        let mut sq = 0.0;
        for k in 0..t {
            sq += sample.residual(theta, k)?.iter().map(|d| d * d).sum::<f64>();
        }
        loss += w * sq / (2.0 * (m * t) as f64);
    }
    Ok(loss)
}

/// Gradient of [`batch_loss`] with respect to `Θ`.
pub fn loss_gradient(theta: &OutputParams, history: &[HistorySample], lambda: f64) -> Result<Matrix> {
    if history.is_empty() {
        return Err(Error::Empty("loss_gradient: history"));
    }
    let mut grad = Matrix::zeros(theta.theta.dim());
    for (sample, w) in history.iter().zip(history_weights(history.len(), lambda)) {
        let (m, t) = sample.check(theta)?;
        let scale = -w / (m * t) as f64;
        for k in 0..t {
            let delta = sample.residual(theta, k)?;
            grad.scaled_add(scale, &sample.u_series[k].t().dot(&delta));
        }
    }
    Ok(grad)
}
