//! Feed-forward comparison agents (FNNAdam-Q / FNNAdam-Sarsa).
//!
//! One rectifier hidden layer, a linear output per action, trained by
//! backpropagation and Adam on the masked squared TD error. Targets use the
//! plain max (Q-learning) or the recorded next action (Sarsa) of a target
//! network; no Mellowmax.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{greedy_action, AgentKind};
use crate::error::{Error, Result};
use crate::numerics::{serde_matrix, serde_vector, Matrix, Vector};
use crate::replay::TransitionSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnParams {
    /// `input_dim × hidden`
    #[serde(with = "serde_matrix")]
    pub w1: Matrix,
    #[serde(with = "serde_vector")]
    pub b1: Vector,
    /// `hidden × num_actions`
    #[serde(with = "serde_matrix")]
    pub w2: Matrix,
    #[serde(with = "serde_vector")]
    pub b2: Vector,
}

/// Gradients share the parameter layout.
pub type FnnGrads = FnnParams;

impl FnnParams {
    pub fn zeros(input_dim: usize, hidden: usize, num_actions: usize) -> Self {
        FnnParams {
            w1: Matrix::zeros((input_dim, hidden)),
            b1: Vector::zeros(hidden),
            w2: Matrix::zeros((hidden, num_actions)),
            b2: Vector::zeros(num_actions),
        }
    }

    /// Weights uniform on `±1/√fan_in`, biases zero.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, num_actions: usize, rng: &mut R) -> Self {
        let b1 = 1.0 / (input_dim as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        FnnParams {
            w1: Matrix::from_shape_fn((input_dim, hidden), |_| rng.random_range(-b1..=b1)),
            b1: Vector::zeros(hidden),
            w2: Matrix::from_shape_fn((hidden, num_actions), |_| rng.random_range(-b2..=b2)),
            b2: Vector::zeros(num_actions),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.w2.ncols()
    }

    fn blocks(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    fn same_shape(&self, other: &FnnParams) -> bool {
        self.w1.dim() == other.w1.dim() && self.w2.dim() == other.w2.dim()
    }

    fn hidden_pre(&self, x: ArrayView2<'_, f64>) -> Result<Matrix> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim("fnn_forward: input width", self.input_dim(), x.ncols()));
        }
        Ok(x.dot(&self.w1) + &self.b1)
    }
}

/// `q = relu(x·w1 + b1)·w2 + b2`
pub fn fnn_forward(params: &FnnParams, x: ArrayView2<'_, f64>) -> Result<Matrix> {
    let hidden = params.hidden_pre(x)?.mapv_into(|v| v.max(0.0));
    Ok(hidden.dot(&params.w2) + &params.b2)
}

/// Masked squared error `(1/2M)·Σᵢ (targetᵢ − q[i, aᵢ])²` and its gradients.
///
/// `targets` carries the target value at the taken action of each row;
/// other entries are ignored.
pub fn fnn_loss_and_grads(
    params: &FnnParams,
    x: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    actions: &[usize],
) -> Result<(f64, FnnGrads)> {
    let m = x.nrows();
    if targets.nrows() != m || actions.len() != m || targets.ncols() != params.num_actions() {
        return Err(Error::dim(
            "fnn_loss_and_grads: batch",
            format!("{m} rows x {} actions", params.num_actions()),
            format!("{} rows x {} actions, {} labels", targets.nrows(), targets.ncols(), actions.len()),
        ));
    }
    if m == 0 {
        return Err(Error::Empty("fnn_loss_and_grads: batch"));
    }
    let pre = params.hidden_pre(x)?;
    let hidden = pre.mapv(|v| v.max(0.0));
    let q = hidden.dot(&params.w2) + &params.b2;

    // dL/dq, nonzero only at taken actions
    let mut dq = Matrix::zeros(q.dim());
    let mut loss = 0.0;
    for (i, &a) in actions.iter().enumerate() {
        if a >= params.num_actions() {
            return Err(Error::dim("fnn_loss_and_grads: action", format!("< {}", params.num_actions()), a));
        }
        let delta = targets[[i, a]] - q[[i, a]];
        loss += delta * delta;
        dq[[i, a]] = -delta / m as f64;
    }
    loss /= 2.0 * m as f64;

    let w2 = hidden.t().dot(&dq);
    let b2 = dq.sum_axis(Axis(0));
    let mut dh = dq.dot(&params.w2.t());
    Zip::from(&mut dh).and(&pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    let w1 = x.t().dot(&dh);
    let b1 = dh.sum_axis(Axis(0));
    Ok((loss, FnnParams { w1, b1, w2, b2 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: FnnParams,
    pub v: FnnParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, like: &FnnParams) -> Self {
        let zeros = FnnParams::zeros(like.input_dim(), like.b1.len(), like.num_actions());
        AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Bias-corrected Adam step applied to `params` in place.
pub fn adam_step(adam: &mut AdamState, params: &mut FnnParams, grads: &FnnGrads) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&adam.m) {
        return Err(Error::dim("adam_step", "matching parameter shapes", "mismatch"));
    }
    adam.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = adam.config;
    let bc1 = 1.0 - beta1.powi(adam.t as i32);
    let bc2 = 1.0 - beta2.powi(adam.t as i32);

    let g_blocks = grads.blocks();
    let [m1, m2, m3, m4] = adam.m.blocks_mut();
    let [v1, v2, v3, v4] = adam.v.blocks_mut();
    let [p1, p2, p3, p4] = params.blocks_mut();
    for (((p, m), v), g) in [p1, p2, p3, p4].into_iter().zip([m1, m2, m3, m4]).zip([v1, v2, v3, v4]).zip(g_blocks) {
        for j in 0..p.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    if params.blocks().iter().any(|b| b.iter().any(|x| !x.is_finite())) {
        return Err(Error::non_finite("adam_step: parameters"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FnnAgentConfig {
    pub kind: AgentKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub adam: AdamConfig,
}

impl Default for FnnAgentConfig {
    fn default() -> Self {
        FnnAgentConfig {
            kind: AgentKind::QLearning,
            input_dim: 4,
            hidden: 256,
            num_actions: 2,
            gamma: 0.99,
            epsilon: 0.01,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnAgentSnapshot {
    pub config: FnnAgentConfig,
    pub policy: FnnParams,
    pub target: FnnParams,
    pub adam: AdamState,
}

#[derive(Debug, Clone)]
pub struct FnnAgent {
    pub config: FnnAgentConfig,
    pub policy: FnnParams,
    pub target: FnnParams,
    pub adam: AdamState,
}

impl FnnAgent {
    pub fn new<R: Rng + ?Sized>(config: FnnAgentConfig, rng: &mut R) -> Result<Self> {
        if config.input_dim == 0 || config.hidden == 0 || config.num_actions == 0 {
            return Err(Error::InvalidConfig("network dimensions must be positive".into()));
        }
        let policy = FnnParams::init(config.input_dim, config.hidden, config.num_actions, rng);
        let adam = AdamState::new(config.adam, &policy);
        Ok(FnnAgent {
            target: policy.clone(),
            policy,
            adam,
            config,
        })
    }

    pub fn q_values(&self, observation: &[f64]) -> Result<Array1<f64>> {
        let x = ArrayView1::from(observation).insert_axis(Axis(0));
        Ok(fnn_forward(&self.policy, x)?.row(0).to_owned())
    }

    pub fn act<R: Rng + ?Sized>(&self, observation: &[f64], rng: &mut R) -> Result<usize> {
        let q = self.q_values(observation)?;
        Ok(if rng.random::<f64>() < self.config.epsilon {
            rng.random_range(0..self.config.num_actions)
        } else {
            greedy_action(q.view())
        })
    }

    /// Masked targets over the non-fill transitions of `minibatch`, returned
    /// with the stacked inputs and taken actions.
    pub fn compute_targets(&self, minibatch: &[&TransitionSeries]) -> Result<(Matrix, Matrix, Vec<usize>)> {
        let rows: Vec<_> = minibatch.iter().flat_map(|s| s.real_steps()).collect();
        if rows.is_empty() {
            return Err(Error::Empty("baseline minibatch"));
        }
        let d = self.config.input_dim;
        let na = self.config.num_actions;
        let mut x = Matrix::zeros((rows.len(), d));
        let mut x_next = Matrix::zeros((rows.len(), d));
        for (i, tr) in rows.iter().enumerate() {
            if tr.s.len() != d || tr.s_next.len() != d {
                return Err(Error::dim("baseline minibatch: observation width", d, tr.s.len()));
            }
            x.row_mut(i).assign(&ArrayView1::from(&tr.s[..]));
            x_next.row_mut(i).assign(&ArrayView1::from(&tr.s_next[..]));
        }
        let q_next = fnn_forward(&self.target, x_next.view())?;
        let mut targets = Matrix::zeros((rows.len(), na));
        let mut actions = Vec::with_capacity(rows.len());
        for (i, tr) in rows.iter().enumerate() {
            if tr.a >= na || tr.a_next >= na {
                return Err(Error::dim("baseline minibatch: action", format!("< {na}"), tr.a.max(tr.a_next)));
            }
            let bootstrap = if tr.terminal {
                0.0
            } else {
                match self.config.kind {
                    AgentKind::QLearning => q_next.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    AgentKind::Sarsa => q_next[[i, tr.a_next]],
                }
            };
            targets[[i, tr.a]] = tr.r + self.config.gamma * bootstrap;
            actions.push(tr.a);
        }
        Ok((x, targets, actions))
    }

    /// One Adam step on the TD loss; returns the pre-update loss.
    pub fn train_step(&mut self, minibatch: &[&TransitionSeries]) -> Result<f64> {
        let (x, targets, actions) = self.compute_targets(minibatch)?;
        let (loss, grads) = fnn_loss_and_grads(&self.policy, x.view(), targets.view(), &actions)?;
        adam_step(&mut self.adam, &mut self.policy, &grads)?;
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target = self.policy.clone();
    }

    pub fn snapshot(&self) -> FnnAgentSnapshot {
        FnnAgentSnapshot {
            config: self.config.clone(),
            policy: self.policy.clone(),
            target: self.target.clone(),
            adam: self.adam.clone(),
        }
    }
}
