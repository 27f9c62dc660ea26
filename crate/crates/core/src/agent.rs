//! ESNRLS-Q and ESNRLS-Sarsa.
//!
//! Policy and target networks share one fixed reservoir and differ only in
//! their readouts. Training replays mini-batches of transition series: the
//! policy chain runs over the current states, the target chain over the
//! next states (both from a zero hidden state), bootstrap targets use the
//! Mellowmax of the target network's next-state values, and the readout is
//! advanced by one mean-approximation RLS step.

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esn::{self, OutputParams, ReservoirWeights};
use crate::numerics::{Matrix, Vector};
use crate::replay::TransitionSeries;
use crate::rls::{self, RlsState};

/// `(1/ω)·ln((1/n)·Σ exp(ω(qᵢ − c))) + c`.
///
/// Analytically independent of `c`; the shift only controls the range of
/// the exponentials. `omega` must be positive.
pub fn mellowmax(q_row: ArrayView1<'_, f64>, omega: f64, c: f64) -> f64 {
    debug_assert!(omega > 0.0, "mellowmax temperature must be positive");
    let n = q_row.len() as f64;
    let sum: f64 = q_row.iter().map(|&q| (omega * (q - c)).exp()).sum();
    (sum / n).ln() / omega + c
}

/// Index of the largest entry; ties go to the lowest index.
pub fn greedy_action(q: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    QLearning,
    Sarsa,
}

/// When the acting-time hidden state returns to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineReset {
    /// Only at episode start.
    Episode,
    /// At episode start and every `series_len` steps, aligned with the
    /// replay windows so acting features match training features.
    #[default]
    Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsnAgentConfig {
    pub kind: AgentKind,
    pub num_actions: usize,
    pub gamma: f64,
    pub epsilon: f64,
    /// Mellowmax temperature.
    pub omega: f64,
    pub eta: f64,
    pub p0_scale: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub theta_init_scale: f64,
    pub series_len: usize,
    pub online_reset: OnlineReset,
}

impl Default for EsnAgentConfig {
    fn default() -> Self {
        EsnAgentConfig {
            kind: AgentKind::QLearning,
            num_actions: 2,
            gamma: 0.99,
            epsilon: 0.01,
            omega: 1.0,
            eta: 0.0,
            p0_scale: 0.4,
            lambda: 0.99999,
            kappa: 1e-5,
            theta_init_scale: 0.05,
            series_len: 5,
            online_reset: OnlineReset::Segment,
        }
    }
}

impl EsnAgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_actions == 0 || self.series_len == 0 {
            return Err(Error::InvalidConfig("action count and series length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig("epsilon and gamma must lie in [0, 1]".into()));
        }
        if !(self.omega > 0.0) {
            return Err(Error::InvalidConfig(format!("mellowmax temperature {} must be positive", self.omega)));
        }
        Ok(())
    }
}

/// Masked bootstrap targets, one `M × |A|` matrix per series step.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBatch {
    pub q_pi: Vec<Matrix>,
    /// Taken action per step and sample (`T × M`).
    pub actions: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsnAgentSnapshot {
    pub config: EsnAgentConfig,
    pub reservoir: ReservoirWeights,
    pub theta_policy: OutputParams,
    pub theta_target: OutputParams,
    pub rls: RlsState,
}

#[derive(Debug, Clone)]
pub struct EsnAgent {
    pub config: EsnAgentConfig,
    pub reservoir: ReservoirWeights,
    pub theta_policy: OutputParams,
    pub theta_target: OutputParams,
    pub rls: RlsState,
    online_h: Vector,
    online_steps: usize,
}

impl EsnAgent {
    /// Fresh agent; the readout is drawn uniform on `±theta_init_scale` and
    /// copied into the target network.
    pub fn new<R: Rng + ?Sized>(config: EsnAgentConfig, reservoir: ReservoirWeights, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dim = reservoir.regressor_dim();
        let theta = OutputParams::uniform(dim, config.num_actions, config.theta_init_scale, rng);
        let rls = RlsState::new(dim, config.p0_scale, config.lambda, config.kappa)?;
        let online_h = Array1::zeros(reservoir.reservoir_size());
        Ok(EsnAgent {
            theta_target: theta.clone(),
            theta_policy: theta,
            rls,
            online_h,
            online_steps: 0,
            config,
            reservoir,
        })
    }

    pub fn online_hidden(&self) -> ArrayView1<'_, f64> {
        self.online_h.view()
    }

    /// Clears the acting-time reservoir state.
    pub fn begin_episode(&mut self) {
        self.online_h.fill(0.0);
        self.online_steps = 0;
    }

    /// Advances the online reservoir with `observation` and returns the
    /// policy network's action values.
    pub fn observe(&mut self, observation: &[f64]) -> Result<Vector> {
        if self.config.online_reset == OnlineReset::Segment
            && self.online_steps > 0
            && self.online_steps.is_multiple_of(self.config.series_len)
        {
            self.online_h.fill(0.0);
        }
        let x = ArrayView1::from(observation);
        self.online_h = self.reservoir.step(self.online_h.view(), x, self.config.eta)?;
        self.online_steps += 1;
        let u = esn::regressor_row(x, self.online_h.view());
        Ok(self.theta_policy.theta.t().dot(&u))
    }

    /// ε-greedy action at `observation`.
    pub fn act<R: Rng + ?Sized>(&mut self, observation: &[f64], rng: &mut R) -> Result<usize> {
        let q = self.observe(observation)?;
        Ok(self.choose(q.view(), rng))
    }

    fn choose<R: Rng + ?Sized>(&self, q: ArrayView1<'_, f64>, rng: &mut R) -> usize {
        if rng.random::<f64>() < self.config.epsilon {
            rng.random_range(0..self.config.num_actions)
        } else {
            greedy_action(q)
        }
    }

    fn regressors(&self, series: &[Matrix]) -> Result<Vec<Matrix>> {
        let hidden = self.reservoir.forward_series(series, self.config.eta)?;
        series
            .iter()
            .zip(&hidden)
            .map(|(s, h)| esn::build_regressor(s.view(), h))
            .collect()
    }

    /// Bootstrap targets for a replayed mini-batch from the target network.
    pub fn compute_targets(&self, minibatch: &[&TransitionSeries]) -> Result<TargetBatch> {
        let (_, next_states) = stack_states(minibatch)?;
        let u_next = self.regressors(&next_states)?;
        let (m, t) = (minibatch.len(), next_states.len());
        let na = self.config.num_actions;

        let mut q_pi = Vec::with_capacity(t);
        let mut actions = Vec::with_capacity(t);
        for (k, u) in u_next.iter().enumerate() {
            let q_next = esn::readout(&self.theta_target, u.view())?;
            let mut targets = Matrix::zeros((m, na));
            let mut taken = Vec::with_capacity(m);
            for (i, series) in minibatch.iter().enumerate() {
                let tr = &series.steps[k];
                if tr.a >= na || tr.a_next >= na {
                    return Err(Error::dim("compute_targets: action", format!("< {na}"), tr.a.max(tr.a_next)));
                }
                let value = if tr.terminal {
                    tr.r
                } else {
                    let row = q_next.row(i);
                    let shift = match self.config.kind {
                        AgentKind::QLearning => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                        AgentKind::Sarsa => row[tr.a_next],
                    };
                    tr.r + self.config.gamma * mellowmax(row, self.config.omega, shift)
                };
                targets[[i, tr.a]] = value;
                taken.push(tr.a);
            }
            q_pi.push(targets);
            actions.push(taken);
        }
        Ok(TargetBatch { q_pi, actions })
    }

    /// One mean-approximation RLS update of the policy readout.
    pub fn train_step(&mut self, minibatch: &[&TransitionSeries]) -> Result<()> {
        let (states, _) = stack_states(minibatch)?;
        let u_series = self.regressors(&states)?;
        let targets = self.compute_targets(minibatch)?;

        let mut preds = Vec::with_capacity(u_series.len());
        for (u, taken) in u_series.iter().zip(&targets.actions) {
            let q = esn::readout(&self.theta_policy, u.view())?;
            preds.push(rls::mask_to_actions(&q, taken)?);
        }

        let u_bar = rls::mean_features(&u_series)?;
        let q_pi_bar = rls::mean_targets(&targets.q_pi)?;
        let q_bar = rls::mean_targets(&preds)?;
        rls::rls_update(&mut self.rls, &mut self.theta_policy, u_bar.view(), q_pi_bar.view(), q_bar.view())
    }

    /// Copies the policy readout into the target network.
    pub fn sync_target(&mut self) {
        self.theta_target = self.theta_policy.clone();
    }

    pub fn snapshot(&self) -> EsnAgentSnapshot {
        EsnAgentSnapshot {
            config: self.config.clone(),
            reservoir: self.reservoir.clone(),
            theta_policy: self.theta_policy.clone(),
            theta_target: self.theta_target.clone(),
            rls: self.rls.clone(),
        }
    }

    pub fn from_snapshot(s: EsnAgentSnapshot) -> Result<Self> {
        s.config.validate()?;
        let online_h = Array1::zeros(s.reservoir.reservoir_size());
        Ok(EsnAgent {
            config: s.config,
            reservoir: s.reservoir,
            theta_policy: s.theta_policy,
            theta_target: s.theta_target,
            rls: s.rls,
            online_h,
            online_steps: 0,
        })
    }
}

/// Per-step `M × d` matrices of current and next states.
pub(crate) fn stack_states(minibatch: &[&TransitionSeries]) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    let first = minibatch.first().ok_or(Error::Empty("minibatch"))?;
    let t = first.len();
    let d = first.steps.first().ok_or(Error::Empty("transition series"))?.s.len();
    let m = minibatch.len();
    let mut states = vec![Matrix::zeros((m, d)); t];
    let mut next = vec![Matrix::zeros((m, d)); t];
    for (i, series) in minibatch.iter().enumerate() {
        if series.len() != t {
            return Err(Error::dim("minibatch: series length", t, series.len()));
        }
        for (k, tr) in series.steps.iter().enumerate() {
            if tr.s.len() != d || tr.s_next.len() != d {
                return Err(Error::dim("minibatch: observation width", d, tr.s.len()));
            }
            states[k].row_mut(i).assign(&ArrayView1::from(&tr.s[..]));
            next[k].row_mut(i).assign(&ArrayView1::from(&tr.s_next[..]));
        }
    }
    Ok((states, next))
}
