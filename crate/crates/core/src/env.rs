//! Cart-pole balancing task with full and velocity-hidden observations.
//!
//! Dynamics, constants and termination follow the classic-control
//! CartPole-v0 task: explicit Euler integration at 50 Hz, ±10 N push,
//! failure when the cart leaves ±2.4 m or the pole tilts past 12°.
//! The environment never truncates on its own; episode caps belong to the
//! caller.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const X_THRESHOLD: f64 = 2.4;
pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const NUM_ACTIONS: usize = 2;
pub const FAILURE_REWARD: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn new(x: f64, x_dot: f64, theta: f64, theta_dot: f64) -> Self {
        CartPoleState { x, x_dot, theta, theta_dot }
    }

    pub fn is_terminal(&self) -> bool {
        self.x.abs() > X_THRESHOLD || self.theta.abs() > THETA_THRESHOLD
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }
}

impl std::ops::Neg for CartPoleState {
    type Output = CartPoleState;

    fn neg(self) -> Self {
        CartPoleState::new(-self.x, -self.x_dot, -self.theta, -self.theta_dot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// `(x, x_dot, theta, theta_dot)`
    Full4,
    /// `(x, theta, theta_dot)`: cart velocity hidden.
    Partial3,
}

impl ObservationMode {
    pub fn dim(self) -> usize {
        match self {
            ObservationMode::Full4 => 4,
            ObservationMode::Partial3 => 3,
        }
    }
}

pub fn observe(state: &CartPoleState, mode: ObservationMode) -> Vec<f64> {
    match mode {
        ObservationMode::Full4 => state.to_array().to_vec(),
        ObservationMode::Partial3 => vec![state.x, state.theta, state.theta_dot],
    }
}

/// Reward for an episode's final transition: the failure penalty unless the
/// agent survived to the cap.
pub fn shape_terminal_reward(steps_survived: usize, max_steps: usize, raw_reward: f64) -> f64 {
    if steps_survived < max_steps {
        FAILURE_REWARD
    } else {
        raw_reward
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    /// Half the pole length.
    pub length: f64,
    pub force_mag: f64,
    pub tau: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
        }
    }
}

impl CartPoleParams {
    /// One Euler step. Returns `(next, reward, terminal)`.
    pub fn step(&self, s: &CartPoleState, action: usize) -> Result<(CartPoleState, f64, bool)> {
        if s.is_terminal() {
            return Err(Error::TerminalState);
        }
        if action >= NUM_ACTIONS {
            return Err(Error::dim("cartpole action", format!("< {NUM_ACTIONS}"), action));
        }
        let total_mass = self.mass_pole + self.mass_cart;
        let polemass_length = self.mass_pole * self.length;
        let force = if action == 1 { self.force_mag } else { -self.force_mag };
        let (sin, cos) = s.theta.sin_cos();
        let temp = (force + polemass_length * s.theta_dot * s.theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.length * (4.0 / 3.0 - self.mass_pole * cos * cos / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos / total_mass;

        let next = CartPoleState {
            x: s.x + self.tau * s.x_dot,
            x_dot: s.x_dot + self.tau * x_acc,
            theta: s.theta + self.tau * s.theta_dot,
            theta_dot: s.theta_dot + self.tau * theta_acc,
        };
        Ok((next, 1.0, next.is_terminal()))
    }

    /// Mechanical energy of a cart carrying a uniform rod.
    pub fn energy(&self, s: &CartPoleState) -> f64 {
        let total_mass = self.mass_pole + self.mass_cart;
        let ml = self.mass_pole * self.length;
        0.5 * total_mass * s.x_dot * s.x_dot
            + ml * s.x_dot * s.theta_dot * s.theta.cos()
            + (2.0 / 3.0) * ml * self.length * s.theta_dot * s.theta_dot
            + ml * self.gravity * s.theta.cos()
    }
}

/// Each component uniform on `[-0.05, 0.05]`.
pub fn reset<R: Rng + ?Sized>(rng: &mut R) -> CartPoleState {
    let mut draw = || rng.random_range(-0.05..=0.05);
    CartPoleState {
        x: draw(),
        x_dot: draw(),
        theta: draw(),
        theta_dot: draw(),
    }
}

/// Stateful environment wrapper used by the experiment loop.
#[derive(Debug, Clone)]
pub struct CartPole {
    pub params: CartPoleParams,
    pub mode: ObservationMode,
    state: CartPoleState,
}

impl CartPole {
    pub fn new(mode: ObservationMode) -> Self {
        CartPole {
            params: CartPoleParams::default(),
            mode,
            state: CartPoleState::default(),
        }
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.state = reset(rng);
        observe(&self.state, self.mode)
    }

    /// Returns `(observation, reward, terminal)`.
    pub fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        let (next, reward, terminal) = self.params.step(&self.state, action)?;
        self.state = next;
        Ok((observe(&next, self.mode), reward, terminal))
    }
}
