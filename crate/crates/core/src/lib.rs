//! Echo-state-network policy control trained by recursive least squares.
//!
//! The crate provides ESNRLS-Q and ESNRLS-Sarsa agents: a leaky-integrator
//! echo state network approximates action values, and its linear readout is
//! fitted online with a recursive-least-squares filter that folds each
//! replayed mini-batch of transition series into a single rank-one update of
//! batch-mean features. Feed-forward baselines trained by Adam, a native
//! CartPole simulator and a seeded experiment harness complete the toolkit.

pub mod agent;
pub mod baseline;
pub mod env;
pub mod error;
pub mod esn;
pub mod harness;
pub mod numerics;
pub mod replay;
pub mod rls;
pub mod rng;

pub use agent::{mellowmax, AgentKind, EsnAgent, EsnAgentConfig, TargetBatch};
pub use baseline::{AdamConfig, AdamState, FnnAgent, FnnAgentConfig, FnnGrads, FnnParams};
pub use env::{shape_terminal_reward, CartPole, CartPoleState, ObservationMode};
pub use error::{Error, Result};
pub use esn::{
    Activation, HiddenState, LeakyForm, OutputParams, ReservoirConfig, ReservoirWeights,
};
pub use harness::{
    AgentChoice, EpisodeLog, ExperimentConfig, ExperimentOutcome, RunFailure, SummaryRow, Task,
};
pub use numerics::{Matrix, RankOneUpdateResult, Vector};
pub use replay::{ReplayBuffer, Transition, TransitionSeries};
pub use rls::{MaskedTargets, RlsState};
