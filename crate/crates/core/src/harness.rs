//! Experiment protocol: random-policy warm-up, ε-greedy training episodes
//! with one replayed update per environment step, target sync at episode
//! end, repeated over seeds and written out as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentKind, EsnAgent, EsnAgentConfig, OnlineReset};
use crate::baseline::{AdamConfig, FnnAgent, FnnAgentConfig};
use crate::env::{self, CartPole, ObservationMode, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::esn::{init_reservoir, Activation, LeakyForm, ReservoirConfig};
use crate::replay::{segment_episode, ReplayBuffer, Transition, TransitionSeries};
use crate::rng::{substream, Stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "mdp_cartpole", alias = "mdp")]
    MdpCartPole,
    #[serde(rename = "pomdp_cartpole", alias = "pomdp")]
    PomdpCartPole,
}

impl Task {
    pub fn observation_mode(self) -> ObservationMode {
        match self {
            Task::MdpCartPole => ObservationMode::Full4,
            Task::PomdpCartPole => ObservationMode::Partial3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentChoice {
    EsnrlsQ,
    EsnrlsSarsa,
    FnnadamQ,
    FnnadamSarsa,
}

impl AgentChoice {
    pub fn kind(self) -> AgentKind {
        match self {
            AgentChoice::EsnrlsQ | AgentChoice::FnnadamQ => AgentKind::QLearning,
            AgentChoice::EsnrlsSarsa | AgentChoice::FnnadamSarsa => AgentKind::Sarsa,
        }
    }

    pub fn is_esn(self) -> bool {
        matches!(self, AgentChoice::EsnrlsQ | AgentChoice::EsnrlsSarsa)
    }
}

/// Full experiment configuration. Every field has a default, so a JSON
/// file only needs the keys it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub agent: AgentChoice,
    pub warmup_episodes: usize,
    pub train_episodes: usize,
    pub max_steps: usize,
    pub repeats: usize,
    pub seed: u64,
    pub series_len: usize,
    pub minibatch: usize,
    pub capacity: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub omega: f64,
    pub p0_scale: f64,
    pub reservoir_size: usize,
    pub spectral_radius: f64,
    pub density: f64,
    pub eta: f64,
    pub input_scale: f64,
    pub bias_scale: f64,
    pub leaky_form: LeakyForm,
    pub theta_init_scale: f64,
    pub online_reset: OnlineReset,
    pub fnn_hidden: usize,
    pub adam: AdamConfig,
    /// Environment steps between replayed updates.
    pub train_every: usize,
    /// Keep each run's final agent for `snapshot_run<r>.json`.
    pub snapshot: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::MdpCartPole,
            agent: AgentChoice::EsnrlsQ,
            warmup_episodes: 1000,
            train_episodes: 100,
            max_steps: 200,
            repeats: 5,
            seed: 0,
            series_len: 5,
            minibatch: 64,
            capacity: 100_000,
            epsilon: 0.01,
            gamma: 0.99,
            lambda: 0.99999,
            kappa: 1e-5,
            omega: 1.0,
            p0_scale: 0.4,
            reservoir_size: 256,
            spectral_radius: 0.95,
            density: 0.25,
            eta: 0.0,
            input_scale: 1.0,
            bias_scale: 1.0,
            leaky_form: LeakyForm::Paper,
            theta_init_scale: 0.05,
            online_reset: OnlineReset::Segment,
            fnn_hidden: 256,
            adam: AdamConfig::default(),
            train_every: 1,
            snapshot: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("max_steps", self.max_steps),
            ("repeats", self.repeats),
            ("series_len", self.series_len),
            ("minibatch", self.minibatch),
            ("capacity", self.capacity),
            ("reservoir_size", self.reservoir_size),
            ("fnn_hidden", self.fnn_hidden),
            ("train_every", self.train_every),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        for (name, p) in [("epsilon", self.epsilon), ("gamma", self.gamma), ("density", self.density), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn reservoir_config(&self) -> ReservoirConfig {
        ReservoirConfig {
            input_dim: self.task.observation_mode().dim(),
            reservoir_size: self.reservoir_size,
            target_radius: self.spectral_radius,
            density: self.density,
            input_scale: self.input_scale,
            bias_scale: self.bias_scale,
            leak_rate: self.eta,
            activation: Activation::Rectifier,
            leaky_form: self.leaky_form,
        }
    }

    pub fn esn_agent_config(&self) -> EsnAgentConfig {
        EsnAgentConfig {
            kind: self.agent.kind(),
            num_actions: NUM_ACTIONS,
            gamma: self.gamma,
            epsilon: self.epsilon,
            omega: self.omega,
            eta: self.eta,
            p0_scale: self.p0_scale,
            lambda: self.lambda,
            kappa: self.kappa,
            theta_init_scale: self.theta_init_scale,
            series_len: self.series_len,
            online_reset: self.online_reset,
        }
    }

    pub fn fnn_agent_config(&self) -> FnnAgentConfig {
        FnnAgentConfig {
            kind: self.agent.kind(),
            input_dim: self.task.observation_mode().dim(),
            hidden: self.fnn_hidden,
            num_actions: NUM_ACTIONS,
            gamma: self.gamma,
            epsilon: self.epsilon,
            adam: self.adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub run: usize,
    /// 1-based within a run.
    pub episode: usize,
    pub steps: usize,
    /// Undiscounted sum of shaped rewards.
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub episode: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub episode: usize,
    pub mean_steps: f64,
    pub min_steps: usize,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub logs: Vec<EpisodeLog>,
    pub failures: Vec<RunFailure>,
    /// `(run, agent snapshot)` when snapshots are requested.
    pub snapshots: Vec<(usize, serde_json::Value)>,
}

/// Either agent family behind one acting/training interface.
#[derive(Debug, Clone)]
pub enum Agent {
    Esn(Box<EsnAgent>),
    Fnn(Box<FnnAgent>),
}

impl Agent {
    /// Builds the agent selected by `config` from the run's substreams.
    pub fn build(config: &ExperimentConfig, run_seed: u64) -> Result<Self> {
        let mut weight_rng = substream(run_seed, Stream::WeightInit);
        if config.agent.is_esn() {
            let reservoir_seed: u64 = substream(run_seed, Stream::ReservoirInit).random();
            let reservoir = init_reservoir(&config.reservoir_config(), reservoir_seed)?;
            Ok(Agent::Esn(Box::new(EsnAgent::new(config.esn_agent_config(), reservoir, &mut weight_rng)?)))
        } else {
            Ok(Agent::Fnn(Box::new(FnnAgent::new(config.fnn_agent_config(), &mut weight_rng)?)))
        }
    }

    pub fn begin_episode(&mut self) {
        if let Agent::Esn(a) = self {
            a.begin_episode();
        }
    }

    pub fn act(&mut self, observation: &[f64], rng: &mut StreamRng) -> Result<usize> {
        match self {
            Agent::Esn(a) => a.act(observation, rng),
            Agent::Fnn(a) => a.act(observation, rng),
        }
    }

    pub fn train_step(&mut self, minibatch: &[&TransitionSeries]) -> Result<()> {
        match self {
            Agent::Esn(a) => a.train_step(minibatch),
            Agent::Fnn(a) => a.train_step(minibatch).map(|_| ()),
        }
    }

    pub fn sync_target(&mut self) {
        match self {
            Agent::Esn(a) => a.sync_target(),
            Agent::Fnn(a) => a.sync_target(),
        }
    }

    pub fn snapshot_json(&self) -> Result<serde_json::Value> {
        Ok(match self {
            Agent::Esn(a) => serde_json::to_value(a.snapshot())?,
            Agent::Fnn(a) => serde_json::to_value(a.snapshot())?,
        })
    }
}

/// Fills `buffer` with `config.warmup_episodes` uniform-random episodes.
pub fn warmup_collect(
    env: &mut CartPole,
    buffer: &mut ReplayBuffer,
    config: &ExperimentConfig,
    env_rng: &mut StreamRng,
    action_rng: &mut StreamRng,
) -> Result<()> {
    for _ in 0..config.warmup_episodes {
        let mut obs = env.reset(env_rng);
        let mut action = action_rng.random_range(0..NUM_ACTIONS);
        let mut episode: Vec<Transition> = Vec::new();
        loop {
            let (next, reward, terminal) = env.step(action)?;
            let steps = episode.len() + 1;
            let done = terminal || steps >= config.max_steps;
            let reward = if done { env::shape_terminal_reward(steps, config.max_steps, reward) } else { reward };
            let next_action = if done { action } else { action_rng.random_range(0..NUM_ACTIONS) };
            episode.push(Transition {
                s: obs,
                a: action,
                s_next: next.clone(),
                a_next: next_action,
                r: reward,
                terminal,
            });
            if done {
                break;
            }
            obs = next;
            action = next_action;
        }
        buffer.extend(segment_episode(&episode, config.series_len)?);
    }
    Ok(())
}

/// Random number streams consumed by one training run.
pub struct RunStreams {
    pub env: StreamRng,
    pub policy: StreamRng,
    pub sampling: StreamRng,
}

/// ε-greedy training episodes for one run.
///
/// Returns the completed episode logs and, if the run aborted (divergence,
/// invalid state), a failure record for the episode that broke.
pub fn run_training(
    env: &mut CartPole,
    agent: &mut Agent,
    buffer: &mut ReplayBuffer,
    config: &ExperimentConfig,
    streams: &mut RunStreams,
    run: usize,
) -> (Vec<EpisodeLog>, Option<RunFailure>) {
    let mut logs = Vec::with_capacity(config.train_episodes);
    if config.train_episodes > 0 && buffer.len() < config.minibatch {
        let failure = RunFailure {
            run,
            episode: 1,
            message: Error::InsufficientSamples {
                available: buffer.len(),
                requested: config.minibatch,
            }
            .to_string(),
        };
        return (logs, Some(failure));
    }
    for episode in 1..=config.train_episodes {
        match training_episode(env, agent, buffer, config, streams) {
            Ok((steps, ret)) => logs.push(EpisodeLog { run, episode, steps, ret }),
            Err(e) => {
                return (
                    logs,
                    Some(RunFailure {
                        run,
                        episode,
                        message: e.to_string(),
                    }),
                )
            }
        }
    }
    (logs, None)
}

fn training_episode(
    env: &mut CartPole,
    agent: &mut Agent,
    buffer: &mut ReplayBuffer,
    config: &ExperimentConfig,
    streams: &mut RunStreams,
) -> Result<(usize, f64)> {
    let mut obs = env.reset(&mut streams.env);
    agent.begin_episode();
    let mut action = agent.act(&obs, &mut streams.policy)?;
    let mut episode: Vec<Transition> = Vec::with_capacity(config.max_steps);
    let mut ret = 0.0;
    loop {
        let (next, reward, terminal) = env.step(action)?;
        let steps = episode.len() + 1;
        let done = terminal || steps >= config.max_steps;
        let reward = if done { env::shape_terminal_reward(steps, config.max_steps, reward) } else { reward };
        ret += reward;
        episode.push(Transition {
            s: obs,
            a: action,
            s_next: next.clone(),
            a_next: action,
            r: reward,
            terminal,
        });

        if steps.is_multiple_of(config.train_every) {
            let batch = buffer.sample_minibatch(config.minibatch, &mut streams.sampling)?;
            agent.train_step(&batch)?;
        }
        if done {
            break;
        }
        action = agent.act(&next, &mut streams.policy)?;
        episode.last_mut().expect("just pushed").a_next = action;
        obs = next;
    }
    let steps = episode.len();
    buffer.extend(segment_episode(&episode, config.series_len)?);
    agent.sync_target();
    Ok((steps, ret))
}

/// Runs every repeat with seed `config.seed + r` and concatenates the logs.
/// A failing run is recorded and the remaining runs continue.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let mut outcome = ExperimentOutcome::default();
    for run in 0..config.repeats {
        let run_seed = config.seed.wrapping_add(run as u64);
        match run_single(config, run, run_seed) {
            Ok((logs, failure, agent)) => {
                outcome.logs.extend(logs);
                outcome.failures.extend(failure);
                if config.snapshot {
                    outcome.snapshots.push((run, agent.snapshot_json()?));
                }
            }
            Err(e) => outcome.failures.push(RunFailure {
                run,
                episode: 0,
                message: e.to_string(),
            }),
        }
    }
    Ok(outcome)
}

fn run_single(config: &ExperimentConfig, run: usize, run_seed: u64) -> Result<(Vec<EpisodeLog>, Option<RunFailure>, Agent)> {
    let mut env = CartPole::new(config.task.observation_mode());
    let mut buffer = ReplayBuffer::new(config.capacity)?;
    let mut agent = Agent::build(config, run_seed)?;
    let mut streams = RunStreams {
        env: substream(run_seed, Stream::Env),
        policy: substream(run_seed, Stream::Policy),
        sampling: substream(run_seed, Stream::Sampling),
    };
    let mut warmup_rng = substream(run_seed, Stream::Warmup);
    warmup_collect(&mut env, &mut buffer, config, &mut streams.env, &mut warmup_rng)?;
    let (logs, failure) = run_training(&mut env, &mut agent, &mut buffer, config, &mut streams, run);
    Ok((logs, failure, agent))
}

/// Fixed-point decimal with at most six fractional digits, trailing zeros
/// trimmed but at least one fractional digit kept.
pub fn format_decimal(x: f64) -> String {
    let mut s = format!("{x:.6}");
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    if s == "-0.0" {
        s = "0.0".into();
    }
    s
}

pub fn raw_csv(logs: &[EpisodeLog]) -> String {
    let mut out = String::from("run,episode,steps,return\n");
    for l in logs {
        writeln!(out, "{},{},{},{}", l.run, l.episode, l.steps, format_decimal(l.ret)).expect("string write");
    }
    out
}

/// Writes the raw per-episode CSV.
pub fn emit_csv(logs: &[EpisodeLog], path: &Path) -> Result<()> {
    fs::write(path, raw_csv(logs)).map_err(|e| Error::io(path, e))
}

/// Per-episode mean/min/max of steps across runs, ordered by episode.
pub fn summarize(logs: &[EpisodeLog]) -> Result<Vec<SummaryRow>> {
    if logs.is_empty() {
        return Err(Error::Empty("summarize: logs"));
    }
    let mut by_episode: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for l in logs {
        by_episode.entry(l.episode).or_default().push(l.steps);
    }
    Ok(by_episode
        .into_iter()
        .map(|(episode, steps)| SummaryRow {
            episode,
            mean_steps: steps.iter().sum::<usize>() as f64 / steps.len() as f64,
            min_steps: *steps.iter().min().expect("non-empty"),
            max_steps: *steps.iter().max().expect("non-empty"),
        })
        .collect())
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("episode,mean_steps,min_steps,max_steps\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.episode, format_decimal(r.mean_steps), r.min_steps, r.max_steps)
            .expect("string write");
    }
    out
}

/// Mean steps over each run's last `window` episodes, averaged across runs.
pub fn tail_mean_steps(logs: &[EpisodeLog], window: usize) -> Option<f64> {
    let mut runs: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for l in logs {
        runs.entry(l.run).or_default().push(l.steps);
    }
    if runs.is_empty() || window == 0 {
        return None;
    }
    let per_run: Vec<f64> = runs
        .values()
        .map(|steps| {
            let tail = &steps[steps.len().saturating_sub(window)..];
            tail.iter().sum::<usize>() as f64 / tail.len() as f64
        })
        .collect();
    Some(per_run.iter().sum::<f64>() / per_run.len() as f64)
}

/// Writes `raw.csv`, `summary.csv`, `config.json` and any snapshots (and
/// `failures.json` when a run aborted) into `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    emit_csv(&outcome.logs, &dir.join("raw.csv"))?;
    let summary = if outcome.logs.is_empty() { Vec::new() } else { summarize(&outcome.logs)? };
    let path = dir.join("summary.csv");
    fs::write(&path, summary_csv(&summary)).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config)? + "\n").map_err(|e| Error::io(&path, e))?;
    for (run, snap) in &outcome.snapshots {
        let path = dir.join(format!("snapshot_run{run}.json"));
        fs::write(&path, serde_json::to_string(snap)?).map_err(|e| Error::io(&path, e))?;
    }
    if !outcome.failures.is_empty() {
        let path = dir.join("failures.json");
        fs::write(&path, serde_json::to_string_pretty(&outcome.failures)? + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
