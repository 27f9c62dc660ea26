//! Fixtures shared by the benchmarks: a warmed-up replay buffer and
//! freshly built agents at default sizes.

use esnrls::harness::{warmup_collect, Agent};
use esnrls::rng::{substream, Stream};
use esnrls::{CartPole, ExperimentConfig, ReplayBuffer};

/// Replay buffer filled by `episodes` random-policy episodes.
pub fn warm_buffer(config: &ExperimentConfig, episodes: usize) -> ReplayBuffer {
    let config = ExperimentConfig {
        warmup_episodes: episodes,
        ..config.clone()
    };
    let mut env = CartPole::new(config.task.observation_mode());
    let mut buffer = ReplayBuffer::new(config.capacity).expect("valid capacity");
    warmup_collect(
        &mut env,
        &mut buffer,
        &config,
        &mut substream(config.seed, Stream::Env),
        &mut substream(config.seed, Stream::Warmup),
    )
    .expect("warm-up");
    buffer
}

pub fn agent(config: &ExperimentConfig) -> Agent {
    Agent::build(config, config.seed).expect("agent")
}
