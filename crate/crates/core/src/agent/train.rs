use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvConfig, EnvState, Environment};
use crate::error::{Error, Result};
use crate::field::tensor_from_fn;
use crate::task::ProblemSampler;

use super::{Agent, NetConfig, PolicySnapshot, TERMINATE};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub env: EnvConfig,
    pub net: NetConfig,
    pub batch_size: usize,
    pub iterations: usize,
    pub grad_steps: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    /// Iteration from which the final learning rates apply.
    pub lr_decay_iteration: usize,
    pub policy_lr_final: f64,
    pub value_lr_final: f64,
    pub ema_rate: f64,
    /// Buffer capacity as a multiple of the batch size.
    pub buffer_factor: usize,
    /// Episodes advanced by one block per iteration during collection.
    pub live_episodes: usize,
    /// Iterations collected with random actions before any update.
    pub warmup_iterations: usize,
    /// Train π2 against a learned Q head with the environment detached.
    pub model_free: bool,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            net: NetConfig::default(),
            batch_size: 48,
            iterations: 1500,
            grad_steps: 10,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            lr_decay_iteration: 1000,
            policy_lr_final: 1e-4,
            value_lr_final: 3e-4,
            ema_rate: 0.005,
            buffer_factor: 10,
            live_episodes: 48,
            warmup_iterations: 10,
            model_free: false,
            seed: 0,
            checkpoint_every: 100,
            checkpoint_dir: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.net.validate()?;
        if self.batch_size == 0 || self.live_episodes == 0 || self.buffer_factor == 0 {
            return Err(Error::Config("batch_size, live_episodes and buffer_factor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_rate) {
            return Err(Error::Config(format!("ema_rate must lie in [0, 1], got {}", self.ema_rate)));
        }
        Ok(())
    }

    /// `(policy, value)` learning rates at `iteration`.
    pub fn learning_rates(&self, iteration: usize) -> (f64, f64) {
        if iteration >= self.lr_decay_iteration {
            (self.policy_lr_final, self.value_lr_final)
        } else {
            (self.policy_lr, self.value_lr)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Mean reward of the collection step.
    pub mean_reward: f64,
    /// Mean value loss over the iteration's gradient steps.
    pub value_loss: f64,
    /// Mean length, in blocks, of episodes that finished this iteration
    /// (`None` if none did).
    pub mean_episode_length: Option<f64>,
}

/// Collection state: a batch of ongoing episodes.
struct Collector {
    live: Option<EnvState>,
}

impl Collector {
    fn top_up(&mut self, env: &Environment, sampler: &mut ProblemSampler, want: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let have = self.live.as_ref().map_or(0, |s| s.batch());
        if have >= want {
            return Ok(());
        }
        let (problems, seeds) = sampler.sample(want - have, rng)?;
        let fresh = env.reset(&problems, &seeds)?;
        self.live = Some(match self.live.take() {
            Some(s) => EnvState::stack(&[&s, &fresh])?,
            None => fresh,
        });
        Ok(())
    }
}

/// Trains π and V. Each iteration advances the live episodes by one block
/// (random actions during warm-up), stores the visited states, then takes
/// `grad_steps` gradient steps on batches drawn from the buffer.
pub fn train_policy(
    env: &Environment,
    sampler: &mut ProblemSampler,
    config: &AgentConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<PolicySnapshot> {
    config.validate()?;
    if env.config != config.env {
        return Err(Error::Config("environment config differs from the training config".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent = Agent::new(env, &config.net, config.model_free, config.ema_rate, config.seed)?;
    let mut buffer = super::StateBuffer::new(config.buffer_factor * config.batch_size)?;
    let mut collector = Collector { live: None };
    let mut history = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let (lr_p, lr_v) = config.learning_rates(it);
        agent.set_learning_rates(lr_p, lr_v);

        collector.top_up(env, sampler, config.live_episodes, &mut rng)?;
        let live = collector.live.take().expect("topped up");
        buffer.push(&live)?;
        let action = if it < config.warmup_iterations {
            random_action(env, &live, &mut rng)?
        } else {
            let out = agent.policy.forward(&env.observe(&live)?)?;
            let a1 = agent.sample_termination(&out, &live, &mut rng)?;
            Action::decode(a1.iter().map(|&a| a == TERMINATE).collect(), &out.raw_params.detach(), &env.config)?
        };
        let outcome = env.step(&live, &action)?;
        let rewards = outcome.reward.to_vec1::<f64>()?;
        let stepped: Vec<f64> = (0..rewards.len()).filter(|&i| !outcome.terminated[i]).map(|i| rewards[i]).collect();
        let mean_reward = if stepped.is_empty() { 0.0 } else { stepped.iter().sum::<f64>() / stepped.len() as f64 };
        let finished: Vec<f64> = (0..live.batch())
            .filter(|&i| outcome.done[i])
            .map(|i| outcome.state.t[i] as f64)
            .collect();
        let keep: Vec<usize> = (0..live.batch()).filter(|&i| !outcome.done[i]).collect();
        collector.live = if keep.is_empty() { None } else { Some(outcome.state.detach().select(&keep)?) };

        let mut value_loss = 0.0;
        if it >= config.warmup_iterations {
            for _ in 0..config.grad_steps {
                let batch = buffer.sample(config.batch_size, &mut rng)?;
                value_loss += agent.gradient_step(env, &batch, &mut rng)?.value_loss;
            }
            value_loss /= config.grad_steps.max(1) as f64;
        }
        let record = IterationLog {
            iteration: it,
            mean_reward,
            value_loss,
            mean_episode_length: if finished.is_empty() {
                None
            } else {
                Some(finished.iter().sum::<f64>() / finished.len() as f64)
            },
        };
        log::info!(
            "iteration {it}: reward {:.4}, value loss {:.5}",
            record.mean_reward,
            record.value_loss
        );
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
        }
        history.push(record);

        if let Some(dir) = &config.checkpoint_dir {
            let last = it + 1 == config.iterations;
            if last || (config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0) {
                let path = dir.join(format!("policy_iter{:05}.safetensors", it + 1));
                super::snapshot::save(&path, &agent, config, &history)?;
            }
        }
    }
    Ok(PolicySnapshot {
        agent,
        config: config.clone(),
        history,
    })
}

/// Termination with probability 0.2 from `t ≥ 1`, parameters uniform.
fn random_action(env: &Environment, state: &EnvState, rng: &mut ChaCha8Rng) -> Result<Action> {
    let b = state.batch();
    let d = env.config.action_dim();
    let terminate: Vec<bool> = (0..b).map(|_| rng.random::<f64>() < 0.2).collect();
    let raw = tensor_from_fn(&[b, d], |_| rng.random_range(0.05..0.95))?;
    Action::decode(terminate, &raw, &env.config)
}
