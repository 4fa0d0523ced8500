//! Actor-critic agent. π1 (termination) is trained with the likelihood-ratio
//! gradient and a one-step TD advantage; π2 (parameters) is trained by
//! backpropagating `r(s, a) + γ V_φ(p(s, a))` through the environment.

mod buffer;
mod infer;
mod nets;
mod snapshot;
mod train;

pub use buffer::StateBuffer;
pub use infer::{reconstruct, Reconstruction};
pub use nets::{log_softmax, sigmoid, NetConfig, PolicyNet, PolicyOutputs, QNet, Trunk, ValueNet, RAW_FLOOR};
pub use snapshot::{config_hash, PolicySnapshot};
pub use train::{train_policy, AgentConfig, IterationLog};

use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{decode_params, EnvState, Environment, OBS_PLANES};
use crate::error::{Error, Result};
use crate::field::{scalars, DEVICE, DTYPE};
use crate::nn::{Adam, AdamConfig};

/// Actions of the termination sub-policy.
pub const CONTINUE: usize = 0;
pub const TERMINATE: usize = 1;

/// Likelihood-ratio loss for π1: `−(1/B) Σ_i mask_i · log π1(a_i|s_i) · Â_i`.
/// Its gradient is the negated Monte Carlo estimate of `∇θ1 J`.
pub fn termination_policy_loss(
    log_probs: &Tensor,
    actions: &[usize],
    advantages: &[f64],
    mask: &[bool],
) -> Result<Tensor> {
    let (b, k) = log_probs.dims2()?;
    if actions.len() != b || advantages.len() != b || mask.len() != b {
        return Err(Error::shape(&[b], &[actions.len()]));
    }
    if b == 0 {
        return Err(Error::Empty("batch"));
    }
    // One-hot weights carry both the chosen action and its advantage.
    let mut w = vec![0.0; b * k];
    for i in 0..b {
        if mask[i] {
            w[i * k + actions[i]] = advantages[i];
        }
    }
    let w = Tensor::from_vec(w, (b, k), &DEVICE)?;
    Ok((log_probs * w)?.sum_all()?.affine(-1.0 / b as f64, 0.0)?)
}

/// `½ mean (y − v)²`.
pub fn value_loss(v: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok((v - target)?.sqr()?.mean_all()?.affine(0.5, 0.0)?)
}

/// `1 − [t + 1 = N]`: whether the successor state can still act.
fn nonterminal_next(env: &Environment, state: &EnvState) -> Result<Tensor> {
    let v: Vec<f64> = state
        .t
        .iter()
        .map(|&t| if t + 1 >= env.config.max_steps { 0.0 } else { 1.0 })
        .collect();
    scalars(&v)
}

/// `Q(s, a) ≈ r(s, a) + γ V(p(s, a))` for raw parameter outputs, keeping the
/// autodiff graph through the transition, the reward and `value`.
pub fn model_based_q(env: &Environment, value: &ValueNet, state: &EnvState, raw: &Tensor) -> Result<Tensor> {
    let params = decode_params(raw, &env.config)?;
    let (next, reward) = env.transition(state, &params)?;
    let v_next = value.forward(&env.observe(&next)?)?;
    let bootstrap = (v_next * nonterminal_next(env, state)?)?.affine(env.config.gamma, 0.0)?;
    Ok((reward + bootstrap)?)
}

/// Which updates a call to [`Agent::update`] applies.
#[derive(Clone, Copy, Debug)]
pub struct Updates {
    pub value: bool,
    pub pi1: bool,
    pub pi2: bool,
}

impl Updates {
    pub const ALL: Self = Self {
        value: true,
        pi1: true,
        pi2: true,
    };
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct UpdateStats {
    pub value_loss: f64,
    pub pi1_loss: f64,
    /// Mean `Q(s, π2(s))` before the step.
    pub pi2_objective: f64,
    pub mean_reward: f64,
    pub terminate_rate: f64,
}

pub struct Agent {
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub target: ValueNet,
    /// Present when π2 is trained model-free.
    pub q: Option<QNet>,
    pub opt_pi1: Adam,
    pub opt_pi2: Adam,
    pub opt_value: Adam,
    pub opt_q: Adam,
    pub ema_rate: f64,
    /// Gradient steps taken.
    pub steps: u64,
}

impl Agent {
    pub fn new(env: &Environment, net: &NetConfig, model_free: bool, ema_rate: f64, seed: u64) -> Result<Self> {
        let d = env.config.action_dim();
        let policy = PolicyNet::new(OBS_PLANES, d, net, seed)?;
        let value = ValueNet::new(OBS_PLANES, net, seed.wrapping_add(1))?;
        let target = ValueNet::new(OBS_PLANES, net, seed.wrapping_add(1))?;
        target.store.copy_from(&value.store)?;
        let q = if model_free {
            Some(QNet::new(OBS_PLANES, d, net, seed.wrapping_add(2))?)
        } else {
            None
        };
        Ok(Self {
            policy,
            value,
            target,
            q,
            opt_pi1: Adam::new(AdamConfig::default()),
            opt_pi2: Adam::new(AdamConfig::default()),
            opt_value: Adam::new(AdamConfig::default()),
            opt_q: Adam::new(AdamConfig::default()),
            ema_rate,
            steps: 0,
        })
    }

    pub fn set_learning_rates(&mut self, policy: f64, value: f64) {
        self.opt_pi1.set_lr(policy);
        self.opt_pi2.set_lr(policy);
        self.opt_value.set_lr(value);
        self.opt_q.set_lr(value);
    }

    /// Samples `a1 ~ π1(·|s)`; continuation is forced at `t = 0`.
    pub fn sample_termination(&self, out: &PolicyOutputs, state: &EnvState, rng: &mut impl Rng) -> Result<Vec<usize>> {
        let p = out.p_terminate()?;
        Ok(p.iter()
            .zip(&state.t)
            .map(|(&p, &t)| {
                let u: f64 = rng.random();
                if t > 0 && u < p {
                    TERMINATE
                } else {
                    CONTINUE
                }
            })
            .collect())
    }

    /// One gradient step on a batch of buffered states: a single batched
    /// transition under the current policy feeds the value regression, the
    /// π1 likelihood-ratio update and the π2 model-based update. Every
    /// gradient is computed before any weight changes.
    pub fn update(&mut self, env: &Environment, state: &EnvState, which: Updates, rng: &mut impl Rng) -> Result<UpdateStats> {
        if state.batch() == 0 {
            return Err(Error::Empty("batch"));
        }
        if state.x_gt.is_none() {
            return Err(Error::MissingGroundTruth("training updates"));
        }
        let state = state.detach();
        let b = state.batch();
        let obs = env.observe(&state)?;
        let out = self.policy.forward(&obs)?;
        let a1 = self.sample_termination(&out, &state, rng)?;

        // π2 drives the transition; in model-free mode the environment is
        // treated as a black box.
        let raw = if self.q.is_some() || !which.pi2 {
            out.raw_params.detach()
        } else {
            out.raw_params.clone()
        };
        let params = decode_params(&raw, &env.config)?;
        let (next, reward) = env.transition(&state, &params)?;
        let next_obs = env.observe(&next)?;
        let nonterm = nonterminal_next(env, &state)?;
        let gamma = env.config.gamma;

        let mut stats = UpdateStats {
            mean_reward: reward.mean_all()?.to_scalar()?,
            terminate_rate: a1.iter().filter(|&&a| a == TERMINATE).count() as f64 / b as f64,
            ..Default::default()
        };

        let grads_pi2 = if which.pi2 {
            let q = match &self.q {
                None => {
                    let v_next = self.value.forward(&next_obs)?;
                    (&reward + (v_next * &nonterm)?.affine(gamma, 0.0)?)?
                }
                Some(qnet) => qnet.forward(&obs, &out.raw_params)?,
            };
            let objective = q.mean_all()?;
            stats.pi2_objective = objective.to_scalar()?;
            Some(objective.neg()?.backward()?)
        } else {
            None
        };

        // Targets: 0 after termination, otherwise the bootstrapped return.
        let v_hat_next = self.target.forward(&next_obs.detach())?;
        let y_cont = (reward.detach() + (v_hat_next * &nonterm)?.affine(gamma, 0.0)?)?;
        let stop = Tensor::from_vec(
            a1.iter().map(|&a| (a == TERMINATE) as u8).collect::<Vec<u8>>(),
            b,
            &DEVICE,
        )?;
        let y = stop.where_cond(&Tensor::zeros(b, DTYPE, &DEVICE)?, &y_cont)?;
        let v = self.value.forward(&obs)?;

        let grads_value = if which.value {
            let loss = value_loss(&v, &y)?;
            stats.value_loss = loss.to_scalar()?;
            Some(loss.backward()?)
        } else {
            None
        };

        let grads_q = match (&self.q, which.value) {
            (Some(qnet), true) => {
                let q = qnet.forward(&obs, &out.raw_params.detach())?;
                Some(value_loss(&q, &y_cont)?.backward()?)
            }
            _ => None,
        };

        let grads_pi1 = if which.pi1 {
            let adv = (&y - v.detach())?.to_vec1::<f64>()?;
            let mask: Vec<bool> = state.t.iter().map(|&t| t > 0).collect();
            let loss = termination_policy_loss(&out.log_probs, &a1, &adv, &mask)?;
            stats.pi1_loss = loss.to_scalar()?;
            Some(loss.backward()?)
        } else {
            None
        };

        if let Some(g) = &grads_pi2 {
            self.opt_pi2.step(&self.policy.store, g, PolicyNet::is_theta2)?;
        }
        if let Some(g) = &grads_pi1 {
            self.opt_pi1.step(&self.policy.store, g, PolicyNet::is_theta1)?;
        }
        if let Some(g) = &grads_value {
            self.opt_value.step(&self.value.store, g, |_| true)?;
        }
        if let (Some(g), Some(qnet)) = (&grads_q, &self.q) {
            self.opt_q.step(&qnet.store, g, |_| true)?;
        }
        self.steps += 1;
        Ok(stats)
    }

    pub fn value_update(&mut self, env: &Environment, state: &EnvState, rng: &mut impl Rng) -> Result<f64> {
        let which = Updates { value: true, pi1: false, pi2: false };
        Ok(self.update(env, state, which, rng)?.value_loss)
    }

    pub fn policy_update_pi1(&mut self, env: &Environment, state: &EnvState, rng: &mut impl Rng) -> Result<f64> {
        let which = Updates { value: false, pi1: true, pi2: false };
        Ok(self.update(env, state, which, rng)?.pi1_loss)
    }

    pub fn policy_update_pi2(&mut self, env: &Environment, state: &EnvState, rng: &mut impl Rng) -> Result<f64> {
        let which = Updates { value: false, pi1: false, pi2: true };
        Ok(self.update(env, state, which, rng)?.pi2_objective)
    }

    /// Moves the target network toward the value network.
    pub fn ema_update(&self) -> Result<()> {
        self.target.store.ema_toward(&self.value.store, self.ema_rate)
    }

    /// Full gradient step: all three updates, then the target EMA.
    pub fn gradient_step(&mut self, env: &Environment, state: &EnvState, rng: &mut impl Rng) -> Result<UpdateStats> {
        let stats = self.update(env, state, Updates::ALL, rng)?;
        self.ema_update()?;
        Ok(stats)
    }
}
