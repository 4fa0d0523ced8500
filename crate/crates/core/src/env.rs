//! The reconstruction MDP. A state is a batch of ADMM states together with
//! their problems; an action either stops an episode or supplies `m`
//! `(σ, μ)` pairs that drive the next block of iterations.
//!
//! Observation planes, in order:
//!
//! | planes | content              |
//! |--------|----------------------|
//! | 0, 1   | `x_t` (re, im)       |
//! | 2, 3   | `z_t` (re, im)       |
//! | 4, 5   | `u_t` (re, im)       |
//! | 6, 7   | `x_0` (re, im)       |
//! | 8      | `σ_n / 255` constant |
//! | 9      | `t / N` constant     |

use std::io::Write;
use std::sync::Arc;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserHandle, SIGMA_MAX};
use crate::engine::{run_block, OptState, ParamBlock};
use crate::error::{Error, Result};
use crate::field::{indices, scalars, Field};
use crate::forward::{psnr, synthesize_measurement, MeasurementModel, Observation, Physics};

/// Number of observation planes for complex iterates.
pub const OBS_PLANES: usize = 10;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Inner iterations per action, `m`.
    pub block_len: usize,
    /// Maximum number of blocks per episode, `N`.
    pub max_steps: usize,
    /// Penalty charged for every block that runs.
    pub eta: f64,
    pub gamma: f64,
    /// One `(σ, μ)` pair for the whole block instead of `m` pairs.
    pub shared_pair: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            block_len: 5,
            max_steps: 6,
            eta: 0.05,
            gamma: 0.99,
            shared_pair: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_len == 0 || self.max_steps == 0 {
            return Err(Error::Config("block_len and max_steps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !self.eta.is_finite() {
            return Err(Error::Config("eta must be finite".into()));
        }
        Ok(())
    }

    /// Width of the raw parameter vector the policy emits.
    pub fn action_dim(&self) -> usize {
        if self.shared_pair {
            2
        } else {
            2 * self.block_len
        }
    }

    pub fn max_iterations(&self) -> usize {
        self.block_len * self.max_steps
    }
}

/// A single reconstruction problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: MeasurementModel,
    /// Ground truth `[1, H, W]`, needed for rewards and synthesis.
    pub x_gt: Option<Field>,
    /// Measured data; synthesized from `x_gt` at reset when absent.
    pub observation: Option<Observation>,
}

impl Problem {
    /// Problem whose measurement is synthesized from a clean `[H, W]` image.
    pub fn synthetic(image: &Tensor, model: MeasurementModel) -> Result<Self> {
        let (h, w) = image.dims2()?;
        if (h, w) != model.shape() {
            let (mh, mw) = model.shape();
            return Err(Error::shape(&[mh, mw], &[h, w]));
        }
        Ok(Self {
            model,
            x_gt: Some(Field::from_real(image.unsqueeze(0)?)?),
            observation: None,
        })
    }

    /// Problem with real data and no ground truth.
    pub fn measured(observation: Observation, model: MeasurementModel) -> Self {
        Self {
            model,
            x_gt: None,
            observation: Some(observation),
        }
    }
}

/// A batch of episodes.
#[derive(Clone, Debug)]
pub struct EnvState {
    pub opt: OptState,
    pub obs: Observation,
    pub physics: Physics,
    /// `σ_n / 255` per item, `[B]`.
    pub noise: Tensor,
    pub x_init: Field,
    pub x_gt: Option<Field>,
    /// Blocks executed so far.
    pub t: Vec<usize>,
    pub done: Vec<bool>,
}

impl EnvState {
    pub fn batch(&self) -> usize {
        self.t.len()
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let it = indices(idx)?;
        Ok(Self {
            opt: self.opt.index_select(&it)?,
            obs: self.obs.index_select(&it)?,
            physics: self.physics.index_select(&it)?,
            noise: self.noise.index_select(&it, 0)?,
            x_init: self.x_init.index_select(&it, 0)?,
            x_gt: self.x_gt.as_ref().map(|g| g.index_select(&it, 0)).transpose()?,
            t: idx.iter().map(|&i| self.t[i]).collect(),
            done: idx.iter().map(|&i| self.done[i]).collect(),
        })
    }

    /// Concatenates batches. Ground truth survives only if every part has it.
    pub fn stack(items: &[&EnvState]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("state list"));
        }
        let x_gt = if items.iter().all(|s| s.x_gt.is_some()) {
            let g: Vec<&Field> = items.iter().filter_map(|s| s.x_gt.as_ref()).collect();
            Some(Field::cat(&g, 0)?)
        } else {
            None
        };
        let inits: Vec<&Field> = items.iter().map(|s| &s.x_init).collect();
        let noise: Vec<&Tensor> = items.iter().map(|s| &s.noise).collect();
        Ok(Self {
            opt: OptState::cat(&items.iter().map(|s| &s.opt).collect::<Vec<_>>())?,
            obs: Observation::cat(&items.iter().map(|s| &s.obs).collect::<Vec<_>>())?,
            physics: Physics::cat(&items.iter().map(|s| &s.physics).collect::<Vec<_>>())?,
            noise: Tensor::cat(&noise, 0)?,
            x_init: Field::cat(&inits, 0)?,
            x_gt,
            t: items.iter().flat_map(|s| s.t.iter().copied()).collect(),
            done: items.iter().flat_map(|s| s.done.iter().copied()).collect(),
        })
    }

    /// Single-item states.
    pub fn split(&self) -> Result<Vec<Self>> {
        (0..self.batch()).map(|i| self.select(&[i])).collect()
    }

    pub fn detach(&self) -> Self {
        Self {
            opt: self.opt.detach(),
            x_gt: self.x_gt.as_ref().map(Field::detach),
            ..self.clone()
        }
    }

    /// Current reconstruction.
    pub fn image(&self) -> &Field {
        &self.opt.x
    }

    /// `ζ(s)` per item.
    pub fn psnr(&self) -> Result<Tensor> {
        let gt = self.x_gt.as_ref().ok_or(Error::MissingGroundTruth("rewards"))?;
        psnr(&self.opt.x, gt)
    }
}

/// Termination flags and a decoded parameter block for a batch.
#[derive(Clone, Debug)]
pub struct Action {
    pub terminate: Vec<bool>,
    pub params: ParamBlock,
}

impl Action {
    /// Decodes raw policy outputs `[B, action_dim]` in `(0, 1]`:
    /// `σ_j = raw_j · 50/255`, `μ_j = raw_{m+j}`. In shared-pair mode the
    /// two entries are repeated over the block.
    pub fn decode(terminate: Vec<bool>, raw: &Tensor, config: &EnvConfig) -> Result<Self> {
        Ok(Self {
            params: decode_params(raw, config)?,
            terminate,
        })
    }
}

pub fn decode_params(raw: &Tensor, config: &EnvConfig) -> Result<ParamBlock> {
    let (b, d) = raw.dims2()?;
    if d != config.action_dim() {
        return Err(Error::shape(&[b, config.action_dim()], &[b, d]));
    }
    let values = raw.flatten_all()?.to_vec1::<f64>()?;
    if let Some(v) = values.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::invalid(format!("raw action {v} outside (0, 1]")));
    }
    let m = config.block_len;
    let half = d / 2;
    let (s, u) = (raw.narrow(1, 0, half)?, raw.narrow(1, half, half)?);
    let (s, u) = if config.shared_pair {
        (s.repeat((1, m))?, u.repeat((1, m))?)
    } else {
        (s, u)
    };
    ParamBlock::new(s.affine(SIGMA_MAX, 0.0)?, u)
}

/// Result of [`Environment::step`].
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: EnvState,
    /// `[B]`, differentiable in the decoded parameters of continuing items.
    pub reward: Tensor,
    pub done: Vec<bool>,
    /// Items that stopped by choice this step.
    pub terminated: Vec<bool>,
}

pub struct Environment {
    pub config: EnvConfig,
    pub prior: DenoiserHandle,
}

impl Environment {
    pub fn new(config: EnvConfig, prior: DenoiserHandle) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, prior })
    }

    pub fn with_prior<D: Denoiser + 'static>(config: EnvConfig, prior: D) -> Result<Self> {
        Self::new(config, Arc::new(prior))
    }

    /// Starts one episode per problem; see [`initial_state`].
    pub fn reset(&self, problems: &[Problem], seeds: &[u64]) -> Result<EnvState> {
        initial_state(problems, seeds)
    }

    /// Observation tensor `[B, 10, H, W]`; see the module docs for the layout.
    pub fn observe(&self, state: &EnvState) -> Result<Tensor> {
        let b = state.batch();
        let (h, w) = state.opt.x.hw();
        let n = self.config.max_steps as f64;
        let t: Vec<f64> = state.t.iter().map(|&t| t as f64 / n).collect();
        let plane = |v: &Tensor| -> Result<Tensor> {
            Ok(v.reshape((b, 1, 1, 1))?.broadcast_as((b, 1, h, w))?.contiguous()?)
        };
        let o = &state.opt;
        let mut planes = Vec::with_capacity(OBS_PLANES);
        for f in [&o.x, &o.z, &o.u, &state.x_init] {
            planes.push(f.re.unsqueeze(1)?);
            planes.push(f.im.unsqueeze(1)?);
        }
        planes.push(plane(&state.noise)?);
        planes.push(plane(&scalars(&t)?)?);
        Ok(Tensor::cat(&planes, 1)?)
    }

    /// Advances every item. Items asking to terminate at `t ≥ 1` stop with
    /// reward 0 and an unchanged state; a request at `t = 0` is ignored so
    /// that at least one block always runs. The rest run one block and earn
    /// `ζ(s') − ζ(s) − η`.
    pub fn step(&self, state: &EnvState, action: &Action) -> Result<StepOutcome> {
        let b = state.batch();
        if action.terminate.len() != b || action.params.batch() != b {
            return Err(Error::shape(&[b], &[action.terminate.len()]));
        }
        if action.params.len() != self.config.block_len {
            return Err(Error::shape(&[self.config.block_len], &[action.params.len()]));
        }
        if state.done.iter().any(|&d| d) {
            return Err(Error::EpisodeDone);
        }
        if state.t.iter().any(|&t| t >= self.config.max_steps) {
            return Err(Error::EpisodeDone);
        }
        let stop: Vec<bool> = (0..b).map(|i| action.terminate[i] && state.t[i] >= 1).collect();
        let go: Vec<usize> = (0..b).filter(|&i| !stop[i]).collect();
        let halt: Vec<usize> = (0..b).filter(|&i| stop[i]).collect();

        let (next, reward) = if halt.is_empty() {
            self.transition(state, &action.params)?
        } else if go.is_empty() {
            (state.clone(), Tensor::zeros(b, crate::field::DTYPE, &crate::field::DEVICE)?)
        } else {
            let gi = indices(&go)?;
            let params = ParamBlock::new(
                action.params.sigmas().index_select(&gi, 0)?,
                action.params.mus().index_select(&gi, 0)?,
            )?;
            let (moved, r) = self.transition(&state.select(&go)?, &params)?;
            let kept = state.select(&halt)?;
            // Undo the go/halt ordering.
            let mut inverse = vec![0usize; b];
            for (pos, &i) in go.iter().chain(halt.iter()).enumerate() {
                inverse[i] = pos;
            }
            let merged = EnvState::stack(&[&moved, &kept])?.select(&inverse)?;
            let zeros = Tensor::zeros(halt.len(), crate::field::DTYPE, &crate::field::DEVICE)?;
            let r = Tensor::cat(&[&r, &zeros], 0)?.index_select(&indices(&inverse)?, 0)?;
            (merged, r)
        };
        let mut next = next;
        for i in 0..b {
            next.done[i] = stop[i] || next.t[i] >= self.config.max_steps;
        }
        Ok(StepOutcome {
            done: next.done.clone(),
            state: next,
            reward,
            terminated: stop,
        })
    }

    /// `p(s, a)` and `r(s, a)` for every item, ignoring termination: one
    /// block of iterations and `ζ(s') − ζ(s) − η` (zero without ground
    /// truth). Differentiable in `params`.
    pub fn transition(&self, state: &EnvState, params: &ParamBlock) -> Result<(EnvState, Tensor)> {
        let opt = run_block(&state.opt, params, &state.obs, &state.physics, self.prior.as_ref())?;
        let next = EnvState {
            opt,
            t: state.t.iter().map(|t| t + 1).collect(),
            ..state.clone()
        };
        let reward = match &state.x_gt {
            Some(_) => (next.psnr()? - state.psnr()?.detach())?.affine(1.0, -self.config.eta)?,
            None => Tensor::zeros(state.batch(), crate::field::DTYPE, &crate::field::DEVICE)?,
        };
        Ok((next, reward))
    }
}

/// Starts one episode per problem. `seeds[i]` drives the measurement
/// noise of problem `i`.
pub fn initial_state(problems: &[Problem], seeds: &[u64]) -> Result<EnvState> {
    if problems.is_empty() {
        return Err(Error::Empty("problem list"));
    }
    if seeds.len() != problems.len() {
        return Err(Error::shape(&[problems.len()], &[seeds.len()]));
    }
    let mut observations = Vec::with_capacity(problems.len());
    for (p, &seed) in problems.iter().zip(seeds) {
        let o = match (&p.observation, &p.x_gt) {
            (Some(o), _) => o.clone(),
            (None, Some(gt)) => synthesize_measurement(gt, &p.model, seed)?,
            (None, None) => return Err(Error::MissingGroundTruth("synthesizing a measurement")),
        };
        observations.push(o);
    }
    let obs = Observation::cat(&observations.iter().collect::<Vec<_>>())?;
    let models: Vec<&MeasurementModel> = problems.iter().map(|p| &p.model).collect();
    let physics = Physics::stack(&models)?;
    let opt = OptState::initial(&obs, &physics)?;
    let x_gt = if problems.iter().all(|p| p.x_gt.is_some()) {
        let g: Vec<&Field> = problems.iter().filter_map(|p| p.x_gt.as_ref()).collect();
        Some(Field::cat(&g, 0)?)
    } else {
        None
    };
    let noise: Vec<f64> = problems.iter().map(|p| p.model.observed_noise()).collect();
    Ok(EnvState {
        x_init: opt.x.clone(),
        opt,
        obs,
        physics,
        noise: scalars(&noise)?,
        x_gt,
        t: vec![0; problems.len()],
        done: vec![false; problems.len()],
    })
}

/// Summary of one transition of one episode, for logs and replay.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TransitionRecord {
    pub episode: usize,
    pub t: usize,
    pub terminate: bool,
    pub sigmas: Vec<f64>,
    pub mus: Vec<f64>,
    pub reward: f64,
    pub psnr_before: Option<f64>,
    pub psnr_after: Option<f64>,
    pub iterations: usize,
    pub done: bool,
}

impl TransitionRecord {
    /// One record per item of a batched step.
    pub fn from_step(
        before: &EnvState,
        action: &Action,
        outcome: &StepOutcome,
        episode_offset: usize,
    ) -> Result<Vec<Self>> {
        let sig = action.params.sigmas().to_vec2::<f64>()?;
        let mus = action.params.mus().to_vec2::<f64>()?;
        let reward = outcome.reward.to_vec1::<f64>()?;
        let (pb, pa) = match before.x_gt {
            Some(_) => (
                before.psnr()?.to_vec1::<f64>()?.into_iter().map(Some).collect(),
                outcome.state.psnr()?.to_vec1::<f64>()?.into_iter().map(Some).collect(),
            ),
            None => (vec![None; before.batch()], vec![None; before.batch()]),
        };
        Ok((0..before.batch())
            .map(|i| Self {
                episode: episode_offset + i,
                t: before.t[i],
                terminate: outcome.terminated[i],
                sigmas: sig[i].clone(),
                mus: mus[i].clone(),
                reward: reward[i],
                psnr_before: pb[i],
                psnr_after: pa[i],
                iterations: outcome.state.opt.k[i],
                done: outcome.done[i],
            })
            .collect())
    }
}

/// Writes records as JSON lines.
pub fn write_trace<W: Write>(mut out: W, records: &[TransitionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `Σ_t γ^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}
