use candle_core::{Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Linear, ParamStore};

/// Lower bound on raw parameter outputs; keeps decoded penalties away from 0.
pub const RAW_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Channels of the stem and of each of the four stride-2 stages.
    pub widths: Vec<usize>,
    /// Width of the hidden fully-connected layer in every head.
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            widths: vec![32, 64, 128, 256],
            hidden: 256,
        }
    }
}

impl NetConfig {
    pub fn small() -> Self {
        Self {
            widths: vec![8, 16, 16, 32],
            hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 4 || self.widths.contains(&0) || self.hidden == 0 {
            return Err(Error::Config("network needs four positive stage widths and a hidden size".into()));
        }
        Ok(())
    }
}

/// `0.5 (tanh(x/2) + 1)`.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(0.5, 0.0)?.tanh()?.affine(0.5, 0.5)?)
}

/// Row-wise log-softmax of `[B, K]` logits.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let m = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

struct Stage {
    a: Conv2d,
    b: Conv2d,
    skip: Conv2d,
}

impl Stage {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.a.forward(x)?.relu()?;
        let h = self.b.forward(&h)?;
        Ok((h + self.skip.forward(x)?)?.relu()?)
    }
}

/// Residual feature extractor: stem, four stride-2 residual stages and
/// global average pooling, `[B, C, H, W] → [B, widths[3]]`.
pub struct Trunk {
    stem: Conv2d,
    stages: Vec<Stage>,
}

impl Trunk {
    pub fn new(store: &mut ParamStore, prefix: &str, c_in: usize, config: &NetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let w = &config.widths;
        let stem = Conv2d::new(store, &format!("{prefix}.stem"), c_in, w[0], 3, 1, 1.0, rng)?;
        let mut stages = Vec::with_capacity(4);
        let mut prev = w[0];
        for (i, &c) in w.iter().enumerate() {
            let n = format!("{prefix}.stage{i}");
            stages.push(Stage {
                a: Conv2d::new(store, &format!("{n}.a"), prev, c, 3, 2, 1.0, rng)?,
                b: Conv2d::new(store, &format!("{n}.b"), c, c, 3, 1, 0.5, rng)?,
                skip: Conv2d::new(store, &format!("{n}.skip"), prev, c, 1, 2, 1.0, rng)?,
            });
            prev = c;
        }
        Ok(Self { stem, stages })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.stem.forward(x)?.relu()?;
        for s in &self.stages {
            h = s.forward(&h)?;
        }
        Ok(h.mean(D::Minus1)?.mean(D::Minus1)?)
    }
}

/// Two fully-connected layers.
struct Head {
    hidden: Linear,
    out: Linear,
}

impl Head {
    fn new(store: &mut ParamStore, prefix: &str, d_in: usize, hidden: usize, d_out: usize, gain: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{prefix}.fc0"), d_in, hidden, 2f64.sqrt(), rng)?,
            out: Linear::new(store, &format!("{prefix}.fc1"), hidden, d_out, gain, rng)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.out.forward(&self.hidden.forward(x)?.relu()?)
    }
}

/// Outputs of the two sub-policies for a batch.
#[derive(Clone, Debug)]
pub struct PolicyOutputs {
    /// `[B, 2]` log-probabilities of {continue, terminate}.
    pub log_probs: Tensor,
    /// `[B, action_dim]` in `(0, 1]`.
    pub raw_params: Tensor,
}

impl PolicyOutputs {
    pub fn p_terminate(&self) -> Result<Vec<f64>> {
        Ok(self.log_probs.narrow(1, 1, 1)?.squeeze(1)?.exp()?.to_vec1()?)
    }
}

/// Parameter-name prefixes of the policy network.
pub const TRUNK: &str = "trunk";
pub const TERM_HEAD: &str = "term";
pub const PARAM_HEAD: &str = "param";

/// Shared trunk with a termination head (θ1) and a parameter head (θ2).
pub struct PolicyNet {
    pub store: ParamStore,
    trunk: Trunk,
    term: Head,
    param: Head,
}

impl PolicyNet {
    pub fn new(c_in: usize, action_dim: usize, config: &NetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, TRUNK, c_in, config, &mut rng)?;
        let f = config.widths[3];
        let term = Head::new(&mut store, TERM_HEAD, f, config.hidden, 2, 0.1, &mut rng)?;
        let param = Head::new(&mut store, PARAM_HEAD, f, config.hidden, action_dim, 0.1, &mut rng)?;
        Ok(Self { store, trunk, term, param })
    }

    pub fn forward(&self, obs: &Tensor) -> Result<PolicyOutputs> {
        let f = self.trunk.forward(obs)?;
        let log_probs = log_softmax(&self.term.forward(&f)?)?;
        let raw_params = sigmoid(&self.param.forward(&f)?)?.clamp(RAW_FLOOR, 1.0)?;
        Ok(PolicyOutputs { log_probs, raw_params })
    }

    /// θ1: the trunk and the termination head.
    pub fn is_theta1(name: &str) -> bool {
        name.starts_with(TRUNK) || name.starts_with(TERM_HEAD)
    }

    /// θ2: the trunk and the parameter head.
    pub fn is_theta2(name: &str) -> bool {
        name.starts_with(TRUNK) || name.starts_with(PARAM_HEAD)
    }
}

/// State-value network `V_φ(s)`.
pub struct ValueNet {
    pub store: ParamStore,
    trunk: Trunk,
    head: Head,
}

impl ValueNet {
    pub fn new(c_in: usize, config: &NetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, "value.trunk", c_in, config, &mut rng)?;
        let head = Head::new(&mut store, "value.head", config.widths[3], config.hidden, 1, 0.1, &mut rng)?;
        Ok(Self { store, trunk, head })
    }

    /// `[B]` value estimates.
    pub fn forward(&self, obs: &Tensor) -> Result<Tensor> {
        Ok(self.head.forward(&self.trunk.forward(obs)?)?.squeeze(1)?)
    }
}

/// Action-value network `Q_ψ(s, a2)` for model-free training of π2.
pub struct QNet {
    pub store: ParamStore,
    trunk: Trunk,
    head: Head,
}

impl QNet {
    pub fn new(c_in: usize, action_dim: usize, config: &NetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, "q.trunk", c_in, config, &mut rng)?;
        let d = config.widths[3] + action_dim;
        let head = Head::new(&mut store, "q.head", d, config.hidden, 1, 0.1, &mut rng)?;
        Ok(Self { store, trunk, head })
    }

    pub fn forward(&self, obs: &Tensor, raw_params: &Tensor) -> Result<Tensor> {
        let f = self.trunk.forward(obs)?;
        Ok(self.head.forward(&Tensor::cat(&[&f, raw_params], 1)?)?.squeeze(1)?)
    }
}
