use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ParamStore;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Moments {
    m: Tensor,
    v: Tensor,
    steps: u64,
}

/// Adam with per-parameter step counts, so that disjoint parameter groups
/// can be stepped independently from different losses.
pub struct Adam {
    pub config: AdamConfig,
    state: HashMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Updates every parameter of `store` accepted by `select` that has a
    /// gradient in `grads`. Parameters without a gradient are left untouched.
    pub fn step(
        &mut self,
        store: &ParamStore,
        grads: &GradStore,
        select: impl Fn(&str) -> bool,
    ) -> Result<usize> {
        let c = self.config;
        let mut updated = 0;
        for (name, var) in store.iter() {
            if !select(name) {
                continue;
            }
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let entry = match self.state.remove(name) {
                Some(s) => s,
                None => Moments {
                    m: g.zeros_like()?,
                    v: g.zeros_like()?,
                    steps: 0,
                },
            };
            let steps = entry.steps + 1;
            let m = ((entry.m * c.beta1)? + (&g * (1.0 - c.beta1))?)?;
            let v = ((entry.v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            let m_hat = (&m / (1.0 - c.beta1.powi(steps as i32)))?;
            let v_hat = (&v / (1.0 - c.beta2.powi(steps as i32)))?;
            let delta = (m_hat / (v_hat.sqrt()? + c.eps)?)?;
            let next = (var.as_tensor().detach() - (delta * c.lr)?)?;
            var.set(&next)?;
            self.state.insert(name.clone(), Moments { m, v, steps });
            updated += 1;
        }
        Ok(updated)
    }

    /// Moment tensors under `{prefix}m.{name}` / `{prefix}v.{name}` and the
    /// step counts as a JSON map.
    pub fn export(&self, prefix: &str) -> Result<(Vec<(String, Tensor)>, String)> {
        let mut tensors = Vec::new();
        let mut steps = std::collections::BTreeMap::new();
        let mut names: Vec<&String> = self.state.keys().collect();
        names.sort();
        for name in names {
            let s = &self.state[name];
            tensors.push((format!("{prefix}m.{name}"), s.m.clone()));
            tensors.push((format!("{prefix}v.{name}"), s.v.clone()));
            steps.insert(name.clone(), s.steps);
        }
        Ok((tensors, serde_json::to_string(&steps)?))
    }

    pub fn import(
        &mut self,
        prefix: &str,
        tensors: &HashMap<String, Tensor>,
        steps_json: &str,
    ) -> Result<()> {
        let steps: HashMap<String, u64> = serde_json::from_str(steps_json)?;
        self.state.clear();
        for (name, n) in steps {
            let get = |kind: &str| {
                tensors
                    .get(&format!("{prefix}{kind}.{name}"))
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("optimizer state for {name} missing")))
            };
            self.state.insert(
                name.clone(),
                Moments {
                    m: get("m")?,
                    v: get("v")?,
                    steps: n,
                },
            );
        }
        Ok(())
    }
}
