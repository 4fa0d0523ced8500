use std::collections::HashMap;
use std::path::Path;

use candle_core::Tensor;
use sha2::{Digest, Sha256};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{load_tensors, save_tensors, Adam, ParamStore};

use super::{Agent, AgentConfig, IterationLog};

/// Trained agent with the configuration and log that produced it.
pub struct PolicySnapshot {
    pub agent: Agent,
    pub config: AgentConfig,
    pub history: Vec<IterationLog>,
}

/// Hex SHA-256 of the canonical JSON form of the config.
pub fn config_hash(config: &AgentConfig) -> Result<String> {
    let json = serde_json::to_string(config)?;
    Ok(Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

fn prefixed(out: &mut Vec<(String, Tensor)>, prefix: &str, store: &ParamStore) -> Result<()> {
    for (name, t) in store.tensors()? {
        out.push((format!("{prefix}/{name}"), t));
    }
    Ok(())
}

fn strip(all: &HashMap<String, Tensor>, prefix: &str) -> HashMap<String, Tensor> {
    let p = format!("{prefix}/");
    all.iter()
        .filter_map(|(k, v)| k.strip_prefix(&p).map(|n| (n.to_string(), v.clone())))
        .collect()
}

pub(super) fn save(path: &Path, agent: &Agent, config: &AgentConfig, history: &[IterationLog]) -> Result<()> {
    let mut tensors = Vec::new();
    prefixed(&mut tensors, "policy", &agent.policy.store)?;
    prefixed(&mut tensors, "value", &agent.value.store)?;
    prefixed(&mut tensors, "target", &agent.target.store)?;
    if let Some(q) = &agent.q {
        prefixed(&mut tensors, "q", &q.store)?;
    }
    let mut meta = HashMap::new();
    for (key, opt) in optimizers(agent) {
        let (t, steps) = opt.export(&format!("adam.{key}/"))?;
        tensors.extend(t);
        meta.insert(format!("adam.{key}"), steps);
    }
    meta.insert("steps".into(), agent.steps.to_string());
    meta.insert("config".into(), serde_json::to_string(config)?);
    meta.insert("config_hash".into(), config_hash(config)?);
    meta.insert("history".into(), serde_json::to_string(history)?);
    save_tensors(path, &tensors, meta)
}

fn optimizers(agent: &Agent) -> [(&'static str, &Adam); 4] {
    [
        ("pi1", &agent.opt_pi1),
        ("pi2", &agent.opt_pi2),
        ("value", &agent.opt_value),
        ("q", &agent.opt_q),
    ]
}

impl PolicySnapshot {
    /// Weights of the policy, value and target networks, optimizer state,
    /// step counter, config and its hash.
    pub fn save(&self, path: &Path) -> Result<()> {
        save(path, &self.agent, &self.config, &self.history)
    }

    /// Reads only the training configuration stored in a snapshot.
    pub fn read_config(path: &Path) -> Result<AgentConfig> {
        let (_, meta) = load_tensors(path)?;
        let text = meta.get("config").ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "metadata `config` missing".into(),
        })?;
        Ok(serde_json::from_str(text)?)
    }

    /// Restores a snapshot; `env` must use the stored environment config.
    pub fn load(path: &Path, env: &Environment) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let (tensors, meta) = load_tensors(path)?;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(format!("metadata `{k}` missing")));
        let config: AgentConfig = serde_json::from_str(&field("config")?)?;
        if field("config_hash")? != config_hash(&config)? {
            return Err(bad("config hash mismatch".into()));
        }
        if env.config != config.env {
            return Err(bad("environment config differs from the snapshot".into()));
        }
        let mut agent = Agent::new(env, &config.net, config.model_free, config.ema_rate, config.seed)?;
        agent.policy.store.assign(&strip(&tensors, "policy"))?;
        agent.value.store.assign(&strip(&tensors, "value"))?;
        agent.target.store.assign(&strip(&tensors, "target"))?;
        if let Some(q) = &agent.q {
            q.store.assign(&strip(&tensors, "q"))?;
        }
        for (key, opt) in [
            ("pi1", &mut agent.opt_pi1),
            ("pi2", &mut agent.opt_pi2),
            ("value", &mut agent.opt_value),
            ("q", &mut agent.opt_q),
        ] {
            opt.import(&format!("adam.{key}/"), &tensors, &field(&format!("adam.{key}"))?)?;
        }
        agent.steps = field("steps")?.parse().map_err(|_| bad("bad step counter".into()))?;
        let history = serde_json::from_str(&field("history")?)?;
        Ok(Self { agent, config, history })
    }
}
