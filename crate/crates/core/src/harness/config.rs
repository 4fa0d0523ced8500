use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::baselines::{mu_grid, sigma_grid, PolicySpec, FIXED_MU, FIXED_SIGMA, MAX_ITERATIONS};
use crate::denoiser::{DenoiserHandle, DenoiserTrainConfig, IdentityDenoiser, UNet};
use crate::error::{Error, Result};
use crate::forward::{SamplingPattern, DEFAULT_CDP_PATTERNS, PIXEL_SCALE};
use super::eval::EvalOptions;
use crate::task::{csmri_settings, pr_settings, ModelFactory, Setting, Task};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "PNP_OUTPUT_ROOT";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Test images for `eval`.
    pub test_dir: Option<PathBuf>,
    /// Training images for `train-policy`.
    pub train_dir: Option<PathBuf>,
    /// Clean images patches are cut from for `train-denoiser`.
    pub denoiser_dir: Option<PathBuf>,
    /// Square side images are center-cropped and resized to.
    pub image_size: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            test_dir: None,
            train_dir: None,
            denoiser_dir: None,
            image_size: Some(64),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub accelerations: Vec<f64>,
    /// CS-MRI noise levels, 8-bit units.
    pub noise_levels: Vec<f64>,
    pub alphas: Vec<f64>,
    pub pattern: SamplingPattern,
    pub mask_seed: u64,
    pub cdp_patterns: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            accelerations: vec![2.0, 4.0, 8.0],
            noise_levels: vec![15.0],
            alphas: vec![9.0, 27.0, 81.0],
            pattern: SamplingPattern::Radial,
            mask_seed: 0,
            cdp_patterns: DEFAULT_CDP_PATTERNS,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserRef {
    /// U-Net checkpoint; the identity prior is used when absent.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Strengths in 8-bit units.
    pub sigmas: Vec<f64>,
    pub mus: Vec<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            sigmas: sigma_grid().iter().map(|s| s * 255.0).collect(),
            mus: mu_grid(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub output_dir: PathBuf,
    /// Measurement-noise seeds; every record is repeated per seed.
    pub seeds: Vec<u64>,
    pub max_iterations: usize,
    /// Also report the optimal-early-stopping variant of every baseline.
    pub early_stop_variants: bool,
    /// Record wall-clock times; when off the column is 0 so outputs are
    /// byte-reproducible.
    pub timing: bool,
    pub data: DataConfig,
    pub problem: ProblemConfig,
    pub denoiser: DenoiserRef,
    pub search: SearchConfig,
    pub policies: Vec<PolicySpec>,
    pub denoiser_training: DenoiserTrainConfig,
    pub agent: AgentConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Csmri,
            output_dir: PathBuf::from("runs/default"),
            seeds: vec![0],
            max_iterations: MAX_ITERATIONS,
            early_stop_variants: false,
            timing: true,
            data: DataConfig::default(),
            problem: ProblemConfig::default(),
            denoiser: DenoiserRef::default(),
            search: SearchConfig::default(),
            policies: vec![PolicySpec::Fixed {
                sigma: FIXED_SIGMA * 255.0,
                mu: FIXED_MU,
            }],
            denoiser_training: DenoiserTrainConfig::default(),
            agent: AgentConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies a `dotted.key=value` override; the value is parsed as TOML
    /// and falls back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}` does not name a config table")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        *self = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Checks grids and referenced paths.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        if self.settings().is_empty() {
            return bad(format!("the {} problem grid is empty", self.task));
        }
        if self.search.sigmas.is_empty() || self.search.mus.is_empty() {
            return bad("search grids must not be empty".into());
        }
        if self.problem.accelerations.iter().any(|&a| !(a >= 1.0)) {
            return bad("accelerations must be >= 1".into());
        }
        for dir in [&self.data.test_dir, &self.data.train_dir, &self.data.denoiser_dir].into_iter().flatten() {
            if !dir.is_dir() {
                return bad(format!("directory {} does not exist", dir.display()));
            }
        }
        if let Some(c) = &self.denoiser.checkpoint {
            if !c.is_file() {
                return bad(format!("denoiser checkpoint {} does not exist", c.display()));
            }
        }
        for p in &self.policies {
            if let PolicySpec::Learned { checkpoint } = p {
                if !checkpoint.is_file() {
                    return bad(format!("policy checkpoint {} does not exist", checkpoint.display()));
                }
            }
        }
        self.agent.validate()?;
        Ok(())
    }

    pub fn settings(&self) -> Vec<Setting> {
        match self.task {
            Task::Csmri => csmri_settings(&self.problem.accelerations, &self.problem.noise_levels),
            Task::Pr => pr_settings(&self.problem.alphas),
        }
    }

    pub fn factory(&self) -> ModelFactory {
        ModelFactory::new(self.problem.pattern, self.problem.mask_seed, self.problem.cdp_patterns)
    }

    /// Output directory, relocated under `$PNP_OUTPUT_ROOT` when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if self.output_dir.is_relative() => Path::new(&root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Writes the full effective configuration next to the outputs.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.resolved.toml");
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}

impl ExperimentConfig {
    /// The configured prior; the identity when no checkpoint is set.
    pub fn prior(&self) -> Result<DenoiserHandle> {
        match &self.denoiser.checkpoint {
            Some(path) => Ok(Arc::new(UNet::load(path)?)),
            None => {
                log::warn!("no denoiser checkpoint configured, using the identity prior");
                Ok(Arc::new(IdentityDenoiser))
            }
        }
    }

    pub fn eval_options(&self, keep_images: bool) -> EvalOptions {
        EvalOptions {
            max_iterations: self.max_iterations,
            sigmas: self.search.sigmas.iter().map(|s| s / PIXEL_SCALE).collect(),
            mus: self.search.mus.clone(),
            early_stop_variants: self.early_stop_variants,
            timing: self.timing,
            keep_images,
        }
    }
}
