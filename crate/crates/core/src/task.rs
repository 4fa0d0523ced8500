use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Problem;
use crate::error::{Error, Result};
use crate::forward::{
    acceleration_to_rate, CdpModel, CsmriModel, KSpaceMask, MeasurementModel, SamplingPattern,
    DEFAULT_CDP_PATTERNS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Csmri,
    Pr,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Csmri => "csmri",
            Task::Pr => "pr",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csmri" => Ok(Task::Csmri),
            "pr" => Ok(Task::Pr),
            _ => Err(Error::invalid(format!("unknown task `{s}`, expected csmri or pr"))),
        }
    }
}

/// One cell of an experiment grid. `level` is the acceleration factor for
/// CS-MRI and the noise scale α for phase retrieval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub task: Task,
    pub level: f64,
    /// 8-bit noise std (CS-MRI only; 0 for phase retrieval).
    pub sigma_n: f64,
}

impl Setting {
    pub fn csmri(acceleration: f64, sigma_n: f64) -> Self {
        Self {
            task: Task::Csmri,
            level: acceleration,
            sigma_n,
        }
    }

    pub fn pr(alpha: f64) -> Self {
        Self {
            task: Task::Pr,
            level: alpha,
            sigma_n: 0.0,
        }
    }

    pub fn label(&self) -> String {
        match self.task {
            Task::Csmri => format!("x{}/{}", self.level, self.sigma_n),
            Task::Pr => format!("a{}", self.level),
        }
    }
}

/// Builds measurement models, caching masks per shape and acceleration.
#[derive(Clone, Debug)]
pub struct ModelFactory {
    pub pattern: SamplingPattern,
    pub mask_seed: u64,
    pub cdp_patterns: usize,
    masks: HashMap<(usize, usize, u64), KSpaceMask>,
}

impl Default for ModelFactory {
    fn default() -> Self {
        Self::new(SamplingPattern::Radial, 0, DEFAULT_CDP_PATTERNS)
    }
}

impl ModelFactory {
    pub fn new(pattern: SamplingPattern, mask_seed: u64, cdp_patterns: usize) -> Self {
        Self {
            pattern,
            mask_seed,
            cdp_patterns,
            masks: HashMap::new(),
        }
    }

    pub fn mask(&mut self, shape: (usize, usize), acceleration: f64) -> Result<KSpaceMask> {
        if !(acceleration >= 1.0) {
            return Err(Error::invalid(format!("acceleration must be >= 1, got {acceleration}")));
        }
        let key = (shape.0, shape.1, acceleration.to_bits());
        if let Some(m) = self.masks.get(&key) {
            return Ok(m.clone());
        }
        let m = KSpaceMask::generate(shape, self.pattern, acceleration_to_rate(acceleration), self.mask_seed)?;
        self.masks.insert(key, m.clone());
        Ok(m)
    }

    /// Model for `setting`; CDP patterns are drawn from `pattern_seed`.
    pub fn model(&mut self, shape: (usize, usize), setting: &Setting, pattern_seed: u64) -> Result<MeasurementModel> {
        Ok(match setting.task {
            Task::Csmri => MeasurementModel::Csmri(CsmriModel::new(self.mask(shape, setting.level)?, setting.sigma_n)?),
            Task::Pr => MeasurementModel::Cdp(CdpModel::random(shape, self.cdp_patterns, setting.level, pattern_seed)?),
        })
    }

    /// Synthetic problem for a clean `[H, W]` image.
    pub fn problem(&mut self, image: &Tensor, setting: &Setting, pattern_seed: u64) -> Result<Problem> {
        let (h, w) = image.dims2()?;
        let model = self.model((h, w), setting, pattern_seed)?;
        Problem::synthetic(image, model)
    }
}

/// Draws training problems: a random image under a random setting.
pub struct ProblemSampler {
    pub images: Vec<Tensor>,
    pub settings: Vec<Setting>,
    pub factory: ModelFactory,
}

impl ProblemSampler {
    pub fn new(images: Vec<Tensor>, settings: Vec<Setting>, factory: ModelFactory) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Empty("training images"));
        }
        if settings.is_empty() {
            return Err(Error::Empty("problem settings"));
        }
        Ok(Self { images, settings, factory })
    }

    /// `n` problems and their measurement seeds.
    pub fn sample(&mut self, n: usize, rng: &mut impl Rng) -> Result<(Vec<Problem>, Vec<u64>)> {
        let mut problems = Vec::with_capacity(n);
        let mut seeds = Vec::with_capacity(n);
        for _ in 0..n {
            let img = &self.images[rng.random_range(0..self.images.len())];
            let setting = self.settings[rng.random_range(0..self.settings.len())];
            let pattern_seed: u64 = rng.random();
            problems.push(self.factory.problem(img, &setting, pattern_seed)?);
            seeds.push(rng.random());
        }
        Ok((problems, seeds))
    }
}

/// Training mixtures: every acceleration × noise level, or every α.
pub fn csmri_settings(accelerations: &[f64], noise_levels: &[f64]) -> Vec<Setting> {
    accelerations
        .iter()
        .flat_map(|&a| noise_levels.iter().map(move |&s| Setting::csmri(a, s)))
        .collect()
}

pub fn pr_settings(alphas: &[f64]) -> Vec<Setting> {
    alphas.iter().map(|&a| Setting::pr(a)).collect()
}
