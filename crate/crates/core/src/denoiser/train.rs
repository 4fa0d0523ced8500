use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{scalars, Field, DEVICE};
use crate::forward::{psnr_values, PIXEL_SCALE};
use crate::nn::{load_tensors, save_tensors, Adam, AdamConfig};

use super::{Denoiser, NoiseLevelMap, UNet, UNetConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epoch (0-based) from which the step size is halved.
    pub lr_halve_epoch: usize,
    /// Epoch from which the step size is `lr_final`.
    pub lr_final_epoch: usize,
    pub lr_final: f64,
    /// Training noise range in 8-bit units.
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub seed: u64,
    pub unet: UNetConfig,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-4,
            lr_halve_epoch: 30,
            lr_final_epoch: 40,
            lr_final: 1e-5,
            sigma_min: 1.0,
            sigma_max: 50.0,
            patch_size: 128,
            patch_stride: 32,
            seed: 0,
            unet: UNetConfig::default(),
            checkpoint_dir: None,
        }
    }
}

impl DenoiserTrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_final_epoch {
            self.lr_final
        } else if epoch >= self.lr_halve_epoch {
            self.lr * 0.5
        } else {
            self.lr
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patch_size == 0 || self.patch_stride == 0 {
            return Err(Error::Config("batch size, patch size and stride must be positive".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max >= self.sigma_min) {
            return Err(Error::Config("noise range must satisfy 0 < min <= max".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Overlapping square patches from `[H, W]` images, in raster order.
pub fn extract_patches(images: &[Tensor], size: usize, stride: usize) -> Result<Vec<Tensor>> {
    if stride == 0 {
        return Err(Error::invalid("patch stride must be positive"));
    }
    let mut out = Vec::new();
    for img in images {
        let (h, w) = img.dims2()?;
        if h < size || w < size {
            continue;
        }
        for y in (0..=h - size).step_by(stride) {
            for x in (0..=w - size).step_by(stride) {
                out.push(img.narrow(0, y, size)?.narrow(1, x, size)?.contiguous()?);
            }
        }
    }
    Ok(out)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Stateful trainer; one epoch at a time so runs can be checkpointed and resumed.
pub struct DenoiserTrainer {
    config: DenoiserTrainConfig,
    net: UNet,
    adam: Adam,
    next_epoch: usize,
    history: Vec<EpochRecord>,
}

impl DenoiserTrainer {
    pub fn new(config: DenoiserTrainConfig) -> Result<Self> {
        config.validate()?;
        let net = UNet::new(config.unet.clone(), config.seed)?;
        let adam = Adam::new(AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        });
        Ok(Self {
            config,
            net,
            adam,
            next_epoch: 0,
            history: Vec::new(),
        })
    }

    /// Restores weights, optimizer state and epoch counter from a checkpoint
    /// written by [`DenoiserTrainer::save_checkpoint`].
    pub fn resume(path: &Path) -> Result<Self> {
        let (net, tensors, meta) = UNet::load_trainable(path)?;
        let bad = |reason: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        let config: DenoiserTrainConfig =
            serde_json::from_str(meta.get("train_config").ok_or_else(|| bad("no train_config"))?)?;
        let history: Vec<EpochRecord> =
            serde_json::from_str(meta.get("history").ok_or_else(|| bad("no history"))?)?;
        let mut adam = Adam::new(AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        });
        adam.import(
            "adam.",
            &tensors,
            meta.get("adam_steps").ok_or_else(|| bad("no adam_steps"))?,
        )?;
        Ok(Self {
            next_epoch: history.len(),
            config,
            net,
            adam,
            history,
        })
    }

    pub fn config(&self) -> &DenoiserTrainConfig {
        &self.config
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    /// Weights in their current state, frozen for inference.
    pub fn denoiser(&self) -> Result<UNet> {
        self.net.frozen()
    }

    /// One pass over `patches` (each `[P, P]`, clean, in `[0, 1]`).
    pub fn train_epoch(&mut self, patches: &[Tensor]) -> Result<EpochRecord> {
        if patches.is_empty() {
            return Err(Error::Empty("patch corpus"));
        }
        let epoch = self.next_epoch;
        let lr = self.config.lr_at(epoch);
        self.adam.set_lr(lr);
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..patches.len()).collect();
        order.shuffle(&mut rng);
        let (lo, hi) = (
            self.config.sigma_min / PIXEL_SCALE,
            self.config.sigma_max / PIXEL_SCALE,
        );
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let clean: Vec<&Tensor> = chunk.iter().map(|&i| &patches[i]).collect();
            let clean = Tensor::stack(&clean, 0)?;
            let (n, h, w) = clean.dims3()?;
            let sigmas: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
            let noise: Vec<f64> = (0..n * h * w)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let sig = scalars(&sigmas)?;
            let noise = Tensor::from_vec(noise, (n, h, w), &DEVICE)?
                .broadcast_mul(&sig.reshape((n, 1, 1))?)?;
            let noisy = (&clean + noise)?;
            let map = NoiseLevelMap::constant(&sig, h, w)?;
            let out = self.net.denoise(&noisy, &map)?;
            let loss = (out - &clean)?.abs()?.mean_all()?;
            let grads = loss.backward()?;
            self.adam.step(self.net.params(), &grads, |_| true)?;
            total += loss.to_scalar::<f64>()?;
            batches += 1;
        }
        let record = EpochRecord {
            epoch,
            loss: total / batches as f64,
            lr,
        };
        log::info!("denoiser epoch {} loss {:.5} lr {:.1e}", epoch, record.loss, lr);
        self.history.push(record.clone());
        self.next_epoch += 1;
        if let Some(dir) = self.config.checkpoint_dir.clone() {
            self.save_checkpoint(&dir.join(format!("denoiser_epoch{:03}.safetensors", epoch)))?;
        }
        Ok(record)
    }

    /// Runs the remaining epochs.
    pub fn train(&mut self, patches: &[Tensor]) -> Result<Vec<EpochRecord>> {
        while self.next_epoch < self.config.epochs {
            self.train_epoch(patches)?;
        }
        Ok(self.history.clone())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let (adam_tensors, adam_steps) = self.adam.export("adam.")?;
        let mut meta = HashMap::new();
        meta.insert("train_config".into(), serde_json::to_string(&self.config)?);
        meta.insert("history".into(), serde_json::to_string(&self.history)?);
        meta.insert("adam_steps".into(), adam_steps);
        self.net.save(path, &meta)?;
        // Re-save with optimizer moments appended; the sidecar stays as written.
        let mut tensors = self.net.params().tensors()?;
        tensors.extend(adam_tensors);
        let (_, full_meta) = load_tensors(path)?;
        save_tensors(path, &tensors, full_meta)
    }
}

/// Average PSNR after adding Gaussian noise of level `sigma` (normalized
/// units) to each clean `[H, W]` image and denoising it.
pub fn evaluate_denoiser(
    prior: &dyn Denoiser,
    images: &[Tensor],
    sigma: f64,
    seed: u64,
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let (lo, hi) = prior.sigma_range();
    let mut sum = 0.0;
    for (i, img) in images.iter().enumerate() {
        let (h, w) = img.dims2()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let noise: Vec<f64> = (0..h * w).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let noisy = (img + (Tensor::from_vec(noise, (h, w), &DEVICE)? * sigma)?)?.unsqueeze(0)?;
        let map = NoiseLevelMap::constant(&scalars(&[sigma.clamp(lo, hi)])?, h, w)?;
        let out = prior.denoise(&noisy, &map)?;
        let p = psnr_values(&Field::from_real(out)?, &Field::from_real(img.unsqueeze(0)?)?)?;
        sum += p[0];
    }
    Ok(sum / images.len() as f64)
}
