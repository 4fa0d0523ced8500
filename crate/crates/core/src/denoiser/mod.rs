//! Gaussian denoisers used as the implicit prior, and their training.

mod train;
mod unet;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::field::{per_item, Field};

pub use train::{
    evaluate_denoiser, extract_patches, DenoiserTrainConfig, DenoiserTrainer, EpochRecord,
};
pub use unet::{UNet, UNetConfig};

/// Trained denoising range in normalized units: σ ∈ [1, 50] / 255.
pub const SIGMA_MIN: f64 = 1.0 / 255.0;
pub const SIGMA_MAX: f64 = 50.0 / 255.0;

/// Per-pixel noise levels, `[N, H, W]`, matching the image planes.
#[derive(Clone, Debug)]
pub struct NoiseLevelMap(Tensor);

impl NoiseLevelMap {
    pub fn new(map: Tensor) -> Result<Self> {
        if map.rank() != 3 {
            return Err(Error::invalid("noise level map must be [N, H, W]"));
        }
        Ok(Self(map))
    }

    /// Constant level per plane from a `[N]` tensor.
    pub fn constant(levels: &Tensor, h: usize, w: usize) -> Result<Self> {
        let n = levels.dims1()?;
        Ok(Self(per_item(levels, 3)?.broadcast_as((n, h, w))?.contiguous()?))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// How complex iterates are fed to a real-valued denoiser.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ChannelPolicy {
    /// Real and imaginary planes are denoised independently.
    #[default]
    PerPlane,
}

/// A conditional Gaussian denoiser `H_σ`.
pub trait Denoiser: Send + Sync {
    /// Denoises real planes `[N, H, W]` under a matching noise level map.
    fn denoise(&self, image: &Tensor, sigma: &NoiseLevelMap) -> Result<Tensor>;

    /// Range of noise levels the denoiser was trained on.
    fn sigma_range(&self) -> (f64, f64) {
        (SIGMA_MIN, SIGMA_MAX)
    }

    fn channel_policy(&self) -> ChannelPolicy {
        ChannelPolicy::PerPlane
    }
}

pub type DenoiserHandle = Arc<dyn Denoiser>;

/// Returns its input; a test double for the plug-and-play machinery.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, image: &Tensor, sigma: &NoiseLevelMap) -> Result<Tensor> {
        if image.dims() != sigma.tensor().dims() {
            return Err(Error::shape(image.dims(), sigma.tensor().dims()));
        }
        Ok(image.clone())
    }
}

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

/// Clamps per-item strengths `[B]` to the prior's trained range, warning
/// the first time anything had to move.
pub fn clamp_sigma(prior: &dyn Denoiser, sigma: &Tensor) -> Result<Tensor> {
    let (lo, hi) = prior.sigma_range();
    let values = sigma.to_vec1::<f64>()?;
    let outside = values.iter().any(|&s| s < lo - 1e-12 || s > hi + 1e-12);
    if outside && !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!(
            "denoising strength outside trained range [{:.4}, {:.4}], clamping",
            lo,
            hi
        );
    }
    Ok(sigma.clamp(lo, hi)?)
}

/// Denoises a complex batch `[B, H, W]` with per-item strengths `[B]`
/// according to the prior's channel policy.
pub fn denoise_field(prior: &dyn Denoiser, v: &Field, sigma: &Tensor) -> Result<Field> {
    let b = v.batch();
    let (h, w) = v.hw();
    if sigma.dims1()? != b {
        return Err(Error::shape(&[b], sigma.dims()));
    }
    let sigma = clamp_sigma(prior, sigma)?;
    match prior.channel_policy() {
        ChannelPolicy::PerPlane => {
            let planes = Tensor::cat(&[&v.re, &v.im], 0)?;
            let levels = Tensor::cat(&[&sigma, &sigma], 0)?;
            let map = NoiseLevelMap::constant(&levels, h, w)?;
            let out = prior.denoise(&planes, &map)?;
            Field::new(out.narrow(0, 0, b)?, out.narrow(0, b, b)?)
        }
    }
}
