use candle_core::{Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{per_item, scalars, Field, DEVICE};
use crate::fourier::{fft2, ifft2};

use super::mask::KSpaceMask;

/// Images are normalized to `[0, 1]`; noise levels are quoted in 8-bit units.
pub const PIXEL_SCALE: f64 = 255.0;

/// Number of coded-diffraction measurements used by default.
pub const DEFAULT_CDP_PATTERNS: usize = 4;

#[derive(Clone, Debug)]
pub struct CsmriModel {
    pub mask: KSpaceMask,
    /// Noise standard deviation in 8-bit units (5, 10, 15, ...).
    pub sigma_n: f64,
}

impl CsmriModel {
    pub fn new(mask: KSpaceMask, sigma_n: f64) -> Result<Self> {
        if !(sigma_n >= 0.0) {
            return Err(Error::invalid(format!("sigma_n must be >= 0, got {sigma_n}")));
        }
        Ok(Self { mask, sigma_n })
    }
}

/// Coded diffraction patterns: `A_i = F D_i` with unit-modulus diagonals.
#[derive(Clone, Debug)]
pub struct CdpModel {
    /// `[P, H, W]` modulation fields.
    pub patterns: Field,
    /// Shot-noise scale, applied to intensities in 8-bit units.
    pub alpha: f64,
}

impl CdpModel {
    /// Draws `count` patterns with phases uniform on the unit circle.
    pub fn random(shape: (usize, usize), count: usize, alpha: f64, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("at least one pattern is required"));
        }
        if !(alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
        }
        let (h, w) = shape;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(f64, f64)> = (0..count * h * w)
            .map(|_| {
                let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                (phase.cos(), phase.sin())
            })
            .collect();
        Ok(Self {
            patterns: Field::from_pairs(&pairs, &[count, h, w])?,
            alpha,
        })
    }

    pub fn count(&self) -> usize {
        self.patterns.dims()[0]
    }
}

#[derive(Clone, Debug)]
pub enum MeasurementModel {
    Csmri(CsmriModel),
    Cdp(CdpModel),
}

impl MeasurementModel {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            MeasurementModel::Csmri(m) => m.mask.shape(),
            MeasurementModel::Cdp(m) => m.patterns.hw(),
        }
    }

    /// Noise level fed to the policy, in normalized units (0 for phase retrieval).
    pub fn observed_noise(&self) -> f64 {
        match self {
            MeasurementModel::Csmri(m) => m.sigma_n / PIXEL_SCALE,
            MeasurementModel::Cdp(_) => 0.0,
        }
    }
}

/// Measured data for a batch of problems.
#[derive(Clone, Debug)]
pub enum Observation {
    /// Undersampled k-space, `[B, H, W]`, zero off the mask.
    KSpace(Field),
    /// Coded-diffraction amplitudes, `[B, P, H, W]`.
    Amplitudes(Tensor),
}

impl Observation {
    pub fn batch(&self) -> usize {
        match self {
            Observation::KSpace(f) => f.batch(),
            Observation::Amplitudes(t) => t.dims()[0],
        }
    }

    pub fn index_select(&self, idx: &Tensor) -> Result<Self> {
        Ok(match self {
            Observation::KSpace(f) => Observation::KSpace(f.index_select(idx, 0)?),
            Observation::Amplitudes(t) => Observation::Amplitudes(t.index_select(idx, 0)?),
        })
    }

    pub fn cat(items: &[&Observation]) -> Result<Self> {
        match items.first() {
            None => Err(Error::Empty("observation list")),
            Some(Observation::KSpace(_)) => {
                let fs = items
                    .iter()
                    .map(|o| match o {
                        Observation::KSpace(f) => Ok(f),
                        _ => Err(Error::invalid("cannot mix observation kinds")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Observation::KSpace(Field::cat(&fs, 0)?))
            }
            Some(Observation::Amplitudes(_)) => {
                let ts = items
                    .iter()
                    .map(|o| match o {
                        Observation::Amplitudes(t) => Ok(t),
                        _ => Err(Error::invalid("cannot mix observation kinds")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Observation::Amplitudes(Tensor::cat(&ts, 0)?))
            }
        }
    }
}

/// Forward operators for a batch of problems, stacked along dimension 0.
#[derive(Clone, Debug)]
pub enum Physics {
    Csmri { mask: Tensor },
    Cdp { patterns: Field },
}

impl Physics {
    /// Stacks per-problem models. All models must be of the same kind and shape.
    pub fn stack(models: &[&MeasurementModel]) -> Result<Self> {
        let first = models.first().ok_or(Error::Empty("model list"))?;
        let shape = first.shape();
        for m in models {
            if m.shape() != shape {
                let (a, b) = (m.shape(), shape);
                return Err(Error::shape(&[b.0, b.1], &[a.0, a.1]));
            }
        }
        match first {
            MeasurementModel::Csmri(_) => {
                let masks = models
                    .iter()
                    .map(|m| match m {
                        MeasurementModel::Csmri(c) => Ok(c.mask.grid().unsqueeze(0)?),
                        _ => Err(Error::invalid("cannot mix CS-MRI and CDP problems")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Physics::Csmri {
                    mask: Tensor::cat(&masks, 0)?,
                })
            }
            MeasurementModel::Cdp(c0) => {
                let mut pats = Vec::with_capacity(models.len());
                for m in models {
                    match m {
                        MeasurementModel::Cdp(c) if c.count() == c0.count() => {
                            pats.push(c.patterns.unsqueeze(0)?)
                        }
                        _ => return Err(Error::invalid("cannot mix CS-MRI and CDP problems")),
                    }
                }
                let refs: Vec<&Field> = pats.iter().collect();
                Ok(Physics::Cdp {
                    patterns: Field::cat(&refs, 0)?,
                })
            }
        }
    }

    pub fn batch(&self) -> usize {
        match self {
            Physics::Csmri { mask } => mask.dims()[0],
            Physics::Cdp { patterns } => patterns.batch(),
        }
    }

    pub fn hw(&self) -> (usize, usize) {
        match self {
            Physics::Csmri { mask } => (mask.dims()[1], mask.dims()[2]),
            Physics::Cdp { patterns } => patterns.hw(),
        }
    }

    pub fn index_select(&self, idx: &Tensor) -> Result<Self> {
        Ok(match self {
            Physics::Csmri { mask } => Physics::Csmri {
                mask: mask.index_select(idx, 0)?,
            },
            Physics::Cdp { patterns } => Physics::Cdp {
                patterns: patterns.index_select(idx, 0)?,
            },
        })
    }

    pub fn cat(items: &[&Physics]) -> Result<Self> {
        match items.first() {
            None => Err(Error::Empty("physics list")),
            Some(Physics::Csmri { .. }) => {
                let ts = items
                    .iter()
                    .map(|p| match p {
                        Physics::Csmri { mask } => Ok(mask),
                        _ => Err(Error::invalid("cannot mix problem kinds")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Physics::Csmri {
                    mask: Tensor::cat(&ts, 0)?,
                })
            }
            Some(Physics::Cdp { .. }) => {
                let fs = items
                    .iter()
                    .map(|p| match p {
                        Physics::Cdp { patterns } => Ok(patterns),
                        _ => Err(Error::invalid("cannot mix problem kinds")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Physics::Cdp {
                    patterns: Field::cat(&fs, 0)?,
                })
            }
        }
    }
}

fn check_hw(x: &Field, hw: (usize, usize)) -> Result<()> {
    if x.hw() != hw {
        return Err(Error::shape(&[hw.0, hw.1], &[x.hw().0, x.hw().1]));
    }
    Ok(())
}

fn mask_hw(mask: &Tensor) -> (usize, usize) {
    let d = mask.dims();
    (d[d.len() - 2], d[d.len() - 1])
}

/// `mask ⊙ F x` with unitary `F`. `mask` is `[H, W]` or `[B, H, W]`.
pub fn csmri_forward(x: &Field, mask: &Tensor) -> Result<Field> {
    check_hw(x, mask_hw(mask))?;
    fft2(x)?.mul_real(mask)
}

/// Adjoint of [`csmri_forward`]: `F^H (mask ⊙ y)`, the zero-filled image.
pub fn csmri_adjoint(y: &Field, mask: &Tensor) -> Result<Field> {
    check_hw(y, mask_hw(mask))?;
    ifft2(&y.mul_real(mask)?)
}

/// `A_i x = F (D_i ⊙ x)` for every pattern: `[B, H, W] → [B, P, H, W]`.
/// `patterns` is `[P, H, W]` or `[B, P, H, W]`.
pub fn cdp_apply(x: &Field, patterns: &Field) -> Result<Field> {
    check_hw(x, patterns.hw())?;
    let modulated = patterns.mul(&x.unsqueeze(1)?)?;
    fft2(&modulated)
}

/// `Σ_i A_i^H w_i`: `[B, P, H, W] → [B, H, W]`.
pub fn cdp_adjoint(w: &Field, patterns: &Field) -> Result<Field> {
    check_hw(w, patterns.hw())?;
    let back = ifft2(w)?;
    patterns.conj()?.mul(&back)?.sum_keepdim(1)?.squeeze(1)
}

/// Noiseless amplitudes `|A_i x|`, `[B, P, H, W]`.
pub fn cdp_forward(x: &Field, patterns: &Field) -> Result<Tensor> {
    cdp_apply(x, patterns)?.abs()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Noisy measurement of a single image `x` (`[1, H, W]` or `[H, W]`).
///
/// CS-MRI adds independent Gaussian noise of std `sigma_n / 255` to the real
/// and imaginary parts of every sampled coefficient. Phase retrieval perturbs
/// the 8-bit intensities `|A x|²` with `N(0, α²|A x|²)` and stores amplitudes,
/// clipping negative intensities to zero.
pub fn synthesize_measurement(x: &Field, model: &MeasurementModel, seed: u64) -> Result<Observation> {
    let x = if x.dims().len() == 2 { x.unsqueeze(0)? } else { x.clone() };
    if x.batch() != 1 {
        return Err(Error::invalid("synthesize_measurement expects a single image"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match model {
        MeasurementModel::Csmri(m) => {
            let clean = fft2(&x)?;
            let dims = clean.dims().to_vec();
            let n: usize = dims.iter().product();
            let std = m.sigma_n / PIXEL_SCALE;
            let noisy = if std > 0.0 {
                let nr = Tensor::from_vec(gaussian(&mut rng, n), dims.as_slice(), &DEVICE)?;
                let ni = Tensor::from_vec(gaussian(&mut rng, n), dims.as_slice(), &DEVICE)?;
                clean.add(&Field::new(nr, ni)?.scale(std)?)?
            } else {
                clean
            };
            Ok(Observation::KSpace(noisy.mul_real(m.mask.grid())?))
        }
        MeasurementModel::Cdp(m) => {
            let amp = cdp_forward(&x, &m.patterns)?;
            if m.alpha == 0.0 {
                return Ok(Observation::Amplitudes(amp));
            }
            let dims = amp.dims().to_vec();
            let n: usize = dims.iter().product();
            let a8 = amp.flatten_all()?.to_vec1::<f64>()?;
            let noise = gaussian(&mut rng, n);
            let y: Vec<f64> = a8
                .iter()
                .zip(noise)
                .map(|(&a, e)| {
                    let amp8 = a * PIXEL_SCALE;
                    let intensity = amp8 * amp8 + m.alpha * amp8 * e;
                    intensity.max(0.0).sqrt() / PIXEL_SCALE
                })
                .collect();
            Ok(Observation::Amplitudes(Tensor::from_vec(y, dims, &DEVICE)?))
        }
    }
}

/// Lowest mean squared error before the PSNR saturates at 100 dB.
pub const PSNR_MSE_FLOOR: f64 = 1e-10;

/// Per-item PSNR in dB between magnitudes, peak 1.0, `[B, H, W]` inputs.
/// Differentiable in `x_hat`.
pub fn psnr(x_hat: &Field, x_gt: &Field) -> Result<Tensor> {
    if x_hat.dims() != x_gt.dims() {
        return Err(Error::shape(x_gt.dims(), x_hat.dims()));
    }
    let b = x_hat.batch();
    let diff = (x_hat.abs()? - x_gt.abs()?)?;
    let mse = diff.sqr()?.reshape((b, ()))?.mean(D::Minus1)?;
    let mse = mse.clamp(PSNR_MSE_FLOOR, f64::INFINITY)?;
    Ok(mse.log()?.affine(-10.0 / std::f64::consts::LN_10, 0.0)?)
}

/// [`psnr`] as plain numbers.
pub fn psnr_values(x_hat: &Field, x_gt: &Field) -> Result<Vec<f64>> {
    Ok(psnr(x_hat, x_gt)?.to_vec1()?)
}

/// Zero-filled or back-projected starting point for ADMM, `[B, H, W]`.
pub fn initial_estimate(obs: &Observation, physics: &Physics) -> Result<Field> {
    match (obs, physics) {
        (Observation::KSpace(y), Physics::Csmri { mask }) => csmri_adjoint(y, mask),
        (Observation::Amplitudes(y), Physics::Cdp { patterns }) => {
            let count = patterns.dims()[1] as f64;
            // |A_i^H y_i| averaged over the patterns.
            let back = ifft2(&Field::from_real(y.clone())?)?;
            let per_pattern = patterns.conj()?.mul(&back)?.abs()?;
            let mean = per_pattern.sum(1)?.affine(1.0 / count, 0.0)?;
            Field::from_real(mean)
        }
        _ => Err(Error::invalid("observation does not match the forward model")),
    }
}

/// Per-item noise level plane values for a batch of models.
pub fn observed_noise(models: &[&MeasurementModel]) -> Result<Tensor> {
    let v: Vec<f64> = models.iter().map(|m| m.observed_noise()).collect();
    scalars(&v)
}

/// Broadcast helper: `[B]` → `[B, 1, 1]`.
pub(crate) fn per_image(t: &Tensor) -> Result<Tensor> {
    per_item(t, 3)
}
