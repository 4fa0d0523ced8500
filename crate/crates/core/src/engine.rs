//! PnP-ADMM:
//!
//! ```text
//! x_{k+1} = H_σk(z_k − u_k)
//! z_{k+1} = prox_{D/μk}(x_{k+1} + u_k)
//! u_{k+1} = u_k + x_{k+1} − z_{k+1}
//! ```
//!
//! All quantities carry a leading batch dimension; the strengths and
//! penalties are per-item tensors so a batch of problems can be driven by a
//! batch of policy outputs, with gradients flowing back to them.

use candle_core::Tensor;

use crate::denoiser::{denoise_field, Denoiser};
use crate::error::{Error, Result};
use crate::field::{scalars, Field};
use crate::forward::{cdp_adjoint, cdp_apply, initial_estimate, per_image, Observation, Physics};
use crate::fourier::{fft2, ifft2};

/// Zero-amplitude guard in the phase-retrieval gradient.
pub const AMPLITUDE_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct OptState {
    pub x: Field,
    pub z: Field,
    /// Scaled dual variable.
    pub u: Field,
    /// Inner iterations performed so far, per item.
    pub k: Vec<usize>,
}

impl OptState {
    /// `x0 = z0 = ` zero-filled (CS-MRI) or back-projected (CDP) estimate, `u0 = 0`.
    pub fn initial(obs: &Observation, physics: &Physics) -> Result<Self> {
        let x0 = initial_estimate(obs, physics)?;
        Ok(Self {
            z: x0.clone(),
            u: Field::zeros(x0.dims())?,
            k: vec![0; x0.batch()],
            x: x0,
        })
    }

    pub fn batch(&self) -> usize {
        self.x.batch()
    }

    pub fn detach(&self) -> Self {
        Self {
            x: self.x.detach(),
            z: self.z.detach(),
            u: self.u.detach(),
            k: self.k.clone(),
        }
    }

    pub fn index_select(&self, idx: &Tensor) -> Result<Self> {
        Ok(Self {
            x: self.x.index_select(idx, 0)?,
            z: self.z.index_select(idx, 0)?,
            u: self.u.index_select(idx, 0)?,
            k: idx.to_vec1::<u32>()?.iter().map(|&i| self.k[i as usize]).collect(),
        })
    }

    pub fn cat(items: &[&OptState]) -> Result<Self> {
        let pick = |f: fn(&OptState) -> &Field| Field::cat(&items.iter().map(|s| f(s)).collect::<Vec<_>>(), 0);
        Ok(Self {
            x: pick(|s| &s.x)?,
            z: pick(|s| &s.z)?,
            u: pick(|s| &s.u)?,
            k: items.iter().flat_map(|s| s.k.iter().copied()).collect(),
        })
    }
}

/// Denoising strengths and penalties for `m` consecutive iterations, per
/// batch item: both tensors are `[B, m]`.
#[derive(Clone, Debug)]
pub struct ParamBlock {
    sigmas: Tensor,
    mus: Tensor,
}

impl ParamBlock {
    pub fn new(sigmas: Tensor, mus: Tensor) -> Result<Self> {
        let (b, m) = sigmas.dims2()?;
        if mus.dims() != [b, m] {
            return Err(Error::shape(&[b, m], mus.dims()));
        }
        if m == 0 {
            return Err(Error::invalid("a parameter block needs at least one iteration"));
        }
        let all_positive = |t: &Tensor| -> Result<bool> {
            Ok(t.flatten_all()?.to_vec1::<f64>()?.iter().all(|&v| v > 0.0))
        };
        if !all_positive(&sigmas)? || !all_positive(&mus)? {
            return Err(Error::invalid("denoising strengths and penalties must be positive"));
        }
        Ok(Self {
            sigmas: sigmas.contiguous()?,
            mus: mus.contiguous()?,
        })
    }

    /// Single-problem block from explicit lists.
    pub fn from_lists(sigmas: &[f64], mus: &[f64]) -> Result<Self> {
        if sigmas.len() != mus.len() {
            return Err(Error::shape(&[sigmas.len()], &[mus.len()]));
        }
        let m = sigmas.len();
        Self::new(scalars(sigmas)?.reshape((1, m))?, scalars(mus)?.reshape((1, m))?)
    }

    /// The same `(σ, μ)` for every item and iteration.
    pub fn constant(batch: usize, m: usize, sigma: f64, mu: f64) -> Result<Self> {
        Self::from_lists(&vec![sigma; m], &vec![mu; m])?.repeat_batch(batch)
    }

    fn repeat_batch(&self, batch: usize) -> Result<Self> {
        Ok(Self {
            sigmas: self.sigmas.repeat((batch, 1))?,
            mus: self.mus.repeat((batch, 1))?,
        })
    }

    pub fn len(&self) -> usize {
        self.sigmas.dims()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self) -> usize {
        self.sigmas.dims()[0]
    }

    pub fn sigmas(&self) -> &Tensor {
        &self.sigmas
    }

    pub fn mus(&self) -> &Tensor {
        &self.mus
    }

    /// `([B], [B])` parameters for inner step `j`.
    pub fn step(&self, j: usize) -> Result<(Tensor, Tensor)> {
        Ok((
            self.sigmas.narrow(1, j, 1)?.squeeze(1)?,
            self.mus.narrow(1, j, 1)?.squeeze(1)?,
        ))
    }
}

fn check_mu(mu: &Tensor) -> Result<()> {
    if mu.to_vec1::<f64>()?.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::invalid("penalty parameter must be positive"));
    }
    Ok(())
}

/// `H_σ(z − u)`.
pub fn denoiser_step(state: &OptState, sigma: &Tensor, prior: &dyn Denoiser) -> Result<Field> {
    denoise_field(prior, &state.z.sub(&state.u)?, sigma)
}

/// Exact CS-MRI prox, `argmin_z ½‖y − F_p z‖² + (μ/2)‖z − v‖²`, solved per
/// frequency as `F^H[(mask ⊙ y + μ F v) / (mask + μ)]`. `y` is assumed to be
/// zero off the mask.
pub fn data_prox_csmri(v: &Field, y: &Field, mask: &Tensor, mu: &Tensor) -> Result<Field> {
    check_mu(mu)?;
    let mu = per_image(mu)?;
    let fv = fft2(v)?;
    let num = y.mul_real(mask)?.add(&fv.mul_real(&mu)?)?;
    let den = mask.broadcast_add(&mu)?;
    ifft2(&num.div_real(&den)?)
}

/// Amplitude data term `D(v) = Σ_i ½‖|A_i v| − y_i‖²`, per item.
pub fn pr_objective(v: &Field, y: &Tensor, patterns: &Field) -> Result<Tensor> {
    let b = v.batch();
    let amp = cdp_apply(v, patterns)?.abs()?;
    Ok((amp - y)?.sqr()?.reshape((b, ()))?.sum(1)?.affine(0.5, 0.0)?)
}

/// `∇D(v) = Σ_i A_i^H((|A_i v| − y_i) ⊙ A_i v / max(|A_i v|, ε))`, returned as
/// `∂D/∂Re + i ∂D/∂Im`.
pub fn pr_gradient(v: &Field, y: &Tensor, patterns: &Field) -> Result<Field> {
    let av = cdp_apply(v, patterns)?;
    let mag = av.abs()?;
    let weight = ((&mag - y)? / mag.clamp(AMPLITUDE_EPS, f64::INFINITY)?)?;
    cdp_adjoint(&av.mul_real(&weight)?, patterns)
}

/// Inexact phase-retrieval prox: one gradient step on `D` from `v`,
/// `v − ∇D(v) / (μ + P)` for `P` patterns. The step is the exact minimizer
/// of the prox objective once the measurement phases are frozen at `A v`.
pub fn data_prox_pr(v: &Field, y: &Tensor, patterns: &Field, mu: &Tensor) -> Result<Field> {
    check_mu(mu)?;
    let count = patterns.dims()[patterns.dims().len() - 3] as f64;
    let grad = pr_gradient(v, y, patterns)?;
    let step = per_image(&mu.affine(1.0, count)?.recip()?)?;
    v.sub(&grad.mul_real(&step)?)
}

/// Data-fidelity prox dispatched on the forward model.
pub fn data_prox(v: &Field, obs: &Observation, physics: &Physics, mu: &Tensor) -> Result<Field> {
    match (obs, physics) {
        (Observation::KSpace(y), Physics::Csmri { mask }) => data_prox_csmri(v, y, mask, mu),
        (Observation::Amplitudes(y), Physics::Cdp { patterns }) => data_prox_pr(v, y, patterns, mu),
        _ => Err(Error::invalid("observation does not match the forward model")),
    }
}

/// One PnP-ADMM iteration with per-item `σ` and `μ` (`[B]` each).
pub fn admm_iterate(
    state: &OptState,
    sigma: &Tensor,
    mu: &Tensor,
    obs: &Observation,
    physics: &Physics,
    prior: &dyn Denoiser,
) -> Result<OptState> {
    let x = denoiser_step(state, sigma, prior)?;
    let z = data_prox(&x.add(&state.u)?, obs, physics, mu)?;
    let u = state.u.add(&x)?.sub(&z)?;
    Ok(OptState {
        x,
        z,
        u,
        k: state.k.iter().map(|k| k + 1).collect(),
    })
}

/// `m` iterations using `(sigmas[j], mus[j])` at inner step `j`.
pub fn run_block(
    state: &OptState,
    params: &ParamBlock,
    obs: &Observation,
    physics: &Physics,
    prior: &dyn Denoiser,
) -> Result<OptState> {
    if params.batch() != state.batch() {
        return Err(Error::shape(&[state.batch()], &[params.batch()]));
    }
    let mut s = state.clone();
    for j in 0..params.len() {
        let (sigma, mu) = params.step(j)?;
        s = admm_iterate(&s, &sigma, &mu, obs, physics, prior)?;
    }
    Ok(s)
}
