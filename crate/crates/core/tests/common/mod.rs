#![allow(dead_code)]

use std::f64::consts::TAU;

use candle_core::Tensor;
use pnp_core::denoiser::{DenoiserTrainConfig, DenoiserTrainer, UNet, UNetConfig};
use pnp_core::field::{Field, DEVICE};
use pnp_core::harness::phantom_set;
use pnp_core::denoiser::extract_patches;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type C = (f64, f64);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_field(rng: &mut ChaCha8Rng, dims: &[usize]) -> Field {
    let n: usize = dims.iter().product();
    let re = Tensor::from_vec(gaussian_vec(rng, n), dims, &DEVICE).unwrap();
    let im = Tensor::from_vec(gaussian_vec(rng, n), dims, &DEVICE).unwrap();
    Field::new(re, im).unwrap()
}

pub fn to_pairs(f: &Field) -> Vec<C> {
    let (re, im) = f.to_vecs().unwrap();
    re.into_iter().zip(im).collect()
}

pub fn from_pairs(v: &[C], dims: &[usize]) -> Field {
    Field::from_pairs(v, dims).unwrap()
}

pub fn cmul(a: C, b: C) -> C {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

pub fn cadd(a: C, b: C) -> C {
    (a.0 + b.0, a.1 + b.1)
}

/// `Σ conj(a) b`.
pub fn cdot(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).fold((0.0, 0.0), |acc, (&x, &y)| cadd(acc, cmul((x.0, -x.1), y)))
}

pub fn norm(a: &[C]) -> f64 {
    a.iter().map(|c| c.0 * c.0 + c.1 * c.1).sum::<f64>().sqrt()
}

/// Direct unitary 2-D DFT of one `h × w` plane, `O((hw)²)`.
pub fn naive_dft(x: &[C], h: usize, w: usize, inverse: bool) -> Vec<C> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![(0.0, 0.0); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let mut acc = (0.0, 0.0);
            for y in 0..h {
                for x_ in 0..w {
                    let phase = sign * TAU * ((ky * y) as f64 / h as f64 + (kx * x_) as f64 / w as f64);
                    acc = cadd(acc, cmul(x[y * w + x_], (phase.cos(), phase.sin())));
                }
            }
            out[ky * w + kx] = (acc.0 * scale, acc.1 * scale);
        }
    }
    out
}

/// Conjugate gradients for Hermitian positive definite `apply`.
pub fn conjugate_gradient(apply: impl Fn(&[C]) -> Vec<C>, b: &[C], iters: usize, tol: f64) -> Vec<C> {
    let mut x = vec![(0.0, 0.0); b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = cdot(&r, &r).0;
    for _ in 0..iters {
        if rr.sqrt() <= tol * norm(b) {
            break;
        }
        let ap = apply(&p);
        let alpha = rr / cdot(&p, &ap).0;
        for i in 0..x.len() {
            x[i] = cadd(x[i], (alpha * p[i].0, alpha * p[i].1));
            r[i] = cadd(r[i], (-alpha * ap[i].0, -alpha * ap[i].1));
        }
        let rr_new = cdot(&r, &r).0;
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = cadd(r[i], (beta * p[i].0, beta * p[i].1));
        }
        rr = rr_new;
    }
    x
}

/// U-Net widths used by every smoke run.
pub fn smoke_unet() -> UNetConfig {
    UNetConfig {
        widths: vec![4, 8, 16, 32],
    }
}

pub fn smoke_denoiser_config() -> DenoiserTrainConfig {
    DenoiserTrainConfig {
        epochs: 2,
        batch_size: 4,
        lr: 1e-3,
        lr_halve_epoch: 10,
        lr_final_epoch: 10,
        lr_final: 1e-3,
        patch_size: 64,
        patch_stride: 32,
        seed: 0,
        unet: smoke_unet(),
        ..Default::default()
    }
}

/// 200 clean 64×64 training patches cut from 128×128 phantoms.
pub fn smoke_patches() -> Vec<Tensor> {
    let images: Vec<Tensor> = phantom_set(23, (128, 128), 100).unwrap().into_iter().map(|(_, t)| t).collect();
    let mut p = extract_patches(&images, 64, 32).unwrap();
    p.truncate(200);
    p
}

/// Trains the smoke denoiser; returns it with the per-epoch losses.
pub fn train_smoke_denoiser() -> (UNet, Vec<f64>) {
    let mut trainer = DenoiserTrainer::new(smoke_denoiser_config()).unwrap();
    let history = trainer.train(&smoke_patches()).unwrap();
    (trainer.denoiser().unwrap(), history.iter().map(|r| r.loss).collect())
}
