mod common;

use std::sync::OnceLock;

use common::*;
use pnp_core::baselines::{optimal_early_stop, run_fixed, FIXED_MU, FIXED_SIGMA};
use pnp_core::denoiser::UNet;
use pnp_core::engine::{denoiser_step, OptState};
use pnp_core::field::{scalars, Field};
use pnp_core::forward::psnr_values;
use pnp_core::harness::eval::setting_state;
use pnp_core::harness::phantom_set;
use pnp_core::task::{ModelFactory, Setting};

fn prior() -> &'static UNet {
    static PRIOR: OnceLock<UNet> = OnceLock::new();
    PRIOR.get_or_init(|| train_smoke_denoiser().0)
}

fn clean_images() -> Field {
    let planes: Vec<_> = phantom_set(4, (64, 64), 7).unwrap().into_iter().map(|(_, t)| t).collect();
    Field::from_real(candle_core::Tensor::stack(&planes, 0).unwrap()).unwrap()
}

fn clean_step_psnr(prior: &UNet, sigma: f64) -> Vec<f64> {
    let z = clean_images();
    let state = OptState {
        x: z.clone(),
        z: z.clone(),
        u: Field::zeros(z.dims()).unwrap(),
        k: vec![0; 4],
    };
    let x = denoiser_step(&state, &scalars(&[sigma; 4]).unwrap(), prior).unwrap();
    psnr_values(&x, &z).unwrap()
}

fn zero_strength_psnr(prior: &UNet) -> Vec<f64> {
    let z = clean_images();
    let x = pnp_core::denoiser::denoise_field(prior, &z, &scalars(&[0.0; 4]).unwrap()).unwrap();
    psnr_values(&x, &z).unwrap()
}

/// Two smoke epochs leave edges slightly smoothed; the tight bound below
/// needs a fully trained prior.
#[test]
fn clean_inputs_survive_a_weak_denoiser_step() {
    let weak = clean_step_psnr(prior(), 2.0 / 255.0);
    let strong = clean_step_psnr(prior(), 50.0 / 255.0);
    for (w, s) in weak.iter().zip(&strong) {
        assert!(w >= s, "{w} < {s} dB");
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&weak) >= 25.0, "{weak:?}");
    assert!(mean(&zero_strength_psnr(prior())) >= 25.0);
}

fn full_prior() -> UNet {
    let path = std::env::var("PNP_DENOISER").expect("set PNP_DENOISER to a trained checkpoint");
    UNet::load(std::path::Path::new(&path)).unwrap()
}

#[test]
#[ignore = "needs a fully trained denoiser in PNP_DENOISER"]
fn clean_inputs_pass_through_a_trained_denoiser_step() {
    for p in clean_step_psnr(&full_prior(), 2.0 / 255.0) {
        assert!(p >= 40.0, "{p} dB");
    }
}

#[test]
#[ignore = "needs a fully trained denoiser in PNP_DENOISER"]
fn zero_strength_is_nearly_the_identity_when_trained() {
    for p in zero_strength_psnr(&full_prior()) {
        assert!(p >= 40.0, "{p} dB");
    }
}

#[test]
fn the_fixed_policy_peaks_early() {
    let images = phantom_set(4, (64, 64), 7).unwrap();
    let state = setting_state(&images, &Setting::csmri(4.0, 15.0), 0, &mut ModelFactory::default()).unwrap();
    let runs = run_fixed(&state, prior(), FIXED_SIGMA, FIXED_MU, 30).unwrap();
    let stops: Vec<usize> = runs.iter().map(|t| optimal_early_stop(&t.psnr).unwrap().1).collect();
    let mean = stops.iter().sum::<usize>() as f64 / stops.len() as f64;
    assert!(mean < 10.0, "best iterations {stops:?}");
}
