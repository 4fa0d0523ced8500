mod common;

use candle_core::Tensor;
use common::*;
use pnp_core::denoiser::{denoise_field, IdentityDenoiser, UNet};
use pnp_core::engine::{admm_iterate, data_prox, data_prox_csmri, data_prox_pr, pr_gradient, pr_objective, run_block, OptState, ParamBlock};
use pnp_core::field::{scalars, DEVICE};
use pnp_core::forward::{
    cdp_apply, synthesize_measurement, CdpModel, CsmriModel, KSpaceMask, MeasurementModel, Observation, Physics,
    SamplingPattern,
};
use pnp_core::harness::phantom_set;
use pnp_core::field::Field;

#[test]
fn csmri_prox_solves_the_normal_equations() {
    let (h, w) = (8, 8);
    let mut r = rng(20);
    for trial in 0..5 {
        let mask = KSpaceMask::generate((h, w), SamplingPattern::UniformRandom, 0.4, trial).unwrap();
        let m: Vec<f64> = mask.grid().flatten_all().unwrap().to_vec1().unwrap();
        let v = random_field(&mut r, &[1, h, w]);
        let y: Vec<C> = to_pairs(&random_field(&mut r, &[1, h, w])).iter().zip(&m).map(|(c, &k)| (c.0 * k, c.1 * k)).collect();
        let mu = 0.05 + 0.2 * trial as f64;
        let z = data_prox_csmri(&v, &from_pairs(&y, &[1, h, w]), mask.grid(), &scalars(&[mu]).unwrap()).unwrap();
        let a = |x: &[C]| -> Vec<C> { naive_dft(x, h, w, false).iter().zip(&m).map(|(c, &k)| (c.0 * k, c.1 * k)).collect() };
        let ah = |k: &[C]| -> Vec<C> { naive_dft(&k.iter().zip(&m).map(|(c, &q)| (c.0 * q, c.1 * q)).collect::<Vec<_>>(), h, w, true) };
        let vp = to_pairs(&v);
        let rhs: Vec<C> = ah(&y).iter().zip(&vp).map(|(p, q)| (p.0 + mu * q.0, p.1 + mu * q.1)).collect();
        let oracle = conjugate_gradient(
            |x| ah(&a(x)).iter().zip(x).map(|(p, q)| (p.0 + mu * q.0, p.1 + mu * q.1)).collect(),
            &rhs,
            300,
            1e-15,
        );
        assert!(z.max_abs_diff(&from_pairs(&oracle, &[1, h, w])).unwrap() < 1e-10);
    }
}

#[test]
fn csmri_prox_approaches_its_limits() {
    let mut r = rng(21);
    let mask = KSpaceMask::generate((16, 16), SamplingPattern::Radial, 0.3, 0).unwrap();
    let v = random_field(&mut r, &[1, 16, 16]);
    let y = random_field(&mut r, &[1, 16, 16]).mul_real(mask.grid()).unwrap();
    // Huge μ keeps v; tiny μ enforces the data on the sampled frequencies.
    let keep = data_prox_csmri(&v, &y, mask.grid(), &scalars(&[1e12]).unwrap()).unwrap();
    assert!(keep.max_abs_diff(&v).unwrap() < 1e-9);
    let fit = data_prox_csmri(&v, &y, mask.grid(), &scalars(&[1e-12]).unwrap()).unwrap();
    let resampled = pnp_core::forward::csmri_forward(&fit, mask.grid()).unwrap();
    assert!(resampled.max_abs_diff(&y).unwrap() < 1e-9);
    assert!(data_prox_csmri(&v, &y, mask.grid(), &scalars(&[0.0]).unwrap()).is_err());
}

fn pr_instance(seed: u64) -> (Field, Tensor, CdpModel) {
    let mut r = rng(seed);
    let model = CdpModel::random((8, 8), 3, 0.0, seed).unwrap();
    let target = random_field(&mut r, &[1, 8, 8]);
    let y = cdp_apply(&target, &model.patterns).unwrap().abs().unwrap();
    (random_field(&mut r, &[1, 8, 8]), y, model)
}

#[test]
fn pr_gradient_matches_central_differences() {
    let (v, y, model) = pr_instance(22);
    let g = to_pairs(&pr_gradient(&v, &y, &model.patterns).unwrap());
    let base = to_pairs(&v);
    let f = |p: &[C]| pr_objective(&from_pairs(p, &[1, 8, 8]), &y, &model.patterns).unwrap().to_vec1::<f64>().unwrap()[0];
    let h = 1e-6;
    for i in 0..base.len() {
        let (mut a, mut b) = (base.clone(), base.clone());
        a[i].1 += h;
        b[i].1 -= h;
        let fd = (f(&a) - f(&b)) / (2.0 * h);
        assert!((fd - g[i].1).abs() <= 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", g[i].1);
    }
}

#[test]
fn pr_prox_step_decreases_the_prox_objective() {
    for seed in 0..5 {
        let (v, y, model) = pr_instance(30 + seed);
        let mu = 0.5;
        let z = data_prox_pr(&v, &y, &model.patterns, &scalars(&[mu]).unwrap()).unwrap();
        let objective = |x: &Field| {
            pr_objective(x, &y, &model.patterns).unwrap().to_vec1::<f64>().unwrap()[0]
                + 0.5 * mu * norm(&to_pairs(&x.sub(&v).unwrap())).powi(2)
        };
        assert!(objective(&z) < objective(&v));
    }
}

fn csmri_setup() -> (OptState, Observation, Physics, Field) {
    let (_, img) = &phantom_set(1, (16, 16), 5).unwrap()[0];
    let x = Field::from_real(img.unsqueeze(0).unwrap()).unwrap();
    let mask = KSpaceMask::generate((16, 16), SamplingPattern::Radial, 0.4, 0).unwrap();
    let model = MeasurementModel::Csmri(CsmriModel::new(mask, 0.0).unwrap());
    let obs = synthesize_measurement(&x, &model, 0).unwrap();
    let physics = Physics::stack(&[&model]).unwrap();
    (OptState::initial(&obs, &physics).unwrap(), obs, physics, x)
}

#[test]
fn block_equals_its_iterations_and_is_deterministic() {
    let (s0, obs, physics, _) = csmri_setup();
    let sigmas = [0.1, 0.05, 0.02];
    let mus = [0.2, 0.5, 1.0];
    let block = ParamBlock::from_lists(&sigmas, &mus).unwrap();
    let a = run_block(&s0, &block, &obs, &physics, &IdentityDenoiser).unwrap();
    let b = run_block(&s0, &block, &obs, &physics, &IdentityDenoiser).unwrap();
    let mut c = s0.clone();
    for (s, m) in sigmas.iter().zip(&mus) {
        c = admm_iterate(&c, &scalars(&[*s]).unwrap(), &scalars(&[*m]).unwrap(), &obs, &physics, &IdentityDenoiser).unwrap();
    }
    assert_eq!(a.x.max_abs_diff(&b.x).unwrap(), 0.0);
    assert_eq!(a.x.max_abs_diff(&c.x).unwrap(), 0.0);
    assert_eq!(a.k, vec![3]);
}

#[test]
fn an_iteration_is_denoise_then_prox_then_dual_update() {
    let (s0, obs, physics, _) = csmri_setup();
    let mut r = rng(23);
    let start = OptState {
        u: random_field(&mut r, &[1, 16, 16]).scale(0.05).unwrap(),
        ..s0
    };
    let prior = UNet::new(common::smoke_unet(), 2).unwrap().frozen().unwrap();
    let (sigma, mu) = (scalars(&[0.06]).unwrap(), scalars(&[0.4]).unwrap());
    let next = admm_iterate(&start, &sigma, &mu, &obs, &physics, &prior).unwrap();
    let x = denoise_field(&prior, &start.z.sub(&start.u).unwrap(), &sigma).unwrap();
    let z = data_prox(&x.add(&start.u).unwrap(), &obs, &physics, &mu).unwrap();
    let u = start.u.add(&x).unwrap().sub(&z).unwrap();
    assert_eq!(next.x.max_abs_diff(&x).unwrap(), 0.0);
    assert_eq!(next.z.max_abs_diff(&z).unwrap(), 0.0);
    assert_eq!(next.u.max_abs_diff(&u).unwrap(), 0.0);
    assert_eq!(next.k, vec![1]);
}

#[test]
fn a_default_block_advances_five_iterations() {
    let (s0, obs, physics, _) = csmri_setup();
    let block = ParamBlock::constant(1, 5, 0.05, 0.2).unwrap();
    let out = run_block(&s0, &block, &obs, &physics, &IdentityDenoiser).unwrap();
    assert_eq!(out.k, vec![5]);
    let twice = run_block(&out, &block, &obs, &physics, &IdentityDenoiser).unwrap();
    assert_eq!(twice.k, vec![10]);
}

#[test]
fn data_consistent_ground_truth_is_a_fixed_point() {
    let (s0, obs, physics, x) = csmri_setup();
    let start = OptState {
        x: x.clone(),
        z: x.clone(),
        u: Field::zeros(&[1, 16, 16]).unwrap(),
        k: s0.k.clone(),
    };
    let next = admm_iterate(&start, &scalars(&[0.1]).unwrap(), &scalars(&[0.3]).unwrap(), &obs, &physics, &IdentityDenoiser).unwrap();
    assert!(next.x.max_abs_diff(&x).unwrap() < 1e-12);
    assert!(next.z.max_abs_diff(&x).unwrap() < 1e-12);
    assert!(next.u.max_abs_diff(&start.u).unwrap() < 1e-12);
}

#[test]
fn parameter_blocks_reject_bad_values() {
    assert!(ParamBlock::from_lists(&[0.1], &[0.0]).is_err());
    assert!(ParamBlock::from_lists(&[], &[]).is_err());
    assert!(ParamBlock::new(
        Tensor::ones((2, 3), candle_core::DType::F64, &DEVICE).unwrap(),
        Tensor::ones((2, 2), candle_core::DType::F64, &DEVICE).unwrap()
    )
    .is_err());
}
