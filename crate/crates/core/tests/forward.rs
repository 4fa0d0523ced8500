mod common;

use common::*;
use pnp_core::field::{tensor_from_fn, Field};
use pnp_core::forward::{
    acceleration_to_rate, cdp_adjoint, cdp_apply, csmri_adjoint, csmri_forward, psnr_values, synthesize_measurement,
    CdpModel, CsmriModel, KSpaceMask, MeasurementModel, Observation, SamplingPattern,
};
use pnp_core::fourier::{fft2, ifft2};

#[test]
fn csmri_operators_are_adjoint() {
    let mut r = rng(10);
    for trial in 0..20 {
        let x = random_field(&mut r, &[2, 16, 16]);
        let y = random_field(&mut r, &[2, 16, 16]);
        let mask = KSpaceMask::generate((16, 16), SamplingPattern::UniformRandom, 0.3, trial).unwrap();
        let lhs = cdot(&to_pairs(&csmri_forward(&x, mask.grid()).unwrap()), &to_pairs(&y));
        let rhs = cdot(&to_pairs(&x), &to_pairs(&csmri_adjoint(&y, mask.grid()).unwrap()));
        assert!((lhs.0 - rhs.0).abs() < 1e-10 && (lhs.1 - rhs.1).abs() < 1e-10);
    }
}

#[test]
fn transform_matches_direct_dft_and_inverts() {
    let mut r = rng(11);
    let x = random_field(&mut r, &[1, 6, 10]);
    let fast = to_pairs(&fft2(&x).unwrap());
    let slow = naive_dft(&to_pairs(&x), 6, 10, false);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }
    let back = ifft2(&fft2(&x).unwrap()).unwrap();
    assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
}

#[test]
fn cdp_preserves_energy_per_pattern() {
    let mut r = rng(12);
    let x = random_field(&mut r, &[3, 12, 12]);
    let model = CdpModel::random((12, 12), 5, 0.0, 4).unwrap();
    let ax = cdp_apply(&x, &model.patterns).unwrap();
    assert_eq!(ax.dims(), &[3, 5, 12, 12]);
    let e_in = norm(&to_pairs(&x)).powi(2);
    let e_out = norm(&to_pairs(&ax)).powi(2);
    assert!((e_out - 5.0 * e_in).abs() / e_in < 1e-10);
    let (re, im) = model.patterns.to_vecs().unwrap();
    assert!(re.iter().zip(&im).all(|(a, b)| (a.hypot(*b) - 1.0).abs() < 1e-12));

    let w = random_field(&mut r, &[3, 5, 12, 12]);
    let lhs = cdot(&to_pairs(&ax), &to_pairs(&w));
    let rhs = cdot(&to_pairs(&x), &to_pairs(&cdp_adjoint(&w, &model.patterns).unwrap()));
    assert!((lhs.0 - rhs.0).abs() < 1e-9 && (lhs.1 - rhs.1).abs() < 1e-9);
}

#[test]
fn csmri_noise_has_the_configured_std_on_sampled_entries_only() {
    let img = tensor_from_fn(&[64, 64], |i| (i % 64) as f64 / 64.0).unwrap();
    let x = Field::from_real(img.unsqueeze(0).unwrap()).unwrap();
    let mask = KSpaceMask::generate((64, 64), SamplingPattern::Radial, 0.5, 0).unwrap();
    let sigma_n = 20.0;
    let model = MeasurementModel::Csmri(CsmriModel::new(mask.clone(), sigma_n).unwrap());
    let clean = to_pairs(&csmri_forward(&x, mask.grid()).unwrap());
    let m: Vec<f64> = mask.grid().flatten_all().unwrap().to_vec1().unwrap();
    let mut sq = 0.0;
    let mut count = 0.0;
    for seed in 0..4 {
        let Observation::KSpace(y) = synthesize_measurement(&x, &model, seed).unwrap() else {
            panic!("expected k-space data");
        };
        for ((a, b), &k) in to_pairs(&y).iter().zip(&clean).zip(&m) {
            if k == 0.0 {
                assert_eq!(*a, (0.0, 0.0));
            } else {
                sq += (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
                count += 2.0;
            }
        }
    }
    let std = (sq / count).sqrt();
    let expected = sigma_n / 255.0;
    // About 16k samples: the standard error of the std is under 1%.
    assert!((std / expected - 1.0).abs() < 0.03, "std {std} vs {expected}");
}

#[test]
fn pr_noise_variance_scales_with_intensity() {
    let img = tensor_from_fn(&[32, 32], |i| 0.2 + 0.6 * ((i * 7) % 32) as f64 / 32.0).unwrap();
    let x = Field::from_real(img.unsqueeze(0).unwrap()).unwrap();
    let model = CdpModel::random((32, 32), 4, 9.0, 1).unwrap();
    let clean: Vec<f64> = cdp_apply(&x, &model.patterns).unwrap().abs().unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let mm = MeasurementModel::Cdp(model);
    let Observation::Amplitudes(y) = synthesize_measurement(&x, &mm, 3).unwrap() else {
        panic!("expected amplitudes");
    };
    let y: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
    // (I_noisy − I) / (α·|Ax|) in 8-bit units is standard normal, ignoring
    // the rare clipped entries.
    let z: Vec<f64> = y
        .iter()
        .zip(&clean)
        .filter(|(_, c)| **c * 255.0 > 20.0)
        .map(|(a, c)| ((a * 255.0).powi(2) - (c * 255.0).powi(2)) / (9.0 * c * 255.0))
        .collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((var - 1.0).abs() < 0.08, "variance {var}");
}

#[test]
fn psnr_matches_its_definition() {
    let a = tensor_from_fn(&[2, 8, 8], |i| (i % 5) as f64 / 5.0).unwrap();
    let b = (a.clone() + 0.1).unwrap();
    let p = psnr_values(&Field::from_real(b).unwrap(), &Field::from_real(a).unwrap()).unwrap();
    for v in p {
        assert!((v - 20.0).abs() < 1e-9);
    }
}

#[test]
fn mask_rates_follow_the_acceleration() {
    for accel in [2.0, 4.0, 8.0] {
        for pattern in [SamplingPattern::Radial, SamplingPattern::UniformRandom] {
            let mask = KSpaceMask::generate((64, 64), pattern, acceleration_to_rate(accel), 0).unwrap();
            let want = (64.0 * 64.0 / accel).round() / (64.0 * 64.0);
            assert!((mask.rate().unwrap() - want).abs() < 1e-12);
            assert!(mask.contains_dc().unwrap());
        }
    }
}

#[test]
fn masks_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mask = KSpaceMask::generate((24, 20), SamplingPattern::Radial, 0.3, 9).unwrap();
    let path = dir.path().join("m.safetensors");
    mask.save(&path).unwrap();
    let back = KSpaceMask::load(&path).unwrap();
    assert_eq!(back.pattern(), mask.pattern());
    assert_eq!(back.seed(), 9);
    assert_eq!(back.target_rate(), 0.3);
    let diff = (back.grid() - mask.grid()).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
    assert_eq!(diff, 0.0);
}
