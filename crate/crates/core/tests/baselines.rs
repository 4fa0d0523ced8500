use pnp_core::baselines::{
    evaluate_grid, handcrafted_schedule, optimal_early_stop, run_fixed, run_handcrafted, search_fixed_optimal,
    search_oracle,
};
use pnp_core::denoiser::IdentityDenoiser;
use pnp_core::env::EnvState;
use pnp_core::harness::eval::setting_state;
use pnp_core::harness::phantom_set;
use pnp_core::task::{ModelFactory, Setting};

fn state(n: usize) -> EnvState {
    let images = phantom_set(n, (16, 16), 90).unwrap();
    setting_state(&images, &Setting::csmri(4.0, 10.0), 0, &mut ModelFactory::default()).unwrap()
}

#[test]
fn handcrafted_schedule_is_log_spaced_between_its_endpoints() {
    let lambda = 0.23;
    for sigma_n in [0.0, 0.5, 5.0, 15.0] {
        let s = handcrafted_schedule(sigma_n, 30, lambda);
        let floor = f64::max(sigma_n, 1.0);
        assert_eq!(s.len(), 30);
        assert!((s[0].0 * 255.0 - 35.0).abs() < 1e-9);
        assert!((s[29].0 * 255.0 - floor).abs() < 1e-9);
        let ratio = s[1].0 / s[0].0;
        for w in s.windows(2) {
            assert!((w[1].0 / w[0].0 - ratio).abs() < 1e-12);
        }
        for (sig, mu) in &s {
            assert!((mu - lambda * (floor / (255.0 * sig)).powi(2)).abs() < 1e-12);
        }
    }
    assert_eq!(handcrafted_schedule(15.0, 1, 0.23).len(), 1);
}

#[test]
fn early_stop_picks_the_first_maximum() {
    assert_eq!(optimal_early_stop(&[1.0, 3.0, 2.0, 3.0]).unwrap(), (3.0, 2));
    assert_eq!(optimal_early_stop(&[5.0]).unwrap(), (5.0, 1));
    assert!(optimal_early_stop(&[]).is_err());
}

#[test]
fn fixed_runs_validate_and_record_every_iteration() {
    let s = state(2);
    let t = run_fixed(&s, &IdentityDenoiser, 0.05, 0.2, 4).unwrap();
    assert_eq!(t.len(), 2);
    assert!(t.iter().all(|t| t.iterations() == 4 && t.psnr.iter().all(|p| p.is_finite())));
    assert!(run_fixed(&s, &IdentityDenoiser, 0.0, 0.2, 4).is_err());
    assert!(run_fixed(&s, &IdentityDenoiser, 0.05, -1.0, 4).is_err());
    assert_eq!(run_handcrafted(&s, &IdentityDenoiser, 0.23, 3).unwrap()[1].iterations(), 3);
}

#[test]
fn grid_selections_match_exhaustive_runs() {
    let s = state(3);
    let sigmas = [0.02, 0.1];
    let mus = [0.05, 0.5];
    let iterations = 4;
    // Independent oracle: one fixed run per pair.
    let mut table = Vec::new();
    for &sg in &sigmas {
        for &mu in &mus {
            let finals: Vec<f64> = run_fixed(&s, &IdentityDenoiser, sg, mu, iterations)
                .unwrap()
                .iter()
                .map(|t| t.final_psnr())
                .collect();
            table.push((sg, mu, finals));
        }
    }
    let mean = |f: &[f64]| f.iter().sum::<f64>() / f.len() as f64;
    let best = table
        .iter()
        .fold(None::<&(f64, f64, Vec<f64>)>, |acc, row| match acc {
            Some(b) if mean(&b.2) >= mean(&row.2) => Some(b),
            _ => Some(row),
        })
        .unwrap();

    let fixed = search_fixed_optimal(&s, &IdentityDenoiser, &sigmas, &mus, iterations).unwrap();
    assert_eq!((fixed[0].sigma, fixed[0].mu), (best.0, best.1));
    for (i, sel) in fixed.iter().enumerate() {
        assert!((sel.trajectory.final_psnr() - best.2[i]).abs() < 1e-9);
    }
    let oracle = search_oracle(&s, &IdentityDenoiser, &sigmas, &mus, iterations).unwrap();
    for (i, sel) in oracle.iter().enumerate() {
        let top = table.iter().map(|r| r.2[i]).fold(f64::NEG_INFINITY, f64::max);
        assert!((sel.trajectory.final_psnr() - top).abs() < 1e-9);
        assert!(sel.trajectory.final_psnr() >= fixed[i].trajectory.final_psnr() - 1e-9);
    }
}

#[test]
fn grid_results_do_not_depend_on_batching() {
    let s = state(2);
    let a = evaluate_grid(&s, &IdentityDenoiser, &[0.03, 0.08], &[0.1, 1.0], 3, 1).unwrap();
    let b = evaluate_grid(&s, &IdentityDenoiser, &[0.03, 0.08], &[0.1, 1.0], 3, 64).unwrap();
    assert_eq!(a.runs.len(), 4);
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        for (x, y) in ra.iter().zip(rb) {
            for (p, q) in x.psnr.iter().zip(&y.psnr) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }
    assert_eq!(a.point(1), (0.03, 1.0));
    assert_eq!(a.point(2), (0.08, 0.1));
    assert!(evaluate_grid(&s, &IdentityDenoiser, &[], &[0.1], 3, 1).is_err());
}
