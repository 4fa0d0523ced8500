use std::collections::HashMap;

use candle_core::Tensor;
use pnp_core::agent::{
    config_hash, model_based_q, reconstruct, termination_policy_loss, value_loss, Agent, AgentConfig, NetConfig,
    PolicyNet, PolicySnapshot, StateBuffer, ValueNet,
};
use pnp_core::denoiser::IdentityDenoiser;
use pnp_core::env::{EnvConfig, EnvState, Environment, Problem, OBS_PLANES};
use pnp_core::field::{tensor_from_fn, DEVICE};
use pnp_core::forward::{CsmriModel, KSpaceMask, MeasurementModel, SamplingPattern};
use pnp_core::harness::phantom_set;
use pnp_core::nn::{load_tensors, save_tensors};
use pnp_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 16;

fn net() -> NetConfig {
    NetConfig {
        widths: vec![4, 4, 8, 8],
        hidden: 8,
    }
}

fn env_config() -> EnvConfig {
    EnvConfig {
        block_len: 2,
        max_steps: 3,
        ..EnvConfig::default()
    }
}

fn env() -> Environment {
    Environment::with_prior(env_config(), IdentityDenoiser).unwrap()
}

fn states(e: &Environment, noise_levels: &[f64]) -> EnvState {
    let mask = KSpaceMask::generate((SIDE, SIDE), SamplingPattern::Radial, 0.3, 0).unwrap();
    let imgs = phantom_set(noise_levels.len(), (SIDE, SIDE), 80).unwrap();
    let problems: Vec<Problem> = imgs
        .iter()
        .zip(noise_levels)
        .map(|((_, img), &s)| Problem::synthetic(img, MeasurementModel::Csmri(CsmriModel::new(mask.clone(), s).unwrap())).unwrap())
        .collect();
    let seeds: Vec<u64> = (0..problems.len() as u64).collect();
    e.reset(&problems, &seeds).unwrap()
}

fn config() -> AgentConfig {
    AgentConfig {
        env: env_config(),
        net: net(),
        batch_size: 2,
        seed: 5,
        ..AgentConfig::default()
    }
}

fn noise_of(s: &EnvState) -> Vec<f64> {
    s.noise.to_vec1::<f64>().unwrap().iter().map(|v| (v * 255.0).round()).collect()
}

#[test]
fn buffer_is_a_bounded_fifo() {
    let e = env();
    let mut buf = StateBuffer::new(3).unwrap();
    assert!(buf.sample(1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    buf.push(&states(&e, &[1.0, 2.0])).unwrap();
    buf.push(&states(&e, &[3.0, 4.0, 5.0])).unwrap();
    assert_eq!(buf.len(), 3);
    let kept: Vec<f64> = (0..3).flat_map(|i| noise_of(buf.get(i).unwrap())).collect();
    assert_eq!(kept, vec![3.0, 4.0, 5.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut drawn = noise_of(&buf.sample(3, &mut rng).unwrap());
    drawn.sort_by(f64::total_cmp);
    assert_eq!(drawn, vec![3.0, 4.0, 5.0]);
    assert_eq!(buf.sample(7, &mut rng).unwrap().batch(), 7);
    assert!(StateBuffer::new(0).is_err());
}

#[test]
fn ema_is_a_geometric_average() {
    let target = ValueNet::new(OBS_PLANES, &net(), 1).unwrap();
    let source = ValueNet::new(OBS_PLANES, &net(), 2).unwrap();
    let start: HashMap<String, Tensor> = target.store.tensors().unwrap().into_iter().collect();
    let tau: f64 = 0.1;
    let steps = 7;
    for _ in 0..steps {
        target.store.ema_toward(&source.store, tau).unwrap();
    }
    let keep = (1.0 - tau).powi(steps);
    let expected: HashMap<String, Tensor> = source
        .store
        .tensors()
        .unwrap()
        .into_iter()
        .map(|(k, s)| {
            let v = ((&start[&k] * keep).unwrap() + (s * (1.0 - keep)).unwrap()).unwrap();
            (k, v)
        })
        .collect();
    let check = ValueNet::new(OBS_PLANES, &net(), 3).unwrap();
    check.store.assign(&expected).unwrap();
    assert!(target.store.max_abs_diff(&check.store).unwrap() < 1e-14);
}

#[test]
fn termination_loss_matches_its_definition() {
    let lp = Tensor::from_vec(vec![-0.1, -2.0, -0.7, -0.6, -1.5, -0.3], (3, 2), &DEVICE).unwrap();
    let loss = termination_policy_loss(&lp, &[0, 1, 1], &[2.0, -1.0, 4.0], &[true, true, false])
        .unwrap()
        .to_scalar::<f64>()
        .unwrap();
    let want = -(-0.1 * 2.0 + -0.6 * -1.0) / 3.0;
    assert!((loss - want).abs() < 1e-15);
    assert!(termination_policy_loss(&lp, &[0], &[1.0], &[true]).is_err());

    let v = Tensor::from_vec(vec![1.0, 2.0], 2, &DEVICE).unwrap();
    let y = Tensor::from_vec(vec![0.0, 4.0], 2, &DEVICE).unwrap();
    assert_eq!(value_loss(&v, &y).unwrap().to_scalar::<f64>().unwrap(), 0.5 * (1.0 + 4.0) / 2.0);
}

/// Names of the policy parameters that receive a nonzero gradient.
fn touched(policy: &PolicyNet, loss: &Tensor) -> Vec<String> {
    let grads = loss.backward().unwrap();
    policy
        .store
        .iter()
        .filter(|(_, var)| {
            grads.get(var.as_tensor()).is_some_and(|g| g.abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap() > 0.0)
        })
        .map(|(k, _)| k.clone())
        .collect()
}

#[test]
fn each_loss_reaches_only_its_own_parameters() {
    let e = env();
    let s = states(&e, &[10.0, 20.0]);
    let policy = PolicyNet::new(OBS_PLANES, e.config.action_dim(), &net(), 4).unwrap();
    let value = ValueNet::new(OBS_PLANES, &net(), 6).unwrap();
    let out = policy.forward(&e.observe(&s).unwrap()).unwrap();

    let l1 = termination_policy_loss(&out.log_probs, &[1, 0], &[1.0, -0.5], &[true, true]).unwrap();
    let t1 = touched(&policy, &l1);
    assert!(t1.iter().any(|k| k.starts_with("term")));
    assert!(t1.iter().any(|k| k.starts_with("trunk")));
    assert!(t1.iter().all(|k| PolicyNet::is_theta1(k)));

    let q = model_based_q(&e, &value, &s, &out.raw_params).unwrap();
    let l2 = q.mean_all().unwrap().neg().unwrap();
    let t2 = touched(&policy, &l2);
    assert!(t2.iter().any(|k| k.starts_with("param")));
    assert!(t2.iter().all(|k| PolicyNet::is_theta2(k)));
}

#[test]
fn greedy_reconstruction_is_deterministic_and_block_aligned() {
    let e = env();
    let s = states(&e, &[5.0, 15.0, 25.0]);
    let policy = PolicyNet::new(OBS_PLANES, e.config.action_dim(), &net(), 9).unwrap();
    let a = reconstruct(&policy, &e, &s).unwrap();
    let b = reconstruct(&policy, &e, &s).unwrap();
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.iterations, y.iterations);
        assert_eq!(x.image.max_abs_diff(&y.image).unwrap(), 0.0);
        assert!(x.iterations >= 2 && x.iterations <= 6 && x.iterations % 2 == 0);
        assert_eq!(x.psnr_trace.len(), x.iterations);
        assert_eq!(x.schedule.len(), x.iterations);
        assert_eq!(x.final_psnr, x.psnr_trace.last().copied());
    }
    // Batched and single-item runs agree.
    let alone = reconstruct(&policy, &e, &s.select(&[1]).unwrap()).unwrap();
    assert!(alone[0].image.max_abs_diff(&a[1].image).unwrap() < 1e-12);
}

#[test]
fn snapshots_round_trip_and_detect_tampering() {
    let e = env();
    let cfg = config();
    let mut agent = Agent::new(&e, &cfg.net, cfg.model_free, cfg.ema_rate, cfg.seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    agent.set_learning_rates(1e-3, 1e-3);
    agent.gradient_step(&e, &states(&e, &[10.0, 20.0]), &mut rng).unwrap();
    let snap = PolicySnapshot {
        agent,
        config: cfg.clone(),
        history: Vec::new(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.safetensors");
    snap.save(&path).unwrap();
    assert_eq!(PolicySnapshot::read_config(&path).unwrap(), cfg);

    let back = PolicySnapshot::load(&path, &e).unwrap();
    assert_eq!(back.agent.steps, snap.agent.steps);
    assert_eq!(back.agent.policy.store.max_abs_diff(&snap.agent.policy.store).unwrap(), 0.0);
    assert_eq!(back.agent.target.store.max_abs_diff(&snap.agent.target.store).unwrap(), 0.0);
    let s = states(&e, &[12.0]);
    let (x, y) = (
        reconstruct(&snap.agent.policy, &e, &s).unwrap(),
        reconstruct(&back.agent.policy, &e, &s).unwrap(),
    );
    assert_eq!(x[0].image.max_abs_diff(&y[0].image).unwrap(), 0.0);

    let other = Environment::with_prior(EnvConfig { max_steps: 4, ..env_config() }, IdentityDenoiser).unwrap();
    assert!(matches!(PolicySnapshot::load(&path, &other), Err(Error::Checkpoint { .. })));

    let (tensors, mut meta) = load_tensors(&path).unwrap();
    let mut edited = cfg.clone();
    edited.seed += 1;
    assert_ne!(config_hash(&edited).unwrap(), config_hash(&cfg).unwrap());
    meta.insert("config".into(), serde_json::to_string(&edited).unwrap());
    let mut list: Vec<(String, Tensor)> = tensors.into_iter().collect();
    list.sort_by(|a, b| a.0.cmp(&b.0));
    save_tensors(&path, &list, meta).unwrap();
    assert!(matches!(PolicySnapshot::load(&path, &e), Err(Error::Checkpoint { .. })));
}

#[test]
fn raw_outputs_stay_in_the_decodable_range() {
    let e = env();
    let policy = PolicyNet::new(OBS_PLANES, e.config.action_dim(), &net(), 11).unwrap();
    let obs = tensor_from_fn(&[2, OBS_PLANES, SIDE, SIDE], |i| ((i % 13) as f64 - 6.0) * 100.0).unwrap();
    let out = policy.forward(&obs).unwrap();
    let raw: Vec<f64> = out.raw_params.flatten_all().unwrap().to_vec1().unwrap();
    assert!(raw.iter().all(|&v| v > 0.0 && v <= 1.0));
    let p = out.p_terminate().unwrap();
    assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn policy_outputs_follow_observations() {
    let e = env();
    let policy = PolicyNet::new(OBS_PLANES, e.config.action_dim(), &net(), 12).unwrap();
    let s = states(&e, &[10.0]);
    let obs = e.observe(&s).unwrap();
    let a = policy.forward(&obs).unwrap();
    let b = policy.forward(&obs).unwrap();
    let diff = |x: &Tensor, y: &Tensor| (x - y).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
    assert_eq!(diff(&a.raw_params, &b.raw_params), 0.0);
    assert_eq!(diff(&a.log_probs, &b.log_probs), 0.0);

    let mut later = s.clone();
    later.t = vec![2];
    let c = policy.forward(&e.observe(&later).unwrap()).unwrap();
    assert!(diff(&a.raw_params, &c.raw_params) > 0.0);
    assert!(diff(&a.log_probs, &c.log_probs) > 0.0);
}

#[test]
fn value_loss_gradient_matches_finite_differences() {
    let e = env();
    let value = ValueNet::new(OBS_PLANES, &net(), 13).unwrap();
    let obs = e.observe(&states(&e, &[5.0, 25.0])).unwrap();
    let target = Tensor::from_vec(vec![0.7, -0.3], 2, &DEVICE).unwrap();
    let loss = |v: &ValueNet| value_loss(&v.forward(&obs).unwrap(), &target).unwrap();
    let grads = loss(&value).backward().unwrap();
    let names: Vec<String> = value.store.iter().map(|(k, _)| k.clone()).collect();
    let h = 1e-6;
    for name in names.iter().filter(|n| n.contains("head") || n.contains("stage3")) {
        let var = value.store.get(name).unwrap();
        let base: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let dims = var.dims().to_vec();
        let g: Vec<f64> = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let at = |delta: f64| {
            let mut w = base.clone();
            w[0] += delta;
            var.set(&Tensor::from_vec(w, dims.as_slice(), &DEVICE).unwrap()).unwrap();
            loss(&value).to_scalar::<f64>().unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        at(0.0);
        assert!((fd - g[0]).abs() <= 1e-3 * fd.abs().max(1e-6), "{name}: {fd} vs {}", g[0]);
    }
}

#[test]
fn positive_termination_advantage_raises_p_terminate() {
    use pnp_core::agent::TERMINATE;
    use pnp_core::nn::{Adam, AdamConfig};
    let e = env();
    let policy = PolicyNet::new(OBS_PLANES, e.config.action_dim(), &net(), 14).unwrap();
    let obs = e.observe(&states(&e, &[5.0, 30.0])).unwrap();
    let before = policy.forward(&obs).unwrap().p_terminate().unwrap();
    let mut adam = Adam::new(AdamConfig { lr: 1e-3, ..AdamConfig::default() });
    for _ in 0..100 {
        let out = policy.forward(&obs).unwrap();
        let loss = termination_policy_loss(&out.log_probs, &[TERMINATE; 2], &[1.0, 1.0], &[true, true]).unwrap();
        adam.step(&policy.store, &loss.backward().unwrap(), PolicyNet::is_theta1).unwrap();
    }
    let after = policy.forward(&obs).unwrap().p_terminate().unwrap();
    for (b, a) in before.iter().zip(&after) {
        assert!(a > b, "{b} -> {a}");
    }
}

#[test]
fn sampled_likelihood_ratio_gradient_matches_its_expectation() {
    use candle_core::Var;
    use pnp_core::agent::log_softmax;
    use rand::Rng;
    let logits = Var::new(&[[0.3f64, -0.4]], &DEVICE).unwrap();
    let n = 10_000;
    let lp = log_softmax(&logits.as_tensor().broadcast_as((n, 2)).unwrap()).unwrap();
    let p1 = 1.0 / (1.0 + (0.3f64 - -0.4).exp());
    let p = [1.0 - p1, p1];
    let adv = [0.5, 2.0];
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let actions: Vec<usize> = (0..n).map(|_| usize::from(rng.random::<f64>() < p[1])).collect();
    let advantages: Vec<f64> = actions.iter().map(|&a| adv[a]).collect();
    let loss = termination_policy_loss(&lp, &actions, &advantages, &vec![true; n]).unwrap();
    let g: Vec<f64> = loss.backward().unwrap().get(logits.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    // ∇_l Σ_a p_a A_a = p ⊙ (A − ⟨p, A⟩); the loss is its negation.
    let mean = p[0] * adv[0] + p[1] * adv[1];
    for a in 0..2 {
        let exact = p[a] * (adv[a] - mean);
        assert!((-g[a] - exact).abs() <= 0.05 * exact.abs(), "{} vs {exact}", -g[a]);
    }
}
