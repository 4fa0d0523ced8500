//! Non-learned parameter policies: fixed, handcrafted, and the grid-searched
//! fixed-optimal and per-image oracle policies.

use std::io::Write;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::engine::admm_iterate;
use crate::env::EnvState;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::forward::{psnr_values, PIXEL_SCALE};

pub const MAX_ITERATIONS: usize = 30;
pub const FIXED_SIGMA: f64 = 15.0 / 255.0;
pub const FIXED_MU: f64 = 0.1;
/// First strength of the handcrafted schedule, 8-bit units.
pub const HANDCRAFTED_START: f64 = 35.0;
pub const HANDCRAFTED_LAMBDA: f64 = 0.23;

/// Denoising strengths searched, normalized units.
pub fn sigma_grid() -> Vec<f64> {
    [1.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0]
        .iter()
        .map(|s| s / PIXEL_SCALE)
        .collect()
}

pub fn mu_grid() -> Vec<f64> {
    vec![0.01, 0.03, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Fixed {
        sigma: f64,
        mu: f64,
    },
    Handcrafted {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    FixedOptimal,
    Oracle,
    Learned {
        checkpoint: std::path::PathBuf,
    },
}

fn default_lambda() -> f64 {
    HANDCRAFTED_LAMBDA
}

impl PolicySpec {
    pub fn name(&self) -> String {
        match self {
            PolicySpec::Fixed { .. } => "fixed".into(),
            PolicySpec::Handcrafted { .. } => "handcrafted".into(),
            PolicySpec::FixedOptimal => "fixed_optimal".into(),
            PolicySpec::Oracle => "oracle".into(),
            PolicySpec::Learned { .. } => "learned".into(),
        }
    }
}

/// PSNR after every iteration and the final iterate of one run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub psnr: Vec<f64>,
    pub image: Field,
}

impl Trajectory {
    pub fn final_psnr(&self) -> f64 {
        self.psnr.last().copied().unwrap_or(f64::NAN)
    }

    pub fn iterations(&self) -> usize {
        self.psnr.len()
    }
}

/// Runs per-item schedules `[B, T]` from `state` and records PSNR after every
/// iteration. Needs ground truth.
pub fn run_schedule(state: &EnvState, prior: &dyn Denoiser, sigmas: &Tensor, mus: &Tensor) -> Result<Vec<Trajectory>> {
    let gt = state.x_gt.as_ref().ok_or(Error::MissingGroundTruth("PSNR traces"))?;
    let (b, t) = sigmas.dims2()?;
    if b != state.batch() || mus.dims() != [b, t] {
        return Err(Error::shape(&[state.batch(), t], mus.dims()));
    }
    let mut opt = state.opt.detach();
    let mut traces = vec![Vec::with_capacity(t); b];
    for k in 0..t {
        let s = sigmas.narrow(1, k, 1)?.squeeze(1)?;
        let m = mus.narrow(1, k, 1)?.squeeze(1)?;
        opt = admm_iterate(&opt, &s, &m, &state.obs, &state.physics, prior)?;
        for (i, v) in psnr_values(&opt.x, gt)?.into_iter().enumerate() {
            traces[i].push(v);
        }
    }
    traces
        .into_iter()
        .enumerate()
        .map(|(i, psnr)| {
            Ok(Trajectory {
                psnr,
                image: opt.x.narrow(0, i, 1)?,
            })
        })
        .collect()
}

fn constant_schedule(b: usize, iterations: usize, sigma: f64, mu: f64) -> Result<(Tensor, Tensor)> {
    let dev = &crate::field::DEVICE;
    Ok((
        Tensor::full(sigma, (b, iterations), dev)?,
        Tensor::full(mu, (b, iterations), dev)?,
    ))
}

/// `iterations` steps at constant `(σ, μ)` for every item.
pub fn run_fixed(state: &EnvState, prior: &dyn Denoiser, sigma: f64, mu: f64, iterations: usize) -> Result<Vec<Trajectory>> {
    if !(sigma > 0.0 && mu > 0.0) {
        return Err(Error::invalid("fixed parameters must be positive"));
    }
    let (s, m) = constant_schedule(state.batch(), iterations, sigma, mu)?;
    run_schedule(state, prior, &s, &m)
}

/// Handcrafted schedule for a problem with 8-bit noise level `sigma_n`:
/// `σ_k` log-spaced from 35/255 down to `max(σ_n, 1)/255`, and
/// `μ_k = λ (max(σ_n, 1) / (255 σ_k))²`.
pub fn handcrafted_schedule(sigma_n: f64, iterations: usize, lambda: f64) -> Vec<(f64, f64)> {
    let floor = sigma_n.max(1.0);
    let (a, b) = (HANDCRAFTED_START.ln(), floor.ln());
    (0..iterations)
        .map(|k| {
            let frac = if iterations > 1 { k as f64 / (iterations - 1) as f64 } else { 0.0 };
            let s8 = (a + (b - a) * frac).exp();
            (s8 / PIXEL_SCALE, lambda * (floor / s8).powi(2))
        })
        .collect()
}

pub fn run_handcrafted(state: &EnvState, prior: &dyn Denoiser, lambda: f64, iterations: usize) -> Result<Vec<Trajectory>> {
    let noise = state.noise.to_vec1::<f64>()?;
    let (mut s, mut m) = (Vec::new(), Vec::new());
    for n in noise {
        for (sig, mu) in handcrafted_schedule(n * PIXEL_SCALE, iterations, lambda) {
            s.push(sig);
            m.push(mu);
        }
    }
    let b = state.batch();
    let dev = &crate::field::DEVICE;
    run_schedule(
        state,
        prior,
        &Tensor::from_vec(s, (b, iterations), dev)?,
        &Tensor::from_vec(m, (b, iterations), dev)?,
    )
}

/// `(best PSNR, 1-based iteration)`, ties to the earliest iteration.
pub fn optimal_early_stop(trace: &[f64]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &v) in trace.iter().enumerate() {
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, i + 1));
        }
    }
    best.ok_or(Error::Empty("PSNR trace"))
}

/// Trajectories of every image under every `(σ, μ)` pair.
#[derive(Clone, Debug)]
pub struct GridEvaluation {
    pub sigmas: Vec<f64>,
    pub mus: Vec<f64>,
    /// `runs[g][i]`: grid point `g = si · |μ| + mi`, image `i`.
    pub runs: Vec<Vec<Trajectory>>,
}

/// Selected parameters and the resulting trajectories.
#[derive(Clone, Debug)]
pub struct Selection {
    pub sigma: f64,
    pub mu: f64,
    pub trajectory: Trajectory,
}

impl GridEvaluation {
    pub fn point(&self, g: usize) -> (f64, f64) {
        (self.sigmas[g / self.mus.len()], self.mus[g % self.mus.len()])
    }

    pub fn mean_final(&self, g: usize) -> f64 {
        let r = &self.runs[g];
        r.iter().map(Trajectory::final_psnr).sum::<f64>() / r.len() as f64
    }

    /// The pair maximizing the mean final PSNR (first in grid order on ties)
    /// and its per-image trajectories.
    pub fn fixed_optimal(&self) -> Vec<Selection> {
        let mut best = 0;
        for g in 1..self.runs.len() {
            if self.mean_final(g) > self.mean_final(best) {
                best = g;
            }
        }
        let (sigma, mu) = self.point(best);
        self.runs[best]
            .iter()
            .map(|t| Selection {
                sigma,
                mu,
                trajectory: t.clone(),
            })
            .collect()
    }

    /// The per-image maximizer of the final PSNR.
    pub fn oracle(&self) -> Vec<Selection> {
        let images = self.runs[0].len();
        (0..images)
            .map(|i| {
                let mut best = 0;
                for g in 1..self.runs.len() {
                    if self.runs[g][i].final_psnr() > self.runs[best][i].final_psnr() {
                        best = g;
                    }
                }
                let (sigma, mu) = self.point(best);
                Selection {
                    sigma,
                    mu,
                    trajectory: self.runs[best][i].clone(),
                }
            })
            .collect()
    }
}

/// Evaluates the full grid, batching up to `chunk` runs at a time.
pub fn evaluate_grid(
    state: &EnvState,
    prior: &dyn Denoiser,
    sigmas: &[f64],
    mus: &[f64],
    iterations: usize,
    chunk: usize,
) -> Result<GridEvaluation> {
    if sigmas.is_empty() || mus.is_empty() {
        return Err(Error::Empty("parameter grid"));
    }
    let n = state.batch();
    let points: Vec<(f64, f64)> = sigmas.iter().flat_map(|&s| mus.iter().map(move |&m| (s, m))).collect();
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|g| (0..n).map(move |i| (g, i))).collect();
    let mut flat: Vec<Trajectory> = Vec::with_capacity(jobs.len());
    for part in jobs.chunks(chunk.max(1)) {
        let items: Vec<usize> = part.iter().map(|&(_, i)| i).collect();
        let sub = state.select(&items)?;
        let dev = &crate::field::DEVICE;
        let s: Vec<f64> = part.iter().flat_map(|&(g, _)| std::iter::repeat_n(points[g].0, iterations)).collect();
        let m: Vec<f64> = part.iter().flat_map(|&(g, _)| std::iter::repeat_n(points[g].1, iterations)).collect();
        let b = part.len();
        flat.extend(run_schedule(
            &sub,
            prior,
            &Tensor::from_vec(s, (b, iterations), dev)?,
            &Tensor::from_vec(m, (b, iterations), dev)?,
        )?);
    }
    let mut runs = Vec::with_capacity(points.len());
    let mut it = flat.into_iter();
    for _ in 0..points.len() {
        runs.push(it.by_ref().take(n).collect());
    }
    Ok(GridEvaluation {
        sigmas: sigmas.to_vec(),
        mus: mus.to_vec(),
        runs,
    })
}

pub fn search_fixed_optimal(state: &EnvState, prior: &dyn Denoiser, sigmas: &[f64], mus: &[f64], iterations: usize) -> Result<Vec<Selection>> {
    Ok(evaluate_grid(state, prior, sigmas, mus, iterations, 32)?.fixed_optimal())
}

pub fn search_oracle(state: &EnvState, prior: &dyn Denoiser, sigmas: &[f64], mus: &[f64], iterations: usize) -> Result<Vec<Selection>> {
    Ok(evaluate_grid(state, prior, sigmas, mus, iterations, 32)?.oracle())
}

/// Persisted search outcome for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub image_id: String,
    pub policy: String,
    pub sigma: f64,
    pub mu: f64,
    pub psnr_trace: Vec<f64>,
}

pub fn search_records(policy: &str, ids: &[String], selections: &[Selection]) -> Vec<SearchRecord> {
    ids.iter()
        .zip(selections)
        .map(|(id, s)| SearchRecord {
            image_id: id.clone(),
            policy: policy.into(),
            sigma: s.sigma,
            mu: s.mu,
            psnr_trace: s.trajectory.psnr.clone(),
        })
        .collect()
}

pub fn write_search_records<W: Write>(mut out: W, records: &[SearchRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
