use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use candle_core::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{reconstruct, PolicySnapshot};
use crate::baselines::{evaluate_grid, optimal_early_stop, run_fixed, run_handcrafted, GridEvaluation, PolicySpec};
use crate::denoiser::DenoiserHandle;
use crate::env::{initial_state, EnvState, Environment, Problem};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::forward::PIXEL_SCALE;
use crate::task::{ModelFactory, Setting, Task};

/// One reconstruction, one CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub image_id: String,
    pub task: Task,
    pub accel_or_alpha: f64,
    pub sigma_n: f64,
    pub policy: String,
    pub seed: u64,
    pub psnr_db: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
}

impl ResultRecord {
    pub fn setting(&self) -> Setting {
        Setting {
            task: self.task,
            level: self.accel_or_alpha,
            sigma_n: self.sigma_n,
        }
    }
}

/// PSNR after every iteration of one reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub image_id: String,
    pub task: Task,
    pub accel_or_alpha: f64,
    pub sigma_n: f64,
    pub policy: String,
    pub seed: u64,
    pub psnr: Vec<f64>,
}

/// Mean over images of one `(setting, policy)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub task: Task,
    pub accel_or_alpha: f64,
    pub sigma_n: f64,
    pub policy: String,
    pub count: usize,
    pub mean_psnr_db: f64,
    pub mean_iterations: f64,
    pub mean_wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub max_iterations: usize,
    /// Search grid, normalized strengths.
    pub sigmas: Vec<f64>,
    pub mus: Vec<f64>,
    pub early_stop_variants: bool,
    pub timing: bool,
    /// Keep the final iterate of every record.
    pub keep_images: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub records: Vec<ResultRecord>,
    pub traces: Vec<TraceRecord>,
    /// Final iterates `[1, H, W]`, parallel to `records` when kept.
    pub images: Vec<Field>,
}

/// Measurement seed of one image under one setting. Depends on the image
/// name rather than its position, so subsets reproduce the full run.
pub fn measurement_seed(seed: u64, image_id: &str, setting: &Setting) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    h.update(setting.task.as_str().as_bytes());
    h.update(setting.level.to_le_bytes());
    h.update(setting.sigma_n.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Initial states of every image under `setting`, in input order.
pub fn setting_state(
    images: &[(String, Tensor)],
    setting: &Setting,
    seed: u64,
    factory: &mut ModelFactory,
) -> Result<EnvState> {
    let mut problems: Vec<Problem> = Vec::with_capacity(images.len());
    let mut seeds = Vec::with_capacity(images.len());
    for (id, img) in images {
        let s = measurement_seed(seed, id, setting);
        problems.push(factory.problem(img, setting, s)?);
        seeds.push(s);
    }
    initial_state(&problems, &seeds)
}

struct Run {
    psnr: Vec<f64>,
    iterations: usize,
    image: Field,
    seconds: f64,
}

impl Run {
    fn final_psnr(&self) -> f64 {
        self.psnr.last().copied().unwrap_or(f64::NAN)
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed().as_secs_f64()))
}

fn per_image(state: &EnvState, f: impl Fn(&EnvState) -> Result<(Vec<f64>, usize, Field)> + Sync) -> Result<Vec<Run>> {
    (0..state.batch())
        .into_par_iter()
        .map(|i| {
            let one = state.select(&[i])?;
            let ((psnr, iterations, image), seconds) = timed(|| f(&one))?;
            Ok(Run {
                psnr,
                iterations,
                image,
                seconds,
            })
        })
        .collect()
}

fn single<T>(mut v: Vec<T>) -> Result<T> {
    v.pop().ok_or(Error::Empty("batch"))
}

/// Evaluates every policy on every image, setting and seed. Records are
/// ordered by setting, seed, policy, then image. Each image runs alone, so
/// results do not depend on which other images are evaluated.
pub fn evaluate_policy(
    images: &[(String, Tensor)],
    settings: &[Setting],
    policies: &[PolicySpec],
    seeds: &[u64],
    prior: DenoiserHandle,
    factory: &mut ModelFactory,
    options: &EvalOptions,
) -> Result<Evaluation> {
    if images.is_empty() {
        return Err(Error::Empty("image set"));
    }
    if policies.is_empty() {
        return Err(Error::Empty("policy list"));
    }
    let mut learned: HashMap<usize, (PolicySnapshot, Environment)> = HashMap::new();
    for (p, spec) in policies.iter().enumerate() {
        if let PolicySpec::Learned { checkpoint } = spec {
            let config = PolicySnapshot::read_config(checkpoint)?;
            let env = Environment::new(config.env.clone(), prior.clone())?;
            learned.insert(p, (PolicySnapshot::load(checkpoint, &env)?, env));
        }
    }
    let iters = options.max_iterations;
    let mut out = Evaluation::default();

    for setting in settings {
        for &seed in seeds {
            let state = setting_state(images, setting, seed, factory)?;
            let mut grid: Option<(GridEvaluation, f64)> = None;
            for (p, spec) in policies.iter().enumerate() {
                let runs: Vec<Run> = match spec {
                    PolicySpec::Fixed { sigma, mu } => per_image(&state, |s| {
                        let t = single(run_fixed(s, prior.as_ref(), sigma / PIXEL_SCALE, *mu, iters)?)?;
                        Ok((t.psnr, iters, t.image))
                    })?,
                    PolicySpec::Handcrafted { lambda } => per_image(&state, |s| {
                        let t = single(run_handcrafted(s, prior.as_ref(), *lambda, iters)?)?;
                        Ok((t.psnr, iters, t.image))
                    })?,
                    PolicySpec::FixedOptimal | PolicySpec::Oracle => {
                        if grid.is_none() {
                            let g = timed(|| evaluate_grid(&state, prior.as_ref(), &options.sigmas, &options.mus, iters, 32))?;
                            grid = Some(g);
                        }
                        let (g, seconds) = grid.as_ref().expect("grid evaluated above");
                        let picks = if matches!(spec, PolicySpec::Oracle) { g.oracle() } else { g.fixed_optimal() };
                        let share = seconds / images.len() as f64;
                        picks
                            .into_iter()
                            .map(|s| Run {
                                iterations: s.trajectory.iterations(),
                                psnr: s.trajectory.psnr,
                                image: s.trajectory.image,
                                seconds: share,
                            })
                            .collect()
                    }
                    PolicySpec::Learned { .. } => {
                        let (snap, env) = &learned[&p];
                        per_image(&state, |s| {
                            let r = single(reconstruct(&snap.agent.policy, env, s)?)?;
                            Ok((r.psnr_trace, r.iterations, r.image))
                        })?
                    }
                };
                let name = spec.name();
                for (i, run) in runs.iter().enumerate() {
                    push(&mut out, &images[i].0, setting, &name, seed, run, run.final_psnr(), run.iterations, options);
                }
                if options.early_stop_variants && !matches!(spec, PolicySpec::Learned { .. }) {
                    let starred = format!("{name}*");
                    for (i, run) in runs.iter().enumerate() {
                        let (best, at) = optimal_early_stop(&run.psnr)?;
                        push(&mut out, &images[i].0, setting, &starred, seed, run, best, at, options);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn push(
    out: &mut Evaluation,
    image_id: &str,
    setting: &Setting,
    policy: &str,
    seed: u64,
    run: &Run,
    psnr_db: f64,
    iterations: usize,
    options: &EvalOptions,
) {
    out.records.push(ResultRecord {
        image_id: image_id.into(),
        task: setting.task,
        accel_or_alpha: setting.level,
        sigma_n: setting.sigma_n,
        policy: policy.into(),
        seed,
        psnr_db,
        iterations,
        wall_time_s: if options.timing { run.seconds } else { 0.0 },
    });
    out.traces.push(TraceRecord {
        image_id: image_id.into(),
        task: setting.task,
        accel_or_alpha: setting.level,
        sigma_n: setting.sigma_n,
        policy: policy.into(),
        seed,
        psnr: run.psnr[..iterations.min(run.psnr.len())].to_vec(),
    });
    if options.keep_images {
        out.images.push(run.image.clone());
    }
}

/// Per-cell means, in order of first appearance.
pub fn aggregate(records: &[ResultRecord]) -> Vec<AggregateRecord> {
    let mut out: Vec<AggregateRecord> = Vec::new();
    for r in records {
        let cell = out.iter_mut().find(|a| {
            a.task == r.task && a.accel_or_alpha == r.accel_or_alpha && a.sigma_n == r.sigma_n && a.policy == r.policy
        });
        let a = match cell {
            Some(a) => a,
            None => {
                out.push(AggregateRecord {
                    task: r.task,
                    accel_or_alpha: r.accel_or_alpha,
                    sigma_n: r.sigma_n,
                    policy: r.policy.clone(),
                    count: 0,
                    mean_psnr_db: 0.0,
                    mean_iterations: 0.0,
                    mean_wall_time_s: 0.0,
                });
                out.last_mut().expect("just pushed")
            }
        };
        a.count += 1;
        a.mean_psnr_db += r.psnr_db;
        a.mean_iterations += r.iterations as f64;
        a.mean_wall_time_s += r.wall_time_s;
    }
    for a in &mut out {
        let n = a.count as f64;
        a.mean_psnr_db /= n;
        a.mean_iterations /= n;
        a.mean_wall_time_s /= n;
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

pub fn write_traces(path: &Path, traces: &[TraceRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub const RESULTS_FILE: &str = "results.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const TRACES_FILE: &str = "traces.jsonl";

/// Writes `results.csv`, `aggregate.csv` and `traces.jsonl` into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join(RESULTS_FILE), &eval.records)?;
    write_csv(&dir.join(AGGREGATE_FILE), &aggregate(&eval.records))?;
    write_traces(&dir.join(TRACES_FILE), &eval.traces)
}
