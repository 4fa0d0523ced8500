use crate::engine::admm_iterate;
use crate::env::{decode_params, EnvState, Environment};
use crate::error::Result;
use crate::field::Field;
use crate::forward::psnr_values;

use super::PolicyNet;

/// Outcome of one greedy episode.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Final iterate `x`, `[1, H, W]`.
    pub image: Field,
    pub iterations: usize,
    /// PSNR after every inner iteration (empty without ground truth).
    pub psnr_trace: Vec<f64>,
    pub final_psnr: Option<f64>,
    /// `(σ, μ)` used at every inner iteration.
    pub schedule: Vec<(f64, f64)>,
}

/// Runs the deterministic policy on every item of `state`: terminate when
/// `π1(terminate|s) > ½` (from `t = 1` on), otherwise run the block with
/// `π2(s)`, until termination or `t = N`.
pub fn reconstruct(policy: &PolicyNet, env: &Environment, state: &EnvState) -> Result<Vec<Reconstruction>> {
    let n = state.batch();
    let mut done: Vec<Option<Reconstruction>> = vec![None; n];
    let mut traces: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut schedules: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    let mut ids: Vec<usize> = (0..n).collect();
    let mut cur = state.detach();

    while !ids.is_empty() {
        let out = policy.forward(&env.observe(&cur)?)?;
        let p = out.p_terminate()?;
        let stop: Vec<bool> = (0..ids.len())
            .map(|i| (p[i] > 0.5 && cur.t[i] >= 1) || cur.t[i] >= env.config.max_steps)
            .collect();
        for (i, &id) in ids.iter().enumerate() {
            if stop[i] {
                let one = cur.select(&[i])?;
                let final_psnr = match &one.x_gt {
                    Some(_) => Some(one.psnr()?.to_vec1::<f64>()?[0]),
                    None => None,
                };
                done[id] = Some(Reconstruction {
                    image: one.opt.x.clone(),
                    iterations: one.opt.k[0],
                    psnr_trace: std::mem::take(&mut traces[id]),
                    final_psnr,
                    schedule: std::mem::take(&mut schedules[id]),
                });
            }
        }
        let go: Vec<usize> = (0..ids.len()).filter(|&i| !stop[i]).collect();
        if go.is_empty() {
            break;
        }
        let raw = out.raw_params.detach().contiguous()?.index_select(&crate::field::indices(&go)?, 0)?;
        let mut next = cur.select(&go)?;
        ids = go.iter().map(|&i| ids[i]).collect();
        let params = decode_params(&raw, &env.config)?;
        for j in 0..params.len() {
            let (sigma, mu) = params.step(j)?;
            next.opt = admm_iterate(&next.opt, &sigma, &mu, &next.obs, &next.physics, env.prior.as_ref())?;
            let (sv, mv) = (sigma.to_vec1::<f64>()?, mu.to_vec1::<f64>()?);
            for (i, &id) in ids.iter().enumerate() {
                schedules[id].push((sv[i], mv[i]));
            }
            if let Some(gt) = &next.x_gt {
                for (i, v) in psnr_values(&next.opt.x, gt)?.into_iter().enumerate() {
                    traces[ids[i]].push(v);
                }
            }
        }
        for t in next.t.iter_mut() {
            *t += 1;
        }
        cur = next;
    }
    Ok(done.into_iter().map(|r| r.expect("every episode finishes")).collect())
}
