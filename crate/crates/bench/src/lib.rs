//! Fixtures shared by the benchmarks.

use pnp_core::env::{EnvState, Environment};
use pnp_core::harness::phantom_set;
use pnp_core::task::{ModelFactory, Setting};
use pnp_core::Result;

/// Initial states for `count` phantoms of side `size` under `setting`.
pub fn states(env: &Environment, count: usize, size: usize, setting: Setting) -> Result<EnvState> {
    let mut factory = ModelFactory::default();
    let mut problems = Vec::with_capacity(count);
    let mut seeds = Vec::with_capacity(count);
    for (i, (_, img)) in phantom_set(count, (size, size), 3)?.iter().enumerate() {
        problems.push(factory.problem(img, &setting, i as u64)?);
        seeds.push(i as u64);
    }
    env.reset(&problems, &seeds)
}
