//! Experiment plumbing: configs, datasets, batch evaluation and reports.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod phantom;
pub mod report;

pub use config::ExperimentConfig;
pub use dataset::{ingest_dataset, load_image, write_png, Dataset};
pub use eval::{aggregate, evaluate_policy, write_evaluation, EvalOptions, Evaluation, ResultRecord, TraceRecord};
pub use phantom::{phantom, phantom_set, PhantomKind};
pub use report::{write_curves, write_table, ReportKind, Table};

use std::path::Path;

/// Writes a phantom set as 8-bit PNGs named by phantom id.
pub fn write_phantoms(dir: &Path, count: usize, size: usize, seed: u64) -> crate::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    phantom_set(count, (size, size), seed)?
        .into_iter()
        .map(|(id, img)| {
            let path = dir.join(format!("{id}.png"));
            write_png(&img, &path)?;
            Ok(path)
        })
        .collect()
}
