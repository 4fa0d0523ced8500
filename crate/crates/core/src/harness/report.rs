use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Setting, Task};

use super::eval::{ResultRecord, TraceRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    /// Policy by setting grid of mean PSNR and iteration count.
    Table,
    /// Per-image PSNR against iteration.
    Curves,
}

impl FromStr for ReportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportKind::Table),
            "curves" => Ok(ReportKind::Curves),
            _ => Err(Error::invalid(format!("unknown report kind `{s}`, expected table or curves"))),
        }
    }
}

/// File-name-safe setting label.
pub fn setting_slug(s: &Setting) -> String {
    match s.task {
        Task::Csmri => format!("x{}_n{}", s.level, s.sigma_n),
        Task::Pr => format!("a{}", s.level),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub psnr_db: f64,
    pub iterations: f64,
    pub count: usize,
}

/// Mean PSNR and iterations per policy (rows) and setting (columns), in
/// order of first appearance.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub policies: Vec<String>,
    pub settings: Vec<Setting>,
    pub cells: Vec<Vec<Option<Cell>>>,
}

impl Table {
    pub fn from_records(records: &[ResultRecord]) -> Self {
        let mut policies: Vec<String> = Vec::new();
        let mut settings: Vec<Setting> = Vec::new();
        for r in records {
            if !policies.contains(&r.policy) {
                policies.push(r.policy.clone());
            }
            if !settings.contains(&r.setting()) {
                settings.push(r.setting());
            }
        }
        let mut sums = vec![vec![(0.0, 0.0, 0usize); settings.len()]; policies.len()];
        for r in records {
            let p = policies.iter().position(|x| *x == r.policy).expect("collected above");
            let s = settings.iter().position(|x| *x == r.setting()).expect("collected above");
            let c = &mut sums[p][s];
            c.0 += r.psnr_db;
            c.1 += r.iterations as f64;
            c.2 += 1;
        }
        let cells = sums
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|(p, i, n)| {
                        (n > 0).then(|| Cell {
                            psnr_db: p / n as f64,
                            iterations: i / n as f64,
                            count: n,
                        })
                    })
                    .collect()
            })
            .collect();
        Self {
            policies,
            settings,
            cells,
        }
    }

    pub fn get(&self, policy: &str, setting: &Setting) -> Option<&Cell> {
        let p = self.policies.iter().position(|x| x == policy)?;
        let s = self.settings.iter().position(|x| x == setting)?;
        self.cells[p][s].as_ref()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| policy |");
        for s in &self.settings {
            let _ = write!(out, " {} PSNR | {} #IT |", s.label(), s.label());
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(2 * self.settings.len()));
        out.push('\n');
        for (p, row) in self.policies.iter().zip(&self.cells) {
            let _ = write!(out, "| {p} |");
            for c in row {
                match c {
                    Some(c) => {
                        let _ = write!(out, " {:.2} | {:.1} |", c.psnr_db, c.iterations);
                    }
                    None => out.push_str(" - | - |"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["policy".to_string()];
        for s in &self.settings {
            header.push(format!("{}_psnr_db", setting_slug(s)));
            header.push(format!("{}_iterations", setting_slug(s)));
        }
        w.write_record(&header)?;
        for (p, row) in self.policies.iter().zip(&self.cells) {
            let mut rec = vec![p.clone()];
            for c in row {
                match c {
                    Some(c) => {
                        rec.push(c.psnr_db.to_string());
                        rec.push(c.iterations.to_string());
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes `table.md` and `table.csv`; returns the written paths.
pub fn write_table(dir: &Path, records: &[ResultRecord]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let table = Table::from_records(records);
    let md = dir.join("table.md");
    std::fs::write(&md, table.to_markdown())?;
    let csv = dir.join("table.csv");
    table.write_csv(&csv)?;
    Ok(vec![md, csv])
}

fn trace_setting(t: &TraceRecord) -> Setting {
    Setting {
        task: t.task,
        level: t.accel_or_alpha,
        sigma_n: t.sigma_n,
    }
}

/// Writes one `iteration,psnr_db` file per trace under `dir/curves`, and one
/// SVG per image, setting and seed with a line per policy.
pub fn write_curves(dir: &Path, traces: &[TraceRecord]) -> Result<Vec<PathBuf>> {
    let root = dir.join("curves");
    std::fs::create_dir_all(&root)?;
    let mut written = Vec::new();
    let mut groups: Vec<(String, Vec<&TraceRecord>)> = Vec::new();
    for t in traces {
        let policy = t.policy.replace('*', "_es");
        let stem = format!("{}_{}_s{}", t.image_id, setting_slug(&trace_setting(t)), t.seed);
        let path = root.join(format!("{stem}_{policy}.csv"));
        let mut body = String::from("iteration,psnr_db\n");
        for (k, v) in t.psnr.iter().enumerate() {
            let _ = writeln!(body, "{},{}", k + 1, v);
        }
        std::fs::write(&path, body)?;
        written.push(path);
        match groups.iter_mut().find(|(s, _)| *s == stem) {
            Some((_, g)) => g.push(t),
            None => groups.push((stem, vec![t])),
        }
    }
    for (stem, group) in groups {
        let path = root.join(format!("{stem}.svg"));
        plot_group(&path, &stem, &group)?;
        written.push(path);
    }
    Ok(written)
}

fn plot_group(path: &Path, title: &str, traces: &[&TraceRecord]) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| Error::invalid(format!("plotting {}: {e}", path.display()));
    let values = traces.iter().flat_map(|t| t.psnr.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let (lo, hi) = if lo < hi { (lo - 0.5, hi + 0.5) } else { (0.0, 50.0) };
    let n = traces.iter().map(|t| t.psnr.len()).max().unwrap_or(1).max(1);

    let area = SVGBackend::new(path, (640, 420)).into_drawing_area();
    area.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&area)
        .caption(title, ("sans-serif", 16))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(45)
        .build_cartesian_2d(1f64..n as f64, lo..hi)
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc("PSNR (dB)")
        .draw()
        .map_err(|e| plot_err(&e))?;
    for (i, t) in traces.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                t.psnr.iter().enumerate().map(|(k, &v)| ((k + 1) as f64, v)),
                color,
            ))
            .map_err(|e| plot_err(&e))?
            .label(t.policy.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    area.present().map_err(|e| plot_err(&e))?;
    Ok(())
}
