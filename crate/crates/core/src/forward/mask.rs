use std::collections::HashMap;
use std::path::Path;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DEVICE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingPattern {
    Radial,
    UniformRandom,
}

impl SamplingPattern {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingPattern::Radial => "radial",
            SamplingPattern::UniformRandom => "uniform-random",
        }
    }
}

impl std::str::FromStr for SamplingPattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radial" => Ok(SamplingPattern::Radial),
            "uniform-random" | "uniform_random" | "random" => Ok(SamplingPattern::UniformRandom),
            other => Err(Error::invalid(format!("unknown sampling pattern {other:?}"))),
        }
    }
}

/// Sampling rate for an acceleration factor, e.g. ×4 → 0.25.
pub fn acceleration_to_rate(acceleration: f64) -> f64 {
    1.0 / acceleration
}

/// Binary k-space sampling mask in unshifted FFT layout (DC at `(0, 0)`).
#[derive(Clone, Debug)]
pub struct KSpaceMask {
    grid: Tensor,
    pattern: SamplingPattern,
    target_rate: f64,
    seed: u64,
}

impl KSpaceMask {
    /// Generates a mask. Radial masks are unions of lines through DC at
    /// equally spaced angles; the last partial line is filled from the centre
    /// outward. Both patterns sample exactly `round(rate·H·W)` frequencies.
    pub fn generate(
        shape: (usize, usize),
        pattern: SamplingPattern,
        target_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(target_rate > 0.0 && target_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "target_rate must lie in (0, 1], got {target_rate}"
            )));
        }
        let (h, w) = shape;
        if h == 0 || w == 0 {
            return Err(Error::invalid("mask shape must be non-empty"));
        }
        let bits = if target_rate >= 1.0 {
            vec![true; h * w]
        } else {
            match pattern {
                SamplingPattern::Radial => radial_bits(h, w, target_rate),
                SamplingPattern::UniformRandom => uniform_bits(h, w, target_rate, seed),
            }
        };
        let data: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(Self {
            grid: Tensor::from_vec(data, (h, w), &DEVICE)?,
            pattern,
            target_rate,
            seed,
        })
    }

    pub fn from_grid(
        grid: Tensor,
        pattern: SamplingPattern,
        target_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let values = grid.flatten_all()?.to_vec1::<f64>()?;
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        if grid.rank() != 2 {
            return Err(Error::invalid("mask must be two-dimensional"));
        }
        Ok(Self {
            grid,
            pattern,
            target_rate,
            seed,
        })
    }

    /// `[H, W]` tensor of zeros and ones.
    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        let d = self.grid.dims();
        (d[0], d[1])
    }

    pub fn pattern(&self) -> SamplingPattern {
        self.pattern
    }

    pub fn target_rate(&self) -> f64 {
        self.target_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Measured fraction of sampled frequencies.
    pub fn rate(&self) -> Result<f64> {
        let (h, w) = self.shape();
        Ok(self.grid.sum_all()?.to_scalar::<f64>()? / (h * w) as f64)
    }

    pub fn contains_dc(&self) -> Result<bool> {
        Ok(self.grid.get(0)?.get(0)?.to_scalar::<f64>()? == 1.0)
    }

    /// Writes the mask as a safetensors file carrying
    /// `{pattern, target_rate, seed}` in its metadata header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (h, w) = self.shape();
        let bytes: Vec<u8> = self
            .grid
            .flatten_all()?
            .to_vec1::<f64>()?
            .iter()
            .map(|&v| v as u8)
            .collect();
        let view = TensorView::new(Dtype::U8, vec![h, w], &bytes)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let metadata: HashMap<String, String> = [
            ("pattern".to_string(), self.pattern.as_str().to_string()),
            ("target_rate".to_string(), self.target_rate.to_string()),
            ("seed".to_string(), self.seed.to_string()),
        ]
        .into();
        safetensors::serialize_to_file([("mask", view)], Some(metadata), path)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let tensors = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
        let view = tensors.tensor("mask").map_err(|e| bad(e.to_string()))?;
        let shape = view.shape().to_vec();
        if shape.len() != 2 || view.dtype() != Dtype::U8 {
            return Err(bad("expected a 2-D u8 tensor named `mask`".into()));
        }
        let data: Vec<f64> = view.data().iter().map(|&b| b as f64).collect();
        let info = meta.metadata().clone().unwrap_or_default();
        let field = |k: &str| {
            info.get(k)
                .cloned()
                .ok_or_else(|| bad(format!("metadata field `{k}` missing")))
        };
        let pattern: SamplingPattern = field("pattern")?.parse()?;
        let target_rate: f64 = field("target_rate")?
            .parse()
            .map_err(|_| bad("bad target_rate".into()))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
        let grid = Tensor::from_vec(data, (shape[0], shape[1]), &DEVICE)?;
        Self::from_grid(grid, pattern, target_rate, seed)
    }
}

/// Rasterizes `lines` lines through the centre of a centred grid, then
/// shifts the result to unshifted FFT layout.
fn rasterize_lines(h: usize, w: usize, lines: usize) -> Vec<bool> {
    let mut centred = vec![false; h * w];
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let reach = ((h * h + w * w) as f64).sqrt();
    for l in 0..lines {
        let theta = std::f64::consts::PI * l as f64 / lines as f64;
        let (dy, dx) = (theta.sin(), theta.cos());
        let steps = (2.0 * reach) as i64 * 2;
        for s in -steps..=steps {
            let r = s as f64 * 0.5;
            let y = (cy + r * dy).round();
            let x = (cx + r * dx).round();
            if y >= 0.0 && x >= 0.0 && (y as usize) < h && (x as usize) < w {
                centred[y as usize * w + x as usize] = true;
            }
        }
    }
    // ifftshift: centred (h/2, w/2) moves to (0, 0).
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let sy = (y + h - h / 2) % h;
            let sx = (x + w - w / 2) % w;
            out[sy * w + sx] = centred[y * w + x];
        }
    }
    out
}

fn radial_bits(h: usize, w: usize, rate: f64) -> Vec<bool> {
    let n = h * w;
    let count = |bits: &[bool]| bits.iter().filter(|&&b| b).count();
    let want = ((rate * n as f64).round() as usize).clamp(1, n);
    // First line count whose coverage reaches the target.
    let (mut lo, mut hi) = (1usize, 4 * (h + w));
    while lo < hi {
        let mid = (lo + hi) / 2;
        if count(&rasterize_lines(h, w, mid)) < want {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let above = rasterize_lines(h, w, lo);
    if lo == 1 {
        return above;
    }
    // Line counts are coarse at high rates: top up the sparser set with the
    // lowest frequencies of the denser one until the count is exact.
    let mut bits = rasterize_lines(h, w, lo - 1);
    let radius = |i: usize| {
        let (y, x) = (i / w, i % w);
        let fy = y.min(h - y) as f64;
        let fx = x.min(w - x) as f64;
        fy * fy + fx * fx
    };
    let mut extra: Vec<usize> = (0..n).filter(|&i| above[i] && !bits[i]).collect();
    extra.sort_by(|&a, &b| radius(a).total_cmp(&radius(b)).then(a.cmp(&b)));
    let missing = want.saturating_sub(count(&bits));
    for &i in extra.iter().take(missing) {
        bits[i] = true;
    }
    bits
}

fn uniform_bits(h: usize, w: usize, rate: f64, seed: u64) -> Vec<bool> {
    let n = h * w;
    let want = ((rate * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // DC is always kept; the rest are drawn without replacement.
    let mut rest: Vec<usize> = (1..n).collect();
    rest.shuffle(&mut rng);
    let mut bits = vec![false; n];
    bits[0] = true;
    for &i in rest.iter().take(want - 1) {
        bits[i] = true;
    }
    bits
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rate_is_all_ones() {
        let m = KSpaceMask::generate((128, 128), SamplingPattern::Radial, 1.0, 5).unwrap();
        assert_eq!(m.rate().unwrap(), 1.0);
    }

    #[test]
    fn rejects_rates_outside_unit_interval() {
        for r in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(KSpaceMask::generate((16, 16), SamplingPattern::Radial, r, 0).is_err());
        }
    }

    #[test]
    fn radial_twenty_percent_within_tolerance() {
        let m = KSpaceMask::generate((128, 128), SamplingPattern::Radial, 0.20, 0).unwrap();
        let r = m.rate().unwrap();
        assert!((0.19..=0.21).contains(&r), "rate {r}");
        assert!(m.contains_dc().unwrap());
    }

    #[test]
    fn rates_for_standard_accelerations() {
        assert_eq!(acceleration_to_rate(4.0), 0.25);
        for size in [64, 128] {
            for accel in [2.0, 4.0, 8.0] {
                for pattern in [SamplingPattern::Radial, SamplingPattern::UniformRandom] {
                    let target = acceleration_to_rate(accel);
                    let m = KSpaceMask::generate((size, size), pattern, target, 11).unwrap();
                    let r = m.rate().unwrap();
                    assert!((r - target).abs() <= 0.01, "{pattern:?} {size} x{accel}: {r}");
                    assert!(m.contains_dc().unwrap());
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = KSpaceMask::generate((64, 64), SamplingPattern::UniformRandom, 0.3, 9).unwrap();
        let b = KSpaceMask::generate((64, 64), SamplingPattern::UniformRandom, 0.3, 9).unwrap();
        let c = KSpaceMask::generate((64, 64), SamplingPattern::UniformRandom, 0.3, 10).unwrap();
        let va = a.grid().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let vb = b.grid().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let vc = c.grid().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(va, vb);
        assert_ne!(va, vc);
    }

    #[test]
    fn file_round_trip_keeps_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let m = KSpaceMask::generate((32, 48), SamplingPattern::Radial, 0.25, 4).unwrap();
        m.save(&path).unwrap();
        let back = KSpaceMask::load(&path).unwrap();
        assert_eq!(back.pattern(), SamplingPattern::Radial);
        assert_eq!(back.target_rate(), 0.25);
        assert_eq!(back.seed(), 4);
        assert_eq!(
            back.grid().flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            m.grid().flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
    }
}
