//! Procedural grayscale test images. They cover smooth, piecewise-constant,
//! and textured content, so the best denoising strength differs between
//! them.

use std::f64::consts::PI;

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DEVICE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    /// Overlapping ellipses of constant intensity.
    Ellipses,
    /// Smooth Gaussian blobs.
    Blobs,
    /// Oriented gratings under a soft envelope.
    Texture,
    /// Ellipses with fine stripes and a grid pattern.
    Mixed,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 4] = [
        PhantomKind::Ellipses,
        PhantomKind::Blobs,
        PhantomKind::Texture,
        PhantomKind::Mixed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PhantomKind::Ellipses => "ellipses",
            PhantomKind::Blobs => "blobs",
            PhantomKind::Texture => "texture",
            PhantomKind::Mixed => "mixed",
        }
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, scale: f64) -> Self {
        Self {
            cx: rng.random_range(-0.5..0.5),
            cy: rng.random_range(-0.5..0.5),
            a: rng.random_range(0.08..0.45) * scale,
            b: rng.random_range(0.08..0.45) * scale,
            angle: rng.random_range(0.0..PI),
            value: rng.random_range(-0.4..0.6),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.a;
        let v = (-s * dx + c * dy) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Image of the given kind with values in `[0, 1]`, as an `[H, W]` tensor.
pub fn phantom(kind: PhantomKind, shape: (usize, usize), seed: u64) -> Result<Tensor> {
    let (h, w) = shape;
    if h < 8 || w < 8 {
        return Err(Error::invalid("phantoms need at least 8x8 pixels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let coord = |i: usize, n: usize| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0;
    let mut img = vec![0.0; h * w];

    match kind {
        PhantomKind::Ellipses | PhantomKind::Mixed => {
            let outer = Ellipse {
                cx: 0.0,
                cy: 0.0,
                a: rng.random_range(0.75..0.92),
                b: rng.random_range(0.8..0.95),
                angle: 0.0,
                value: 0.7,
            };
            let inner: Vec<Ellipse> = (0..rng.random_range(5..9)).map(|_| Ellipse::random(&mut rng, 1.0)).collect();
            let period = rng.random_range(3.0..5.0);
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = (coord(x, w), coord(y, h));
                    let mut val = if outer.contains(u, v) { outer.value } else { 0.0 };
                    for e in &inner {
                        if e.contains(u, v) {
                            val += e.value * 0.5;
                        }
                    }
                    if kind == PhantomKind::Mixed && outer.contains(u, v) {
                        let stripes = ((x as f64) * 2.0 * PI / period).sin();
                        let grid = if (x / 4 + y / 4) % 2 == 0 { 0.1 } else { -0.1 };
                        val += if u < 0.0 { 0.2 * stripes } else { grid };
                    }
                    img[y * w + x] = val;
                }
            }
        }
        PhantomKind::Blobs => {
            let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(6..12))
                .map(|_| {
                    (
                        rng.random_range(-0.8..0.8),
                        rng.random_range(-0.8..0.8),
                        rng.random_range(0.1..0.4),
                        rng.random_range(-0.5..1.0),
                    )
                })
                .collect();
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = (coord(x, w), coord(y, h));
                    img[y * w + x] = blobs
                        .iter()
                        .map(|&(cx, cy, r, a)| a * (-((u - cx).powi(2) + (v - cy).powi(2)) / (2.0 * r * r)).exp())
                        .sum();
                }
            }
        }
        PhantomKind::Texture => {
            let waves: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(3..6))
                .map(|_| {
                    let f = rng.random_range(4.0..14.0);
                    let th = rng.random_range(0.0..PI);
                    (f * th.cos(), f * th.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.3..1.0))
                })
                .collect();
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = (coord(x, w), coord(y, h));
                    let envelope = (-(u * u + v * v) / 0.8).exp();
                    let s: f64 = waves.iter().map(|&(fx, fy, ph, a)| a * (PI * (fx * u + fy * v) + ph).sin()).sum();
                    img[y * w + x] = envelope * (1.0 + 0.5 * s);
                }
            }
        }
    }

    let (lo, hi) = img.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data: Vec<f64> = img.iter().map(|v| (v - lo) / span).collect();
    Ok(Tensor::from_vec(data, (h, w), &DEVICE)?)
}

/// `count` phantoms cycling through every kind, seeded from `seed`.
pub fn phantom_set(count: usize, shape: (usize, usize), seed: u64) -> Result<Vec<(String, Tensor)>> {
    (0..count)
        .map(|i| {
            let kind = PhantomKind::ALL[i % PhantomKind::ALL.len()];
            let s = seed.wrapping_add(i as u64);
            Ok((format!("{}_{:03}", kind.as_str(), i), phantom(kind, shape, s)?))
        })
        .collect()
}
