//! Unitary two-dimensional discrete Fourier transform.
//!
//! The transform is evaluated as a pair of dense matrix products with
//! precomputed DFT matrices. At the grid sizes this crate targets that is
//! cheap, exact to rounding, and differentiable through candle's matmul.
//! Layout is the unshifted FFT convention: the DC coefficient sits at
//! index `(0, 0)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use candle_core::Tensor;

use crate::error::Result;
use crate::field::{Field, DEVICE};

struct DftMatrix {
    re: Tensor,
    im: Tensor,
    // Conjugate, used by the inverse.
    im_neg: Tensor,
}

fn dft_matrix(n: usize) -> Result<Arc<DftMatrix>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<DftMatrix>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(m) = cache.lock().unwrap().get(&n) {
        return Ok(m.clone());
    }
    let scale = 1.0 / (n as f64).sqrt();
    let mut re = Vec::with_capacity(n * n);
    let mut im = Vec::with_capacity(n * n);
    for j in 0..n {
        for k in 0..n {
            // Reduce the phase index first so large grids keep full precision.
            let theta = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
            re.push(theta.cos() * scale);
            im.push(theta.sin() * scale);
        }
    }
    let im_t = Tensor::from_vec(im, (n, n), &DEVICE)?;
    let m = Arc::new(DftMatrix {
        re: Tensor::from_vec(re, (n, n), &DEVICE)?,
        im_neg: im_t.neg()?,
        im: im_t,
    });
    cache.lock().unwrap().insert(n, m.clone());
    Ok(m)
}

/// `X · M` for `X` of shape `[L, N]` and complex `M` of shape `[N, N]`.
fn right_mul(xr: &Tensor, xi: &Tensor, mr: &Tensor, mi: &Tensor) -> Result<(Tensor, Tensor)> {
    let re = (xr.matmul(mr)? - xi.matmul(mi)?)?;
    let im = (xr.matmul(mi)? + xi.matmul(mr)?)?;
    Ok((re, im))
}

fn transform(x: &Field, inverse: bool) -> Result<Field> {
    let dims = x.dims().to_vec();
    let (h, w) = x.hw();
    let lead: usize = dims[..dims.len() - 2].iter().product();
    let mw = dft_matrix(w)?;
    let mh = dft_matrix(h)?;
    let (mw_im, mh_im) = if inverse {
        (&mw.im_neg, &mh.im_neg)
    } else {
        (&mw.im, &mh.im)
    };

    // Rows: [L*H, W] · F_W
    let xr = x.re.reshape((lead * h, w))?;
    let xi = x.im.reshape((lead * h, w))?;
    let (tr, ti) = right_mul(&xr, &xi, &mw.re, mw_im)?;

    // Columns, via the transpose: (F_H X F_W)^T = (X F_W)^T F_H since F_H is symmetric.
    let tr = tr.reshape((lead, h, w))?.transpose(1, 2)?.contiguous()?.reshape((lead * w, h))?;
    let ti = ti.reshape((lead, h, w))?.transpose(1, 2)?.contiguous()?.reshape((lead * w, h))?;
    let (yr, yi) = right_mul(&tr, &ti, &mh.re, mh_im)?;

    let back = |t: Tensor| -> Result<Tensor> {
        Ok(t.reshape((lead, w, h))?.transpose(1, 2)?.contiguous()?.reshape(dims.as_slice())?)
    };
    Field::new(back(yr)?, back(yi)?)
}

/// Forward unitary DFT over the last two dimensions.
pub fn fft2(x: &Field) -> Result<Field> {
    transform(x, false)
}

/// Inverse unitary DFT over the last two dimensions.
pub fn ifft2(x: &Field) -> Result<Field> {
    transform(x, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(dims: &[usize], seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = dims.iter().product();
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        Field::from_pairs(&pairs, dims).unwrap()
    }

    /// Textbook O(N^4) sum, independent of the matrix route.
    fn direct_dft(x: &Field) -> Vec<(f64, f64)> {
        let (h, w) = x.hw();
        let (re, im) = x.to_vecs().unwrap();
        let s = 1.0 / ((h * w) as f64).sqrt();
        let mut out = Vec::with_capacity(h * w);
        for u in 0..h {
            for v in 0..w {
                let (mut ar, mut ai) = (0.0, 0.0);
                for j in 0..h {
                    for k in 0..w {
                        let th = -2.0 * PI * ((u * j) as f64 / h as f64 + (v * k) as f64 / w as f64);
                        let (c, sn) = (th.cos(), th.sin());
                        let (xr, xi) = (re[j * w + k], im[j * w + k]);
                        ar += xr * c - xi * sn;
                        ai += xr * sn + xi * c;
                    }
                }
                out.push((ar * s, ai * s));
            }
        }
        out
    }

    #[test]
    fn matches_direct_sum_on_rectangular_grid() {
        let x = random_field(&[1, 6, 10], 3);
        let y = fft2(&x).unwrap();
        let (yr, yi) = y.to_vecs().unwrap();
        for (i, (er, ei)) in direct_dft(&x).into_iter().enumerate() {
            assert!((yr[i] - er).abs() < 1e-12 && (yi[i] - ei).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_round_trip_and_batching() {
        let x = random_field(&[3, 2, 8, 16], 7);
        let back = ifft2(&fft2(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
        // Each batch item is transformed independently.
        let single = fft2(&x.narrow(0, 1, 1).unwrap()).unwrap();
        let batched = fft2(&x).unwrap().narrow(0, 1, 1).unwrap();
        assert!(single.max_abs_diff(&batched).unwrap() < 1e-14);
    }

    #[test]
    fn impulse_maps_to_flat_spectrum() {
        let mut pairs = vec![(0.0, 0.0); 64];
        pairs[0] = (1.0, 0.0);
        let y = fft2(&Field::from_pairs(&pairs, &[1, 8, 8]).unwrap()).unwrap();
        let mag = y.abs().unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(mag.iter().all(|m| (m - 0.125).abs() < 1e-12));
    }
}
