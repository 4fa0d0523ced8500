//! Complex-valued tensors stored as separate real and imaginary planes.
//!
//! Every image-domain and k-space quantity in the crate is a [`Field`] whose
//! leading dimension is a batch index, i.e. `[B, H, W]` or `[B, P, H, W]`.
//! Keeping the planes split lets gradients flow through candle's real-valued
//! autodiff.

use candle_core::{DType, Device, Tensor, D};

use crate::error::{Error, Result};

pub const DTYPE: DType = DType::F64;
pub const DEVICE: Device = Device::Cpu;

#[derive(Clone, Debug)]
pub struct Field {
    pub re: Tensor,
    pub im: Tensor,
}

impl Field {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.dims() != im.dims() {
            return Err(Error::shape(re.dims(), im.dims()));
        }
        Ok(Self { re, im })
    }

    pub fn from_real(re: Tensor) -> Result<Self> {
        let im = re.zeros_like()?;
        Ok(Self { re, im })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let re = Tensor::zeros(dims, DTYPE, &DEVICE)?;
        Ok(Self {
            im: re.clone(),
            re,
        })
    }

    /// Builds a field from interleaved `(re, im)` samples.
    pub fn from_pairs(values: &[(f64, f64)], dims: &[usize]) -> Result<Self> {
        let re: Vec<f64> = values.iter().map(|v| v.0).collect();
        let im: Vec<f64> = values.iter().map(|v| v.1).collect();
        Ok(Self {
            re: Tensor::from_vec(re, dims, &DEVICE)?,
            im: Tensor::from_vec(im, dims, &DEVICE)?,
        })
    }

    pub fn dims(&self) -> &[usize] {
        self.re.dims()
    }

    pub fn batch(&self) -> usize {
        self.dims()[0]
    }

    /// `(H, W)` of the trailing two dimensions.
    pub fn hw(&self) -> (usize, usize) {
        let d = self.dims();
        (d[d.len() - 2], d[d.len() - 1])
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        Ok(Field {
            re: self.re.broadcast_add(&other.re)?,
            im: self.im.broadcast_add(&other.im)?,
        })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        Ok(Field {
            re: self.re.broadcast_sub(&other.re)?,
            im: self.im.broadcast_sub(&other.im)?,
        })
    }

    pub fn scale(&self, s: f64) -> Result<Field> {
        Ok(Field {
            re: self.re.affine(s, 0.0)?,
            im: self.im.affine(s, 0.0)?,
        })
    }

    /// Multiplies both planes by a broadcastable real tensor.
    pub fn mul_real(&self, t: &Tensor) -> Result<Field> {
        Ok(Field {
            re: self.re.broadcast_mul(t)?,
            im: self.im.broadcast_mul(t)?,
        })
    }

    pub fn div_real(&self, t: &Tensor) -> Result<Field> {
        Ok(Field {
            re: self.re.broadcast_div(t)?,
            im: self.im.broadcast_div(t)?,
        })
    }

    /// Elementwise complex product with broadcasting.
    pub fn mul(&self, other: &Field) -> Result<Field> {
        let re = (self.re.broadcast_mul(&other.re)? - self.im.broadcast_mul(&other.im)?)?;
        let im = (self.re.broadcast_mul(&other.im)? + self.im.broadcast_mul(&other.re)?)?;
        Ok(Field { re, im })
    }

    pub fn conj(&self) -> Result<Field> {
        Ok(Field {
            re: self.re.clone(),
            im: self.im.neg()?,
        })
    }

    pub fn abs_sq(&self) -> Result<Tensor> {
        Ok((self.re.sqr()? + self.im.sqr()?)?)
    }

    /// Modulus. A tiny floor inside the square root keeps the derivative
    /// finite at the origin, where it evaluates to zero.
    pub fn abs(&self) -> Result<Tensor> {
        Ok(self.abs_sq()?.affine(1.0, 1e-30)?.sqrt()?)
    }

    /// Squared 2-norm over everything but the leading batch dimension.
    pub fn norm_sq_per_item(&self) -> Result<Tensor> {
        let b = self.batch();
        Ok(self.abs_sq()?.reshape((b, ()))?.sum(D::Minus1)?)
    }

    /// `⟨self, other⟩ = Σ conj(self)·other` over all entries, as `(re, im)`.
    pub fn inner(&self, other: &Field) -> Result<(f64, f64)> {
        let re = (self.re.mul(&other.re)? + self.im.mul(&other.im)?)?
            .sum_all()?
            .to_scalar::<f64>()?;
        let im = (self.re.mul(&other.im)? - self.im.mul(&other.re)?)?
            .sum_all()?
            .to_scalar::<f64>()?;
        Ok((re, im))
    }

    pub fn detach(&self) -> Field {
        Field {
            re: self.re.detach(),
            im: self.im.detach(),
        }
    }

    pub fn narrow(&self, dim: usize, start: usize, len: usize) -> Result<Field> {
        Ok(Field {
            re: self.re.narrow(dim, start, len)?,
            im: self.im.narrow(dim, start, len)?,
        })
    }

    pub fn index_select(&self, idx: &Tensor, dim: usize) -> Result<Field> {
        Ok(Field {
            re: self.re.contiguous()?.index_select(idx, dim)?,
            im: self.im.contiguous()?.index_select(idx, dim)?,
        })
    }

    pub fn cat(fields: &[&Field], dim: usize) -> Result<Field> {
        let re: Vec<&Tensor> = fields.iter().map(|f| &f.re).collect();
        let im: Vec<&Tensor> = fields.iter().map(|f| &f.im).collect();
        Ok(Field {
            re: Tensor::cat(&re, dim)?,
            im: Tensor::cat(&im, dim)?,
        })
    }

    pub fn unsqueeze(&self, dim: usize) -> Result<Field> {
        Ok(Field {
            re: self.re.unsqueeze(dim)?,
            im: self.im.unsqueeze(dim)?,
        })
    }

    pub fn sum_keepdim(&self, dim: usize) -> Result<Field> {
        Ok(Field {
            re: self.re.sum_keepdim(dim)?,
            im: self.im.sum_keepdim(dim)?,
        })
    }

    pub fn squeeze(&self, dim: usize) -> Result<Field> {
        Ok(Field {
            re: self.re.squeeze(dim)?,
            im: self.im.squeeze(dim)?,
        })
    }

    /// Selects entries from `self` where `keep` is nonzero and from `other`
    /// elsewhere. `keep` broadcasts from the leading dimensions.
    pub fn select(keep: &Tensor, a: &Field, b: &Field) -> Result<Field> {
        let keep = keep.broadcast_as(a.dims())?;
        Ok(Field {
            re: keep.where_cond(&a.re, &b.re)?,
            im: keep.where_cond(&a.im, &b.im)?,
        })
    }

    /// Flattened planes, row-major.
    pub fn to_vecs(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((
            self.re.flatten_all()?.to_vec1()?,
            self.im.flatten_all()?.to_vec1()?,
        ))
    }

    pub fn is_finite(&self) -> Result<bool> {
        let (re, im) = self.to_vecs()?;
        Ok(re.iter().chain(im.iter()).all(|v| v.is_finite()))
    }

    /// Largest absolute difference over both planes.
    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        let d = self.sub(other)?;
        let re = d.re.abs()?.flatten_all()?.max(0)?.to_scalar::<f64>()?;
        let im = d.im.abs()?.flatten_all()?.max(0)?.to_scalar::<f64>()?;
        Ok(re.max(im))
    }
}

/// Real tensor of the given shape filled from a closure over flat indices.
pub fn tensor_from_fn(dims: &[usize], f: impl FnMut(usize) -> f64) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n).map(f).collect();
    Ok(Tensor::from_vec(data, dims, &DEVICE)?)
}

/// Per-batch scalars as a `[B]` tensor.
pub fn scalars(values: &[f64]) -> Result<Tensor> {
    Ok(Tensor::from_slice(values, values.len(), &DEVICE)?)
}

/// Reshapes a `[B]` tensor so it broadcasts against `[B, ...rank-1 dims]`.
pub fn per_item(t: &Tensor, rank: usize) -> Result<Tensor> {
    let b = t.dims1()?;
    let mut shape = vec![b];
    shape.resize(rank, 1);
    Ok(t.reshape(shape)?)
}

/// Index tensor for `index_select`.
pub fn indices(idx: &[usize]) -> Result<Tensor> {
    let v: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
    Ok(Tensor::from_vec(v, idx.len(), &DEVICE)?)
}
