use candle_core::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::field::DEVICE;

use super::ParamStore;

fn normal(rng: &mut impl Rng, dims: &[usize], std: f64) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect();
    Ok(Tensor::from_vec(data, dims, &DEVICE)?)
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// He-initialized `k×k` convolution; `gain` scales the init (use < 1 for
    /// output layers that should start near zero).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            normal(rng, &[c_out, c_in, kernel, kernel], std)?,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(c_out, crate::field::DTYPE, &DEVICE)?)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = gain * (1.0 / d_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), normal(rng, &[d_out, d_in], std)?)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(d_out, crate::field::DTYPE, &DEVICE)?)?;
        Ok(Self { weight, bias })
    }

    /// `[B, d_in] → [B, d_out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}
