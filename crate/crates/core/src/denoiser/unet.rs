use std::collections::HashMap;
use std::path::Path;

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{load_tensors, save_tensors, Conv2d, ParamStore};

use super::{Denoiser, NoiseLevelMap, SIGMA_MAX, SIGMA_MIN};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Channel width at each resolution scale, finest first.
    pub widths: Vec<usize>,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            widths: vec![32, 64, 128, 256],
        }
    }
}

impl UNetConfig {
    /// Tiny variant for CPU smoke runs.
    pub fn small() -> Self {
        Self {
            widths: vec![8, 16, 32, 64],
        }
    }

    pub fn arch_id(&self) -> String {
        let w: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        format!("resunet-{}", w.join("-"))
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), c_in, c_out, 3, 1, 1.0, rng)?;
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), c_out, c_out, 3, 1, 1.0, rng)?;
        let skip = if c_in != c_out {
            Some(Conv2d::new(store, &format!("{name}.skip"), c_in, c_out, 1, 1, 1.0, rng)?)
        } else {
            None
        };
        Ok(Self { conv1, conv2, skip })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv2.forward(&self.conv1.forward(x)?.relu()?)?;
        let s = match &self.skip {
            Some(c) => c.forward(x)?,
            None => x.clone(),
        };
        Ok((h + s)?.relu()?)
    }
}

/// Residual U-Net that predicts the noise in an image given a noise level
/// map as a second input channel. The denoised output is `input − residual`.
#[derive(Clone)]
pub struct UNet {
    config: UNetConfig,
    store: ParamStore,
    encoders: Vec<ResBlock>,
    decoders: Vec<ResBlock>,
    head: Conv2d,
}

impl UNet {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        Self::build(config, ParamStore::new(), seed)
    }

    fn build(config: UNetConfig, mut store: ParamStore, seed: u64) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) {
            return Err(Error::invalid("U-Net widths must be non-empty and positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = &config.widths;
        let mut encoders = Vec::with_capacity(w.len());
        let mut c_in = 2;
        for (i, &c) in w.iter().enumerate() {
            encoders.push(ResBlock::new(&mut store, &format!("enc{i}"), c_in, c, &mut rng)?);
            c_in = c;
        }
        let mut decoders = Vec::with_capacity(w.len() - 1);
        for i in (0..w.len() - 1).rev() {
            decoders.push(ResBlock::new(
                &mut store,
                &format!("dec{i}"),
                w[i + 1] + w[i],
                w[i],
                &mut rng,
            )?);
        }
        // Starts close to the identity denoiser.
        let head = Conv2d::new(&mut store, "head", w[0], 1, 3, 1, 0.01, &mut rng)?;
        Ok(Self {
            config,
            store,
            encoders,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Copy whose weights are constants: no gradients reach them, but
    /// gradients still flow to the image and the noise map.
    pub fn frozen(&self) -> Result<Self> {
        let values: HashMap<String, Tensor> = self.store.tensors()?.into_iter().collect();
        Self::build(self.config.clone(), ParamStore::frozen(values), 0)
    }

    fn multiple(&self) -> usize {
        1 << (self.config.widths.len() - 1)
    }

    /// `[N, 2, H, W]` (image, noise map) → predicted noise `[N, 1, H, W]`.
    pub fn residual(&self, input: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = input.dims4()?;
        let m = self.multiple();
        let (ph, pw) = ((m - h % m) % m, (m - w % m) % m);
        let mut x = input.clone();
        if ph > 0 {
            x = x.pad_with_same(2, 0, ph)?;
        }
        if pw > 0 {
            x = x.pad_with_same(3, 0, pw)?;
        }

        let mut skips = Vec::with_capacity(self.encoders.len());
        for (i, enc) in self.encoders.iter().enumerate() {
            if i > 0 {
                x = x.avg_pool2d(2)?;
            }
            x = enc.forward(&x)?;
            skips.push(x.clone());
        }
        skips.pop();
        for dec in &self.decoders {
            let skip = skips.pop().expect("one skip per decoder");
            let (_, _, sh, sw) = skip.dims4()?;
            let up = x.upsample_nearest2d(sh, sw)?;
            x = dec.forward(&Tensor::cat(&[&up, &skip], 1)?)?;
        }
        let r = self.head.forward(&x)?;
        Ok(r.narrow(2, 0, h)?.narrow(3, 0, w)?)
    }

    /// Weights plus `{arch, sigma_range, ...extra}` metadata. A JSON sidecar
    /// with the same metadata is written next to the weights.
    pub fn save(&self, path: &Path, extra: &HashMap<String, String>) -> Result<()> {
        let mut meta = extra.clone();
        meta.insert("arch".into(), self.config.arch_id());
        meta.insert("widths".into(), serde_json::to_string(&self.config.widths)?);
        meta.insert(
            "sigma_range".into(),
            serde_json::to_string(&[SIGMA_MIN, SIGMA_MAX])?,
        );
        save_tensors(path, &self.store.tensors()?, meta.clone())?;
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Loads weights for inference (frozen).
    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = load_tensors(path)?;
        let widths: Vec<usize> = meta
            .get("widths")
            .ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                reason: "missing `widths` metadata".into(),
            })
            .and_then(|w| Ok(serde_json::from_str(w)?))?;
        let params: HashMap<String, Tensor> = tensors
            .into_iter()
            .filter(|(k, _)| !k.starts_with("adam."))
            .collect();
        Self::build(UNetConfig { widths }, ParamStore::frozen(params), 0)
    }

    /// Loads weights as trainable variables.
    pub fn load_trainable(path: &Path) -> Result<(Self, HashMap<String, Tensor>, HashMap<String, String>)> {
        let frozen = Self::load(path)?;
        let net = Self::new(frozen.config.clone(), 0)?;
        let (tensors, meta) = load_tensors(path)?;
        net.store.assign(&tensors)?;
        Ok((net, tensors, meta))
    }
}

impl Denoiser for UNet {
    fn denoise(&self, image: &Tensor, sigma: &NoiseLevelMap) -> Result<Tensor> {
        let map = sigma.tensor();
        if image.dims() != map.dims() {
            return Err(Error::shape(image.dims(), map.dims()));
        }
        let input = Tensor::stack(&[image, map], 1)?;
        let r = self.residual(&input)?.squeeze(1)?;
        Ok((image - r)?)
    }
}
