use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Tensor, Var};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::field::DEVICE;

/// Ordered collection of named trainable variables.
///
/// A store built with [`ParamStore::frozen`] hands out constant tensors
/// instead of variables, so inference through it records no autodiff graph
/// for the weights.
#[derive(Clone, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    constants: Option<HashMap<String, Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frozen(values: HashMap<String, Tensor>) -> Self {
        Self {
            vars: BTreeMap::new(),
            constants: Some(values),
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.constants.is_some()
    }

    /// Registers `init` under `name` and returns the tensor layers should use.
    pub fn add(&mut self, name: impl Into<String>, init: Tensor) -> Result<Tensor> {
        let name = name.into();
        if let Some(values) = &self.constants {
            let t = values
                .get(&name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
            if t.dims() != init.dims() {
                return Err(Error::shape(init.dims(), t.dims()));
            }
            return Ok(t.detach());
        }
        let var = Var::from_tensor(&init)?;
        let t = var.as_tensor().clone();
        if self.vars.insert(name.clone(), var).is_some() {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Snapshot of the current values, detached from the variables.
    pub fn tensors(&self) -> Result<Vec<(String, Tensor)>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?)))
            .collect()
    }

    /// Overwrites every variable from `values`, which must cover the store exactly.
    pub fn assign(&self, values: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let src = values
                .get(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
            if src.dims() != var.dims() {
                return Err(Error::shape(var.dims(), src.dims()));
            }
            var.set(src)?;
        }
        Ok(())
    }

    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        self.check_same_layout(other)?;
        for (name, var) in &self.vars {
            var.set(&other.vars[name].as_tensor().detach().copy()?)?;
        }
        Ok(())
    }

    /// `self ← (1 − rate)·self + rate·other`, elementwise.
    pub fn ema_toward(&self, other: &ParamStore, rate: f64) -> Result<()> {
        self.check_same_layout(other)?;
        for (name, var) in &self.vars {
            let src = other.vars[name].as_tensor().detach();
            let cur = var.as_tensor().detach();
            let next = ((cur * (1.0 - rate))? + (src * rate)?)?;
            var.set(&next)?;
        }
        Ok(())
    }

    fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.vars.len() != other.vars.len() {
            return Err(Error::invalid("parameter stores differ in size"));
        }
        for (name, var) in &self.vars {
            let o = other
                .vars
                .get(name)
                .ok_or_else(|| Error::invalid(format!("parameter {name} missing in source")))?;
            if o.dims() != var.dims() {
                return Err(Error::shape(var.dims(), o.dims()));
            }
        }
        Ok(())
    }

    /// Largest absolute difference between two stores with the same layout.
    pub fn max_abs_diff(&self, other: &ParamStore) -> Result<f64> {
        self.check_same_layout(other)?;
        let mut worst = 0f64;
        for (name, var) in &self.vars {
            let d = (var.as_tensor() - other.vars[name].as_tensor())?
                .abs()?
                .flatten_all()?
                .max(0)?
                .to_scalar::<f64>()?;
            worst = worst.max(d);
        }
        Ok(worst)
    }
}

/// Writes f64 tensors to a safetensors file with a string metadata header.
pub fn save_tensors(
    path: &Path,
    tensors: &[(String, Tensor)],
    metadata: HashMap<String, String>,
) -> Result<()> {
    let mut buffers = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let bytes: Vec<u8> = t
            .flatten_all()?
            .to_vec1::<f64>()?
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        buffers.push((name.clone(), t.dims().to_vec(), bytes));
    }
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::invalid(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    safetensors::serialize_to_file(views, Some(metadata), path).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn load_tensors(path: &Path) -> Result<(HashMap<String, Tensor>, HashMap<String, String>)> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| bad(e.to_string()))?;
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let mut out = HashMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F64 {
            return Err(bad(format!("{name}: expected f64")));
        }
        let data: Vec<f64> = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(name, Tensor::from_vec(data, view.shape(), &DEVICE)?);
    }
    Ok((out, meta.metadata().clone().unwrap_or_default()))
}
