//! Named parameter store with seeded, order-independent initialization.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)`.
    FanIn(usize),
    Normal(f64),
    Const(f64),
}

/// Parameters by dotted name. New entries are drawn from a stream keyed by
/// `(seed, name)`, so the value of a parameter does not depend on the order
/// in which modules are built.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    seed: Option<u64>,
}

impl ParamStore {
    /// Empty store that initializes missing parameters from `seed`.
    pub fn seeded(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            seed: Some(seed),
        }
    }

    /// Store holding exactly the given tensors; requesting anything else fails.
    pub fn from_tensors(tensors: BTreeMap<String, Tensor>, dtype: DType) -> Result<Self> {
        let vars = tensors
            .into_iter()
            .map(|(k, t)| Ok((k, Var::from_tensor(&t.to_dtype(dtype)?)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            vars,
            dtype,
            device: Device::Cpu,
            seed: None,
        })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Initialize future missing parameters from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn clear_seed(&mut self) {
        self.seed = None;
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&mut self) -> ParamPath<'_> {
        ParamPath {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Variables whose name starts with `prefix`, in name order.
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Independent copy with fresh storage and no initializer.
    pub fn deep_clone(&self) -> Result<Self> {
        let vars = self
            .vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            vars,
            dtype: self.dtype,
            device: self.device.clone(),
            seed: None,
        })
    }

    /// Snapshot of every tensor (detached copies).
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?.detach())))
            .collect()
    }

    /// Remove every parameter under `prefix`; returns how many were removed.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let before = self.vars.len();
        self.vars.retain(|k, _| !k.starts_with(prefix));
        before - self.vars.len()
    }

    /// Overwrite values in place from another store with the same names.
    pub fn assign_from(&self, other: &ParamStore) -> Result<()> {
        for (k, v) in &self.vars {
            let src = other
                .vars
                .get(k)
                .ok_or_else(|| Error::State(format!("parameter {k} missing from source")))?;
            if src.shape() != v.shape() {
                return Err(Error::State(format!("parameter {k} shape mismatch")));
            }
            v.set(src.as_tensor())?;
        }
        Ok(())
    }

    fn fetch(&mut self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(&name) {
            if v.dims() != shape {
                return Err(Error::State(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let seed = self
            .seed
            .ok_or_else(|| Error::State(format!("parameter {name} missing from checkpoint")))?;
        let n: usize = shape.iter().product();
        let mut r = rng::stream_parts(seed, &["param", &name]);
        let values: Vec<f64> = match init {
            Init::FanIn(fan_in) => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| r.random_range(-b..b)).collect()
            }
            Init::Normal(std) => {
                use rand_distr::Distribution;
                let d = rand_distr::Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut r)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(out)
    }
}

/// Cursor into a [`ParamStore`] under a dotted prefix.
pub struct ParamPath<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl ParamPath<'_> {
    pub fn pp(&mut self, name: impl std::fmt::Display) -> ParamPath<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamPath {
            store: self.store,
            prefix,
        }
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.fetch(full, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }
}
