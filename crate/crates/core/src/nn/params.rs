//! A seeded parameter store.
//!
//! `candle`'s CPU backend cannot be seeded, so parameters are initialized
//! here from ChaCha streams keyed by `(seed, parameter path)`. A parameter's
//! initial value therefore depends only on its name and shape, not on the
//! order in which modules are constructed.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Result as CResult, Shape, Tensor, Var};
use candle_nn::init::{FanInOut, Init, NormalOrUniform};
use candle_nn::var_builder::SimpleBackend;
use candle_nn::VarBuilder;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, domain};

#[derive(Clone)]
pub struct ParamStore {
    seed: u64,
    vars: Arc<Mutex<BTreeMap<String, Var>>>,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("seed", &self.seed)
            .field("len", &self.len())
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            vars: Arc::new(Mutex::new(BTreeMap::new())),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn builder(&self, dtype: DType, device: &Device) -> VarBuilder<'static> {
        VarBuilder::from_backend(Box::new(self.clone()), dtype, device.clone())
    }

    pub fn len(&self) -> usize {
        self.vars.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Variables in name order, optionally restricted to a path prefix.
    pub fn vars(&self, prefix: &str) -> Vec<(String, Var)> {
        self.vars
            .lock()
            .unwrap()
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Current values, detached.
    pub fn tensors(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.vars(prefix)
            .into_iter()
            .map(|(k, v)| (k, v.as_tensor().detach()))
            .collect()
    }

    /// Overwrites existing variables (or inserts new ones) from `values`.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut map = self.vars.lock().unwrap();
        for (name, t) in values {
            match map.get(name) {
                Some(var) => {
                    if var.shape() != t.shape() {
                        return Err(Error::Checkpoint(format!(
                            "parameter `{name}` has shape {:?}, checkpoint holds {:?}",
                            var.shape(),
                            t.shape()
                        )));
                    }
                    var.set(&t.to_dtype(var.dtype())?)?;
                }
                None => {
                    map.insert(name.clone(), Var::from_tensor(t)?);
                }
            }
        }
        Ok(())
    }

    /// Deep copy with independent storage.
    pub fn deep_clone(&self) -> Result<Self> {
        let copy = ParamStore::new(self.seed);
        {
            let src = self.vars.lock().unwrap();
            let mut dst = copy.vars.lock().unwrap();
            for (k, v) in src.iter() {
                dst.insert(k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
            }
        }
        Ok(copy)
    }

    /// SHA-256 over names and little-endian `f64` values of the selected
    /// parameters.
    pub fn checksum(&self, prefix: &str) -> Result<String> {
        let mut h = Sha256::new();
        for (name, t) in self.tensors(prefix) {
            h.update(name.as_bytes());
            for v in t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn num_parameters(&self, prefix: &str) -> usize {
        self.vars(prefix).iter().map(|(_, v)| v.elem_count()).sum()
    }

    fn init_tensor(&self, shape: &Shape, name: &str, init: Init, dtype: DType, dev: &Device) -> CResult<Tensor> {
        let n = shape.elem_count();
        let mut r = rng::keyed(self.seed, &[domain::INIT, rng::name_key(name)]);
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::Randn { mean, stdev } => (0..n)
                .map(|_| { let z: f64 = StandardNormal.sample(&mut r); mean + stdev * z })
                .collect(),
            Init::Uniform { lo, up } => (0..n).map(|_| lo + (up - lo) * r.random::<f64>()).collect(),
            Init::Kaiming {
                dist,
                fan,
                non_linearity,
            } => {
                let fan = match fan {
                    FanInOut::FanIn => FanInOut::FanIn.for_shape(shape),
                    FanInOut::FanOut => FanInOut::FanOut.for_shape(shape),
                };
                let std = non_linearity.gain() / (fan as f64).sqrt();
                match dist {
                    NormalOrUniform::Normal => (0..n)
                        .map(|_| { let z: f64 = StandardNormal.sample(&mut r); std * z })
                        .collect(),
                    NormalOrUniform::Uniform => {
                        let bound = 3f64.sqrt() * std;
                        (0..n).map(|_| bound * (2.0 * r.random::<f64>() - 1.0)).collect()
                    }
                }
            }
        };
        Tensor::from_vec(values, shape.clone(), dev)?.to_dtype(dtype)
    }
}

impl SimpleBackend for ParamStore {
    fn get(&self, s: Shape, name: &str, h: Init, dtype: DType, dev: &Device) -> CResult<Tensor> {
        let mut map = self.vars.lock().unwrap();
        if let Some(v) = map.get(name) {
            if v.shape() != &s {
                candle_core::bail!(
                    "shape mismatch for {name}: stored {:?}, requested {s:?}",
                    v.shape()
                );
            }
            return v.as_tensor().to_dtype(dtype);
        }
        let t = self.init_tensor(&s, name, h, dtype, dev)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        map.insert(name.to_string(), var);
        Ok(out)
    }

    fn get_unchecked(&self, name: &str, dtype: DType, _dev: &Device) -> CResult<Tensor> {
        match self.vars.lock().unwrap().get(name) {
            Some(v) => v.as_tensor().to_dtype(dtype),
            None => candle_core::bail!("no parameter named {name}"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.vars.lock().unwrap().contains_key(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_on_name_not_order() {
        let dev = Device::Cpu;
        let a = ParamStore::new(3);
        let vb = a.builder(DType::F32, &dev);
        let _ = candle_nn::linear(4, 5, vb.pp("x")).unwrap();
        let _ = candle_nn::linear(2, 2, vb.pp("y")).unwrap();

        let b = ParamStore::new(3);
        let vb = b.builder(DType::F32, &dev);
        let _ = candle_nn::linear(2, 2, vb.pp("y")).unwrap();
        let _ = candle_nn::linear(4, 5, vb.pp("x")).unwrap();
        assert_eq!(a.checksum("").unwrap(), b.checksum("").unwrap());
        assert_ne!(a.checksum("").unwrap(), ParamStore::new(4).checksum("x").unwrap());
    }

    #[test]
    fn deep_clone_is_independent() {
        let dev = Device::Cpu;
        let a = ParamStore::new(1);
        let _ = candle_nn::linear(3, 3, a.builder(DType::F32, &dev).pp("l")).unwrap();
        let b = a.deep_clone().unwrap();
        let before = b.checksum("").unwrap();
        for (_, v) in a.vars("") {
            v.set(&v.as_tensor().zeros_like().unwrap()).unwrap();
        }
        assert_eq!(b.checksum("").unwrap(), before);
        assert_ne!(a.checksum("").unwrap(), before);
    }
}
