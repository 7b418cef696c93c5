//! Parameter storage with seeded initialization.
//!
//! candle's CPU random generator cannot be seeded, so parameters are created
//! through [`ParamStore`], which draws each tensor from a stream derived from the
//! store seed and the parameter's name. Two stores with the same seed therefore
//! hold identical weights regardless of creation order.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::init::{Init, NormalOrUniform};
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{VarBuilder, VarMap};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone)]
pub struct ParamStore {
    vars: VarMap,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            vars: VarMap::new(),
            seed,
        }
    }

    pub fn builder(&self, dtype: DType, device: &Device) -> VarBuilder<'static> {
        VarBuilder::from_backend(Box::new(self.clone()), dtype, device.clone())
    }

    pub fn vars(&self) -> &VarMap {
        &self.vars
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.sorted().into_values().collect()
    }

    /// Variables keyed by name, in name order.
    pub fn sorted(&self) -> BTreeMap<String, Var> {
        self.vars
            .data()
            .lock()
            .expect("param lock poisoned")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars
            .data()
            .lock()
            .expect("param lock poisoned")
            .get(name)
            .cloned()
    }

    pub fn num_params(&self) -> usize {
        self.all_vars().iter().map(|v| v.elem_count()).sum()
    }

    /// Detached copies of every parameter.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.sorted()
            .into_iter()
            .map(|(k, v)| Ok((k, v.as_tensor().copy()?.detach())))
            .collect()
    }

    /// Overwrites parameters from `tensors` (keys prefixed by `prefix`); every
    /// parameter must be present with a matching shape.
    pub fn restore(&self, tensors: &BTreeMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (name, var) in self.sorted() {
            let key = format!("{prefix}{name}");
            let t = tensors.get(&key).ok_or_else(|| Error::Format {
                what: "checkpoint",
                detail: format!("missing tensor {key}"),
            })?;
            if t.shape() != var.shape() {
                return Err(Error::shape(
                    format!("{key} {:?}", var.shape()),
                    format!("{:?}", t.shape()),
                ));
            }
            var.set(&t.to_dtype(var.dtype())?)?;
        }
        Ok(())
    }
}

impl SimpleBackend for ParamStore {
    fn get(
        &self,
        s: Shape,
        name: &str,
        h: Init,
        dtype: DType,
        dev: &Device,
    ) -> candle_core::Result<Tensor> {
        let mut data = self.vars.data().lock().expect("param lock poisoned");
        if let Some(var) = data.get(name) {
            let t = var.as_tensor();
            if t.shape() != &s {
                candle_core::bail!("shape mismatch for {name}: {:?} vs {s:?}", t.shape());
            }
            return Ok(t.clone());
        }
        let seed = rng::derive_seed(self.seed, &[fnv1a(name)]);
        let values = init_values(&h, &s, seed);
        let var = Var::from_tensor(&Tensor::from_vec(values, s, dev)?.to_dtype(dtype)?)?;
        let t = var.as_tensor().clone();
        data.insert(name.to_string(), var);
        Ok(t)
    }

    fn get_unchecked(
        &self,
        name: &str,
        _dtype: DType,
        _dev: &Device,
    ) -> candle_core::Result<Tensor> {
        let data = self.vars.data().lock().expect("param lock poisoned");
        match data.get(name) {
            Some(v) => Ok(v.as_tensor().clone()),
            None => candle_core::bail!("unknown parameter {name}"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.vars
            .data()
            .lock()
            .expect("param lock poisoned")
            .contains_key(name)
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn init_values(init: &Init, shape: &Shape, seed: u64) -> Vec<f64> {
    let n = shape.elem_count();
    let mut r = rng::stream(seed);
    let uniform = |r: &mut rng::Stream, lo: f64, up: f64| -> Vec<f64> {
        (0..n).map(|_| r.random_range(lo..up)).collect()
    };
    let normal = |r: &mut rng::Stream, mean: f64, std: f64| -> Vec<f64> {
        (0..n)
            .map(|_| mean + std * r.sample::<f64, _>(StandardNormal))
            .collect()
    };
    match *init {
        Init::Const(c) => vec![c; n],
        Init::Uniform { lo, up } => uniform(&mut r, lo, up),
        Init::Randn { mean, stdev } => normal(&mut r, mean, stdev),
        Init::Kaiming {
            dist,
            fan,
            non_linearity,
        } => {
            let std = non_linearity.gain() / (fan.for_shape(shape).max(1) as f64).sqrt();
            match dist {
                NormalOrUniform::Uniform => {
                    let bound = 3f64.sqrt() * std;
                    uniform(&mut r, -bound, bound)
                }
                NormalOrUniform::Normal => normal(&mut r, 0.0, std),
            }
        }
    }
}
