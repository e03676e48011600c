use std::collections::BTreeMap;

use grelax_autodiff::{Gradients, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Named parameter tensors of one model.
#[derive(Debug, Clone)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
    rng: ChaCha8Rng,
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Parameters recorded on a tape.
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Var<'t> {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("model parameter `{name}` is missing"),
        }
    }

    /// Gradients for every parameter, by name.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars.iter().map(|(k, v)| (k.clone(), grads.get(*v))).collect()
    }
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        Self {
            tensors: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Glorot-uniform `[fan_in, fan_out]` matrix.
    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.random_range(-a..a)).collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, data));
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) {
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| std * self.rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), data));
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::ones(shape));
    }

    fn insert(&mut self, name: &str, t: Tensor) {
        let prev = self.tensors.insert(name.to_string(), t);
        assert!(prev.is_none(), "parameter `{name}` defined twice");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every tensor on `tape`, as leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    pub fn to_named(&self) -> BTreeMap<String, ParamTensor> {
        self.tensors
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    ParamTensor {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect()
    }

    /// Replaces every tensor; names and shapes must match exactly.
    pub fn load_named(&mut self, named: BTreeMap<String, ParamTensor>) -> Result<(), ModelError> {
        if let Some(k) = named.keys().find(|k| !self.tensors.contains_key(*k)) {
            return Err(ModelError::Checkpoint(format!("unexpected parameter `{k}`")));
        }
        for (k, t) in self.tensors.iter_mut() {
            let Some(p) = named.get(k) else {
                return Err(ModelError::Checkpoint(format!("missing parameter `{k}`")));
            };
            if p.shape != t.shape() || p.data.len() != t.len() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter `{k}` has shape {:?} ({} values), expected {:?}",
                    p.shape,
                    p.data.len(),
                    t.shape()
                )));
            }
            if p.data.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::Checkpoint(format!("parameter `{k}` is not finite")));
            }
            *t = Tensor::new(p.shape.clone(), p.data.clone());
        }
        Ok(())
    }
}
