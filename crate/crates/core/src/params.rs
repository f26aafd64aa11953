//! Named parameter storage and per-step graph binding.
//!
//! All model weights live in one [`ParamStore`] under hierarchical dotted
//! names (`mllm.layer0.attn.q`, `dit.out_proj`, ...). Stage plans freeze and
//! unfreeze parameters by name set; checkpoints serialize the store directly.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::tensor::{Tape, Tensor, ValueId};

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor<f32>) -> Result<()> {
        if self.map.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter '{name}'")));
        }
        self.map.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<f32>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Names matching any of the given dotted prefixes ("lora" matches
    /// "lora.x" and "lora", not "lorax").
    pub fn names_with_prefixes(&self, prefixes: &[&str]) -> BTreeSet<String> {
        self.map
            .keys()
            .filter(|name| {
                prefixes.iter().any(|p| {
                    name.as_str() == *p
                        || (name.starts_with(p) && name.as_bytes().get(p.len()) == Some(&b'.'))
                })
            })
            .cloned()
            .collect()
    }

    /// Gaussian init with std derived from the master seed and the parameter
    /// name, so init order never matters.
    pub fn init_gaussian(&mut self, name: &str, shape: &[usize], std: f64, seed: u64) -> Result<()> {
        let mut rng: ChaCha8Rng = derive_rng(seed, &format!("init/{name}"));
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((z * std) as f32);
        }
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn init_ones(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::full(shape, 1.0))
    }
}

/// Binds store parameters into a tape for one forward/backward pass,
/// remembering which ValueId each name received so gradients can be read
/// back out by name.
pub struct Binding<'a> {
    pub tape: Tape<f32>,
    store: &'a ParamStore,
    trainable: &'a BTreeSet<String>,
    bound: BTreeMap<String, ValueId>,
}

impl<'a> Binding<'a> {
    pub fn new(store: &'a ParamStore, trainable: &'a BTreeSet<String>) -> Self {
        Binding {
            tape: Tape::new(),
            store,
            trainable,
            bound: BTreeMap::new(),
        }
    }

    /// Leaf id for a named parameter, inserting it on first use.
    pub fn param(&mut self, name: &str) -> Result<ValueId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let t = self.store.get(name)?.clone();
        let requires_grad = self.trainable.contains(name);
        let id = self.tape.leaf(t, requires_grad);
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Constant (non-trainable) input.
    pub fn constant(&mut self, t: Tensor<f32>) -> ValueId {
        self.tape.leaf(t, false)
    }

    /// Gradients of all trainable bound parameters after `backward`.
    /// Parameters bound but untouched by the loss report zeros.
    pub fn grads(&self) -> BTreeMap<String, Tensor<f32>> {
        let mut out = BTreeMap::new();
        for (name, &id) in &self.bound {
            if self.trainable.contains(name) {
                if let Some(g) = self.tape.grad(id) {
                    out.insert(name.clone(), g);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_matching_is_dotted() {
        let mut s = ParamStore::new();
        s.insert("lora.a", Tensor::zeros(&[1])).unwrap();
        s.insert("lorax", Tensor::zeros(&[1])).unwrap();
        s.insert("query.image", Tensor::zeros(&[1])).unwrap();
        let names = s.names_with_prefixes(&["lora", "query"]);
        assert!(names.contains("lora.a"));
        assert!(names.contains("query.image"));
        assert!(!names.contains("lorax"));
    }

    #[test]
    fn init_is_order_independent() {
        let mut a = ParamStore::new();
        a.init_gaussian("x", &[4], 0.02, 9).unwrap();
        a.init_gaussian("y", &[4], 0.02, 9).unwrap();
        let mut b = ParamStore::new();
        b.init_gaussian("y", &[4], 0.02, 9).unwrap();
        b.init_gaussian("x", &[4], 0.02, 9).unwrap();
        assert!(a.get("x").unwrap().bit_eq(b.get("x").unwrap()));
        assert!(a.get("y").unwrap().bit_eq(b.get("y").unwrap()));
    }

    #[test]
    fn binding_reports_zero_grads_for_unused_trainables() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(vec![2.0])).unwrap();
        let trainable: BTreeSet<String> = ["w".to_string()].into_iter().collect();
        let mut b = Binding::new(&s, &trainable);
        let w = b.param("w").unwrap();
        // w participates in nothing; grads() should still report zeros.
        let _ = w;
        let g = b.grads();
        assert_eq!(g["w"].data(), &[0.0]);
    }
}
