//! AdamW with bias correction and decoupled weight decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moments per parameter name plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        if cfg.lr <= 0.0 {
            // run_stage validates configs before building one of these
            panic!("AdamW requires lr > 0, got {}", cfg.lr);
        }
        AdamW {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One optimizer step over the given named gradients. `lr_scale`
    /// implements warmup without touching the stored hyperparameters.
    pub fn apply(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor<f32>>,
        lr_scale: f64,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.cfg.beta1.powf(t);
        let c2 = 1.0 - self.cfg.beta2.powf(t);
        let lr = (self.cfg.lr * lr_scale) as f32;
        let b1 = self.cfg.beta1 as f32;
        let b2 = self.cfg.beta2 as f32;
        let eps = self.cfg.eps as f32;
        let wd = self.cfg.weight_decay as f32;
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Dimension(format!(
                    "adamw: gradient shape {:?} does not match parameter '{}' {:?}",
                    g.shape(),
                    name,
                    p.shape()
                )));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            let gd = g.data();
            for i in 0..pd.len() {
                md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
                vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
                let m_hat = md[i] / c1 as f32;
                let v_hat = vd[i] / c2 as f32;
                pd[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * pd[i]);
            }
        }
        Ok(())
    }
}

/// Global-norm gradient clipping; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor<f32>>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.values() {
        for &x in g.data() {
            sq += (x as f64) * (x as f64);
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, vals: Vec<f32>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::from_vec(vals)).unwrap();
        s
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut store = store_with("w", vec![1.5, -2.0]);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::from_vec(vec![0.0, 0.0]));
        opt.apply(&mut store, &grads, 1.0).unwrap();
        assert_eq!(store.get("w").unwrap().data(), &[1.5, -2.0]);
    }

    #[test]
    fn zero_betas_single_step_is_sign_sgd() {
        // With beta1=beta2=0 and wd=0, one step moves by lr*g/(|g|+eps).
        let mut store = store_with("w", vec![1.0]);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.1,
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e-8,
            weight_decay: 0.0,
        });
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::from_vec(vec![1.0]));
        opt.apply(&mut store, &grads, 1.0).unwrap();
        let moved = 1.0 - store.get("w").unwrap().data()[0] as f64;
        assert!((moved - 0.1).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn decoupled_decay_shrinks_param() {
        let mut store = store_with("w", vec![2.0]);
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::from_vec(vec![0.0]));
        opt.apply(&mut store, &grads, 1.0).unwrap();
        let got = store.get("w").unwrap().data()[0];
        let expect = 2.0 - 0.01 * 0.5 * 2.0;
        assert!((got - expect).abs() < 1e-7, "got {got}, expected {expect}");
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Tensor::from_vec(vec![3.0, 0.0]));
        grads.insert("b".to_string(), Tensor::from_vec(vec![4.0]));
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-6);
        let mut sq = 0.0;
        for g in grads.values() {
            for &x in g.data() {
                sq += x * x;
            }
        }
        assert!((sq.sqrt() - 1.0).abs() < 1e-6);
    }
}
