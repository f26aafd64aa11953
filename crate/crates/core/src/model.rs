//! The full editing model: codec + bridge + DiT behind one interface, with
//! the flow-matching training objective and the Euler sampler.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bridge::{
    bridge_forward, init_bridge_params, BridgeConfig, BridgeContext, BridgeDesign, LoraConfig,
    MllmConfig, QueryConfig,
};
use crate::codec::{decode_with, encode, make_basis, LatentGrid, Media, MediaKind, OrthonormalBasis};
use crate::dit::{dit_forward, flow_interpolate, init_dit_params, ConditioningBundle, DitConfig};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamStore};
use crate::rng::derive_rng;
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mllm: MllmConfig,
    pub queries: QueryConfig,
    pub lora: LoraConfig,
    pub bridge: BridgeConfig,
    pub dit: DitConfig,
    pub codec_patch: usize,
    pub codec_seed: u64,
    /// Probability of replacing bridge tokens with the learned null set
    /// during training (classifier-free guidance support).
    pub cond_drop_prob: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mllm: MllmConfig::default(),
            queries: QueryConfig::default(),
            lora: LoraConfig::default(),
            bridge: BridgeConfig::default(),
            dit: DitConfig::default(),
            codec_patch: 4,
            codec_seed: 0xC0DEC,
            cond_drop_prob: 0.1,
        }
    }
}

/// One supervised editing example as the model consumes it.
pub struct EditItem<'a> {
    pub instruction: &'a str,
    pub source: &'a Media,
    pub target: &'a Media,
    pub reference: Option<&'a Media>,
}

/// One caption->media example for generator pretraining (no source
/// conditioning: the source latent is zeros).
pub struct GenItem<'a> {
    pub caption: &'a str,
    pub media: &'a Media,
}

pub struct EditModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub vocab: Vocabulary,
    pub basis: OrthonormalBasis,
}

/// Per-sample randomness, drawn sequentially before any parallel work so
/// results never depend on thread scheduling.
struct SampleNoise {
    t: f32,
    eps: Tensor<f32>,
    drop_cond: bool,
}

impl EditModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        init_bridge_params(
            &mut params,
            &cfg.mllm,
            &cfg.queries,
            &cfg.lora,
            &cfg.bridge,
            cfg.dit.d_dit,
            seed,
        )?;
        init_dit_params(&mut params, &cfg.dit, seed)?;
        let basis = make_basis(cfg.codec_seed, cfg.codec_patch * cfg.codec_patch * 3);
        Ok(EditModel {
            cfg,
            params,
            vocab: Vocabulary::builtin(),
            basis,
        })
    }

    pub fn design(&self) -> BridgeDesign {
        self.cfg.bridge.design
    }

    /// Copy every parameter under `prefix.` from another store (shape-checked).
    pub fn adopt_group(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let names: Vec<String> = other
            .names_with_prefixes(&[prefix])
            .into_iter()
            .collect();
        if names.is_empty() {
            return Err(Error::Contract(format!(
                "checkpoint has no parameters under '{prefix}'"
            )));
        }
        for name in &names {
            let src = other.get(name)?;
            let dst = self.params.get_mut(name)?;
            if dst.shape() != src.shape() {
                return Err(Error::Dimension(format!(
                    "parameter '{name}': checkpoint shape {:?} vs model shape {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(names.len())
    }

    fn bridge_ctx(&self) -> BridgeContext<'_> {
        BridgeContext {
            mllm: &self.cfg.mllm,
            queries: &self.cfg.queries,
            lora: &self.cfg.lora,
            bridge: &self.cfg.bridge,
        }
    }

    pub fn encode_media(&self, media: &Media) -> Result<LatentGrid> {
        encode(media, &self.basis, self.cfg.codec_patch)
    }

    /// Latent token tensor flattened to [n_tokens, d_lat].
    fn flat_tokens(grid: &LatentGrid) -> Result<Tensor<f32>> {
        Tensor::new(
            vec![grid.token_count(), grid.d_lat],
            grid.tokens.data().to_vec(),
        )
    }

    fn draw_noise(
        &self,
        rng: &mut ChaCha8Rng,
        n_tokens: usize,
        allow_drop: bool,
    ) -> SampleNoise {
        let t: f32 = rng.gen();
        let n = n_tokens * self.cfg.dit.d_lat;
        let mut eps = Vec::with_capacity(n);
        for _ in 0..n {
            let z: f32 = StandardNormal.sample(rng);
            eps.push(z);
        }
        let drop_cond = allow_drop && rng.gen::<f32>() < self.cfg.cond_drop_prob;
        SampleNoise {
            t,
            eps: Tensor::new(vec![n_tokens, self.cfg.dit.d_lat], eps).expect("eps shape"),
            drop_cond,
        }
    }

    /// Flow-matching loss for one editing sample on its own tape; returns
    /// the loss and gradients for `trainable`.
    fn edit_sample_loss(
        &self,
        trainable: &BTreeSet<String>,
        item: &EditItem,
        noise: &SampleNoise,
    ) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
        let tokens = self.vocab.tokenize(item.instruction)?;
        let source_lat = self.encode_media(item.source)?;
        let target_lat = self.encode_media(item.target)?;
        if !source_lat.same_grid(&target_lat) {
            return Err(Error::Contract(
                "source and target media have different latent grids".into(),
            ));
        }
        let ref_lat = match item.reference {
            Some(r) => Some(self.encode_media(r)?),
            None => None,
        };

        let mut b = Binding::new(&self.params, trainable);
        let cond = if noise.drop_cond {
            b.param("dit.null_cond")?
        } else {
            bridge_forward(&mut b, &self.bridge_ctx(), &tokens, item.source)?
        };

        let x_data = Self::flat_tokens(&target_lat)?;
        let flow = flow_interpolate(&x_data, &noise.eps, noise.t)?;
        let noisy = b.constant(flow.x_t.clone());
        let bundle = ConditioningBundle {
            cond,
            source: &source_lat,
            reference: ref_lat.as_ref(),
            t: noise.t,
        };
        let pred = dit_forward(&mut b, &self.cfg.dit, noisy, &bundle)?;
        let target_v = b.constant(flow.v_target.clone());
        let loss = b.tape.mse_loss(pred, target_v)?;
        let loss_val = b.tape.value(loss).item() as f64;
        if !loss_val.is_finite() {
            return Ok((loss_val, BTreeMap::new()));
        }
        b.tape.backward(loss)?;
        Ok((loss_val, b.grads()))
    }

    /// Caption->media flow-matching loss with a zero source latent.
    fn gen_sample_loss(
        &self,
        trainable: &BTreeSet<String>,
        item: &GenItem,
        noise: &SampleNoise,
    ) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
        let tokens = self.vocab.tokenize(item.caption)?;
        let media_lat = self.encode_media(item.media)?;
        let zero_src = media_lat.zeros_like();

        let mut b = Binding::new(&self.params, trainable);
        let cond = if noise.drop_cond {
            b.param("dit.null_cond")?
        } else {
            bridge_forward(&mut b, &self.bridge_ctx(), &tokens, item.media)?
        };
        let x_data = Self::flat_tokens(&media_lat)?;
        let flow = flow_interpolate(&x_data, &noise.eps, noise.t)?;
        let noisy = b.constant(flow.x_t.clone());
        let bundle = ConditioningBundle {
            cond,
            source: &zero_src,
            reference: None,
            t: noise.t,
        };
        let pred = dit_forward(&mut b, &self.cfg.dit, noisy, &bundle)?;
        let target_v = b.constant(flow.v_target.clone());
        let loss = b.tape.mse_loss(pred, target_v)?;
        let loss_val = b.tape.value(loss).item() as f64;
        if !loss_val.is_finite() {
            return Ok((loss_val, BTreeMap::new()));
        }
        b.tape.backward(loss)?;
        Ok((loss_val, b.grads()))
    }

    /// Mean flow-matching loss and gradients over a single-modality batch.
    /// Randomness is pre-drawn in batch order from `rng`, so the result is
    /// bitwise reproducible regardless of the worker pool.
    pub fn fm_loss_batch(
        &self,
        trainable: &BTreeSet<String>,
        items: &[EditItem],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
        if items.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let kind = items[0].source.kind;
        if items.iter().any(|i| i.source.kind != kind) {
            return Err(Error::Contract(
                "mixed-modality batch: the scheduler must deliver single-modality batches".into(),
            ));
        }
        let n_tokens = self.encode_media(items[0].target)?.token_count();
        let noises: Vec<SampleNoise> = items
            .iter()
            .map(|_| self.draw_noise(rng, n_tokens, true))
            .collect();
        let results: Vec<Result<(f64, BTreeMap<String, Tensor<f32>>)>> = items
            .par_iter()
            .zip(noises.par_iter())
            .map(|(item, noise)| self.edit_sample_loss(trainable, item, noise))
            .collect();
        Self::reduce_batch(results)
    }

    /// Pretraining analog of [`EditModel::fm_loss_batch`].
    pub fn gen_loss_batch(
        &self,
        trainable: &BTreeSet<String>,
        items: &[GenItem],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
        if items.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let kind = items[0].media.kind;
        if items.iter().any(|i| i.media.kind != kind) {
            return Err(Error::Contract(
                "mixed-modality batch: the scheduler must deliver single-modality batches".into(),
            ));
        }
        let n_tokens = self.encode_media(items[0].media)?.token_count();
        let noises: Vec<SampleNoise> = items
            .iter()
            .map(|_| self.draw_noise(rng, n_tokens, true))
            .collect();
        let results: Vec<Result<(f64, BTreeMap<String, Tensor<f32>>)>> = items
            .par_iter()
            .zip(noises.par_iter())
            .map(|(item, noise)| self.gen_sample_loss(trainable, item, noise))
            .collect();
        Self::reduce_batch(results)
    }

    fn reduce_batch(
        results: Vec<Result<(f64, BTreeMap<String, Tensor<f32>>)>>,
    ) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
        let n = results.len() as f64;
        let mut loss_sum = 0.0;
        let mut grads: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        for r in results {
            let (loss, g) = r?;
            loss_sum += loss;
            for (name, t) in g {
                match grads.get_mut(&name) {
                    Some(acc) => {
                        let ad = acc.data_mut();
                        for (a, b) in ad.iter_mut().zip(t.data().iter()) {
                            *a += b;
                        }
                    }
                    None => {
                        grads.insert(name, t);
                    }
                }
            }
        }
        let scale = 1.0 / n as f32;
        for g in grads.values_mut() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
        Ok((loss_sum / n, grads))
    }

    /// Conditioning tokens for an instruction+media pair, computed once and
    /// reused across sampler steps (they do not depend on t).
    pub fn bridge_tokens(&self, instruction: &str, media: &Media) -> Result<Tensor<f32>> {
        let tokens = self.vocab.tokenize(instruction)?;
        let empty = BTreeSet::new();
        let mut b = Binding::new(&self.params, &empty);
        let cond = bridge_forward(&mut b, &self.bridge_ctx(), &tokens, media)?;
        Ok(b.tape.value(cond).clone())
    }

    fn null_tokens(&self) -> Result<Tensor<f32>> {
        Ok(self.params.get("dit.null_cond")?.clone())
    }

    /// One velocity evaluation (no gradients).
    fn predict_velocity(
        &self,
        x_t: &Tensor<f32>,
        cond: &Tensor<f32>,
        source: &LatentGrid,
        reference: Option<&LatentGrid>,
        t: f32,
    ) -> Result<Tensor<f32>> {
        let empty = BTreeSet::new();
        let mut b = Binding::new(&self.params, &empty);
        let cond_id = b.constant(cond.clone());
        let noisy = b.constant(x_t.clone());
        let bundle = ConditioningBundle {
            cond: cond_id,
            source,
            reference,
            t,
        };
        let v = dit_forward(&mut b, &self.cfg.dit, noisy, &bundle)?;
        Ok(b.tape.value(v).clone())
    }

    /// Euler sampler: x starts at Gaussian noise and integrates the learned
    /// velocity from t=1 down to 0 in `steps` equal steps; the result is
    /// decoded and clamped to [0,1]. `guidance` = 1 disables
    /// classifier-free guidance.
    pub fn sample_edit(
        &self,
        instruction: &str,
        source: &Media,
        reference: Option<&Media>,
        steps: usize,
        seed: u64,
        guidance: f32,
    ) -> Result<Media> {
        if steps == 0 {
            return Err(Error::Contract("sampler needs at least one step".into()));
        }
        let cond = self.bridge_tokens(instruction, source)?;
        self.sample_with_cond(&cond, source, reference, steps, seed, guidance)
    }

    /// Sampler core shared by editing and caption-only generation.
    pub fn sample_with_cond(
        &self,
        cond: &Tensor<f32>,
        source: &Media,
        reference: Option<&Media>,
        steps: usize,
        seed: u64,
        guidance: f32,
    ) -> Result<Media> {
        let source_lat = self.encode_media(source)?;
        self.sample_latent(cond, &source_lat, reference, steps, seed, guidance)
    }

    /// Caption-to-media generation: zero source latent of the given geometry.
    pub fn sample_generation(
        &self,
        caption: &str,
        kind: MediaKind,
        frames: usize,
        steps: usize,
        seed: u64,
    ) -> Result<Media> {
        let shape_media = Media::uniform(
            kind,
            frames,
            self.cfg.mllm.canvas_h,
            self.cfg.mllm.canvas_w,
            [0.0; 3],
        );
        let cond = self.bridge_tokens(caption, &shape_media)?;
        let zero_lat = self.encode_media(&shape_media)?.zeros_like();
        self.sample_latent(&cond, &zero_lat, None, steps, seed, 1.0)
    }

    fn sample_latent(
        &self,
        cond: &Tensor<f32>,
        source_lat: &LatentGrid,
        reference: Option<&Media>,
        steps: usize,
        seed: u64,
        guidance: f32,
    ) -> Result<Media> {
        let ref_lat = match reference {
            Some(r) => Some(self.encode_media(r)?),
            None => None,
        };
        let mut rng = derive_rng(seed, "sample/eps");
        let n = source_lat.token_count() * source_lat.d_lat;
        let mut x = Vec::with_capacity(n);
        for _ in 0..n {
            let z: f32 = StandardNormal.sample(&mut rng);
            x.push(z);
        }
        let shape = vec![source_lat.token_count(), source_lat.d_lat];
        let mut x_t = Tensor::new(shape.clone(), x)?;
        let null;
        let null_ref = if guidance != 1.0 {
            null = self.null_tokens()?;
            Some(&null)
        } else {
            None
        };
        for k in (1..=steps).rev() {
            let t = k as f32 / steps as f32;
            let v = self.predict_velocity(&x_t, cond, source_lat, ref_lat.as_ref(), t)?;
            let v = match null_ref {
                Some(null_cond) => {
                    let vu =
                        self.predict_velocity(&x_t, null_cond, source_lat, ref_lat.as_ref(), t)?;
                    let mut out = vu.clone();
                    let od = out.data_mut();
                    for (o, (&c, &u)) in od.iter_mut().zip(v.data().iter().zip(vu.data().iter())) {
                        *o = u + guidance * (c - u);
                    }
                    out
                }
                None => v,
            };
            let xd = x_t.data_mut();
            let step = 1.0 / steps as f32;
            for (xi, &vi) in xd.iter_mut().zip(v.data().iter()) {
                *xi -= step * vi;
            }
        }
        let out_grid = LatentGrid {
            tokens: Tensor::new(
                vec![
                    source_lat.frames,
                    source_lat.grid_h,
                    source_lat.grid_w,
                    source_lat.d_lat,
                ],
                x_t.data().to_vec(),
            )?,
            ..source_lat.clone()
        };
        decode_with(&out_grid, &self.basis)
    }
}
