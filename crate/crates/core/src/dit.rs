//! Generation side: a diffusion transformer over latent tokens, conditioned
//! by cross-attention to bridge tokens, additive source latents, and
//! sequence-concatenated reference latents, trained under rectified-flow
//! flow matching.
//!
//! Flow convention: data at t=0, noise at t=1, x_t = (1-t) x_data + t eps,
//! target velocity v = eps - x_data; sampling integrates Euler steps from
//! t=1 down to 0.

use crate::codec::LatentGrid;
use crate::error::{Error, Result};
use crate::nn;
use crate::params::{Binding, ParamStore};
use crate::tensor::{Tensor, ValueId};

pub const RMS_EPS: f32 = 1e-6;

/// Learned null conditioning rows used when bridge tokens are dropped for
/// classifier-free guidance.
pub const NULL_COND_TOKENS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DitConfig {
    pub d_dit: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_hidden: usize,
    pub time_dim: usize,
    pub d_lat: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub max_frames: usize,
}

impl Default for DitConfig {
    fn default() -> Self {
        DitConfig {
            d_dit: 128,
            n_layers: 6,
            n_heads: 4,
            mlp_hidden: 256,
            time_dim: 64,
            d_lat: 48,
            grid_h: 8,
            grid_w: 8,
            max_frames: 5,
        }
    }
}

pub fn init_dit_params(store: &mut ParamStore, cfg: &DitConfig, seed: u64) -> Result<()> {
    let d = cfg.d_dit;
    let proj_std = 0.02 / (2.0 * cfg.n_layers as f64).sqrt();
    store.init_gaussian("dit.in_proj", &[cfg.d_lat, d], 0.02, seed)?;
    store.init_gaussian("dit.pos.row", &[cfg.grid_h, d], 0.02, seed)?;
    store.init_gaussian("dit.pos.col", &[cfg.grid_w, d], 0.02, seed)?;
    store.init_gaussian("dit.pos.frame", &[cfg.max_frames, d], 0.02, seed)?;
    store.init_gaussian("dit.segment.ref", &[1, d], 0.02, seed)?;
    store.init_gaussian("dit.null_cond", &[NULL_COND_TOKENS, d], 0.02, seed)?;
    store.init_gaussian("dit.time.fc1", &[cfg.time_dim, d], 0.02, seed)?;
    store.init_zeros("dit.time.fc1.bias", &[d])?;
    store.init_gaussian("dit.time.fc2", &[d, d], 0.02, seed)?;
    store.init_zeros("dit.time.fc2.bias", &[d])?;
    for i in 0..cfg.n_layers {
        let p = format!("dit.layer{i}");
        // Adaptive scale/shift head starts at zero: modulation is identity.
        store.init_zeros(&format!("{p}.ada"), &[d, 6 * d])?;
        store.init_zeros(&format!("{p}.ada.bias"), &[6 * d])?;
        for w in ["q", "k", "v", "o"] {
            store.init_gaussian(&format!("{p}.self.{w}"), &[d, d], proj_std, seed)?;
        }
        for w in ["q", "k", "v"] {
            store.init_gaussian(&format!("{p}.cross.{w}"), &[d, d], proj_std, seed)?;
        }
        // Cross-attention output starts silent.
        store.init_zeros(&format!("{p}.cross.o"), &[d, d])?;
        store.init_gaussian(&format!("{p}.mlp.up"), &[d, cfg.mlp_hidden], proj_std, seed)?;
        store.init_gaussian(&format!("{p}.mlp.down"), &[cfg.mlp_hidden, d], proj_std, seed)?;
    }
    // Zero-initialized output head: the model predicts exactly zero velocity
    // at init, which the init-time invariants rely on.
    store.init_zeros("dit.out_proj", &[d, cfg.d_lat])?;
    Ok(())
}

// ── flow matching ───────────────────────────────────────────────────────

/// Linear interpolant state between clean data and noise.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub x_data: Tensor<f32>,
    pub eps: Tensor<f32>,
    pub t: f32,
    pub x_t: Tensor<f32>,
    pub v_target: Tensor<f32>,
}

/// x_t = (1-t) x_data + t eps; v_target = eps - x_data.
pub fn flow_interpolate(x_data: &Tensor<f32>, eps: &Tensor<f32>, t: f32) -> Result<FlowState> {
    if x_data.shape() != eps.shape() {
        return Err(Error::Dimension(format!(
            "flow_interpolate: data {:?} vs noise {:?}",
            x_data.shape(),
            eps.shape()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!(
            "flow_interpolate: t = {t} outside [0, 1]"
        )));
    }
    let n = x_data.numel();
    let mut x_t = vec![0.0f32; n];
    let mut v = vec![0.0f32; n];
    let xd = x_data.data();
    let ed = eps.data();
    for i in 0..n {
        x_t[i] = (1.0 - t) * xd[i] + t * ed[i];
        v[i] = ed[i] - xd[i];
    }
    Ok(FlowState {
        x_data: x_data.clone(),
        eps: eps.clone(),
        t,
        x_t: Tensor::new(x_data.shape().to_vec(), x_t)?,
        v_target: Tensor::new(x_data.shape().to_vec(), v)?,
    })
}

/// Sinusoidal timestep features for t in [0,1].
pub fn timestep_features(t: f32, dim: usize) -> Tensor<f32> {
    let half = dim / 2;
    let mut data = vec![0.0f32; dim];
    for i in 0..half {
        let freq = (1000.0f64).powf(i as f64 / (half.max(2) - 1) as f64);
        let phase = t as f64 * freq;
        data[i] = phase.sin() as f32;
        data[half + i] = phase.cos() as f32;
    }
    Tensor::new(vec![1, dim], data).expect("timestep feature shape")
}

// ── forward ─────────────────────────────────────────────────────────────

/// Everything the DiT is conditioned on for one sample.
pub struct ConditioningBundle<'a> {
    /// Bridge tokens [N_cond, d_dit], already on the tape.
    pub cond: ValueId,
    pub source: &'a LatentGrid,
    pub reference: Option<&'a LatentGrid>,
    pub t: f32,
}

fn grid_position_ids(g: &LatentGrid) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let n = g.token_count();
    let mut rows = Vec::with_capacity(n);
    let mut cols = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    for f in 0..g.frames {
        for y in 0..g.grid_h {
            for x in 0..g.grid_w {
                rows.push(y);
                cols.push(x);
                frames.push(f);
            }
        }
    }
    (rows, cols, frames)
}

/// Project latent tokens into the model width and add position embeddings.
fn embed_latents(b: &mut Binding, grid: &LatentGrid, tokens: ValueId) -> Result<ValueId> {
    let in_proj = b.param("dit.in_proj")?;
    let x = b.tape.matmul(tokens, in_proj)?;
    let (rows, cols, frames) = grid_position_ids(grid);
    let row_t = b.param("dit.pos.row")?;
    let col_t = b.param("dit.pos.col")?;
    let frame_t = b.param("dit.pos.frame")?;
    let r = b.tape.embedding(row_t, &rows)?;
    let c = b.tape.embedding(col_t, &cols)?;
    let f = b.tape.embedding(frame_t, &frames)?;
    let x = b.tape.add(x, r)?;
    let x = b.tape.add(x, c)?;
    b.tape.add(x, f)
}

/// Predicted velocity for noisy latent tokens under the bundle. Outputs at
/// reference positions are discarded: the result always matches the noisy
/// grid's token count.
pub fn dit_forward(
    b: &mut Binding,
    cfg: &DitConfig,
    noisy: ValueId,
    bundle: &ConditioningBundle,
) -> Result<ValueId> {
    let n_tok = bundle.source.token_count();
    let noisy_shape = b.tape.shape(noisy).to_vec();
    if noisy_shape != [n_tok, cfg.d_lat] {
        return Err(Error::Contract(format!(
            "dit_forward: noisy latent {:?} does not match source grid [{n_tok}, {}]",
            noisy_shape, cfg.d_lat
        )));
    }
    if let Some(r) = bundle.reference {
        if r.kind != crate::codec::MediaKind::Image {
            return Err(Error::Contract(
                "reference latent must be image-kind".into(),
            ));
        }
    }

    // (i) additive source conditioning on raw codec latents.
    let src = b.constant(Tensor::new(
        vec![n_tok, cfg.d_lat],
        bundle.source.tokens.data().to_vec(),
    )?);
    let fused = b.tape.add(noisy, src)?;

    // (ii) input projection + positions.
    let mut x = embed_latents(b, bundle.source, fused)?;

    // (iii) reference tokens appended with a segment embedding.
    if let Some(r) = bundle.reference {
        let toks = b.constant(Tensor::new(
            vec![r.token_count(), r.d_lat],
            r.tokens.data().to_vec(),
        )?);
        let re = embed_latents(b, r, toks)?;
        let seg = b.param("dit.segment.ref")?;
        let re = b.tape.add(re, seg)?;
        x = b.tape.concat(&[x, re], 0)?;
    }

    // Timestep conditioning vector.
    let tf = b.constant(timestep_features(bundle.t, cfg.time_dim));
    let t1 = b.param("dit.time.fc1")?;
    let t1b = b.param("dit.time.fc1.bias")?;
    let t2 = b.param("dit.time.fc2")?;
    let t2b = b.param("dit.time.fc2.bias")?;
    let tv = b.tape.matmul(tf, t1)?;
    let tv = b.tape.add(tv, t1b)?;
    let tv = b.tape.silu(tv)?;
    let tv = b.tape.matmul(tv, t2)?;
    let t_vec = b.tape.add(tv, t2b)?; // [1, d]

    let unit_gain = b.constant(Tensor::full(&[cfg.d_dit], 1.0));

    for i in 0..cfg.n_layers {
        let p = format!("dit.layer{i}");
        let ada_w = b.param(&format!("{p}.ada"))?;
        let ada_b = b.param(&format!("{p}.ada.bias"))?;
        let ada = b.tape.matmul(t_vec, ada_w)?;
        let ada = b.tape.add(ada, ada_b)?; // [1, 6d]
        let chunk = |b: &mut Binding, k: usize| -> Result<ValueId> {
            b.tape.narrow(ada, 1, k * cfg.d_dit, cfg.d_dit)
        };
        let modulate = |b: &mut Binding, x: ValueId, s: ValueId, sh: ValueId| -> Result<ValueId> {
            let s1 = b.tape.add_const(s, 1.0)?;
            let xs = b.tape.mul(x, s1)?;
            b.tape.add(xs, sh)
        };

        // Self-attention over all latent (+reference) tokens, bidirectional.
        let (s0, sh0) = (chunk(b, 0)?, chunk(b, 1)?);
        let xn = b.tape.rms_norm(x, unit_gain, RMS_EPS)?;
        let xn = modulate(b, xn, s0, sh0)?;
        let wq = b.param(&format!("{p}.self.q"))?;
        let wk = b.param(&format!("{p}.self.k"))?;
        let wv = b.param(&format!("{p}.self.v"))?;
        let wo = b.param(&format!("{p}.self.o"))?;
        let attn = nn::attention_sublayer(&mut b.tape, xn, xn, wq, wk, wv, wo, cfg.n_heads, None)?;
        x = b.tape.add(x, attn)?;

        // Cross-attention to the bridge tokens.
        let (s1, sh1) = (chunk(b, 2)?, chunk(b, 3)?);
        let xn = b.tape.rms_norm(x, unit_gain, RMS_EPS)?;
        let xn = modulate(b, xn, s1, sh1)?;
        let cq = b.param(&format!("{p}.cross.q"))?;
        let ck = b.param(&format!("{p}.cross.k"))?;
        let cv = b.param(&format!("{p}.cross.v"))?;
        let co = b.param(&format!("{p}.cross.o"))?;
        let cross = nn::attention_sublayer(
            &mut b.tape,
            xn,
            bundle.cond,
            cq,
            ck,
            cv,
            co,
            cfg.n_heads,
            None,
        )?;
        x = b.tape.add(x, cross)?;

        // MLP.
        let (s2, sh2) = (chunk(b, 4)?, chunk(b, 5)?);
        let xn = b.tape.rms_norm(x, unit_gain, RMS_EPS)?;
        let xn = modulate(b, xn, s2, sh2)?;
        let up = b.param(&format!("{p}.mlp.up"))?;
        let down = b.param(&format!("{p}.mlp.down"))?;
        let h = b.tape.matmul(xn, up)?;
        let h = b.tape.gelu(h)?;
        let mlp = b.tape.matmul(h, down)?;
        x = b.tape.add(x, mlp)?;
    }

    let xn = b.tape.rms_norm(x, unit_gain, RMS_EPS)?;
    let out_proj = b.param("dit.out_proj")?;
    let v = b.tape.matmul(xn, out_proj)?;
    // (vi) keep only the original latent grid positions.
    if bundle.reference.is_some() {
        b.tape.narrow(v, 0, 0, n_tok)
    } else {
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolant_endpoints_and_arithmetic() {
        let x = Tensor::from_vec(vec![2.0]);
        let e = Tensor::from_vec(vec![0.0]);
        let s0 = flow_interpolate(&x, &e, 0.0).unwrap();
        assert_eq!(s0.x_t.data(), x.data());
        let s1 = flow_interpolate(&x, &e, 1.0).unwrap();
        assert_eq!(s1.x_t.data(), e.data());
        let s = flow_interpolate(&x, &e, 0.25).unwrap();
        assert_eq!(s.x_t.data(), &[1.5]);
        assert_eq!(s.v_target.data(), &[-2.0]);
    }

    #[test]
    fn interpolate_rejects_bad_t_and_shapes() {
        let x = Tensor::from_vec(vec![1.0]);
        let e = Tensor::from_vec(vec![0.0]);
        assert!(matches!(
            flow_interpolate(&x, &e, 1.5),
            Err(Error::Domain(_))
        ));
        let e2 = Tensor::from_vec(vec![0.0, 0.0]);
        assert!(flow_interpolate(&x, &e2, 0.5).is_err());
    }

    #[test]
    fn velocity_matches_numerical_derivative() {
        let x = Tensor::from_vec(vec![0.8, -0.3, 0.1]);
        let e = Tensor::from_vec(vec![-1.0, 0.5, 2.0]);
        let h = 1e-3f32;
        let t = 0.4f32;
        let plus = flow_interpolate(&x, &e, t + h).unwrap();
        let minus = flow_interpolate(&x, &e, t - h).unwrap();
        let mid = flow_interpolate(&x, &e, t).unwrap();
        for i in 0..3 {
            let fd = (plus.x_t.data()[i] - minus.x_t.data()[i]) / (2.0 * h);
            assert!((fd - mid.v_target.data()[i]).abs() < 1e-3, "fd {fd}");
        }
    }

    #[test]
    fn timestep_features_distinguish_t() {
        let a = timestep_features(0.1, 64);
        let b = timestep_features(0.9, 64);
        assert_ne!(a.data(), b.data());
    }
}
