//! Understanding side: a toy decoder-only multimodal transformer with
//! modality-specific learnable query tokens and LoRA adapters, plus the four
//! bridge designs that turn instructions + media into DiT conditioning
//! tokens.
//!
//! Designs:
//! - `TextOnly`: small bidirectional text encoder, no multimodal model at
//!   all (the diffusion-only baseline).
//! - `QFormer`: frozen base transformer without queries; a learned
//!   cross-attention block compresses all last hidden states to a fixed
//!   number of tokens.
//! - `MetaQuery`: frozen base transformer + learnable queries + a deep
//!   transformer connector.
//! - `QueryLoraMlp`: learnable queries + LoRA-adapted base transformer + a
//!   two-layer MLP connector (the design adopted by the trainer).

use crate::codec::{Media, MediaKind};
use crate::error::{Error, Result};
use crate::nn;
use crate::params::{Binding, ParamStore};
use crate::tensor::{Tensor, ValueId};
use crate::vocab::Vocabulary;

pub const RMS_EPS: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeDesign {
    TextOnly,
    QFormer,
    MetaQuery,
    QueryLoraMlp,
}

impl BridgeDesign {
    pub fn key(self) -> &'static str {
        match self {
            BridgeDesign::TextOnly => "text_only",
            BridgeDesign::QFormer => "qformer",
            BridgeDesign::MetaQuery => "metaquery",
            BridgeDesign::QueryLoraMlp => "query_lora_mlp",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        match key {
            "text_only" => Ok(BridgeDesign::TextOnly),
            "qformer" => Ok(BridgeDesign::QFormer),
            "metaquery" => Ok(BridgeDesign::MetaQuery),
            "query_lora_mlp" => Ok(BridgeDesign::QueryLoraMlp),
            other => Err(Error::Config(format!(
                "unknown bridge design '{other}' (expected text_only|qformer|metaquery|query_lora_mlp)"
            ))),
        }
    }

    /// Parameter-name prefix of this design's connector group.
    pub fn connector_group(self) -> &'static str {
        match self {
            BridgeDesign::TextOnly => "textenc",
            BridgeDesign::QFormer => "qformer",
            BridgeDesign::MetaQuery => "connector",
            BridgeDesign::QueryLoraMlp => "mlp",
        }
    }

    pub fn uses_queries(self) -> bool {
        matches!(self, BridgeDesign::MetaQuery | BridgeDesign::QueryLoraMlp)
    }

    pub fn uses_lora(self) -> bool {
        matches!(self, BridgeDesign::QueryLoraMlp)
    }

    /// Whether the base multimodal model participates in the forward pass.
    pub fn uses_mllm(self) -> bool {
        !matches!(self, BridgeDesign::TextOnly)
    }
}

/// Whether image and video inputs get their own query sets or share one pool
/// of equal total size (the query-separation ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    Separate,
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MllmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    /// Visual patch edge in pixels.
    pub visual_patch: usize,
    pub canvas_h: usize,
    pub canvas_w: usize,
    /// Frames fed to the model after sampling (1 = first-frame-only).
    pub f_mllm: usize,
}

impl Default for MllmConfig {
    fn default() -> Self {
        MllmConfig {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            mlp_hidden: 256,
            vocab_size: Vocabulary::builtin().len(),
            visual_patch: 8,
            canvas_h: 32,
            canvas_w: 32,
            f_mllm: 5, // paper_scale: 13
        }
    }
}

impl MllmConfig {
    pub fn patches_per_frame(&self) -> usize {
        (self.canvas_h / self.visual_patch) * (self.canvas_w / self.visual_patch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryConfig {
    pub image_count: usize, // paper_scale: 256
    pub video_count: usize, // paper_scale: 512
    pub mode: QueryMode,
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            image_count: 16,
            video_count: 32,
            mode: QueryMode::Separate,
        }
    }
}

impl QueryConfig {
    /// Query-set parameter name and row count for a modality.
    pub fn set_for(&self, kind: MediaKind) -> (&'static str, usize) {
        match self.mode {
            QueryMode::Separate => match kind {
                MediaKind::Image => ("query.image", self.image_count),
                MediaKind::Video => ("query.video", self.video_count),
            },
            // One pool with the same total parameter count serves both.
            QueryMode::Shared => ("query.shared", self.image_count + self.video_count),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f32,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig { rank: 4, alpha: 8.0 }
    }
}

impl LoraConfig {
    pub fn scale(&self) -> f32 {
        self.alpha / self.rank as f32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeConfig {
    pub design: BridgeDesign,
    /// Fixed token count produced by the QFormer design.
    pub qformer_tokens: usize, // paper_scale: 256
    /// Transformer depth of the MetaQuery connector.
    pub connector_depth: usize, // paper analog: "large connector (1.6B)"
    /// Hidden width of the two-layer MLP connector.
    pub mlp_hidden: usize,
    /// Bidirectional layers of the text-only encoder.
    pub text_layers: usize,
    /// Longest tokenized instruction the text encoder accepts.
    pub text_max_len: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            design: BridgeDesign::QueryLoraMlp,
            qformer_tokens: 16,
            connector_depth: 4,
            mlp_hidden: 256,
            text_layers: 2,
            text_max_len: 24,
        }
    }
}

// ── parameter initialization ────────────────────────────────────────────

fn init_block(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    hidden: usize,
    proj_std: f64,
    seed: u64,
) -> Result<()> {
    store.init_ones(&format!("{prefix}.attn.norm"), &[d])?;
    for w in ["q", "k", "v", "o"] {
        store.init_gaussian(&format!("{prefix}.attn.{w}"), &[d, d], proj_std, seed)?;
    }
    store.init_ones(&format!("{prefix}.mlp.norm"), &[d])?;
    store.init_gaussian(&format!("{prefix}.mlp.up"), &[d, hidden], proj_std, seed)?;
    store.init_gaussian(&format!("{prefix}.mlp.down"), &[hidden, d], proj_std, seed)?;
    Ok(())
}

/// Names of the projections LoRA adapts inside one block.
fn lora_targets(prefix: &str) -> Vec<(String, usize, usize)> {
    vec![
        (format!("{prefix}.attn.q"), 0, 0),
        (format!("{prefix}.attn.k"), 0, 0),
        (format!("{prefix}.attn.v"), 0, 0),
        (format!("{prefix}.attn.o"), 0, 0),
        (format!("{prefix}.mlp.up"), 0, 1),
        (format!("{prefix}.mlp.down"), 1, 0),
    ]
}

/// Initialize every parameter the configured bridge needs (base model,
/// queries, LoRA, connector). DiT parameters are initialized separately.
pub fn init_bridge_params(
    store: &mut ParamStore,
    mllm: &MllmConfig,
    queries: &QueryConfig,
    lora: &LoraConfig,
    bridge: &BridgeConfig,
    d_dit: usize,
    seed: u64,
) -> Result<()> {
    let d = mllm.d_model;
    let proj_std = 0.02 / (2.0 * mllm.n_layers as f64).sqrt();

    if bridge.design.uses_mllm() {
        store.init_gaussian("mllm.embed.tok", &[mllm.vocab_size, d], 0.02, seed)?;
        let vis_in = mllm.visual_patch * mllm.visual_patch * 3;
        store.init_gaussian("mllm.visual.proj", &[vis_in, d], 0.02, seed)?;
        store.init_gaussian("mllm.visual.pos", &[mllm.patches_per_frame(), d], 0.02, seed)?;
        store.init_gaussian("mllm.visual.frame", &[mllm.f_mllm.max(1), d], 0.02, seed)?;
        for i in 0..mllm.n_layers {
            init_block(store, &format!("mllm.layer{i}"), d, mllm.mlp_hidden, proj_std, seed)?;
        }
        store.init_ones("mllm.final.norm", &[d])?;
    }

    if bridge.design.uses_queries() {
        match queries.mode {
            QueryMode::Separate => {
                store.init_gaussian("query.image", &[queries.image_count, d], 0.02, seed)?;
                store.init_gaussian("query.video", &[queries.video_count, d], 0.02, seed)?;
            }
            QueryMode::Shared => {
                let total = queries.image_count + queries.video_count;
                store.init_gaussian("query.shared", &[total, d], 0.02, seed)?;
            }
        }
    }

    if bridge.design.uses_lora() {
        for i in 0..mllm.n_layers {
            let prefix = format!("mllm.layer{i}");
            for (target, a_hidden, b_hidden) in lora_targets(&prefix) {
                let d_in = if a_hidden == 1 { mllm.mlp_hidden } else { d };
                let d_out = if b_hidden == 1 { mllm.mlp_hidden } else { d };
                store.init_gaussian(&format!("lora.{target}.a"), &[d_in, lora.rank], 0.02, seed)?;
                // B starts at zero so the adapter is an exact identity-delta.
                store.init_zeros(&format!("lora.{target}.b"), &[lora.rank, d_out])?;
            }
        }
    }

    match bridge.design {
        BridgeDesign::TextOnly => {
            store.init_gaussian("textenc.embed.tok", &[mllm.vocab_size, d], 0.02, seed)?;
            store.init_gaussian("textenc.pos", &[bridge.text_max_len, d], 0.02, seed)?;
            let std = 0.02 / (2.0 * bridge.text_layers as f64).sqrt();
            for i in 0..bridge.text_layers {
                init_block(store, &format!("textenc.layer{i}"), d, mllm.mlp_hidden, std, seed)?;
            }
            store.init_ones("textenc.final.norm", &[d])?;
            store.init_gaussian("textenc.out", &[d, d_dit], 0.02, seed)?;
        }
        BridgeDesign::QFormer => {
            store.init_gaussian("qformer.latents", &[bridge.qformer_tokens, d], 0.02, seed)?;
            store.init_ones("qformer.cross.norm", &[d])?;
            for w in ["q", "k", "v", "o"] {
                store.init_gaussian(&format!("qformer.cross.{w}"), &[d, d], proj_std, seed)?;
            }
            store.init_ones("qformer.mlp.norm", &[d])?;
            store.init_gaussian("qformer.mlp.up", &[d, mllm.mlp_hidden], proj_std, seed)?;
            store.init_gaussian("qformer.mlp.down", &[mllm.mlp_hidden, d], proj_std, seed)?;
            store.init_gaussian("qformer.out", &[d, d_dit], 0.02, seed)?;
        }
        BridgeDesign::MetaQuery => {
            let std = 0.02 / (2.0 * bridge.connector_depth as f64).sqrt();
            for i in 0..bridge.connector_depth {
                init_block(store, &format!("connector.layer{i}"), d, mllm.mlp_hidden, std, seed)?;
            }
            store.init_ones("connector.final.norm", &[d])?;
            store.init_gaussian("connector.out", &[d, d_dit], 0.02, seed)?;
        }
        BridgeDesign::QueryLoraMlp => {
            store.init_gaussian("mlp.fc1", &[d, bridge.mlp_hidden], 0.02, seed)?;
            store.init_zeros("mlp.fc1.bias", &[bridge.mlp_hidden])?;
            store.init_gaussian("mlp.fc2", &[bridge.mlp_hidden, d_dit], 0.02, seed)?;
            store.init_zeros("mlp.fc2.bias", &[d_dit])?;
        }
    }
    Ok(())
}

// ── forward pieces ──────────────────────────────────────────────────────

/// Uniform frame selection including first and last:
/// `index_j = round(j * (F-1) / (F_mllm-1))`. Videos with F <= F_mllm keep
/// every frame; `f_mllm == 1` keeps only the first.
pub fn sample_frame_indices(total: usize, f_mllm: usize) -> Vec<usize> {
    assert!(total >= 1, "video must have at least one frame");
    if total <= f_mllm {
        return (0..total).collect();
    }
    if f_mllm == 1 {
        return vec![0];
    }
    (0..f_mllm)
        .map(|j| ((j as f64) * (total as f64 - 1.0) / (f_mllm as f64 - 1.0)).round() as usize)
        .collect()
}

pub fn sample_frames(video: &Media, f_mllm: usize) -> Media {
    let idx = sample_frame_indices(video.frames, f_mllm);
    video.select_frames(&idx)
}

/// Per-frame patch tokens: flatten + learned projection + 2D-position and
/// frame-index embeddings. Returns [frames * patches_per_frame, d].
pub fn embed_visual(b: &mut Binding, cfg: &MllmConfig, media: &Media) -> Result<ValueId> {
    let p = cfg.visual_patch;
    if media.height % p != 0 || media.width % p != 0 {
        return Err(Error::Dimension(format!(
            "media {}x{} not divisible by visual patch {p}",
            media.height, media.width
        )));
    }
    let (gh, gw) = (media.height / p, media.width / p);
    let n_pos = gh * gw;
    let vis_in = p * p * 3;
    let n_tok = media.frames * n_pos;

    let mut patches = vec![0.0f32; n_tok * vis_in];
    let mut pos_ids = Vec::with_capacity(n_tok);
    let mut frame_ids = Vec::with_capacity(n_tok);
    for f in 0..media.frames {
        for gy in 0..gh {
            for gx in 0..gw {
                let t = (f * gh + gy) * gw + gx;
                let base = t * vis_in;
                let mut k = 0;
                for dy in 0..p {
                    for dx in 0..p {
                        let px = media.pixel(f, gy * p + dy, gx * p + dx);
                        patches[base + k] = px[0];
                        patches[base + k + 1] = px[1];
                        patches[base + k + 2] = px[2];
                        k += 3;
                    }
                }
                pos_ids.push(gy * gw + gx);
                frame_ids.push(f);
            }
        }
    }
    let patch_const = b.constant(Tensor::new(vec![n_tok, vis_in], patches)?);
    let proj = b.param("mllm.visual.proj")?;
    let projected = b.tape.matmul(patch_const, proj)?;
    let pos_table = b.param("mllm.visual.pos")?;
    let pos = b.tape.embedding(pos_table, &pos_ids)?;
    let frame_table = b.param("mllm.visual.frame")?;
    let frame = b.tape.embedding(frame_table, &frame_ids)?;
    let with_pos = b.tape.add(projected, pos)?;
    b.tape.add(with_pos, frame)
}

/// Input sequence layout produced by [`assemble_sequence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuerySpan {
    pub start: usize,
    pub end: usize,
}

/// Concatenate [instruction][visual][queries] and report the query span
/// (the last `count` positions). Queries attend causally like everything
/// else: each query sees the full prefix and earlier queries.
pub fn assemble_sequence(
    b: &mut Binding,
    cfg: &MllmConfig,
    queries: &QueryConfig,
    instruction_tokens: &[usize],
    media: &Media,
) -> Result<(ValueId, QuerySpan)> {
    let embed = b.param("mllm.embed.tok")?;
    let text = b.tape.embedding(embed, instruction_tokens)?;
    let sampled;
    let visual_media = match media.kind {
        MediaKind::Video => {
            sampled = sample_frames(media, cfg.f_mllm);
            &sampled
        }
        MediaKind::Image => media,
    };
    let visual = embed_visual(b, cfg, visual_media)?;
    let (qname, qcount) = queries.set_for(media.kind);
    let q = b.param(qname)?;
    let seq = b.tape.concat(&[text, visual, q], 0)?;
    let len = b.tape.shape(seq)[0];
    Ok((
        seq,
        QuerySpan {
            start: len - qcount,
            end: len,
        },
    ))
}

/// Projection with optional LoRA delta: x.W + scale * (x.A).B.
fn project(
    b: &mut Binding,
    x: ValueId,
    weight: &str,
    lora: Option<&LoraConfig>,
) -> Result<ValueId> {
    let w = b.param(weight)?;
    let base = b.tape.matmul(x, w)?;
    match lora {
        Some(cfg) => {
            let a = b.param(&format!("lora.{weight}.a"))?;
            let bb = b.param(&format!("lora.{weight}.b"))?;
            let xa = b.tape.matmul(x, a)?;
            let xab = b.tape.matmul(xa, bb)?;
            let delta = b.tape.scale(xab, cfg.scale())?;
            b.tape.add(base, delta)
        }
        None => Ok(base),
    }
}

/// One pre-norm transformer block under a given parameter prefix.
fn block_forward(
    b: &mut Binding,
    prefix: &str,
    x: ValueId,
    n_heads: usize,
    mask: Option<ValueId>,
    lora: Option<&LoraConfig>,
) -> Result<ValueId> {
    let norm1 = b.param(&format!("{prefix}.attn.norm"))?;
    let xn = b.tape.rms_norm(x, norm1, RMS_EPS)?;
    let q = project(b, xn, &format!("{prefix}.attn.q"), lora)?;
    let k = project(b, xn, &format!("{prefix}.attn.k"), lora)?;
    let v = project(b, xn, &format!("{prefix}.attn.v"), lora)?;
    let ctx = nn::attention(&mut b.tape, q, k, v, n_heads, mask)?;
    let attn_out = project(b, ctx, &format!("{prefix}.attn.o"), lora)?;
    let x = b.tape.add(x, attn_out)?;

    let norm2 = b.param(&format!("{prefix}.mlp.norm"))?;
    let xn = b.tape.rms_norm(x, norm2, RMS_EPS)?;
    let h = project(b, xn, &format!("{prefix}.mlp.up"), lora)?;
    let h = b.tape.gelu(h)?;
    let mlp_out = project(b, h, &format!("{prefix}.mlp.down"), lora)?;
    b.tape.add(x, mlp_out)
}

/// Causal transformer over an assembled sequence; returns final hidden
/// states [S, d]. `lora` enables adapter deltas on every projection.
pub fn mllm_forward(
    b: &mut Binding,
    cfg: &MllmConfig,
    seq: ValueId,
    lora: Option<&LoraConfig>,
) -> Result<ValueId> {
    let len = b.tape.shape(seq)[0];
    let mask = b.constant(nn::causal_mask(len));
    let mut x = seq;
    for i in 0..cfg.n_layers {
        x = block_forward(b, &format!("mllm.layer{i}"), x, cfg.n_heads, Some(mask), lora)?;
    }
    let fnorm = b.param("mllm.final.norm")?;
    b.tape.rms_norm(x, fnorm, RMS_EPS)
}

/// Exact slice of the query positions out of the hidden states.
pub fn extract_query_states(b: &mut Binding, hidden: ValueId, span: QuerySpan) -> Result<ValueId> {
    let len = b.tape.shape(hidden)[0];
    if span.end > len || span.start > span.end {
        return Err(Error::Dimension(format!(
            "query span {}..{} outside sequence of length {len}",
            span.start, span.end
        )));
    }
    b.tape.narrow(hidden, 0, span.start, span.end - span.start)
}

/// All bridge configuration needed by a forward pass.
pub struct BridgeContext<'a> {
    pub mllm: &'a MllmConfig,
    pub queries: &'a QueryConfig,
    pub lora: &'a LoraConfig,
    pub bridge: &'a BridgeConfig,
}

/// Produce conditioning tokens [N_cond, d_dit] for the configured design.
pub fn bridge_forward(
    b: &mut Binding,
    ctx: &BridgeContext,
    instruction_tokens: &[usize],
    media: &Media,
) -> Result<ValueId> {
    match ctx.bridge.design {
        BridgeDesign::TextOnly => {
            // Bidirectional encoder over instruction tokens only; media is
            // deliberately ignored.
            if instruction_tokens.len() > ctx.bridge.text_max_len {
                return Err(Error::Contract(format!(
                    "instruction of {} tokens exceeds text encoder capacity {}",
                    instruction_tokens.len(),
                    ctx.bridge.text_max_len
                )));
            }
            let embed = b.param("textenc.embed.tok")?;
            let tok = b.tape.embedding(embed, instruction_tokens)?;
            let pos_table = b.param("textenc.pos")?;
            let pos_ids: Vec<usize> = (0..instruction_tokens.len()).collect();
            let pos = b.tape.embedding(pos_table, &pos_ids)?;
            let mut x = b.tape.add(tok, pos)?;
            for i in 0..ctx.bridge.text_layers {
                x = block_forward(
                    b,
                    &format!("textenc.layer{i}"),
                    x,
                    ctx.mllm.n_heads,
                    None,
                    None,
                )?;
            }
            let fnorm = b.param("textenc.final.norm")?;
            let x = b.tape.rms_norm(x, fnorm, RMS_EPS)?;
            let out = b.param("textenc.out")?;
            b.tape.matmul(x, out)
        }
        BridgeDesign::QFormer => {
            // Base model runs WITHOUT queries; learned latents compress all
            // last hidden states to a fixed length via cross-attention.
            let embed = b.param("mllm.embed.tok")?;
            let text = b.tape.embedding(embed, instruction_tokens)?;
            let sampled;
            let vm = match media.kind {
                MediaKind::Video => {
                    sampled = sample_frames(media, ctx.mllm.f_mllm);
                    &sampled
                }
                MediaKind::Image => media,
            };
            let visual = embed_visual(b, ctx.mllm, vm)?;
            let seq = b.tape.concat(&[text, visual], 0)?;
            let hidden = mllm_forward(b, ctx.mllm, seq, None)?;

            let latents = b.param("qformer.latents")?;
            let norm1 = b.param("qformer.cross.norm")?;
            let wq = b.param("qformer.cross.q")?;
            let wk = b.param("qformer.cross.k")?;
            let wv = b.param("qformer.cross.v")?;
            let wo = b.param("qformer.cross.o")?;
            let ln = b.tape.rms_norm(latents, norm1, RMS_EPS)?;
            let ctx_tokens = nn::attention_sublayer(
                &mut b.tape,
                ln,
                hidden,
                wq,
                wk,
                wv,
                wo,
                ctx.mllm.n_heads,
                None,
            )?;
            let x = b.tape.add(latents, ctx_tokens)?;
            let norm2 = b.param("qformer.mlp.norm")?;
            let xn = b.tape.rms_norm(x, norm2, RMS_EPS)?;
            let up = b.param("qformer.mlp.up")?;
            let down = b.param("qformer.mlp.down")?;
            let h = b.tape.matmul(xn, up)?;
            let h = b.tape.gelu(h)?;
            let mlp_out = b.tape.matmul(h, down)?;
            let x = b.tape.add(x, mlp_out)?;
            let out = b.param("qformer.out")?;
            b.tape.matmul(x, out)
        }
        BridgeDesign::MetaQuery => {
            let (seq, span) =
                assemble_sequence(b, ctx.mllm, ctx.queries, instruction_tokens, media)?;
            let hidden = mllm_forward(b, ctx.mllm, seq, None)?;
            let mut x = extract_query_states(b, hidden, span)?;
            for i in 0..ctx.bridge.connector_depth {
                x = block_forward(
                    b,
                    &format!("connector.layer{i}"),
                    x,
                    ctx.mllm.n_heads,
                    None,
                    None,
                )?;
            }
            let fnorm = b.param("connector.final.norm")?;
            let x = b.tape.rms_norm(x, fnorm, RMS_EPS)?;
            let out = b.param("connector.out")?;
            b.tape.matmul(x, out)
        }
        BridgeDesign::QueryLoraMlp => {
            let (seq, span) =
                assemble_sequence(b, ctx.mllm, ctx.queries, instruction_tokens, media)?;
            let hidden = mllm_forward(b, ctx.mllm, seq, Some(ctx.lora))?;
            let q_states = extract_query_states(b, hidden, span)?;
            let fc1 = b.param("mlp.fc1")?;
            let b1 = b.param("mlp.fc1.bias")?;
            let fc2 = b.param("mlp.fc2")?;
            let b2 = b.param("mlp.fc2.bias")?;
            nn::mlp2(&mut b.tape, q_states, fc1, Some(b1), fc2, Some(b2))
        }
    }
}
