//! Three-stage training orchestration: per-stage trainable-set resolution,
//! mixed image/video batch scheduling, gradient clipping, warmup,
//! checkpointing, and loss logging.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bridge::BridgeDesign;
use crate::checkpoint::{self, Checkpoint};
use crate::codec::{Media, MediaKind};
use crate::error::{Error, Result};
use crate::model::{EditItem, EditModel, GenItem};
use crate::optim::{clip_global_norm, AdamW, AdamWConfig};
use crate::params::ParamStore;
use crate::rng::{derive_rng, rng_pos, set_rng_pos};
use crate::synthworld::EditSample;

/// Parameter groups a stage may unfreeze.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TrainGroup {
    Queries,
    Lora,
    Connector,
    Dit,
}

impl TrainGroup {
    pub fn name(self) -> &'static str {
        match self {
            TrainGroup::Queries => "queries",
            TrainGroup::Lora => "lora",
            TrainGroup::Connector => "connector",
            TrainGroup::Dit => "dit",
        }
    }
}

/// Declarative description of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    /// 0 is generator pretraining; editing stages are 1..=3.
    pub stage: u8,
    pub groups: BTreeSet<TrainGroup>,
    pub steps: u64,
    pub lr: f64,
    pub warmup_steps: u64,
    pub batch_image: usize, // paper_scale: 128
    pub batch_video: usize, // paper_scale: 32
    pub p_video: f64,
    pub checkpoint_every: u64,
    pub grad_clip: f64,
}

/// The stage's default trainable groups for a design:
/// stage 1 trains the bridge side (queries + LoRA + connector, as the
/// design provides them); stages 2 and 3 add the whole DiT.
pub fn stage_groups(stage: u8, design: BridgeDesign) -> BTreeSet<TrainGroup> {
    let mut g = BTreeSet::new();
    if design.uses_queries() {
        g.insert(TrainGroup::Queries);
    }
    if design.uses_lora() {
        g.insert(TrainGroup::Lora);
    }
    g.insert(TrainGroup::Connector);
    if stage != 1 {
        g.insert(TrainGroup::Dit);
    }
    g
}

impl StagePlan {
    pub fn new(stage: u8, design: BridgeDesign, steps: u64, lr: f64) -> Self {
        StagePlan {
            stage,
            groups: stage_groups(stage, design),
            steps,
            lr,
            warmup_steps: 100,
            batch_image: 16, // paper_scale: 128
            batch_video: 8,  // paper_scale: 32
            p_video: 0.6,
            checkpoint_every: 1000,
            grad_clip: 1.0,
        }
    }
}

/// Exact named-parameter set a plan unfreezes; everything else stays
/// bitwise constant for the stage.
pub fn resolve_trainables(
    plan: &StagePlan,
    design: BridgeDesign,
    params: &ParamStore,
) -> Result<BTreeSet<String>> {
    let mut prefixes: Vec<&str> = Vec::new();
    for group in &plan.groups {
        match group {
            TrainGroup::Queries => {
                if !design.uses_queries() {
                    return Err(Error::Config(format!(
                        "stage {} requests query training but design '{}' has no queries",
                        plan.stage,
                        design.key()
                    )));
                }
                prefixes.push("query");
            }
            TrainGroup::Lora => {
                if !design.uses_lora() {
                    return Err(Error::Config(format!(
                        "stage {} requests LoRA training but design '{}' has no LoRA",
                        plan.stage,
                        design.key()
                    )));
                }
                prefixes.push("lora");
            }
            TrainGroup::Connector => prefixes.push(design.connector_group()),
            TrainGroup::Dit => prefixes.push("dit"),
        }
    }
    let set = params.names_with_prefixes(&prefixes);
    if set.is_empty() {
        return Err(Error::Config(format!(
            "stage {} resolves to zero trainable parameters",
            plan.stage
        )));
    }
    Ok(set)
}

/// Caption->media pair for generator pretraining.
#[derive(Debug, Clone)]
pub struct CaptionSample {
    pub caption: String,
    pub media: Media,
}

/// Training data for one stage; batches are always single-modality.
pub enum TrainData<'d> {
    Edit {
        image: &'d [EditSample],
        video: &'d [EditSample],
    },
    Generate {
        image: &'d [CaptionSample],
        video: &'d [CaptionSample],
    },
}

impl TrainData<'_> {
    fn len_of(&self, kind: MediaKind) -> usize {
        match (self, kind) {
            (TrainData::Edit { image, .. }, MediaKind::Image) => image.len(),
            (TrainData::Edit { video, .. }, MediaKind::Video) => video.len(),
            (TrainData::Generate { image, .. }, MediaKind::Image) => image.len(),
            (TrainData::Generate { video, .. }, MediaKind::Video) => video.len(),
        }
    }
}

// ── mixed-modality sampling ─────────────────────────────────────────────

#[derive(Debug, Clone)]
struct EpochState {
    n: usize,
    epoch: u64,
    cursor: usize,
    perm: Vec<u32>,
    master: u64,
    label: &'static str,
}

impl EpochState {
    fn new(n: usize, master: u64, label: &'static str) -> Self {
        let mut s = EpochState {
            n,
            epoch: 0,
            cursor: 0,
            perm: Vec::new(),
            master,
            label,
        };
        if n > 0 {
            s.perm = s.epoch_perm(0);
        }
        s
    }

    /// Deterministic shuffle for an epoch, derivable without history.
    fn epoch_perm(&self, epoch: u64) -> Vec<u32> {
        use rand::seq::SliceRandom;
        let mut rng = derive_rng(self.master, &format!("epoch/{}/{}", self.label, epoch));
        let mut idx: Vec<u32> = (0..self.n as u32).collect();
        idx.shuffle(&mut rng);
        idx
    }

    fn draw(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            if self.cursor >= self.n {
                self.epoch += 1;
                self.cursor = 0;
                self.perm = self.epoch_perm(self.epoch);
            }
            out.push(self.perm[self.cursor] as usize);
            self.cursor += 1;
        }
        out
    }

    fn restore(&mut self, epoch: u64, cursor: usize) {
        self.epoch = epoch;
        self.cursor = cursor;
        if self.n > 0 {
            self.perm = self.epoch_perm(epoch);
        }
    }
}

/// Bernoulli(p_video) modality choice, then without-replacement sampling
/// within the chosen modality's epoch.
pub struct MixSampler {
    pub p_video: f64,
    rng: ChaCha8Rng,
    image: EpochState,
    video: EpochState,
}

impl MixSampler {
    pub fn new(p_video: f64, n_image: usize, n_video: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_video) {
            return Err(Error::Config(format!(
                "mix.p_video = {p_video} outside [0, 1]"
            )));
        }
        if p_video > 0.0 && n_video == 0 {
            return Err(Error::Data(
                "video draw probability is positive but the video dataset is empty".into(),
            ));
        }
        if p_video < 1.0 && n_image == 0 {
            return Err(Error::Data(
                "image draw probability is positive but the image dataset is empty".into(),
            ));
        }
        Ok(MixSampler {
            p_video,
            rng: derive_rng(seed, "mix"),
            image: EpochState::new(n_image, seed, "image"),
            video: EpochState::new(n_video, seed, "video"),
        })
    }

    /// Modality and dataset indices for the next batch.
    pub fn next_batch(&mut self, batch_image: usize, batch_video: usize) -> (MediaKind, Vec<usize>) {
        let is_video = self.rng.gen::<f64>() < self.p_video;
        if is_video {
            (MediaKind::Video, self.video.draw(batch_video))
        } else {
            (MediaKind::Image, self.image.draw(batch_image))
        }
    }

    pub fn state(&self) -> checkpoint::SamplerState {
        checkpoint::SamplerState {
            rng_pos: rng_pos(&self.rng),
            image_epoch: self.image.epoch,
            image_cursor: self.image.cursor as u64,
            video_epoch: self.video.epoch,
            video_cursor: self.video.cursor as u64,
        }
    }

    pub fn restore(&mut self, st: &checkpoint::SamplerState) {
        set_rng_pos(&mut self.rng, st.rng_pos);
        self.image.restore(st.image_epoch, st.image_cursor as usize);
        self.video.restore(st.video_epoch, st.video_cursor as usize);
    }
}

// ── the training loop ───────────────────────────────────────────────────

/// One row of the loss log (CSV columns: step,stage,modality,loss,grad_norm).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub stage: u8,
    pub modality: MediaKind,
    pub loss: f64,
    pub grad_norm: f64,
}

pub fn log_csv_header() -> &'static str {
    "step,stage,modality,loss,grad_norm"
}

pub fn log_csv_row(r: &LogRow) -> String {
    let modality = match r.modality {
        MediaKind::Image => "image",
        MediaKind::Video => "video",
    };
    format!(
        "{},{},{},{},{}",
        r.step, r.stage, modality, r.loss, r.grad_norm
    )
}

pub struct Trainer<'d> {
    pub model: EditModel,
    pub plan: StagePlan,
    pub data: TrainData<'d>,
    pub opt: AdamW,
    pub sampler: MixSampler,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub seed: u64,
    pub config_snapshot: String,
    trainable: BTreeSet<String>,
}

impl<'d> Trainer<'d> {
    pub fn new(
        model: EditModel,
        plan: StagePlan,
        data: TrainData<'d>,
        seed: u64,
        config_snapshot: String,
    ) -> Result<Self> {
        if plan.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", plan.lr)));
        }
        let trainable = resolve_trainables(&plan, model.design(), &model.params)?;
        let n_image = data.len_of(MediaKind::Image);
        let n_video = data.len_of(MediaKind::Video);
        let sampler = MixSampler::new(plan.p_video, n_image, n_video, seed)?;
        let opt = AdamW::new(AdamWConfig {
            lr: plan.lr,
            ..Default::default()
        });
        Ok(Trainer {
            model,
            plan,
            data,
            opt,
            sampler,
            rng: derive_rng(seed, "train"),
            step: 0,
            seed,
            config_snapshot,
            trainable,
        })
    }

    pub fn trainable(&self) -> &BTreeSet<String> {
        &self.trainable
    }

    fn lr_scale(&self) -> f64 {
        if self.plan.warmup_steps == 0 {
            1.0
        } else {
            ((self.step + 1) as f64 / self.plan.warmup_steps as f64).min(1.0)
        }
    }

    /// One optimizer step; aborts with diagnostics on a non-finite loss.
    pub fn train_step(&mut self) -> Result<LogRow> {
        let (kind, indices) =
            self.sampler.next_batch(self.plan.batch_image, self.plan.batch_video);
        let (loss, mut grads) = match &self.data {
            TrainData::Edit { image, video } => {
                let set = match kind {
                    MediaKind::Image => image,
                    MediaKind::Video => video,
                };
                let items: Vec<EditItem> = indices
                    .iter()
                    .map(|&i| {
                        let s = &set[i];
                        EditItem {
                            instruction: &s.instruction,
                            source: &s.source,
                            target: &s.target,
                            reference: s.reference.as_ref(),
                        }
                    })
                    .collect();
                self.model.fm_loss_batch(&self.trainable, &items, &mut self.rng)?
            }
            TrainData::Generate { image, video } => {
                let set = match kind {
                    MediaKind::Image => image,
                    MediaKind::Video => video,
                };
                let items: Vec<GenItem> = indices
                    .iter()
                    .map(|&i| {
                        let s = &set[i];
                        GenItem {
                            caption: &s.caption,
                            media: &s.media,
                        }
                    })
                    .collect();
                self.model.gen_loss_batch(&self.trainable, &items, &mut self.rng)?
            }
        };
        let grad_norm = clip_global_norm(&mut grads, self.plan.grad_clip);
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NanLoss {
                step: self.step,
                lr: self.plan.lr * self.lr_scale(),
                grad_norm,
            });
        }
        let lr_scale = self.lr_scale();
        self.opt.apply(&mut self.model.params, &grads, lr_scale)?;
        self.step += 1;
        Ok(LogRow {
            step: self.step,
            stage: self.plan.stage,
            modality: kind,
            loss,
            grad_norm,
        })
    }

    /// Run to `plan.steps`, logging every step and checkpointing every
    /// `checkpoint_every` steps (and at the end) when a directory is given.
    pub fn run(
        &mut self,
        ckpt_dir: Option<&Path>,
        mut sink: impl FnMut(&LogRow),
    ) -> Result<()> {
        while self.step < self.plan.steps {
            let row = self.train_step()?;
            sink(&row);
            if let Some(dir) = ckpt_dir {
                let at_end = self.step == self.plan.steps;
                let periodic = self.plan.checkpoint_every > 0
                    && self.step % self.plan.checkpoint_every == 0;
                if at_end || periodic {
                    let name = if at_end {
                        format!("stage{}-final.ckpt", self.plan.stage)
                    } else {
                        format!("stage{}-step{:06}.ckpt", self.plan.stage, self.step)
                    };
                    self.save_checkpoint(&dir.join(name))?;
                }
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_snapshot: self.config_snapshot.clone(),
            step: self.step,
            seed: self.seed,
            train_rng: rng_pos(&self.rng),
            sampler: self.sampler.state(),
            params: self.model.params.clone(),
            opt_step: self.opt.step,
            opt_cfg: self.opt.cfg,
            moments: self.opt.moments.clone(),
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    /// Restore full training state (parameters, optimizer, RNG streams,
    /// sampler cursors) so a resumed run is bit-identical to an
    /// uninterrupted one.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.seed != self.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with seed {}, trainer has {}",
                ckpt.seed, self.seed
            )));
        }
        for (name, t) in ckpt.params.iter() {
            let dst = self.model.params.get_mut(name).map_err(|_| {
                Error::Checkpoint(format!("unknown tensor name '{name}' in checkpoint"))
            })?;
            if dst.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}': checkpoint shape {:?} vs model shape {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            *dst = t.clone();
        }
        self.opt.step = ckpt.opt_step;
        self.opt.cfg = ckpt.opt_cfg;
        self.opt.moments = ckpt.moments.clone();
        self.step = ckpt.step;
        let mut rng = derive_rng(self.seed, "train");
        set_rng_pos(&mut rng, ckpt.train_rng);
        self.rng = rng;
        self.sampler.restore(&ckpt.sampler);
        Ok(())
    }
}

/// Pretrain the generator: design (a) text encoder + DiT trained
/// text-to-media with a zero source latent. Saves `pretrained_dit.ckpt`
/// under `ckpt_dir` when given.
pub fn pretrain_generator(
    model: EditModel,
    steps: u64,
    lr: f64,
    p_video: f64,
    data: TrainData<'_>,
    seed: u64,
    ckpt_dir: Option<&Path>,
    sink: impl FnMut(&LogRow),
) -> Result<(EditModel, Checkpoint)> {
    if model.design() != BridgeDesign::TextOnly {
        return Err(Error::Config(
            "generator pretraining runs on the text-only design".into(),
        ));
    }
    let mut plan = StagePlan::new(0, BridgeDesign::TextOnly, steps, lr);
    plan.groups = [TrainGroup::Connector, TrainGroup::Dit].into_iter().collect();
    plan.p_video = p_video;
    let mut trainer = Trainer::new(model, plan, data, seed, String::new())?;
    trainer.run(None, sink)?;
    let ckpt = trainer.checkpoint();
    if let Some(dir) = ckpt_dir {
        std::fs::create_dir_all(dir)?;
        ckpt.save(&dir.join("pretrained_dit.ckpt"))?;
    }
    Ok((trainer.model, ckpt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_groups_follow_design() {
        use BridgeDesign::*;
        let g1 = stage_groups(1, QueryLoraMlp);
        assert!(g1.contains(&TrainGroup::Queries));
        assert!(g1.contains(&TrainGroup::Lora));
        assert!(g1.contains(&TrainGroup::Connector));
        assert!(!g1.contains(&TrainGroup::Dit));
        let g2 = stage_groups(2, QueryLoraMlp);
        assert!(g2.contains(&TrainGroup::Dit));
        let gc = stage_groups(1, MetaQuery);
        assert!(gc.contains(&TrainGroup::Queries) && !gc.contains(&TrainGroup::Lora));
        let gb = stage_groups(1, QFormer);
        assert!(!gb.contains(&TrainGroup::Queries));
    }

    #[test]
    fn lora_on_metaquery_is_config_error() {
        let model = crate::model::EditModel::new(
            crate::model::ModelConfig {
                bridge: crate::bridge::BridgeConfig {
                    design: BridgeDesign::MetaQuery,
                    ..Default::default()
                },
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let mut plan = StagePlan::new(1, BridgeDesign::MetaQuery, 10, 1e-4);
        plan.groups.insert(TrainGroup::Lora);
        let err = resolve_trainables(&plan, BridgeDesign::MetaQuery, &model.params).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn resolved_sets_match_stage_examples() {
        let model = crate::model::EditModel::new(Default::default(), 1).unwrap();
        let design = BridgeDesign::QueryLoraMlp;
        let s1 = resolve_trainables(
            &StagePlan::new(1, design, 10, 1e-4),
            design,
            &model.params,
        )
        .unwrap();
        assert!(s1.contains("query.image") && s1.contains("query.video"));
        assert!(s1.iter().any(|n| n.starts_with("lora.")));
        assert!(s1.contains("mlp.fc1"));
        assert!(!s1.iter().any(|n| n.starts_with("dit.")));
        assert!(!s1.iter().any(|n| n.starts_with("mllm.")));
        let s2 = resolve_trainables(
            &StagePlan::new(2, design, 10, 1e-4),
            design,
            &model.params,
        )
        .unwrap();
        assert!(s2.is_superset(&s1));
        assert!(s2.iter().any(|n| n.starts_with("dit.")));
    }

    #[test]
    fn sampler_p_one_is_always_video() {
        let mut s = MixSampler::new(1.0, 0, 8, 3).unwrap();
        for _ in 0..50 {
            let (kind, idx) = s.next_batch(4, 4);
            assert_eq!(kind, MediaKind::Video);
            assert_eq!(idx.len(), 4);
        }
    }

    #[test]
    fn sampler_p_zero_with_empty_video_is_fine() {
        let mut s = MixSampler::new(0.0, 8, 0, 3).unwrap();
        for _ in 0..10 {
            let (kind, _) = s.next_batch(4, 4);
            assert_eq!(kind, MediaKind::Image);
        }
    }

    #[test]
    fn sampler_positive_p_with_empty_set_errors() {
        assert!(matches!(MixSampler::new(0.5, 8, 0, 3), Err(Error::Data(_))));
        assert!(matches!(MixSampler::new(0.5, 0, 8, 3), Err(Error::Data(_))));
    }

    #[test]
    fn sampler_draws_each_index_once_per_epoch() {
        let mut s = MixSampler::new(1.0, 0, 10, 7).unwrap();
        let mut seen = Vec::new();
        for _ in 0..5 {
            let (_, idx) = s.next_batch(2, 2);
            seen.extend(idx);
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn sampler_video_fraction_matches_binomial() {
        // 10^4 draws at p 0.6 stay within 4 sigma (~0.02).
        for seed in [1u64, 7, 42] {
            let mut s = MixSampler::new(0.6, 100, 100, seed).unwrap();
            let mut video = 0usize;
            let n = 10_000;
            for _ in 0..n {
                if s.next_batch(1, 1).0 == MediaKind::Video {
                    video += 1;
                }
            }
            let frac = video as f64 / n as f64;
            assert!((0.58..=0.62).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn sampler_state_roundtrip_resumes_exactly() {
        let mut a = MixSampler::new(0.6, 20, 10, 5).unwrap();
        for _ in 0..17 {
            a.next_batch(3, 2);
        }
        let st = a.state();
        let mut b = MixSampler::new(0.6, 20, 10, 5).unwrap();
        b.restore(&st);
        for _ in 0..23 {
            assert_eq!(a.next_batch(3, 2), b.next_batch(3, 2));
        }
    }
}
