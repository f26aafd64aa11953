//! Six-stage paired-data synthesis pipeline.
//!
//! Stage order: scene_split -> detect_mask -> erase -> instruct_gen ->
//! cross_ref -> filter. Oracle backends read scene-graph ground truth
//! (splitting by pixel cuts, masking by footprints, erasing by re-render);
//! external-stub backends define the record schemas a real detector or
//! eraser would consume but are deliberately unimplemented.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Media, MediaKind};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

use super::tasks::{make_pair, EditSample, TaskKind};
use super::{gen_scene, write_manifest, Scene, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    SceneSplit,
    DetectMask,
    Erase,
    InstructGen,
    CrossRef,
    Filter,
}

impl StageKind {
    pub const ORDER: [StageKind; 6] = [
        StageKind::SceneSplit,
        StageKind::DetectMask,
        StageKind::Erase,
        StageKind::InstructGen,
        StageKind::CrossRef,
        StageKind::Filter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageKind::SceneSplit => "scene_split",
            StageKind::DetectMask => "detect_mask",
            StageKind::Erase => "erase",
            StageKind::InstructGen => "instruct_gen",
            StageKind::CrossRef => "cross_ref",
            StageKind::Filter => "filter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Oracle,
    /// Declares the wire schema for a real external tool; running it is an
    /// error by design.
    ExternalStub,
}

#[derive(Debug, Clone)]
pub struct PipelineStage {
    pub kind: StageKind,
    pub backend: Backend,
    /// Test hook: a corrupt oracle stage (used to prove the filter catches
    /// broken upstream output).
    pub corrupt: bool,
}

pub fn standard_pipeline() -> Vec<PipelineStage> {
    StageKind::ORDER
        .iter()
        .map(|&kind| PipelineStage {
            kind,
            backend: Backend::Oracle,
            corrupt: false,
        })
        .collect()
}

/// Schema of the record an external detector/eraser would exchange.
/// Kept serializable so the stub interface is concrete.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalStageRecord {
    pub sample_id: String,
    pub stage: StageKind,
    /// Media payload path (producer writes, consumer reads).
    pub media_path: String,
    /// Per-frame RLE mask, present for detect_mask/erase exchanges.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_rle: Option<Vec<u32>>,
    /// Free-form backend parameters.
    #[serde(default)]
    pub params: serde_json::Value,
}

/// A raw multi-scene clip with its per-scene ground truth (what a crawler
/// would hand the pipeline).
pub struct Reel {
    pub id: String,
    pub media: Media,
    pub scenes: Vec<Scene>,
    /// Frame index where each scene starts.
    pub boundaries: Vec<usize>,
}

/// Build a reel by concatenating 1-3 rendered scenes in time.
pub fn make_reel(master_seed: u64, index: usize, frames_per_scene: usize) -> Reel {
    let mut rng = derive_rng(master_seed, &format!("reel/{index}"));
    let n_scenes = rng.gen_range(1..=3usize);
    let mut scenes = Vec::new();
    let mut boundaries = Vec::new();
    let mut data: Vec<f32> = Vec::new();
    let (h, w) = (32, 32);
    let mut frame_count = 0;
    for _ in 0..n_scenes {
        let mut spec = SceneSpec::video(h, w, frames_per_scene);
        spec.min_objects = 1;
        let scene = gen_scene(&mut rng, &spec);
        let media = super::render(&scene, false);
        boundaries.push(frame_count);
        frame_count += media.frames;
        data.extend_from_slice(media.data());
        scenes.push(scene);
    }
    Reel {
        id: format!("reel-{index:04}"),
        media: Media::new(MediaKind::Video, frame_count, h, w, data).expect("reel media"),
        scenes,
        boundaries,
    }
}

fn mean_frame_diff(media: &Media, f: usize) -> f32 {
    let px = media.height * media.width * 3;
    let a = &media.data()[(f - 1) * px..f * px];
    let b = &media.data()[f * px..(f + 1) * px];
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += (x - y).abs();
    }
    acc / px as f32
}

/// Detected cut points (start indices of new shots) by frame differencing.
pub fn detect_cuts(media: &Media, threshold: f32) -> Vec<usize> {
    let mut cuts = vec![0usize];
    for f in 1..media.frames {
        if mean_frame_diff(media, f) > threshold {
            cuts.push(f);
        }
    }
    cuts
}

struct ClipRecord {
    id: String,
    scene: Scene,
}

fn stage_err(stage: StageKind, sample: &str, reason: impl Into<String>) -> Error {
    Error::Pipeline {
        stage: stage.name().to_string(),
        sample: sample.to_string(),
        reason: reason.into(),
    }
}

/// Run the six-stage DAG over raw reels and write a manifest into `out_dir`.
/// Returns the accepted samples and the number rejected by the filter.
pub fn run_pipeline(
    stages: &[PipelineStage],
    reels: &[Reel],
    out_dir: &Path,
    master_seed: u64,
) -> Result<(Vec<EditSample>, usize)> {
    let kinds: Vec<StageKind> = stages.iter().map(|s| s.kind).collect();
    if kinds != StageKind::ORDER {
        return Err(Error::Contract(format!(
            "pipeline stages out of order: {:?}",
            kinds.iter().map(|k| k.name()).collect::<Vec<_>>()
        )));
    }
    for stage in stages {
        if stage.backend == Backend::ExternalStub {
            return Err(stage_err(
                stage.kind,
                "-",
                "external backend not implemented; see ExternalStageRecord for the exchange schema",
            ));
        }
    }
    let stage = |k: StageKind| stages.iter().find(|s| s.kind == k).expect("validated");

    // scene_split: cut reels into single-scene clips and align with ground
    // truth boundaries.
    let mut clips: Vec<ClipRecord> = Vec::new();
    for reel in reels {
        let cuts = detect_cuts(&reel.media, 0.25);
        if cuts != reel.boundaries {
            return Err(stage_err(
                StageKind::SceneSplit,
                &reel.id,
                format!(
                    "detected cuts {:?} do not match scene boundaries {:?}",
                    cuts, reel.boundaries
                ),
            ));
        }
        for (i, scene) in reel.scenes.iter().enumerate() {
            if scene.objects.is_empty() {
                continue;
            }
            clips.push(ClipRecord {
                id: format!("{}-s{}", reel.id, i),
                scene: scene.clone(),
            });
        }
    }

    // detect_mask + erase + instruct_gen + cross_ref, fused over the scene
    // graph: pick the subject, compute its footprint mask, re-render the
    // scene without it, and emit remove/add/ref_add drafts (the add pair is
    // the remove pair with roles swapped).
    let mut drafts: Vec<EditSample> = Vec::new();
    let corrupt_erase = stage(StageKind::Erase).corrupt;
    for clip in &clips {
        let mut rng = derive_rng(master_seed, &format!("pipeline/{}", clip.id));
        for (task, suffix) in [
            (TaskKind::Remove, "rm"),
            (TaskKind::Add, "add"),
            (TaskKind::RefAdd, "refadd"),
        ] {
            let mut task_rng = rng.clone();
            let mut sample = match make_pair(
                &clip.scene,
                task,
                &mut task_rng,
                false,
                format!("{}-{}", clip.id, suffix),
                master_seed,
            ) {
                Ok(s) => s,
                Err(Error::Feasibility(_)) => continue,
                Err(e) => return Err(e),
            };
            if corrupt_erase && task == TaskKind::Remove {
                // Broken eraser: hands back the source unchanged.
                sample.target = sample.source.clone();
            }
            drafts.push(sample);
        }
        let _ = rng.gen::<u64>();
    }

    // filter: drop drafts violating the sample invariants.
    let mut accepted = Vec::new();
    let mut rejected = 0usize;
    for d in drafts {
        match d.validate() {
            Ok(()) => accepted.push(d),
            Err(_) => rejected += 1,
        }
    }

    write_manifest(&accepted, out_dir)?;
    Ok((accepted, rejected))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_pipeline_accepts_everything() {
        let dir = tempfile::tempdir().unwrap();
        let reels: Vec<Reel> = (0..6).map(|i| make_reel(9, i, 5)).collect();
        let (accepted, rejected) = run_pipeline(&standard_pipeline(), &reels, dir.path(), 9).unwrap();
        assert!(rejected == 0, "oracle stages cannot violate invariants");
        assert!(!accepted.is_empty());
        // Manifest line count equals accepted count.
        let manifest = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(manifest.lines().count(), accepted.len());
    }

    #[test]
    fn corrupt_erase_is_rejected_by_filter() {
        let dir = tempfile::tempdir().unwrap();
        let reels: Vec<Reel> = (0..6).map(|i| make_reel(9, i, 5)).collect();
        let mut stages = standard_pipeline();
        stages[2].corrupt = true; // erase
        let (accepted, rejected) = run_pipeline(&stages, &reels, dir.path(), 9).unwrap();
        assert!(rejected > 0, "filter must reject no-op removals");
        assert!(accepted.iter().all(|s| s.validate().is_ok()));
    }

    #[test]
    fn wrong_stage_order_is_contract_error() {
        let mut stages = standard_pipeline();
        stages.swap(0, 1);
        let err = run_pipeline(&stages, &[], Path::new("/tmp"), 1).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn external_stub_names_stage_and_schema() {
        let mut stages = standard_pipeline();
        stages[1].backend = Backend::ExternalStub;
        let reels = vec![make_reel(1, 0, 5)];
        let dir = tempfile::tempdir().unwrap();
        let err = run_pipeline(&stages, &reels, dir.path(), 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("detect_mask") && msg.contains("not implemented"));
    }

    #[test]
    fn scene_split_detects_reel_boundaries() {
        let reel = make_reel(4, 2, 5);
        let cuts = detect_cuts(&reel.media, 0.25);
        assert_eq!(cuts, reel.boundaries);
    }

    #[test]
    fn external_record_schema_roundtrips() {
        let rec = ExternalStageRecord {
            sample_id: "reel-0001-s0".into(),
            stage: StageKind::DetectMask,
            media_path: "media/reel-0001-s0.source.tns".into(),
            mask_rle: Some(vec![0, 12, 40, 3]),
            params: serde_json::json!({"prompt": "the red square"}),
        };
        let json = serde_json::to_string(&rec).unwrap();
        let back: ExternalStageRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.sample_id, rec.sample_id);
        assert_eq!(back.mask_rle, rec.mask_rle);
    }
}
