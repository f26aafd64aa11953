//! Controlled comparative experiments: bridge-design alignment race,
//! image-to-video skill transfer, query-separation and multi-frame
//! ablations, and the multimodal-vs-text-only gap.
//!
//! Every experiment shares seeds, data, and budgets across its variants;
//! only the declared factor differs, and that is asserted by diffing the
//! serialized configs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::bridge::{BridgeDesign, QueryMode};
use crate::checkpoint::Checkpoint;
use crate::codec::MediaKind;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::EditModel;
use crate::rng::derive_rng;
use crate::synthworld::{
    caption, emit_benchmark, gen_scene, generate_dataset, render, DatasetConfig, EditSample,
    SceneSpec, TaskKind,
};
use crate::trainer::{
    log_csv_header, log_csv_row, CaptionSample, LogRow, StagePlan, TrainData, Trainer,
};

use super::{aggregate, report_csv, score_sample, SampleScore};

/// Step and data budget shared by every variant in an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentBudget {
    pub pretrain_steps: u64,
    pub stage1_steps: u64,
    pub stage2_steps: u64,
    pub batch_image: usize,
    pub batch_video: usize,
    pub train_image_n: usize,
    pub train_video_n: usize,
    pub eval_n: usize,
    pub sample_steps: usize,
}

impl Default for ExperimentBudget {
    fn default() -> Self {
        ExperimentBudget {
            pretrain_steps: 700,
            stage1_steps: 300,
            stage2_steps: 400,
            batch_image: 8,
            batch_video: 4,
            train_image_n: 256,
            train_video_n: 128,
            eval_n: 24,
            sample_steps: 8,
        }
    }
}

/// Assert two variant configs differ only in the declared factor keys.
pub fn assert_config_purity(a: &RunConfig, b: &RunConfig, allowed: &[&str]) -> Result<()> {
    let parse = |snap: &str| -> BTreeMap<String, String> {
        snap.lines()
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect()
    };
    let (ma, mb) = (parse(&a.snapshot()), parse(&b.snapshot()));
    for (k, va) in &ma {
        if let Some(vb) = mb.get(k) {
            if va != vb && !allowed.contains(&k.as_str()) {
                return Err(Error::Contract(format!(
                    "experiment variants differ in undeclared key '{k}' ({va} vs {vb})"
                )));
            }
        }
    }
    Ok(())
}

/// Caption datasets for generator pretraining (image + video).
pub fn caption_data(n_image: usize, n_video: usize, seed: u64) -> (Vec<CaptionSample>, Vec<CaptionSample>) {
    let mut image = Vec::with_capacity(n_image);
    let mut video = Vec::with_capacity(n_video);
    for i in 0..n_image {
        let mut rng = derive_rng(seed, &format!("caption/image/{i}"));
        let scene = gen_scene(&mut rng, &SceneSpec::image(32, 32));
        image.push(CaptionSample {
            caption: caption(&scene),
            media: render(&scene, false),
        });
    }
    for i in 0..n_video {
        let mut rng = derive_rng(seed, &format!("caption/video/{i}"));
        let scene = gen_scene(&mut rng, &SceneSpec::video(32, 32, 5));
        video.push(CaptionSample {
            caption: caption(&scene),
            media: render(&scene, false),
        });
    }
    (image, video)
}

/// One shared text-to-media pretraining run producing the DiT checkpoint the
/// experiments start from.
pub fn pretrain_for_experiments(
    base: &RunConfig,
    budget: &ExperimentBudget,
    seed: u64,
    mut sink: impl FnMut(&LogRow),
) -> Result<Checkpoint> {
    let mut cfg = base.clone();
    cfg.design = BridgeDesign::TextOnly;
    let model = EditModel::new(cfg.model_config(), seed)?;
    let (image, video) = caption_data(budget.train_image_n, budget.train_video_n, seed);
    let data = TrainData::Generate {
        image: &image,
        video: &video,
    };
    let mut plan = StagePlan::new(0, BridgeDesign::TextOnly, budget.pretrain_steps, cfg.lr);
    plan.batch_image = budget.batch_image;
    plan.batch_video = budget.batch_video;
    let (_, ckpt) = {
        let _ = &mut plan;
        let mut trainer_plan = plan.clone();
        trainer_plan.p_video = 0.5;
        let mut groups = std::collections::BTreeSet::new();
        groups.insert(crate::trainer::TrainGroup::Connector);
        groups.insert(crate::trainer::TrainGroup::Dit);
        trainer_plan.groups = groups;
        let mut trainer = Trainer::new(model, trainer_plan, data, seed, cfg.snapshot())?;
        trainer.run(None, |r| sink(r))?;
        let ck = trainer.checkpoint();
        (trainer.model, ck)
    };
    Ok(ckpt)
}

/// Init a model for an experiment arm: fresh bridge weights from `seed`,
/// DiT (and for the text-only design, the text encoder) from the pretrained
/// checkpoint.
fn arm_model(cfg: &RunConfig, pretrained: &Checkpoint, seed: u64) -> Result<EditModel> {
    let mut model = EditModel::new(cfg.model_config(), seed)?;
    model.adopt_group(&pretrained.params, "dit")?;
    if cfg.design == BridgeDesign::TextOnly && pretrained.params.contains("textenc.out") {
        model.adopt_group(&pretrained.params, "textenc")?;
    }
    Ok(model)
}

fn write_arm_outputs(
    dir: Option<&Path>,
    variant: &str,
    seed: u64,
    cfg: &RunConfig,
    log: &[LogRow],
    report: Option<&str>,
) -> Result<()> {
    let Some(base) = dir else { return Ok(()) };
    let arm = base.join(format!("{variant}-seed{seed}"));
    fs::create_dir_all(&arm)?;
    fs::write(arm.join("config.snapshot"), cfg.snapshot())?;
    let mut csv = String::from(log_csv_header());
    csv.push('\n');
    for row in log {
        csv.push_str(&log_csv_row(row));
        csv.push('\n');
    }
    fs::write(arm.join("curve.csv"), csv)?;
    if let Some(r) = report {
        fs::write(arm.join("report.csv"), r)?;
    }
    Ok(())
}

/// Sample the model on every benchmark item and score it.
pub fn eval_model(
    model: &EditModel,
    samples: &[EditSample],
    sample_steps: usize,
    seed: u64,
) -> Result<Vec<SampleScore>> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let sample_seed = crate::rng::derive_u64(seed, &format!("eval/{}", s.id));
        let output = model.sample_edit(
            &s.instruction,
            &s.source,
            s.reference.as_ref(),
            sample_steps,
            sample_seed,
            1.0,
        )?;
        out.push(score_sample(&output, s)?);
    }
    Ok(out)
}

fn follow_rate(scores: &[SampleScore]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|s| s.follow).count() as f64 / scores.len() as f64
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Moving average of the trailing `window` losses at each step (defined
/// from step `window` onward).
pub fn moving_average(losses: &[f64], window: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; losses.len()];
    if losses.len() < window || window == 0 {
        return out;
    }
    let mut sum: f64 = losses[..window].iter().sum();
    out[window - 1] = Some(sum / window as f64);
    for i in window..losses.len() {
        sum += losses[i] - losses[i - window];
        out[i] = Some(sum / window as f64);
    }
    out
}

// ── alignment race ──────────────────────────────────────────────────────

pub const MA_WINDOW: usize = 200;

#[derive(Debug, Clone)]
pub struct RaceArm {
    pub variant: String,
    pub seed: u64,
    /// First step (1-based) whose trailing moving average reaches the
    /// threshold; None if never.
    pub steps_to_threshold: Option<u64>,
    pub final_ma: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RaceReport {
    pub arms: Vec<RaceArm>,
    /// Median steps-to-threshold per variant (censored arms count as
    /// budget + 1).
    pub median_steps: BTreeMap<String, f64>,
}

/// Fig.-4-style study: with a shared pretrained DiT frozen, how fast does
/// each bridge design align on image editing? The threshold is 1.05x the
/// best variant's final moving average, per seed.
pub fn run_alignment_race(
    base: &RunConfig,
    budget: &ExperimentBudget,
    seeds: &[u64],
    pretrained: &Checkpoint,
    out_dir: Option<&Path>,
) -> Result<RaceReport> {
    let variants = [
        ("qformer", BridgeDesign::QFormer),
        ("metaquery", BridgeDesign::MetaQuery),
        ("query_lora_mlp", BridgeDesign::QueryLoraMlp),
    ];
    // Purity: variants may differ only in the design key.
    for (_, da) in &variants {
        for (_, db) in &variants {
            let mut ca = base.clone();
            ca.design = *da;
            let mut cb = base.clone();
            cb.design = *db;
            assert_config_purity(&ca, &cb, &["bridge.design"])?;
        }
    }
    let mut report = RaceReport::default();
    if budget.stage1_steps == 0 || seeds.is_empty() {
        return Ok(report);
    }

    // Identical image-edit data for every variant and seed.
    let data_seed = seeds[0] ^ 0xA11CE;
    let mut dcfg = DatasetConfig::new(budget.train_image_n, MediaKind::Image, "race");
    dcfg.tasks = vec![
        TaskKind::Add,
        TaskKind::Remove,
        TaskKind::Swap,
        TaskKind::Color,
        TaskKind::Style,
        TaskKind::Tone,
    ];
    let image_data = generate_dataset(&dcfg, data_seed)?;
    let video_data: Vec<EditSample> = Vec::new();

    let mut curves: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for &seed in seeds {
        for (name, design) in &variants {
            let mut cfg = base.clone();
            cfg.design = *design;
            let model = arm_model(&cfg, pretrained, seed)?;
            let mut plan = cfg.stage_plan(1);
            plan.steps = budget.stage1_steps;
            plan.batch_image = budget.batch_image;
            plan.batch_video = budget.batch_video;
            plan.checkpoint_every = 0;
            let mut trainer = Trainer::new(
                model,
                plan,
                TrainData::Edit {
                    image: &image_data,
                    video: &video_data,
                },
                seed,
                cfg.snapshot(),
            )?;
            let mut log = Vec::new();
            trainer.run(None, |row| log.push(row.clone()))?;
            write_arm_outputs(out_dir, name, seed, &cfg, &log, None)?;
            curves.insert(
                (name.to_string(), seed),
                log.iter().map(|r| r.loss).collect(),
            );
        }
    }

    // Threshold per seed from the best final moving average.
    let window = MA_WINDOW.min(budget.stage1_steps as usize).max(1);
    for &seed in seeds {
        let mut finals: BTreeMap<String, f64> = BTreeMap::new();
        for (name, _) in &variants {
            let losses = &curves[&(name.to_string(), seed)];
            let ma = moving_average(losses, window);
            let last = ma.iter().rev().find_map(|m| *m).unwrap_or(f64::INFINITY);
            finals.insert(name.to_string(), last);
        }
        let best = finals.values().cloned().fold(f64::INFINITY, f64::min);
        let threshold = 1.05 * best;
        for (name, _) in &variants {
            let losses = &curves[&(name.to_string(), seed)];
            let ma = moving_average(losses, window);
            let hit = ma
                .iter()
                .position(|m| m.map(|v| v <= threshold).unwrap_or(false))
                .map(|i| (i + 1) as u64);
            report.arms.push(RaceArm {
                variant: name.to_string(),
                seed,
                steps_to_threshold: hit,
                final_ma: finals[&name.to_string()],
            });
        }
    }
    for (name, _) in &variants {
        let mut vals: Vec<f64> = report
            .arms
            .iter()
            .filter(|a| a.variant == *name)
            .map(|a| {
                a.steps_to_threshold
                    .map(|s| s as f64)
                    .unwrap_or((budget.stage1_steps + 1) as f64)
            })
            .collect();
        report
            .median_steps
            .insert(name.to_string(), median(&mut vals));
    }

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut csv = String::from("variant,seed,steps_to_threshold,final_ma\n");
        for a in &report.arms {
            csv.push_str(&format!(
                "{},{},{},{:.6}\n",
                a.variant,
                a.seed,
                a.steps_to_threshold
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "censored".into()),
                a.final_ma
            ));
        }
        csv.push('\n');
        for (v, m) in &report.median_steps {
            csv.push_str(&format!("median,{v},{m},\n"));
        }
        fs::write(dir.join("summary.csv"), csv)?;
    }
    Ok(report)
}

// ── image-to-video transfer ─────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TransferSeedResult {
    pub seed: u64,
    /// Video style/tone follow rate of the model trained WITH image
    /// style/tone data.
    pub transfer_follow: f64,
    /// Same training except style/tone removed from the image data.
    pub control_follow: f64,
    /// Freshly initialized model (chance level).
    pub untrained_follow: f64,
    /// Image style/tone follow of the transfer model (precondition that
    /// the skill was learned at all).
    pub image_style_follow: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TransferReport {
    pub per_seed: Vec<TransferSeedResult>,
}

const LOCAL_TASKS: [TaskKind; 7] = [
    TaskKind::Add,
    TaskKind::Remove,
    TaskKind::Swap,
    TaskKind::Color,
    TaskKind::Hybrid,
    TaskKind::RefAdd,
    TaskKind::RefSwap,
];

/// Fig.-6-style study: style/tone appear ONLY in the image training data;
/// does the skill emerge on video?
pub fn run_transfer(
    base: &RunConfig,
    budget: &ExperimentBudget,
    seeds: &[u64],
    pretrained: &Checkpoint,
    out_dir: Option<&Path>,
) -> Result<TransferReport> {
    let data_seed = seeds.first().copied().unwrap_or(0) ^ 0x7247;

    // Image data: with and without style/tone (same size either way).
    let mut with_style = DatasetConfig::new(budget.train_image_n, MediaKind::Image, "xfer-img-style");
    with_style.tasks = vec![
        TaskKind::Add,
        TaskKind::Remove,
        TaskKind::Swap,
        TaskKind::Color,
        TaskKind::Style,
        TaskKind::Tone,
    ];
    let mut no_style = DatasetConfig::new(budget.train_image_n, MediaKind::Image, "xfer-img-plain");
    no_style.tasks = vec![
        TaskKind::Add,
        TaskKind::Remove,
        TaskKind::Swap,
        TaskKind::Color,
    ];
    // Video data: every task except style/tone.
    let mut video_cfg = DatasetConfig::new(budget.train_video_n, MediaKind::Video, "xfer-vid");
    video_cfg.tasks = LOCAL_TASKS.to_vec();

    let image_with = generate_dataset(&with_style, data_seed)?;
    let image_without = generate_dataset(&no_style, data_seed)?;
    let video = generate_dataset(&video_cfg, data_seed)?;
    // The video set must not leak style/tone.
    if video.iter().any(|s| s.task.is_global()) {
        return Err(Error::Contract(
            "transfer experiment: style/tone leaked into the video training data".into(),
        ));
    }

    // Held-out style/tone benchmarks, video and image.
    let mut bench_cfg = DatasetConfig::new(budget.eval_n, MediaKind::Video, "xfer-bench-video");
    bench_cfg.tasks = vec![TaskKind::Style, TaskKind::Tone];
    let video_bench = generate_dataset(&bench_cfg, data_seed ^ 1)?;
    let mut ibench_cfg = DatasetConfig::new(budget.eval_n, MediaKind::Image, "xfer-bench-image");
    ibench_cfg.tasks = vec![TaskKind::Style, TaskKind::Tone];
    let image_bench = generate_dataset(&ibench_cfg, data_seed ^ 2)?;

    let mut report = TransferReport::default();
    for &seed in seeds {
        let arm = |image_data: &[EditSample], tag: &str| -> Result<EditModel> {
            let cfg = base.clone();
            let model = arm_model(&cfg, pretrained, seed)?;
            // Stage 1: image-only bridge alignment.
            let mut p1 = cfg.stage_plan(1);
            p1.steps = budget.stage1_steps;
            p1.batch_image = budget.batch_image;
            p1.batch_video = budget.batch_video;
            p1.checkpoint_every = 0;
            let mut t1 = Trainer::new(
                model,
                p1,
                TrainData::Edit {
                    image: image_data,
                    video: &[],
                },
                seed,
                cfg.snapshot(),
            )?;
            let mut log = Vec::new();
            t1.run(None, |r| log.push(r.clone()))?;
            // Stage 2: mixed training, full model.
            let model = t1.model;
            let mut p2 = cfg.stage_plan(2);
            p2.steps = budget.stage2_steps;
            p2.batch_image = budget.batch_image;
            p2.batch_video = budget.batch_video;
            p2.checkpoint_every = 0;
            let mut t2 = Trainer::new(
                model,
                p2,
                TrainData::Edit {
                    image: image_data,
                    video: &video,
                },
                seed,
                cfg.snapshot(),
            )?;
            t2.run(None, |r| log.push(r.clone()))?;
            write_arm_outputs(out_dir, tag, seed, &cfg, &log, None)?;
            Ok(t2.model)
        };

        let transfer_model = arm(&image_with, "transfer")?;
        let control_model = arm(&image_without, "control")?;
        let untrained = EditModel::new(base.model_config(), seed)?;

        let t_scores = eval_model(&transfer_model, &video_bench, budget.sample_steps, seed)?;
        let c_scores = eval_model(&control_model, &video_bench, budget.sample_steps, seed)?;
        let u_scores = eval_model(&untrained, &video_bench, budget.sample_steps, seed)?;
        let i_scores = eval_model(&transfer_model, &image_bench, budget.sample_steps, seed)?;
        report.per_seed.push(TransferSeedResult {
            seed,
            transfer_follow: follow_rate(&t_scores),
            control_follow: follow_rate(&c_scores),
            untrained_follow: follow_rate(&u_scores),
            image_style_follow: follow_rate(&i_scores),
        });
    }

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut csv =
            String::from("seed,transfer_follow,control_follow,untrained_follow,image_style_follow\n");
        for r in &report.per_seed {
            csv.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4}\n",
                r.seed, r.transfer_follow, r.control_follow, r.untrained_follow, r.image_style_follow
            ));
        }
        fs::write(dir.join("summary.csv"), csv)?;
    }
    Ok(report)
}

// ── ablations ───────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct AblationArm {
    pub variant: String,
    pub seed: u64,
    pub aggregate_follow: f64,
    /// Follow rate per stratum ("frame1" / "mid_entry" for the frame
    /// ablation; empty otherwise).
    pub strata: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct AblationReport {
    pub arms: Vec<AblationArm>,
    pub median_follow: BTreeMap<String, f64>,
    pub median_strata: BTreeMap<(String, String), f64>,
}

fn run_two_stage_arm(
    cfg: &RunConfig,
    budget: &ExperimentBudget,
    seed: u64,
    pretrained: &Checkpoint,
    image: &[EditSample],
    video: &[EditSample],
    out_dir: Option<&Path>,
    tag: &str,
) -> Result<EditModel> {
    let model = arm_model(cfg, pretrained, seed)?;
    let mut p1 = cfg.stage_plan(1);
    p1.steps = budget.stage1_steps;
    p1.batch_image = budget.batch_image;
    p1.batch_video = budget.batch_video;
    p1.checkpoint_every = 0;
    let mut t1 = Trainer::new(
        model,
        p1,
        TrainData::Edit { image, video: &[] },
        seed,
        cfg.snapshot(),
    )?;
    let mut log = Vec::new();
    t1.run(None, |r| log.push(r.clone()))?;
    let mut p2 = cfg.stage_plan(2);
    p2.steps = budget.stage2_steps;
    p2.batch_image = budget.batch_image;
    p2.batch_video = budget.batch_video;
    p2.checkpoint_every = 0;
    if video.is_empty() {
        p2.p_video = 0.0;
    }
    let mut t2 = Trainer::new(
        t1.model,
        p2,
        TrainData::Edit { image, video },
        seed,
        cfg.snapshot(),
    )?;
    t2.run(None, |r| log.push(r.clone()))?;
    write_arm_outputs(out_dir, tag, seed, cfg, &log, None)?;
    Ok(t2.model)
}

fn ablation_summary(report: &mut AblationReport, variants: &[&str]) {
    for v in variants {
        let mut vals: Vec<f64> = report
            .arms
            .iter()
            .filter(|a| a.variant == *v)
            .map(|a| a.aggregate_follow)
            .collect();
        report.median_follow.insert(v.to_string(), median(&mut vals));
        let strata: Vec<String> = report
            .arms
            .iter()
            .filter(|a| a.variant == *v)
            .flat_map(|a| a.strata.keys().cloned())
            .collect();
        for s in strata {
            let mut vals: Vec<f64> = report
                .arms
                .iter()
                .filter(|a| a.variant == *v)
                .filter_map(|a| a.strata.get(&s).copied())
                .collect();
            report
                .median_strata
                .insert((v.to_string(), s), median(&mut vals));
        }
    }
}

fn write_ablation_summary(report: &AblationReport, dir: Option<&Path>) -> Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir)?;
    let mut csv = String::from("variant,seed,aggregate_follow,stratum,stratum_follow\n");
    for a in &report.arms {
        if a.strata.is_empty() {
            csv.push_str(&format!("{},{},{:.4},,\n", a.variant, a.seed, a.aggregate_follow));
        } else {
            for (s, f) in &a.strata {
                csv.push_str(&format!(
                    "{},{},{:.4},{},{:.4}\n",
                    a.variant, a.seed, a.aggregate_follow, s, f
                ));
            }
        }
    }
    fs::write(dir.join("summary.csv"), csv)?;
    Ok(())
}

/// Fig.-9a-style study: separate image/video query sets vs one shared pool
/// of equal total parameter count, video-benchmark aggregate follow rate.
pub fn run_query_ablation(
    base: &RunConfig,
    budget: &ExperimentBudget,
    seeds: &[u64],
    pretrained: &Checkpoint,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    let mut separate = base.clone();
    separate.query_mode = QueryMode::Separate;
    let mut shared = base.clone();
    shared.query_mode = QueryMode::Shared;
    assert_config_purity(&separate, &shared, &["queries.mode"])?;

    let data_seed = seeds.first().copied().unwrap_or(0) ^ 0x0AB1;
    let image = generate_dataset(
        &DatasetConfig::new(budget.train_image_n, MediaKind::Image, "qabl-img"),
        data_seed,
    )?;
    let video = generate_dataset(
        &DatasetConfig::new(budget.train_video_n, MediaKind::Video, "qabl-vid"),
        data_seed,
    )?;
    let bench = emit_benchmark(data_seed ^ 9, MediaKind::Video, false, budget.eval_n)?;

    let mut report = AblationReport::default();
    for &seed in seeds {
        for (name, cfg) in [("separate", &separate), ("shared", &shared)] {
            let model =
                run_two_stage_arm(cfg, budget, seed, pretrained, &image, &video, out_dir, name)?;
            let scores = eval_model(&model, &bench, budget.sample_steps, seed)?;
            report.arms.push(AblationArm {
                variant: name.to_string(),
                seed,
                aggregate_follow: follow_rate(&scores),
                strata: BTreeMap::new(),
            });
        }
    }
    ablation_summary(&mut report, &["separate", "shared"]);
    write_ablation_summary(&report, out_dir)?;
    Ok(report)
}

/// Fig.-9b-style study: multi-frame vs first-frame-only MLLM input,
/// stratified by when the edited object first appears.
pub fn run_frame_ablation(
    base: &RunConfig,
    budget: &ExperimentBudget,
    seeds: &[u64],
    pretrained: &Checkpoint,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    let mut multi = base.clone();
    multi.f_mllm = base.media_frames;
    let mut first = base.clone();
    first.f_mllm = 1;
    assert_config_purity(&multi, &first, &["frames.mllm"])?;

    let data_seed = seeds.first().copied().unwrap_or(0) ^ 0xFAB1;
    let image = generate_dataset(
        &DatasetConfig::new(budget.train_image_n, MediaKind::Image, "fabl-img"),
        data_seed,
    )?;
    let mut video_cfg = DatasetConfig::new(budget.train_video_n, MediaKind::Video, "fabl-vid");
    video_cfg.tasks = vec![TaskKind::Remove, TaskKind::Swap, TaskKind::Color, TaskKind::Add];
    video_cfg.mid_entry_frac = 0.5;
    let video = generate_dataset(&video_cfg, data_seed)?;

    let mut bench_cfg = DatasetConfig::new(budget.eval_n, MediaKind::Video, "fabl-bench");
    bench_cfg.tasks = vec![TaskKind::Remove, TaskKind::Swap, TaskKind::Color];
    bench_cfg.mid_entry_frac = 0.5;
    let bench = generate_dataset(&bench_cfg, data_seed ^ 3)?;

    let mut report = AblationReport::default();
    for &seed in seeds {
        for (name, cfg) in [("multi_frame", &multi), ("first_frame", &first)] {
            let model =
                run_two_stage_arm(cfg, budget, seed, pretrained, &image, &video, out_dir, name)?;
            let scores = eval_model(&model, &bench, budget.sample_steps, seed)?;
            let mut strata = BTreeMap::new();
            let (mid, early): (Vec<_>, Vec<_>) =
                scores.iter().cloned().partition(|s| s.first_visible_frame > 0);
            strata.insert("mid_entry".to_string(), follow_rate(&mid));
            strata.insert("frame1".to_string(), follow_rate(&early));
            report.arms.push(AblationArm {
                variant: name.to_string(),
                seed,
                aggregate_follow: follow_rate(&scores),
                strata,
            });
        }
    }
    ablation_summary(&mut report, &["multi_frame", "first_frame"]);
    write_ablation_summary(&report, out_dir)?;
    Ok(report)
}

// ── multimodal gap ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct GapArm {
    pub variant: String,
    pub seed: u64,
    pub follow: f64,
    pub per_task: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GapReport {
    pub arms: Vec<GapArm>,
    pub median_follow: BTreeMap<String, f64>,
}

/// Appendix-style study: text-only conditioning vs the full multimodal
/// bridge on cluttered scenes (image editing, identical budgets).
pub fn run_mllm_gap(
    base: &RunConfig,
    budget: &ExperimentBudget,
    seeds: &[u64],
    pretrained: &Checkpoint,
    out_dir: Option<&Path>,
) -> Result<GapReport> {
    let mut text_only = base.clone();
    text_only.design = BridgeDesign::TextOnly;
    let mut full = base.clone();
    full.design = BridgeDesign::QueryLoraMlp;
    assert_config_purity(&text_only, &full, &["bridge.design"])?;

    let data_seed = seeds.first().copied().unwrap_or(0) ^ 0x6A9;
    let mut dcfg = DatasetConfig::new(budget.train_image_n, MediaKind::Image, "gap-img");
    dcfg.tasks = vec![TaskKind::Remove, TaskKind::Swap, TaskKind::Color];
    dcfg.cluttered_frac = 1.0;
    let image = generate_dataset(&dcfg, data_seed)?;

    let mut bench_cfg = DatasetConfig::new(budget.eval_n, MediaKind::Image, "gap-bench");
    bench_cfg.tasks = vec![TaskKind::Remove, TaskKind::Swap, TaskKind::Color];
    bench_cfg.cluttered_frac = 1.0;
    let bench = generate_dataset(&bench_cfg, data_seed ^ 5)?;

    let mut report = GapReport::default();
    for &seed in seeds {
        for (name, cfg) in [("text_only", &text_only), ("query_lora_mlp", &full)] {
            let model =
                run_two_stage_arm(cfg, budget, seed, pretrained, &image, &[], out_dir, name)?;
            let scores = eval_model(&model, &bench, budget.sample_steps, seed)?;
            let agg = aggregate(&scores);
            let mut per_task = BTreeMap::new();
            for (task, a) in &agg.per_task {
                per_task.insert(task.clone(), a.follow_rate);
            }
            report.arms.push(GapArm {
                variant: name.to_string(),
                seed,
                follow: follow_rate(&scores),
                per_task,
            });
            if let Some(dir) = out_dir {
                let arm_dir = dir.join(format!("{name}-seed{seed}"));
                fs::create_dir_all(&arm_dir)?;
                fs::write(arm_dir.join("report.csv"), report_csv(&agg))?;
            }
        }
    }
    for v in ["text_only", "query_lora_mlp"] {
        let mut vals: Vec<f64> = report
            .arms
            .iter()
            .filter(|a| a.variant == v)
            .map(|a| a.follow)
            .collect();
        report.median_follow.insert(v.to_string(), median(&mut vals));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut csv = String::from("variant,seed,follow\n");
        for a in &report.arms {
            csv.push_str(&format!("{},{},{:.4}\n", a.variant, a.seed, a.follow));
        }
        fs::write(dir.join("summary.csv"), csv)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn purity_rejects_undeclared_differences() {
        let a = RunConfig::toy();
        let mut b = RunConfig::toy();
        b.lr = 3e-4;
        assert!(assert_config_purity(&a, &b, &["bridge.design"]).is_err());
        assert!(assert_config_purity(&a, &b, &["train.lr"]).is_ok());
    }

    #[test]
    fn moving_average_basics() {
        let ma = moving_average(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(ma[0], None);
        assert_eq!(ma[1], Some(1.5));
        assert_eq!(ma[3], Some(3.5));
    }

    #[test]
    fn zero_budget_race_is_empty() {
        let base = RunConfig::toy();
        let mut budget = ExperimentBudget::default();
        budget.stage1_steps = 0;
        // A dummy checkpoint is never touched at zero budget.
        let ckpt = Checkpoint {
            config_snapshot: String::new(),
            step: 0,
            seed: 0,
            train_rng: crate::rng::RngPos { word_pos: 0 },
            sampler: crate::checkpoint::SamplerState {
                rng_pos: crate::rng::RngPos { word_pos: 0 },
                image_epoch: 0,
                image_cursor: 0,
                video_epoch: 0,
                video_cursor: 0,
            },
            params: crate::params::ParamStore::new(),
            opt_step: 0,
            opt_cfg: Default::default(),
            moments: Default::default(),
        };
        let report = run_alignment_race(&base, &budget, &[1, 2], &ckpt, None).unwrap();
        assert!(report.arms.is_empty());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
