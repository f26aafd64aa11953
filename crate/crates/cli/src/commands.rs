//! Subcommand implementations.

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use uniedit_core::bridge::BridgeDesign;
use uniedit_core::checkpoint::Checkpoint;
use uniedit_core::codec::MediaKind;
use uniedit_core::config::{parse_config, parse_config_str, RunConfig};
use uniedit_core::error::{Error, Result};
use uniedit_core::evalbench::{
    pretrain_for_experiments, report_csv, report_outputs, run_alignment_race, run_frame_ablation,
    run_mllm_gap, run_query_ablation, run_transfer, ExperimentBudget,
};
use uniedit_core::media_io;
use uniedit_core::model::EditModel;
use uniedit_core::synthworld::{
    emit_benchmark, generate_dataset, load_manifest, validate_vie_manifest, write_manifest,
    DatasetConfig, EditSample, TaskKind,
};
use uniedit_core::trainer::{log_csv_header, log_csv_row, TrainData, Trainer};
use uniedit_core::evalbench::caption_data;

pub struct BudgetOverrides {
    pub stage1_steps: Option<u64>,
    pub stage2_steps: Option<u64>,
    pub pretrain_steps: Option<u64>,
    pub eval_n: Option<usize>,
}

const OK: ExitCode = ExitCode::SUCCESS;

/// A run directory is never overwritten unless --force.
fn prepare_run_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() && out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) && !force {
        return Err(Error::Contract(format!(
            "run directory {} already exists (pass --force to reuse)",
            out.display()
        )));
    }
    fs::create_dir_all(out)?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => parse_config(p),
        None => Ok(RunConfig::toy()),
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &mut RunConfig) {
    if let Some(s) = flag {
        cfg.run_seed = s;
    }
}

fn write_snapshot(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(dir.join("config.snapshot"), cfg.snapshot())?;
    Ok(())
}

/// Rebuild the model a checkpoint was trained with: config from the stored
/// snapshot, every parameter strictly adopted (shape mismatches name the
/// parameter).
fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(RunConfig, EditModel)> {
    let cfg = if ckpt.config_snapshot.is_empty() {
        RunConfig::toy()
    } else {
        parse_config_str(&ckpt.config_snapshot)?
    };
    let mut model = EditModel::new(cfg.model_config(), ckpt.seed)?;
    let names: Vec<String> = model.params.names().cloned().collect();
    for name in names {
        let src = ckpt.params.get(&name).map_err(|_| {
            Error::Checkpoint(format!(
                "checkpoint is missing parameter '{name}' required by its own config"
            ))
        })?;
        let dst = model.params.get_mut(&name)?;
        if dst.shape() != src.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}': checkpoint shape {:?} vs model shape {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src.clone();
    }
    Ok((cfg, model))
}

// ── gen-data ────────────────────────────────────────────────────────────

pub fn gen_data(
    n: usize,
    seed: u64,
    out: &Path,
    vie: bool,
    kind: &str,
    force: bool,
) -> Result<ExitCode> {
    let kind = match kind {
        "image" => MediaKind::Image,
        "video" => MediaKind::Video,
        other => {
            return Err(Error::Config(format!(
                "unknown media kind '{other}' (expected image|video)"
            )))
        }
    };
    if vie && n != 140 {
        return Err(Error::Config(format!(
            "--vie-proportions fixes the benchmark at 140 samples, got --n {n}"
        )));
    }
    prepare_run_dir(out, force)?;
    let samples = emit_benchmark(seed, kind, vie, n)?;
    let manifest = write_manifest(&samples, out)?;
    if vie {
        let records: Vec<_> = load_manifest(&manifest)?.into_iter().map(|(r, _)| r).collect();
        validate_vie_manifest(&records)?;
    }
    let mut snapshot = RunConfig::toy();
    snapshot.run_seed = seed;
    let mut doc = snapshot.snapshot();
    doc.push_str(&format!(
        "# gen-data invocation\n# gendata.n={n}\n# gendata.kind={}\n# gendata.vie={vie}\n",
        match kind {
            MediaKind::Image => "image",
            MediaKind::Video => "video",
        }
    ));
    fs::write(out.join("config.snapshot"), doc)?;
    println!(
        "wrote {} samples to {}",
        samples.len(),
        manifest.display()
    );
    Ok(OK)
}

// ── pretrain ────────────────────────────────────────────────────────────

pub fn pretrain(config: Option<&Path>, seed: Option<u64>, out: &Path, force: bool) -> Result<ExitCode> {
    let mut cfg = load_config(config)?;
    resolve_seed(seed, &mut cfg);
    prepare_run_dir(out, force)?;
    write_snapshot(out, &cfg)?;
    let run_seed = cfg.run_seed;

    let mut pre_cfg = cfg.clone();
    pre_cfg.design = BridgeDesign::TextOnly;
    let model = EditModel::new(pre_cfg.model_config(), run_seed)?;
    let (image, video) = caption_data(cfg.train_image_n, cfg.train_video_n, run_seed);
    let data = TrainData::Generate {
        image: &image,
        video: &video,
    };
    let mut plan = pre_cfg.stage_plan(0);
    plan.steps = cfg.pretrain_steps;
    plan.p_video = 0.5;
    let mut trainer = Trainer::new(model, plan, data, run_seed, pre_cfg.snapshot())?;

    fs::create_dir_all(out.join("logs"))?;
    let mut log = String::from(log_csv_header());
    log.push('\n');
    trainer.run(Some(&out.join("checkpoints")), |row| {
        log.push_str(&log_csv_row(row));
        log.push('\n');
        if row.step % 100 == 0 {
            println!("pretrain step {} loss {:.4}", row.step, row.loss);
        }
    })?;
    fs::write(out.join("logs").join("pretrain.csv"), log)?;
    trainer.save_checkpoint(&out.join("checkpoints").join("pretrained_dit.ckpt"))?;
    println!(
        "pretrained generator saved to {}",
        out.join("checkpoints").join("pretrained_dit.ckpt").display()
    );
    Ok(OK)
}

// ── train ───────────────────────────────────────────────────────────────

fn stage_datasets(cfg: &RunConfig, stage: u8) -> Result<(Vec<EditSample>, Vec<EditSample>)> {
    // Stage 3 mirrors quality fine-tuning: a smaller curated set rendered
    // with anti-aliased edges (the quality predicate — exact preservation
    // outside the mask — is enforced by the generator for every sample).
    let (n_image, n_video, aa, label) = if stage == 3 {
        (
            cfg.train_image_n / 2,
            cfg.train_video_n / 2,
            true,
            "curated",
        )
    } else {
        (cfg.train_image_n, cfg.train_video_n, false, "train")
    };
    let mut icfg = DatasetConfig::new(n_image, MediaKind::Image, &format!("{label}-img"));
    icfg.cluttered_frac = cfg.cluttered_frac as f32;
    icfg.anti_aliased = aa;
    let mut vcfg = DatasetConfig::new(n_video, MediaKind::Video, &format!("{label}-vid"));
    vcfg.cluttered_frac = cfg.cluttered_frac as f32;
    vcfg.mid_entry_frac = cfg.mid_entry_frac as f32;
    vcfg.anti_aliased = aa;
    // Video style/tone arrive through image data only (the transfer
    // mechanism under study), so the video set sticks to local tasks.
    vcfg.tasks = vec![
        TaskKind::Add,
        TaskKind::Remove,
        TaskKind::Swap,
        TaskKind::Color,
        TaskKind::Hybrid,
        TaskKind::RefAdd,
        TaskKind::RefSwap,
    ];
    Ok((
        generate_dataset(&icfg, cfg.run_seed)?,
        generate_dataset(&vcfg, cfg.run_seed)?,
    ))
}

pub fn train(
    config: Option<&Path>,
    stage: u8,
    init: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    force: bool,
) -> Result<ExitCode> {
    if !(1..=3).contains(&stage) {
        return Err(Error::Config(format!("--stage must be 1, 2 or 3, got {stage}")));
    }
    let mut cfg = load_config(config)?;
    resolve_seed(seed, &mut cfg);
    if stage >= 2 && init.is_none() {
        return Err(Error::Config(format!(
            "stage {stage} requires --init with the stage-{} (or pretrained) checkpoint",
            stage - 1
        )));
    }
    prepare_run_dir(out, force)?;
    write_snapshot(out, &cfg)?;

    let mut model = EditModel::new(cfg.model_config(), cfg.run_seed)?;
    if let Some(ckpt_path) = init {
        let ckpt = Checkpoint::load(ckpt_path)?;
        if stage == 1 {
            // Alignment starts from the pretrained generator: adopt the DiT
            // (and the text encoder for the text-only design).
            model.adopt_group(&ckpt.params, "dit")?;
            if cfg.design == BridgeDesign::TextOnly && ckpt.params.contains("textenc.out") {
                model.adopt_group(&ckpt.params, "textenc")?;
            }
        } else {
            // Later stages continue from a same-config checkpoint.
            let names: Vec<String> = model.params.names().cloned().collect();
            for name in names {
                let src = ckpt.params.get(&name).map_err(|_| {
                    Error::Checkpoint(format!(
                        "--init checkpoint is missing parameter '{name}' (wrong stage or design?)"
                    ))
                })?;
                let dst = model.params.get_mut(&name)?;
                if dst.shape() != src.shape() {
                    return Err(Error::Checkpoint(format!(
                        "parameter '{name}': checkpoint shape {:?} vs model shape {:?}",
                        src.shape(),
                        dst.shape()
                    )));
                }
                *dst = src.clone();
            }
        }
    }

    let (image, video) = stage_datasets(&cfg, stage)?;
    let plan = cfg.stage_plan(stage);
    let mut trainer = Trainer::new(
        model,
        plan,
        TrainData::Edit {
            image: &image,
            video: &video,
        },
        cfg.run_seed,
        cfg.snapshot(),
    )?;
    fs::create_dir_all(out.join("logs"))?;
    let mut log = String::from(log_csv_header());
    log.push('\n');
    trainer.run(Some(&out.join("checkpoints")), |row| {
        log.push_str(&log_csv_row(row));
        log.push('\n');
        if row.step % 100 == 0 {
            println!("stage {stage} step {} loss {:.4}", row.step, row.loss);
        }
    })?;
    fs::write(out.join("logs").join(format!("stage{stage}.csv")), log)?;
    println!(
        "stage {stage} finished; final checkpoint {}",
        out.join("checkpoints")
            .join(format!("stage{stage}-final.ckpt"))
            .display()
    );
    Ok(OK)
}

// ── sample ──────────────────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
pub fn sample(
    ckpt_path: &Path,
    source: &Path,
    instruction: &str,
    reference: Option<&Path>,
    steps: usize,
    seed: u64,
    guidance: f32,
    out: &Path,
) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (_, model) = model_from_checkpoint(&ckpt)?;
    let src = media_io::load_media(source)?;
    let reference = match reference {
        Some(p) => Some(media_io::load_media(p)?),
        None => None,
    };
    let edited = model.sample_edit(instruction, &src, reference.as_ref(), steps, seed, guidance)?;
    media_io::save_media(&edited, out)?;
    println!("wrote {}", out.with_extension("tns").display());
    Ok(OK)
}

// ── eval ────────────────────────────────────────────────────────────────

pub fn eval(
    ckpt_path: &Path,
    manifest: &Path,
    out: &Path,
    seed: Option<u64>,
    force: bool,
) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (mut cfg, model) = model_from_checkpoint(&ckpt)?;
    resolve_seed(seed, &mut cfg);
    prepare_run_dir(out, force)?;
    write_snapshot(out, &cfg)?;
    let outputs = out.join("outputs");
    fs::create_dir_all(&outputs)?;

    let entries = load_manifest(manifest)?;
    for (rec, files) in &entries {
        let s = uniedit_core::rng::derive_u64(cfg.run_seed, &format!("eval/{}", rec.id));
        let output = model.sample_edit(
            &rec.instruction,
            &files.source,
            files.reference.as_ref(),
            cfg.sample_steps,
            s,
            cfg.guidance as f32,
        )?;
        media_io::save_tns(&output, &outputs.join(format!("{}.tns", rec.id)))?;
    }

    let report = report_outputs(manifest, &outputs)?;
    fs::write(out.join("report.csv"), report_csv(&report.metric))?;
    let mut summary = String::new();
    summary.push_str(&format!(
        "samples={} follow_rate={:.4} edit_psnr={:.2} preserve_psnr={:.2}\n",
        report.metric.overall.n,
        report.metric.overall.follow_rate,
        report.metric.overall.edit_psnr,
        report.metric.overall.preserve_psnr
    ));
    if !report.missing.is_empty() {
        summary.push_str("errors: missing outputs\n");
        for id in &report.missing {
            summary.push_str(&format!("  {id}\n"));
        }
    }
    fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    if report.missing.is_empty() {
        Ok(OK)
    } else {
        Ok(ExitCode::from(2))
    }
}

// ── experiment ──────────────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
pub fn experiment(
    kind: &str,
    config: Option<&Path>,
    out: &Path,
    seeds: Option<&str>,
    seed: Option<u64>,
    init: Option<&Path>,
    overrides: BudgetOverrides,
    force: bool,
) -> Result<ExitCode> {
    let mut cfg = load_config(config)?;
    resolve_seed(seed, &mut cfg);
    let seeds: Vec<u64> = match seeds {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("bad seed '{s}' in --seeds")))
            })
            .collect::<Result<_>>()?,
        None => (0..3).map(|i| cfg.run_seed + i).collect(),
    };
    let mut budget = ExperimentBudget::default();
    if let Some(v) = overrides.stage1_steps {
        budget.stage1_steps = v;
    }
    if let Some(v) = overrides.stage2_steps {
        budget.stage2_steps = v;
    }
    if let Some(v) = overrides.pretrain_steps {
        budget.pretrain_steps = v;
    }
    if let Some(v) = overrides.eval_n {
        budget.eval_n = v;
    }
    prepare_run_dir(out, force)?;
    write_snapshot(out, &cfg)?;

    let pretrained = match init {
        Some(p) => Checkpoint::load(p)?,
        None => {
            println!("pretraining generator ({} steps)...", budget.pretrain_steps);
            let ck = pretrain_for_experiments(&cfg, &budget, cfg.run_seed, |row| {
                if row.step % 100 == 0 {
                    println!("pretrain step {} loss {:.4}", row.step, row.loss);
                }
            })?;
            ck.save(&out.join("pretrained_dit.ckpt"))?;
            ck
        }
    };

    match kind {
        "alignment-race" => {
            let report = run_alignment_race(&cfg, &budget, &seeds, &pretrained, Some(out))?;
            for (variant, steps) in &report.median_steps {
                println!("alignment-race median steps-to-threshold {variant}: {steps}");
            }
        }
        "transfer" => {
            let report = run_transfer(&cfg, &budget, &seeds, &pretrained, Some(out))?;
            for r in &report.per_seed {
                println!(
                    "transfer seed {}: transfer={:.3} control={:.3} untrained={:.3} image={:.3}",
                    r.seed, r.transfer_follow, r.control_follow, r.untrained_follow,
                    r.image_style_follow
                );
            }
        }
        "query-ablation" => {
            let report = run_query_ablation(&cfg, &budget, &seeds, &pretrained, Some(out))?;
            for (variant, follow) in &report.median_follow {
                println!("query-ablation median follow {variant}: {follow:.3}");
            }
        }
        "frame-ablation" => {
            let report = run_frame_ablation(&cfg, &budget, &seeds, &pretrained, Some(out))?;
            for ((variant, stratum), follow) in &report.median_strata {
                println!("frame-ablation median follow {variant}/{stratum}: {follow:.3}");
            }
        }
        "mllm-gap" => {
            let report = run_mllm_gap(&cfg, &budget, &seeds, &pretrained, Some(out))?;
            for (variant, follow) in &report.median_follow {
                println!("mllm-gap median follow {variant}: {follow:.3}");
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown experiment '{other}' (expected alignment-race|transfer|query-ablation|frame-ablation|mllm-gap)"
            )))
        }
    }
    println!("experiment outputs under {}", out.display());
    Ok(OK)
}

// ── inspect-ckpt ────────────────────────────────────────────────────────

pub fn inspect_ckpt(path: &Path) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(path)?;
    println!("checkpoint {}", path.display());
    println!("  step: {}", ckpt.step);
    println!("  seed: {}", ckpt.seed);
    println!("  optimizer step: {}", ckpt.opt_step);
    println!(
        "  optimizer: lr={} beta1={} beta2={} eps={} wd={}",
        ckpt.opt_cfg.lr,
        ckpt.opt_cfg.beta1,
        ckpt.opt_cfg.beta2,
        ckpt.opt_cfg.eps,
        ckpt.opt_cfg.weight_decay
    );
    println!("  parameters: {}", ckpt.params.len());
    let total: usize = ckpt.params.iter().map(|(_, t)| t.numel()).sum();
    println!("  total elements: {total}");
    for (name, t) in ckpt.params.iter() {
        println!("    {name} {:?}", t.shape());
    }
    println!("  moment tensors: {}", ckpt.moments.len());
    if !ckpt.config_snapshot.is_empty() {
        println!("  config snapshot:");
        for line in ckpt.config_snapshot.lines() {
            println!("    {line}");
        }
    }
    Ok(OK)
}
