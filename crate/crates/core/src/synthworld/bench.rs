//! Dataset and benchmark emission, manifest I/O, and the VIE-style
//! proportion checker.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{Media, MediaKind};
use crate::error::{Error, Result};
use crate::media_io;
use crate::rng::derive_rng;
use crate::tensor::{read_named_tensor, write_named_tensor, RecordReader, Tensor};

use super::tasks::{EditSample, TaskKind};

/// Benchmark category counts: (task, count). Total 140.
pub const VIE_COUNTS: [(TaskKind, usize); 9] = [
    (TaskKind::Add, 30),
    (TaskKind::Remove, 30),
    (TaskKind::Swap, 25),
    (TaskKind::Color, 10),
    (TaskKind::Style, 10),
    (TaskKind::Tone, 5),
    (TaskKind::Hybrid, 10),
    (TaskKind::RefSwap, 10),
    (TaskKind::RefAdd, 10),
];

pub const VIE_TOTAL: usize = 140;

/// How a dataset should be generated.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub n: usize,
    pub kind: MediaKind,
    pub tasks: Vec<TaskKind>,
    /// Fraction of video samples whose edited object enters mid-video.
    pub mid_entry_frac: f32,
    /// Fraction of samples drawn from cluttered 4-object scenes.
    pub cluttered_frac: f32,
    /// Anti-aliased rendering (the stage-3 quality subset).
    pub anti_aliased: bool,
    /// Ids become "<label>-NNNNNN"; the rng stream is derived per sample
    /// from (seed, label, index), so generation parallelizes exactly.
    pub label: String,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
}

impl DatasetConfig {
    pub fn new(n: usize, kind: MediaKind, label: &str) -> Self {
        DatasetConfig {
            n,
            kind,
            tasks: TaskKind::ALL.to_vec(),
            mid_entry_frac: 0.0,
            cluttered_frac: 0.0,
            anti_aliased: false,
            label: label.to_string(),
            height: 32,
            width: 32,
            frames: 5,
        }
    }

}

/// Deterministic dataset: sample i uses task tasks[i % len] and its own
/// derived seed.
pub fn generate_dataset(cfg: &DatasetConfig, master_seed: u64) -> Result<Vec<EditSample>> {
    if cfg.tasks.is_empty() {
        return Err(Error::Data("dataset task list is empty".into()));
    }
    let mut out = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let task = cfg.tasks[i % cfg.tasks.len()];
        let unit = (i as f32 + 0.5) / cfg.n.max(1) as f32;
        // Deterministic flavor striping instead of per-sample coin flips.
        let mid_entry =
            cfg.kind == MediaKind::Video && unit < cfg.mid_entry_frac && !task.is_global();
        let cluttered = 1.0 - unit < cfg.cluttered_frac;
        let packed = super::tasks::pack_sample_seed(
            seed_for(master_seed, &cfg.label, i),
            mid_entry,
            cluttered,
            cfg.anti_aliased,
        );
        let id = format!("{}-{:06}", cfg.label, i);
        out.push(super::tasks::generate_sample_from_seed(
            task, cfg.kind, cfg.height, cfg.width, cfg.frames, packed, id,
        )?);
    }
    Ok(out)
}

fn seed_for(master: u64, label: &str, index: usize) -> u64 {
    use rand::Rng;
    let mut r = derive_rng(master, &format!("data/{label}/{index}"));
    r.gen()
}

/// Held-out benchmark. With `vie_proportions` the category counts match
/// [`VIE_COUNTS`] exactly (140 samples); otherwise `n` samples cycle the
/// task list uniformly. Benchmark ids/seed streams are disjoint from any
/// training label by construction.
pub fn emit_benchmark(
    master_seed: u64,
    kind: MediaKind,
    vie_proportions: bool,
    n: usize,
) -> Result<Vec<EditSample>> {
    let mut cfg = DatasetConfig::new(n, kind, "bench");
    if vie_proportions {
        let mut tasks = Vec::with_capacity(VIE_TOTAL);
        for (task, count) in VIE_COUNTS {
            tasks.extend(std::iter::repeat(task).take(count));
        }
        cfg.n = VIE_TOTAL;
        // One task per slot, in category order; ids stay stable.
        cfg.tasks = tasks;
        // The benchmark mirrors the mid-entry stratum so frame ablations
        // can stratify on it.
        cfg.mid_entry_frac = if kind == MediaKind::Video { 0.3 } else { 0.0 };
    }
    generate_dataset(&cfg, master_seed)
}

// ── manifest I/O ────────────────────────────────────────────────────────

/// One JSON line per sample; paths are relative to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub task: String,
    pub source: String,
    pub target: String,
    pub mask: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub instruction: String,
    pub seed: u64,
}

fn mask_to_tensor(sample: &EditSample) -> Tensor<f32> {
    let m = &sample.source;
    let data: Vec<f32> = sample.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![m.frames, m.height, m.width], data).expect("mask shape")
}

fn save_mask(sample: &EditSample, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_named_tensor(&mut buf, "mask", &mask_to_tensor(sample));
    fs::write(path, buf)?;
    Ok(())
}

fn load_mask(path: &Path) -> Result<Vec<bool>> {
    let buf = fs::read(path)?;
    let mut r = RecordReader::new(&buf);
    let rec = read_named_tensor::<f32>(&mut r)?;
    Ok(rec.tensor.data().iter().map(|&v| v > 0.5).collect())
}

/// Write samples + media files under `dir`; returns the manifest path.
pub fn write_manifest(samples: &[EditSample], dir: &Path) -> Result<std::path::PathBuf> {
    fs::create_dir_all(dir.join("media"))?;
    let mut lines = String::new();
    for s in samples {
        let src_rel = format!("media/{}.source.tns", s.id);
        let tgt_rel = format!("media/{}.target.tns", s.id);
        let mask_rel = format!("media/{}.mask.tns", s.id);
        media_io::save_tns(&s.source, &dir.join(&src_rel))?;
        media_io::save_tns(&s.target, &dir.join(&tgt_rel))?;
        save_mask(s, &dir.join(&mask_rel))?;
        let reference = match &s.reference {
            Some(r) => {
                let rel = format!("media/{}.reference.tns", s.id);
                media_io::save_tns(r, &dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        let rec = ManifestRecord {
            id: s.id.clone(),
            task: s.task.name().to_string(),
            source: src_rel,
            target: tgt_rel,
            mask: mask_rel,
            reference,
            instruction: s.instruction.clone(),
            seed: s.seed,
        };
        lines.push_str(&serde_json::to_string(&rec).expect("manifest json"));
        lines.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, lines)?;
    Ok(path)
}

/// Read a manifest back into media + records (ground-truth scenes are not
/// reconstructed here; evaluation regenerates them from the stored seeds).
pub fn load_manifest(path: &Path) -> Result<Vec<(ManifestRecord, EditSampleFiles)>> {
    let text = fs::read_to_string(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| {
            Error::Data(format!(
                "{}:{}: malformed manifest line: {e}",
                path.display(),
                ln + 1
            ))
        })?;
        let files = EditSampleFiles {
            source: media_io::load_tns(&dir.join(&rec.source))?,
            target: media_io::load_tns(&dir.join(&rec.target))?,
            mask: load_mask(&dir.join(&rec.mask))?,
            reference: match &rec.reference {
                Some(r) => Some(media_io::load_tns(&dir.join(r))?),
                None => None,
            },
        };
        out.push((rec, files));
    }
    Ok(out)
}

/// Media loaded back from a manifest entry.
#[derive(Debug, Clone)]
pub struct EditSampleFiles {
    pub source: Media,
    pub target: Media,
    pub mask: Vec<bool>,
    pub reference: Option<Media>,
}

/// Check VIE proportions: exact per-category counts and total.
pub fn validate_vie_manifest(records: &[ManifestRecord]) -> Result<()> {
    if records.len() != VIE_TOTAL {
        return Err(Error::Contract(format!(
            "expected {VIE_TOTAL} samples, manifest has {}",
            records.len()
        )));
    }
    for (task, expected) in VIE_COUNTS {
        let got = records.iter().filter(|r| r.task == task.name()).count();
        if got != expected {
            return Err(Error::Contract(format!(
                "task {}: expected {expected} samples, got {got}",
                task.name()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vie_benchmark_matches_table_counts() {
        let samples = emit_benchmark(7, MediaKind::Video, true, 0).unwrap();
        assert_eq!(samples.len(), VIE_TOTAL);
        for (task, expected) in VIE_COUNTS {
            let got = samples.iter().filter(|s| s.task == task).count();
            assert_eq!(got, expected, "task {}", task.name());
        }
    }

    #[test]
    fn non_vie_benchmark_is_uniform() {
        let samples = emit_benchmark(7, MediaKind::Image, false, 18).unwrap();
        assert_eq!(samples.len(), 18);
        // Tasks cycle, so each of the 9 appears exactly twice.
        for task in TaskKind::ALL {
            assert_eq!(samples.iter().filter(|s| s.task == task).count(), 2);
        }
    }

    #[test]
    fn benchmark_and_training_ids_are_disjoint() {
        let bench = emit_benchmark(7, MediaKind::Image, false, 10).unwrap();
        let train =
            generate_dataset(&DatasetConfig::new(10, MediaKind::Image, "train"), 7).unwrap();
        for b in &bench {
            assert!(train.iter().all(|t| t.id != b.id));
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = emit_benchmark(3, MediaKind::Video, false, 4).unwrap();
        let path = write_manifest(&samples, dir.path()).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.len(), 4);
        for (s, (rec, files)) in samples.iter().zip(loaded.iter()) {
            assert_eq!(rec.id, s.id);
            assert_eq!(rec.instruction, s.instruction);
            assert!(files.source.bit_eq(&s.source));
            assert!(files.target.bit_eq(&s.target));
            assert_eq!(files.mask, s.mask);
        }
    }

    #[test]
    fn manifest_seed_regenerates_exact_ground_truth() {
        let mut cfg = DatasetConfig::new(8, MediaKind::Video, "regen");
        cfg.mid_entry_frac = 0.5;
        cfg.cluttered_frac = 0.25;
        let samples = generate_dataset(&cfg, 99).unwrap();
        for s in &samples {
            let back = crate::synthworld::generate_sample_from_seed(
                s.task,
                s.kind(),
                s.source.height,
                s.source.width,
                s.source.frames,
                s.seed,
                s.id.clone(),
            )
            .unwrap();
            assert!(back.source.bit_eq(&s.source), "{}", s.id);
            assert!(back.target.bit_eq(&s.target), "{}", s.id);
            assert_eq!(back.mask, s.mask, "{}", s.id);
            assert_eq!(back.instruction, s.instruction, "{}", s.id);
        }
    }

    #[test]
    fn dataset_generation_is_pure() {
        let cfg = DatasetConfig::new(6, MediaKind::Video, "train");
        let a = generate_dataset(&cfg, 42).unwrap();
        let b = generate_dataset(&cfg, 42).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!(x.source.bit_eq(&y.source));
            assert_eq!(x.instruction, y.instruction);
        }
    }
}
