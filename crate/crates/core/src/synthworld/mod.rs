//! Procedural paired-editing data world.
//!
//! Scenes of colored shapes on colored backgrounds, rendered as images or
//! constant-velocity videos (reflecting at borders). Every sample is a pure
//! function of its seed, so parallel and serial generation are identical and
//! evaluation can regenerate exact ground truth from a manifest.

mod bench;
mod pipeline;
mod tasks;

pub use bench::{
    emit_benchmark, generate_dataset, load_manifest, validate_vie_manifest, write_manifest,
    DatasetConfig, ManifestRecord, VIE_COUNTS, VIE_TOTAL,
};
pub use pipeline::{
    make_reel, run_pipeline, standard_pipeline, Backend, ExternalStageRecord, PipelineStage,
    StageKind,
};
pub use tasks::{
    apply_global, feasible, generate_sample, generate_sample_from_seed, make_pair,
    pack_sample_seed, EditOp, EditSample, TaskKind,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Media, MediaKind};

/// The 8-color palette. Every entry is chromatic (max-min channel >= 0.8),
/// so grayscale and tone edits always change pixels.
pub const PALETTE: [([f32; 3], &str); 8] = [
    ([1.0, 0.0, 0.0], "red"),
    ([0.0, 0.8, 0.0], "green"),
    ([0.0, 0.0, 1.0], "blue"),
    ([1.0, 1.0, 0.0], "yellow"),
    ([0.0, 0.9, 0.9], "cyan"),
    ([1.0, 0.0, 1.0], "magenta"),
    ([1.0, 0.5, 0.0], "orange"),
    ([0.55, 0.0, 0.9], "purple"),
];

pub fn palette_rgb(id: usize) -> [f32; 3] {
    PALETTE[id].0
}

pub fn palette_name(id: usize) -> &'static str {
    PALETTE[id].1
}

/// Nearest palette id to an RGB value (squared distance).
pub fn nearest_palette(rgb: [f32; 3]) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (i, (c, _)) in PALETTE.iter().enumerate() {
        let d = (c[0] - rgb[0]).powi(2) + (c[1] - rgb[1]).powi(2) + (c[2] - rgb[2]).powi(2);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }
}

/// Triangles point up by default; reference renders rotate 90 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Up,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: usize,
    /// Center at the first visible frame.
    pub center: (f32, f32),
    /// Edge length / diameter in pixels.
    pub size: f32,
    pub velocity: (f32, f32),
    /// First frame in which the object is visible (mid-video entry > 0).
    pub entry_frame: usize,
    pub orientation: Orientation,
}

impl ObjectSpec {
    /// Center at frame f, reflecting at canvas borders so the object stays
    /// fully inside. Not visible before `entry_frame`.
    pub fn center_at(&self, frame: usize, h: usize, w: usize) -> Option<(f32, f32)> {
        if frame < self.entry_frame {
            return None;
        }
        let steps = (frame - self.entry_frame) as f32;
        let half = self.size / 2.0;
        let reflect = |start: f32, v: f32, lo: f32, hi: f32| -> f32 {
            if hi <= lo {
                return start;
            }
            let span = hi - lo;
            let mut x = (start - lo + v * steps) % (2.0 * span);
            if x < 0.0 {
                x += 2.0 * span;
            }
            if x > span {
                x = 2.0 * span - x;
            }
            lo + x
        };
        Some((
            reflect(self.center.0, self.velocity.0, half, w as f32 - half),
            reflect(self.center.1, self.velocity.1, half, h as f32 - half),
        ))
    }

    /// Signed coverage test for a point (canvas coordinates) at a frame.
    fn contains(&self, frame: usize, px: f32, py: f32, h: usize, w: usize) -> bool {
        let Some((cx, cy)) = self.center_at(frame, h, w) else {
            return false;
        };
        let (dx, dy) = (px - cx, py - cy);
        let half = self.size / 2.0;
        match self.shape {
            Shape::Square => dx.abs() <= half && dy.abs() <= half,
            Shape::Circle => dx * dx + dy * dy <= half * half,
            Shape::Triangle => {
                // Isoceles triangle inscribed in the size x size box.
                let (u, v) = match self.orientation {
                    Orientation::Up => (dx, dy),
                    Orientation::Right => (dy, -dx),
                };
                // Apex at v=-half, base at v=+half spanning [-half, half].
                if v < -half || v > half {
                    return false;
                }
                let rel = (v + half) / self.size; // 0 at apex, 1 at base
                u.abs() <= half * rel
            }
        }
    }

    /// Fraction of a pixel covered, via a 4x4 subsample grid.
    pub fn coverage(&self, frame: usize, x: usize, y: usize, h: usize, w: usize) -> f32 {
        let mut inside = 0u32;
        for sy in 0..4 {
            for sx in 0..4 {
                let px = x as f32 + (sx as f32 + 0.5) / 4.0;
                let py = y as f32 + (sy as f32 + 0.5) / 4.0;
                if self.contains(frame, px, py, h, w) {
                    inside += 1;
                }
            }
        }
        inside as f32 / 16.0
    }

    /// Pixels the object can touch at a frame (coverage > 0).
    pub fn footprint(&self, frame: usize, h: usize, w: usize, out: &mut [bool]) {
        let Some((cx, cy)) = self.center_at(frame, h, w) else {
            return;
        };
        let half = self.size / 2.0 + 1.0;
        let y0 = (cy - half).floor().max(0.0) as usize;
        let y1 = ((cy + half).ceil() as usize).min(h);
        let x0 = (cx - half).floor().max(0.0) as usize;
        let x1 = ((cx + half).ceil() as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                if !out[y * w + x] && self.coverage(frame, x, y, h, w) > 0.0 {
                    out[y * w + x] = true;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub kind: MediaKind,
    pub background: usize,
    pub objects: Vec<ObjectSpec>,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
}

impl Scene {
    pub fn without_object(&self, idx: usize) -> Scene {
        let mut s = self.clone();
        s.objects.remove(idx);
        s
    }

    pub fn has_combo(&self, shape: Shape, color: usize) -> bool {
        self.objects
            .iter()
            .any(|o| o.shape == shape && o.color == color)
    }
}

/// Scene flavor requested from the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub kind: MediaKind,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Force 4 objects with shared-shape distractors (the hard subset).
    pub cluttered: bool,
    /// Make one object enter mid-video (videos only).
    pub mid_entry: bool,
}

impl SceneSpec {
    pub fn image(h: usize, w: usize) -> Self {
        SceneSpec {
            kind: MediaKind::Image,
            height: h,
            width: w,
            frames: 1,
            min_objects: 1,
            max_objects: 4,
            cluttered: false,
            mid_entry: false,
        }
    }

    pub fn video(h: usize, w: usize, frames: usize) -> Self {
        SceneSpec {
            kind: MediaKind::Video,
            height: h,
            width: w,
            frames,
            min_objects: 1,
            max_objects: 4,
            cluttered: false,
            mid_entry: false,
        }
    }
}

/// Separation test: axis-aligned bounding boxes (with a 2px margin) must not
/// intersect in any frame where both objects are visible.
fn overlaps(a: &ObjectSpec, b: &ObjectSpec, frames: usize, h: usize, w: usize) -> bool {
    for f in 0..frames {
        let (Some(ca), Some(cb)) = (a.center_at(f, h, w), b.center_at(f, h, w)) else {
            continue;
        };
        let lim = (a.size + b.size) / 2.0 + 2.0;
        if (ca.0 - cb.0).abs() < lim && (ca.1 - cb.1).abs() < lim {
            return true;
        }
    }
    false
}

/// Deterministic scene from a seeded rng. Objects never overlap in any
/// frame, never share (shape, color), and always contrast with the
/// background.
pub fn gen_scene(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> Scene {
    let background = rng.gen_range(0..PALETTE.len());
    let n_objects = if spec.cluttered {
        4
    } else {
        rng.gen_range(spec.min_objects..=spec.max_objects)
    };
    let mut objects: Vec<ObjectSpec> = Vec::new();
    let mut combos: Vec<(Shape, usize)> = Vec::new();

    // Cluttered scenes share a shape between at least two objects so color
    // is the only disambiguator.
    let forced_shape = if spec.cluttered {
        Some(*Shape::ALL.as_slice().choose(rng).expect("shapes"))
    } else {
        None
    };

    for i in 0..n_objects {
        let mut placed = false;
        for _try in 0..200 {
            let shape = match forced_shape {
                Some(s) if i < 2 => s,
                _ => *Shape::ALL.as_slice().choose(rng).expect("shapes"),
            };
            let mut color = rng.gen_range(0..PALETTE.len());
            if color == background {
                color = (color + 1) % PALETTE.len();
            }
            if combos.contains(&(shape, color)) {
                continue;
            }
            let size = rng.gen_range(7.0..=11.0f32);
            let half = size / 2.0 + 1.0;
            if spec.width as f32 <= 2.0 * half || spec.height as f32 <= 2.0 * half {
                continue;
            }
            let cx = rng.gen_range(half..spec.width as f32 - half);
            let cy = rng.gen_range(half..spec.height as f32 - half);
            let velocity = if spec.kind == MediaKind::Video {
                (rng.gen_range(-2.0..=2.0f32), rng.gen_range(-2.0..=2.0f32))
            } else {
                (0.0, 0.0)
            };
            let entry_frame = if spec.mid_entry && i == 0 && spec.frames > 2 {
                rng.gen_range(2..spec.frames)
            } else {
                0
            };
            let candidate = ObjectSpec {
                shape,
                color,
                center: (cx, cy),
                size,
                velocity,
                entry_frame,
                orientation: Orientation::Up,
            };
            if objects
                .iter()
                .any(|o| overlaps(o, &candidate, spec.frames, spec.height, spec.width))
            {
                continue;
            }
            combos.push((shape, color));
            objects.push(candidate);
            placed = true;
            break;
        }
        if !placed {
            // Canvas too crowded; a smaller scene is still valid.
            break;
        }
    }

    Scene {
        kind: spec.kind,
        background,
        objects,
        height: spec.height,
        width: spec.width,
        frames: spec.frames,
    }
}

/// Rasterize a scene. Hard edges by default; `anti_aliased` blends by
/// subsample coverage (the stage-3 quality renderer).
pub fn render(scene: &Scene, anti_aliased: bool) -> Media {
    let (h, w, frames) = (scene.height, scene.width, scene.frames);
    let bg = palette_rgb(scene.background);
    let mut data = vec![0.0f32; frames * h * w * 3];
    for f in 0..frames {
        for y in 0..h {
            for x in 0..w {
                let mut rgb = bg;
                // Later objects draw on top (overlap never happens for
                // generated scenes, but the rule keeps rendering total).
                for obj in &scene.objects {
                    if anti_aliased {
                        let cov = obj.coverage(f, x, y, h, w);
                        if cov > 0.0 {
                            let oc = palette_rgb(obj.color);
                            for c in 0..3 {
                                rgb[c] = rgb[c] + cov * (oc[c] - rgb[c]);
                            }
                        }
                    } else if obj.contains(f, x as f32 + 0.5, y as f32 + 0.5, h, w) {
                        rgb = palette_rgb(obj.color);
                    }
                }
                let base = ((f * h + y) * w + x) * 3;
                data[base..base + 3].copy_from_slice(&rgb);
            }
        }
    }
    Media::new(scene.kind, frames, h, w, data).expect("render shape")
}

/// Caption for generator pretraining: objects in order, then background.
pub fn caption(scene: &Scene) -> String {
    let mut s = String::new();
    if scene.objects.is_empty() {
        s.push_str("a ");
        s.push_str(palette_name(scene.background));
        s.push_str(" background");
        return s;
    }
    for (i, o) in scene.objects.iter().enumerate() {
        if i > 0 {
            s.push_str(" and ");
        }
        s.push_str("a ");
        s.push_str(palette_name(o.color));
        s.push(' ');
        s.push_str(o.shape.name());
    }
    s.push_str(" on a ");
    s.push_str(palette_name(scene.background));
    s.push_str(" background");
    s
}

/// Phrase for the 3x3 grid cell a point falls in.
pub fn position_phrase(cx: f32, cy: f32, h: usize, w: usize) -> &'static str {
    let col = ((cx / (w as f32 / 3.0)) as usize).min(2);
    let row = ((cy / (h as f32 / 3.0)) as usize).min(2);
    match (row, col) {
        (0, 0) => "top left",
        (0, 1) => "top",
        (0, 2) => "top right",
        (1, 0) => "left",
        (1, 1) => "middle",
        (1, 2) => "right",
        (2, 0) => "bottom left",
        (2, 1) => "bottom",
        _ => "bottom right",
    }
}

/// Grid-cell center for a position phrase (used to place added objects).
pub fn phrase_cell(phrase: &str) -> Option<(usize, usize)> {
    Some(match phrase {
        "top left" => (0, 0),
        "top" => (0, 1),
        "top right" => (0, 2),
        "left" => (1, 0),
        "middle" => (1, 1),
        "right" => (1, 2),
        "bottom left" => (2, 0),
        "bottom" => (2, 1),
        "bottom right" => (2, 2),
        _ => return None,
    })
}

#[cfg(test)]
mod scene_tests {
    use super::*;
    use crate::rng::derive_rng;

    #[test]
    fn same_seed_renders_identically() {
        let spec = SceneSpec::video(32, 32, 5);
        let s1 = gen_scene(&mut derive_rng(5, "scene"), &spec);
        let s2 = gen_scene(&mut derive_rng(5, "scene"), &spec);
        assert_eq!(s1, s2);
        assert!(render(&s1, false).bit_eq(&render(&s2, false)));
    }

    #[test]
    fn empty_scene_is_uniform_background() {
        let scene = Scene {
            kind: MediaKind::Image,
            background: 2,
            objects: vec![],
            height: 16,
            width: 16,
            frames: 1,
        };
        let m = render(&scene, false);
        let bg = palette_rgb(2);
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(m.pixel(0, y, x), bg);
            }
        }
    }

    #[test]
    fn constant_velocity_moves_centers_exactly() {
        let obj = ObjectSpec {
            shape: Shape::Square,
            color: 0,
            center: (10.0, 10.0),
            size: 6.0,
            velocity: (1.0, 0.0),
            entry_frame: 0,
            orientation: Orientation::Up,
        };
        let c0 = obj.center_at(0, 32, 32).unwrap();
        let c1 = obj.center_at(1, 32, 32).unwrap();
        let c2 = obj.center_at(2, 32, 32).unwrap();
        assert_eq!((c1.0 - c0.0, c1.1 - c0.1), (1.0, 0.0));
        assert_eq!((c2.0 - c0.0, c2.1 - c0.1), (2.0, 0.0));
    }

    #[test]
    fn reflection_keeps_object_inside() {
        let obj = ObjectSpec {
            shape: Shape::Circle,
            color: 1,
            center: (28.0, 16.0),
            size: 8.0,
            velocity: (3.0, 0.0),
            entry_frame: 0,
            orientation: Orientation::Up,
        };
        for f in 0..20 {
            let (cx, _) = obj.center_at(f, 32, 32).unwrap();
            assert!(cx >= 4.0 && cx <= 28.0, "frame {f}: cx {cx}");
        }
    }

    #[test]
    fn objects_never_share_shape_color_or_overlap() {
        for seed in 0..30u64 {
            let spec = SceneSpec::video(32, 32, 5);
            let scene = gen_scene(&mut derive_rng(seed, "scene"), &spec);
            for (i, a) in scene.objects.iter().enumerate() {
                assert_ne!(a.color, scene.background);
                for b in scene.objects.iter().skip(i + 1) {
                    assert!(!(a.shape == b.shape && a.color == b.color));
                    assert!(!overlaps(a, b, 5, 32, 32));
                }
            }
        }
    }

    #[test]
    fn mid_entry_object_is_invisible_early() {
        let mut spec = SceneSpec::video(32, 32, 5);
        spec.mid_entry = true;
        let scene = gen_scene(&mut derive_rng(3, "scene"), &spec);
        let entering = &scene.objects[0];
        assert!(entering.entry_frame >= 2);
        assert!(entering.center_at(0, 32, 32).is_none());
        assert!(entering
            .center_at(entering.entry_frame, 32, 32)
            .is_some());
    }

    #[test]
    fn caption_lists_objects_and_background() {
        let scene = Scene {
            kind: MediaKind::Image,
            background: 1,
            objects: vec![ObjectSpec {
                shape: Shape::Square,
                color: 0,
                center: (16.0, 16.0),
                size: 8.0,
                velocity: (0.0, 0.0),
                entry_frame: 0,
                orientation: Orientation::Up,
            }],
            height: 32,
            width: 32,
            frames: 1,
        };
        assert_eq!(caption(&scene), "a red square on a green background");
    }
}
