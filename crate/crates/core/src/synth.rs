//! Seeded synthetic videos with known ground truth.
//!
//! Objects are rectangles or ellipses moving on straight lines (reflecting
//! at the frame border). Class means are orthonormal; every object gets its
//! own appearance direction `normalize(class_mean + instance_spread * r)`
//! with `r` orthogonal to all class means, and each detection embedding is
//! that direction plus isotropic Gaussian noise of std `sigma`, re-normalized.
//!
//! Planted corruption, all recorded in the sidecar:
//! - `mislabeled`: a real object's mask with an embedding drawn around a
//!   fresh appearance direction of a different class, so label assignment
//!   picks the wrong class with a plausible score.
//! - `spurious`: a small blob with a uniform-sphere embedding.
//! - `occluded`: a detection with an empty mask while the object is hidden
//!   (only when `occluded_detections` is set).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_json, write_jsonl};
use crate::maskops::{rle_encode, DenseMask};
use crate::model::{
    normalize_f64, BBox, ClassEmbeddingTable, DetectionRecord, Embedding, GroundTruthRecord, Manifest, RleMask,
    VideoInfo, SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub num_frames: u32,
    pub width: u32,
    pub height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub num_classes: usize,
    pub embedding_dim: usize,
    /// Per-dimension std of the embedding noise.
    pub sigma: f64,
    pub instance_spread: f64,
    /// Spread of the wrong-class directions given to mislabeled detections.
    /// Larger than `instance_spread` puts their class scores closer to the
    /// score threshold.
    pub mislabel_spread: f64,
    /// Probability that a real detection carries a wrong-class embedding.
    pub label_noise: f64,
    /// Expected spurious detections per visible object.
    pub fp_rate: f64,
    /// Probability that an object is hidden for a stretch mid-video.
    pub occlusion_prob: f64,
    pub min_occlusion: u32,
    pub max_occlusion: u32,
    /// Emit empty-mask detections while an object is hidden.
    pub occluded_detections: bool,
    pub min_size: u32,
    pub max_size: u32,
    pub max_speed: f64,
    pub objectness_range: [f32; 2],
    pub spurious_objectness_range: [f32; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_videos: 4,
            num_frames: 20,
            width: 64,
            height: 48,
            min_objects: 2,
            max_objects: 3,
            num_classes: 4,
            embedding_dim: 32,
            sigma: 0.05,
            instance_spread: 0.75,
            mislabel_spread: 0.9,
            label_noise: 0.0,
            fp_rate: 0.0,
            occlusion_prob: 0.0,
            min_occlusion: 3,
            max_occlusion: 6,
            occluded_detections: true,
            min_size: 8,
            max_size: 16,
            max_speed: 2.0,
            objectness_range: [0.75, 1.0],
            spurious_objectness_range: [0.0, 1.0],
        }
    }
}

impl SynthConfig {
    /// Every label correct, no spurious detections, no occlusion, no noise.
    pub fn noiseless() -> Self {
        SynthConfig { sigma: 0.0, ..SynthConfig::default() }
    }

    /// Pseudo-label filtering corpus: 20% mislabeled, 20% spurious.
    pub fn noisy_labels() -> Self {
        SynthConfig {
            num_videos: 10,
            num_frames: 20,
            label_noise: 0.2,
            fp_rate: 0.2,
            sigma: 0.05,
            ..SynthConfig::default()
        }
    }

    /// Tracking corpus: objects vanish for a few frames and come back.
    pub fn occlusion() -> Self {
        SynthConfig {
            num_videos: 8,
            num_frames: 30,
            max_objects: 4,
            sigma: 0.1,
            occlusion_prob: 0.6,
            occluded_detections: false,
            ..SynthConfig::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_frames == 0 || self.width == 0 || self.height == 0 {
            return fail("frame count and frame size must be positive".into());
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return fail(format!("object size range [{}, {}] is empty", self.min_size, self.max_size));
        }
        if self.max_size > self.width.min(self.height) {
            return fail(format!(
                "objects up to {} px do not fit a {}x{} frame",
                self.max_size, self.width, self.height
            ));
        }
        if self.min_objects > self.max_objects {
            return fail("min_objects > max_objects".into());
        }
        if self.num_classes == 0 {
            return fail("need at least one class".into());
        }
        if self.num_classes >= self.embedding_dim {
            return fail(format!(
                "embedding_dim {} must exceed num_classes {}",
                self.embedding_dim, self.num_classes
            ));
        }
        for (name, p) in [
            ("label_noise", self.label_noise),
            ("fp_rate", self.fp_rate),
            ("occlusion_prob", self.occlusion_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1]"));
            }
        }
        if [self.sigma, self.instance_spread, self.mislabel_spread, self.max_speed]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return fail("sigma, spreads and max_speed must be non-negative".into());
        }
        if self.min_occlusion > self.max_occlusion {
            return fail("min_occlusion > max_occlusion".into());
        }
        for r in [self.objectness_range, self.spurious_objectness_range] {
            if !(0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0) {
                return fail(format!("objectness range {r:?} must be ordered within [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Clean,
    Mislabeled,
    Spurious,
    Occluded,
}

/// Bookkeeping for one emitted detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub video_id: String,
    pub frame_idx: u32,
    /// Position of the detection among its frame's detections.
    pub ordinal: usize,
    pub kind: CorruptionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_category: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_category: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub manifest: Manifest,
    pub detections: Vec<DetectionRecord>,
    pub ground_truth: Vec<GroundTruthRecord>,
    pub table: ClassEmbeddingTable,
    pub corruption: Vec<CorruptionRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const CLASSES_FILE: &str = "classes.json";
pub const CORRUPTION_FILE: &str = "corruption.jsonl";

impl SynthDataset {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(dir.join(MANIFEST_FILE), &self.manifest)?;
        write_jsonl(dir.join(DETECTIONS_FILE), &self.detections)?;
        write_jsonl(dir.join(GROUND_TRUTH_FILE), &self.ground_truth)?;
        write_json(dir.join(CLASSES_FILE), &self.table)?;
        write_jsonl(dir.join(CORRUPTION_FILE), &self.corruption)
    }
}

fn gaussian(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Orthonormal class means plus a projector onto their complement.
struct AppearanceSpace {
    class_means: Vec<Vec<f64>>,
}

impl AppearanceSpace {
    fn new(rng: &mut impl Rng, num_classes: usize, dim: usize) -> Self {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
        while basis.len() < num_classes {
            let v = orthogonalize(gaussian(rng, dim), &basis);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                basis.push(v.iter().map(|x| x / n).collect());
            }
        }
        AppearanceSpace { class_means: basis }
    }

    /// Unit direction orthogonal to every class mean.
    fn off_class_direction(&self, rng: &mut impl Rng) -> Vec<f64> {
        let dim = self.class_means[0].len();
        loop {
            let v = orthogonalize(gaussian(rng, dim), &self.class_means);
            if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
                return normalize_f64(&v);
            }
        }
    }

    fn appearance(&self, rng: &mut impl Rng, class: usize, spread: f64) -> Vec<f64> {
        let r = self.off_class_direction(rng);
        normalize_f64(
            &self.class_means[class]
                .iter()
                .zip(&r)
                .map(|(m, r)| m + spread * r)
                .collect::<Vec<_>>(),
        )
    }
}

fn orthogonalize(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Vec<f64> {
    for b in basis {
        let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        for (x, y) in v.iter_mut().zip(b) {
            *x -= p * y;
        }
    }
    v
}

fn noisy(rng: &mut impl Rng, mean: &[f64], sigma: f64) -> Embedding {
    let v: Vec<f64> = mean
        .iter()
        .map(|m| m + sigma * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect();
    Embedding::from_f64(&normalize_f64(&v))
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
}

struct Object {
    class: usize,
    shape: Shape,
    w: u32,
    h: u32,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    appearance: Vec<f64>,
    hidden: Option<(u32, u32)>,
}

impl Object {
    fn advance(&mut self, width: u32, height: u32) {
        let (max_x, max_y) = (f64::from(width - self.w), f64::from(height - self.h));
        self.x += self.vx;
        self.y += self.vy;
        if self.x < 0.0 || self.x > max_x {
            self.vx = -self.vx;
            self.x = self.x.clamp(0.0, max_x);
        }
        if self.y < 0.0 || self.y > max_y {
            self.vy = -self.vy;
            self.y = self.y.clamp(0.0, max_y);
        }
    }

    fn is_hidden(&self, frame: u32) -> bool {
        self.hidden.is_some_and(|(s, e)| frame >= s && frame < e)
    }

    fn geometry(&self, width: u32, height: u32) -> (BBox, RleMask) {
        let x0 = self.x.round().clamp(0.0, f64::from(width - self.w)) as u32;
        let y0 = self.y.round().clamp(0.0, f64::from(height - self.h)) as u32;
        let (w, h) = (self.w, self.h);
        let (cx, cy) = (f64::from(x0) + f64::from(w) / 2.0, f64::from(y0) + f64::from(h) / 2.0);
        let (rx, ry) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
        let shape = self.shape;
        let dense = DenseMask::from_fn(height, width, |x, y| {
            let inside_box = x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
            match shape {
                Shape::Rect => inside_box,
                Shape::Ellipse => {
                    let dx = (f64::from(x) + 0.5 - cx) / rx;
                    let dy = (f64::from(y) + 0.5 - cy) / ry;
                    inside_box && dx * dx + dy * dy <= 1.0
                }
            }
        });
        let bbox = BBox::new(x0 as f32, y0 as f32, (x0 + w) as f32, (y0 + h) as f32);
        (bbox, rle_encode(&dense))
    }
}

struct VideoOutput {
    detections: Vec<DetectionRecord>,
    ground_truth: Vec<GroundTruthRecord>,
    corruption: Vec<CorruptionRecord>,
}

pub fn video_id(index: usize) -> String {
    format!("video_{index:03}")
}

/// Generates a dataset. Detections are unlabeled, as an exporter would emit
/// them; ground truth and the corruption sidecar carry the true classes.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = AppearanceSpace::new(&mut rng, cfg.num_classes, cfg.embedding_dim);

    let run = |v: usize| generate_video(cfg, &space, seed, v);
    #[cfg(feature = "parallel")]
    let videos: Vec<VideoOutput> = {
        use rayon::prelude::*;
        (0..cfg.num_videos).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let videos: Vec<VideoOutput> = (0..cfg.num_videos).map(run).collect();

    let class_names: Vec<String> = (0..cfg.num_classes).map(|c| format!("class_{c}")).collect();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION.to_string(),
        videos: (0..cfg.num_videos)
            .map(|v| VideoInfo {
                video_id: video_id(v),
                width: cfg.width,
                height: cfg.height,
                num_frames: cfg.num_frames,
            })
            .collect(),
        embedding_dim: cfg.embedding_dim,
        class_names: class_names.clone(),
    };
    let table = ClassEmbeddingTable {
        names: class_names,
        embeddings: space.class_means.iter().map(|m| Embedding::from_f64(m)).collect(),
    };
    let mut out = SynthDataset {
        manifest,
        detections: Vec::new(),
        ground_truth: Vec::new(),
        table,
        corruption: Vec::new(),
    };
    for v in videos {
        out.detections.extend(v.detections);
        out.ground_truth.extend(v.ground_truth);
        out.corruption.extend(v.corruption);
    }
    Ok(out)
}

fn uniform_f32(rng: &mut impl Rng, range: [f32; 2]) -> f32 {
    if range[0] >= range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

fn generate_video(cfg: &SynthConfig, space: &AppearanceSpace, seed: u64, index: usize) -> VideoOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let vid = video_id(index);
    let (width, height) = (cfg.width, cfg.height);

    let num_objects = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<Object> = (0..num_objects)
        .map(|_| {
            let class = rng.random_range(0..cfg.num_classes);
            let w = rng.random_range(cfg.min_size..=cfg.max_size);
            let h = rng.random_range(cfg.min_size..=cfg.max_size);
            let shape = if rng.random_bool(0.5) { Shape::Rect } else { Shape::Ellipse };
            let speed = cfg.max_speed;
            let hidden = (rng.random_bool(cfg.occlusion_prob)).then(|| {
                let len = rng.random_range(cfg.min_occlusion..=cfg.max_occlusion);
                // strictly inside the video: visible before and after
                (cfg.num_frames > len + 1).then(|| {
                    let start = rng.random_range(1..cfg.num_frames - len);
                    (start, start + len)
                })
            });
            Object {
                class,
                shape,
                w,
                h,
                x: rng.random_range(0.0..=f64::from(width - w)),
                y: rng.random_range(0.0..=f64::from(height - h)),
                vx: if speed > 0.0 { rng.random_range(-speed..=speed) } else { 0.0 },
                vy: if speed > 0.0 { rng.random_range(-speed..=speed) } else { 0.0 },
                appearance: space.appearance(&mut rng, class, cfg.instance_spread),
                hidden: hidden.flatten(),
            }
        })
        .collect();

    let spurious_side = (cfg.min_size / 3).max(1);
    let mut out = VideoOutput {
        detections: Vec::new(),
        ground_truth: Vec::new(),
        corruption: Vec::new(),
    };
    for frame in 0..cfg.num_frames {
        let mut frame_dets: Vec<(DetectionRecord, CorruptionRecord)> = Vec::new();
        let mut record = |det: DetectionRecord, kind, track_id, true_category, planted_category| {
            let c = CorruptionRecord {
                video_id: vid.clone(),
                frame_idx: frame,
                ordinal: 0,
                kind,
                track_id,
                true_category,
                planted_category,
            };
            frame_dets.push((det, c));
        };
        let base = |bbox, mask, objectness, embedding| DetectionRecord {
            video_id: vid.clone(),
            frame_idx: frame,
            bbox,
            objectness,
            mask,
            embedding,
            label: None,
            class_scores: None,
        };

        for (track, obj) in objects.iter().enumerate() {
            let track_id = track as u64;
            let (bbox, mask) = obj.geometry(width, height);
            let objectness = uniform_f32(&mut rng, cfg.objectness_range);
            if obj.is_hidden(frame) {
                if cfg.occluded_detections {
                    let e = noisy(&mut rng, &obj.appearance, cfg.sigma);
                    let empty = RleMask::empty(height, width);
                    record(base(bbox, empty, objectness, e), CorruptionKind::Occluded, Some(track_id), Some(obj.class), None);
                }
                continue;
            }
            out.ground_truth.push(GroundTruthRecord {
                video_id: vid.clone(),
                frame_idx: frame,
                track_id,
                category: obj.class,
                mask: mask.clone(),
            });
            let mislabel = cfg.num_classes > 1 && rng.random_bool(cfg.label_noise);
            if mislabel {
                let wrong = (obj.class + rng.random_range(1..cfg.num_classes)) % cfg.num_classes;
                let direction = space.appearance(&mut rng, wrong, cfg.mislabel_spread);
                let e = noisy(&mut rng, &direction, cfg.sigma);
                record(base(bbox, mask, objectness, e), CorruptionKind::Mislabeled, Some(track_id), Some(obj.class), Some(wrong));
            } else {
                let e = noisy(&mut rng, &obj.appearance, cfg.sigma);
                record(base(bbox, mask, objectness, e), CorruptionKind::Clean, Some(track_id), Some(obj.class), Some(obj.class));
            }
            if rng.random_bool(cfg.fp_rate) {
                let s = spurious_side;
                let x0 = rng.random_range(0..=width - s);
                let y0 = rng.random_range(0..=height - s);
                let dense = DenseMask::from_fn(height, width, |x, y| x >= x0 && x < x0 + s && y >= y0 && y < y0 + s);
                let bbox = BBox::new(x0 as f32, y0 as f32, (x0 + s) as f32, (y0 + s) as f32);
                let e = Embedding::from_f64(&normalize_f64(&gaussian(&mut rng, cfg.embedding_dim)));
                let o = uniform_f32(&mut rng, cfg.spurious_objectness_range);
                record(base(bbox, rle_encode(&dense), o, e), CorruptionKind::Spurious, None, None, None);
            }
        }
        frame_dets.shuffle(&mut rng);
        for (ordinal, (det, mut c)) in frame_dets.into_iter().enumerate() {
            c.ordinal = ordinal;
            out.detections.push(det);
            out.corruption.push(c);
        }
        for obj in &mut objects {
            obj.advance(width, height);
        }
    }
    out
}
