//! Domain types and the interchange schema.
//!
//! Field names and JSON shapes here are the wire format: detections,
//! ground truth and tracklets are JSON Lines of these records, the manifest
//! and class table are single JSON documents.

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: &str = "1";

/// Tolerance on the L2 norm of a unit embedding.
pub const UNIT_NORM_TOL: f64 = 1e-4;

/// Fixed-length feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Self {
        Embedding(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Exactly all-zeros.
    pub fn is_null(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_unit(&self) -> bool {
        self.is_finite() && (self.norm() - 1.0).abs() <= UNIT_NORM_TOL
    }

    /// Dot product accumulated in f64. Panics on length mismatch.
    pub fn dot(&self, other: &Embedding) -> f64 {
        assert_eq!(self.dim(), other.dim(), "embedding dimension mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }

    /// Cosine similarity; `None` when either side has zero norm.
    pub fn cosine(&self, other: &Embedding) -> Option<f64> {
        let na = self.norm();
        let nb = other.norm();
        if na == 0.0 || nb == 0.0 {
            return None;
        }
        Some((self.dot(other) / (na * nb)).clamp(-1.0, 1.0))
    }

    /// Unit-normalized copy; a null embedding stays null.
    pub fn normalized(&self) -> Embedding {
        Embedding::from_f64(&normalize_f64(&self.to_f64()))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn from_f64(values: &[f64]) -> Embedding {
        Embedding(values.iter().map(|&v| v as f32).collect())
    }
}

impl From<Vec<f32>> for Embedding {
    fn from(values: Vec<f32>) -> Self {
        Embedding(values)
    }
}

pub(crate) fn normalize_f64(values: &[f64]) -> Vec<f64> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return values.to_vec();
    }
    values.iter().map(|v| v / norm).collect()
}

/// Column-major run-length encoded binary mask. Runs alternate
/// background/foreground, starting with background.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "RleRepr", into = "RleRepr")]
pub struct RleMask {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RleRepr {
    size: [u32; 2],
    counts: Vec<u32>,
}

impl From<RleRepr> for RleMask {
    fn from(r: RleRepr) -> Self {
        RleMask {
            height: r.size[0],
            width: r.size[1],
            counts: r.counts,
        }
    }
}

impl From<RleMask> for RleRepr {
    fn from(m: RleMask) -> Self {
        RleRepr {
            size: [m.height, m.width],
            counts: m.counts,
        }
    }
}

impl RleMask {
    /// All-background mask.
    pub fn empty(height: u32, width: u32) -> Self {
        RleMask {
            height,
            width,
            counts: vec![height * width],
        }
    }

    pub fn num_pixels(&self) -> u64 {
        u64::from(self.height) * u64::from(self.width)
    }

    pub fn counts_total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| u64::from(c))
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn check(&self) -> Result<(), crate::Error> {
        let total = self.counts_total();
        if total != self.num_pixels() {
            return Err(crate::Error::InvalidMask(format!(
                "mask run-length total {} != {}x{}",
                total, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Axis-aligned box in pixels, serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f32; 4]", into = "[f32; 4]")]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        f64::from(self.x2) - f64::from(self.x1)
    }

    pub fn height(&self) -> f64 {
        f64::from(self.y2) - f64::from(self.y1)
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_finite(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl From<[f32; 4]> for BBox {
    fn from(v: [f32; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f32; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// One class-agnostic instance in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame_idx: u32,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub objectness: f32,
    pub mask: RleMask,
    pub embedding: Embedding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_scores: Option<Vec<f32>>,
}

impl DetectionRecord {
    /// Score of the assigned class, when labeled.
    pub fn class_score(&self) -> Option<f32> {
        let label = self.label?;
        self.class_scores.as_ref()?.get(label).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub video_id: String,
    pub frame_idx: u32,
    pub track_id: u64,
    pub category: usize,
    pub mask: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEmbeddingTable {
    pub names: Vec<String>,
    pub embeddings: Vec<Embedding>,
}

impl ClassEmbeddingTable {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Dimension of the first embedding; 0 for an empty table.
    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Embedding::dim)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoInfo {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub num_frames: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: String,
    pub videos: Vec<VideoInfo>,
    pub embedding_dim: usize,
    pub class_names: Vec<String>,
}

impl Manifest {
    pub fn video(&self, video_id: &str) -> Option<&VideoInfo> {
        self.videos.iter().find(|v| v.video_id == video_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackletEntry {
    pub frame_idx: u32,
    pub mask: RleMask,
    pub class_scores: Vec<f32>,
}

/// One slot's spatio-temporal trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tracklet {
    pub video_id: String,
    pub slot: usize,
    pub entries: Vec<TrackletEntry>,
    pub final_label: usize,
    pub confidence: f64,
}

impl Tracklet {
    /// Builds a tracklet and derives `final_label` / `confidence` from the
    /// time-averaged class scores.
    pub fn from_entries(video_id: String, slot: usize, entries: Vec<TrackletEntry>) -> Self {
        let mean = mean_scores(entries.iter().map(|e| e.class_scores.as_slice()));
        let (final_label, confidence) = argmax(&mean).unwrap_or((0, 0.0));
        Tracklet {
            video_id,
            slot,
            entries,
            final_label,
            confidence,
        }
    }

    pub fn mask_at(&self, frame_idx: u32) -> Option<&RleMask> {
        self.entries
            .binary_search_by_key(&frame_idx, |e| e.frame_idx)
            .ok()
            .map(|i| &self.entries[i].mask)
    }
}

/// Element-wise mean in f64; empty when there are no rows.
pub fn mean_scores<'a>(rows: impl Iterator<Item = &'a [f32]>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for row in rows {
        if sum.len() < row.len() {
            sum.resize(row.len(), 0.0);
        }
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += f64::from(v);
        }
        n += 1;
    }
    if n > 0 {
        for s in &mut sum {
            *s /= n as f64;
        }
    }
    sum
}

/// Index and value of the maximum; ties go to the lowest index.
pub fn argmax<T: Copy + PartialOrd>(values: &[T]) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best
}
