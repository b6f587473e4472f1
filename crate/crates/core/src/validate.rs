//! Dataset validation: every invariant violation, with a locator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::check_schema_version;
use crate::model::{argmax, ClassEmbeddingTable, DetectionRecord, GroundTruthRecord, Manifest, RleMask, VideoInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MaskRunLengthTotal,
    MaskDimensions,
    NonFiniteEmbedding,
    EmbeddingNotUnit,
    BoxDegenerate,
    BoxOutOfBounds,
    ObjectnessOutOfRange,
    LabelWithoutScores,
    LabelNotArgmax,
    ClassScoresLength,
    ClassScoreOutOfRange,
    UnknownVideo,
    FrameOutOfRange,
    DuplicateGroundTruth,
    CategoryOutOfRange,
    ClassNames,
}

impl ViolationKind {
    pub fn description(self) -> &'static str {
        match self {
            ViolationKind::MaskRunLengthTotal => "mask run-length total",
            ViolationKind::MaskDimensions => "mask dimensions",
            ViolationKind::NonFiniteEmbedding => "non-finite embedding",
            ViolationKind::EmbeddingNotUnit => "embedding not unit-norm",
            ViolationKind::BoxDegenerate => "degenerate box",
            ViolationKind::BoxOutOfBounds => "box out of image bounds",
            ViolationKind::ObjectnessOutOfRange => "objectness out of range",
            ViolationKind::LabelWithoutScores => "label without class scores",
            ViolationKind::LabelNotArgmax => "label is not the class-score argmax",
            ViolationKind::ClassScoresLength => "class scores length",
            ViolationKind::ClassScoreOutOfRange => "class score out of range",
            ViolationKind::UnknownVideo => "unknown video",
            ViolationKind::FrameOutOfRange => "frame index out of range",
            ViolationKind::DuplicateGroundTruth => "duplicate ground-truth key",
            ViolationKind::CategoryOutOfRange => "category out of range",
            ViolationKind::ClassNames => "class names",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.description())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// e.g. `detections:12` (1-based record number) or `class_table`.
    pub locator: String,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    fn push(&mut self, locator: String, kind: ViolationKind, message: String) {
        self.violations.push(Violation {
            locator,
            kind,
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{}: {}: {}", v.locator, v.kind, v.message)?;
        }
        Ok(())
    }
}

/// Checks every record against the schema invariants.
///
/// Hard errors (not violations): schema-version mismatch, and any embedding
/// whose dimension differs from the manifest's `embedding_dim`.
pub fn validate_dataset(
    manifest: &Manifest,
    dets: &[DetectionRecord],
    gt: Option<&[GroundTruthRecord]>,
    table: &ClassEmbeddingTable,
) -> Result<ValidationReport> {
    check_schema_version(manifest)?;
    let dim = manifest.embedding_dim;
    for e in &table.embeddings {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
    }
    for d in dets {
        if d.embedding.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: d.embedding.dim(),
            });
        }
    }

    let mut report = ValidationReport::default();
    check_table(manifest, table, &mut report);
    let videos: BTreeMap<&str, &VideoInfo> = manifest.videos.iter().map(|v| (v.video_id.as_str(), v)).collect();
    let num_classes = table.len();

    for (i, d) in dets.iter().enumerate() {
        let loc = format!("detections:{}", i + 1);
        let video = videos.get(d.video_id.as_str()).copied();
        check_video_frame(&loc, &d.video_id, d.frame_idx, video, &mut report);
        if let Some(v) = video {
            check_mask(&loc, &d.mask, v, &mut report);
            check_box(&loc, d, v, &mut report);
        } else {
            check_mask_total(&loc, &d.mask, &mut report);
        }
        if !d.objectness.is_finite() || !(0.0..=1.0).contains(&d.objectness) {
            report.push(loc.clone(), ViolationKind::ObjectnessOutOfRange, format!("objectness {}", d.objectness));
        }
        if !d.embedding.is_finite() {
            report.push(loc.clone(), ViolationKind::NonFiniteEmbedding, "embedding has NaN or infinite entries".into());
        } else if !d.embedding.is_unit() {
            report.push(loc.clone(), ViolationKind::EmbeddingNotUnit, format!("norm {:.6}", d.embedding.norm()));
        }
        check_scores(&loc, d, num_classes, &mut report);
    }

    if let Some(gt) = gt {
        let mut keys = BTreeSet::new();
        for (i, g) in gt.iter().enumerate() {
            let loc = format!("ground_truth:{}", i + 1);
            let video = videos.get(g.video_id.as_str()).copied();
            check_video_frame(&loc, &g.video_id, g.frame_idx, video, &mut report);
            match video {
                Some(v) => check_mask(&loc, &g.mask, v, &mut report),
                None => check_mask_total(&loc, &g.mask, &mut report),
            }
            if g.category >= num_classes {
                report.push(loc.clone(), ViolationKind::CategoryOutOfRange, format!("category {} >= {}", g.category, num_classes));
            }
            if !keys.insert((g.video_id.as_str(), g.frame_idx, g.track_id)) {
                report.push(loc, ViolationKind::DuplicateGroundTruth, format!("({}, {}, {}) repeated", g.video_id, g.frame_idx, g.track_id));
            }
        }
    }
    Ok(report)
}

fn check_table(manifest: &Manifest, table: &ClassEmbeddingTable, report: &mut ValidationReport) {
    let loc = "class_table".to_string();
    let mut seen = BTreeSet::new();
    for name in &table.names {
        if name.is_empty() || !seen.insert(name) {
            report.push(loc.clone(), ViolationKind::ClassNames, format!("empty or duplicate class name {name:?}"));
        }
    }
    if table.names.len() != table.embeddings.len() {
        report.push(
            loc.clone(),
            ViolationKind::ClassNames,
            format!("{} names for {} embeddings", table.names.len(), table.embeddings.len()),
        );
    }
    if table.names != manifest.class_names {
        report.push(loc.clone(), ViolationKind::ClassNames, "class table names differ from manifest".into());
    }
    for (i, e) in table.embeddings.iter().enumerate() {
        if !e.is_finite() {
            report.push(format!("class_table:{i}"), ViolationKind::NonFiniteEmbedding, "text embedding has NaN or infinite entries".into());
        } else if !e.is_unit() {
            report.push(format!("class_table:{i}"), ViolationKind::EmbeddingNotUnit, format!("norm {:.6}", e.norm()));
        }
    }
}

fn check_video_frame(loc: &str, video_id: &str, frame_idx: u32, video: Option<&VideoInfo>, report: &mut ValidationReport) {
    match video {
        None => report.push(loc.to_string(), ViolationKind::UnknownVideo, format!("video {video_id:?} not in manifest")),
        Some(v) if frame_idx >= v.num_frames => report.push(
            loc.to_string(),
            ViolationKind::FrameOutOfRange,
            format!("frame {} >= {}", frame_idx, v.num_frames),
        ),
        Some(_) => {}
    }
}

fn check_mask_total(loc: &str, mask: &RleMask, report: &mut ValidationReport) {
    if mask.counts_total() != mask.num_pixels() {
        report.push(
            loc.to_string(),
            ViolationKind::MaskRunLengthTotal,
            format!("counts sum to {}, expected {}", mask.counts_total(), mask.num_pixels()),
        );
    }
}

fn check_mask(loc: &str, mask: &RleMask, video: &VideoInfo, report: &mut ValidationReport) {
    if mask.height != video.height || mask.width != video.width {
        report.push(
            loc.to_string(),
            ViolationKind::MaskDimensions,
            format!("mask {}x{} vs frame {}x{}", mask.height, mask.width, video.height, video.width),
        );
    }
    check_mask_total(loc, mask, report);
}

fn check_box(loc: &str, d: &DetectionRecord, video: &VideoInfo, report: &mut ValidationReport) {
    let b = d.bbox;
    if !b.is_finite() || !(b.x1 < b.x2 && b.y1 < b.y2) {
        report.push(loc.to_string(), ViolationKind::BoxDegenerate, format!("{:?}", <[f32; 4]>::from(b)));
        return;
    }
    if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > video.width as f32 || b.y2 > video.height as f32 {
        report.push(loc.to_string(), ViolationKind::BoxOutOfBounds, format!("{:?}", <[f32; 4]>::from(b)));
    }
}

fn check_scores(loc: &str, d: &DetectionRecord, num_classes: usize, report: &mut ValidationReport) {
    let Some(scores) = &d.class_scores else {
        if d.label.is_some() {
            report.push(loc.to_string(), ViolationKind::LabelWithoutScores, "label present, class_scores missing".into());
        }
        return;
    };
    if scores.len() != num_classes {
        report.push(loc.to_string(), ViolationKind::ClassScoresLength, format!("{} scores for {} classes", scores.len(), num_classes));
        return;
    }
    if scores.iter().any(|s| !s.is_finite() || !(-1.0..=1.0).contains(s)) {
        report.push(loc.to_string(), ViolationKind::ClassScoreOutOfRange, "class score outside [-1, 1]".into());
        return;
    }
    if let Some(label) = d.label {
        let best = argmax(scores).map(|(i, _)| i);
        if Some(label) != best {
            report.push(loc.to_string(), ViolationKind::LabelNotArgmax, format!("label {label}, argmax {best:?}"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskops::{rle_encode, DenseMask};
    use crate::model::{BBox, Embedding};

    fn fixture() -> (Manifest, Vec<DetectionRecord>, Vec<GroundTruthRecord>, ClassEmbeddingTable) {
        let manifest = Manifest {
            schema_version: "1".into(),
            videos: vec![VideoInfo { video_id: "v".into(), width: 4, height: 3, num_frames: 2 }],
            embedding_dim: 2,
            class_names: vec!["a".into(), "b".into()],
        };
        let table = ClassEmbeddingTable {
            names: manifest.class_names.clone(),
            embeddings: vec![Embedding(vec![1.0, 0.0]), Embedding(vec![0.0, 1.0])],
        };
        let mask = rle_encode(&DenseMask::from_fn(3, 4, |x, y| x == 1 && y < 2));
        let dets = (0..2)
            .map(|f| DetectionRecord {
                video_id: "v".into(),
                frame_idx: f,
                bbox: BBox::new(1.0, 0.0, 2.0, 2.0),
                objectness: 0.9,
                mask: mask.clone(),
                embedding: Embedding(vec![0.6, 0.8]),
                label: Some(1),
                class_scores: Some(vec![0.6, 0.8]),
            })
            .collect();
        let gt = (0..2)
            .map(|f| GroundTruthRecord { video_id: "v".into(), frame_idx: f, track_id: 3, category: 1, mask: mask.clone() })
            .collect();
        (manifest, dets, gt, table)
    }

    #[test]
    fn valid_fixture_is_clean() {
        let (m, d, g, t) = fixture();
        let r = validate_dataset(&m, &d, Some(&g), &t).unwrap();
        assert!(r.is_valid(), "{r}");
    }

    #[test]
    fn bad_run_length_total() {
        let (m, mut d, g, t) = fixture();
        d[0].mask.counts[0] += 1;
        let r = validate_dataset(&m, &d, Some(&g), &t).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].kind.description().contains("mask run-length total"));
        assert_eq!(r.violations[0].locator, "detections:1");
    }

    #[test]
    fn nan_embedding() {
        let (m, mut d, g, t) = fixture();
        d[1].embedding.0[0] = f32::NAN;
        let r = validate_dataset(&m, &d, Some(&g), &t).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind.description(), "non-finite embedding");
    }

    #[test]
    fn single_field_mutations_add_one_violation() {
        type Mutation = fn(&mut DetectionRecord);
        let mutations: Vec<(Mutation, ViolationKind)> = vec![
            (|d| d.bbox.x2 = d.bbox.x1, ViolationKind::BoxDegenerate),
            (|d| d.bbox.x2 = 9.0, ViolationKind::BoxOutOfBounds),
            (|d| d.objectness = 1.5, ViolationKind::ObjectnessOutOfRange),
            (|d| d.embedding.0[0] = 0.1, ViolationKind::EmbeddingNotUnit),
            (|d| d.label = Some(0), ViolationKind::LabelNotArgmax),
            (|d| d.class_scores = None, ViolationKind::LabelWithoutScores),
            (|d| d.class_scores = Some(vec![0.1]), ViolationKind::ClassScoresLength),
            (|d| d.frame_idx = 5, ViolationKind::FrameOutOfRange),
            (|d| d.video_id = "nope".into(), ViolationKind::UnknownVideo),
            (|d| d.mask = RleMask::empty(2, 6), ViolationKind::MaskDimensions),
        ];
        for (mutate, kind) in mutations {
            let (m, mut d, g, t) = fixture();
            mutate(&mut d[0]);
            let r = validate_dataset(&m, &d, Some(&g), &t).unwrap();
            assert_eq!(r.violations.len(), 1, "{kind}: {r}");
            assert_eq!(r.violations[0].kind, kind);
        }
    }

    #[test]
    fn ground_truth_checks() {
        let (m, d, mut g, t) = fixture();
        g[1].frame_idx = 0;
        g.push(GroundTruthRecord { category: 7, track_id: 9, ..g[0].clone() });
        let r = validate_dataset(&m, &d, Some(&g), &t).unwrap();
        assert_eq!(r.count(ViolationKind::DuplicateGroundTruth), 1);
        assert_eq!(r.count(ViolationKind::CategoryOutOfRange), 1);
        assert_eq!(r.violations.len(), 2);
    }

    #[test]
    fn hard_errors() {
        let (mut m, d, g, t) = fixture();
        m.embedding_dim = 3;
        assert!(matches!(validate_dataset(&m, &d, Some(&g), &t), Err(Error::DimensionMismatch { .. })));
        m.embedding_dim = 2;
        m.schema_version = "0".into();
        assert!(matches!(validate_dataset(&m, &d, Some(&g), &t), Err(Error::SchemaVersion { .. })));
    }
}
