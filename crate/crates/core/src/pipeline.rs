//! Whole-dataset drivers: per-video tracking and the label → filter → track
//! chain.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::labeling::{assign_labels, score_filter};
use crate::model::{ClassEmbeddingTable, DetectionRecord, Manifest, Tracklet, VideoInfo};
use crate::pmf::{build_bank, pmf_filter, KRule};
use crate::tracking::{run_video, track_baseline, BaselineConfig, FrameInstances, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tracker {
    Memory(TrackerConfig),
    Baseline(BaselineConfig),
}

fn per_video<T: Send>(
    videos: &[VideoInfo],
    f: impl Fn(&VideoInfo) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<Vec<T>>> = {
        use rayon::prelude::*;
        videos.par_iter().map(&f).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<Vec<T>>> = videos.iter().map(&f).collect();
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Tracks every manifest video; output is grouped by video in manifest
/// order. Detections of videos missing from the manifest are ignored.
pub fn track_dataset(manifest: &Manifest, dets: &[DetectionRecord], tracker: &Tracker) -> Result<Vec<Tracklet>> {
    let mut by_video: std::collections::BTreeMap<&str, Vec<DetectionRecord>> = Default::default();
    for d in dets {
        by_video.entry(d.video_id.as_str()).or_default().push(d.clone());
    }
    per_video(&manifest.videos, |video| {
        let own = by_video.get(video.video_id.as_str()).map_or(&[][..], Vec::as_slice);
        let frames = FrameInstances::from_detections(video, own)?;
        match tracker {
            Tracker::Memory(cfg) => run_video(&video.video_id, &frames, cfg),
            Tracker::Baseline(cfg) => track_baseline(&video.video_id, &frames, cfg),
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    pub objectness_min: f32,
    pub class_score_min: f32,
    /// `None` skips prototype filtering.
    pub tau: Option<f64>,
    pub k_rule: KRule,
    pub seed: u64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            objectness_min: 0.7,
            class_score_min: 0.7,
            tau: Some(0.7),
            k_rule: KRule::default(),
            seed: 0,
        }
    }
}

/// Labels, score-filters and (optionally) prototype-filters raw detections.
pub fn label_and_filter(
    dets: Vec<DetectionRecord>,
    table: &ClassEmbeddingTable,
    settings: &FilterSettings,
) -> Result<Vec<DetectionRecord>> {
    let labeled = assign_labels(dets, table)?;
    let kept = score_filter(labeled, settings.objectness_min, settings.class_score_min)?;
    match settings.tau {
        None => Ok(kept),
        Some(tau) => {
            let bank = build_bank(&kept, &settings.k_rule, settings.seed)?;
            pmf_filter(kept, &bank, tau)
        }
    }
}
