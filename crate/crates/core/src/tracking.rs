//! Slot-based tracking with a running-mean memory, plus a memoryless
//! appearance+IoU baseline.
//!
//! Each video owns a fixed array of slots. Frame-t detections are placed
//! into slots ("aligned"), so the running mean over past frames is a plain
//! per-slot sum. Matching the next frame uses, per slot,
//! `lambda * current + (1 - lambda) * mean(previous aligned frames)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::{cosine_matrix, solve_assignment, SimMatrix};
use crate::error::{Error, Result};
use crate::labeling::locator;
use crate::maskops::box_iou;
use crate::model::{BBox, DetectionRecord, Embedding, RleMask, Tracklet, TrackletEntry, VideoInfo};

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub embedding: Embedding,
    pub mask: RleMask,
    pub class_scores: Vec<f32>,
    pub bbox: BBox,
}

impl Instance {
    pub fn from_detection(det: &DetectionRecord) -> Result<Self> {
        let class_scores = det
            .class_scores
            .clone()
            .ok_or_else(|| Error::Unlabeled(locator(det)))?;
        Ok(Instance {
            embedding: det.embedding.clone(),
            mask: det.mask.clone(),
            class_scores,
            bbox: det.bbox,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameInstances {
    pub frame_idx: u32,
    pub items: Vec<Instance>,
}

impl FrameInstances {
    /// Groups one video's labeled detections into frames `0..num_frames`,
    /// keeping input order within a frame. Frames without detections are
    /// present and empty.
    pub fn from_detections(video: &VideoInfo, dets: &[DetectionRecord]) -> Result<Vec<Self>> {
        let mut frames: Vec<FrameInstances> = (0..video.num_frames)
            .map(|frame_idx| FrameInstances {
                frame_idx,
                items: Vec::new(),
            })
            .collect();
        for det in dets {
            if det.video_id != video.video_id {
                continue;
            }
            let frame = frames.get_mut(det.frame_idx as usize).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{} has only {} frames",
                    locator(det),
                    video.num_frames
                ))
            })?;
            frame.items.push(Instance::from_detection(det)?);
        }
        Ok(frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub num_slots: usize,
    pub lambda: f64,
    pub top_k: usize,
    pub hold_last_embedding: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            num_slots: 100,
            lambda: 0.5,
            top_k: 10,
            hold_last_embedding: true,
        }
    }
}

/// Per-video tracking state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    lambda: f64,
    hold_last_embedding: bool,
    frames_seen: u32,
    last_frame: u32,
    /// Aligned embeddings of the latest frame.
    current: Vec<Embedding>,
    /// Per-slot sum of the aligned embeddings of every earlier frame.
    memory_sum: Vec<Vec<f64>>,
    dim: usize,
}

impl TrackState {
    /// Places the first frame's detections into slots `0..n` in input order.
    pub fn init(first: &FrameInstances, num_slots: usize, lambda: f64) -> Result<Self> {
        Self::init_with(first, num_slots, lambda, true)
    }

    pub fn init_with(
        first: &FrameInstances,
        num_slots: usize,
        lambda: f64,
        hold_last_embedding: bool,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        if first.items.len() > num_slots {
            return Err(Error::SlotCapacity {
                frame_idx: first.frame_idx,
                detections: first.items.len(),
                free: num_slots,
                slots: num_slots,
            });
        }
        let dim = first.items.first().map_or(0, |i| i.embedding.dim());
        check_dims(first, dim)?;
        let mut current = vec![Embedding::zeros(dim); num_slots];
        for (slot, item) in current.iter_mut().zip(&first.items) {
            *slot = item.embedding.clone();
        }
        Ok(TrackState {
            lambda,
            hold_last_embedding,
            frames_seen: 1,
            last_frame: first.frame_idx,
            current,
            memory_sum: vec![vec![0.0; dim]; num_slots],
            dim,
        })
    }

    pub fn num_slots(&self) -> usize {
        self.current.len()
    }

    pub fn frames_seen(&self) -> u32 {
        self.frames_seen
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn current(&self) -> &[Embedding] {
        &self.current
    }

    pub fn memory_sum(&self) -> &[Vec<f64>] {
        &self.memory_sum
    }

    /// Running mean over earlier frames; equals `current` after one frame.
    pub fn memory_mean(&self) -> Vec<Vec<f64>> {
        if self.frames_seen <= 1 {
            return self.current.iter().map(Embedding::to_f64).collect();
        }
        let n = f64::from(self.frames_seen - 1);
        self.memory_sum
            .iter()
            .map(|s| s.iter().map(|v| v / n).collect())
            .collect()
    }

    /// Blended per-slot references used for matching the next frame. Not
    /// re-normalized; null slots stay null.
    pub fn reference_embeddings(&self) -> Vec<Embedding> {
        let lambda = self.lambda;
        self.current
            .iter()
            .zip(self.memory_mean())
            .map(|(cur, mean)| {
                let blended: Vec<f64> = cur
                    .0
                    .iter()
                    .zip(&mean)
                    .map(|(&c, &m)| lambda * f64::from(c) + (1.0 - lambda) * m)
                    .collect();
                Embedding::from_f64(&blended)
            })
            .collect()
    }

    /// Matches the next frame against the slot references and advances the
    /// memory. Returns the slot taken by each detection, in detection order.
    pub fn step(&mut self, next: &FrameInstances) -> Result<Vec<usize>> {
        if next.frame_idx != self.last_frame + 1 {
            return Err(Error::NonConsecutiveFrame {
                expected: self.last_frame + 1,
                found: next.frame_idx,
            });
        }
        if self.dim == 0 {
            self.dim = next.items.first().map_or(0, |i| i.embedding.dim());
            if self.dim > 0 {
                for (c, m) in self.current.iter_mut().zip(&mut self.memory_sum) {
                    *c = Embedding::zeros(self.dim);
                    *m = vec![0.0; self.dim];
                }
            }
        }
        check_dims(next, self.dim)?;

        let refs = self.reference_embeddings();
        let active: Vec<usize> = (0..refs.len()).filter(|&s| !refs[s].is_null()).collect();
        let active_refs: Vec<Embedding> = active.iter().map(|&s| refs[s].clone()).collect();
        let det_embs: Vec<Embedding> = next.items.iter().map(|i| i.embedding.clone()).collect();
        let sim = cosine_matrix(&active_refs, &det_embs)?;

        let mut assignment: Vec<Option<usize>> = vec![None; next.items.len()];
        for (r, c) in solve_assignment(&sim, true)? {
            if !sim.is_forbidden(r, c) {
                assignment[c] = Some(active[r]);
            }
        }
        let mut taken = vec![false; refs.len()];
        for s in assignment.iter().flatten() {
            taken[*s] = true;
        }
        let mut free = (0..refs.len()).filter(|&s| refs[s].is_null() && !taken[s]);
        let free_count = refs.iter().filter(|r| r.is_null()).count();
        let unmatched = assignment.iter().filter(|a| a.is_none()).count();
        if unmatched > free_count {
            return Err(Error::SlotCapacity {
                frame_idx: next.frame_idx,
                detections: next.items.len(),
                free: free_count,
                slots: refs.len(),
            });
        }
        let slots: Vec<usize> = assignment
            .into_iter()
            .map(|a| a.unwrap_or_else(|| free.next().expect("capacity checked")))
            .collect();

        for (sum, cur) in self.memory_sum.iter_mut().zip(&self.current) {
            for (s, &v) in sum.iter_mut().zip(&cur.0) {
                *s += f64::from(v);
            }
        }
        self.frames_seen += 1;
        self.last_frame = next.frame_idx;
        if !self.hold_last_embedding {
            for c in &mut self.current {
                *c = Embedding::zeros(self.dim);
            }
        }
        for (&slot, item) in slots.iter().zip(&next.items) {
            self.current[slot] = item.embedding.clone();
        }
        Ok(slots)
    }
}

fn check_dims(frame: &FrameInstances, dim: usize) -> Result<()> {
    for item in &frame.items {
        if item.embedding.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: item.embedding.dim(),
            });
        }
    }
    Ok(())
}

/// Tracks one video and returns at most `top_k` tracklets, highest
/// confidence first.
pub fn run_video(video_id: &str, frames: &[FrameInstances], cfg: &TrackerConfig) -> Result<Vec<Tracklet>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let mut state = TrackState::init_with(first, cfg.num_slots, cfg.lambda, cfg.hold_last_embedding)?;
    let mut entries: BTreeMap<usize, Vec<TrackletEntry>> = BTreeMap::new();
    let mut record = |frame: &FrameInstances, slots: &[usize]| {
        for (&slot, item) in slots.iter().zip(&frame.items) {
            entries.entry(slot).or_default().push(TrackletEntry {
                frame_idx: frame.frame_idx,
                mask: item.mask.clone(),
                class_scores: item.class_scores.clone(),
            });
        }
    };
    let initial: Vec<usize> = (0..first.items.len()).collect();
    record(first, &initial);
    for frame in &frames[1..] {
        let slots = state.step(frame)?;
        record(frame, &slots);
    }
    let tracklets = entries
        .into_iter()
        .map(|(slot, e)| Tracklet::from_entries(video_id.to_string(), slot, e))
        .collect();
    Ok(top_k(tracklets, cfg.top_k))
}

/// Highest confidence first, ties by slot.
pub fn top_k(mut tracklets: Vec<Tracklet>, k: usize) -> Vec<Tracklet> {
    tracklets.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.slot.cmp(&b.slot))
    });
    tracklets.truncate(k);
    tracklets
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub appearance_weight: f64,
    pub iou_weight: f64,
    /// Consecutive missed frames a track survives.
    pub max_age: u32,
    /// Pairs costing more than this are never associated.
    pub max_cost: f64,
    pub top_k: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            appearance_weight: 1.0,
            iou_weight: 1.0,
            max_age: 30,
            max_cost: 1.0,
            top_k: 10,
        }
    }
}

struct BaselineTrack {
    id: usize,
    embedding: Embedding,
    bbox: BBox,
    misses: u32,
    entries: Vec<TrackletEntry>,
}

/// Frame-by-frame association on
/// `appearance_weight * (1 - cos) + iou_weight * (1 - box_iou)` against each
/// track's latest detection. No motion model, no memory.
pub fn track_baseline(video_id: &str, frames: &[FrameInstances], cfg: &BaselineConfig) -> Result<Vec<Tracklet>> {
    let (aw, iw) = (cfg.appearance_weight, cfg.iou_weight);
    if !(aw >= 0.0 && iw >= 0.0 && aw + iw > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "baseline weights must be non-negative with a positive sum (got {aw}, {iw})"
        )));
    }
    let mut alive: Vec<BaselineTrack> = Vec::new();
    let mut finished: Vec<BaselineTrack> = Vec::new();
    let mut next_id = 0usize;
    let mut expected = frames.first().map_or(0, |f| f.frame_idx);

    for frame in frames {
        if frame.frame_idx != expected {
            return Err(Error::NonConsecutiveFrame {
                expected,
                found: frame.frame_idx,
            });
        }
        expected += 1;

        let mut costs = Vec::with_capacity(alive.len() * frame.items.len());
        for track in &alive {
            for item in &frame.items {
                let cos = track.embedding.cosine(&item.embedding).unwrap_or(-1.0);
                let iou = box_iou(&track.bbox, &item.bbox);
                costs.push(aw * (1.0 - cos) + iw * (1.0 - iou));
            }
        }
        let m = SimMatrix::new(alive.len(), frame.items.len(), costs)?;
        let mut det_track: Vec<Option<usize>> = vec![None; frame.items.len()];
        let mut track_hit = vec![false; alive.len()];
        for (t, d) in solve_assignment(&m, false)? {
            if m.get(t, d) <= cfg.max_cost {
                det_track[d] = Some(t);
                track_hit[t] = true;
            }
        }
        for (d, item) in frame.items.iter().enumerate() {
            let entry = TrackletEntry {
                frame_idx: frame.frame_idx,
                mask: item.mask.clone(),
                class_scores: item.class_scores.clone(),
            };
            match det_track[d] {
                Some(t) => {
                    let track = &mut alive[t];
                    track.embedding = item.embedding.clone();
                    track.bbox = item.bbox;
                    track.misses = 0;
                    track.entries.push(entry);
                }
                None => {
                    alive.push(BaselineTrack {
                        id: next_id,
                        embedding: item.embedding.clone(),
                        bbox: item.bbox,
                        misses: 0,
                        entries: vec![entry],
                    });
                    track_hit.push(true);
                    next_id += 1;
                }
            }
        }
        let mut still = Vec::with_capacity(alive.len());
        for (mut track, hit) in alive.into_iter().zip(track_hit) {
            if !hit {
                track.misses += 1;
            }
            if track.misses > cfg.max_age {
                finished.push(track);
            } else {
                still.push(track);
            }
        }
        alive = still;
    }
    finished.extend(alive);
    let tracklets = finished
        .into_iter()
        .map(|t| Tracklet::from_entries(video_id.to_string(), t.id, t.entries))
        .collect();
    Ok(top_k(tracklets, cfg.top_k))
}
