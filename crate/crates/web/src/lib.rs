//! Browser demo over `vistrack-core`. Every export takes plain numbers or
//! text and returns a JSON string for `www/main.js` to draw.

use std::collections::BTreeMap;

use serde::Serialize;
use vistrack::assignment::{solve_assignment, SimMatrix};
use vistrack::eval::{eval_vis, EvalReport};
use vistrack::labeling::{assign_labels, score_filter};
use vistrack::maskops::mask_iou;
use vistrack::pipeline::{track_dataset, FilterSettings, Tracker};
use vistrack::pmf::{build_bank, KRule};
use vistrack::synth::{generate, CorruptionKind, SynthConfig};
use vistrack::tracking::{BaselineConfig, TrackerConfig};
use vistrack::{GroundTruthRecord, Tracklet};
use wasm_bindgen::prelude::*;

type Res<T> = Result<T, String>;

fn to_js(r: Res<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn json<T: Serialize>(v: &T) -> Res<String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Scores {
    ap: f64,
    ap50: f64,
    ap75: f64,
    ar1: f64,
    ar10: f64,
    id_switches: usize,
}

#[derive(Serialize)]
struct TrackDemo {
    memory: Scores,
    baseline: Scores,
    num_frames: u32,
    /// Per ground-truth track in the first video: the memory slot covering
    /// each frame, or null.
    memory_rows: Vec<Vec<Option<usize>>>,
    baseline_rows: Vec<Vec<Option<usize>>>,
    /// Frames where the ground-truth object is hidden.
    hidden: Vec<Vec<bool>>,
}

/// GT track id -> per-frame mask, for one video.
fn gt_tracks<'a>(gt: &'a [GroundTruthRecord], video: &str, frames: u32) -> BTreeMap<u64, Vec<Option<&'a GroundTruthRecord>>> {
    let mut out: BTreeMap<u64, Vec<Option<&GroundTruthRecord>>> = BTreeMap::new();
    for g in gt.iter().filter(|g| g.video_id == video) {
        let row = out.entry(g.track_id).or_insert_with(|| vec![None; frames as usize]);
        row[g.frame_idx as usize] = Some(g);
    }
    out
}

/// Slot whose mask overlaps the ground truth by more than half, per frame.
fn coverage(track: &[Option<&GroundTruthRecord>], tracklets: &[&Tracklet]) -> Res<Vec<Option<usize>>> {
    let mut row = Vec::with_capacity(track.len());
    for (f, g) in track.iter().enumerate() {
        let mut best = None;
        if let Some(g) = g.filter(|g| !g.mask.is_empty()) {
            let mut top = 0.5;
            for t in tracklets {
                if let Some(e) = t.entries.iter().find(|e| e.frame_idx as usize == f) {
                    let iou = mask_iou(&e.mask, &g.mask).map_err(|e| e.to_string())?;
                    if iou > top {
                        top = iou;
                        best = Some(t.slot);
                    }
                }
            }
        }
        row.push(best);
    }
    Ok(row)
}

fn switches(row: &[Option<usize>]) -> usize {
    let seen: Vec<usize> = row.iter().flatten().copied().collect();
    seen.windows(2).filter(|w| w[0] != w[1]).count()
}

pub fn track_demo_json(seed: u64, lambda: f64, sigma: f64, hold_last: bool) -> Res<String> {
    let cfg = SynthConfig { sigma, ..SynthConfig::occlusion() };
    let ds = generate(&cfg, seed).map_err(|e| e.to_string())?;
    // unfiltered: at this noise level the score gate drops half the true detections
    let dets = assign_labels(ds.detections.clone(), &ds.table).map_err(|e| e.to_string())?;
    let memory = Tracker::Memory(TrackerConfig { lambda, hold_last_embedding: hold_last, ..Default::default() });
    let baseline = Tracker::Baseline(BaselineConfig::default());

    let first = &ds.manifest.videos[0];
    let mut rows: Vec<Vec<Vec<Option<usize>>>> = Vec::new();
    let mut scores = Vec::new();
    for tracker in [memory, baseline] {
        let tracklets = track_dataset(&ds.manifest, &dets, &tracker).map_err(|e| e.to_string())?;
        let r: EvalReport = eval_vis(&tracklets, &ds.ground_truth, &ds.manifest, false).map_err(|e| e.to_string())?;
        let mut id_switches = 0;
        let mut first_rows = Vec::new();
        for v in &ds.manifest.videos {
            let own: Vec<&Tracklet> = tracklets.iter().filter(|t| t.video_id == v.video_id).collect();
            for track in gt_tracks(&ds.ground_truth, &v.video_id, v.num_frames).values() {
                let row = coverage(track, &own)?;
                id_switches += switches(&row);
                if v.video_id == first.video_id {
                    first_rows.push(row);
                }
            }
        }
        rows.push(first_rows);
        scores.push(Scores { ap: r.ap, ap50: r.ap50, ap75: r.ap75, ar1: r.ar1, ar10: r.ar10, id_switches });
    }
    let hidden = gt_tracks(&ds.ground_truth, &first.video_id, first.num_frames)
        .values()
        .map(|t| t.iter().map(|g| g.is_none_or(|g| g.mask.is_empty())).collect())
        .collect();
    let baseline_rows = rows.pop().unwrap_or_default();
    let memory_rows = rows.pop().unwrap_or_default();
    let baseline = scores.pop().expect("two trackers");
    let memory = scores.pop().expect("two trackers");
    json(&TrackDemo { memory, baseline, num_frames: first.num_frames, memory_rows, baseline_rows, hidden })
}

#[derive(Serialize, Default)]
struct KindCounts {
    total: usize,
    after_score: usize,
    after_pmf: usize,
}

#[derive(Serialize)]
struct Point {
    class_score: f32,
    /// Best prototype cosine within the assigned class.
    similarity: f64,
    kind: CorruptionKind,
}

#[derive(Serialize)]
struct PmfDemo {
    tau: f64,
    counts: BTreeMap<String, KindCounts>,
    points: Vec<Point>,
    prototypes: usize,
}

pub fn pmf_demo_json(seed: u64, tau: f64, label_noise: f64) -> Res<String> {
    if !(-1.0..=1.0).contains(&tau) {
        return Err(format!("tau must lie in [-1, 1], got {tau}"));
    }
    let cfg = SynthConfig { label_noise, ..SynthConfig::noisy_labels() };
    let ds = generate(&cfg, seed).map_err(|e| e.to_string())?;
    let settings = FilterSettings::default();
    let labeled = assign_labels(ds.detections, &ds.table).map_err(|e| e.to_string())?;
    let kept = score_filter(labeled.clone(), settings.objectness_min, settings.class_score_min).map_err(|e| e.to_string())?;
    let bank = build_bank(&kept, &KRule::default(), settings.seed).map_err(|e| e.to_string())?;

    let mut counts: BTreeMap<String, KindCounts> = BTreeMap::new();
    let mut points = Vec::new();
    for (det, c) in labeled.iter().zip(&ds.corruption) {
        let name = serde_json::to_value(c.kind).map_err(|e| e.to_string())?;
        let entry = counts.entry(name.as_str().unwrap_or_default().to_string()).or_default();
        entry.total += 1;
        let score = det.class_score().unwrap_or(0.0);
        if det.objectness < settings.objectness_min || score < settings.class_score_min {
            continue;
        }
        entry.after_score += 1;
        let similarity = det.label.and_then(|l| bank.max_similarity(l, &det.embedding)).unwrap_or(-1.0);
        if similarity >= tau {
            entry.after_pmf += 1;
        }
        points.push(Point { class_score: score, similarity, kind: c.kind });
    }
    let prototypes = bank.classes.iter().map(|c| c.centroids.len()).sum();
    json(&PmfDemo { tau, counts, points, prototypes })
}

#[derive(Serialize)]
struct AssignmentDemo {
    rows: usize,
    cols: usize,
    pairs: Vec<(usize, usize)>,
    objective: f64,
}

/// One matrix row per line; entries split on whitespace or commas.
fn parse_matrix(text: &str) -> Res<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cells: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        if cells.is_empty() {
            continue;
        }
        let row = cells
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| format!("line {}: `{c}` is not a number", i + 1)))
            .collect::<Res<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn assignment_demo_json(matrix_text: &str, maximize: bool) -> Res<String> {
    let rows = parse_matrix(matrix_text)?;
    let m = SimMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
    let pairs = solve_assignment(&m, maximize).map_err(|e| e.to_string())?;
    json(&AssignmentDemo { rows: m.rows(), cols: m.cols(), objective: m.objective(&pairs), pairs })
}

/// Memory tracker vs baseline on an occlusion-heavy synthetic set.
#[wasm_bindgen]
pub fn track_demo(seed: u32, lambda: f64, sigma: f64, hold_last: bool) -> Result<String, JsError> {
    to_js(track_demo_json(seed as u64, lambda, sigma, hold_last))
}

/// What the prototype filter keeps at `tau`, split by planted corruption.
#[wasm_bindgen]
pub fn pmf_demo(seed: u32, tau: f64, label_noise: f64) -> Result<String, JsError> {
    to_js(pmf_demo_json(seed as u64, tau, label_noise))
}

#[wasm_bindgen]
pub fn assignment_demo(matrix_text: &str, maximize: bool) -> Result<String, JsError> {
    to_js(assignment_demo_json(matrix_text, maximize))
}
