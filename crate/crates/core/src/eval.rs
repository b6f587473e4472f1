//! Video AP/AR over spatio-temporal mask IoU, and per-frame pseudo-label F1.
//!
//! Conventions:
//! - AP thresholds 0.50:0.05:0.95 are inclusive (`st_iou >= thr`).
//! - Predictions are matched greedily in descending confidence (ties by
//!   video id, then slot) to the best unmatched ground-truth track of the
//!   same class and video (ties by lowest track id).
//! - AP is the all-point interpolated area under the precision/recall curve.
//! - AR@k keeps the k most confident predictions per video and class, then
//!   averages recall over classes and thresholds.
//! - Means run over classes with at least one ground-truth track.
//! - F1 true positives need mask IoU strictly above the threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::locator;
use crate::maskops::{mask_iou, st_iou};
use crate::model::{DetectionRecord, GroundTruthRecord, Manifest, RleMask, Tracklet};

pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub category: usize,
    pub name: String,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub num_gt_tracks: usize,
    pub num_predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar1: f64,
    pub ar10: f64,
    pub num_gt_tracks: usize,
    pub num_predictions: usize,
    pub per_class: Vec<ClassAp>,
}

impl EvalReport {
    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>7} {:>7} {:>7} {:>6} {:>6}", "class", "AP", "AP50", "AP75", "gt", "pred");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<20} {:>7.4} {:>7.4} {:>7.4} {:>6} {:>6}",
                c.name, c.ap, c.ap50, c.ap75, c.num_gt_tracks, c.num_predictions
            );
        }
        let _ = writeln!(
            s,
            "{:<20} {:>7.4} {:>7.4} {:>7.4} {:>6} {:>6}",
            "all", self.ap, self.ap50, self.ap75, self.num_gt_tracks, self.num_predictions
        );
        let _ = writeln!(s, "AR@1 {:.4}  AR@10 {:.4}", self.ar1, self.ar10);
        s
    }
}

struct GtTrack<'a> {
    video: usize,
    track_id: u64,
    category: usize,
    frames: BTreeMap<u32, &'a RleMask>,
}

struct Pred<'a> {
    video: usize,
    category: usize,
    confidence: f64,
    slot: usize,
    tracklet: &'a Tracklet,
}

/// Spatio-temporal IoU between a tracklet and a ground-truth track over the
/// union of their frames.
fn track_iou(pred: &Tracklet, gt: &GtTrack) -> Result<f64> {
    let frames: BTreeSet<u32> = pred
        .entries
        .iter()
        .map(|e| e.frame_idx)
        .chain(gt.frames.keys().copied())
        .collect();
    let p: Vec<Option<&RleMask>> = frames.iter().map(|&f| pred.mask_at(f)).collect();
    let g: Vec<Option<&RleMask>> = frames.iter().map(|&f| gt.frames.get(&f).copied()).collect();
    st_iou(&p, &g)
}

pub fn eval_vis(
    preds: &[Tracklet],
    gt: &[GroundTruthRecord],
    manifest: &Manifest,
    ignore_class: bool,
) -> Result<EvalReport> {
    let video_index: BTreeMap<&str, usize> = manifest
        .videos
        .iter()
        .enumerate()
        .map(|(i, v)| (v.video_id.as_str(), i))
        .collect();
    let video_of = |id: &str| {
        video_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownVideo(id.to_string()))
    };
    let class_of = |c: usize| if ignore_class { 0 } else { c };

    let mut tracks: BTreeMap<(usize, u64), GtTrack> = BTreeMap::new();
    for rec in gt {
        let video = video_of(&rec.video_id)?;
        let track = tracks.entry((video, rec.track_id)).or_insert_with(|| GtTrack {
            video,
            track_id: rec.track_id,
            category: class_of(rec.category),
            frames: BTreeMap::new(),
        });
        track.frames.insert(rec.frame_idx, &rec.mask);
    }
    let tracks: Vec<GtTrack> = tracks.into_values().collect();

    let mut preds: Vec<Pred> = preds
        .iter()
        .map(|t| {
            Ok(Pred {
                video: video_of(&t.video_id)?,
                category: class_of(t.final_label),
                confidence: t.confidence,
                slot: t.slot,
                tracklet: t,
            })
        })
        .collect::<Result<_>>()?;
    preds.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.video.cmp(&b.video))
            .then(a.slot.cmp(&b.slot))
    });

    // IoU only between same-video, same-class pairs.
    let mut ious: Vec<Vec<(usize, f64)>> = Vec::with_capacity(preds.len());
    for p in &preds {
        let mut row = Vec::new();
        for (g, track) in tracks.iter().enumerate() {
            if track.video == p.video && track.category == p.category {
                row.push((g, track_iou(p.tracklet, track)?));
            }
        }
        ious.push(row);
    }

    // rank within (video, class); preds are already in rank order
    let mut rank_in_video = vec![0usize; preds.len()];
    let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        let r = seen.entry((p.video, p.category)).or_insert(0);
        rank_in_video[i] = *r;
        *r += 1;
    }

    let categories: BTreeSet<usize> = tracks.iter().map(|t| t.category).collect();
    let mut per_class = Vec::new();
    let mut ar1 = 0.0;
    let mut ar10 = 0.0;
    for &cat in &categories {
        let num_gt = tracks.iter().filter(|t| t.category == cat).count();
        let members: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].category == cat).collect();
        let mut aps = [0.0f64; IOU_THRESHOLDS.len()];
        for (k, &thr) in IOU_THRESHOLDS.iter().enumerate() {
            let tp = greedy_match(&members, &ious, &tracks, thr);
            aps[k] = average_precision(&tp, num_gt);
            let recall_at = |limit: usize| {
                let subset: Vec<usize> = members.iter().copied().filter(|&i| rank_in_video[i] < limit).collect();
                greedy_match(&subset, &ious, &tracks, thr).iter().filter(|&&t| t).count() as f64 / num_gt as f64
            };
            ar1 += recall_at(1);
            ar10 += recall_at(10);
        }
        per_class.push(ClassAp {
            category: cat,
            name: if ignore_class {
                "(any)".to_string()
            } else {
                manifest.class_names.get(cat).cloned().unwrap_or_else(|| cat.to_string())
            },
            ap: aps.iter().sum::<f64>() / aps.len() as f64,
            ap50: aps[0],
            ap75: aps[5],
            num_gt_tracks: num_gt,
            num_predictions: members.len(),
        });
    }

    let n_classes = per_class.len();
    let mean = |f: fn(&ClassAp) -> f64| {
        if n_classes == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / n_classes as f64
        }
    };
    let denom = (n_classes * IOU_THRESHOLDS.len()).max(1) as f64;
    Ok(EvalReport {
        ap: mean(|c| c.ap),
        ap50: mean(|c| c.ap50),
        ap75: mean(|c| c.ap75),
        ar1: ar1 / denom,
        ar10: ar10 / denom,
        num_gt_tracks: tracks.len(),
        num_predictions: preds.len(),
        per_class,
    })
}

/// TP flag per prediction (in the given rank order).
fn greedy_match(order: &[usize], ious: &[Vec<(usize, f64)>], tracks: &[GtTrack], thr: f64) -> Vec<bool> {
    let mut matched = vec![false; tracks.len()];
    order
        .iter()
        .map(|&i| {
            let mut best: Option<(usize, f64)> = None;
            for &(g, iou) in &ious[i] {
                if matched[g] || iou < thr {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bg, biou)) => iou > biou || (iou == biou && tracks[g].track_id < tracks[bg].track_id),
                };
                if better {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                matched[g] = true;
                true
            } else {
                false
            }
        })
        .collect()
}

/// All-point interpolated AP from TP flags in rank order. Each TP adds
/// `1 / num_gt` recall at the interpolated precision at its rank.
pub fn average_precision(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let area = tp.iter().zip(&precision).filter(|(t, _)| **t).fold(0.0, |a, (_, p)| a + p);
    area / num_gt as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub category: usize,
    pub name: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub mf1: f64,
    pub per_class: Vec<ClassF1>,
}

impl F1Report {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}", "class", "tp", "fp", "fn", "prec", "rec", "f1");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<20} {:>6} {:>6} {:>6} {:>7.4} {:>7.4} {:>7.4}",
                c.name, c.tp, c.fp, c.fn_, c.precision, c.recall, c.f1
            );
        }
        let _ = writeln!(s, "mF1 {:.4}", self.mf1);
        s
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2PR / (P + R)` with `0/0 := 0`.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-frame F1 of labeled detections against ground truth.
pub fn eval_f1(
    dets: &[DetectionRecord],
    gt: &[GroundTruthRecord],
    class_names: &[String],
    iou_min: f64,
    ignore_class: bool,
) -> Result<F1Report> {
    let class_of = |c: usize| if ignore_class { 0 } else { c };
    // (video, frame, class) -> (pred masks, gt masks)
    type Bucket<'a> = (Vec<&'a RleMask>, Vec<&'a RleMask>);
    let mut buckets: BTreeMap<(&str, u32, usize), Bucket> = BTreeMap::new();
    for d in dets {
        let label = d.label.ok_or_else(|| Error::Unlabeled(locator(d)))?;
        buckets
            .entry((d.video_id.as_str(), d.frame_idx, class_of(label)))
            .or_default()
            .0
            .push(&d.mask);
    }
    for g in gt {
        buckets
            .entry((g.video_id.as_str(), g.frame_idx, class_of(g.category)))
            .or_default()
            .1
            .push(&g.mask);
    }

    // class -> (tp, fp, fn, has_gt)
    let mut counts: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for ((_, _, class), (preds, gts)) in &buckets {
        let mut pairs = Vec::new();
        for (i, p) in preds.iter().enumerate() {
            for (j, g) in gts.iter().enumerate() {
                let iou = mask_iou(p, g)?;
                if iou > iou_min {
                    pairs.push((iou, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut pm = vec![false; preds.len()];
        let mut gm = vec![false; gts.len()];
        let mut tp = 0;
        for (_, i, j) in pairs {
            if !pm[i] && !gm[j] {
                pm[i] = true;
                gm[j] = true;
                tp += 1;
            }
        }
        let c = counts.entry(*class).or_default();
        c.0 += tp;
        c.1 += preds.len() - tp;
        c.2 += gts.len() - tp;
    }

    let per_class: Vec<ClassF1> = counts
        .iter()
        .map(|(&category, &(tp, fp, fn_))| ClassF1 {
            category,
            name: if ignore_class {
                "(any)".to_string()
            } else {
                class_names.get(category).cloned().unwrap_or_else(|| category.to_string())
            },
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: f1_score(tp, fp, fn_),
        })
        .collect();
    let with_gt: Vec<&ClassF1> = per_class.iter().filter(|c| c.tp + c.fn_ > 0).collect();
    let mf1 = if with_gt.is_empty() {
        0.0
    } else {
        with_gt.iter().map(|c| c.f1).sum::<f64>() / with_gt.len() as f64
    };
    Ok(F1Report { mf1, per_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskops::{rle_encode, DenseMask};
    use crate::model::{BBox, Embedding, TrackletEntry, VideoInfo};

    fn manifest(videos: &[(&str, u32)]) -> Manifest {
        Manifest {
            schema_version: "1".into(),
            videos: videos
                .iter()
                .map(|(id, n)| VideoInfo { video_id: id.to_string(), width: 8, height: 8, num_frames: *n })
                .collect(),
            embedding_dim: 2,
            class_names: vec!["a".into(), "b".into()],
        }
    }

    fn cols(lo: u32, hi: u32) -> RleMask {
        rle_encode(&DenseMask::from_fn(8, 8, |x, _| x >= lo && x < hi))
    }

    fn gt(video: &str, frame: u32, track: u64, cat: usize, mask: RleMask) -> GroundTruthRecord {
        GroundTruthRecord { video_id: video.into(), frame_idx: frame, track_id: track, category: cat, mask }
    }

    fn tracklet(video: &str, slot: usize, label: usize, conf: f32, masks: &[(u32, RleMask)]) -> Tracklet {
        let mut scores = vec![0.0f32; 2];
        scores[label] = conf;
        Tracklet::from_entries(
            video.into(),
            slot,
            masks
                .iter()
                .map(|(f, m)| TrackletEntry { frame_idx: *f, mask: m.clone(), class_scores: scores.clone() })
                .collect(),
        )
    }

    #[test]
    fn perfect_predictions_score_one() {
        let m = manifest(&[("v0", 3), ("v1", 2)]);
        let mut gts = Vec::new();
        let mut preds = Vec::new();
        for (v, n, track, cat, lo) in [("v0", 3, 1u64, 0usize, 0u32), ("v0", 3, 2, 1, 4), ("v1", 2, 7, 0, 2)] {
            let masks: Vec<(u32, RleMask)> = (0..n).map(|f| (f, cols(lo + f % 2, lo + 2 + f % 2))).collect();
            for (f, mask) in &masks {
                gts.push(gt(v, *f, track, cat, mask.clone()));
            }
            preds.push(tracklet(v, track as usize, cat, 0.9, &masks));
        }
        let r = eval_vis(&preds, &gts, &m, false).unwrap();
        assert_eq!((r.ap, r.ap50, r.ap75, r.ar1, r.ar10), (1.0, 1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predictions_score_zero() {
        let m = manifest(&[("v0", 1)]);
        let r = eval_vis(&[], &[gt("v0", 0, 1, 0, cols(0, 2))], &m, false).unwrap();
        assert_eq!((r.ap, r.ar1, r.ar10), (0.0, 0.0, 0.0));
        assert!(average_precision(&[false, false], 1).is_sign_positive());
        assert!(r.to_table().lines().all(|l| !l.contains("-0.0000")));
    }

    #[test]
    fn unknown_video() {
        let m = manifest(&[("v0", 1)]);
        let p = tracklet("zz", 0, 0, 0.5, &[(0, cols(0, 1))]);
        assert!(matches!(eval_vis(&[p], &[], &m, false), Err(Error::UnknownVideo(_))));
    }

    /// Brute-force all-point AP: for every recall level reached, the best
    /// precision over all score cut-offs reaching at least that recall.
    fn brute_force_ap(tp_in_rank: &[bool], num_gt: usize) -> f64 {
        let cuts: Vec<(f64, f64)> = (1..=tp_in_rank.len())
            .map(|k| {
                let hits = tp_in_rank[..k].iter().filter(|&&t| t).count();
                (hits as f64 / num_gt as f64, hits as f64 / k as f64)
            })
            .collect();
        let mut levels: Vec<f64> = cuts.iter().map(|c| c.0).collect();
        levels.dedup();
        let mut prev = 0.0;
        let mut area = 0.0;
        for r in levels {
            let p = cuts.iter().filter(|c| c.0 >= r).map(|c| c.1).fold(0.0, f64::max);
            area += (r - prev) * p;
            prev = r;
        }
        area
    }

    #[test]
    fn hand_enumerated_three_predictions_two_tracks() {
        // One video, one class, two GT tracks over 2 frames.
        // GT A: cols [0,4) both frames (area 32 per frame), GT B: cols [4,8).
        // P1 (0.9): cols [0,3) both frames -> IoU with A = 48/64 = 0.75
        // P2 (0.8): cols [5,8) frame 0 only -> IoU with B = 24/64 = 0.375
        // P3 (0.7): cols [4,8) both frames -> IoU with B = 1.0
        let m = manifest(&[("v", 2)]);
        let mut gts = Vec::new();
        for f in 0..2 {
            gts.push(gt("v", f, 1, 0, cols(0, 4)));
            gts.push(gt("v", f, 2, 0, cols(4, 8)));
        }
        let preds = vec![
            tracklet("v", 0, 0, 0.9, &[(0, cols(0, 3)), (1, cols(0, 3))]),
            tracklet("v", 1, 0, 0.8, &[(0, cols(5, 8))]),
            tracklet("v", 2, 0, 0.7, &[(0, cols(4, 8)), (1, cols(4, 8))]),
        ];
        let r = eval_vis(&preds, &gts, &m, false).unwrap();

        let mut expected = Vec::new();
        for thr in IOU_THRESHOLDS {
            let tp = [0.75 >= thr, false, true];
            expected.push(brute_force_ap(&tp, 2));
        }
        // at 0.50: ranks TP, FP, TP -> area 0.5*1 + 0.5*(2/3)
        assert!((expected[0] - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        let ap = expected.iter().sum::<f64>() / 10.0;
        assert!((r.ap50 - expected[0]).abs() < 1e-9);
        assert!((r.ap75 - expected[5]).abs() < 1e-9);
        assert!((r.ap - ap).abs() < 1e-9);
        assert!(r.ap <= r.ap50);
    }

    #[test]
    fn order_invariance_and_duplicate() {
        let m = manifest(&[("v", 2)]);
        let mut gts = Vec::new();
        for f in 0..2 {
            gts.push(gt("v", f, 1, 0, cols(0, 4)));
            gts.push(gt("v", f, 2, 1, cols(4, 8)));
        }
        let mut preds = vec![
            tracklet("v", 0, 0, 0.9, &[(0, cols(0, 4)), (1, cols(0, 3))]),
            tracklet("v", 1, 1, 0.6, &[(0, cols(4, 7)), (1, cols(4, 8))]),
            tracklet("v", 2, 0, 0.4, &[(0, cols(1, 6))]),
        ];
        let base = eval_vis(&preds, &gts, &m, false).unwrap();
        preds.reverse();
        assert_eq!(eval_vis(&preds, &gts, &m, false).unwrap(), base);

        // duplicate of a TP at lower confidence
        preds.push(tracklet("v", 9, 0, 0.3, &[(0, cols(0, 4)), (1, cols(0, 3))]));
        assert!(eval_vis(&preds, &gts, &m, false).unwrap().ap <= base.ap);
    }

    fn det(video: &str, frame: u32, label: usize, mask: RleMask) -> DetectionRecord {
        DetectionRecord {
            video_id: video.into(),
            frame_idx: frame,
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            objectness: 1.0,
            mask,
            embedding: Embedding(vec![1.0, 0.0]),
            label: Some(label),
            class_scores: Some(vec![0.0; 2]),
        }
    }

    #[test]
    fn f1_perfect_and_mislabeled() {
        let names = vec!["a".to_string(), "b".to_string()];
        let gts = vec![gt("v", 0, 1, 0, cols(0, 3)), gt("v", 0, 2, 1, cols(4, 7)), gt("v", 1, 1, 0, cols(1, 4))];
        let exact: Vec<_> = gts.iter().map(|g| det("v", g.frame_idx, g.category, g.mask.clone())).collect();
        assert_eq!(eval_f1(&exact, &gts, &names, 0.5, false).unwrap().mf1, 1.0);

        let wrong: Vec<_> = gts.iter().map(|g| det("v", g.frame_idx, 1 - g.category, g.mask.clone())).collect();
        let r = eval_f1(&wrong, &gts, &names, 0.5, false).unwrap();
        assert!(r.per_class.iter().all(|c| c.f1 == 0.0));
        // class-agnostic mode ignores the labels
        assert_eq!(eval_f1(&wrong, &gts, &names, 0.5, true).unwrap().mf1, 1.0);
    }

    #[test]
    fn f1_iou_threshold_is_strict() {
        let names = vec!["a".to_string()];
        // IoU exactly 0.5: cols [0,2) vs [0,4)
        let gts = vec![gt("v", 0, 1, 0, cols(0, 4))];
        let dets = vec![det("v", 0, 0, cols(0, 2))];
        let r = eval_f1(&dets, &gts, &names, 0.5, false).unwrap();
        assert_eq!((r.per_class[0].tp, r.per_class[0].fp, r.per_class[0].fn_), (0, 1, 1));
    }

    #[test]
    fn removing_false_positive_never_hurts() {
        let names = vec!["a".to_string(), "b".to_string()];
        let gts = vec![gt("v", 0, 1, 0, cols(0, 3)), gt("v", 0, 2, 1, cols(4, 7))];
        let mut dets = vec![det("v", 0, 0, cols(0, 3)), det("v", 0, 1, cols(4, 6)), det("v", 0, 0, cols(6, 8))];
        let with_fp = eval_f1(&dets, &gts, &names, 0.5, false).unwrap().mf1;
        dets.pop();
        assert!(eval_f1(&dets, &gts, &names, 0.5, false).unwrap().mf1 >= with_fp);
    }

    #[test]
    fn ap_helper_edge_cases() {
        assert_eq!(average_precision(&[], 3), 0.0);
        assert_eq!(average_precision(&[true, true], 2), 1.0);
        assert_eq!(average_precision(&[true], 0), 0.0);
        assert_eq!(f1_score(0, 0, 0), 0.0);
    }
}
