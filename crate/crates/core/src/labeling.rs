//! Text-instance matching and score thresholds.

use crate::error::{Error, Result};
use crate::model::{argmax, ClassEmbeddingTable, DetectionRecord};

/// Fills `class_scores` with the dot product against every class embedding
/// and sets `label` to the argmax (lowest index on ties). All other fields
/// pass through untouched.
pub fn assign_labels(
    dets: Vec<DetectionRecord>,
    table: &ClassEmbeddingTable,
) -> Result<Vec<DetectionRecord>> {
    dets.into_iter().map(|d| label_one(d, table)).collect()
}

pub fn label_one(mut det: DetectionRecord, table: &ClassEmbeddingTable) -> Result<DetectionRecord> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("class table is empty".into()));
    }
    let scores = class_scores(&det, table)?;
    det.label = argmax(&scores).map(|(i, _)| i);
    det.class_scores = Some(scores);
    Ok(det)
}

fn class_scores(det: &DetectionRecord, table: &ClassEmbeddingTable) -> Result<Vec<f32>> {
    table
        .embeddings
        .iter()
        .map(|t| {
            if t.dim() != det.embedding.dim() {
                return Err(Error::DimensionMismatch {
                    expected: t.dim(),
                    found: det.embedding.dim(),
                });
            }
            Ok(det.embedding.dot(t).clamp(-1.0, 1.0) as f32)
        })
        .collect()
}

/// Keeps records with `objectness >= objectness_min` and assigned-class
/// score `>= class_score_min`, in input order.
pub fn score_filter(
    dets: Vec<DetectionRecord>,
    objectness_min: f32,
    class_score_min: f32,
) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::with_capacity(dets.len());
    for det in dets {
        let score = det
            .class_score()
            .ok_or_else(|| Error::Unlabeled(locator(&det)))?;
        if det.objectness >= objectness_min && score >= class_score_min {
            out.push(det);
        }
    }
    Ok(out)
}

pub(crate) fn locator(det: &DetectionRecord) -> String {
    format!("{}/frame {}", det.video_id, det.frame_idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, Embedding, RleMask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(embedding: Vec<f32>, objectness: f32) -> DetectionRecord {
        DetectionRecord {
            video_id: "v".into(),
            frame_idx: 0,
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            objectness,
            mask: RleMask::empty(2, 2),
            embedding: Embedding(embedding),
            label: None,
            class_scores: None,
        }
    }

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Embedding {
        Embedding::from_f64(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()).normalized()
    }

    fn basis_table(n: usize) -> ClassEmbeddingTable {
        ClassEmbeddingTable {
            names: (0..n).map(|i| format!("c{i}")).collect(),
            embeddings: (0..n)
                .map(|i| {
                    let mut v = vec![0.0; n + 1];
                    v[i] = 1.0;
                    Embedding(v)
                })
                .collect(),
        }
    }

    #[test]
    fn exact_class_embedding() {
        let table = basis_table(5);
        let out = label_one(det(table.embeddings[3].0.clone(), 0.9), &table).unwrap();
        assert_eq!(out.label, Some(3));
        assert_eq!(out.class_score(), Some(1.0));
    }

    #[test]
    fn orthogonal_embedding_ties_to_zero() {
        let table = basis_table(4);
        let out = label_one(det(vec![0.0, 0.0, 0.0, 0.0, 1.0], 0.9), &table).unwrap();
        assert_eq!(out.label, Some(0));
        assert_eq!(out.class_score(), Some(0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let table = basis_table(3);
        assert!(matches!(
            label_one(det(vec![1.0, 0.0], 0.9), &table),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matches_exhaustive_argmax() {
        for seed in 0..500u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = rng.random_range(2..24);
            let c = rng.random_range(1..12);
            let table = ClassEmbeddingTable {
                names: (0..c).map(|i| i.to_string()).collect(),
                embeddings: (0..c).map(|_| unit(&mut rng, d)).collect(),
            };
            let e = unit(&mut rng, d);
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (i, t) in table.embeddings.iter().enumerate() {
                let v: f64 = e.0.iter().zip(&t.0).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            let out = label_one(det(e.0.clone(), 1.0), &table).unwrap();
            assert_eq!(out.label, Some(best), "seed {seed}");
        }
    }

    #[test]
    fn geometry_passes_through() {
        let table = basis_table(3);
        let mut d = det(vec![0.6, 0.8, 0.0, 0.0], 0.42);
        d.mask = RleMask { height: 2, width: 2, counts: vec![1, 2, 1] };
        d.bbox = BBox::new(0.5, 0.25, 1.75, 2.0);
        let out = label_one(d.clone(), &table).unwrap();
        assert_eq!(serde_json::to_string(&out.bbox).unwrap(), serde_json::to_string(&d.bbox).unwrap());
        assert_eq!(out.mask, d.mask);
        assert_eq!(out.objectness.to_bits(), d.objectness.to_bits());
        assert_eq!(out.embedding, d.embedding);
    }

    fn labeled(o: f32, u: f32) -> DetectionRecord {
        let mut d = det(vec![1.0, 0.0], o);
        d.label = Some(0);
        d.class_scores = Some(vec![u, -1.0]);
        d
    }

    #[test]
    fn thresholds_are_inclusive() {
        let kept = score_filter(vec![labeled(0.71, 0.71), labeled(0.69, 0.99), labeled(0.7, 0.7), labeled(0.9, 0.69)], 0.7, 0.7).unwrap();
        let scores: Vec<_> = kept.iter().map(|d| d.objectness).collect();
        assert_eq!(scores, vec![0.71, 0.7]);
    }

    #[test]
    fn unlabeled_is_an_error() {
        assert!(matches!(score_filter(vec![det(vec![1.0], 0.9)], 0.5, 0.5), Err(Error::Unlabeled(_))));
    }

    #[test]
    fn filter_matches_scan_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dets: Vec<_> = (0..2000)
            .map(|_| labeled(rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let expected = dets
            .iter()
            .filter(|d| d.objectness >= 0.7 && d.class_scores.as_ref().unwrap()[0] >= 0.7)
            .count();
        let once = score_filter(dets, 0.7, 0.7).unwrap();
        assert_eq!(once.len(), expected);
        let twice = score_filter(once.clone(), 0.7, 0.7).unwrap();
        assert_eq!(once, twice);
    }
}
