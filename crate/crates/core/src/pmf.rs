//! Prototype memory filtering.
//!
//! Every class gets a small bank of prototypes: spherical K-means centroids
//! over the embeddings of the instances carrying that label. An instance
//! survives only if some prototype of its own class is within cosine `tau`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::locator;
use crate::model::{normalize_f64, DetectionRecord, Embedding};

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-4;

/// Number of prototypes for a class of `n` instances:
/// `clamp(ceil(n / divisor), 1, max_k)`, never more than `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KRule {
    pub divisor: usize,
    pub max_k: usize,
}

impl Default for KRule {
    fn default() -> Self {
        KRule {
            divisor: 64,
            max_k: 32,
        }
    }
}

impl KRule {
    pub fn k_for(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        n.div_ceil(self.divisor.max(1))
            .clamp(1, self.max_k.max(1))
            .min(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototypes {
    pub label: usize,
    pub member_count: usize,
    pub kmeans_iterations_used: usize,
    pub centroids: Vec<Embedding>,
}

/// Per-class prototypes, sorted by label. Classes without members are absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub classes: Vec<ClassPrototypes>,
}

impl PrototypeBank {
    pub fn get(&self, label: usize) -> Option<&ClassPrototypes> {
        self.classes
            .binary_search_by_key(&label, |c| c.label)
            .ok()
            .map(|i| &self.classes[i])
    }

    /// Best cosine between `embedding` and the prototypes of `label`.
    pub fn max_similarity(&self, label: usize, embedding: &Embedding) -> Option<f64> {
        let protos = self.get(label)?;
        protos
            .centroids
            .iter()
            .map(|c| embedding.cosine(c).unwrap_or(-1.0))
            .fold(None, |best: Option<f64>, s| Some(best.map_or(s, |b| b.max(s))))
    }
}

pub fn build_bank(dets: &[DetectionRecord], rule: &KRule, seed: u64) -> Result<PrototypeBank> {
    let mut groups: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    let dim = dets.first().map_or(0, |d| d.embedding.dim());
    for det in dets {
        let label = det.label.ok_or_else(|| Error::Unlabeled(locator(det)))?;
        if det.embedding.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: det.embedding.dim(),
            });
        }
        groups
            .entry(label)
            .or_default()
            .push(normalize_f64(&det.embedding.to_f64()));
    }
    let groups: Vec<(usize, Vec<Vec<f64>>)> = groups.into_iter().collect();

    let build = |(label, points): &(usize, Vec<Vec<f64>>)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(*label as u64);
        let fit = spherical_kmeans(points, rule.k_for(points.len()), &mut rng);
        ClassPrototypes {
            label: *label,
            member_count: points.len(),
            kmeans_iterations_used: fit.iterations,
            centroids: fit.centroids.iter().map(|c| Embedding::from_f64(c)).collect(),
        }
    };

    #[cfg(feature = "parallel")]
    let classes = {
        use rayon::prelude::*;
        groups.par_iter().map(build).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let classes = groups.iter().map(build).collect();

    Ok(PrototypeBank { classes })
}

/// Keeps records whose best prototype similarity within their own class is
/// at least `tau`. Records of classes missing from the bank are dropped.
pub fn pmf_filter(
    dets: Vec<DetectionRecord>,
    bank: &PrototypeBank,
    tau: f64,
) -> Result<Vec<DetectionRecord>> {
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "tau must lie in [-1, 1], got {tau}"
        )));
    }
    let mut out = Vec::with_capacity(dets.len());
    for det in dets {
        let label = det.label.ok_or_else(|| Error::Unlabeled(locator(&det)))?;
        if bank
            .max_similarity(label, &det.embedding)
            .is_some_and(|s| s >= tau)
        {
            out.push(det);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let s = dot(point, c);
        if s > best_sim {
            best_sim = s;
            best = i;
        }
    }
    best
}

/// Lloyd iterations on unit vectors with re-normalized centroids, seeded by
/// greedy k-means++. `points` are expected to be unit-norm.
pub fn spherical_kmeans(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> KMeansFit {
    let k = k.min(points.len());
    if k == 0 {
        return KMeansFit {
            centroids: Vec::new(),
            iterations: 0,
        };
    }
    let mut centroids = kmeans_pp(points, k, rng);
    let mut iterations = 0;
    let mut assignment = vec![0usize; points.len()];
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest(p, &centroids);
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut sizes = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            sizes[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }

        let mut next = centroids.clone();
        let mut reseeded = vec![false; points.len()];
        for c in 0..k {
            if sizes[c] == 0 {
                // farthest point from its own centroid, not already reused
                let far = (0..points.len())
                    .filter(|&i| !reseeded[i])
                    .min_by(|&i, &j| {
                        let si = dot(&points[i], &centroids[assignment[i]]);
                        let sj = dot(&points[j], &centroids[assignment[j]]);
                        si.total_cmp(&sj).then(i.cmp(&j))
                    });
                if let Some(i) = far {
                    reseeded[i] = true;
                    next[c] = points[i].clone();
                }
                continue;
            }
            let n = normalize_f64(&sums[c]);
            if n.iter().any(|v| *v != 0.0) {
                next[c] = n;
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    KMeansFit {
        centroids,
        iterations,
    }
}

/// Greedy k-means++: each new center is the best of `2 + ln k` candidates
/// drawn proportionally to squared distance from the chosen set.
fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // all remaining points coincide with chosen centers
            let next = (0..n).find(|i| !chosen.contains(i)).unwrap_or(0);
            chosen.push(next);
            continue;
        }
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let mut target = rng.random_range(0.0..total);
            let mut cand = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    cand = i;
                    break;
                }
                target -= w;
            }
            let new_d2: Vec<f64> = d2
                .iter()
                .zip(points)
                .map(|(&d, p)| d.min(sq_dist(p, &points[cand])))
                .collect();
            let potential: f64 = new_d2.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, cand, new_d2));
            }
        }
        let (_, cand, new_d2) = best.expect("at least one trial");
        chosen.push(cand);
        d2 = new_d2;
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, RleMask};
    use rand_distr::{Distribution, StandardNormal};

    fn labeled(label: usize, e: Vec<f64>) -> DetectionRecord {
        DetectionRecord {
            video_id: "v".into(),
            frame_idx: 0,
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            objectness: 1.0,
            mask: RleMask::empty(1, 1),
            embedding: Embedding::from_f64(&normalize_f64(&e)),
            label: Some(label),
            class_scores: Some(vec![1.0; label + 1]),
        }
    }

    fn gaussian_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        normalize_f64(&(0..d).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>())
    }

    #[test]
    fn k_rule() {
        let r = KRule::default();
        assert_eq!(r.k_for(0), 0);
        assert_eq!(r.k_for(1), 1);
        assert_eq!(r.k_for(64), 1);
        assert_eq!(r.k_for(65), 2);
        assert_eq!(r.k_for(100_000), 32);
        assert_eq!(KRule { divisor: 1, max_k: 32 }.k_for(5), 5);
    }

    #[test]
    fn single_instance_is_its_own_prototype() {
        let d = labeled(2, vec![0.3, -0.4, 0.5]);
        let bank = build_bank(std::slice::from_ref(&d), &KRule::default(), 0).unwrap();
        let p = bank.get(2).unwrap();
        assert_eq!(p.centroids.len(), 1);
        assert_eq!(p.member_count, 1);
        for (a, b) in p.centroids[0].0.iter().zip(&d.embedding.0) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(bank.get(0).is_none());
        let kept = pmf_filter(vec![d], &bank, 0.7).unwrap();
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn antipodal_pair_two_clusters() {
        let dets = vec![labeled(0, vec![1.0, 0.0]), labeled(0, vec![-1.0, 0.0])];
        let rule = KRule { divisor: 1, max_k: 2 };
        let bank = build_bank(&dets, &rule, 3).unwrap();
        let mut cs: Vec<Vec<f32>> = bank.get(0).unwrap().centroids.iter().map(|c| c.0.clone()).collect();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cs, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn recovers_separated_clusters() {
        let d = 16;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let means: Vec<Vec<f64>> = (0..3).map(|_| gaussian_unit(&mut rng, d)).collect();
            let mut dets = Vec::new();
            for m in &means {
                for _ in 0..40 {
                    let p: Vec<f64> = m
                        .iter()
                        .map(|v| v + 0.05 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect();
                    dets.push(labeled(0, p));
                }
            }
            let bank = build_bank(&dets, &KRule { divisor: 40, max_k: 3 }, seed).unwrap();
            let protos = &bank.get(0).unwrap().centroids;
            assert_eq!(protos.len(), 3);
            for c in protos {
                let best = means
                    .iter()
                    .map(|m| c.cosine(&Embedding::from_f64(m)).unwrap())
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(best > 0.99, "seed {seed}: {best}");
            }
        }
    }

    #[test]
    fn orthogonal_instance_dropped() {
        let mut dets = vec![labeled(1, vec![1.0, 0.0, 0.0]); 3];
        let bank = build_bank(&dets, &KRule::default(), 0).unwrap();
        dets.push(labeled(1, vec![0.0, 1.0, 0.0]));
        dets.push(labeled(4, vec![1.0, 0.0, 0.0]));
        let kept = pmf_filter(dets.clone(), &bank, 0.7).unwrap();
        assert_eq!(kept.len(), 3);
        // tau = -1 keeps everything whose class exists
        assert_eq!(pmf_filter(dets, &bank, -1.0).unwrap().len(), 4);
    }

    #[test]
    fn tau_out_of_range() {
        let bank = PrototypeBank::default();
        assert!(pmf_filter(vec![], &bank, 1.5).is_err());
        assert!(pmf_filter(vec![], &bank, -1.01).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dets: Vec<_> = (0..300)
            .map(|i| labeled(i % 3, gaussian_unit(&mut rng, 8)))
            .collect();
        let rule = KRule { divisor: 10, max_k: 8 };
        let a = serde_json::to_string(&build_bank(&dets, &rule, 42).unwrap()).unwrap();
        let b = serde_json::to_string(&build_bank(&dets, &rule, 42).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn retained_sets_shrink_with_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dets: Vec<_> = (0..400)
            .map(|i| labeled(i % 4, gaussian_unit(&mut rng, 6)))
            .collect();
        let bank = build_bank(&dets, &KRule { divisor: 20, max_k: 8 }, 1).unwrap();
        let taus = [-1.0, 0.0, 0.5, 0.7, 0.9];
        let sets: Vec<Vec<DetectionRecord>> = taus
            .iter()
            .map(|&t| pmf_filter(dets.clone(), &bank, t).unwrap())
            .collect();
        assert_eq!(sets[0].len(), dets.len());
        for w in sets.windows(2) {
            assert!(w[1].iter().all(|d| w[0].contains(d)));
        }
        // retained records are untouched
        assert!(sets[3].iter().all(|d| dets.contains(d)));
    }
}
