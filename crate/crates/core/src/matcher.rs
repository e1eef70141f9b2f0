//! Descriptor matching between two observations: mutual-best matches above
//! a similarity threshold, aggregate match confidence and the matched-span
//! ratio used by the stop rule.

use serde::{Deserialize, Serialize};

use crate::world::Observation;
use crate::{Error, Result};

/// Minimum descriptor dot product for a match.
pub const DESCRIPTOR_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `2 |pairs| / (|detections A| + |detections B|)`.
    pub confidence: f64,
    /// Matched (ray in A, ray in B), ordered by A's detection order.
    pub pairs: Vec<(usize, usize)>,
    /// Span of matched rays in A divided by the ray count; 0 without pairs.
    pub area_ratio: f64,
}

impl MatchResult {
    pub fn empty() -> Self {
        Self {
            confidence: 0.0,
            pairs: Vec::new(),
            area_ratio: 0.0,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the best-scoring candidate; ties go to the lowest index.
fn argmax(scores: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

pub fn match_with_threshold(a: &Observation, b: &Observation, threshold: f64) -> MatchResult {
    let (da, db) = (&a.detections, &b.detections);
    if da.is_empty() || db.is_empty() {
        return MatchResult::empty();
    }
    let best_in_b: Vec<(usize, f64)> = da
        .iter()
        .map(|x| argmax(db.iter().map(|y| dot(&x.descriptor, &y.descriptor))).unwrap())
        .collect();
    let best_in_a: Vec<usize> = db
        .iter()
        .map(|y| argmax(da.iter().map(|x| dot(&x.descriptor, &y.descriptor))).unwrap().0)
        .collect();
    let pairs: Vec<(usize, usize)> = best_in_b
        .iter()
        .enumerate()
        .filter(|&(i, &(j, s))| s >= threshold && best_in_a[j] == i)
        .map(|(i, &(j, _))| (da[i].ray, db[j].ray))
        .collect();
    let confidence = 2.0 * pairs.len() as f64 / (da.len() + db.len()) as f64;
    let area_ratio = match (
        pairs.iter().map(|p| p.0).min(),
        pairs.iter().map(|p| p.0).max(),
    ) {
        (Some(lo), Some(hi)) => ((hi - lo + 1) as f64 / a.rays() as f64).min(1.0),
        _ => 0.0,
    };
    MatchResult {
        confidence,
        pairs,
        area_ratio,
    }
}

pub fn match_observations(a: &Observation, b: &Observation) -> MatchResult {
    match_with_threshold(a, b, DESCRIPTOR_THRESHOLD)
}

/// Mean matched ray index in A, rounded to the nearest ray.
pub fn matched_centroid(result: &MatchResult, a: &Observation) -> Result<usize> {
    if result.pairs.is_empty() {
        return Err(Error::NoMatches);
    }
    let mean = result.pairs.iter().map(|p| p.0 as f64).sum::<f64>() / result.pairs.len() as f64;
    Ok((mean.round() as usize).min(a.rays().saturating_sub(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Detection;
    use proptest::prelude::*;

    fn basis(dim: usize, k: usize) -> Vec<f64> {
        (0..dim).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
    }

    fn obs(rays: usize, dets: &[(usize, usize)]) -> Observation {
        Observation {
            depth: vec![1.0; rays],
            appearance: vec![0.0; rays * 3],
            detections: dets
                .iter()
                .map(|&(ray, k)| Detection {
                    ray,
                    descriptor: basis(96, k),
                    depth: 1.0,
                })
                .collect(),
        }
    }

    /// All-pairs mutual-best check written independently of the matcher.
    fn brute_force_pairs(a: &Observation, b: &Observation, tau: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, x) in a.detections.iter().enumerate() {
            for (j, y) in b.detections.iter().enumerate() {
                let s = dot(&x.descriptor, &y.descriptor);
                if s < tau {
                    continue;
                }
                let row_best = b.detections.iter().enumerate().all(|(j2, y2)| {
                    let s2 = dot(&x.descriptor, &y2.descriptor);
                    s2 < s || (s2 == s && j2 >= j)
                });
                let col_best = a.detections.iter().enumerate().all(|(i2, x2)| {
                    let s2 = dot(&x2.descriptor, &y.descriptor);
                    s2 < s || (s2 == s && i2 >= i)
                });
                if row_best && col_best {
                    out.push((x.ray, y.ray));
                }
            }
        }
        out
    }

    #[test]
    fn self_match_is_perfect() {
        let a = obs(128, &[(3, 0), (40, 1), (90, 2)]);
        let m = match_observations(&a, &a);
        assert_eq!(m.confidence, 1.0);
        assert_eq!(m.pairs.len(), 3);
    }

    #[test]
    fn orthogonal_sets_do_not_match() {
        let a = obs(128, &[(3, 0), (40, 1)]);
        let b = obs(128, &[(3, 5), (40, 6)]);
        let m = match_observations(&a, &b);
        assert_eq!(m.confidence, 0.0);
        assert!(m.pairs.is_empty());
        assert_eq!(m.area_ratio, 0.0);
    }

    #[test]
    fn four_shared_of_six() {
        let a = obs(128, &[(10, 0), (20, 1), (30, 2), (40, 3), (50, 10), (60, 11)]);
        let b = obs(128, &[(5, 0), (25, 1), (45, 2), (65, 3), (85, 20), (105, 21)]);
        let m = match_observations(&a, &b);
        assert_eq!(m.pairs, brute_force_pairs(&a, &b, DESCRIPTOR_THRESHOLD));
        assert_eq!(m.pairs.len(), 4);
        assert!((m.confidence - 8.0 / 12.0).abs() < 1e-15);
        assert!((m.area_ratio - 31.0 / 128.0).abs() < 1e-15);
    }

    #[test]
    fn empty_detections_give_zero() {
        let a = obs(128, &[]);
        let b = obs(128, &[(3, 0)]);
        assert_eq!(match_observations(&a, &b), MatchResult::empty());
    }

    #[test]
    fn centroid_examples() {
        let a = obs(128, &[]);
        let mk = |rays: &[usize]| MatchResult {
            confidence: 1.0,
            pairs: rays.iter().map(|&r| (r, r)).collect(),
            area_ratio: 0.0,
        };
        assert_eq!(matched_centroid(&mk(&[10, 20, 30]), &a).unwrap(), 20);
        assert_eq!(matched_centroid(&mk(&[64]), &a).unwrap(), 64);
        assert_eq!(matched_centroid(&mk(&[0, 1, 127]), &a).unwrap(), 43);
        assert!(matches!(matched_centroid(&mk(&[]), &a), Err(Error::NoMatches)));
    }

    fn noisy(rng_vals: &[f64], k: usize, dim: usize) -> Vec<f64> {
        let mut v = basis(dim, k % dim);
        for (x, n) in v.iter_mut().zip(rng_vals) {
            *x += 0.3 * n;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    fn scene() -> impl Strategy<Value = (Observation, Observation)> {
        (
            proptest::collection::vec((0usize..128, 0usize..12, proptest::collection::vec(-1.0f64..1.0, 12)), 0..8),
            proptest::collection::vec((0usize..128, 0usize..12, proptest::collection::vec(-1.0f64..1.0, 12)), 0..8),
        )
            .prop_map(|(da, db)| {
                let mk = |d: Vec<(usize, usize, Vec<f64>)>| Observation {
                    depth: vec![1.0; 128],
                    appearance: vec![0.0; 384],
                    detections: d
                        .into_iter()
                        .map(|(ray, k, n)| Detection {
                            ray,
                            descriptor: noisy(&n, k, 12),
                            depth: 1.0,
                        })
                        .collect(),
                };
                (mk(da), mk(db))
            })
    }

    proptest! {
        #[test]
        fn confidence_is_symmetric((a, b) in scene()) {
            let ab = match_observations(&a, &b);
            let ba = match_observations(&b, &a);
            prop_assert_eq!(ab.confidence, ba.confidence);
            prop_assert!((0.0..=1.0).contains(&ab.area_ratio));
            prop_assert!((0.0..=1.0).contains(&ab.confidence));
            prop_assert_eq!(ab.pairs, brute_force_pairs(&a, &b, DESCRIPTOR_THRESHOLD));
        }

        #[test]
        fn removing_shared_landmark_never_raises_confidence(
            shared in proptest::collection::btree_set(0usize..40, 1..8),
            only_a in proptest::collection::btree_set(40usize..60, 0..5),
            only_b in proptest::collection::btree_set(60usize..80, 0..5),
            drop_idx in 0usize..8,
        ) {
            let shared: Vec<usize> = shared.into_iter().collect();
            let build = |ids: Vec<usize>| obs(128, &ids.iter().enumerate().map(|(i, &k)| (i * 7 % 128, k)).collect::<Vec<_>>());
            let a_ids: Vec<usize> = shared.iter().copied().chain(only_a.iter().copied()).collect();
            let b_ids: Vec<usize> = shared.iter().copied().chain(only_b.iter().copied()).collect();
            let before = match_observations(&build(a_ids.clone()), &build(b_ids.clone())).confidence;
            let gone = shared[drop_idx % shared.len()];
            let a2: Vec<usize> = a_ids.into_iter().filter(|&k| k != gone).collect();
            let b2: Vec<usize> = b_ids.into_iter().filter(|&k| k != gone).collect();
            let after = match_observations(&build(a2), &build(b2)).confidence;
            prop_assert!(after <= before + 1e-15);
        }
    }
}
