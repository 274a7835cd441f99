//! Mean-centered cosine similarity, graph feature similarity, empirical
//! edge/non-edge similarity profiles and the task classifier built on them.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, input_err, Result};
use crate::features::FeatureMatrix;
use crate::graph::Graph;

/// Default tolerated fraction of samples allowed on the wrong side of a
/// threshold when classifying a task.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Positive samples are uniformly subsampled above this many edges.
pub const POSITIVE_SAMPLE_CAP: usize = 1_000_000;

const REJECTION_FACTOR: usize = 1000;

/// `k(u, v)`: cosine of the mean-centered features of `u` and `v`.
///
/// Zero when either node has a degenerate centered feature.
pub fn pair_similarity(fm: &FeatureMatrix, u: usize, v: usize) -> Result<f64> {
    let n = fm.n();
    if u >= n || v >= n {
        return Err(input_err!("node id out of range: ({u}, {v}) with n = {n}"));
    }
    Ok(pair_similarity_unchecked(fm, u, v))
}

pub(crate) fn pair_similarity_unchecked(fm: &FeatureMatrix, u: usize, v: usize) -> f64 {
    let a = fm.centered_unit_row(u);
    let b = fm.centered_unit_row(v);
    a.dot(&b).clamp(-1.0, 1.0)
}

/// `K`: average pair similarity over all edges of `g`.
pub fn graph_similarity(fm: &FeatureMatrix, g: &Graph) -> Result<f64> {
    if g.n_edges() == 0 {
        return Err(domain_err!("graph similarity is undefined for an empty edge set"));
    }
    if fm.n() != g.n_nodes() {
        return Err(input_err!("features cover {} nodes, graph has {}", fm.n(), g.n_nodes()));
    }
    let sum: f64 = g
        .edges()
        .iter()
        .map(|&(u, v)| pair_similarity_unchecked(fm, u, v))
        .sum();
    Ok(sum / g.n_edges() as f64)
}

/// Empirical similarity distributions of edges and non-edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    /// Sorted ascending.
    pub pos_samples: Vec<f64>,
    /// Sorted ascending.
    pub neg_samples: Vec<f64>,
    /// Mean similarity over all edges.
    pub k_graph: f64,
    pub epsilon: f64,
}

/// Builds the edge and non-edge similarity profiles.
///
/// Non-edges are approximated by uniform random node pairs, rejecting
/// self-pairs and edges.
pub fn build_profile(
    fm: &FeatureMatrix,
    g: &Graph,
    n_neg_samples: usize,
    seed: u64,
) -> Result<SimilarityProfile> {
    if n_neg_samples == 0 {
        return Err(input_err!("n_neg_samples must be >= 1"));
    }
    let k_graph = graph_similarity(fm, g)?;
    let n = g.n_nodes();
    let total_pairs = n * n.saturating_sub(1) / 2;
    if total_pairs <= g.n_edges() {
        return Err(domain_err!(
            "graph on {n} nodes with {} edges has no non-edges to sample",
            g.n_edges()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let edges = g.edges();
    let mut pos_samples: Vec<f64> = if edges.len() > POSITIVE_SAMPLE_CAP {
        sample_indices(&mut rng, edges.len(), POSITIVE_SAMPLE_CAP)
            .into_iter()
            .map(|i| pair_similarity_unchecked(fm, edges[i].0, edges[i].1))
            .collect()
    } else {
        edges
            .iter()
            .map(|&(u, v)| pair_similarity_unchecked(fm, u, v))
            .collect()
    };

    let mut neg_samples = Vec::with_capacity(n_neg_samples);
    let mut attempts = 0usize;
    while neg_samples.len() < n_neg_samples {
        attempts += 1;
        if attempts > REJECTION_FACTOR * n_neg_samples {
            return Err(domain_err!("non-edge sampling exceeded its retry budget"));
        }
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v || g.has_edge(u, v) {
            continue;
        }
        neg_samples.push(pair_similarity_unchecked(fm, u, v));
    }

    pos_samples.sort_by(f64::total_cmp);
    neg_samples.sort_by(f64::total_cmp);
    Ok(SimilarityProfile {
        pos_samples,
        neg_samples,
        k_graph,
        epsilon: DEFAULT_EPSILON,
    })
}

/// Kind of link prediction task implied by a similarity profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Homophilic,
    Heterophilic,
    Gated,
    Unclassified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskClassification {
    pub kind: TaskKind,
    /// Threshold for homophilic/heterophilic tasks.
    pub m: Option<f64>,
    /// Lower gate bound.
    pub m1: Option<f64>,
    /// Upper gate bound.
    pub m2: Option<f64>,
}

/// Lower empirical `p`-quantile of an ascending sample: the smallest value
/// whose empirical CDF reaches `p`.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let n = sorted.len();
    let idx = ((p * n as f64) - 1e-9).ceil() as isize - 1;
    sorted[idx.clamp(0, n as isize - 1) as usize]
}

/// Classifies a task by quantile comparison of the two profiles.
///
/// With `ε = profile.epsilon` and `q_p` the lower empirical quantile:
/// homophilic when `q_ε(pos) > q_{1-ε}(neg)`; heterophilic when
/// `q_{1-ε}(pos) < q_ε(neg)`; gated when more than an `ε` fraction of the
/// negatives lies on each side of `[q_ε(pos), q_{1-ε}(pos)]`.
pub fn classify_task(profile: &SimilarityProfile) -> Result<TaskClassification> {
    let pos = &profile.pos_samples;
    let neg = &profile.neg_samples;
    if pos.is_empty() || neg.is_empty() {
        return Err(domain_err!("task classification needs positive and negative samples"));
    }
    let eps = profile.epsilon;
    if !(0.0..0.5).contains(&eps) {
        return Err(input_err!("epsilon must lie in [0, 0.5), got {eps}"));
    }
    let pos_lo = empirical_quantile(pos, eps);
    let pos_hi = empirical_quantile(pos, 1.0 - eps);
    let neg_lo = empirical_quantile(neg, eps);
    let neg_hi = empirical_quantile(neg, 1.0 - eps);

    if pos_lo > neg_hi {
        return Ok(TaskClassification {
            kind: TaskKind::Homophilic,
            m: Some(pos_lo),
            m1: None,
            m2: None,
        });
    }
    if pos_hi < neg_lo {
        return Ok(TaskClassification {
            kind: TaskKind::Heterophilic,
            m: Some(pos_hi),
            m1: None,
            m2: None,
        });
    }
    let below = neg.partition_point(|&x| x < pos_lo) as f64 / neg.len() as f64;
    let above = (neg.len() - neg.partition_point(|&x| x <= pos_hi)) as f64 / neg.len() as f64;
    if below > eps && above > eps {
        return Ok(TaskClassification {
            kind: TaskKind::Gated,
            m: None,
            m1: Some(pos_lo),
            m2: Some(pos_hi),
        });
    }
    Ok(TaskClassification {
        kind: TaskKind::Unclassified,
        m: None,
        m1: None,
        m2: None,
    })
}

/// Counts of samples in `bins` equal-width bins over `[-1, 1]`.
pub fn histogram(samples: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    for &s in samples {
        let t = ((s + 1.0) / 2.0 * bins as f64).floor();
        let b = (t.max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::gaussian_features;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn profile(pos: &[f64], neg: &[f64], eps: f64) -> SimilarityProfile {
        let mut pos = pos.to_vec();
        let mut neg = neg.to_vec();
        pos.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        SimilarityProfile {
            pos_samples: pos,
            neg_samples: neg,
            k_graph: 0.0,
            epsilon: eps,
        }
    }

    /// Independent scalar routine: centre by hand and take the cosine.
    fn oracle_similarity(x: &[[f64; 2]], u: usize, v: usize) -> f64 {
        let n = x.len() as f64;
        let mean = [
            x.iter().map(|r| r[0]).sum::<f64>() / n,
            x.iter().map(|r| r[1]).sum::<f64>() / n,
        ];
        let a = [x[u][0] - mean[0], x[u][1] - mean[1]];
        let b = [x[v][0] - mean[0], x[v][1] - mean[1]];
        (a[0] * b[0] + a[1] * b[1]) / ((a[0] * a[0] + a[1] * a[1]).sqrt() * (b[0] * b[0] + b[1] * b[1]).sqrt())
    }

    #[test]
    fn similarity_hand_examples() {
        let x = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let fm = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let k = pair_similarity(&fm, 0, 1).unwrap();
        assert!((k - oracle_similarity(&x, 0, 1)).abs() < 1e-12);
        assert!((k + 0.8).abs() < 1e-12);

        // identical and antipodal centered vectors
        let fm = FeatureMatrix::new(array![[1.0, 2.0], [1.0, 2.0], [-1.0, -2.0], [-1.0, -2.0]]).unwrap();
        assert!((pair_similarity(&fm, 0, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((pair_similarity(&fm, 0, 2).unwrap() + 1.0).abs() < 1e-12);
        assert!(pair_similarity(&fm, 0, 9).is_err());
    }

    #[test]
    fn graph_similarity_examples() {
        let fm = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let g = Graph::new(3, &[(0, 1)]).unwrap();
        assert!((graph_similarity(&fm, &g).unwrap() + 0.8).abs() < 1e-12);

        let fm = FeatureMatrix::new(array![[1.0, 2.0], [1.0, 2.0], [-1.0, -2.0], [-1.0, -2.0]]).unwrap();
        let g = Graph::new(4, &[(0, 1), (2, 3)]).unwrap();
        assert!((graph_similarity(&fm, &g).unwrap() - 1.0).abs() < 1e-12);

        let empty = Graph::new(4, &[]).unwrap();
        assert!(matches!(graph_similarity(&fm, &empty), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn profile_errors_and_determinism() {
        let fm = gaussian_features(3, 2, 1).unwrap();
        let k3 = Graph::new(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        assert!(matches!(build_profile(&fm, &k3, 10, 0), Err(crate::Error::Domain(_))));

        let fm = gaussian_features(30, 4, 1).unwrap();
        let g = Graph::new(30, &[(0, 1), (2, 3), (4, 5), (6, 9)]).unwrap();
        let a = build_profile(&fm, &g, 100, 7).unwrap();
        let b = build_profile(&fm, &g, 100, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.neg_samples.len(), 100);
        assert!(a.neg_samples.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn constant_features_give_zero_samples() {
        let fm = FeatureMatrix::new(Array2::from_elem((6, 3), 2.5)).unwrap();
        let g = Graph::new(6, &[(0, 1), (2, 3)]).unwrap();
        let p = build_profile(&fm, &g, 20, 1).unwrap();
        assert!(p.pos_samples.iter().chain(&p.neg_samples).all(|&s| s == 0.0));
    }

    #[test]
    fn classify_examples() {
        let c = classify_task(&profile(&[0.6, 0.9], &[0.1, 0.3], 0.0)).unwrap();
        assert_eq!((c.kind, c.m), (TaskKind::Homophilic, Some(0.6)));
        let c = classify_task(&profile(&[-0.9, -0.7], &[0.2, 0.5], 0.0)).unwrap();
        assert_eq!((c.kind, c.m), (TaskKind::Heterophilic, Some(-0.7)));
        let c = classify_task(&profile(&[-0.2, 0.2], &[-0.8, 0.8], 0.0)).unwrap();
        assert_eq!((c.kind, c.m1, c.m2), (TaskKind::Gated, Some(-0.2), Some(0.2)));
        let c = classify_task(&profile(&[-0.5, 0.5], &[-0.4, 0.4], 0.0)).unwrap();
        assert_eq!(c.kind, TaskKind::Unclassified);
        assert!(classify_task(&profile(&[], &[0.1], 0.0)).is_err());
    }

    #[test]
    fn quantile_picks_lower_inverse_cdf() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&s, 0.05), 5.0);
        assert_eq!(empirical_quantile(&s, 0.95), 95.0);
        assert_eq!(empirical_quantile(&s, 0.0), 1.0);
        assert_eq!(empirical_quantile(&s, 1.0), 100.0);
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[-1.0, -0.999, 0.0, 1.0], 64);
        assert_eq!(h[0], 2);
        assert_eq!(h[32], 1);
        assert_eq!(h[63], 1);
        assert_eq!(h.iter().sum::<usize>(), 4);
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric_and_scale_invariant(
            data in proptest::collection::vec(-10.0f64..10.0, 15),
            c in 0.01f64..100.0,
        ) {
            let rows = Array2::from_shape_vec((5, 3), data).unwrap();
            let fm = FeatureMatrix::new(rows.clone()).unwrap();
            let scaled = FeatureMatrix::new(rows * c).unwrap();
            for u in 0..5 {
                for v in 0..5 {
                    let k = pair_similarity(&fm, u, v).unwrap();
                    prop_assert_eq!(k, pair_similarity(&fm, v, u).unwrap());
                    prop_assert!((-1.0..=1.0).contains(&k));
                    if !fm.is_degenerate(u) && !fm.is_degenerate(v) {
                        prop_assert!((k - pair_similarity(&scaled, u, v).unwrap()).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn swapped_profiles_are_never_both_homophilic(
            pos in proptest::collection::vec(-1.0f64..1.0, 1..20),
            neg in proptest::collection::vec(-1.0f64..1.0, 1..20),
            eps in 0.0f64..0.45,
        ) {
            let a = classify_task(&profile(&pos, &neg, eps)).unwrap();
            let b = classify_task(&profile(&neg, &pos, eps)).unwrap();
            prop_assert!(!(a.kind == TaskKind::Homophilic && b.kind == TaskKind::Homophilic));
        }
    }
}
