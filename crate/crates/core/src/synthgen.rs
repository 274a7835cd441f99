//! Synthetic graphs: similarity-quantile wiring over a fixed feature set, and
//! the small constructions used by the theory checks.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::features::{FeatureMatrix, UnitCircleFeatures};
use crate::graph::{Edge, Graph};
use crate::similarity::{graph_similarity, pair_similarity_unchecked};

/// Default cap on the number of node pairs scanned by the quantile generator.
pub const DEFAULT_PAIR_BUDGET: usize = 50_000_000;

const HIST_BINS: usize = 1 << 16;

/// Default sweep over 50-quantiles: the three lowest, four in between, and
/// the three highest.
pub const DEFAULT_SWEEP_INDICES: [usize; 10] = [0, 1, 2, 3, 17, 31, 45, 47, 48, 49];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantileGenSpec {
    pub n_quantiles: usize,
    pub selected_quantiles: Vec<usize>,
    /// Bernoulli keep-probability applied to pairs inside a chosen quantile.
    pub edge_subsample_rate: f64,
    pub pair_budget: usize,
    pub seed: u64,
}

impl Default for QuantileGenSpec {
    fn default() -> Self {
        Self {
            n_quantiles: 50,
            selected_quantiles: DEFAULT_SWEEP_INDICES.to_vec(),
            edge_subsample_rate: 1.0,
            pair_budget: DEFAULT_PAIR_BUDGET,
            seed: 0,
        }
    }
}

impl QuantileGenSpec {
    fn validate(&self, n_nodes: usize) -> Result<()> {
        if n_nodes < 2 {
            return Err(input_err!("quantile graphs need at least 2 nodes"));
        }
        if self.n_quantiles == 0 {
            return Err(input_err!("n_quantiles must be >= 1"));
        }
        if let Some(q) = self.selected_quantiles.iter().find(|&&q| q >= self.n_quantiles) {
            return Err(input_err!("quantile index {q} outside 0..{}", self.n_quantiles));
        }
        if !(self.edge_subsample_rate > 0.0 && self.edge_subsample_rate <= 1.0) {
            return Err(input_err!(
                "edge_subsample_rate must lie in (0, 1], got {}",
                self.edge_subsample_rate
            ));
        }
        let pairs = n_nodes * (n_nodes - 1) / 2;
        if pairs > self.pair_budget {
            return Err(Error::Resource(format!(
                "{n_nodes} nodes give {pairs} pairs, above the budget of {}; lower n or raise the budget",
                self.pair_budget
            )));
        }
        Ok(())
    }
}

/// Summary of one generated quantile graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGraphMeta {
    pub quantile_index: usize,
    pub n_quantiles: usize,
    /// Realized mean edge similarity `K`; `None` for an empty graph.
    pub k_graph: Option<f64>,
    /// Smallest and largest edge similarity.
    pub sim_min: Option<f64>,
    pub sim_max: Option<f64>,
    /// Quantile bounds on pair similarity, lower inclusive.
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub edge_count: usize,
    pub n_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct QuantileGraph {
    pub graph: Graph,
    pub meta: QuantileGraphMeta,
}

fn for_each_pair(fm: &FeatureMatrix, mut f: impl FnMut(usize, usize, f64)) {
    let n = fm.n();
    for u in 0..n {
        for v in (u + 1)..n {
            f(u, v, pair_similarity_unchecked(fm, u, v));
        }
    }
}

fn hist_bin(k: f64) -> usize {
    let t = ((k + 1.0) * 0.5 * HIST_BINS as f64).floor();
    (t.max(0.0) as usize).min(HIST_BINS - 1)
}

/// Exact quantile boundaries of the pair-similarity distribution.
///
/// Returns `b_1..b_{q-1}` where `b_j` is the similarity at sorted rank
/// `floor(j·P/q)` over all `P` pairs. Two streaming passes: a fine histogram
/// locates the bin holding each boundary rank, then only the values in those
/// bins are kept and sorted.
pub fn pair_similarity_boundaries(fm: &FeatureMatrix, n_quantiles: usize) -> Vec<f64> {
    let n = fm.n();
    let total = n * n.saturating_sub(1) / 2;
    if n_quantiles <= 1 || total == 0 {
        return Vec::new();
    }
    let mut counts = vec![0usize; HIST_BINS];
    for_each_pair(fm, |_, _, k| counts[hist_bin(k)] += 1);

    let ranks: Vec<usize> = (1..n_quantiles).map(|j| j * total / n_quantiles).collect();
    let mut cum = 0usize;
    let mut bin_start = vec![0usize; HIST_BINS];
    for (b, c) in counts.iter().enumerate() {
        bin_start[b] = cum;
        cum += c;
    }
    // (bin, offset within bin) for each boundary rank
    let located: Vec<(usize, usize)> = ranks
        .iter()
        .map(|&r| {
            let b = bin_start.partition_point(|&s| s <= r) - 1;
            (b, r - bin_start[b])
        })
        .collect();
    let mut wanted = vec![false; HIST_BINS];
    for &(b, _) in &located {
        wanted[b] = true;
    }
    let mut kept: Vec<Vec<f64>> = vec![Vec::new(); HIST_BINS];
    for_each_pair(fm, |_, _, k| {
        let b = hist_bin(k);
        if wanted[b] {
            kept[b].push(k);
        }
    });
    for b in 0..HIST_BINS {
        if wanted[b] {
            kept[b].sort_by(f64::total_cmp);
        }
    }
    located.iter().map(|&(b, off)| kept[b][off]).collect()
}

/// Index of the quantile containing `k` (lower bound inclusive).
fn quantile_of(boundaries: &[f64], k: f64) -> usize {
    boundaries.partition_point(|&b| b <= k)
}

/// Generates one graph per selected quantile over the shared features.
///
/// A pair `(u, v)` becomes an edge of the graph for quantile `j` when its
/// similarity lies in `[b_j, b_{j+1})` (the last quantile is closed above).
pub fn generate_quantile_graphs(fm: &FeatureMatrix, spec: &QuantileGenSpec) -> Result<Vec<QuantileGraph>> {
    let n = fm.n();
    spec.validate(n)?;
    let boundaries = pair_similarity_boundaries(fm, spec.n_quantiles);

    let mut slot = vec![usize::MAX; spec.n_quantiles];
    for (i, &q) in spec.selected_quantiles.iter().enumerate() {
        slot[q] = i;
    }
    let mut edges: Vec<Vec<Edge>> = vec![Vec::new(); spec.selected_quantiles.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let subsample = spec.edge_subsample_rate < 1.0;
    for_each_pair(fm, |u, v, k| {
        let s = slot[quantile_of(&boundaries, k)];
        if s == usize::MAX {
            return;
        }
        if subsample && !rng.random_bool(spec.edge_subsample_rate) {
            return;
        }
        edges[s].push((u, v));
    });

    spec.selected_quantiles
        .iter()
        .zip(edges)
        .map(|(&q, e)| {
            let graph = Graph::new(n, &e)?;
            let sims: Vec<f64> = graph
                .edges()
                .iter()
                .map(|&(u, v)| pair_similarity_unchecked(fm, u, v))
                .collect();
            let k_graph = if graph.n_edges() > 0 {
                Some(graph_similarity(fm, &graph)?)
            } else {
                None
            };
            let meta = QuantileGraphMeta {
                quantile_index: q,
                n_quantiles: spec.n_quantiles,
                k_graph,
                sim_min: sims.iter().copied().reduce(f64::min),
                sim_max: sims.iter().copied().reduce(f64::max),
                lower_bound: if q == 0 { -1.0 } else { boundaries[q - 1] },
                upper_bound: if q + 1 == spec.n_quantiles { 1.0 } else { boundaries[q] },
                edge_count: graph.n_edges(),
                n_nodes: n,
            };
            Ok(QuantileGraph { graph, meta })
        })
        .collect()
}

/// Single-quantile convenience wrapper around [`generate_quantile_graphs`].
pub fn generate_quantile_graph(
    fm: &FeatureMatrix,
    spec: &QuantileGenSpec,
    index: usize,
) -> Result<QuantileGraph> {
    let single = QuantileGenSpec {
        selected_quantiles: vec![index],
        ..spec.clone()
    };
    Ok(generate_quantile_graphs(fm, &single)?.pop().expect("one graph"))
}

/// Which side of the threshold(s) becomes an edge in a threshold graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Edge iff `cos(θ_u − θ_v) >= M`.
    Homophilic,
    /// Edge iff `cos(θ_u − θ_v) <= M`.
    Heterophilic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TheoryGraphSpec {
    /// Two feature blocks wired as a `d`-regular bipartite circulant.
    TwoFeatureHeterophilic {
        degree: usize,
        theta1: f64,
        theta2: f64,
        block_size: usize,
    },
    /// Random unit-circle angles connected by a similarity threshold.
    UnitCircleThresholded {
        threshold: f64,
        mode: ThresholdMode,
        n_nodes: usize,
        seed: u64,
    },
    /// Random unit-circle angles connected iff `lo <= cos(θ_u − θ_v) <= hi`.
    UnitCircleBand {
        lo: f64,
        hi: f64,
        n_nodes: usize,
        seed: u64,
    },
}

/// Builds the two-feature heterophilic graph used for the degree-shift
/// analysis. Nodes `0..b` carry `(cos θ1, sin θ1)` and nodes `b..2b` carry
/// `(cos θ2, sin θ2)`; node `i` of the first block links to nodes
/// `b + (i + j) mod b` for `j < d`, so every node has degree exactly `d`.
pub fn generate_two_feature_graph(
    degree: usize,
    theta1: f64,
    theta2: f64,
    block_size: usize,
) -> Result<(Graph, FeatureMatrix)> {
    if block_size < degree.max(1) {
        return Err(input_err!(
            "degree {degree} needs blocks of at least {} nodes, got {block_size}",
            degree.max(1)
        ));
    }
    let b = block_size;
    let mut edges = Vec::with_capacity(b * degree);
    for i in 0..b {
        for j in 0..degree {
            edges.push((i, b + (i + j) % b));
        }
    }
    let angles: Vec<f64> = (0..2 * b).map(|v| if v < b { theta1 } else { theta2 }).collect();
    let feats = UnitCircleFeatures::new(angles)?.to_feature_matrix()?;
    Ok((Graph::new(2 * b, &edges)?, feats))
}

fn random_angles(n_nodes: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_nodes).map(|_| rng.random_range(0.0..2.0 * PI)).collect()
}

fn connect_by(angles: &[f64], keep: impl Fn(f64) -> bool) -> Vec<Edge> {
    let n = angles.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if keep((angles[u] - angles[v]).cos()) {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Random unit-circle graph whose edges and non-edges are separated exactly
/// at `threshold` in raw cosine similarity.
pub fn generate_threshold_graph(
    threshold: f64,
    mode: ThresholdMode,
    n_nodes: usize,
    seed: u64,
) -> Result<(Graph, UnitCircleFeatures)> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(input_err!("threshold must lie in [-1, 1], got {threshold}"));
    }
    let angles = random_angles(n_nodes, seed);
    let edges = match mode {
        ThresholdMode::Homophilic => connect_by(&angles, |c| c >= threshold),
        ThresholdMode::Heterophilic => connect_by(&angles, |c| c <= threshold),
    };
    Ok((Graph::new(n_nodes, &edges)?, UnitCircleFeatures::new(angles)?))
}

/// Random unit-circle graph with edges exactly on the similarity band
/// `[lo, hi]`: the gated construction.
pub fn generate_band_graph(
    lo: f64,
    hi: f64,
    n_nodes: usize,
    seed: u64,
) -> Result<(Graph, UnitCircleFeatures)> {
    if lo > hi {
        return Err(input_err!("band bounds must satisfy lo <= hi, got [{lo}, {hi}]"));
    }
    let angles = random_angles(n_nodes, seed);
    let edges = connect_by(&angles, |c| lo <= c && c <= hi);
    Ok((Graph::new(n_nodes, &edges)?, UnitCircleFeatures::new(angles)?))
}
