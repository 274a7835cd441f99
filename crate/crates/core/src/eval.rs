//! Ranking metrics, degree × similarity bucketing and evaluation reports.

use std::fmt::Write as _;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, input_err, Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::{Edge, Graph};
use crate::model::EmbeddingScorer;
use crate::similarity::{empirical_quantile, pair_similarity_unchecked};

/// Rejection attempts per requested negative before giving up.
pub const NEGATIVE_RETRY_CAP: usize = 10_000;

/// Anything that assigns a real score to a node pair.
pub trait LinkScorer: Sync {
    fn n_nodes(&self) -> usize;
    fn score(&self, u: usize, v: usize) -> f64;
}

impl LinkScorer for EmbeddingScorer<'_> {
    fn n_nodes(&self) -> usize {
        EmbeddingScorer::n_nodes(self)
    }

    fn score(&self, u: usize, v: usize) -> f64 {
        EmbeddingScorer::score(self, u, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mrr,
    Hits,
}

/// Which endpoint of a positive gets replaced when drawing negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    #[default]
    Second,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub metric: MetricKind,
    /// MRR: negatives per positive. Hits@K: size of the shared negative set.
    pub n_neg: usize,
    pub hits_k: usize,
    pub corruption: Corruption,
    pub seed: u64,
    /// Worker threads over test positives; results do not depend on it.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metric: MetricKind::Mrr,
            n_neg: 1000,
            hits_k: 50,
            corruption: Corruption::Second,
            seed: 0,
            threads: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_neg == 0 {
            return Err(input_err!("n_neg must be at least 1"));
        }
        if self.hits_k == 0 {
            return Err(input_err!("hits_k must be at least 1"));
        }
        Ok(())
    }

    pub fn metric_name(&self) -> String {
        match self.metric {
            MetricKind::Mrr => "mrr".to_string(),
            MetricKind::Hits => format!("hits@{}", self.hits_k),
        }
    }
}

/// `1 / (1 + #{neg > pos} + ½·#{neg == pos})`.
pub fn reciprocal_rank(pos: f64, negs: &[f64]) -> f64 {
    let mut above = 0.0;
    for &s in negs {
        if s > pos {
            above += 1.0;
        } else if s == pos {
            above += 0.5;
        }
    }
    1.0 / (1.0 + above)
}

/// Fraction of positives scoring strictly above the `k`-th largest negative.
pub fn hits_fraction(pos: &[f64], negs: &[f64], k: usize) -> f64 {
    if pos.is_empty() {
        return 0.0;
    }
    hits_flags(pos, negs, k).iter().sum::<f64>() / pos.len() as f64
}

fn hits_flags(pos: &[f64], negs: &[f64], k: usize) -> Vec<f64> {
    let k = k.max(1);
    if k >= negs.len() {
        return vec![1.0; pos.len()];
    }
    let mut sorted = negs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let cut = sorted[k - 1];
    pos.iter().map(|&p| if p > cut { 1.0 } else { 0.0 }).collect()
}

pub(crate) fn draw_corruption(
    rng: &mut ChaCha8Rng,
    exclude: &Graph,
    (u, v): Edge,
    mode: Corruption,
) -> Result<Edge> {
    let n = exclude.n_nodes();
    let keep_first = match mode {
        Corruption::Second => true,
        Corruption::Both => rng.random_bool(0.5),
    };
    let anchor = if keep_first { u } else { v };
    for _ in 0..NEGATIVE_RETRY_CAP {
        let w = rng.random_range(0..n);
        if w != anchor && !exclude.has_edge(anchor, w) {
            return Ok((anchor, w));
        }
    }
    Err(Error::Resource(format!(
        "no non-edge found for node {anchor} after {NEGATIVE_RETRY_CAP} draws; graph too dense"
    )))
}

fn check_pairs(n: usize, pairs: &[Edge]) -> Result<()> {
    match pairs.iter().find(|&&(u, v)| u >= n || v >= n) {
        Some(&(u, v)) => Err(input_err!("pair ({u}, {v}) out of range for {n} nodes")),
        None => Ok(()),
    }
}

fn parallel_map<T: Send, F>(len: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T> + Sync,
{
    let threads = threads.max(1).min(len.max(1));
    if threads == 1 {
        return (0..len).map(&f).collect();
    }
    let chunk = len.div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &f;
                s.spawn(move || (t * chunk..((t + 1) * chunk).min(len)).map(f).collect::<Result<Vec<T>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(len);
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// Reciprocal rank of each positive against its own corruption negatives.
/// The negatives of positive `i` come from stream `i` of the seed, so the
/// result does not depend on the number of workers.
pub fn reciprocal_ranks<S: LinkScorer + ?Sized>(
    scorer: &S,
    exclude: &Graph,
    positives: &[Edge],
    cfg: &EvalConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_pairs(exclude.n_nodes().min(scorer.n_nodes()), positives)?;
    parallel_map(positives.len(), cfg.threads, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let (u, v) = positives[i];
        let pos = scorer.score(u, v);
        let mut negs = Vec::with_capacity(cfg.n_neg);
        for _ in 0..cfg.n_neg {
            let (a, b) = draw_corruption(&mut rng, exclude, (u, v), cfg.corruption)?;
            negs.push(scorer.score(a, b));
        }
        Ok(reciprocal_rank(pos, &negs))
    })
}

pub fn mrr<S: LinkScorer + ?Sized>(scorer: &S, exclude: &Graph, positives: &[Edge], cfg: &EvalConfig) -> Result<f64> {
    if positives.is_empty() {
        return Err(domain_err!("MRR needs at least one positive"));
    }
    let rr = reciprocal_ranks(scorer, exclude, positives, cfg)?;
    Ok(rr.iter().sum::<f64>() / rr.len() as f64)
}

/// Shared negative set: `n_neg` uniform non-edges, self pairs excluded.
pub fn shared_negatives(exclude: &Graph, n_neg: usize, seed: u64) -> Result<Vec<Edge>> {
    let n = exclude.n_nodes();
    if n < 2 {
        return Err(domain_err!("need at least two nodes to draw negatives"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_neg);
    for _ in 0..n_neg {
        let u = rng.random_range(0..n);
        out.push(draw_corruption(&mut rng, exclude, (u, u), Corruption::Second)?);
    }
    Ok(out)
}

fn hit_flags_for<S: LinkScorer + ?Sized>(
    scorer: &S,
    exclude: &Graph,
    positives: &[Edge],
    cfg: &EvalConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_pairs(exclude.n_nodes().min(scorer.n_nodes()), positives)?;
    let negs: Vec<f64> = shared_negatives(exclude, cfg.n_neg, cfg.seed)?
        .into_iter()
        .map(|(a, b)| scorer.score(a, b))
        .collect();
    let pos: Vec<f64> = positives.iter().map(|&(u, v)| scorer.score(u, v)).collect();
    Ok(hits_flags(&pos, &negs, cfg.hits_k))
}

pub fn hits_at_k<S: LinkScorer + ?Sized>(
    scorer: &S,
    exclude: &Graph,
    positives: &[Edge],
    cfg: &EvalConfig,
) -> Result<f64> {
    if positives.is_empty() {
        return Err(domain_err!("Hits@K needs at least one positive"));
    }
    let flags = hit_flags_for(scorer, exclude, positives, cfg)?;
    Ok(flags.iter().sum::<f64>() / flags.len() as f64)
}

/// Per-positive metric values (reciprocal rank or 0/1 hit).
pub fn per_positive<S: LinkScorer + ?Sized>(
    scorer: &S,
    exclude: &Graph,
    positives: &[Edge],
    cfg: &EvalConfig,
) -> Result<Vec<f64>> {
    match cfg.metric {
        MetricKind::Mrr => reciprocal_ranks(scorer, exclude, positives, cfg),
        MetricKind::Hits => hit_flags_for(scorer, exclude, positives, cfg),
    }
}

/// Effective bucket boundaries: lower empirical quantiles at `probs`, kept
/// only when strictly increasing and below the maximum.
fn effective_boundaries(values: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = *sorted.last().expect("nonempty");
    let mut out: Vec<f64> = Vec::new();
    for &p in probs {
        let q = empirical_quantile(&sorted, p);
        if q < max && out.last().is_none_or(|&l| q > l) {
            out.push(q);
        }
    }
    out
}

fn bucket_of(value: f64, bounds: &[f64]) -> usize {
    bounds.iter().filter(|&&b| value > b).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketEdges {
    pub degree: Vec<f64>,
    pub similarity: Vec<f64>,
}

/// Grid position of every test edge plus the boundaries used.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketAssignment {
    pub edges: BucketEdges,
    pub n_degree: usize,
    pub n_similarity: usize,
    /// `(degree bucket, similarity bucket)` per test edge.
    pub cells: Vec<(usize, usize)>,
    pub min_degrees: Vec<usize>,
    pub similarities: Vec<f64>,
}

/// Buckets by min train degree of the endpoints and by pair similarity.
/// Each axis uses terciles of the test-edge distribution; the degree axis
/// uses two buckets split at the median when one degree value covers more
/// than half the edges.
pub fn bucketize(g_train: &Graph, fm: &FeatureMatrix, test: &[Edge]) -> Result<BucketAssignment> {
    if test.len() < 3 {
        return Err(domain_err!("bucketing needs at least 3 test edges, got {}", test.len()));
    }
    let n = g_train.n_nodes().min(fm.n());
    check_pairs(n, test)?;
    let min_degrees: Vec<usize> = test
        .iter()
        .map(|&(u, v)| g_train.degree(u).min(g_train.degree(v)))
        .collect();
    let similarities: Vec<f64> = test.iter().map(|&(u, v)| pair_similarity_unchecked(fm, u, v)).collect();

    let deg_f: Vec<f64> = min_degrees.iter().map(|&d| d as f64).collect();
    let mut counts = std::collections::HashMap::new();
    for &d in &min_degrees {
        *counts.entry(d).or_insert(0usize) += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let deg_probs: &[f64] = if 2 * top > test.len() { &[0.5] } else { &[1.0 / 3.0, 2.0 / 3.0] };
    let degree = effective_boundaries(&deg_f, deg_probs);
    let similarity = effective_boundaries(&similarities, &[1.0 / 3.0, 2.0 / 3.0]);
    if degree.len() < deg_probs.len() {
        warn!("degree buckets collapsed to {}", degree.len() + 1);
    }
    if similarity.len() < 2 {
        warn!("similarity buckets collapsed to {}", similarity.len() + 1);
    }
    let cells = deg_f
        .iter()
        .zip(&similarities)
        .map(|(&d, &s)| (bucket_of(d, &degree), bucket_of(s, &similarity)))
        .collect();
    Ok(BucketAssignment {
        n_degree: degree.len() + 1,
        n_similarity: similarity.len() + 1,
        edges: BucketEdges { degree, similarity },
        cells,
        min_degrees,
        similarities,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketCell {
    pub value: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    pub seed: u64,
    pub data_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub overall: f64,
    pub n_test: usize,
    /// Indexed `[degree bucket][similarity bucket]`.
    pub per_bucket: Vec<Vec<BucketCell>>,
    pub bucket_edges: BucketEdges,
    pub metadata: ReportMeta,
}

impl EvalReport {
    /// `deg_bucket,sim_bucket,value,count` with values ×100.
    pub fn buckets_csv(&self) -> String {
        let mut s = String::from("deg_bucket,sim_bucket,value,count\n");
        for (i, row) in self.per_bucket.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let v = c.value.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_default();
                writeln!(s, "{i},{j},{v},{}", c.count).expect("string write");
            }
        }
        s
    }
}

/// Aggregates per-positive values into an overall mean and a bucket grid.
pub fn build_report(
    values: &[f64],
    buckets: &BucketAssignment,
    metric: String,
    metadata: ReportMeta,
) -> Result<EvalReport> {
    if values.len() != buckets.cells.len() {
        return Err(input_err!("{} metric values for {} bucketed edges", values.len(), buckets.cells.len()));
    }
    let mut sums = vec![vec![(0.0, 0usize); buckets.n_similarity]; buckets.n_degree];
    for (&v, &(d, s)) in values.iter().zip(&buckets.cells) {
        sums[d][s].0 += v;
        sums[d][s].1 += 1;
    }
    let per_bucket = sums
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(sum, count)| BucketCell {
                    value: (count > 0).then(|| sum / count as f64),
                    count,
                })
                .collect()
        })
        .collect();
    Ok(EvalReport {
        metric,
        overall: values.iter().sum::<f64>() / values.len().max(1) as f64,
        n_test: values.len(),
        per_bucket,
        bucket_edges: buckets.edges.clone(),
        metadata,
    })
}

/// Full evaluation: metric per test positive, then bucketed aggregation.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<S: LinkScorer + ?Sized>(
    scorer: &S,
    exclude: &Graph,
    g_train: &Graph,
    fm: &FeatureMatrix,
    test: &[Edge],
    cfg: &EvalConfig,
    metadata: ReportMeta,
) -> Result<EvalReport> {
    let buckets = bucketize(g_train, fm, test)?;
    let values = per_positive(scorer, exclude, test, cfg)?;
    build_report(&values, &buckets, cfg.metric_name(), metadata)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffCell {
    pub diff: Option<f64>,
    pub count_a: usize,
    pub count_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffGrid {
    pub cells: Vec<Vec<DiffCell>>,
}

impl DiffGrid {
    pub fn is_zero(&self) -> bool {
        self.cells.iter().flatten().all(|c| c.diff.is_none_or(|d| d == 0.0))
    }

    /// `deg_bucket,sim_bucket,diff,count_a,count_b`; diff ×100, empty when
    /// either side has no edges.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("deg_bucket,sim_bucket,diff,count_a,count_b\n");
        for (i, row) in self.cells.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let d = c.diff.map(|d| format!("{:.2}", 100.0 * d)).unwrap_or_default();
                writeln!(s, "{i},{j},{d},{},{}", c.count_a, c.count_b).expect("string write");
            }
        }
        s
    }
}

/// Cellwise `a − b`; cells where either report has no edges are missing.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<DiffGrid> {
    let shape = |r: &EvalReport| r.per_bucket.iter().map(Vec::len).collect::<Vec<_>>();
    if shape(a) != shape(b) {
        return Err(input_err!("bucket grids differ in shape: {:?} vs {:?}", shape(a), shape(b)));
    }
    let cells = a
        .per_bucket
        .iter()
        .zip(&b.per_bucket)
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .map(|(ca, cb)| DiffCell {
                    diff: match (ca.value, cb.value) {
                        (Some(x), Some(y)) => Some(x - y),
                        _ => None,
                    },
                    count_a: ca.count,
                    count_b: cb.count,
                })
                .collect()
        })
        .collect();
    Ok(DiffGrid { cells })
}

/// FNV-1a over the edge list and feature bit patterns, as 16 hex digits.
pub fn data_checksum(g: &Graph, fm: &FeatureMatrix) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(g.n_nodes() as u64);
    for &(u, v) in g.edges() {
        eat(u as u64);
        eat(v as u64);
    }
    for x in fm.rows().iter() {
        eat(x.to_bits());
    }
    format!("{h:016x}")
}
