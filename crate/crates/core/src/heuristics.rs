//! Feature-agnostic link scores over the train graph.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::eval::LinkScorer;
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PprConfig {
    pub alpha: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PprConfig {
    fn default() -> Self {
        PprConfig {
            alpha: 0.15,
            tolerance: 1e-8,
            max_iterations: 1000,
        }
    }
}

impl PprConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(input_err!("teleport alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(input_err!("tolerance and max_iterations must be positive"));
        }
        Ok(())
    }
}

/// Calls `f(w)` for every common neighbour `w` of `u` and `v`.
fn for_common(g: &Graph, u: usize, v: usize, mut f: impl FnMut(usize)) {
    let (a, b) = (g.neighbors(u), g.neighbors(v));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                f(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
}

pub fn common_neighbors(g: &Graph, u: usize, v: usize) -> usize {
    let mut c = 0;
    for_common(g, u, v, |_| c += 1);
    c
}

/// `Σ 1/ln d_w` over common neighbours; every common neighbour has
/// degree ≥ 2.
pub fn adamic_adar(g: &Graph, u: usize, v: usize) -> f64 {
    let mut s = 0.0;
    for_common(g, u, v, |w| s += 1.0 / (g.degree(w) as f64).ln());
    s
}

pub fn resource_allocation(g: &Graph, u: usize, v: usize) -> f64 {
    let mut s = 0.0;
    for_common(g, u, v, |w| s += 1.0 / g.degree(w) as f64);
    s
}

/// Personalized PageRank vector seeded at `seed` by power iteration of
/// `π ← α·e_seed + (1−α)·Wᵀπ`; mass at dangling nodes returns to the seed.
pub fn personalized_pagerank(g: &Graph, seed: usize, cfg: &PprConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = g.n_nodes();
    if seed >= n {
        return Err(input_err!("seed node {seed} out of range for {n} nodes"));
    }
    let mut pi = vec![0.0; n];
    pi[seed] = 1.0;
    let mut next = vec![0.0; n];
    for _ in 0..cfg.max_iterations {
        next.fill(0.0);
        let mut dangling = 0.0;
        for (v, &p) in pi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let nb = g.neighbors(v);
            if nb.is_empty() {
                dangling += p;
            } else {
                let share = (1.0 - cfg.alpha) * p / nb.len() as f64;
                for &w in nb {
                    next[w] += share;
                }
            }
        }
        next[seed] += cfg.alpha + (1.0 - cfg.alpha) * dangling;
        let change: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if change < cfg.tolerance {
            return Ok(pi);
        }
    }
    Err(Error::Numeric(format!(
        "personalized PageRank from node {seed} did not converge in {} iterations",
        cfg.max_iterations
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeuristicKind {
    Cn,
    Aa,
    Ra,
    Ppr,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 4] = [HeuristicKind::Cn, HeuristicKind::Aa, HeuristicKind::Ra, HeuristicKind::Ppr];
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeuristicKind::Cn => "CN",
            HeuristicKind::Aa => "AA",
            HeuristicKind::Ra => "RA",
            HeuristicKind::Ppr => "PPR",
        })
    }
}

impl FromStr for HeuristicKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cn" => Ok(HeuristicKind::Cn),
            "aa" => Ok(HeuristicKind::Aa),
            "ra" => Ok(HeuristicKind::Ra),
            "ppr" => Ok(HeuristicKind::Ppr),
            _ => Err(input_err!("unknown heuristic {s:?}; expected cn, aa, ra or ppr")),
        }
    }
}

/// Heuristic scorer with a lazily filled per-seed PPR cache.
pub struct HeuristicScorer<'g> {
    g: &'g Graph,
    kind: HeuristicKind,
    ppr: PprConfig,
    cache: Vec<OnceLock<Vec<f64>>>,
}

impl<'g> HeuristicScorer<'g> {
    pub fn new(g: &'g Graph, kind: HeuristicKind, ppr: PprConfig) -> Result<Self> {
        ppr.validate()?;
        let cache = if kind == HeuristicKind::Ppr {
            (0..g.n_nodes()).map(|_| OnceLock::new()).collect()
        } else {
            Vec::new()
        };
        Ok(HeuristicScorer { g, kind, ppr, cache })
    }

    fn ppr_vector(&self, u: usize) -> Result<&[f64]> {
        if let Some(v) = self.cache[u].get() {
            return Ok(v);
        }
        let pi = personalized_pagerank(self.g, u, &self.ppr)?;
        Ok(self.cache[u].get_or_init(|| pi))
    }

    /// Symmetrized PPR score `π_u(v) + π_v(u)`.
    pub fn ppr_score(&self, u: usize, v: usize) -> Result<f64> {
        Ok(self.ppr_vector(u)?[v] + self.ppr_vector(v)?[u])
    }

    pub fn try_score(&self, u: usize, v: usize) -> Result<f64> {
        let n = self.g.n_nodes();
        if u >= n || v >= n {
            return Err(input_err!("pair ({u}, {v}) out of range for {n} nodes"));
        }
        Ok(match self.kind {
            HeuristicKind::Cn => common_neighbors(self.g, u, v) as f64,
            HeuristicKind::Aa => adamic_adar(self.g, u, v),
            HeuristicKind::Ra => resource_allocation(self.g, u, v),
            HeuristicKind::Ppr => self.ppr_score(u, v)?,
        })
    }

    /// Fills the PPR cache for the given seeds, surfacing convergence
    /// failures before scoring starts.
    pub fn warm(&self, seeds: impl IntoIterator<Item = usize>) -> Result<()> {
        if self.kind == HeuristicKind::Ppr {
            for s in seeds {
                self.ppr_vector(s)?;
            }
        }
        Ok(())
    }
}

impl LinkScorer for HeuristicScorer<'_> {
    fn n_nodes(&self) -> usize {
        self.g.n_nodes()
    }

    /// Panics if a PPR vector fails to converge; call `warm` first to get
    /// the error as a value.
    fn score(&self, u: usize, v: usize) -> f64 {
        self.try_score(u, v).expect("heuristic score")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn path3() -> Graph {
        Graph::new(3, &[(0, 1), (1, 2)]).unwrap()
    }

    fn complete(n: usize) -> Graph {
        let e: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Graph::new(n, &e).unwrap()
    }

    #[test]
    fn neighbourhood_examples() {
        let g = path3();
        assert_eq!(common_neighbors(&g, 0, 2), 1);
        assert_eq!(resource_allocation(&g, 0, 2), 0.5);
        assert_abs_diff_eq!(adamic_adar(&g, 0, 2), 1.0 / 2f64.ln(), epsilon = 1e-15);
        let two = Graph::new(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(common_neighbors(&two, 0, 2), 0);
        assert_eq!(adamic_adar(&two, 0, 3), 0.0);
        assert_eq!(resource_allocation(&two, 1, 3), 0.0);
        let k4 = complete(4);
        for u in 0..4 {
            for v in 0..4 {
                if u != v {
                    assert_eq!(common_neighbors(&k4, u, v), 2);
                }
            }
        }
    }

    #[test]
    fn intersection_matches_set_oracle() {
        let e = [(0, 1), (0, 2), (0, 3), (1, 2), (2, 3), (3, 4), (1, 4), (4, 5), (2, 5)];
        let g = Graph::new(6, &e).unwrap();
        for u in 0..6 {
            for v in 0..6 {
                let a: std::collections::BTreeSet<_> = g.neighbors(u).iter().collect();
                let b: std::collections::BTreeSet<_> = g.neighbors(v).iter().collect();
                let common: Vec<_> = a.intersection(&b).copied().collect();
                assert_eq!(common_neighbors(&g, u, v), common.len());
                let ra: f64 = common.iter().map(|&&w| 1.0 / g.degree(w) as f64).sum();
                assert_abs_diff_eq!(resource_allocation(&g, u, v), ra, epsilon = 1e-15);
                assert_eq!(common_neighbors(&g, u, v), common_neighbors(&g, v, u));
                assert_eq!(adamic_adar(&g, u, v), adamic_adar(&g, v, u));
            }
        }
    }

    #[test]
    fn ppr_examples() {
        let cfg = PprConfig::default();
        let iso = Graph::new(3, &[(1, 2)]).unwrap();
        assert_eq!(personalized_pagerank(&iso, 0, &cfg).unwrap(), vec![1.0, 0.0, 0.0]);
        // Two nodes: π_u(v) = (1−α)π_u(u), π_u(u) = α + (1−α)π_u(v).
        let pair = Graph::new(2, &[(0, 1)]).unwrap();
        let pi = personalized_pagerank(&pair, 0, &cfg).unwrap();
        assert_abs_diff_eq!(pi[1], 0.85 / 1.85, epsilon = 1e-8);
        let s = HeuristicScorer::new(&pair, HeuristicKind::Ppr, cfg).unwrap();
        assert_abs_diff_eq!(s.score(0, 1), 2.0 * 0.85 / 1.85, epsilon = 1e-8);
    }

    #[test]
    fn ppr_vectors_sum_to_one_and_score_is_symmetric() {
        let e = [(0, 1), (1, 2), (2, 3), (3, 0), (3, 4), (5, 6)];
        let g = Graph::new(8, &e).unwrap();
        let s = HeuristicScorer::new(&g, HeuristicKind::Ppr, PprConfig::default()).unwrap();
        for u in 0..8 {
            let pi = personalized_pagerank(&g, u, &PprConfig::default()).unwrap();
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for v in 0..8 {
                assert_eq!(s.score(u, v), s.score(v, u));
            }
        }
    }

    #[test]
    fn ppr_non_convergence_and_bad_alpha() {
        let g = Graph::new(2, &[(0, 1)]).unwrap();
        let cfg = PprConfig { max_iterations: 3, ..Default::default() };
        assert_eq!(personalized_pagerank(&g, 0, &cfg).unwrap_err().kind(), "numeric");
        let bad = PprConfig { alpha: 1.0, ..Default::default() };
        assert!(HeuristicScorer::new(&g, HeuristicKind::Ppr, bad).is_err());
        let s = HeuristicScorer::new(&g, HeuristicKind::Ppr, cfg).unwrap();
        assert!(s.warm([0]).is_err());
    }

    #[test]
    fn bipartite_edges_have_no_common_neighbours() {
        let (g, _) = crate::synthgen::generate_two_feature_graph(3, 0.5, 2.0, 6).unwrap();
        for &(u, v) in g.edges() {
            assert_eq!(common_neighbors(&g, u, v), 0);
        }
        assert_eq!("PPR".parse::<HeuristicKind>().unwrap(), HeuristicKind::Ppr);
        assert!("katz".parse::<HeuristicKind>().is_err());
    }
}
