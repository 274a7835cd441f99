//! Undirected simple graph in compressed adjacency form, edge splits, and the
//! sparse propagation operators shared by the encoders.

use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{input_err, Result};

/// Canonical undirected edge, always stored with `u < v`.
pub type Edge = (usize, usize);

/// Immutable undirected graph without self-loops or parallel edges.
///
/// Edges are stored once in canonical `(u, v)` order with `u < v`; the
/// adjacency lists hold both directions and are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    self_loops_dropped: usize,
}

impl Graph {
    /// Builds a graph from an arbitrary pair list.
    ///
    /// Pairs are canonicalized and deduplicated; self-loops are dropped and
    /// counted.
    pub fn new(n_nodes: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(edge_list.len());
        let mut self_loops = 0usize;
        for &(a, b) in edge_list {
            if a >= n_nodes || b >= n_nodes {
                return Err(input_err!(
                    "edge ({a}, {b}) has an endpoint outside 0..{n_nodes}"
                ));
            }
            if a == b {
                self_loops += 1;
                continue;
            }
            edges.push(if a < b { (a, b) } else { (b, a) });
        }
        edges.sort_unstable();
        edges.dedup();
        if self_loops > 0 {
            log::warn!("dropped {self_loops} self-loop(s) while building graph");
        }

        let mut degree = vec![0usize; n_nodes];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n_nodes].to_vec();
        let mut neighbors = vec![0usize; offsets[n_nodes]];
        // edges are sorted, so each u-list receives ascending v; v-lists need a sort
        for &(u, v) in &edges {
            neighbors[cursor[u]] = v;
            cursor[u] += 1;
            neighbors[cursor[v]] = u;
            cursor[v] += 1;
        }
        for v in 0..n_nodes {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
        }

        Ok(Self {
            n_nodes,
            edges,
            offsets,
            neighbors,
            self_loops_dropped: self_loops,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical edge list, sorted lexicographically.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Sorted neighbor list of `v`, excluding `v` itself.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n_nodes).map(|v| self.degree(v)).collect()
    }

    pub fn self_loops_dropped(&self) -> usize {
        self.self_loops_dropped
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        if u >= self.n_nodes || v >= self.n_nodes || u == v {
            return false;
        }
        let (a, b) = if self.degree(u) <= self.degree(v) { (u, v) } else { (v, u) };
        self.neighbors(a).binary_search(&b).is_ok()
    }

    fn check_rows(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.nrows() != self.n_nodes {
            return Err(input_err!(
                "matrix has {} rows but graph has {} nodes",
                x.nrows(),
                self.n_nodes
            ));
        }
        Ok(())
    }

    /// Applies `D̃^{-1/2} (A + I) D̃^{-1/2}` to `x` with `D̃ = D + I`,
    /// without materializing the operator.
    pub fn normalized_adjacency_apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_rows(&x)?;
        let inv_sqrt: Vec<f64> = (0..self.n_nodes)
            .map(|v| 1.0 / ((self.degree(v) + 1) as f64).sqrt())
            .collect();
        let mut out = Array2::zeros(x.raw_dim());
        for (v, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let sv = inv_sqrt[v];
            row.scaled_add(sv * sv, &x.row(v));
            for &u in self.neighbors(v) {
                row.scaled_add(sv * inv_sqrt[u], &x.row(u));
            }
        }
        Ok(out)
    }

    /// Mean over the neighbors of each node, excluding the node itself.
    /// Isolated nodes get a zero row.
    pub fn mean_neighbor_apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_rows(&x)?;
        let mut out = Array2::zeros(x.raw_dim());
        for (v, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let nb = self.neighbors(v);
            if nb.is_empty() {
                continue;
            }
            let w = 1.0 / nb.len() as f64;
            for &u in nb {
                row.scaled_add(w, &x.row(u));
            }
        }
        Ok(out)
    }

    /// Transpose of [`Graph::mean_neighbor_apply`]: row `u` receives
    /// `Σ_{v : u ∈ N(v)} y_v / d_v`. Used to backpropagate through the mean.
    pub fn mean_neighbor_apply_transpose(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_rows(&y)?;
        let mut out = Array2::zeros(y.raw_dim());
        for u in 0..self.n_nodes {
            let mut row = out.row_mut(u);
            for &v in self.neighbors(u) {
                row.scaled_add(1.0 / self.degree(v) as f64, &y.row(v));
            }
        }
        Ok(out)
    }

    /// Mean over the closed neighborhood: `(x_v + Σ_{u∈N(v)} x_u) / (d_v + 1)`.
    pub fn selfloop_mean_apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_rows(&x)?;
        let mut out = x.to_owned();
        for (v, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let nb = self.neighbors(v);
            for &u in nb {
                row += &x.row(u);
            }
            row /= (nb.len() + 1) as f64;
        }
        Ok(out)
    }

    /// Reads the text edge-list format: a `nodes <n>` header followed by one
    /// `<u> <v>` pair per line. Blank lines and `#` comments are ignored.
    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut n_nodes: Option<usize> = None;
        let mut pairs = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut parts = content.split_whitespace();
            let first = parts.next().unwrap();
            if n_nodes.is_none() {
                if first != "nodes" {
                    return Err(input_err!("line {}: expected `nodes <n>` header", lineno + 1));
                }
                let n = parts
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| input_err!("line {}: bad node count", lineno + 1))?;
                n_nodes = Some(n);
                continue;
            }
            let u = first.parse::<usize>();
            let v = parts.next().map(str::parse::<usize>);
            match (u, v, parts.next()) {
                (Ok(u), Some(Ok(v)), None) => pairs.push((u, v)),
                _ => return Err(input_err!("line {}: expected `<u> <v>`", lineno + 1)),
            }
        }
        let n = n_nodes.ok_or_else(|| input_err!("missing `nodes <n>` header"))?;
        Graph::new(n, &pairs)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "nodes {}", self.n_nodes)?;
        for &(u, v) in &self.edges {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    }
}

/// Disjoint train/validation/test partition of a graph's edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSplit {
    pub train: Vec<Edge>,
    pub valid: Vec<Edge>,
    pub test: Vec<Edge>,
    pub ratio: [f64; 3],
}

impl EdgeSplit {
    /// Graph used for message passing: the train edges only.
    pub fn train_graph(&self, n_nodes: usize) -> Result<Graph> {
        Graph::new(n_nodes, &self.train)
    }
}

/// Shuffles the edges with `seed` and cuts them by `ratio`.
///
/// Validation and test sizes are floor-rounded; the remainder goes to train.
pub fn split_edges(g: &Graph, ratio: [f64; 3], seed: u64) -> Result<EdgeSplit> {
    if ratio.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(input_err!("split ratio components must be finite and >= 0: {ratio:?}"));
    }
    let total: f64 = ratio.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(input_err!("split ratio must sum to 1, got {total}"));
    }
    let m = g.n_edges();
    let mut edges = g.edges().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);

    let n_valid = (ratio[1] * m as f64 + 1e-9).floor() as usize;
    let n_test = (ratio[2] * m as f64 + 1e-9).floor() as usize;
    let n_test = n_test.min(m - n_valid.min(m));
    let n_valid = n_valid.min(m);
    let n_train = m - n_valid - n_test;
    let test = edges.split_off(m - n_test);
    let valid = edges.split_off(n_train);
    Ok(EdgeSplit {
        train: edges,
        valid,
        test,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> Graph {
        Graph::new(3, &[(0, 1), (1, 2)]).unwrap()
    }

    /// Dense construction of the GCN operator, used as an oracle.
    fn dense_gcn(g: &Graph) -> Array2<f64> {
        let n = g.n_nodes();
        let mut a = Array2::<f64>::eye(n);
        for &(u, v) in g.edges() {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        let d: Vec<f64> = (0..n).map(|v| a.row(v).sum()).collect();
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] /= (d[i] * d[j]).sqrt();
            }
        }
        a
    }

    #[test]
    fn build_dedups_and_drops_self_loops() {
        let g = Graph::new(3, &[(0, 1), (1, 0), (1, 1), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.degrees(), vec![1, 2, 1]);
        assert_eq!(g.self_loops_dropped(), 1);
    }

    #[test]
    fn build_empty_and_cycle() {
        let g = Graph::new(1, &[]).unwrap();
        assert_eq!(g.n_edges(), 0);
        assert_eq!(g.degrees(), vec![0]);

        let c4 = Graph::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert_eq!(c4.degrees(), vec![2, 2, 2, 2]);
        assert!(c4.has_edge(0, 3) && c4.has_edge(3, 0));
        assert!(!c4.has_edge(0, 2));
    }

    #[test]
    fn build_rejects_out_of_range() {
        assert!(matches!(
            Graph::new(2, &[(0, 2)]),
            Err(crate::Error::Input(_))
        ));
    }

    #[test]
    fn split_sizes() {
        let edges: Vec<_> = (0..10).map(|i| (i, i + 1)).collect();
        let g = Graph::new(11, &edges).unwrap();
        let s = split_edges(&g, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        let s = split_edges(&g, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (10, 0, 0));

        let a = split_edges(&g, [0.8, 0.1, 0.1], 11).unwrap();
        let b = split_edges(&g, [0.8, 0.1, 0.1], 11).unwrap();
        assert_eq!(a, b);

        let mut all: Vec<_> = a.train.iter().chain(&a.valid).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, g.edges());
    }

    #[test]
    fn split_rejects_bad_ratio() {
        let g = path3();
        assert!(split_edges(&g, [0.5, 0.1, 0.1], 0).is_err());
        assert!(split_edges(&g, [1.2, -0.1, -0.1], 0).is_err());
    }

    #[test]
    fn gcn_operator_small_cases() {
        let g = Graph::new(1, &[]).unwrap();
        let x = array![[3.0, -1.0]];
        assert_eq!(g.normalized_adjacency_apply(x.view()).unwrap(), x);

        let g = Graph::new(2, &[(0, 1)]).unwrap();
        let out = g.normalized_adjacency_apply(Array2::eye(2).view()).unwrap();
        for v in out.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }

        let g = path3();
        let x = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let sparse = g.normalized_adjacency_apply(x.view()).unwrap();
        let dense = dense_gcn(&g).dot(&x);
        for (a, b) in sparse.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_neighbor_cases() {
        let g = Graph::new(4, &[(0, 1), (1, 2)]).unwrap();
        let x = array![[1.0], [2.0], [5.0], [7.0]];
        let m = g.mean_neighbor_apply(x.view()).unwrap();
        assert_eq!(m[[3, 0]], 0.0);
        assert_eq!(m[[1, 0]], 3.0);

        let star = Graph::new(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let x = array![[0.0, 0.0], [1.0, 2.0], [3.0, 4.0], [5.0, 9.0]];
        let m = star.mean_neighbor_apply(x.view()).unwrap();
        assert_eq!(m.row(0).to_vec(), vec![3.0, 5.0]);
    }

    #[test]
    fn mean_neighbor_transpose_is_adjoint() {
        let g = Graph::new(5, &[(0, 1), (0, 2), (2, 3), (1, 3)]).unwrap();
        let x = array![[1.0, -2.0], [0.5, 3.0], [2.0, 2.0], [-1.0, 0.0], [4.0, 1.0]];
        let y = array![[0.3, 1.0], [1.0, -1.0], [2.0, 0.5], [0.0, 1.5], [1.0, 1.0]];
        let lhs = (&g.mean_neighbor_apply(x.view()).unwrap() * &y).sum();
        let rhs = (&x * &g.mean_neighbor_apply_transpose(y.view()).unwrap()).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn selfloop_mean_cases() {
        let g = Graph::new(3, &[(0, 1)]).unwrap();
        let x = array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]];
        let r = g.selfloop_mean_apply(x.view()).unwrap();
        assert_eq!(r.row(2).to_vec(), vec![2.0, 2.0]);
        assert_eq!(r.row(0).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let g = path3();
        let x = Array2::<f64>::zeros((2, 2));
        assert!(g.normalized_adjacency_apply(x.view()).is_err());
        assert!(g.mean_neighbor_apply(x.view()).is_err());
        assert!(g.selfloop_mean_apply(x.view()).is_err());
    }

    #[test]
    fn text_round_trip_and_tolerance() {
        let text = "# comment\nnodes 4\n1 0\n2 3 # trailing\n\n3 2\n";
        let g = Graph::read_text(text.as_bytes()).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (2, 3)]);
        let mut buf = Vec::new();
        g.write_text(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "nodes 4\n0 1\n2 3\n");
        assert_eq!(Graph::read_text(buf.as_slice()).unwrap(), g);

        assert!(Graph::read_text("0 1\n".as_bytes()).is_err());
        assert!(Graph::read_text("nodes 2\n0 x\n".as_bytes()).is_err());
    }
}
