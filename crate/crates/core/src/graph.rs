//! Weighted sparse graphs: the observed similarity matrix `A` and the
//! user × item rating matrix `S`.
//!
//! Edge lists are persisted as plain text, 0-indexed:
//!
//! ```text
//! n m            (similarity graph: node count, edge count)
//! n_users n_items m   (bipartite rating matrix)
//! u v w          (one line per edge; u < v for similarity graphs)
//! ```

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GraphKind {
    /// Undirected graph on `n` users.
    Similarity,
    /// Rows are users, columns are items.
    Bipartite { n_users: usize, n_items: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

/// Compressed adjacency lists.
#[derive(Clone, Debug, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl Csr {
    fn build(rows: usize, pairs: impl Iterator<Item = (usize, usize, f64)> + Clone) -> Csr {
        let mut counts = vec![0usize; rows + 1];
        for (r, _, _) in pairs.clone() {
            counts[r + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut entries = vec![(0usize, 0.0f64); offsets[rows]];
        for (r, c, w) in pairs {
            entries[fill[r]] = (c, w);
            fill[r] += 1;
        }
        for r in 0..rows {
            entries[offsets[r]..offsets[r + 1]].sort_by_key(|e| e.0);
        }
        Csr { offsets, entries }
    }

    #[inline]
    fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[r]..self.offsets[r + 1]]
    }
}

/// Immutable weighted graph with adjacency lists built at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGraph {
    kind: GraphKind,
    n: usize,
    edges: Vec<Edge>,
    rows: Csr,
    /// Item-side adjacency, bipartite graphs only.
    cols: Option<Csr>,
}

impl SparseGraph {
    /// Undirected graph on `n` nodes. Edges are stored with `u < v`; reversed
    /// pairs are normalized, self-loops and duplicates are rejected.
    pub fn similarity(n: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut edges = edges;
        for e in edges.iter_mut() {
            if e.u == e.v {
                return Err(Error::param(format!("self-loop on node {}", e.u)));
            }
            if e.u.max(e.v) >= n {
                return Err(Error::param(format!("edge ({}, {}) out of range for n={n}", e.u, e.v)));
            }
            if !e.w.is_finite() {
                return Err(Error::param(format!("non-finite weight on ({}, {})", e.u, e.v)));
            }
            if e.u > e.v {
                std::mem::swap(&mut e.u, &mut e.v);
            }
        }
        edges.sort_by_key(|e| (e.u, e.v));
        if let Some(w) = edges.windows(2).find(|w| (w[0].u, w[0].v) == (w[1].u, w[1].v)) {
            return Err(Error::param(format!("duplicate edge ({}, {})", w[0].u, w[0].v)));
        }
        let pairs = edges
            .iter()
            .flat_map(|e| [(e.u, e.v, e.w), (e.v, e.u, e.w)].into_iter());
        let rows = Csr::build(n, pairs);
        Ok(SparseGraph { kind: GraphKind::Similarity, n, edges, rows, cols: None })
    }

    /// Rating matrix with `n_users` rows and `n_items` columns. Edge `(u, v)`
    /// means user `u` rated item `v`.
    pub fn bipartite(n_users: usize, n_items: usize, entries: Vec<Edge>) -> Result<Self> {
        let mut entries = entries;
        for e in &entries {
            if e.u >= n_users || e.v >= n_items {
                return Err(Error::param(format!(
                    "entry ({}, {}) out of range for {n_users}x{n_items}",
                    e.u, e.v
                )));
            }
            if !e.w.is_finite() {
                return Err(Error::param(format!("non-finite weight on ({}, {})", e.u, e.v)));
            }
        }
        entries.sort_by_key(|e| (e.u, e.v));
        if let Some(w) = entries.windows(2).find(|w| (w[0].u, w[0].v) == (w[1].u, w[1].v)) {
            return Err(Error::param(format!("duplicate entry ({}, {})", w[0].u, w[0].v)));
        }
        let rows = Csr::build(n_users, entries.iter().map(|e| (e.u, e.v, e.w)));
        let cols = Csr::build(n_items, entries.iter().map(|e| (e.v, e.u, e.w)));
        Ok(SparseGraph {
            kind: GraphKind::Bipartite { n_users, n_items },
            n: n_users,
            edges: entries,
            rows,
            cols: Some(cols),
        })
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn is_bipartite(&self) -> bool {
        matches!(self.kind, GraphKind::Bipartite { .. })
    }

    /// Number of nodes (similarity) or users (bipartite).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_items(&self) -> usize {
        match self.kind {
            GraphKind::Bipartite { n_items, .. } => n_items,
            GraphKind::Similarity => 0,
        }
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Neighbours of `u` with weights, sorted by index. For bipartite graphs
    /// these are the items rated by user `u`.
    #[inline]
    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        self.rows.row(u)
    }

    /// Users who rated item `i` (bipartite graphs only).
    pub fn item_users(&self, i: usize) -> &[(usize, f64)] {
        self.cols.as_ref().map(|c| c.row(i)).unwrap_or(&[])
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors(u).len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|u| self.degree(u)).max().unwrap_or(0)
    }

    pub fn mean_degree(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.rows.entries.len() as f64 / self.n as f64
    }

    /// Weight of `(u, v)`, or `None` if absent.
    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        let row = self.neighbors(u);
        row.binary_search_by_key(&v, |e| e.0).ok().map(|i| row[i].1)
    }

    /// Δ = max_u Σ_v |A_uv|.
    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.n)
            .map(|u| self.neighbors(u).iter().map(|e| e.1.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Dense copy: `A` (n×n) for similarity graphs, `S` (users×items) otherwise.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self.kind {
            GraphKind::Similarity => {
                let mut a = DMatrix::zeros(self.n, self.n);
                for e in &self.edges {
                    a[(e.u, e.v)] = e.w;
                    a[(e.v, e.u)] = e.w;
                }
                a
            }
            GraphKind::Bipartite { n_users, n_items } => {
                let mut s = DMatrix::zeros(n_users, n_items);
                for e in &self.edges {
                    s[(e.u, e.v)] = e.w;
                }
                s
            }
        }
    }

    /// `A x` for a similarity graph.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (u, o) in out.iter_mut().enumerate().take(self.n) {
            *o = self.neighbors(u).iter().map(|&(v, w)| w * x[v]).sum();
        }
    }

    /// Connected components, each sorted, largest first (ties by smallest node).
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.n];
        let mut comps = Vec::new();
        let mut stack = Vec::new();
        for s in 0..self.n {
            if label[s] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![s];
            label[s] = id;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &(v, _) in self.neighbors(u) {
                    if label[v] == usize::MAX {
                        label[v] = id;
                        members.push(v);
                        stack.push(v);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.n > 0 && self.components().len() == 1
    }

    /// Induced subgraph on `nodes` (sorted), relabelled 0..nodes.len().
    pub fn induced(&self, nodes: &[usize]) -> Result<SparseGraph> {
        let mut map = vec![usize::MAX; self.n];
        for (i, &u) in nodes.iter().enumerate() {
            map[u] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| map[e.u] != usize::MAX && map[e.v] != usize::MAX)
            .map(|e| Edge { u: map[e.u], v: map[e.v], w: e.w })
            .collect();
        SparseGraph::similarity(nodes.len(), edges)
    }

    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        match self.kind {
            GraphKind::Similarity => writeln!(out, "{} {}", self.n, self.edges.len())?,
            GraphKind::Bipartite { n_users, n_items } => {
                writeln!(out, "{} {} {}", n_users, n_items, self.edges.len())?
            }
        }
        for e in &self.edges {
            writeln!(out, "{} {} {}", e.u, e.v, e.w)?;
        }
        Ok(())
    }

    /// Reads either header form; a three-token header denotes a bipartite matrix.
    pub fn read_edge_list<R: BufRead>(input: R) -> Result<SparseGraph> {
        let mut lines = input.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() || s.trim_start().starts_with('#') => None,
            other => Some((i + 1, other)),
        });
        let (hline, header) = lines
            .next()
            .ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
        let header = header?;
        let dims = parse_fields::<usize>(&header, hline)?;
        let (bip, declared) = match dims.as_slice() {
            [n, m] => (None, (*n, *m)),
            [nu, ni, m] => (Some((*nu, *ni)), (*nu, *m)),
            _ => {
                return Err(Error::Parse { line: hline, msg: "header must be `n m` or `n_users n_items m`".into() })
            }
        };
        let mut edges = Vec::with_capacity(declared.1);
        for (ln, line) in lines {
            let line = line?;
            let mut it = line.split_whitespace();
            let mut next = |what: &str| {
                it.next().ok_or_else(|| Error::Parse { line: ln, msg: format!("missing {what}") })
            };
            let u = next("u")?.parse::<usize>().map_err(|e| Error::Parse { line: ln, msg: e.to_string() })?;
            let v = next("v")?.parse::<usize>().map_err(|e| Error::Parse { line: ln, msg: e.to_string() })?;
            let w = next("w")?.parse::<f64>().map_err(|e| Error::Parse { line: ln, msg: e.to_string() })?;
            edges.push(Edge { u, v, w });
        }
        if edges.len() != declared.1 {
            return Err(Error::Parse {
                line: hline,
                msg: format!("header declares {} edges, found {}", declared.1, edges.len()),
            });
        }
        match bip {
            None => SparseGraph::similarity(declared.0, edges),
            Some((nu, ni)) => SparseGraph::bipartite(nu, ni, edges),
        }
    }
}

fn parse_fields<T: std::str::FromStr>(line: &str, ln: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    line.split_whitespace()
        .map(|t| t.parse::<T>().map_err(|e| Error::Parse { line: ln, msg: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> SparseGraph {
        SparseGraph::similarity(3, vec![Edge { u: 0, v: 1, w: 1.0 }, Edge { u: 2, v: 1, w: 1.0 }]).unwrap()
    }

    #[test]
    fn reversed_edges_are_normalized_and_symmetric() {
        let g = path3();
        assert_eq!(g.edges()[1], Edge { u: 1, v: 2, w: 1.0 });
        assert_eq!(g.weight(2, 1), Some(1.0));
        assert_eq!(g.weight(1, 2), Some(1.0));
        assert_eq!(g.weight(0, 2), None);
        assert_eq!(g.degree(1), 2);
        assert_eq!(g.max_abs_row_sum(), 2.0);
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        assert!(SparseGraph::similarity(2, vec![Edge { u: 1, v: 1, w: 1.0 }]).is_err());
        let dup = vec![Edge { u: 0, v: 1, w: 1.0 }, Edge { u: 1, v: 0, w: 2.0 }];
        assert!(SparseGraph::similarity(2, dup).is_err());
    }

    #[test]
    fn components_largest_first() {
        let g = SparseGraph::similarity(5, vec![Edge { u: 3, v: 4, w: 1.0 }, Edge { u: 0, v: 1, w: 1.0 }, Edge { u: 1, v: 2, w: 1.0 }]).unwrap();
        assert_eq!(g.components(), vec![vec![0, 1, 2], vec![3, 4]]);
        assert!(!g.is_connected());
        let sub = g.induced(&[0, 1, 2]).unwrap();
        assert!(sub.is_connected());
        assert_eq!(sub.n_edges(), 2);
    }

    #[test]
    fn bipartite_both_sides() {
        let s = SparseGraph::bipartite(2, 3, vec![Edge { u: 1, v: 2, w: 1.0 }, Edge { u: 0, v: 2, w: 1.0 }]).unwrap();
        assert_eq!(s.item_users(2), &[(0, 1.0), (1, 1.0)]);
        assert_eq!(s.neighbors(1), &[(2, 1.0)]);
        let d = s.to_dense();
        assert_eq!(d.shape(), (2, 3));
        assert_eq!(d[(0, 2)], 1.0);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = SparseGraph::similarity(4, vec![Edge { u: 0, v: 3, w: 0.25 }, Edge { u: 1, v: 2, w: -1.5 }]).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "4 2\n0 3 0.25\n1 2 -1.5\n");
        let back = SparseGraph::read_edge_list(&buf[..]).unwrap();
        assert_eq!(back, g);

        let s = SparseGraph::bipartite(2, 3, vec![Edge { u: 1, v: 0, w: 1.0 }]).unwrap();
        let mut buf = Vec::new();
        s.write_edge_list(&mut buf).unwrap();
        assert_eq!(SparseGraph::read_edge_list(&buf[..]).unwrap(), s);
    }

    #[test]
    fn edge_count_mismatch_is_a_parse_error() {
        let err = SparseGraph::read_edge_list(&b"3 2\n0 1 1\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
