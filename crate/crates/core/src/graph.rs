//! Areal adjacency structure and the proper GMRF `N(0, (λA + I)⁻¹)` built on it.
//!
//! Disconnected graphs (including isolated areas) are allowed: the identity
//! shrinkage keeps `Q_λ = λA + I` positive definite for every `λ ≥ 0`.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dist::{self, LN_2PI};
use crate::error::{Error, Result};

/// Undirected contiguity graph over `n` areas (stored 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl SpatialGraph {
    /// Build from 1-based `(i, j)` pairs. Repeated pairs (in either
    /// orientation) collapse to one edge.
    pub fn from_edges(edge_list: &[(usize, usize)], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edge_list {
            for idx in [i, j] {
                if idx == 0 || idx > n {
                    return Err(Error::IndexOutOfRange { index: idx, n });
                }
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            set.insert((i.min(j) - 1, i.max(j) - 1));
        }
        Ok(Self::from_zero_based(n, set.into_iter().collect()))
    }

    fn from_zero_based(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        SpatialGraph { n, edges, neighbors }
    }

    /// Rook-contiguity lattice; area `r * cols + c` sits at row `r`, column `c`.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        edges.sort_unstable();
        Ok(Self::from_zero_based(rows * cols, edges))
    }

    /// Parse `grid:ROWSxCOLS` or read an edge-list file.
    pub fn from_spec(spec: &str) -> Result<Self> {
        if let Some(dims) = spec.strip_prefix("grid:") {
            let (r, c) = dims
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::invalid(format!("bad grid spec '{spec}'")))?;
            let r = r.trim().parse().map_err(|_| Error::invalid(format!("bad grid rows in '{spec}'")))?;
            let c = c.trim().parse().map_err(|_| Error::invalid(format!("bad grid cols in '{spec}'")))?;
            return Self::grid(r, c);
        }
        Self::read_edge_list(spec)
    }

    pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_edge_list(&text)
    }

    /// Edge-list text: `n <count>` header, then one whitespace-separated
    /// 1-based `i j` pair per line; `#` starts a comment.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut n = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected integer, got '{s}'"),
                })
            };
            match (n, toks.as_slice()) {
                (None, ["n", count]) => n = Some(parse(count)?),
                (None, _) => {
                    return Err(Error::Parse { line: lineno + 1, msg: "expected header 'n <count>'".into() })
                }
                (Some(_), [i, j]) => edges.push((parse(i)?, parse(j)?)),
                (Some(_), _) => {
                    return Err(Error::Parse { line: lineno + 1, msg: "expected 'i j' pair".into() })
                }
            }
        }
        let n = n.ok_or(Error::Parse { line: 0, msg: "missing header 'n <count>'".into() })?;
        Self::from_edges(&edges, n)
    }

    pub fn to_edge_list_string(&self) -> String {
        let mut s = format!("n {}\n", self.n);
        for &(i, j) in &self.edges {
            s.push_str(&format!("{} {}\n", i + 1, j + 1));
        }
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Zero-based edges with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn neighbor_counts(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    /// Connected-component label per area, labels in order of first appearance.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(i) = stack.pop() {
                for &j in &self.neighbors[i] {
                    if label[j] == usize::MAX {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// The matrix `A` with `a_ii = ν_i`, `a_ij = -1` for neighbours, plus its
/// eigenvalues (ascending), computed once.
#[derive(Debug, Clone)]
pub struct AdjacencyMatrix {
    graph: SpatialGraph,
    matrix: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl AdjacencyMatrix {
    pub fn new(graph: &SpatialGraph) -> Result<Self> {
        let n = graph.n();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for &(i, j) in graph.edges() {
            a[(i, j)] = -1.0;
            a[(j, i)] = -1.0;
            a[(i, i)] += 1.0;
            a[(j, j)] += 1.0;
        }
        let eigenvalues = symmetric_eigenvalues(&a)?;
        Ok(AdjacencyMatrix { graph: graph.clone(), matrix: a, eigenvalues })
    }

    pub fn graph(&self) -> &SpatialGraph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `Q_λ = λA + I`.
    pub fn precision(&self, lambda: f64) -> Result<DMatrix<f64>> {
        check_lambda(lambda)?;
        let n = self.n();
        Ok(&self.matrix * lambda + DMatrix::identity(n, n))
    }

    /// `ln c(λ) = -(n/2) ln 2π + ½ Σ ln(λ e_i + 1)`.
    pub fn log_normalizer(&self, lambda: f64) -> f64 {
        let n = self.n() as f64;
        -0.5 * n * LN_2PI + 0.5 * self.eigenvalues.iter().map(|e| (lambda * e).ln_1p()).sum::<f64>()
    }

    /// `uᵀQ_λu` via the pairwise expansion `λ Σ_{i~i'} (u_i - u_i')² + Σ u_i²`.
    pub fn quad_form_pairwise(&self, u: &[f64], lambda: f64) -> f64 {
        let pair: f64 = self.graph.edges().iter().map(|&(i, j)| (u[i] - u[j]).powi(2)).sum();
        lambda * pair + u.iter().map(|x| x * x).sum::<f64>()
    }

    /// `uᵀQ_λu` via the dense matrix.
    pub fn quad_form_matrix(&self, u: &[f64], lambda: f64) -> Result<f64> {
        let q = self.precision(lambda)?;
        let v = DVector::from_column_slice(u);
        Ok(v.dot(&(&q * &v)))
    }

    /// Log-density of a GMRF realisation `u ~ N(0, Q_λ⁻¹)`.
    pub fn log_density(&self, u: &[f64], lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        if u.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: u.len() });
        }
        Ok(self.log_normalizer(lambda) - 0.5 * self.quad_form_pairwise(u, lambda))
    }

    /// One draw from `N(0, Q_λ⁻¹)`.
    pub fn sample<R: Rng + ?Sized>(&self, lambda: f64, rng: &mut R) -> Result<DVector<f64>> {
        let q = self.precision(lambda)?;
        let zero = DVector::zeros(self.n());
        dist::sample_mvn_canonical(&zero, &q, rng)
    }

    /// Rows/columns `idx` of `Q_λ`.
    pub fn precision_block(&self, lambda: f64, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
            let (i, j) = (rows[r], cols[c]);
            lambda * self.matrix[(i, j)] + if i == j { 1.0 } else { 0.0 }
        })
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Ascending eigenvalues of a symmetric PSD matrix; round-off negatives are
/// clipped to zero.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let eig = m.clone().try_symmetric_eigen(1e-14, 10_000).ok_or(Error::Eigen)?;
    let mut e: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen);
    }
    let tol = 1e-10 * e.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    for v in &mut e {
        if *v < 0.0 && *v > -tol {
            *v = 0.0;
        }
    }
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn neighbor_counts_small_cases() {
        let g = SpatialGraph::from_edges(&[(1, 2)], 2).unwrap();
        assert_eq!(g.neighbor_counts(), vec![1, 1]);
        let grid = SpatialGraph::grid(3, 3).unwrap();
        assert_eq!(grid.neighbor_counts()[4], 4);
        assert_eq!(grid.neighbor_counts()[0], 2);
        let empty = SpatialGraph::from_edges(&[], 4).unwrap();
        assert_eq!(empty.neighbor_counts(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(SpatialGraph::from_edges(&[(1, 3)], 2), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(SpatialGraph::from_edges(&[(0, 1)], 2), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(SpatialGraph::from_edges(&[(2, 2)], 2), Err(Error::SelfLoop(2))));
        assert!(matches!(SpatialGraph::from_edges(&[], 0), Err(Error::EmptyGraph)));
        let dup = SpatialGraph::from_edges(&[(1, 2), (2, 1)], 2).unwrap();
        assert_eq!(dup.edges().len(), 1);
    }

    #[test]
    fn adjacency_two_node_path() {
        let g = SpatialGraph::from_edges(&[(1, 2)], 2).unwrap();
        let a = AdjacencyMatrix::new(&g).unwrap();
        assert_eq!(a.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert!(a.eigenvalues()[0].abs() < 1e-12);
        assert!((a.eigenvalues()[1] - 2.0).abs() < 1e-12);
        let q = a.precision(1.0).unwrap();
        assert_eq!(q, DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
        assert_eq!(a.precision(0.0).unwrap(), DMatrix::identity(2, 2));
        assert!(a.precision(-0.1).is_err());
    }

    #[test]
    fn adjacency_no_edges_is_zero() {
        let g = SpatialGraph::from_edges(&[], 3).unwrap();
        let a = AdjacencyMatrix::new(&g).unwrap();
        assert_eq!(a.matrix(), &DMatrix::zeros(3, 3));
        assert_eq!(a.eigenvalues(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn parse_edge_list_with_comments() {
        let g = SpatialGraph::parse_edge_list("# map\nn 3\n1 2 # first\n\n2 3\n").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert!(SpatialGraph::parse_edge_list("1 2\n").is_err());
        let round = SpatialGraph::parse_edge_list(&g.to_edge_list_string()).unwrap();
        assert_eq!(round, g);
        assert_eq!(SpatialGraph::from_spec("grid:3x4").unwrap().n(), 12);
    }

    #[test]
    fn log_density_at_origin_with_independence() {
        let g = SpatialGraph::grid(2, 3).unwrap();
        let a = AdjacencyMatrix::new(&g).unwrap();
        let u = vec![0.0; 6];
        assert!((a.log_density(&u, 0.0).unwrap() + 3.0 * LN_2PI).abs() < 1e-12);
        assert!(a.log_density(&[0.0; 5], 0.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let g = SpatialGraph::grid(3, 3).unwrap();
        let a = AdjacencyMatrix::new(&g).unwrap();
        let x = a.sample(2.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let y = a.sample(2.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn components_of_disconnected_graph() {
        let g = SpatialGraph::from_edges(&[(1, 2), (4, 5)], 5).unwrap();
        assert_eq!(g.components(), vec![0, 0, 1, 2, 2]);
    }
}
