//! Envelope (profile) Cholesky factorization for GMRF precision blocks.
//!
//! Areas are relabeled by reverse Cuthill-McKee so the precision
//! `c·(λA + I) + diag(extra)` restricted to any subset of areas has a narrow
//! profile; the factor stays inside that profile.

use std::collections::VecDeque;

use rand::Rng;

use crate::dist::std_normal_vec;
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;

/// Reverse Cuthill-McKee order of the areas. `order[k]` is the area placed
/// at position `k`.
pub fn reverse_cuthill_mckee(graph: &SpatialGraph) -> Vec<usize> {
    let n = graph.n();
    let deg = graph.neighbor_counts();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (deg[i], i));
    for &root in &by_degree {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = graph.neighbors(v).iter().copied().filter(|&u| !seen[u]).collect();
            next.sort_by_key(|&u| (deg[u], u));
            for u in next {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Lower-triangular matrix stored row by row from each row's first nonzero
/// column through the diagonal.
#[derive(Debug, Clone)]
pub struct Envelope {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
}

impl Envelope {
    fn with_profile(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);
        Envelope { n, first, start, vals: vec![0.0; total] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        self.start[i] + (j - self.first[i])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if j < self.first[i] { 0.0 } else { self.vals[self.idx(i, j)] }
    }

    /// In-place Cholesky `M = L Lᵀ`.
    pub fn factorize(&mut self) -> Result<()> {
        for i in 0..self.n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut s = self.vals[self.idx(i, j)];
                let (ri, rj) = (self.idx(i, k0), self.idx(j, k0));
                for k in 0..(j - k0) {
                    s -= self.vals[ri + k] * self.vals[rj + k];
                }
                if j < i {
                    let d = self.vals[self.idx(j, j)];
                    let p = self.idx(i, j);
                    self.vals[p] = s / d;
                } else {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite("envelope factorization"));
                    }
                    let p = self.idx(i, i);
                    self.vals[p] = s.sqrt();
                }
            }
        }
        Ok(())
    }

    /// `log|M|` from a factorized envelope.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.vals[self.idx(i, i)].ln()).sum::<f64>()
    }

    /// Solve `L y = b` in place.
    pub fn solve_lower(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let r = self.idx(i, fi);
            let mut s = b[i];
            for k in 0..(i - fi) {
                s -= self.vals[r + k] * b[fi + k];
            }
            b[i] = s / self.vals[self.idx(i, i)];
        }
    }

    /// Solve `Lᵀ x = y` in place.
    pub fn solve_upper(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            b[i] /= self.vals[self.idx(i, i)];
            let xi = b[i];
            let fi = self.first[i];
            let r = self.idx(i, fi);
            for k in 0..(i - fi) {
                b[fi + k] -= self.vals[r + k] * xi;
            }
        }
    }

    /// Solve `M x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.solve_lower(b);
        self.solve_upper(b);
    }
}

/// Precision-block builder on a fixed graph and area ordering.
#[derive(Debug, Clone)]
pub struct GmrfBlocks {
    order: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
}

/// Factorized `scale·(λA + I) + diag(extra)` on a subset of areas, with the
/// subset listed in factor order.
#[derive(Debug, Clone)]
pub struct BlockFactor {
    pub areas: Vec<usize>,
    pub chol: Envelope,
}

impl GmrfBlocks {
    pub fn new(graph: &SpatialGraph) -> Self {
        let order = reverse_cuthill_mckee(graph);
        let neighbors = (0..graph.n()).map(|i| graph.neighbors(i).to_vec()).collect();
        GmrfBlocks { order, neighbors }
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Areas selected by `mask`, sorted in factor order.
    pub fn subset(&self, mask: &[bool]) -> Vec<usize> {
        self.order.iter().copied().filter(|&a| mask[a]).collect()
    }

    /// Factor `scale·(λA + I)_{SS} + diag(extra)` where `S` is given by
    /// `areas` (factor order) and `extra[k]` belongs to `areas[k]`.
    pub fn factor(&self, areas: &[usize], lambda: f64, scale: f64, extra: Option<&[f64]>) -> Result<BlockFactor> {
        let m = areas.len();
        let mut local = vec![usize::MAX; self.n()];
        for (k, &a) in areas.iter().enumerate() {
            local[a] = k;
        }
        let first: Vec<usize> = areas
            .iter()
            .enumerate()
            .map(|(k, &a)| {
                self.neighbors[a].iter().filter_map(|&b| (local[b] != usize::MAX).then(|| local[b])).filter(|&l| l < k).min().unwrap_or(k)
            })
            .collect();
        let mut env = Envelope::with_profile(first);
        for (k, &a) in areas.iter().enumerate() {
            let d = scale * (lambda * self.neighbors[a].len() as f64 + 1.0) + extra.map_or(0.0, |e| e[k]);
            let p = env.idx(k, k);
            env.vals[p] = d;
            for &b in &self.neighbors[a] {
                let l = local[b];
                if l != usize::MAX && l < k {
                    let p = env.idx(k, l);
                    env.vals[p] = -scale * lambda;
                }
            }
        }
        debug_assert_eq!(env.n, m);
        env.factorize()?;
        Ok(BlockFactor { areas: areas.to_vec(), chol: env })
    }

    /// `(λA + I)_{RC} x` for row set `rows` and column set `cols`, with `x`
    /// indexed like `cols`.
    pub fn cross_mul(&self, rows: &[usize], cols: &[usize], x: &[f64], lambda: f64) -> Vec<f64> {
        let mut full = vec![0.0; self.n()];
        let mut in_cols = vec![false; self.n()];
        for (k, &c) in cols.iter().enumerate() {
            full[c] = x[k];
            in_cols[c] = true;
        }
        rows.iter()
            .map(|&r| {
                let mut s = if in_cols[r] { (lambda * self.neighbors[r].len() as f64 + 1.0) * full[r] } else { 0.0 };
                for &b in &self.neighbors[r] {
                    if in_cols[b] {
                        s -= lambda * full[b];
                    }
                }
                s
            })
            .collect()
    }
}

impl BlockFactor {
    pub fn logdet(&self) -> f64 {
        self.chol.logdet()
    }

    pub fn solve(&self, b: &mut [f64]) {
        self.chol.solve(b)
    }

    /// Draw from `N(M⁻¹ b, M⁻¹)` with `b` indexed like `areas`.
    pub fn sample_canonical<R: Rng + ?Sized>(&self, b: &[f64], rng: &mut R) -> Vec<f64> {
        let mut mean = b.to_vec();
        self.chol.solve(&mut mean);
        let mut z = std_normal_vec(self.areas.len(), rng).as_slice().to_vec();
        self.chol.solve_upper(&mut z);
        mean.iter().zip(&z).map(|(m, e)| m + e).collect()
    }
}
