//! Synthetic data for the two simulation designs and the error metrics used
//! to score fits against the truth.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, Dataset};
use crate::dist::{cholesky_jitter, norm_cdf, sample_mvn_chol};
use crate::error::{Error, Result};
use crate::graph::{AdjacencyMatrix, SpatialGraph};
use crate::link::CutPointRule;
use crate::trace::ChainTrace;

/// Generating parameters of one cluster: confounder moments, its
/// correlations with the count latent and the risk-factor latent, and the
/// log-rate `β0 + β1·x + β2·x² + β3·w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub name: String,
    pub mu_w: f64,
    pub var_w: f64,
    pub rho_yw: f64,
    pub rho_xw: f64,
    pub beta: [f64; 4],
}

impl ClusterSpec {
    /// Covariance of `(y*, x*, w)`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if !(self.var_w > 0.0) {
            return Err(Error::invalid(format!("cluster {}: var_w must be positive", self.name)));
        }
        let sw = self.var_w.sqrt();
        let c = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, self.rho_yw * sw, 0.0, 1.0, self.rho_xw * sw, self.rho_yw * sw, self.rho_xw * sw, self.var_w],
        );
        if c.clone().cholesky().is_none() {
            return Err(Error::invalid(format!("cluster {}: correlations are not positive definite", self.name)));
        }
        Ok(c)
    }

    pub fn log_rate(&self, x: f64, w: f64) -> f64 {
        let b = &self.beta;
        b[0] + b[1] * x + b[2] * x * x + b[3] * w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpecs {
    pub cluster: Vec<ClusterSpec>,
}

/// Reconstructed cluster parameters for the first design. Only some values
/// are known exactly; the rest are chosen to produce the intended structure
/// (quadratic effect, confounded linear effects, indirect association).
pub const STUDY1_CLUSTERS: &str = r#"# Reconstructed cluster parameters for the first simulation design.
# NE: quadratic risk-factor effect, confounder unrelated (exact values).
# NW: linear risk-factor effect, confounder highly correlated with the risk factor.
# SW: confounder effect only, confounder highly correlated with the risk factor.
# SE: no direct effects, count latent negatively correlated with the confounder.
# beta = [intercept, x, x^2, w]

[[cluster]]
name = "NE"
mu_w = 10.0
var_w = 1.0
rho_yw = 0.0
rho_xw = 0.0
beta = [-0.375, 0.0, 0.5, 0.0]

[[cluster]]
name = "NW"
mu_w = 5.0
var_w = 1.0
rho_yw = 0.0
rho_xw = 0.9
beta = [0.0, 0.5, 0.0, 0.0]

[[cluster]]
name = "SW"
mu_w = 0.0
var_w = 1.0
rho_yw = 0.0
rho_xw = 0.9
beta = [0.0, 0.0, 0.0, 0.2]

[[cluster]]
name = "SE"
mu_w = -6.0
var_w = 3.0
rho_yw = -0.9
rho_xw = 0.0
beta = [0.0, 0.0, 0.0, 0.0]
"#;

impl ClusterSpecs {
    pub fn parse(text: &str) -> Result<Self> {
        let s: ClusterSpecs = toml::from_str(text)?;
        if s.cluster.is_empty() {
            return Err(Error::invalid("cluster spec has no clusters"));
        }
        for c in &s.cluster {
            c.covariance()?;
        }
        Ok(s)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn study1() -> Self {
        Self::parse(STUDY1_CLUSTERS).expect("built-in cluster spec is valid")
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.cluster.iter().position(|c| c.name == name)
    }
}

/// Quadrant labels on a `rows × cols` grid in the order NE, NW, SW, SE.
pub fn quadrant_labels(rows: usize, cols: usize) -> Vec<usize> {
    let (hr, hc) = (rows / 2, cols / 2);
    (0..rows * cols)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            match (r < hr, c >= hc) {
                (true, true) => 0,
                (true, false) => 1,
                (false, false) => 2,
                (false, true) => 3,
            }
        })
        .collect()
}

/// True per-area values that accompany a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub cluster: Vec<String>,
    pub beta1: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Truth {
    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["area", "cluster", "beta1", "eta"])?;
        for i in 0..self.beta1.len() {
            w.write_record([(i + 1).to_string(), self.cluster[i].clone(), fmt_f64(self.beta1[i]), fmt_f64(self.eta[i])])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut t = Truth { cluster: vec![], beta1: vec![], eta: vec![] };
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse { line: k + 2, msg: format!("bad number '{s}'") });
            if rec.len() != 4 {
                return Err(Error::Parse { line: k + 2, msg: "expected 4 fields".into() });
            }
            t.cluster.push(rec[1].to_string());
            t.beta1.push(num(&rec[2])?);
            t.eta.push(num(&rec[3])?);
        }
        Ok(t)
    }
}

fn uniform_offsets<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(10.0..20.0)).collect()
}

/// First design: per area draw `(y*, x*, w)` from its cluster's Gaussian,
/// map `x = 3Φ(x*) − 1.5`, and discretize `y*` with Poisson cut points at
/// rate `E·exp(log_rate(x, w))`.
pub fn gen_study1<R: Rng + ?Sized>(labels: &[usize], specs: &ClusterSpecs, rng: &mut R) -> Result<(Dataset, Truth)> {
    let chols = specs
        .cluster
        .iter()
        .map(|c| cholesky_jitter(&c.covariance()?))
        .collect::<Result<Vec<_>>>()?;
    let n = labels.len();
    let e = uniform_offsets(n, rng);
    let (mut y, mut x, mut w) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut truth = Truth { cluster: Vec::with_capacity(n), beta1: Vec::with_capacity(n), eta: Vec::with_capacity(n) };
    for (i, &lab) in labels.iter().enumerate() {
        let spec = specs
            .cluster
            .get(lab)
            .ok_or_else(|| Error::invalid(format!("area {} has unknown cluster {lab}", i + 1)))?;
        let mean = DVector::from_vec(vec![0.0, 0.0, spec.mu_w]);
        let v = sample_mvn_chol(&mean, &chols[lab], rng);
        let xi = 3.0 * norm_cdf(v[1]) - 1.5;
        let eta = spec.log_rate(xi, v[2]);
        let rule = CutPointRule::poisson(e[i] * eta.exp())?;
        let mut ys = v[0];
        let count = loop {
            match rule.latent_to_count(ys) {
                Ok(c) => break c,
                Err(Error::TieAtCutPoint(_)) => ys += 1e-12,
                Err(err) => return Err(err),
            }
        };
        y.push(count);
        x.push(xi);
        w.push(v[2]);
        truth.cluster.push(spec.name.clone());
        truth.beta1.push(spec.beta[1]);
        truth.eta.push(eta);
    }
    let data = Dataset::from_columns(Some((y, e)), None, None, vec![("w".into(), w)], vec![("x".into(), x)], vec![], vec![])?;
    Ok((data, truth))
}

/// Second design: `η = u/φ` with `u` a GMRF draw at association `λ`, and
/// `Y_i ~ Poisson(E_i exp(η_i))`.
pub fn gen_study2<R: Rng + ?Sized>(graph: &SpatialGraph, lambda: f64, inv_phi: f64, rng: &mut R) -> Result<(Dataset, Truth)> {
    if !(lambda >= 0.0 && inv_phi >= 0.0) {
        return Err(Error::invalid("lambda and 1/phi must be non-negative"));
    }
    let n = graph.n();
    let u = AdjacencyMatrix::new(graph)?.sample(lambda, rng)?;
    let e = uniform_offsets(n, rng);
    let eta: Vec<f64> = u.iter().map(|v| inv_phi * v).collect();
    let y = eta
        .iter()
        .zip(&e)
        .map(|(h, ei)| {
            let rate = ei * h.exp();
            Poisson::new(rate).map(|p| p.sample(rng) as u64).map_err(|err| Error::Numerical(err.to_string()))
        })
        .collect::<Result<Vec<u64>>>()?;
    let data = Dataset::from_columns(Some((y, e)), None, None, vec![], vec![], vec![], vec![])?;
    let truth = Truth { cluster: vec!["all".into(); n], beta1: vec![0.0; n], eta };
    Ok((data, truth))
}

/// Per-area posterior mean squared errors and their root average.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mse: Vec<f64>,
    pub ramse: f64,
}

/// `MSE_i` is the posterior mean of `(draw − truth_i)²` for coefficient `k`;
/// RAMSE is the root of their average over areas selected by `mask`.
pub fn ramse(trace: &ChainTrace, k: usize, truth: &[f64], mask: &[bool]) -> Result<MetricReport> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if truth.len() != trace.n_areas || mask.len() != trace.n_areas {
        return Err(Error::DimensionMismatch { expected: trace.n_areas, got: truth.len().max(mask.len()) });
    }
    let mse: Vec<f64> = (0..trace.n_areas)
        .map(|i| {
            let d = trace.coef_draws(i, k);
            d.iter().map(|v| (v - truth[i]).powi(2)).sum::<f64>() / d.len() as f64
        })
        .collect();
    let sel: Vec<f64> = mse.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
    if sel.is_empty() {
        return Err(Error::invalid("no areas selected"));
    }
    let ramse = (sel.iter().sum::<f64>() / sel.len() as f64).sqrt();
    Ok(MetricReport { mse, ramse })
}

/// RAMSE of the risk-factor coefficient within each named cluster.
pub fn ramse_by_cluster(trace: &ChainTrace, coef: &str, truth: &Truth, clusters: &[&str]) -> Result<Vec<f64>> {
    let k = trace.coef_index(coef).ok_or_else(|| Error::invalid(format!("trace has no coefficient '{coef}'")))?;
    clusters
        .iter()
        .map(|c| {
            let mask: Vec<bool> = truth.cluster.iter().map(|t| t == c).collect();
            ramse(trace, k, &truth.beta1, &mask).map(|r| r.ramse)
        })
        .collect()
}

/// Posterior mean of coefficient `k` per area.
pub fn posterior_means(trace: &ChainTrace, k: usize) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok((0..trace.n_areas).map(|i| crate::data::mean(&trace.coef_draws(i, k))).collect())
}

/// Pooled root mean squared error of point estimates over datasets:
/// each pair holds `(estimates, truth)` for one dataset.
pub fn eta_ramse(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut ss = 0.0;
    let mut count = 0usize;
    for (est, truth) in pairs {
        if est.len() != truth.len() {
            return Err(Error::DimensionMismatch { expected: truth.len(), got: est.len() });
        }
        ss += est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        count += est.len();
    }
    if count == 0 {
        return Err(Error::invalid("no estimates"));
    }
    Ok((ss / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trace(draws: &[Vec<f64>]) -> ChainTrace {
        let n = draws[0].len();
        let mut t = ChainTrace::new("T", n, vec!["x".into()], vec![]);
        for (k, d) in draws.iter().enumerate() {
            t.push(k + 1, vec![], d.clone());
        }
        t
    }

    #[test]
    fn builtin_specs_parse() {
        let s = ClusterSpecs::study1();
        assert_eq!(s.cluster.len(), 4);
        let se = &s.cluster[s.index("SE").unwrap()];
        assert_eq!((se.var_w, se.rho_yw), (3.0, -0.9));
        assert_eq!(s.cluster[s.index("SW").unwrap()].beta[3], 0.2);
        let ne = &s.cluster[0];
        assert_eq!(ne.covariance().unwrap(), DMatrix::identity(3, 3));
        assert_eq!(ne.mu_w, 10.0);
    }

    #[test]
    fn non_pd_spec_rejected() {
        let bad = STUDY1_CLUSTERS.replacen("rho_yw = 0.0\nrho_xw = 0.9", "rho_yw = 0.8\nrho_xw = 0.9", 1);
        assert!(ClusterSpecs::parse(&bad).is_err());
    }

    #[test]
    fn quadrants() {
        let l = quadrant_labels(4, 4);
        assert_eq!(&l[..4], &[1, 1, 0, 0]);
        assert_eq!(&l[12..], &[2, 2, 3, 3]);
    }

    #[test]
    fn null_design_counts_track_offsets() {
        let spec = ClusterSpec { name: "A".into(), mu_w: 0.0, var_w: 1.0, rho_yw: 0.0, rho_xw: 0.0, beta: [0.0; 4] };
        let specs = ClusterSpecs { cluster: vec![spec] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20000;
        let (d, _) = gen_study1(&vec![0; n], &specs, &mut rng).unwrap();
        let resid: Vec<f64> = d.areas.iter().map(|a| a.y1.unwrap() as f64 - a.e).collect();
        let m = crate::data::mean(&resid);
        assert!(m.abs() < 4.0 * (15.0f64 / n as f64).sqrt(), "{m}");
        let xs: Vec<f64> = d.areas.iter().map(|a| a.x1[1]).collect();
        assert!(xs.iter().all(|x| x.abs() <= 1.5));
    }

    #[test]
    fn study2_without_signal_is_poisson_offset() {
        let g = SpatialGraph::grid(5, 5).unwrap();
        let (d, t) = gen_study2(&g, 10.0, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(t.eta.iter().all(|&e| e == 0.0));
        assert_eq!(d.n(), 25);
        let (d2, _) = gen_study2(&g, 10.0, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn ramse_cases() {
        let t = trace(&vec![vec![1.0, 2.0]; 4]);
        assert_eq!(ramse(&t, 0, &[1.0, 2.0], &[true, true]).unwrap().ramse, 0.0);
        assert!((ramse(&t, 0, &[0.0, 1.0], &[true, true]).unwrap().ramse - 1.0).abs() < 1e-15);
        // 2 areas × 3 draws: MSEs (1+0+1)/3 and (4+1+0)/3
        let t = trace(&[vec![0.0, 1.0], vec![1.0, 2.0], vec![2.0, 3.0]]);
        let r = ramse(&t, 0, &[1.0, 3.0], &[true, true]).unwrap();
        assert!((r.mse[0] - 2.0 / 3.0).abs() < 1e-15 && (r.mse[1] - 5.0 / 3.0).abs() < 1e-15);
        assert!((r.ramse - (7.0f64 / 6.0).sqrt()).abs() < 1e-15);
        let empty = ChainTrace::new("T", 2, vec!["x".into()], vec![]);
        assert!(matches!(ramse(&empty, 0, &[0.0, 0.0], &[true, true]), Err(Error::EmptyTrace)));
    }

    #[test]
    fn eta_ramse_cases() {
        assert_eq!(eta_ramse(&[(vec![1.0, 2.0], vec![1.0, 2.0])]).unwrap(), 0.0);
        assert!((eta_ramse(&[(vec![1.5, 2.5], vec![1.0, 2.0])]).unwrap() - 0.5).abs() < 1e-15);
        // errors 1, 0 | 2, 1 → sqrt(6/4)
        let r = eta_ramse(&[(vec![1.0, 0.0], vec![0.0, 0.0]), (vec![2.0, 1.0], vec![0.0, 0.0])]).unwrap();
        assert!((r - 1.5f64.sqrt()).abs() < 1e-15);
        assert!(eta_ramse(&[(vec![1.0], vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn truth_roundtrip() {
        let dir = std::env::temp_dir().join(format!("truth-rt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let t = Truth { cluster: vec!["NW".into(), "SE".into()], beta1: vec![0.5, 0.0], eta: vec![0.1, -1e-3] };
        t.write_path(dir.join("t.csv")).unwrap();
        assert_eq!(Truth::read_path(dir.join("t.csv")).unwrap(), t);
        std::fs::remove_dir_all(dir).ok();
    }
}
