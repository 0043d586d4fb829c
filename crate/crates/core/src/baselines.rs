//! Comparator models: the intrinsic CAR (BYM-style) Poisson model and the
//! multivariate CAR spatially varying coefficient Poisson models, plus the
//! covariate-only Poisson mixture.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::Dataset;
use crate::dist::{cholesky_jitter, Chol, sample_gamma, sample_wishart, std_normal_vec, symmetrize};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::model::ModelVariant;
use crate::regression::RegressionModel;
use crate::sampler::{Sampler, SamplerConfig};
use crate::trace::ChainTrace;
use crate::tuning::{mh_accept, Tuner};

/// Prior on the CAR precision.
#[derive(Debug, Clone, PartialEq)]
pub enum PrecisionPrior {
    /// `Ω ~ Wishart(df, scale)` on the full coefficient precision.
    Wishart { df: f64, scale: DMatrix<f64> },
    /// Independent `Gamma(shape, rate)` on each diagonal entry, zero off-diagonals.
    Gamma { shape: f64, rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub adapt: bool,
    pub coef_step: f64,
    pub fixed_step: f64,
}

impl Default for CarConfig {
    fn default() -> Self {
        CarConfig { iterations: 2000, burn_in: 1000, thin: 1, adapt: true, coef_step: 1.0, fixed_step: 0.5 }
    }
}

impl CarConfig {
    pub fn from_sampler(cfg: &SamplerConfig) -> Self {
        CarConfig { iterations: cfg.iterations, burn_in: cfg.burn_in, thin: cfg.thin, adapt: cfg.adapt, ..Default::default() }
    }
}

/// State of a Poisson model with log-rate `x_iᵀ(β + b_i)` and `b` following
/// an intrinsic multivariate CAR with precision `Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct CarState {
    pub fixed: DVector<f64>,
    pub effects: Vec<DVector<f64>>,
    pub omega: DMatrix<f64>,
}

struct CarModel<'a> {
    graph: &'a SpatialGraph,
    y: Vec<f64>,
    e: Vec<f64>,
    x: Vec<DVector<f64>>,
    names: Vec<String>,
    prior: PrecisionPrior,
    n_components: usize,
}

fn poisson_ll(y: f64, e: f64, eta: f64) -> f64 {
    y * eta - e * eta.exp()
}

impl<'a> CarModel<'a> {
    fn p(&self) -> usize {
        self.names.len()
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn area_ll(&self, i: usize, coef: &DVector<f64>) -> f64 {
        poisson_ll(self.y[i], self.e[i], self.x[i].dot(coef))
    }

    fn neighbour_mean(&self, st: &CarState, i: usize) -> Option<DVector<f64>> {
        let nb = self.graph.neighbors(i);
        if nb.is_empty() {
            return None;
        }
        let mut m = DVector::zeros(self.p());
        for &j in nb {
            m += &st.effects[j];
        }
        Some(m / nb.len() as f64)
    }

    fn pair_scatter(&self, st: &CarState) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.p(), self.p());
        for &(a, b) in self.graph.edges() {
            let d = &st.effects[a] - &st.effects[b];
            s += &d * d.transpose();
        }
        s
    }

    fn update_effects<R: Rng + ?Sized>(&self, st: &mut CarState, tuner: &mut Tuner, rng: &mut R) -> Result<()> {
        let p = self.p();
        for i in 0..self.n() {
            let nb = self.graph.neighbors(i).len() as f64;
            let xi = &self.x[i];
            let curv = &(xi * xi.transpose()) * self.y[i].max(1.0) + &st.omega * nb;
            let chol = cholesky_jitter(&symmetrize(curv))?;
            let mut dz = std_normal_vec(p, rng);
            chol.l().transpose().solve_upper_triangular_mut(&mut dz);
            let prop = &st.effects[i] + dz * tuner.step();
            let prior = |b: &DVector<f64>| match self.neighbour_mean(st, i) {
                Some(m) => {
                    let d = b - m;
                    -0.5 * nb * (d.transpose() * &st.omega * &d)[0]
                }
                None => 0.0,
            };
            let cur = &st.fixed + &st.effects[i];
            let new = &st.fixed + &prop;
            let log_a = self.area_ll(i, &new) + prior(&prop) - self.area_ll(i, &cur) - prior(&st.effects[i]);
            let acc = mh_accept(log_a, rng);
            tuner.record(acc);
            if acc {
                st.effects[i] = prop;
            }
        }
        Ok(())
    }

    fn fixed_chol(&self) -> Result<Chol> {
        let p = self.p();
        let mut info = DMatrix::zeros(p, p);
        for i in 0..self.n() {
            info += &(&self.x[i] * self.x[i].transpose()) * self.y[i].max(1.0);
        }
        cholesky_jitter(&info)
    }

    fn update_fixed<R: Rng + ?Sized>(
        &self,
        st: &mut CarState,
        chol: &Chol,
        tuner: &mut Tuner,
        rng: &mut R,
    ) {
        let mut dz = std_normal_vec(self.p(), rng);
        chol.l().transpose().solve_upper_triangular_mut(&mut dz);
        let prop = &st.fixed + dz * tuner.step();
        let ll = |f: &DVector<f64>| -> f64 { (0..self.n()).map(|i| self.area_ll(i, &(f + &st.effects[i]))).sum() };
        let acc = mh_accept(ll(&prop) - ll(&st.fixed), rng);
        tuner.record(acc);
        if acc {
            st.fixed = prop;
        }
    }

    fn update_omega<R: Rng + ?Sized>(&self, st: &mut CarState, rng: &mut R) -> Result<()> {
        let s = self.pair_scatter(st);
        let rank = (self.n() - self.n_components) as f64;
        st.omega = match &self.prior {
            PrecisionPrior::Wishart { df, scale } => {
                let inv = cholesky_jitter(scale)?.inverse() + s;
                let post_scale = cholesky_jitter(&symmetrize(inv))?.inverse();
                symmetrize(sample_wishart(df + rank, &symmetrize(post_scale), rng)?)
            }
            PrecisionPrior::Gamma { shape, rate } => DMatrix::from_fn(self.p(), self.p(), |a, b| {
                if a == b {
                    sample_gamma(shape + 0.5 * rank, rate + 0.5 * s[(a, a)], rng)
                } else {
                    0.0
                }
            }),
        };
        Ok(())
    }

    /// Move the mean effect into the fixed effects; the likelihood and the
    /// intrinsic prior are both unchanged.
    fn recentre(&self, st: &mut CarState) {
        let mut m = DVector::zeros(self.p());
        for b in &st.effects {
            m += b;
        }
        m /= self.n() as f64;
        for b in st.effects.iter_mut() {
            *b -= &m;
        }
        st.fixed += m;
    }

    fn global_names(&self) -> Vec<String> {
        let p = self.p();
        let mut g: Vec<String> = self.names.iter().map(|n| format!("fixed_{n}")).collect();
        if p == 1 {
            g.push("tau2".into());
        } else {
            for a in 0..p {
                for b in a..p {
                    g.push(format!("omega_{}{}", a + 1, b + 1));
                }
            }
        }
        g
    }

    fn globals(&self, st: &CarState) -> Vec<f64> {
        let p = self.p();
        let mut g: Vec<f64> = st.fixed.iter().copied().collect();
        if p == 1 {
            g.push(1.0 / st.omega[(0, 0)]);
        } else {
            for a in 0..p {
                for b in a..p {
                    g.push(st.omega[(a, b)]);
                }
            }
        }
        g
    }

    fn run<R: Rng + ?Sized>(&self, model: &str, cfg: &CarConfig, rng: &mut R) -> Result<ChainTrace> {
        if cfg.thin == 0 || cfg.burn_in > cfg.iterations {
            return Err(Error::invalid("invalid iteration settings"));
        }
        let p = self.p();
        let n = self.n();
        let ybar: f64 = self.y.iter().sum::<f64>().max(0.5) / self.e.iter().sum::<f64>();
        let mut fixed = DVector::zeros(p);
        fixed[0] = ybar.ln();
        let mut st = CarState { fixed, effects: vec![DVector::zeros(p); n], omega: DMatrix::identity(p, p) };
        let chol = self.fixed_chol()?;
        let mut coef_tuner = Tuner::new(cfg.coef_step);
        let mut fixed_tuner = Tuner::new(cfg.fixed_step);
        if cfg.adapt && cfg.burn_in > 0 {
            coef_tuner.adapting = true;
            fixed_tuner.adapting = true;
        }
        let mut trace = ChainTrace::new(model, n, self.names.clone(), self.global_names());
        for it in 1..=cfg.iterations {
            self.update_effects(&mut st, &mut coef_tuner, rng)
                .map_err(|e| Error::Numerical(format!("iteration {it}: {e}; omega={}", st.omega)))?;
            self.update_fixed(&mut st, &chol, &mut fixed_tuner, rng);
            self.recentre(&mut st);
            self.update_omega(&mut st, rng)
                .map_err(|e| Error::Numerical(format!("iteration {it}: {e}; omega={}", st.omega)))?;
            if it == cfg.burn_in {
                coef_tuner.freeze();
                fixed_tuner.freeze();
            }
            if it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
                let mut coefs = Vec::with_capacity(n * p);
                for b in &st.effects {
                    coefs.extend((&st.fixed + b).iter());
                }
                trace.push(it, self.globals(&st), coefs);
            }
        }
        for (name, t) in [("coef", &coef_tuner), ("fixed", &fixed_tuner)] {
            if let Some(r) = t.rate() {
                trace.acceptance.insert(name.into(), (r, t.proposed));
            }
        }
        Ok(trace)
    }
}

fn count_columns(data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut y = Vec::with_capacity(data.n());
    let mut e = Vec::with_capacity(data.n());
    for a in &data.areas {
        match a.y1 {
            Some(v) => {
                y.push(v as f64);
                e.push(a.e);
            }
            None => return Err(Error::Data("CAR models need a count response".into())),
        }
    }
    Ok((y, e))
}

fn check_graph(data: &Dataset, graph: &SpatialGraph) -> Result<()> {
    if data.n() != graph.n() {
        return Err(Error::DimensionMismatch { expected: graph.n(), got: data.n() });
    }
    Ok(())
}

fn n_components(graph: &SpatialGraph) -> usize {
    graph.components().iter().copied().max().map_or(0, |m| m + 1)
}

/// Poisson model with log-rate `β₀ + θ_i` and intrinsic CAR effects `θ`;
/// `τ² ~ IG(shape, rate)`.
pub fn fit_bym<R: Rng + ?Sized>(
    data: &Dataset,
    graph: &SpatialGraph,
    tau2_prior: (f64, f64),
    cfg: &CarConfig,
    rng: &mut R,
) -> Result<ChainTrace> {
    check_graph(data, graph)?;
    let (y, e) = count_columns(data)?;
    let m = CarModel {
        graph,
        x: vec![DVector::from_element(1, 1.0); y.len()],
        y,
        e,
        names: vec!["intercept".into()],
        prior: PrecisionPrior::Gamma { shape: tau2_prior.0, rate: tau2_prior.1 },
        n_components: n_components(graph),
    };
    m.run("BYM", cfg, rng)
}

/// Spatially varying coefficient Poisson model on the count design
/// (intercept, risk factors) followed by the confounders.
pub fn fit_mcar<R: Rng + ?Sized>(
    data: &Dataset,
    graph: &SpatialGraph,
    prior: PrecisionPrior,
    cfg: &CarConfig,
    rng: &mut R,
) -> Result<ChainTrace> {
    check_graph(data, graph)?;
    let (y, e) = count_columns(data)?;
    let x: Vec<DVector<f64>> =
        data.areas.iter().map(|a| DVector::from_iterator(a.x1.len() + a.w.len(), a.x1.iter().chain(&a.w).copied())).collect();
    let mut names = vec!["intercept".to_string()];
    names.extend(data.x1_names.iter().cloned());
    names.extend(data.w_names.iter().cloned());
    let p = names.len();
    let model = match &prior {
        PrecisionPrior::Wishart { scale, .. } => {
            if scale.nrows() != p {
                return Err(Error::DimensionMismatch { expected: p, got: scale.nrows() });
            }
            "M6"
        }
        PrecisionPrior::Gamma { .. } => "M6A",
    };
    let m = CarModel { graph, y, e, x, names, prior, n_components: n_components(graph) };
    m.run(model, cfg, rng)
}

/// Default MCAR precision priors: `Wishart(4, I)` for the full precision and
/// its diagonal marginal `Gamma(2, 1/2)` per coordinate.
pub fn default_precision_prior(p: usize, diagonal: bool) -> PrecisionPrior {
    if diagonal {
        PrecisionPrior::Gamma { shape: 2.0, rate: 0.5 }
    } else {
        PrecisionPrior::Wishart { df: 4.0f64.max(p as f64 + 1.0), scale: DMatrix::identity(p, p) }
    }
}

/// Mixture of Poisson regressions with spatial stick-breaking weights and no
/// covariate density.
pub fn fit_m5<R: Rng + ?Sized>(
    data: Dataset,
    graph: &SpatialGraph,
    cfg: SamplerConfig,
    tau2: f64,
    rng: &mut R,
) -> Result<ChainTrace> {
    let k = RegressionModel::new(data, ModelVariant::M5, tau2)?;
    Sampler::new(graph, cfg)?.run(&k, "M5", rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mean;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn counts(y: Vec<u64>, e: Vec<f64>) -> Dataset {
        Dataset::from_columns(Some((y, e)), None, None, vec![], vec![], vec![], vec![]).unwrap()
    }

    #[test]
    fn single_area_matches_log_gamma_posterior() {
        let g = SpatialGraph::from_edges(&[], 1).unwrap();
        let d = counts(vec![7], vec![4.0]);
        let cfg = CarConfig { iterations: 30000, burn_in: 2000, ..Default::default() };
        let tr = fit_bym(&d, &g, (1.0, 0.1), &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let draws: Vec<f64> = tr.coef_draws(0, 0).iter().map(|t| t.exp()).collect();
        // flat prior on the log rate: the rate is Gamma(7, 4)
        let m = mean(&draws);
        assert!((m - 7.0 / 4.0).abs() < 0.06, "{m}");
    }

    #[test]
    fn null_data_centres_relative_risk() {
        let g = SpatialGraph::grid(4, 4).unwrap();
        let d = counts(vec![20; 16], vec![20.0; 16]);
        let cfg = CarConfig { iterations: 4000, burn_in: 1000, ..Default::default() };
        let tr = fit_bym(&d, &g, (1.0, 0.1), &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for i in [0, 5, 15] {
            let m = mean(&tr.coef_draws(i, 0).iter().map(|t| t.exp()).collect::<Vec<_>>());
            assert!((m - 1.0).abs() < 0.1, "area {i}: {m}");
        }
    }

    #[test]
    fn diagonal_precision_stays_diagonal() {
        let g = SpatialGraph::grid(3, 3).unwrap();
        let n = 9;
        let d = Dataset::from_columns(
            Some(((0..n).map(|i| 10 + i as u64).collect(), vec![12.0; n])),
            None,
            None,
            vec![("w".into(), (0..n).map(|i| i as f64 * 0.1).collect())],
            vec![("x".into(), (0..n).map(|i| (i as f64 - 4.0) * 0.3).collect())],
            vec![],
            vec![],
        )
        .unwrap();
        let cfg = CarConfig { iterations: 300, burn_in: 100, ..Default::default() };
        let tr = fit_mcar(&d, &g, default_precision_prior(3, true), &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(tr.model, "M6A");
        for name in ["omega_12", "omega_13", "omega_23"] {
            let k = tr.global_index(name).unwrap();
            assert!(tr.global_draws(k).iter().all(|&v| v == 0.0));
        }
        let tr = fit_mcar(&d, &g, default_precision_prior(3, false), &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(tr.coef_names, vec!["intercept", "x", "w"]);
        let rate = tr.acceptance["coef"].0;
        assert!(rate > 0.05 && rate < 0.6, "{rate}");
    }

    #[test]
    fn missing_counts_are_rejected() {
        let g = SpatialGraph::grid(1, 2).unwrap();
        let d = Dataset::from_columns(None, None, Some(vec![0.1, 0.2]), vec![], vec![], vec![], vec![]).unwrap();
        assert!(fit_bym(&d, &g, (1.0, 0.1), &CarConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
