//! Getting-it-right validation: moments of prior draws (parameters, then
//! data) are compared with those of a chain that alternates full sweeps with
//! data redraws on a 3×3 grid with three sticks and one confounder.

use crate::data::Dataset;
use crate::dist::sample_gamma;
use crate::graph::{AdjacencyMatrix, SpatialGraph};
use crate::model::{BasePriorSpec, ComponentParams, JointModel, MixtureKernel};
use crate::sampler::{weights_from_eta, ChainState, Sampler, SamplerConfig, StickPriors, StickState};
use crate::tuning::Tuning;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const N: usize = 9;
const T: usize = 3;

struct Setup {
    graph: SpatialGraph,
    x: Vec<f64>,
    e: Vec<f64>,
    trials: Vec<u64>,
    binomial: bool,
    priors: BasePriorSpec,
    cfg: SamplerConfig,
}

impl Setup {
    fn new(binomial: bool) -> Result<Self> {
        let s = if binomial { 3 } else { 2 };
        let graph = SpatialGraph::grid(3, 3)?;
        let x: Vec<f64> = (0..N).map(|i| (i as f64 - 4.0) / 4.0).collect();
        let e: Vec<f64> = (0..N).map(|i| 2.0 + (i % 3) as f64).collect();
        let priors = BasePriorSpec {
            tau2: 0.25,
            mu_xi: DVector::from_element(1, 0.0),
            d_xi: DVector::from_element(1, 1.0),
            wishart_df: s as f64 + 4.0,
            wishart_scale: DMatrix::identity(s, s) / (s as f64 + 4.0),
        };
        let cfg = SamplerConfig {
            iterations: 0,
            burn_in: 0,
            truncation: T,
            sigma_step: 0.5,
            beta_step: 0.4,
            lambda_step: 2.0,
            adapt: false,
            priors: StickPriors { mu_alpha: 0.0, sigma2_alpha: 1.0, a_phi: 3.0, b_phi: 3.0, lambda_max: 5.0 },
            ..Default::default()
        };
        Ok(Setup { graph, x, e, trials: vec![4; N], binomial, priors, cfg })
    }

    fn model(&self, y1: Vec<u64>, y2: Vec<u64>, w: Vec<f64>) -> Result<JointModel> {
        let bin = self.binomial.then(|| (y2, self.trials.clone()));
        let data = Dataset::from_columns(
            Some((y1, self.e.clone())),
            bin,
            None,
            vec![("w".into(), w)],
            vec![("x".into(), self.x.clone())],
            if self.binomial { vec![("x".into(), self.x.clone())] } else { vec![] },
            vec![],
        )?;
        JointModel::new(data, self.priors.clone(), false)
    }

    fn placeholder(&self) -> Result<JointModel> {
        self.model(vec![0; N], vec![0; N], vec![0.0; N])
    }

    /// Redraw latents and data for every area from its component.
    fn redraw_data<R: Rng>(&self, st: &mut ChainState<ComponentParams>, rng: &mut R) -> Result<JointModel> {
        let shell = self.placeholder()?;
        let (mut y1, mut y2, mut w) = (vec![], vec![], vec![]);
        for i in 0..N {
            let (lat, a, b, _, wi) = shell.simulate_area(i, &st.components[st.stick.delta[i]], rng)?;
            st.latents[i] = lat;
            y1.push(a.ok_or_else(|| Error::Numerical("missing simulated count".into()))?);
            y2.push(b.unwrap_or(0));
            w.push(wi[0]);
        }
        self.model(y1, y2, w)
    }

    fn prior_state<R: Rng>(&self, rng: &mut R) -> Result<ChainState<ComponentParams>> {
        let p = &self.cfg.priors;
        let alpha = p.mu_alpha + p.sigma2_alpha.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let phi2 = sample_gamma(p.a_phi, p.b_phi, rng);
        let lambda = rng.random::<f64>() * p.lambda_max;
        let adj = AdjacencyMatrix::new(&self.graph)?;
        let eta = (0..T - 1)
            .map(|_| Ok(adj.sample(lambda, rng)?.iter().map(|u| alpha + u / phi2.sqrt()).collect()))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let mut stick = StickState { eta, z: vec![vec![]; N], delta: vec![0; N], alpha, phi2, lambda };
        for i in 0..N {
            let w = weights_from_eta(&stick.eta_col(i));
            let u: f64 = rng.random();
            let mut acc = 0.0;
            stick.delta[i] = T - 1;
            for (h, wh) in w.iter().enumerate() {
                acc += wh;
                if u < acc {
                    stick.delta[i] = h;
                    break;
                }
            }
        }
        let shell = self.placeholder()?;
        let components = (0..T).map(|_| shell.draw_prior(rng)).collect::<Result<Vec<_>>>()?;
        Ok(ChainState {
            stick,
            components,
            latents: vec![vec![]; N],
            tuning: Tuning::new(self.cfg.sigma_step, self.cfg.beta_step, self.cfg.lambda_step),
            counters: Default::default(),
            loglik: 0.0,
        })
    }
}

fn stats(st: &ChainState<ComponentParams>, binomial: bool) -> Vec<f64> {
    let c = &st.components[st.stick.delta[0]];
    let s = &st.stick;
    let mut base = vec![s.alpha, s.phi2, s.lambda, c.beta1[0], c.beta1[1], c.xi[0], c.sigma[(0, c.sigma.nrows() - 1)], c.dvar[0].ln()];
    if binomial {
        base.extend([c.beta2[1], c.sigma[(0, 1)]]);
    }
    base.push((st.stick.delta[0] == st.stick.delta[4]) as u8 as f64);
    let sq: Vec<f64> = base.iter().map(|v| v * v).collect();
    base.extend(sq);
    base
}

fn batch_stats(rows: &[Vec<f64>], batches: usize) -> (Vec<f64>, Vec<f64>) {
    let k = rows[0].len();
    let per = rows.len() / batches;
    let mut means = vec![0.0; k];
    let mut bm = vec![vec![0.0; k]; batches];
    for b in 0..batches {
        for r in &rows[b * per..(b + 1) * per] {
            for j in 0..k {
                bm[b][j] += r[j] / per as f64;
            }
        }
    }
    for j in 0..k {
        means[j] = bm.iter().map(|v| v[j]).sum::<f64>() / batches as f64;
    }
    let se = (0..k)
        .map(|j| {
            let v = bm.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / (batches - 1) as f64;
            (v / batches as f64).sqrt()
        })
        .collect();
    (means, se)
}

/// Batch-means z-scores (100 batches) of the difference between the two
/// simulators for each monitored statistic and its square. With `binomial`
/// a second, binomial response is added.
pub fn geweke_zscores(binomial: bool, sweeps: usize, seed: u64) -> Result<Vec<f64>> {
    if sweeps < 100 {
        return Err(Error::invalid("need at least 100 sweeps for 100 batches"));
    }
    let setup = Setup::new(binomial)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = Sampler::new(&setup.graph, setup.cfg.clone())?;

    let mc = (0..sweeps).map(|_| Ok(stats(&setup.prior_state(&mut rng)?, binomial))).collect::<Result<Vec<_>>>()?;

    let mut st = setup.prior_state(&mut rng)?;
    let mut model = setup.redraw_data(&mut st, &mut rng)?;
    let mut sc = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        sampler.sweep(&model, &mut st, &mut rng)?;
        model = setup.redraw_data(&mut st, &mut rng)?;
        sc.push(stats(&st, binomial));
    }
    let (m1, s1) = batch_stats(&mc, 100);
    let (m2, s2) = batch_stats(&sc, 100);
    Ok((0..m1.len()).map(|j| (m2[j] - m1[j]) / (s1[j].powi(2) + s2[j].powi(2)).sqrt()).collect())
}

