//! Regression mixture components: each response follows its GLM given the
//! covariates, optionally paired with a Gaussian density over the covariates
//! (variants M2 to M5).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::data::{mean, variance, Dataset};
use crate::dist::{self, cholesky_jitter, mvn_logpdf_chol, sample_gamma, sample_inv_wishart, sample_mvn_canonical, Chol, LN_2PI};
use crate::error::{Error, Result};
use crate::model::{normal, MixtureKernel, ModelVariant, PREDICTOR_CLAMP};
use crate::tuning::{mh_accept, Tuning};

/// Form of the covariate density inside a component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateDensity {
    None,
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionParams {
    pub beta_count: DVector<f64>,
    pub beta_binom: DVector<f64>,
    pub beta_cont: DVector<f64>,
    pub sigma2_cont: f64,
    pub cov_mean: DVector<f64>,
    pub cov_matrix: DMatrix<f64>,
}

/// Component family of the regression variants.
#[derive(Debug, Clone)]
pub struct RegressionModel {
    pub data: Dataset,
    pub density: CovariateDensity,
    pub tau2: f64,
    count_design: Vec<Vec<f64>>,
    binom_design: Vec<Vec<f64>>,
    cont_design: Vec<Vec<f64>>,
    covariates: Vec<DVector<f64>>,
    covariate_names: Vec<String>,
    coef_names: Vec<String>,
    ln_fact: Vec<f64>,
    ln_choose: Vec<f64>,
    prior_mean: DVector<f64>,
    prior_var: DVector<f64>,
    emp_cov: DMatrix<f64>,
    cont_prior: (f64, f64),
}

pub struct RegressionPrepared {
    chol: Option<Chol>,
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 { -(-x).exp().ln_1p() } else { x - x.exp().ln_1p() }
}

impl RegressionModel {
    /// Configure the family for a regression variant. M4 drops the
    /// confounders from the predictors; M5 drops the covariate density.
    pub fn new(data: Dataset, variant: ModelVariant, tau2: f64) -> Result<Self> {
        let (with_w, density) = match variant {
            ModelVariant::M2 => (true, CovariateDensity::Full),
            ModelVariant::M3 => (true, CovariateDensity::Diagonal),
            ModelVariant::M4 => (false, CovariateDensity::Full),
            ModelVariant::M5 => (true, CovariateDensity::None),
            _ => return Err(Error::invalid(format!("{} is not a regression variant", variant.name()))),
        };
        Self::with_options(data, with_w, density, tau2)
    }

    pub fn with_options(data: Dataset, confounders_in_predictor: bool, density: CovariateDensity, tau2: f64) -> Result<Self> {
        let l = data.layout;
        if l.d() + l.continuous as usize == 0 {
            return Err(Error::Data("the regression model needs at least one response".into()));
        }
        let extend = |x: &[f64], w: &[f64], on: bool| -> Vec<f64> {
            if !on {
                return Vec::new();
            }
            let mut v = x.to_vec();
            if confounders_in_predictor {
                v.extend_from_slice(w);
            }
            v
        };
        let count_design = data.areas.iter().map(|a| extend(&a.x1, &a.w, l.count)).collect();
        let binom_design = data.areas.iter().map(|a| extend(&a.x2, &a.w, l.binomial)).collect();
        let cont_design = data.areas.iter().map(|a| extend(&a.x3, &a.w, l.continuous)).collect();

        // distinct covariates across predictors, then confounders
        let mut covariate_names: Vec<String> = Vec::new();
        let mut sources: Vec<(usize, usize)> = Vec::new();
        for (which, names) in [(1usize, &data.x1_names), (2, &data.x2_names), (3, &data.x3_names)] {
            for (k, nm) in names.iter().enumerate() {
                if !covariate_names.contains(nm) {
                    covariate_names.push(nm.clone());
                    sources.push((which, k + 1));
                }
            }
        }
        covariate_names.extend(data.w_names.iter().cloned());
        let covariates: Vec<DVector<f64>> = data
            .areas
            .iter()
            .map(|a| {
                let mut v: Vec<f64> = sources
                    .iter()
                    .map(|&(which, k)| match which {
                        1 => a.x1[k],
                        2 => a.x2[k],
                        _ => a.x3[k],
                    })
                    .collect();
                v.extend_from_slice(&a.w);
                DVector::from_vec(v)
            })
            .collect();
        let dim = covariate_names.len();
        let n = data.n();
        let cols: Vec<Vec<f64>> = (0..dim).map(|j| covariates.iter().map(|c| c[j]).collect()).collect();
        let means: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
        let vars: Vec<f64> = cols.iter().zip(&means).map(|(c, m)| variance(c, *m).max(1e-6)).collect();
        let emp_cov = DMatrix::from_fn(dim, dim, |a, b| {
            if a == b {
                vars[a]
            } else {
                cols[a].iter().zip(&cols[b]).map(|(x, y)| (x - means[a]) * (y - means[b])).sum::<f64>() / n.max(1) as f64
            }
        });
        let ln_fact = data.areas.iter().map(|a| a.y1.map_or(0.0, |y| ln_gamma(y as f64 + 1.0))).collect();
        let ln_choose = data
            .areas
            .iter()
            .map(|a| {
                a.y2.map_or(0.0, |y| {
                    ln_gamma(a.trials as f64 + 1.0) - ln_gamma(y as f64 + 1.0) - ln_gamma((a.trials - y) as f64 + 1.0)
                })
            })
            .collect();
        let y3: Vec<f64> = data.areas.iter().filter_map(|a| a.y3).collect();
        let cont_prior = (2.0, variance(&y3, mean(&y3)).max(1e-6));

        let primary: &[String] = if l.count {
            &data.x1_names
        } else if l.binomial {
            &data.x2_names
        } else {
            &data.x3_names
        };
        let mut coef_names: Vec<String> = std::iter::once("intercept".to_string()).chain(primary.iter().cloned()).collect();
        if confounders_in_predictor {
            coef_names.extend(data.w_names.iter().cloned());
        }
        Ok(RegressionModel {
            density,
            tau2,
            count_design,
            binom_design,
            cont_design,
            covariates,
            covariate_names,
            coef_names,
            ln_fact,
            ln_choose,
            prior_mean: DVector::from_vec(means),
            prior_var: DVector::from_vec(vars),
            emp_cov,
            cont_prior,
            data,
        })
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    fn dims(&self) -> (usize, usize, usize) {
        let len = |d: &Vec<Vec<f64>>| d.first().map_or(0, |r| r.len());
        (len(&self.count_design), len(&self.binom_design), len(&self.cont_design))
    }

    fn response_loglik(&self, area: usize, p: &RegressionParams) -> f64 {
        let a = &self.data.areas[area];
        let mut ll = 0.0;
        if let Some(y) = a.y1 {
            let eta = dot(&self.count_design[area], p.beta_count.as_slice()).clamp(-PREDICTOR_CLAMP, PREDICTOR_CLAMP);
            let mu = a.e * eta.exp();
            ll += y as f64 * (a.e.ln() + eta) - mu - self.ln_fact[area];
        }
        if let Some(y) = a.y2 {
            let eta = dot(&self.binom_design[area], p.beta_binom.as_slice()).clamp(-PREDICTOR_CLAMP, PREDICTOR_CLAMP);
            ll += self.ln_choose[area] + y as f64 * log_sigmoid(eta) + (a.trials - y) as f64 * log_sigmoid(-eta);
        }
        if let Some(y) = a.y3 {
            let m = dot(&self.cont_design[area], p.beta_cont.as_slice());
            ll += -0.5 * (LN_2PI + p.sigma2_cont.ln() + (y - m) * (y - m) / p.sigma2_cont);
        }
        ll
    }

    fn update_discrete<R: Rng + ?Sized>(&self, p: &mut RegressionParams, members: &[usize], tuning: &mut Tuning, rng: &mut R) {
        let (r1, r2, _) = self.dims();
        if r1 + r2 == 0 {
            return;
        }
        let log_prior = |q: &RegressionParams| -0.5 * (q.beta_count.norm_squared() + q.beta_binom.norm_squared()) / self.tau2;
        let cur: f64 = members.iter().map(|&i| self.response_loglik(i, p)).sum::<f64>() + log_prior(p);
        let step = tuning.beta.step();
        let mut prop = p.clone();
        for j in 0..r1 {
            prop.beta_count[j] += step * normal(rng);
        }
        for j in 0..r2 {
            prop.beta_binom[j] += step * normal(rng);
        }
        let new: f64 = members.iter().map(|&i| self.response_loglik(i, &prop)).sum::<f64>() + log_prior(&prop);
        let accept = mh_accept(new - cur, rng);
        tuning.beta.record(accept);
        if accept {
            *p = prop;
        }
    }

    fn update_continuous<R: Rng + ?Sized>(&self, p: &mut RegressionParams, members: &[usize], rng: &mut R) -> Result<()> {
        let (_, _, r3) = self.dims();
        if r3 == 0 {
            return Ok(());
        }
        let mut prec = DMatrix::<f64>::identity(r3, r3) / self.tau2;
        let mut lin = DVector::<f64>::zeros(r3);
        for &i in members {
            let x = DVector::from_column_slice(&self.cont_design[i]);
            let y = self.data.areas[i].y3.unwrap_or(0.0);
            prec += &x * x.transpose() / p.sigma2_cont;
            lin += &x * (y / p.sigma2_cont);
        }
        p.beta_cont = sample_mvn_canonical(&lin, &prec, rng)?;
        let (a0, b0) = self.cont_prior;
        let ss: f64 = members
            .iter()
            .map(|&i| {
                let r = self.data.areas[i].y3.unwrap_or(0.0) - dot(&self.cont_design[i], p.beta_cont.as_slice());
                r * r
            })
            .sum();
        p.sigma2_cont = 1.0 / sample_gamma(a0 + 0.5 * members.len() as f64, b0 + 0.5 * ss, rng);
        Ok(())
    }

    fn update_density<R: Rng + ?Sized>(&self, p: &mut RegressionParams, members: &[usize], rng: &mut R) -> Result<()> {
        let dim = self.covariate_names.len();
        if self.density == CovariateDensity::None || dim == 0 {
            return Ok(());
        }
        // mean given covariance
        let sinv = cholesky_jitter(&p.cov_matrix)?.inverse();
        let v0inv = DMatrix::from_diagonal(&self.prior_var.map(|v| 1.0 / v));
        let mut prec = &v0inv + &sinv * members.len() as f64;
        prec = dist::symmetrize(prec);
        let sum = members.iter().fold(DVector::zeros(dim), |acc, &i| acc + &self.covariates[i]);
        let lin = &v0inv * &self.prior_mean + &sinv * sum;
        p.cov_mean = sample_mvn_canonical(&lin, &prec, rng)?;
        // covariance given mean
        let mut scatter = DMatrix::<f64>::zeros(dim, dim);
        for &i in members {
            let r = &self.covariates[i] - &p.cov_mean;
            scatter += &r * r.transpose();
        }
        match self.density {
            CovariateDensity::Full => {
                let df = dim as f64 + 2.0 + members.len() as f64;
                p.cov_matrix = sample_inv_wishart(df, &dist::symmetrize(&self.emp_cov + scatter), rng)?;
            }
            CovariateDensity::Diagonal => {
                let mut c = DMatrix::zeros(dim, dim);
                for j in 0..dim {
                    let shape = 2.0 + 0.5 * members.len() as f64;
                    let rate = self.prior_var[j] + 0.5 * scatter[(j, j)];
                    c[(j, j)] = 1.0 / sample_gamma(shape, rate, rng);
                }
                p.cov_matrix = c;
            }
            CovariateDensity::None => {}
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl MixtureKernel for RegressionModel {
    type Params = RegressionParams;
    type Prepared = RegressionPrepared;

    fn n_areas(&self) -> usize {
        self.data.n()
    }

    fn latent_dim(&self) -> usize {
        0
    }

    fn draw_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RegressionParams> {
        let (r1, r2, r3) = self.dims();
        let sd = self.tau2.sqrt();
        let mut draw = |k: usize| DVector::from_fn(k, |_, _| sd * normal(rng));
        let beta_count = draw(r1);
        let beta_binom = draw(r2);
        let beta_cont = draw(r3);
        let (a0, b0) = self.cont_prior;
        let sigma2_cont = 1.0 / sample_gamma(a0, b0, rng);
        let dim = self.covariate_names.len();
        let cov_mean = DVector::from_fn(dim, |j, _| self.prior_mean[j] + self.prior_var[j].sqrt() * normal(rng));
        let cov_matrix = match self.density {
            CovariateDensity::Full if dim > 0 => sample_inv_wishart(dim as f64 + 2.0, &self.emp_cov, rng)?,
            CovariateDensity::Diagonal => {
                DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 / sample_gamma(2.0, self.prior_var[i], rng) } else { 0.0 })
            }
            _ => DMatrix::identity(dim, dim),
        };
        Ok(RegressionParams { beta_count, beta_binom, beta_cont, sigma2_cont, cov_mean, cov_matrix })
    }

    fn prepare(&self, p: &RegressionParams) -> Result<RegressionPrepared> {
        let chol = match self.density {
            CovariateDensity::None => None,
            _ if self.covariate_names.is_empty() => None,
            _ => Some(cholesky_jitter(&p.cov_matrix)?),
        };
        Ok(RegressionPrepared { chol })
    }

    fn loglik(&self, area: usize, p: &RegressionParams, prep: &RegressionPrepared) -> f64 {
        let mut ll = self.response_loglik(area, p);
        if let Some(c) = &prep.chol {
            ll += mvn_logpdf_chol(&self.covariates[area], &p.cov_mean, c);
        }
        ll
    }

    fn update<R: Rng + ?Sized>(
        &self,
        p: &mut RegressionParams,
        members: &[usize],
        _latents: &[Vec<f64>],
        tuning: &mut Tuning,
        rng: &mut R,
    ) -> Result<()> {
        self.update_discrete(p, members, tuning, rng);
        self.update_continuous(p, members, rng)?;
        self.update_density(p, members, rng)
    }

    fn impute<R: Rng + ?Sized>(
        &self,
        _area: usize,
        _p: &RegressionParams,
        _prep: &RegressionPrepared,
        _latent: &mut [f64],
        _rng: &mut R,
    ) -> Result<()> {
        Ok(())
    }

    fn area_coefs(&self, _area: usize, p: &RegressionParams) -> Vec<f64> {
        let l = self.data.layout;
        if l.count {
            p.beta_count.as_slice().to_vec()
        } else if l.binomial {
            p.beta_binom.as_slice().to_vec()
        } else {
            p.beta_cont.as_slice().to_vec()
        }
    }

    fn coef_names(&self) -> Vec<String> {
        self.coef_names.clone()
    }
}
