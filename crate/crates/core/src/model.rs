//! Mixture components: the joint latent-Gaussian component for mixed-type
//! responses and confounders, its base priors and likelihood, and the
//! [`MixtureKernel`] interface the sampler drives.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, Layout};
use crate::dist::{
    self, cholesky_jitter, log_interval_prob, mvn_logpdf_chol, sample_mvn_canonical, sample_wishart, wishart_logpdf,
    Chol,
};
use crate::error::{Error, Result};
use crate::link::{self, CutPointRule, Rectangle2D};
use crate::tuning::{mh_accept, Tuning};

pub const PREDICTOR_CLAMP: f64 = 35.0;

/// What a mixture component must provide to the sampler.
pub trait MixtureKernel {
    type Params: Clone + std::fmt::Debug;
    type Prepared;

    fn n_areas(&self) -> usize;
    /// Latent coordinates imputed per area (zero when the likelihood needs none).
    fn latent_dim(&self) -> usize;
    fn draw_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self::Params>;
    /// Per-component quantities reused across areas.
    fn prepare(&self, p: &Self::Params) -> Result<Self::Prepared>;
    /// Log-likelihood of area `i` under the component, latents integrated out.
    fn loglik(&self, area: usize, p: &Self::Params, prep: &Self::Prepared) -> f64;
    /// Update an occupied component given its member areas.
    fn update<R: Rng + ?Sized>(
        &self,
        p: &mut Self::Params,
        members: &[usize],
        latents: &[Vec<f64>],
        tuning: &mut Tuning,
        rng: &mut R,
    ) -> Result<()>;
    /// Draw area `i`'s latents from their full conditional.
    fn impute<R: Rng + ?Sized>(
        &self,
        area: usize,
        p: &Self::Params,
        prep: &Self::Prepared,
        latent: &mut [f64],
        rng: &mut R,
    ) -> Result<()>;
    /// Coefficients of the primary response predictor for area `i`.
    fn area_coefs(&self, area: usize, p: &Self::Params) -> Vec<f64>;
    fn coef_names(&self) -> Vec<String>;
}

/// Model variants. The joint family covers M1 and its special cases; the
/// regression family covers M2 to M5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    M1,
    M1A,
    M1B,
    M1C,
    M2,
    M3,
    M4,
    M5,
}

impl ModelVariant {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name.to_ascii_uppercase().as_str() {
            "M1" => ModelVariant::M1,
            "M1A" => ModelVariant::M1A,
            "M1B" => ModelVariant::M1B,
            "M1C" => ModelVariant::M1C,
            "M2" => ModelVariant::M2,
            "M3" => ModelVariant::M3,
            "M4" => ModelVariant::M4,
            "M5" | "NP" => ModelVariant::M5,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelVariant::M1 => "M1",
            ModelVariant::M1A => "M1A",
            ModelVariant::M1B => "M1B",
            ModelVariant::M1C => "M1C",
            ModelVariant::M2 => "M2",
            ModelVariant::M3 => "M3",
            ModelVariant::M4 => "M4",
            ModelVariant::M5 => "M5",
        }
    }

    pub fn spatial(&self) -> bool {
        !matches!(self, ModelVariant::M1A | ModelVariant::M1C)
    }

    pub fn local_independence(&self) -> bool {
        matches!(self, ModelVariant::M1B | ModelVariant::M1C)
    }

    pub fn is_joint(&self) -> bool {
        matches!(self, ModelVariant::M1 | ModelVariant::M1A | ModelVariant::M1B | ModelVariant::M1C)
    }
}

/// One mixture atom of the joint family.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    /// Log-rate coefficients (count response).
    pub beta1: DVector<f64>,
    /// Logit coefficients (binomial response).
    pub beta2: DVector<f64>,
    /// Continuous-response coefficients followed by the confounder means.
    pub xi: DVector<f64>,
    /// Covariance of `v = (latents, y3, w)` with unit latent variances.
    pub sigma: DMatrix<f64>,
    /// Non-identified latent variances `d²`, one per discrete response.
    pub dvar: Vec<f64>,
}

/// `E = D^{1/2} Σ* D^{1/2}` with `D = diag(dvar, 1, ..., 1)`.
pub fn recompose(sigma: &DMatrix<f64>, dvar: &[f64]) -> DMatrix<f64> {
    let s = sigma.nrows();
    let sd = |j: usize| if j < dvar.len() { dvar[j].sqrt() } else { 1.0 };
    DMatrix::from_fn(s, s, |i, j| sd(i) * sigma[(i, j)] * sd(j))
}

/// Inverse of [`recompose`] for the leading `d` coordinates.
pub fn separate(e: &DMatrix<f64>, d: usize) -> (DMatrix<f64>, Vec<f64>) {
    let s = e.nrows();
    let dvar: Vec<f64> = (0..d).map(|j| e[(j, j)]).collect();
    let sd = |j: usize| if j < d { dvar[j].sqrt() } else { 1.0 };
    let mut sigma = DMatrix::from_fn(s, s, |i, j| e[(i, j)] / (sd(i) * sd(j)));
    for j in 0..d {
        sigma[(j, j)] = 1.0;
    }
    (sigma, dvar)
}

/// `log |∂E/∂(D, Σ*)| = ((s-1)/2) Σ log d²_j`.
pub fn log_jacobian(dvar: &[f64], s: usize) -> f64 {
    0.5 * (s as f64 - 1.0) * dvar.iter().map(|v| v.ln()).sum::<f64>()
}

/// Base-measure hyperparameters of the joint family.
#[derive(Debug, Clone, PartialEq)]
pub struct BasePriorSpec {
    pub tau2: f64,
    pub mu_xi: DVector<f64>,
    pub d_xi: DVector<f64>,
    pub wishart_df: f64,
    pub wishart_scale: DMatrix<f64>,
}

impl BasePriorSpec {
    /// Defaults from the data: confounder prior centered at the empirical
    /// moments; Wishart scale identity on latents and the empirical
    /// covariance of the continuous coordinates with damped off-diagonals.
    pub fn from_data(data: &Dataset, tau2: f64) -> Self {
        let l = data.layout;
        let (wbar, wvar) = data.confounder_moments();
        let mut mu = vec![0.0; l.r3];
        mu.extend(&wbar);
        let mut dx = vec![tau2; l.r3];
        dx.extend(wvar.iter().map(|v| v.max(1e-8)));
        let d = l.d();
        let m = l.m();
        let cols: Vec<Vec<f64>> = (0..m)
            .map(|k| {
                data.areas
                    .iter()
                    .map(|a| if l.continuous && k == 0 { a.y3.unwrap_or(0.0) } else { a.w[k - l.continuous as usize] })
                    .collect()
            })
            .collect();
        let means: Vec<f64> = cols.iter().map(|c| crate::data::mean(c)).collect();
        let n = data.n().max(1) as f64;
        let mut h = DMatrix::<f64>::identity(d + m, d + m);
        for a in 0..m {
            for b in 0..m {
                let c: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| (x - means[a]) * (y - means[b])).sum::<f64>() / n;
                h[(d + a, d + b)] = if a == b { c.max(1e-6) } else { 0.5 * c };
            }
        }
        BasePriorSpec { tau2, mu_xi: DVector::from_vec(mu), d_xi: DVector::from_vec(dx), wishart_df: (d + m) as f64 + 2.0, wishart_scale: h }
    }
}

/// Linear predictors of one area under one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPredictors {
    /// Relative rate `exp(x1ᵀβ1)`; the Poisson mean is `E·γ`.
    pub gamma: f64,
    pub prob: f64,
    pub mean3: f64,
    /// True when a predictor was clamped to `±35`.
    pub clamped: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clamp_pred(v: f64, flag: &mut bool) -> f64 {
    if v.abs() > PREDICTOR_CLAMP {
        *flag = true;
        v.signum() * PREDICTOR_CLAMP
    } else {
        v
    }
}

/// Poisson and binomial cut-point rules plus continuous mean for one area.
pub fn linear_predictors(area: &crate::data::AreaData, beta1: &[f64], beta2: &[f64], beta3: &[f64]) -> LinearPredictors {
    let mut clamped = false;
    let g = clamp_pred(dot(&area.x1, beta1), &mut clamped).exp();
    let p = 1.0 / (1.0 + (-clamp_pred(dot(&area.x2, beta2), &mut clamped)).exp());
    let m3 = dot(&area.x3, beta3);
    LinearPredictors { gamma: g, prob: p, mean3: m3, clamped }
}

/// The joint latent-Gaussian component family (M1, M1A, M1B, M1C).
#[derive(Debug, Clone)]
pub struct JointModel {
    pub data: Dataset,
    pub priors: BasePriorSpec,
    pub local_independence: bool,
}

/// Conditional-Gaussian pieces of a component.
#[derive(Debug, Clone)]
pub struct JointPrepared {
    g_chol: Option<Chol>,
    /// `F G⁻¹`, latents given observed continuous coordinates.
    fginv: DMatrix<f64>,
    cond_cov: DMatrix<f64>,
}

impl JointModel {
    pub fn new(data: Dataset, priors: BasePriorSpec, local_independence: bool) -> Result<Self> {
        let l = data.layout;
        if l.d() + l.continuous as usize == 0 {
            return Err(Error::Data("the joint model needs at least one response".into()));
        }
        let s = l.s();
        if priors.wishart_scale.nrows() != s || priors.wishart_scale.ncols() != s {
            return Err(Error::DimensionMismatch { expected: s, got: priors.wishart_scale.nrows() });
        }
        if priors.mu_xi.len() != l.r3 + l.q || priors.d_xi.len() != l.r3 + l.q {
            return Err(Error::DimensionMismatch { expected: l.r3 + l.q, got: priors.mu_xi.len() });
        }
        if !(priors.tau2 > 0.0) || priors.wishart_df <= s as f64 - 1.0 {
            return Err(Error::invalid("tau2 must be positive and wishart df must exceed s-1"));
        }
        Ok(JointModel { data, priors, local_independence })
    }

    pub fn layout(&self) -> Layout {
        self.data.layout
    }

    /// Covariance blocks as `(start, len, latent count)`.
    fn blocks(&self) -> Vec<(usize, usize, usize)> {
        let l = self.layout();
        let r = l.d() + l.continuous as usize;
        if self.local_independence && l.q > 0 {
            vec![(0, r, l.d()), (r, l.q, 0)]
        } else {
            vec![(0, l.s(), l.d())]
        }
    }

    fn block_prior(&self, start: usize, len: usize) -> (f64, DMatrix<f64>) {
        let s = self.layout().s();
        let df = self.priors.wishart_df - (s - len) as f64;
        (df, self.priors.wishart_scale.view((start, start), (len, len)).into_owned())
    }

    fn beta3<'a>(&self, p: &'a ComponentParams) -> &'a [f64] {
        &p.xi.as_slice()[..self.layout().r3]
    }

    pub fn predictors(&self, area: usize, p: &ComponentParams) -> LinearPredictors {
        linear_predictors(&self.data.areas[area], p.beta1.as_slice(), p.beta2.as_slice(), self.beta3(p))
    }

    /// Latent intervals of area `i` (count first, then binomial).
    pub fn intervals(&self, area: usize, p: &ComponentParams) -> Vec<(f64, f64)> {
        let a = &self.data.areas[area];
        let lp = self.predictors(area, p);
        let mut out = Vec::with_capacity(2);
        if let Some(y) = a.y1 {
            out.push(CutPointRule::Poisson { rate: (a.e * lp.gamma).max(1e-300) }.interval(y));
        }
        if let Some(y) = a.y2 {
            let pr = lp.prob.clamp(1e-300, 1.0 - 1e-16);
            out.push(CutPointRule::Binomial { trials: a.trials, prob: pr }.interval(y));
        }
        out
    }

    /// Observed continuous coordinates `(y3, w)` of area `i`.
    pub fn observed(&self, area: usize) -> DVector<f64> {
        let a = &self.data.areas[area];
        DVector::from_iterator(self.layout().m(), a.y3.iter().copied().chain(a.w.iter().copied()))
    }

    /// Mean of the observed continuous coordinates under the component.
    pub fn observed_mean(&self, area: usize, p: &ComponentParams) -> DVector<f64> {
        let l = self.layout();
        let a = &self.data.areas[area];
        let mut v = Vec::with_capacity(l.m());
        if l.continuous {
            v.push(dot(&a.x3, self.beta3(p)));
        }
        v.extend(p.xi.iter().skip(l.r3));
        DVector::from_vec(v)
    }

    /// The mean design `X*` of area `i` (zero rows for latents).
    pub fn design(&self, area: usize) -> DMatrix<f64> {
        let l = self.layout();
        let a = &self.data.areas[area];
        let mut x = DMatrix::zeros(l.s(), l.r3 + l.q);
        let mut row = l.d();
        if l.continuous {
            for (k, v) in a.x3.iter().enumerate() {
                x[(row, k)] = *v;
            }
            row += 1;
        }
        for k in 0..l.q {
            x[(row + k, l.r3 + k)] = 1.0;
        }
        x
    }

    /// Full joint vector `v = (latents, y3, w)` of area `i`.
    pub fn joint_vector(&self, area: usize, latent: &[f64]) -> DVector<f64> {
        let obs = self.observed(area);
        DVector::from_iterator(self.layout().s(), latent.iter().copied().chain(obs.iter().copied()))
    }

    /// Ξ Gibbs update: conjugate Gaussian given latents.
    pub fn update_xi<R: Rng + ?Sized>(
        &self,
        p: &mut ComponentParams,
        members: &[usize],
        latents: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<()> {
        let k = p.xi.len();
        let dinv = self.priors.d_xi.map(|v| 1.0 / v);
        let mut prec = DMatrix::from_diagonal(&dinv);
        let mut lin = dinv.component_mul(&self.priors.mu_xi);
        if !members.is_empty() {
            let sinv = cholesky_jitter(&p.sigma)?.inverse();
            for &i in members {
                let x = self.design(i);
                let xt_s = x.transpose() * &sinv;
                prec += &xt_s * &x;
                lin += &xt_s * self.joint_vector(i, &latents[i]);
            }
        }
        debug_assert_eq!(prec.nrows(), k);
        p.xi = sample_mvn_canonical(&lin, &dist::symmetrize(prec), rng)?;
        Ok(())
    }

    /// Complete-data log-likelihood of the members under covariance `sigma`.
    fn complete_loglik(&self, p: &ComponentParams, sigma: &DMatrix<f64>, members: &[usize], latents: &[Vec<f64>]) -> f64 {
        let c = match sigma.clone().cholesky() {
            Some(c) => c,
            None => return f64::NEG_INFINITY,
        };
        let mut ll = 0.0;
        for &i in members {
            let v = self.joint_vector(i, &latents[i]);
            let mu = self.design(i) * &p.xi;
            ll += mvn_logpdf_chol(&v, &mu, &c);
        }
        ll
    }

    /// Parameter-extended Metropolis-Hastings for `(D, Σ*)`, one block at a time.
    pub fn update_sigma<R: Rng + ?Sized>(
        &self,
        p: &mut ComponentParams,
        members: &[usize],
        latents: &[Vec<f64>],
        tuning: &mut Tuning,
        rng: &mut R,
    ) -> Result<()> {
        for (start, len, nd) in self.blocks() {
            let (df, h) = self.block_prior(start, len);
            let dv_cur: Vec<f64> = p.dvar[..nd].to_vec();
            let sig_cur = p.sigma.view((start, start), (len, len)).into_owned();
            let e_cur = recompose(&sig_cur, &dv_cur);
            let step = tuning.sigma.step();
            let psi = (len as f64 - 1.0) + 2.0 / (step * step);
            let e_prop = match sample_wishart(psi, &(&e_cur / psi), rng) {
                Ok(e) => e,
                Err(_) => {
                    tuning.sigma.record(false);
                    continue;
                }
            };
            let (sig_prop_b, dv_prop) = separate(&e_prop, nd);
            let mut full_prop = p.sigma.clone();
            full_prop.view_mut((start, start), (len, len)).copy_from(&sig_prop_b);
            let ll_cur = self.complete_loglik(p, &p.sigma, members, latents);
            let ll_prop = self.complete_loglik(p, &full_prop, members, latents);
            let log_a = (|| -> Result<f64> {
                let prior_prop = wishart_logpdf(&e_prop, df, &h)? + log_jacobian(&dv_prop, len);
                let prior_cur = wishart_logpdf(&e_cur, df, &h)? + log_jacobian(&dv_cur, len);
                let q_rev = wishart_logpdf(&e_cur, psi, &(&e_prop / psi))? + log_jacobian(&dv_cur, len);
                let q_fwd = wishart_logpdf(&e_prop, psi, &(&e_cur / psi))? + log_jacobian(&dv_prop, len);
                Ok(prior_prop + ll_prop + q_rev - prior_cur - ll_cur - q_fwd)
            })();
            let accept = matches!(log_a, Ok(a) if mh_accept(a, rng));
            tuning.sigma.record(accept);
            if accept {
                p.sigma = full_prop;
                p.dvar[..nd].copy_from_slice(&dv_prop);
            }
        }
        Ok(())
    }

    /// Random-walk MH for the count and binomial coefficients on the
    /// latent-integrated likelihood.
    pub fn update_beta<R: Rng + ?Sized>(
        &self,
        p: &mut ComponentParams,
        members: &[usize],
        tuning: &mut Tuning,
        rng: &mut R,
    ) -> Result<()> {
        let l = self.layout();
        let k = l.r1 + l.r2;
        if k == 0 {
            return Ok(());
        }
        let prep = self.prepare(p)?;
        let tau2 = self.priors.tau2;
        let log_prior = |q: &ComponentParams| -> f64 {
            -0.5 * (q.beta1.norm_squared() + q.beta2.norm_squared()) / tau2
        };
        let cur_ll: f64 = members.iter().map(|&i| self.loglik(i, p, &prep)).sum();
        let step = tuning.beta.step();
        let mut prop = p.clone();
        for j in 0..l.r1 {
            prop.beta1[j] += step * rng.sample::<f64, _>(StandardNormal);
        }
        for j in 0..l.r2 {
            prop.beta2[j] += step * rng.sample::<f64, _>(StandardNormal);
        }
        let prop_ll: f64 = members.iter().map(|&i| self.loglik(i, &prop, &prep)).sum();
        let log_a = prop_ll + log_prior(&prop) - cur_ll - log_prior(p);
        let accept = mh_accept(log_a, rng);
        tuning.beta.record(accept);
        if accept {
            *p = prop;
        }
        Ok(())
    }

    /// Draw `v = (latents, y3, w)` for area `i` from a component and return
    /// the implied observations: `(latents, count, successes, y3, w)`.
    pub fn simulate_area<R: Rng + ?Sized>(
        &self,
        area: usize,
        p: &ComponentParams,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Option<u64>, Option<u64>, Option<f64>, Vec<f64>)> {
        let l = self.layout();
        let mean = self.design(area) * &p.xi;
        let v = dist::sample_mvn(&mean, &p.sigma, rng)?;
        let lat: Vec<f64> = v.iter().take(l.d()).copied().collect();
        let lp = self.predictors(area, p);
        let a = &self.data.areas[area];
        let mut k = 0;
        let y1 = if l.count {
            let r = CutPointRule::Poisson { rate: (a.e * lp.gamma).max(1e-300) };
            k += 1;
            Some(r.latent_to_count(lat[0])?)
        } else {
            None
        };
        let y2 = if l.binomial {
            let r = CutPointRule::Binomial { trials: a.trials, prob: lp.prob.clamp(1e-300, 1.0 - 1e-16) };
            Some(r.latent_to_count(lat[k])?)
        } else {
            None
        };
        let mut rest = v.iter().skip(l.d()).copied();
        let y3 = if l.continuous { rest.next() } else { None };
        let w: Vec<f64> = rest.collect();
        Ok((lat, y1, y2, y3, w))
    }
}

impl MixtureKernel for JointModel {
    type Params = ComponentParams;
    type Prepared = JointPrepared;

    fn n_areas(&self) -> usize {
        self.data.n()
    }

    fn latent_dim(&self) -> usize {
        self.layout().d()
    }

    fn draw_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ComponentParams> {
        let l = self.layout();
        let sd = self.priors.tau2.sqrt();
        let beta1 = DVector::from_fn(l.r1, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        let beta2 = DVector::from_fn(l.r2, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        let xi = DVector::from_fn(l.r3 + l.q, |j, _| {
            self.priors.mu_xi[j] + self.priors.d_xi[j].sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let s = l.s();
        let mut sigma = DMatrix::zeros(s, s);
        let mut dvar = vec![1.0; l.d()];
        for (start, len, nd) in self.blocks() {
            let (df, h) = self.block_prior(start, len);
            let mut tries = 0;
            let e = loop {
                match sample_wishart(df, &h, rng) {
                    Ok(e) if e.clone().cholesky().is_some() => break e,
                    _ if tries < 10 => tries += 1,
                    Ok(_) => return Err(Error::NotPositiveDefinite("wishart draw")),
                    Err(e) => return Err(e),
                }
            };
            let (sb, dv) = separate(&e, nd);
            sigma.view_mut((start, start), (len, len)).copy_from(&sb);
            dvar[..nd].copy_from_slice(&dv);
        }
        Ok(ComponentParams { beta1, beta2, xi, sigma, dvar })
    }

    fn prepare(&self, p: &ComponentParams) -> Result<JointPrepared> {
        let l = self.layout();
        let d = l.d();
        let m = l.m();
        let r = p.sigma.view((0, 0), (d, d)).into_owned();
        if m == 0 {
            return Ok(JointPrepared { g_chol: None, fginv: DMatrix::zeros(d, 0), cond_cov: r });
        }
        let g = p.sigma.view((d, d), (m, m)).into_owned();
        let f = p.sigma.view((0, d), (d, m)).into_owned();
        let gc = cholesky_jitter(&g)?;
        let fginv = gc.solve(&f.transpose()).transpose();
        let mut cond = dist::symmetrize(&r - &fginv * f.transpose());
        for j in 0..d {
            cond[(j, j)] = cond[(j, j)].max(dist::JITTER);
        }
        Ok(JointPrepared { g_chol: Some(gc), fginv, cond_cov: cond })
    }

    fn loglik(&self, area: usize, p: &ComponentParams, prep: &JointPrepared) -> f64 {
        let l = self.layout();
        let d = l.d();
        let mut ll = 0.0;
        let mut cmean = DVector::zeros(d);
        if let Some(gc) = &prep.g_chol {
            let s = self.observed(area);
            let mu = self.observed_mean(area, p);
            ll += mvn_logpdf_chol(&s, &mu, gc);
            if d > 0 {
                cmean = &prep.fginv * (s - mu);
            }
        }
        if d == 0 {
            return ll;
        }
        let iv = self.intervals(area, p);
        match d {
            1 => {
                let sd = prep.cond_cov[(0, 0)].sqrt();
                ll + log_interval_prob((iv[0].0 - cmean[0]) / sd, (iv[0].1 - cmean[0]) / sd)
            }
            _ => {
                let rect = Rectangle2D { lower: [iv[0].0, iv[1].0], upper: [iv[0].1, iv[1].1] };
                let c = &prep.cond_cov;
                match link::log_rect_prob_bvn([cmean[0], cmean[1]], [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]], &rect) {
                    Ok(v) => ll + v,
                    Err(_) => f64::NEG_INFINITY,
                }
            }
        }
    }

    fn update<R: Rng + ?Sized>(
        &self,
        p: &mut ComponentParams,
        members: &[usize],
        latents: &[Vec<f64>],
        tuning: &mut Tuning,
        rng: &mut R,
    ) -> Result<()> {
        self.update_xi(p, members, latents, rng)?;
        self.update_sigma(p, members, latents, tuning, rng)?;
        self.update_beta(p, members, tuning, rng)
    }

    fn impute<R: Rng + ?Sized>(
        &self,
        area: usize,
        p: &ComponentParams,
        prep: &JointPrepared,
        latent: &mut [f64],
        rng: &mut R,
    ) -> Result<()> {
        let d = self.layout().d();
        if d == 0 {
            return Ok(());
        }
        let mut cmean = DVector::zeros(d);
        if prep.g_chol.is_some() {
            cmean = &prep.fginv * (self.observed(area) - self.observed_mean(area, p));
        }
        let iv = self.intervals(area, p);
        let c = &prep.cond_cov;
        if d == 1 {
            latent[0] = link::sample_trunc_normal_1d(cmean[0], c[(0, 0)].sqrt(), iv[0].0, iv[0].1, rng)?;
        } else {
            let rect = Rectangle2D::new([iv[0].0, iv[1].0], [iv[0].1, iv[1].1])?;
            let x = link::sample_trunc_bvn_exact(
                [cmean[0], cmean[1]],
                [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]],
                &rect,
                rng,
            )?;
            latent[0] = x[0];
            latent[1] = x[1];
        }
        Ok(())
    }

    fn area_coefs(&self, _area: usize, p: &ComponentParams) -> Vec<f64> {
        let l = self.layout();
        if l.count {
            p.beta1.as_slice().to_vec()
        } else if l.binomial {
            p.beta2.as_slice().to_vec()
        } else {
            p.xi.as_slice()[..l.r3].to_vec()
        }
    }

    fn coef_names(&self) -> Vec<String> {
        let l = self.layout();
        let names = if l.count {
            &self.data.x1_names
        } else if l.binomial {
            &self.data.x2_names
        } else {
            &self.data.x3_names
        };
        std::iter::once("intercept".to_string()).chain(names.iter().cloned()).collect()
    }
}

/// `log Σ_h π_h exp(ℓ_h)` with max-shift.
pub fn log_mix(logliks: &[f64], weights: &[f64]) -> Result<f64> {
    let terms: Vec<f64> = logliks.iter().zip(weights).map(|(l, w)| l + w.ln()).collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::ZeroLikelihood);
    }
    Ok(m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln())
}

/// Log-density of area `i` under a truncated mixture of joint components.
pub fn truncated_mixture_logdensity(
    model: &JointModel,
    area: usize,
    components: &[ComponentParams],
    weights: &[f64],
) -> Result<f64> {
    let ll: Vec<f64> = components
        .iter()
        .map(|c| Ok(model.loglik(area, c, &model.prepare(c)?)))
        .collect::<Result<_>>()?;
    log_mix(&ll, weights)
}

/// Log-likelihood of one area under one component.
pub fn component_loglik(model: &JointModel, area: usize, p: &ComponentParams) -> Result<f64> {
    Ok(model.loglik(area, p, &model.prepare(p)?))
}

/// Standard-normal draw helper shared with the regression family.
pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
