//! Posterior simulation for the spatial probit stick-breaking mixture.
//!
//! One sweep updates, in order: occupied component parameters, allocations
//! (latents integrated out), latents, the two label-switching moves, the
//! stick augmentation, active scores, `(α, φ², λ)` and inactive scores.

use std::collections::BTreeMap;

use rand::Rng;

use crate::dist::{log_norm_cdf, sample_gamma};
use crate::error::{Error, Result};
use crate::graph::{symmetric_eigenvalues, AdjacencyMatrix, SpatialGraph};
use crate::link::sample_trunc_normal_1d;
use crate::model::{normal, MixtureKernel};
use crate::sparse::GmrfBlocks;
use crate::trace::ChainTrace;
use crate::tuning::{mh_accept, Tuning};

/// How the active-score precision enters the `(α, φ², λ)` update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivePrecision {
    /// Active scores under their exact GMRF marginal (inactive ones integrated out).
    Marginal,
    /// Active scores under `λA_h + I`, the adjacency submatrix on active areas.
    Subgraph,
}

impl ActivePrecision {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "marginal" => Some(ActivePrecision::Marginal),
            "subgraph" => Some(ActivePrecision::Subgraph),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StickPriors {
    pub mu_alpha: f64,
    pub sigma2_alpha: f64,
    pub a_phi: f64,
    pub b_phi: f64,
    pub lambda_max: f64,
}

impl Default for StickPriors {
    fn default() -> Self {
        StickPriors { mu_alpha: 0.0, sigma2_alpha: 1.0, a_phi: 1.0, b_phi: 0.1, lambda_max: 50.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Total sweeps, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub truncation: usize,
    /// Initial scale of the Wishart covariance proposal; its degrees of
    /// freedom are `(dim − 1) + 2/step²`.
    pub sigma_step: f64,
    /// Initial standard deviation of the coefficient random walk.
    pub beta_step: f64,
    /// Initial half-width of the uniform `λ` random walk.
    pub lambda_step: f64,
    /// Adapt proposal scales during burn-in.
    pub adapt: bool,
    pub priors: StickPriors,
    /// `false` fixes `λ = 0` (independent scores).
    pub spatial: bool,
    pub active_precision: ActivePrecision,
    /// Drop the likelihood: the chain then targets the prior.
    pub prior_only: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 2000,
            burn_in: 1000,
            thin: 1,
            truncation: 30,
            sigma_step: 0.3,
            beta_step: 0.1,
            lambda_step: 1.0,
            adapt: true,
            priors: StickPriors::default(),
            spatial: true,
            active_precision: ActivePrecision::Marginal,
            prior_only: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation == 0 {
            return Err(Error::invalid("truncation must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thinning must be at least 1"));
        }
        if self.burn_in > self.iterations {
            return Err(Error::invalid("burn-in exceeds the number of iterations"));
        }
        for (name, v) in [("sigma step", self.sigma_step), ("beta step", self.beta_step), ("lambda step", self.lambda_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let p = &self.priors;
        if !(p.sigma2_alpha > 0.0 && p.a_phi > 0.0 && p.b_phi > 0.0 && p.lambda_max > 0.0) {
            return Err(Error::invalid("prior scales and the lambda bound must be positive"));
        }
        Ok(())
    }

    pub fn kept_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Log stick-breaking weights for one area; `eta` holds the `T − 1` free
/// scores and the final stick takes the remainder.
pub fn log_weights_from_eta(eta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(eta.len() + 1);
    let mut rest = 0.0;
    for &e in eta {
        out.push(rest + log_norm_cdf(e));
        rest += log_norm_cdf(-e);
    }
    out.push(rest);
    out
}

pub fn weights_from_eta(eta: &[f64]) -> Vec<f64> {
    log_weights_from_eta(eta).into_iter().map(f64::exp).collect()
}

/// Stick-breaking state: scores, augmentation, allocations and the score
/// field's global parameters. Labels are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct StickState {
    /// `(T − 1) × n` scores.
    pub eta: Vec<Vec<f64>>,
    /// Per area, augmentation values at levels `0..=min(δ_i, T − 2)`.
    pub z: Vec<Vec<f64>>,
    pub delta: Vec<usize>,
    pub alpha: f64,
    pub phi2: f64,
    pub lambda: f64,
}

impl StickState {
    pub fn truncation(&self) -> usize {
        self.eta.len() + 1
    }

    pub fn n(&self) -> usize {
        self.delta.len()
    }

    pub fn eta_col(&self, i: usize) -> Vec<f64> {
        self.eta.iter().map(|row| row[i]).collect()
    }

    pub fn weights(&self, i: usize) -> Vec<f64> {
        weights_from_eta(&self.eta_col(i))
    }

    /// Log weight of label `h` at area `i`.
    pub fn log_weight(&self, i: usize, h: usize) -> f64 {
        log_weight_rows(&self.eta, i, h, |l| l)
    }

    /// Areas with `δ_i ≥ h`.
    pub fn active_mask(&self, h: usize) -> Vec<bool> {
        self.delta.iter().map(|&d| d >= h).collect()
    }

    pub fn occupancy(&self) -> Vec<usize> {
        let mut c = vec![0; self.truncation()];
        for &d in &self.delta {
            c[d] += 1;
        }
        c
    }

    /// Largest occupied label plus one.
    pub fn n_star(&self) -> usize {
        self.delta.iter().copied().max().map_or(0, |m| m + 1)
    }
}

fn log_weight_rows(eta: &[Vec<f64>], i: usize, h: usize, row: impl Fn(usize) -> usize) -> f64 {
    let mut lw: f64 = (0..h).map(|l| log_norm_cdf(-eta[row(l)][i])).sum();
    if h < eta.len() {
        lw += log_norm_cdf(eta[row(h)][i]);
    }
    lw
}

/// Graph-derived structures shared by all sweeps.
#[derive(Debug, Clone)]
pub struct GmrfContext {
    pub adj: AdjacencyMatrix,
    pub blocks: GmrfBlocks,
}

impl GmrfContext {
    pub fn new(graph: &SpatialGraph) -> Result<Self> {
        Ok(GmrfContext { adj: AdjacencyMatrix::new(graph)?, blocks: GmrfBlocks::new(graph) })
    }

    pub fn n(&self) -> usize {
        self.adj.n()
    }

    fn all_areas(&self) -> Vec<usize> {
        self.blocks.subset(&vec![true; self.n()])
    }

    fn full_logdet(&self, lambda: f64) -> f64 {
        self.adj.eigenvalues().iter().map(|e| (lambda * e + 1.0).ln()).sum()
    }
}

/// Draw allocations with probabilities proportional to likelihood times
/// weight; `loglik[h][i]` is area `i` under component `h`. Returns the number
/// of areas that fell back to weights only.
pub fn update_allocations<R: Rng + ?Sized>(stick: &mut StickState, loglik: &[Vec<f64>], rng: &mut R) -> usize {
    let t = stick.truncation();
    let mut fallbacks = 0;
    for i in 0..stick.n() {
        let lw = log_weights_from_eta(&stick.eta_col(i));
        let mut lp: Vec<f64> = (0..t).map(|h| loglik[h][i] + lw[h]).collect();
        let m = lp.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            fallbacks += 1;
            lp = lw;
        }
        stick.delta[i] = sample_log_categorical(&lp, rng);
    }
    fallbacks
}

/// Allocation probabilities of one area (normalized), for inspection.
pub fn allocation_probabilities(log_weights: &[f64], loglik: &[f64]) -> Vec<f64> {
    let lp: Vec<f64> = log_weights.iter().zip(loglik).map(|(w, l)| w + l).collect();
    normalize_log(&lp)
}

fn normalize_log(lp: &[f64]) -> Vec<f64> {
    let m = lp.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    let p: Vec<f64> = lp.iter().map(|&v| if v.is_nan() { 0.0 } else { (v - m).exp() }).collect();
    let s: f64 = p.iter().sum();
    p.into_iter().map(|v| v / s).collect()
}

fn sample_log_categorical<R: Rng + ?Sized>(lp: &[f64], rng: &mut R) -> usize {
    let p = normalize_log(lp);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (h, &ph) in p.iter().enumerate() {
        acc += ph;
        if u < acc {
            return h;
        }
    }
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

/// Log acceptance ratio for exchanging labels `a` and `b`.
pub fn label_switch_a_log_ratio(stick: &StickState, a: usize, b: usize) -> f64 {
    let mut r = 0.0;
    for (i, &d) in stick.delta.iter().enumerate() {
        if d == a {
            r += stick.log_weight(i, b) - stick.log_weight(i, a);
        } else if d == b {
            r += stick.log_weight(i, a) - stick.log_weight(i, b);
        }
    }
    r
}

/// Log acceptance ratio for exchanging labels `a`, `a + 1` together with
/// their score rows.
pub fn label_switch_b_log_ratio(stick: &StickState, a: usize) -> f64 {
    let rows = stick.eta.len();
    let swap = |l: usize| {
        if a + 1 < rows {
            if l == a {
                a + 1
            } else if l == a + 1 {
                a
            } else {
                l
            }
        } else {
            l
        }
    };
    let mut r = 0.0;
    for (i, &d) in stick.delta.iter().enumerate() {
        if d == a {
            r += log_weight_rows(&stick.eta, i, a + 1, swap) - stick.log_weight(i, a);
        } else if d == a + 1 {
            r += log_weight_rows(&stick.eta, i, a, swap) - stick.log_weight(i, a + 1);
        }
    }
    r
}

fn relabel(delta: &mut [usize], a: usize, b: usize) {
    for d in delta.iter_mut() {
        if *d == a {
            *d = b;
        } else if *d == b {
            *d = a;
        }
    }
}

/// Move (a): swap two random nonempty labels. Returns whether it was accepted,
/// or `None` when fewer than two components are occupied.
pub fn label_switch_a<P, R: Rng + ?Sized>(stick: &mut StickState, comps: &mut [P], rng: &mut R) -> Option<bool> {
    let occ = stick.occupancy();
    let nonempty: Vec<usize> = (0..occ.len()).filter(|&h| occ[h] > 0).collect();
    if nonempty.len() < 2 {
        return None;
    }
    let ia = rng.random_range(0..nonempty.len());
    let mut ib = rng.random_range(0..nonempty.len() - 1);
    if ib >= ia {
        ib += 1;
    }
    let (a, b) = (nonempty[ia], nonempty[ib]);
    let accept = mh_accept(label_switch_a_log_ratio(stick, a, b), rng);
    if accept {
        comps.swap(a, b);
        relabel(&mut stick.delta, a, b);
    }
    Some(accept)
}

/// Move (b): swap adjacent labels `a`, `a + 1` and their score rows, with `a`
/// uniform below the largest occupied label.
pub fn label_switch_b<P, R: Rng + ?Sized>(stick: &mut StickState, comps: &mut [P], rng: &mut R) -> Option<bool> {
    let ns = stick.n_star();
    if ns < 2 {
        return None;
    }
    let a = rng.random_range(0..ns - 1);
    let accept = mh_accept(label_switch_b_log_ratio(stick, a), rng);
    if accept {
        comps.swap(a, a + 1);
        relabel(&mut stick.delta, a, a + 1);
        if a + 1 < stick.eta.len() {
            stick.eta.swap(a, a + 1);
        }
    }
    Some(accept)
}

/// Redraw the augmentation: negative below the allocated level, positive at it.
pub fn update_z<R: Rng + ?Sized>(stick: &mut StickState, rng: &mut R) -> Result<()> {
    let rows = stick.eta.len();
    for i in 0..stick.n() {
        let d = stick.delta[i];
        let top = d.min(rows.saturating_sub(1));
        let mut z = Vec::with_capacity(top + 1);
        if rows > 0 {
            for l in 0..=top {
                let (lo, hi) = if l < d { (f64::NEG_INFINITY, 0.0) } else { (0.0, f64::INFINITY) };
                z.push(sample_trunc_normal_1d(stick.eta[l][i], 1.0, lo, hi, rng)?);
            }
        }
        stick.z[i] = z;
    }
    Ok(())
}

/// Draw active scores at each level from their Gaussian full conditional,
/// inactive scores integrated out.
pub fn update_eta_active<R: Rng + ?Sized>(stick: &mut StickState, ctx: &GmrfContext, rng: &mut R) -> Result<()> {
    let all = ctx.all_areas();
    for h in 0..stick.eta.len() {
        let mask = stick.active_mask(h);
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let extra: Vec<f64> = all.iter().map(|&i| if mask[i] { 1.0 } else { 0.0 }).collect();
        let f = ctx.blocks.factor(&all, stick.lambda, stick.phi2, Some(&extra))?;
        let b: Vec<f64> =
            all.iter().map(|&i| stick.phi2 * stick.alpha + if mask[i] { stick.z[i][h] } else { 0.0 }).collect();
        let draw = f.sample_canonical(&b, rng);
        for (k, &i) in all.iter().enumerate() {
            if mask[i] {
                stick.eta[h][i] = draw[k];
            }
        }
    }
    Ok(())
}

/// Sufficient statistics of one level's active scores under precision `S`
/// (up to `φ²`): `log|S|`, `1ᵀS1`, `1ᵀSη` and `ηᵀSη`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStats {
    pub m: usize,
    pub logdet: f64,
    pub one_s_one: f64,
    pub one_s_eta: f64,
    pub eta_s_eta: f64,
}

impl LevelStats {
    pub fn quad(&self, alpha: f64) -> f64 {
        self.eta_s_eta - 2.0 * alpha * self.one_s_eta + alpha * alpha * self.one_s_one
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Statistics of the scores on `mask` under the chosen active precision.
pub fn level_stats(ctx: &GmrfContext, mask: &[bool], eta: &[f64], lambda: f64, mode: ActivePrecision) -> Result<LevelStats> {
    let act = ctx.blocks.subset(mask);
    let x: Vec<f64> = act.iter().map(|&i| eta[i]).collect();
    let ones = vec![1.0; act.len()];
    let inactive: Vec<usize> = ctx.blocks.subset(&mask.iter().map(|m| !m).collect::<Vec<_>>());
    let (logdet, s1, sx) = match mode {
        ActivePrecision::Subgraph => {
            let f = ctx.blocks.factor(&act, lambda, 1.0, None)?;
            (f.logdet(), ctx.blocks.cross_mul(&act, &act, &ones, lambda), ctx.blocks.cross_mul(&act, &act, &x, lambda))
        }
        ActivePrecision::Marginal if inactive.is_empty() => (
            ctx.full_logdet(lambda),
            ctx.blocks.cross_mul(&act, &act, &ones, lambda),
            ctx.blocks.cross_mul(&act, &act, &x, lambda),
        ),
        ActivePrecision::Marginal => {
            let f = ctx.blocks.factor(&inactive, lambda, 1.0, None)?;
            let schur = |v: &[f64]| {
                let mut t = ctx.blocks.cross_mul(&inactive, &act, v, lambda);
                f.solve(&mut t);
                let back = ctx.blocks.cross_mul(&act, &inactive, &t, lambda);
                let direct = ctx.blocks.cross_mul(&act, &act, v, lambda);
                direct.iter().zip(&back).map(|(a, b)| a - b).collect::<Vec<f64>>()
            };
            (ctx.full_logdet(lambda) - f.logdet(), schur(&ones), schur(&x))
        }
    };
    Ok(LevelStats { m: act.len(), logdet, one_s_one: s1.iter().sum(), one_s_eta: sx.iter().sum(), eta_s_eta: dot(&x, &sx) })
}

/// Per-level statistics for every level with at least one active area.
pub fn all_level_stats(stick: &StickState, ctx: &GmrfContext, lambda: f64, mode: ActivePrecision) -> Result<Vec<LevelStats>> {
    let mut out = Vec::new();
    for h in 0..stick.eta.len() {
        let mask = stick.active_mask(h);
        if mask.iter().any(|&m| m) {
            out.push(level_stats(ctx, &mask, &stick.eta[h], lambda, mode)?);
        }
    }
    Ok(out)
}

/// `λ`-dependent part of the log target of the active scores.
pub fn lambda_log_target(stats: &[LevelStats], alpha: f64, phi2: f64) -> f64 {
    stats.iter().map(|s| 0.5 * s.logdet - 0.5 * phi2 * s.quad(alpha)).sum()
}

/// Quadratic form `(η − α1)ᵀ(λA_S + I)(η − α1)` on the areas in `mask`,
/// written as within-subset neighbour differences plus a diagonal remainder
/// for neighbours outside the subset.
pub fn subgraph_quad_expansion(graph: &SpatialGraph, mask: &[bool], eta: &[f64], alpha: f64, lambda: f64) -> f64 {
    let mut pairs = 0.0;
    let mut level = 0.0;
    let mut remainder = 0.0;
    for i in 0..graph.n() {
        if !mask[i] {
            continue;
        }
        let c = eta[i] - alpha;
        level += c * c;
        let mut outside = 0usize;
        for &j in graph.neighbors(i) {
            if mask[j] {
                if j > i {
                    pairs += (eta[i] - eta[j]).powi(2);
                }
            } else {
                outside += 1;
            }
        }
        remainder += outside as f64 * c * c;
    }
    lambda * pairs + level + lambda * remainder
}

/// Log acceptance ratio of a `λ` move under the subgraph precision, from the
/// eigenvalues of each level's adjacency submatrix and the quadratic-form
/// expansion. `levels` pairs each active mask with that level's scores.
pub fn subgraph_lambda_log_ratio(
    adj: &AdjacencyMatrix,
    levels: &[(Vec<bool>, Vec<f64>)],
    alpha: f64,
    phi2: f64,
    lambda_cur: f64,
    lambda_prop: f64,
    lambda_max: f64,
) -> Result<f64> {
    if !(lambda_prop > 0.0 && lambda_prop < lambda_max) {
        return Ok(f64::NEG_INFINITY);
    }
    let g = adj.graph();
    let mut r = 0.0;
    for (mask, eta) in levels {
        let idx: Vec<usize> = (0..g.n()).filter(|&i| mask[i]).collect();
        if idx.is_empty() {
            continue;
        }
        let sub = adj.matrix().select_rows(&idx).select_columns(&idx);
        for e in symmetric_eigenvalues(&sub)? {
            r += 0.5 * ((lambda_prop * e + 1.0).ln() - (lambda_cur * e + 1.0).ln());
        }
        let q1 = subgraph_quad_expansion(g, mask, eta, alpha, 1.0) - subgraph_quad_expansion(g, mask, eta, alpha, 0.0);
        r -= 0.5 * phi2 * (lambda_prop - lambda_cur) * q1;
    }
    Ok(r)
}

/// Gibbs draws of `α` and `φ²`, then a reflecting random-walk MH step for
/// `λ` (skipped when `spatial` is false). Returns whether `λ` moved.
pub fn update_alpha_phi_lambda<R: Rng + ?Sized>(
    stick: &mut StickState,
    ctx: &GmrfContext,
    priors: &StickPriors,
    mode: ActivePrecision,
    spatial: bool,
    tuning: &mut Tuning,
    rng: &mut R,
) -> Result<Option<bool>> {
    let stats = all_level_stats(stick, ctx, stick.lambda, mode)?;
    let prec = stick.phi2 * stats.iter().map(|s| s.one_s_one).sum::<f64>() + 1.0 / priors.sigma2_alpha;
    let lin = stick.phi2 * stats.iter().map(|s| s.one_s_eta).sum::<f64>() + priors.mu_alpha / priors.sigma2_alpha;
    stick.alpha = lin / prec + normal(rng) / prec.sqrt();
    let m: usize = stats.iter().map(|s| s.m).sum();
    let q: f64 = stats.iter().map(|s| s.quad(stick.alpha)).sum();
    stick.phi2 = sample_gamma(priors.a_phi + 0.5 * m as f64, priors.b_phi + 0.5 * q, rng);
    if !spatial {
        stick.lambda = 0.0;
        return Ok(None);
    }
    if stats.is_empty() {
        stick.lambda = rng.random::<f64>() * priors.lambda_max;
        return Ok(None);
    }
    let step = tuning.lambda.step();
    let mut prop = stick.lambda + step * (2.0 * rng.random::<f64>() - 1.0);
    if prop < 0.0 {
        prop = -prop;
    }
    let accept = if prop >= priors.lambda_max {
        false
    } else {
        let cur = lambda_log_target(&stats, stick.alpha, stick.phi2);
        let new = lambda_log_target(&all_level_stats(stick, ctx, prop, mode)?, stick.alpha, stick.phi2);
        mh_accept(new - cur, rng)
    };
    tuning.lambda.record(accept);
    if accept {
        stick.lambda = prop;
    }
    Ok(Some(accept))
}

/// Draw inactive scores given active ones from the GMRF conditional.
pub fn impute_eta_inactive<R: Rng + ?Sized>(stick: &mut StickState, ctx: &GmrfContext, rng: &mut R) -> Result<()> {
    for h in 0..stick.eta.len() {
        let mask = stick.active_mask(h);
        let inactive = ctx.blocks.subset(&mask.iter().map(|m| !m).collect::<Vec<_>>());
        if inactive.is_empty() {
            continue;
        }
        let act = ctx.blocks.subset(&mask);
        let centred: Vec<f64> = act.iter().map(|&i| stick.eta[h][i] - stick.alpha).collect();
        let cross = ctx.blocks.cross_mul(&inactive, &act, &centred, stick.lambda);
        let ones = vec![stick.alpha; inactive.len()];
        let base = ctx.blocks.cross_mul(&inactive, &inactive, &ones, stick.lambda);
        let b: Vec<f64> = base.iter().zip(&cross).map(|(q, c)| stick.phi2 * (q - c)).collect();
        let f = ctx.blocks.factor(&inactive, stick.lambda, stick.phi2, None)?;
        let draw = f.sample_canonical(&b, rng);
        for (k, &i) in inactive.iter().enumerate() {
            stick.eta[h][i] = draw[k];
        }
    }
    Ok(())
}

/// Full mutable state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState<P> {
    pub stick: StickState,
    pub components: Vec<P>,
    pub latents: Vec<Vec<f64>>,
    pub tuning: Tuning,
    pub counters: BTreeMap<String, u64>,
    /// Log-likelihood of the data given the allocations after the last sweep.
    pub loglik: f64,
}

impl<P> ChainState<P> {
    fn bump(&mut self, key: &str, by: u64) {
        *self.counters.entry(key.to_string()).or_insert(0) += by;
    }

    pub fn counter(&self, key: &str) -> u64 {
        self.counters.get(key).copied().unwrap_or(0)
    }

    fn summary(&self) -> String {
        format!(
            "alpha={} phi2={} lambda={} occupancy={:?} counters={:?}",
            self.stick.alpha,
            self.stick.phi2,
            self.stick.lambda,
            self.stick.occupancy(),
            self.counters
        )
    }
}

const MAX_KERNEL_FAILURES: u64 = 100;

pub struct Sampler {
    pub ctx: GmrfContext,
    pub cfg: SamplerConfig,
}

impl Sampler {
    pub fn new(graph: &SpatialGraph, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Sampler { ctx: GmrfContext::new(graph)?, cfg })
    }

    /// Draw the score field and component parameters from their priors and
    /// allocate areas given the data.
    pub fn init<K: MixtureKernel, R: Rng + ?Sized>(&self, kernel: &K, rng: &mut R) -> Result<ChainState<K::Params>> {
        let n = self.ctx.n();
        if kernel.n_areas() != n {
            return Err(Error::DimensionMismatch { expected: n, got: kernel.n_areas() });
        }
        let t = self.cfg.truncation;
        let p = &self.cfg.priors;
        let alpha = p.mu_alpha;
        let phi2 = p.a_phi / p.b_phi;
        let lambda = if self.cfg.spatial { (0.5 * p.lambda_max).min(1.0) } else { 0.0 };
        let mut eta = Vec::with_capacity(t - 1);
        for _ in 0..t - 1 {
            let u = self.ctx.adj.sample(lambda, rng)?;
            eta.push(u.iter().map(|v| alpha + v / phi2.sqrt()).collect());
        }
        let stick = StickState { eta, z: vec![Vec::new(); n], delta: vec![0; n], alpha, phi2, lambda };
        let components = (0..t).map(|_| kernel.draw_prior(rng)).collect::<Result<Vec<_>>>()?;
        let mut st = ChainState {
            stick,
            components,
            latents: vec![vec![0.0; kernel.latent_dim()]; n],
            tuning: Tuning::new(self.cfg.sigma_step, self.cfg.beta_step, self.cfg.lambda_step),
            counters: BTreeMap::new(),
            loglik: 0.0,
        };
        self.allocate_and_impute(kernel, &mut st, rng)?;
        update_z(&mut st.stick, rng)?;
        Ok(st)
    }

    fn allocate_and_impute<K: MixtureKernel, R: Rng + ?Sized>(
        &self,
        kernel: &K,
        st: &mut ChainState<K::Params>,
        rng: &mut R,
    ) -> Result<()> {
        let n = self.ctx.n();
        let t = self.cfg.truncation;
        if self.cfg.prior_only {
            let zero = vec![vec![0.0; n]; t];
            update_allocations(&mut st.stick, &zero, rng);
            st.loglik = 0.0;
            return Ok(());
        }
        let preps = st.components.iter().map(|c| kernel.prepare(c)).collect::<Result<Vec<_>>>()?;
        let ll: Vec<Vec<f64>> =
            (0..t).map(|h| (0..n).map(|i| kernel.loglik(i, &st.components[h], &preps[h])).collect()).collect();
        let fb = update_allocations(&mut st.stick, &ll, rng);
        if fb > 0 {
            st.bump("fallback_allocations", fb as u64);
        }
        st.loglik = (0..n).map(|i| ll[st.stick.delta[i]][i]).sum();
        for i in 0..n {
            let h = st.stick.delta[i];
            kernel.impute(i, &st.components[h], &preps[h], &mut st.latents[i], rng)?;
        }
        Ok(())
    }

    /// One full sweep of the kernel.
    pub fn sweep<K: MixtureKernel, R: Rng + ?Sized>(
        &self,
        kernel: &K,
        st: &mut ChainState<K::Params>,
        rng: &mut R,
    ) -> Result<()> {
        let t = self.cfg.truncation;
        let mut members = vec![Vec::new(); t];
        for (i, &d) in st.stick.delta.iter().enumerate() {
            members[d].push(i);
        }
        for h in 0..t {
            if members[h].is_empty() || self.cfg.prior_only {
                st.components[h] = kernel.draw_prior(rng)?;
            } else if let Err(e) = kernel.update(&mut st.components[h], &members[h], &st.latents, &mut st.tuning, rng) {
                st.bump("kernel_failures", 1);
                if st.counter("kernel_failures") > MAX_KERNEL_FAILURES {
                    return Err(Error::Numerical(format!("component update failed repeatedly ({e}); state: {}", st.summary())));
                }
            }
        }
        self.allocate_and_impute(kernel, st, rng)?;
        for (key, res) in [
            ("label_a", label_switch_a(&mut st.stick, &mut st.components, rng)),
            ("label_b", label_switch_b(&mut st.stick, &mut st.components, rng)),
        ] {
            if let Some(acc) = res {
                st.bump(&format!("{key}_proposed"), 1);
                st.bump(&format!("{key}_accepted"), acc as u64);
            }
        }
        update_z(&mut st.stick, rng)?;
        update_eta_active(&mut st.stick, &self.ctx, rng)?;
        update_alpha_phi_lambda(
            &mut st.stick,
            &self.ctx,
            &self.cfg.priors,
            self.cfg.active_precision,
            self.cfg.spatial,
            &mut st.tuning,
            rng,
        )?;
        impute_eta_inactive(&mut st.stick, &self.ctx, rng)?;
        Ok(())
    }

    pub fn global_names() -> Vec<String> {
        ["alpha", "phi2", "lambda", "occupied", "loglik"].iter().map(|s| s.to_string()).collect()
    }

    /// Run a chain from a fresh initial state and collect the kept draws.
    pub fn run<K: MixtureKernel, R: Rng + ?Sized>(&self, kernel: &K, model: &str, rng: &mut R) -> Result<ChainTrace> {
        let n = self.ctx.n();
        let mut trace = ChainTrace::new(model, n, kernel.coef_names(), Self::global_names());
        let mut st = self.init(kernel, rng)?;
        if self.cfg.adapt && self.cfg.burn_in > 0 {
            st.tuning.set_adapting(true);
        }
        for it in 1..=self.cfg.iterations {
            self.sweep(kernel, &mut st, rng).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("iteration {it}: {m}")),
                other => Error::Numerical(format!("iteration {it}: {other}; state: {}", st.summary())),
            })?;
            if it == self.cfg.burn_in {
                st.tuning.set_adapting(false);
                st.counters.retain(|k, _| !k.starts_with("label_"));
            }
            if it > self.cfg.burn_in && (it - self.cfg.burn_in) % self.cfg.thin == 0 {
                let occupied = st.stick.occupancy().iter().filter(|&&c| c > 0).count();
                let mut coefs = Vec::with_capacity(n * trace.n_coef());
                for i in 0..n {
                    coefs.extend(kernel.area_coefs(i, &st.components[st.stick.delta[i]]));
                }
                let s = &st.stick;
                trace.push(it, vec![s.alpha, s.phi2, s.lambda, occupied as f64, st.loglik], coefs);
            }
        }
        for (name, rate, proposed) in st.tuning.rates() {
            if let Some(r) = rate {
                trace.acceptance.insert(name.to_string(), (r, proposed));
            }
        }
        for key in ["label_a", "label_b"] {
            let p = st.counter(&format!("{key}_proposed"));
            if p > 0 {
                trace.acceptance.insert(key.to_string(), (st.counter(&format!("{key}_accepted")) as f64 / p as f64, p));
            }
        }
        for (k, v) in &st.counters {
            if !k.starts_with("label_") {
                trace.flags.insert(k.clone(), *v);
            }
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::mvn_logpdf;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(t: usize, n: usize, rng: &mut ChaCha8Rng) -> StickState {
        let eta: Vec<Vec<f64>> = (0..t - 1).map(|_| (0..n).map(|_| normal(rng)).collect()).collect();
        let delta: Vec<usize> = (0..n).map(|_| rng.random_range(0..t)).collect();
        StickState { eta, z: vec![Vec::new(); n], delta, alpha: 0.3, phi2: 2.0, lambda: 1.5 }
    }

    #[test]
    fn weights_of_zero_scores() {
        let w = weights_from_eta(&[0.0, 0.0]);
        for (a, b) in w.iter().zip([0.5, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = weights_from_eta(&[40.0, -1.0]);
        assert!((w[0] - 1.0).abs() < 1e-15);
        assert_eq!(weights_from_eta(&[]), vec![1.0]);
    }

    #[test]
    fn weights_match_direct_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let eta: Vec<f64> = (0..6).map(|_| 2.0 * normal(&mut rng)).collect();
            let w = weights_from_eta(&eta);
            let phi = |x: f64| crate::dist::norm_cdf(x);
            let mut rest = 1.0;
            for (h, &e) in eta.iter().enumerate() {
                assert!((w[h] - phi(e) * rest).abs() < 1e-14);
                rest *= 1.0 - phi(e);
            }
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn allocation_with_identical_components_follows_weights() {
        let p = allocation_probabilities(&[0.9f64.ln(), 0.1f64.ln()], &[-3.2, -3.2]);
        assert!((p[0] - 0.9).abs() < 1e-14 && (p[1] - 0.1).abs() < 1e-14);
    }

    #[test]
    fn zero_likelihood_falls_back_to_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = state(3, 4, &mut rng);
        let ll = vec![vec![f64::NEG_INFINITY; 4]; 3];
        assert_eq!(update_allocations(&mut s, &ll, &mut rng), 4);
    }

    fn full_log_weight_sum(s: &StickState) -> f64 {
        (0..s.n()).map(|i| s.log_weight(i, s.delta[i])).sum()
    }

    #[test]
    fn label_move_ratios_match_recomputed_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let s = state(5, 8, &mut rng);
            let before = full_log_weight_sum(&s);
            let (a, b) = (1, 3);
            let mut moved = s.clone();
            relabel(&mut moved.delta, a, b);
            assert!((label_switch_a_log_ratio(&s, a, b) - (full_log_weight_sum(&moved) - before)).abs() < 1e-12);
            for a in 0..4 {
                let mut moved = s.clone();
                relabel(&mut moved.delta, a, a + 1);
                if a + 1 < moved.eta.len() {
                    moved.eta.swap(a, a + 1);
                }
                let r = label_switch_b_log_ratio(&s, a);
                assert!((r - (full_log_weight_sum(&moved) - before)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn move_b_ratio_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = state(4, 6, &mut rng);
        let phi = crate::dist::norm_cdf;
        let mut want = 0.0;
        for i in 0..6 {
            if s.delta[i] == 0 {
                want += (1.0 - phi(s.eta[1][i])).ln();
            } else if s.delta[i] == 1 {
                want -= (1.0 - phi(s.eta[0][i])).ln();
            }
        }
        assert!((label_switch_b_log_ratio(&s, 0) - want).abs() < 1e-12);
        let mut flat = s.clone();
        flat.eta[0] = vec![0.4; 6];
        flat.eta[1] = vec![0.4; 6];
        flat.delta = vec![0, 1, 0, 1, 2, 3];
        assert!(label_switch_b_log_ratio(&flat, 0).abs() < 1e-14);
    }

    #[test]
    fn z_signs_follow_allocations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = state(4, 20, &mut rng);
        update_z(&mut s, &mut rng).unwrap();
        for i in 0..20 {
            let d = s.delta[i];
            assert_eq!(s.z[i].len(), d.min(2) + 1);
            for (l, &z) in s.z[i].iter().enumerate() {
                if l < d {
                    assert!(z < 0.0);
                } else {
                    assert!(z > 0.0);
                }
            }
        }
    }

    #[test]
    fn quad_expansion_matches_matrix_form() {
        let g = SpatialGraph::grid(4, 5).unwrap();
        let adj = AdjacencyMatrix::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..25 {
            let mask: Vec<bool> = (0..20).map(|_| rng.random::<f64>() < 0.6).collect();
            let idx: Vec<usize> = (0..20).filter(|&i| mask[i]).collect();
            if idx.is_empty() {
                continue;
            }
            let eta: Vec<f64> = (0..20).map(|_| normal(&mut rng)).collect();
            let (alpha, lambda) = (0.4, 2.7);
            let q = adj.precision(lambda).unwrap().select_rows(&idx).select_columns(&idx);
            let c = DVector::from_iterator(idx.len(), idx.iter().map(|&i| eta[i] - alpha));
            let matrix = (c.transpose() * &q * &c)[0];
            let exp = subgraph_quad_expansion(&g, &mask, &eta, alpha, lambda);
            assert!((matrix - exp).abs() < 1e-10 * matrix.abs().max(1.0));
        }
    }

    fn dense_level_logdensity(adj: &AdjacencyMatrix, mask: &[bool], eta: &[f64], alpha: f64, phi2: f64, lambda: f64, marginal: bool) -> f64 {
        let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let x = DVector::from_iterator(idx.len(), idx.iter().map(|&i| eta[i]));
        let mean = DVector::from_element(idx.len(), alpha);
        let q = adj.precision(lambda).unwrap();
        let cov = if marginal {
            let full = q.try_inverse().unwrap() / phi2;
            full.select_rows(&idx).select_columns(&idx)
        } else {
            (q.select_rows(&idx).select_columns(&idx) * phi2).try_inverse().unwrap()
        };
        mvn_logpdf(&x, &mean, &cov).unwrap()
    }

    #[test]
    fn level_stats_reproduce_dense_densities() {
        let g = SpatialGraph::grid(3, 4).unwrap();
        let ctx = GmrfContext::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (alpha, phi2) = (-0.2, 3.0);
        for mode in [ActivePrecision::Marginal, ActivePrecision::Subgraph] {
            for _ in 0..10 {
                let mask: Vec<bool> = (0..12).map(|_| rng.random::<f64>() < 0.5).collect();
                if !mask.iter().any(|&m| m) {
                    continue;
                }
                let eta: Vec<f64> = (0..12).map(|_| normal(&mut rng)).collect();
                let (l1, l2) = (0.7, 4.1);
                let s1 = level_stats(&ctx, &mask, &eta, l1, mode).unwrap();
                let s2 = level_stats(&ctx, &mask, &eta, l2, mode).unwrap();
                let marginal = mode == ActivePrecision::Marginal;
                let d1 = dense_level_logdensity(&ctx.adj, &mask, &eta, alpha, phi2, l1, marginal);
                let d2 = dense_level_logdensity(&ctx.adj, &mask, &eta, alpha, phi2, l2, marginal);
                let r = lambda_log_target(&[s2], alpha, phi2) - lambda_log_target(&[s1], alpha, phi2);
                assert!((r - (d2 - d1)).abs() < 1e-9, "{mode:?}: {r} vs {}", d2 - d1);
            }
        }
    }

    #[test]
    fn subgraph_ratio_matches_level_stats() {
        let g = SpatialGraph::grid(3, 3).unwrap();
        let ctx = GmrfContext::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let levels: Vec<(Vec<bool>, Vec<f64>)> = (0..3)
            .map(|_| ((0..9).map(|_| rng.random::<f64>() < 0.7).collect(), (0..9).map(|_| normal(&mut rng)).collect()))
            .collect();
        let (alpha, phi2, lc, lp) = (0.1, 1.7, 2.0, 3.5);
        let stats = |l: f64| -> Vec<LevelStats> {
            levels
                .iter()
                .filter(|(m, _)| m.iter().any(|&b| b))
                .map(|(m, e)| level_stats(&ctx, m, e, l, ActivePrecision::Subgraph).unwrap())
                .collect()
        };
        let direct = lambda_log_target(&stats(lp), alpha, phi2) - lambda_log_target(&stats(lc), alpha, phi2);
        let r = subgraph_lambda_log_ratio(&ctx.adj, &levels, alpha, phi2, lc, lp, 50.0).unwrap();
        assert!((r - direct).abs() < 1e-10);
        assert_eq!(subgraph_lambda_log_ratio(&ctx.adj, &levels, alpha, phi2, lc, 60.0, 50.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn active_update_with_all_active_is_conjugate() {
        let g = SpatialGraph::grid(2, 3).unwrap();
        let ctx = GmrfContext::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = state(2, 6, &mut rng);
        s.delta = vec![1; 6];
        update_z(&mut s, &mut rng).unwrap();
        let q = ctx.adj.precision(s.lambda).unwrap() * s.phi2;
        let prec = &q + DMatrix::identity(6, 6);
        let b = &q * DVector::from_element(6, s.alpha) + DVector::from_iterator(6, (0..6).map(|i| s.z[i][0]));
        let cov = prec.clone().try_inverse().unwrap();
        let mean = &cov * &b;
        let reps = 4000;
        let mut acc = DVector::zeros(6);
        for _ in 0..reps {
            let mut c = s.clone();
            update_eta_active(&mut c, &ctx, &mut rng).unwrap();
            acc += DVector::from_iterator(6, c.eta[0].iter().copied());
        }
        acc /= reps as f64;
        for i in 0..6 {
            let se = (cov[(i, i)] / reps as f64).sqrt();
            assert!((acc[i] - mean[i]).abs() < 4.0 * se, "area {i}");
        }
    }

    #[test]
    fn inactive_with_no_active_areas_is_prior_draw() {
        let g = SpatialGraph::grid(2, 2).unwrap();
        let ctx = GmrfContext::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut s = state(3, 4, &mut rng);
        s.delta = vec![0; 4];
        s.lambda = 0.0;
        s.phi2 = 4.0;
        let reps = 20000;
        let (mut m, mut v) = (0.0, 0.0);
        for _ in 0..reps {
            impute_eta_inactive(&mut s, &ctx, &mut rng).unwrap();
            let x = s.eta[1][2];
            m += x;
            v += (x - s.alpha).powi(2);
        }
        m /= reps as f64;
        v /= reps as f64;
        assert!((m - s.alpha).abs() < 4.0 * (0.25f64 / reps as f64).sqrt());
        assert!((v - 0.25).abs() < 0.02);
    }

    #[test]
    fn no_levels_gives_prior_conditionals() {
        let g = SpatialGraph::grid(2, 2).unwrap();
        let ctx = GmrfContext::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = StickState { eta: vec![], z: vec![vec![]; 4], delta: vec![0; 4], alpha: 0.0, phi2: 1.0, lambda: 1.0 };
        let mut tun = Tuning::new(0.3, 0.1, 1.0);
        let pr = StickPriors::default();
        let reps = 20000;
        let (mut a, mut p) = (0.0, 0.0);
        for _ in 0..reps {
            update_alpha_phi_lambda(&mut s, &ctx, &pr, ActivePrecision::Marginal, true, &mut tun, &mut rng).unwrap();
            a += s.alpha;
            p += s.phi2;
        }
        assert!((a / reps as f64).abs() < 4.0 / (reps as f64).sqrt());
        assert!((p / reps as f64 - 10.0).abs() < 4.0 * 10.0 / (reps as f64).sqrt());
    }

    #[test]
    fn zero_iterations_give_empty_trace() {
        use crate::data::Dataset;
        use crate::regression::RegressionModel;
        let g = SpatialGraph::grid(2, 2).unwrap();
        let data = Dataset::from_columns(
            Some((vec![1, 2, 3, 4], vec![1.0; 4])),
            None,
            None,
            vec![("w".into(), vec![0.0, 1.0, 2.0, 3.0])],
            vec![],
            vec![],
            vec![],
        )
        .unwrap();
        let k = RegressionModel::new(data, crate::model::ModelVariant::M5, 25.0).unwrap();
        let cfg = SamplerConfig { iterations: 0, burn_in: 0, truncation: 3, ..Default::default() };
        let s = Sampler::new(&g, cfg).unwrap();
        let tr = s.run(&k, "M5", &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(tr.is_empty());
        assert_eq!(tr.columns().len(), 1 + 5 + 4 * 2);
    }
}
