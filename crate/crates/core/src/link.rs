//! Latent-Gaussian links for discrete observables.
//!
//! A count (or binomial count) `y` is the interval of the standard normal
//! latent `y*` between cut points `c_{y-1} < y* < c_y`, where
//! `c_l = Φ⁻¹{F(l)}` for the target cdf `F`. This module holds the cut-point
//! maps, bivariate-normal rectangle probabilities, and the truncated-normal
//! samplers used for latent imputation.

use rand::Rng;
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::dist::{self, interval_prob, log_interval_prob, norm_cdf, norm_isf, norm_ppf};
use crate::error::{Error, Result};

/// Convert a cdf value and its complement into a cut point, using whichever
/// is smaller so neither tail loses precision. Underflow of the upper tail
/// maps to `+∞`.
fn cut_from_cdf(cdf: f64, sf: f64) -> f64 {
    if cdf <= 0.5 {
        norm_ppf(cdf)
    } else if sf <= 0.0 {
        f64::INFINITY
    } else {
        norm_isf(sf)
    }
}

pub fn poisson_cutpoint(l: i64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::invalid(format!("poisson rate must be positive, got {rate}")));
    }
    if l < 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let a = l as f64 + 1.0;
    Ok(cut_from_cdf(gamma_ur(a, rate), gamma_lr(a, rate)))
}

pub fn binomial_cutpoint(l: i64, trials: u64, prob: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::invalid(format!("binomial probability must lie in (0,1), got {prob}")));
    }
    if l < 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let l = l as u64;
    if l >= trials {
        return Ok(f64::INFINITY);
    }
    let (lf, nf) = (l as f64, trials as f64);
    let cdf = beta_reg(nf - lf, lf + 1.0, 1.0 - prob);
    let sf = beta_reg(lf + 1.0, nf - lf, prob);
    Ok(cut_from_cdf(cdf, sf))
}

/// Cut-point rule for one discrete observable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutPointRule {
    Poisson { rate: f64 },
    Binomial { trials: u64, prob: f64 },
}

impl CutPointRule {
    pub fn poisson(rate: f64) -> Result<Self> {
        poisson_cutpoint(0, rate)?;
        Ok(CutPointRule::Poisson { rate })
    }

    pub fn binomial(trials: u64, prob: f64) -> Result<Self> {
        binomial_cutpoint(0, trials.max(1), prob)?;
        Ok(CutPointRule::Binomial { trials, prob })
    }

    pub fn cutpoint(&self, l: i64) -> f64 {
        match *self {
            CutPointRule::Poisson { rate } => poisson_cutpoint(l, rate).expect("validated rate"),
            CutPointRule::Binomial { trials, prob } => {
                binomial_cutpoint(l, trials, prob).expect("validated probability")
            }
        }
    }

    /// Latent interval `(c_{y-1}, c_y)` that produces observation `y`.
    pub fn interval(&self, y: u64) -> (f64, f64) {
        (self.cutpoint(y as i64 - 1), self.cutpoint(y as i64))
    }

    /// Finite cut points `c_0, c_1, ...` up to the first infinite one
    /// (excluded). Observation `q` lies between entries `q-1` and `q`.
    pub fn table(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut l = 0i64;
        loop {
            let c = self.cutpoint(l);
            if !c.is_finite() {
                return out;
            }
            out.push(c);
            l += 1;
            if let CutPointRule::Poisson { rate } = *self {
                // beyond this the upper tail is far below 1e-300
                if l as f64 > rate + 40.0 * rate.sqrt() + 800.0 {
                    return out;
                }
            }
        }
    }

    /// The unique `q` with `c_{q-1} < y* < c_q`.
    pub fn latent_to_count(&self, y_star: f64) -> Result<u64> {
        let table = self.table();
        latent_to_count_in(&table, y_star)
    }
}

/// Lookup against a precomputed [`CutPointRule::table`].
pub fn latent_to_count_in(table: &[f64], y_star: f64) -> Result<u64> {
    if !y_star.is_finite() {
        return Err(Error::invalid(format!("latent value must be finite, got {y_star}")));
    }
    let q = table.partition_point(|&c| c < y_star);
    if q < table.len() && table[q] == y_star {
        return Err(Error::TieAtCutPoint(y_star));
    }
    Ok(q as u64)
}

/// Axis-aligned rectangle, bounds possibly infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle2D {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Rectangle2D {
    pub fn new(lower: [f64; 2], upper: [f64; 2]) -> Result<Self> {
        for k in 0..2 {
            if !(lower[k] < upper[k]) {
                return Err(Error::invalid(format!(
                    "rectangle bound {k}: lower {} must be below upper {}",
                    lower[k], upper[k]
                )));
            }
        }
        Ok(Rectangle2D { lower, upper })
    }

    pub fn whole_plane() -> Self {
        Rectangle2D { lower: [f64::NEG_INFINITY; 2], upper: [f64::INFINITY; 2] }
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        (0..2).all(|k| x[k] > self.lower[k] && x[k] < self.upper[k])
    }
}

fn check_cov2(cov: [[f64; 2]; 2]) -> Result<()> {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    if !(cov[0][0] > 0.0 && cov[1][1] > 0.0 && det > 0.0) || (cov[0][1] - cov[1][0]).abs() > 1e-12 {
        return Err(Error::NotPositiveDefinite("bivariate covariance"));
    }
    Ok(())
}

/// `P{(V₁, V₂) ∈ rect}` for `V ~ N₂(mean, cov)`.
pub fn rect_prob_bvn(mean: [f64; 2], cov: [[f64; 2]; 2], rect: &Rectangle2D) -> Result<f64> {
    Ok(log_rect_prob_bvn(mean, cov, rect)?.exp())
}

/// Natural log of [`rect_prob_bvn`], keeping precision for tail rectangles.
///
/// Reduces to a one-dimensional integral over the first coordinate of the
/// conditional interval probability of the second, integrated in the
/// probability scale `u = Φ(t)` by adaptive Gauss-Kronrod.
pub fn log_rect_prob_bvn(mean: [f64; 2], cov: [[f64; 2]; 2], rect: &Rectangle2D) -> Result<f64> {
    check_cov2(cov)?;
    let s1 = cov[0][0].sqrt();
    let s2 = cov[1][1].sqrt();
    let mut rho = cov[0][1] / (s1 * s2);
    let mut a1 = (rect.lower[0] - mean[0]) / s1;
    let mut b1 = (rect.upper[0] - mean[0]) / s1;
    let a2 = (rect.lower[1] - mean[1]) / s2;
    let b2 = (rect.upper[1] - mean[1]) / s2;
    if rho.abs() < 1e-15 {
        return Ok(log_interval_prob(a1, b1) + log_interval_prob(a2, b2));
    }
    if a1 > 0.0 {
        // mirror the first coordinate so its interval sits in the lower half,
        // where Φ keeps relative precision
        let (na, nb) = (-b1, -a1);
        a1 = na;
        b1 = nb;
        rho = -rho;
    }
    let sd = (1.0 - rho * rho).sqrt();
    let u_lo = norm_cdf(a1);
    let u_hi = norm_cdf(b1);
    if !(u_hi > u_lo) {
        // interval mass below double precision in u; fall back to t-scale
        return Ok(log_rect_t_scale(a1, b1, a2, b2, rho, sd));
    }
    let g = |u: f64| {
        let t = norm_ppf(u);
        if !t.is_finite() {
            return limit_integrand(t, a2, b2, rho);
        }
        interval_prob((a2 - rho * t) / sd, (b2 - rho * t) / sd)
    };
    let width = u_hi - u_lo;
    let est = adaptive_gk15(&g, u_lo, u_hi, 1e-10 * width.min(1.0), 40);
    if est > 0.0 {
        Ok(est.ln())
    } else {
        Ok(log_rect_t_scale(a1, b1, a2, b2, rho, sd))
    }
}

fn limit_integrand(t: f64, a2: f64, b2: f64, rho: f64) -> f64 {
    // as t -> ±inf the conditional mean rho*t runs off to ±inf (or stays at 0)
    if rho == 0.0 {
        return interval_prob(a2, b2);
    }
    let m = rho * t;
    if m > b2 || m < a2 { 0.0 } else { 1.0 }
}

/// Log-space quadrature in `t` for rectangles too deep in the tail for the
/// probability-scale substitution.
fn log_rect_t_scale(a1: f64, b1: f64, a2: f64, b2: f64, rho: f64, sd: f64) -> f64 {
    let lo = a1.max(-60.0);
    let hi = b1.min(60.0);
    if !(hi > lo) {
        return f64::NEG_INFINITY;
    }
    let n = 400;
    let h = (hi - lo) / n as f64;
    let mut terms = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = lo + k as f64 * h;
        let w: f64 = if k == 0 || k == n { 0.5 } else { 1.0 };
        let lt = dist::norm_logpdf(t) + log_interval_prob((a2 - rho * t) / sd, (b2 - rho * t) / sd);
        terms.push(lt + w.ln());
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + h.ln()
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WK[7] * fc;
    let mut g = GK_WG[3] * fc;
    for j in 0..7 {
        let dx = h * GK_X[j];
        let s = f(c - dx) + f(c + dx);
        k += GK_WK[j] * s;
        if j % 2 == 1 {
            g += GK_WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive 15-point Gauss-Kronrod on a finite interval.
pub fn adaptive_gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (est, err) = gk15(f, a, b);
    if err <= tol.max(1e-15 * est.abs()) || depth == 0 {
        return est;
    }
    let m = 0.5 * (a + b);
    adaptive_gk15(f, a, m, 0.5 * tol, depth - 1) + adaptive_gk15(f, m, b, 0.5 * tol, depth - 1)
}

/// Draw from `N(mean, sd²)` truncated to `(lower, upper)`.
pub fn sample_trunc_normal_1d<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(sd > 0.0) {
        return Err(Error::invalid(format!("sd must be positive, got {sd}")));
    }
    if !(lower < upper) {
        return Err(Error::invalid(format!("degenerate interval ({lower}, {upper})")));
    }
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let x = mean + sd * dist::sample_truncated_std(a, b, rng);
    // guard the open interval against rounding at finite bounds
    Ok(x.clamp(lower, upper))
}

fn conditional_draw<R: Rng + ?Sized>(
    k: usize,
    other: f64,
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    rect: &Rectangle2D,
    rng: &mut R,
) -> Result<f64> {
    let j = 1 - k;
    let m = mean[k] + cov[k][j] / cov[j][j] * (other - mean[j]);
    let v = (cov[k][k] - cov[k][j] * cov[k][j] / cov[j][j]).max(dist::JITTER * cov[k][k]);
    sample_trunc_normal_1d(m, v.sqrt(), rect.lower[k], rect.upper[k], rng)
}

/// Gibbs sweeps over the two coordinates of a rectangle-truncated bivariate
/// normal, starting from `start` (which may lie outside the rectangle).
pub fn sample_trunc_bvn<R: Rng + ?Sized>(
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    rect: &Rectangle2D,
    start: [f64; 2],
    sweeps: usize,
    rng: &mut R,
) -> Result<[f64; 2]> {
    check_cov2(cov)?;
    let mut x = start;
    if !x[1].is_finite() || !(x[1] > rect.lower[1] && x[1] < rect.upper[1]) {
        x[1] = conditional_draw(1, mean[0], mean, cov, rect, rng)?;
    }
    for _ in 0..sweeps.max(1) {
        x[0] = conditional_draw(0, x[1], mean, cov, rect, rng)?;
        x[1] = conditional_draw(1, x[0], mean, cov, rect, rng)?;
    }
    Ok(x)
}

/// Independent (exact) draw from a rectangle-truncated bivariate normal.
///
/// Proposes the coordinate with the smaller marginal interval mass from its
/// truncated marginal, then accepts with the conditional interval probability
/// of the other coordinate; the accepted pair is completed by an exact
/// conditional draw. Falls back to inverse-cdf sampling of the first
/// coordinate's marginal if the acceptance rate is pathological.
pub fn sample_trunc_bvn_exact<R: Rng + ?Sized>(
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    rect: &Rectangle2D,
    rng: &mut R,
) -> Result<[f64; 2]> {
    check_cov2(cov)?;
    let sd = [cov[0][0].sqrt(), cov[1][1].sqrt()];
    let lp = |k: usize| log_interval_prob((rect.lower[k] - mean[k]) / sd[k], (rect.upper[k] - mean[k]) / sd[k]);
    // propose the tighter coordinate first
    let first = if lp(0) <= lp(1) { 0 } else { 1 };
    let second = 1 - first;
    let cond_sd = (cov[second][second] - cov[0][1] * cov[0][1] / cov[first][first])
        .max(dist::JITTER * cov[second][second])
        .sqrt();
    for _ in 0..2000 {
        let x_first = sample_trunc_normal_1d(mean[first], sd[first], rect.lower[first], rect.upper[first], rng)?;
        let m = mean[second] + cov[0][1] / cov[first][first] * (x_first - mean[first]);
        let acc = interval_prob((rect.lower[second] - m) / cond_sd, (rect.upper[second] - m) / cond_sd);
        let u: f64 = rng.random();
        if u < acc {
            let x_second = sample_trunc_normal_1d(m, cond_sd, rect.lower[second], rect.upper[second], rng)?;
            let mut out = [0.0; 2];
            out[first] = x_first;
            out[second] = x_second;
            return Ok(out);
        }
    }
    sample_trunc_bvn_inverse(mean, cov, rect, rng)
}

fn sample_trunc_bvn_inverse<R: Rng + ?Sized>(
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    rect: &Rectangle2D,
    rng: &mut R,
) -> Result<[f64; 2]> {
    let s1 = cov[0][0].sqrt();
    let s2 = cov[1][1].sqrt();
    let rho = cov[0][1] / (s1 * s2);
    let sd = (1.0 - rho * rho).max(1e-16).sqrt();
    let a1 = (rect.lower[0] - mean[0]) / s1;
    let b1 = (rect.upper[0] - mean[0]) / s1;
    let a2 = (rect.lower[1] - mean[1]) / s2;
    let b2 = (rect.upper[1] - mean[1]) / s2;
    let g = |u: f64| {
        let t = norm_ppf(u);
        if !t.is_finite() {
            return limit_integrand(t, a2, b2, rho);
        }
        interval_prob((a2 - rho * t) / sd, (b2 - rho * t) / sd)
    };
    let (u_lo, u_hi) = (norm_cdf(a1), norm_cdf(b1));
    let total = adaptive_gk15(&g, u_lo, u_hi, 1e-12, 40);
    if !(total > 0.0) {
        return Err(Error::Numerical("rectangle has no representable mass".into()));
    }
    let target = rng.random::<f64>() * total;
    let (mut lo, mut hi) = (u_lo, u_hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if adaptive_gk15(&g, u_lo, mid, 1e-13, 30) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = norm_ppf(0.5 * (lo + hi)).clamp(a1, b1);
    let x1 = (mean[0] + s1 * t).clamp(rect.lower[0], rect.upper[0]);
    let x2 = conditional_draw(1, x1, mean, cov, rect, rng)?;
    Ok([x1, x2])
}
