//! Numerical building blocks: normal tails, multivariate normal and Wishart
//! densities/samplers, and a tail-safe truncated standard normal sampler.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::{erf, erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Relative diagonal jitter used when a covariance is numerically singular.
pub const JITTER: f64 = 1e-8;

pub type Chol = Cholesky<f64, Dyn>;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * (LN_2PI + x * x)
}

/// `ln Φ(x)`, accurate deep into the lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > 0.0 {
        return (-norm_sf(x)).ln_1p();
    }
    if x > -37.0 {
        return norm_cdf(x).ln();
    }
    // asymptotic expansion of the Mills ratio
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    norm_logpdf(x) - (-x).ln() + series.ln()
}

pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -SQRT_2 * erfc_inv(2.0 * p)
    }
}

/// Upper quantile: the `x` with `1 - Φ(x) = q`.
pub fn norm_isf(q: f64) -> f64 {
    -norm_ppf(q)
}

/// `ln{Φ(b) - Φ(a)}` for a standard normal, stable in both tails.
pub fn log_interval_prob(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    let (a, b) = if a > 0.0 { (-b, -a) } else { (a, b) };
    if b <= 0.0 {
        let lb = log_norm_cdf(b);
        let la = log_norm_cdf(a);
        if la == f64::NEG_INFINITY {
            return lb;
        }
        lb + (-(la - lb).exp()).ln_1p()
    } else {
        let ea = if a == f64::NEG_INFINITY { -1.0 } else { erf(a / SQRT_2) };
        let eb = if b == f64::INFINITY { 1.0 } else { erf(b / SQRT_2) };
        (0.5 * (eb - ea)).ln()
    }
}

pub fn interval_prob(a: f64, b: f64) -> f64 {
    log_interval_prob(a, b).exp()
}

pub fn std_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Cholesky factorisation with escalating diagonal jitter for matrices that
/// are PD in exact arithmetic but fail numerically.
pub fn cholesky_jitter(m: &DMatrix<f64>) -> Result<Chol> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut eps = JITTER * scale;
    for _ in 0..8 {
        let mut j = m.clone();
        for i in 0..n {
            j[(i, i)] += eps;
        }
        if let Some(c) = j.cholesky() {
            return Ok(c);
        }
        eps *= 10.0;
    }
    Err(Error::NotPositiveDefinite("cholesky failed after jitter"))
}

pub fn chol_logdet(c: &Chol) -> f64 {
    let l = c.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Log-density of `N(mean, cov)` at `x`.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mean.len() || cov.nrows() != x.len() {
        return Err(Error::DimensionMismatch { expected: cov.nrows(), got: x.len() });
    }
    let c = cholesky_jitter(cov)?;
    Ok(mvn_logpdf_chol(x, mean, &c))
}

pub fn mvn_logpdf_chol(x: &DVector<f64>, mean: &DVector<f64>, c: &Chol) -> f64 {
    let d = x - mean;
    let z = c.l_dirty().solve_lower_triangular(&d).expect("triangular solve");
    -0.5 * (x.len() as f64 * LN_2PI + chol_logdet(c) + z.norm_squared())
}

pub fn sample_mvn_chol<R: Rng + ?Sized>(mean: &DVector<f64>, c: &Chol, rng: &mut R) -> DVector<f64> {
    let l = c.l();
    mean + l * std_normal_vec(mean.len(), rng)
}

pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let c = cholesky_jitter(cov)?;
    Ok(sample_mvn_chol(mean, &c, rng))
}

/// Draw from `N(P⁻¹b, P⁻¹)` given the precision `P` and linear term `b`.
pub fn sample_mvn_canonical<R: Rng + ?Sized>(
    b: &DVector<f64>,
    precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let c = cholesky_jitter(precision)?;
    Ok(sample_mvn_canonical_chol(b, &c, rng))
}

pub fn sample_mvn_canonical_chol<R: Rng + ?Sized>(
    b: &DVector<f64>,
    c: &Chol,
    rng: &mut R,
) -> DVector<f64> {
    let mean = c.solve(b);
    let z = std_normal_vec(b.len(), rng);
    // x = mean + L^{-T} z has covariance (L L^T)^{-1}
    let l = c.l_dirty();
    let dev = l.tr_solve_lower_triangular(&z).expect("triangular solve");
    mean + dev
}

/// `ln Γ_p(a)`, the multivariate gamma function.
pub fn ln_mv_gamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    let mut s = 0.25 * pf * (pf - 1.0) * std::f64::consts::PI.ln();
    for j in 0..p {
        s += ln_gamma(a - 0.5 * j as f64);
    }
    s
}

/// Wishart draw with `df` degrees of freedom and scale `S` (mean `df·S`),
/// via the Bartlett decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= (p as f64) - 1.0 {
        return Err(Error::invalid(format!("wishart df {df} must exceed {}", p as f64 - 1.0)));
    }
    let l = cholesky_jitter(scale)?.l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| Error::invalid(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = &l * &a;
    let w = &la * la.transpose();
    Ok(symmetrize(w))
}

pub fn wishart_logpdf(x: &DMatrix<f64>, df: f64, scale: &DMatrix<f64>) -> Result<f64> {
    let p = x.nrows();
    let pf = p as f64;
    let cx = x.clone().cholesky().ok_or(Error::NotPositiveDefinite("wishart argument"))?;
    let cs = cholesky_jitter(scale)?;
    let tr = cs.solve(x).trace();
    Ok(0.5 * (df - pf - 1.0) * chol_logdet(&cx) - 0.5 * tr
        - 0.5 * df * pf * std::f64::consts::LN_2
        - 0.5 * df * chol_logdet(&cs)
        - ln_mv_gamma(p, 0.5 * df))
}

/// Inverse-Wishart draw: `X⁻¹ ~ Wishart(df, Ψ⁻¹)`, so `E[X] = Ψ/(df-p-1)`.
pub fn sample_inv_wishart<R: Rng + ?Sized>(df: f64, psi: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let psi_inv = cholesky_jitter(psi)?.inverse();
    let w = sample_wishart(df, &symmetrize(psi_inv), rng)?;
    Ok(symmetrize(cholesky_jitter(&w)?.inverse()))
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters").sample(rng)
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Draw from a standard normal truncated to `(a, b)`.
///
/// Uses inverse-cdf sampling on whichever tail keeps the probabilities
/// representable, and exponential/uniform rejection once the lower bound is
/// so far out that the tail mass underflows.
pub fn sample_truncated_std<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    debug_assert!(a < b);
    if a >= 0.0 {
        upper_tail(a, b, rng)
    } else if b <= 0.0 {
        -upper_tail(-b, -a, rng)
    } else {
        let pa = norm_cdf(a);
        let pb = norm_cdf(b);
        let u: f64 = rng.random();
        norm_ppf(pa + u * (pb - pa)).clamp(a, b)
    }
}

fn upper_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a < 30.0 {
        let sa = norm_sf(a);
        let sb = norm_sf(b);
        if sa - sb > 1e-280 && (sa - sb) > 1e-10 * sa {
            let u: f64 = rng.random();
            let x = norm_isf(sb + u * (sa - sb));
            if x.is_finite() {
                return x.clamp(a, b);
            }
        }
    }
    tail_rejection(a, b, rng)
}

fn tail_rejection<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let a_eff = a.max(0.0);
    if (b - a_eff) * (a_eff + 1.0) <= 1.0 {
        // narrow interval: uniform proposal, acceptance >= e^{-1}
        loop {
            let u: f64 = rng.random();
            let z = a_eff + u * (b - a_eff);
            let v: f64 = rng.random();
            if v.ln() <= 0.5 * (a_eff * a_eff - z * z) {
                return z;
            }
        }
    }
    let rate = 0.5 * (a_eff + (a_eff * a_eff + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a_eff + e / rate;
        if z > b {
            continue;
        }
        let v: f64 = rng.random();
        if v.ln() <= -0.5 * (z - rate) * (z - rate) {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_norm_cdf_matches_direct_and_asymptotic() {
        for &x in &[-3.0, -1.0, 0.0, 0.5, 4.0] {
            assert!((log_norm_cdf(x) - norm_cdf(x).ln()).abs() < 1e-13);
        }
        // continuity across the switch to the asymptotic branch
        let lo = log_norm_cdf(-37.0 - 1e-9);
        let hi = log_norm_cdf(-37.0 + 1e-9);
        assert!((lo - hi).abs() < 1e-6);
        assert!(log_norm_cdf(-100.0).is_finite());
    }

    #[test]
    fn interval_prob_tails() {
        assert!((interval_prob(f64::NEG_INFINITY, f64::INFINITY) - 1.0).abs() < 1e-15);
        assert!((interval_prob(f64::NEG_INFINITY, 0.0) - 0.5).abs() < 1e-15);
        let p = interval_prob(8.0, 9.0);
        let expect = norm_sf(8.0) - norm_sf(9.0);
        assert!((p / expect - 1.0).abs() < 1e-10);
        assert!(log_interval_prob(40.0, 41.0).is_finite());
        assert_eq!(log_interval_prob(1.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn ppf_roundtrip() {
        for &p in &[1e-300, 1e-20, 1e-5, 0.3, 0.5, 0.9, 1.0 - 1e-12] {
            let x = norm_ppf(p);
            let back = norm_cdf(x);
            assert!((back / p - 1.0).abs() < 1e-8, "p={p}, x={x}, back={back}");
        }
    }

    #[test]
    fn truncated_far_tail_stays_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(a, b) in &[(8.0, 9.0), (40.0, 40.5), (-9.0, -8.0), (35.0, f64::INFINITY), (5.0, 5.0001)] {
            for _ in 0..2000 {
                let x = sample_truncated_std(a, b, &mut rng);
                assert!(x >= a && x <= b, "{x} outside ({a},{b})");
            }
        }
    }

    #[test]
    fn wishart_mean_and_logpdf_normalises_in_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let n = 20_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            acc += sample_wishart(5.0, &s, &mut rng).unwrap();
        }
        let mean = acc / n as f64;
        let expected = &s * 5.0;
        assert!((mean - expected).abs().max() < 0.15);

        // 1-d Wishart(df, s) is a Gamma(df/2, scale 2s)
        let x = DMatrix::from_element(1, 1, 1.7);
        let w = wishart_logpdf(&x, 3.0, &DMatrix::from_element(1, 1, 0.8)).unwrap();
        let k = 1.5;
        let theta = 1.6;
        let g = (k - 1.0) * 1.7f64.ln() - 1.7 / theta - ln_gamma(k) - k * theta.ln();
        assert!((w - g).abs() < 1e-12);
    }

    #[test]
    fn canonical_sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let n = 50_000;
        let mut m = DVector::zeros(2);
        let mut c = DMatrix::zeros(2, 2);
        let draws: Vec<_> = (0..n).map(|_| sample_mvn_canonical(&b, &p, &mut rng).unwrap()).collect();
        for d in &draws {
            m += d;
        }
        m /= n as f64;
        for d in &draws {
            let e = d - &m;
            c += &e * e.transpose();
        }
        c /= n as f64;
        let cov = p.clone().try_inverse().unwrap();
        let mean = &cov * &b;
        assert!((m - mean).abs().max() < 0.02);
        assert!((c - cov).abs().max() < 0.02);
    }
}
