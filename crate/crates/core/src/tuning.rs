//! Acceptance bookkeeping and burn-in scale adaptation for Metropolis kernels.

use serde::Serialize;

/// Metropolis accept/reject on a log acceptance ratio; NaN and `-∞` reject.
pub fn mh_accept<R: rand::Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if !(log_ratio > f64::NEG_INFINITY) {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

pub const TARGET_ACCEPTANCE: f64 = 0.225;
const BATCH: u64 = 25;

/// One kernel's step scale (on the log scale) with acceptance counters.
#[derive(Debug, Clone, Serialize)]
pub struct Tuner {
    pub log_step: f64,
    pub accepted: u64,
    pub proposed: u64,
    #[serde(skip)]
    batch_accepted: u64,
    #[serde(skip)]
    batch_proposed: u64,
    #[serde(skip)]
    batches: u64,
    #[serde(skip)]
    pub adapting: bool,
}

impl Tuner {
    pub fn new(step: f64) -> Self {
        Tuner {
            log_step: step.ln(),
            accepted: 0,
            proposed: 0,
            batch_accepted: 0,
            batch_proposed: 0,
            batches: 0,
            adapting: false,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
        self.batch_proposed += 1;
        self.batch_accepted += accepted as u64;
        if self.adapting && self.batch_proposed >= BATCH {
            self.batches += 1;
            let rate = self.batch_accepted as f64 / self.batch_proposed as f64;
            let gain = (2.0 / (self.batches as f64).sqrt()).min(1.0);
            self.log_step = (self.log_step + gain * (rate - TARGET_ACCEPTANCE)).clamp(-12.0, 6.0);
            self.batch_accepted = 0;
            self.batch_proposed = 0;
        }
    }

    /// Stop adapting and reset counters so rates reflect the frozen kernel.
    pub fn freeze(&mut self) {
        self.adapting = false;
        self.accepted = 0;
        self.proposed = 0;
        self.batch_accepted = 0;
        self.batch_proposed = 0;
    }

    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

/// Tuners for the kernels a mixture sampler runs.
#[derive(Debug, Clone, Serialize)]
pub struct Tuning {
    /// Covariance (Wishart-proposal) kernel.
    pub sigma: Tuner,
    /// Regression-coefficient random walk.
    pub beta: Tuner,
    /// Spatial-association random walk.
    pub lambda: Tuner,
}

impl Tuning {
    pub fn new(sigma_step: f64, beta_step: f64, lambda_step: f64) -> Self {
        Tuning { sigma: Tuner::new(sigma_step), beta: Tuner::new(beta_step), lambda: Tuner::new(lambda_step) }
    }

    pub fn set_adapting(&mut self, on: bool) {
        for t in [&mut self.sigma, &mut self.beta, &mut self.lambda] {
            if on {
                t.adapting = true;
            } else {
                t.freeze();
            }
        }
    }

    pub fn rates(&self) -> Vec<(&'static str, Option<f64>, u64)> {
        vec![
            ("sigma", self.sigma.rate(), self.sigma.proposed),
            ("beta", self.beta.rate(), self.beta.proposed),
            ("lambda", self.lambda.rate(), self.lambda.proposed),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptation_moves_toward_target() {
        let mut t = Tuner::new(1.0);
        t.adapting = true;
        for _ in 0..100 {
            t.record(true);
        }
        assert!(t.step() > 1.0);
        let mut t = Tuner::new(1.0);
        t.adapting = true;
        for _ in 0..100 {
            t.record(false);
        }
        assert!(t.step() < 1.0);
    }

    #[test]
    fn frozen_tuner_keeps_step() {
        let mut t = Tuner::new(0.5);
        t.record(true);
        assert_eq!(t.step(), 0.5);
        t.freeze();
        assert_eq!(t.rate(), None);
    }
}
