//! Two-component 1-D Gaussian mixture fitted by EM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::percentile;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Mixture of a low-intensity and a high-intensity Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm2 {
    pub mu_low: f64,
    pub sigma_low: f64,
    pub mu_high: f64,
    pub sigma_high: f64,
    pub pi_low: f64,
    pub pi_high: f64,
}

impl Gmm2 {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mu_low,
            self.sigma_low,
            self.mu_high,
            self.sigma_high,
            self.pi_low,
            self.pi_high,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite GMM parameter in {self:?}"
            )));
        }
        if !(self.sigma_low > 0.0 && self.sigma_high > 0.0) {
            return Err(Error::Validation(
                "GMM standard deviations must be > 0".into(),
            ));
        }
        if self.pi_low < 0.0
            || self.pi_high < 0.0
            || (self.pi_low + self.pi_high - 1.0).abs() > 1e-9
        {
            return Err(Error::Validation(
                "GMM mixing weights must be >= 0 and sum to 1".into(),
            ));
        }
        if self.mu_low > self.mu_high {
            return Err(Error::Validation(
                "GMM components out of order (mu_low > mu_high)".into(),
            ));
        }
        Ok(())
    }

    /// Log-density of component `high` (or low) without the mixing weight.
    pub fn component_log_pdf(&self, x: f64, high: bool) -> f64 {
        let (mu, sigma) = if high {
            (self.mu_high, self.sigma_high)
        } else {
            (self.mu_low, self.sigma_low)
        };
        let z = (x - mu) / sigma;
        -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
    }

    /// Mixture log-density.
    pub fn log_pdf(&self, x: f64) -> f64 {
        let a = self.pi_low.ln() + self.component_log_pdf(x, false);
        let b = self.pi_high.ln() + self.component_log_pdf(x, true);
        log_add(a, b)
    }

    /// Mean log-likelihood of a sample.
    pub fn mean_log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter().map(|&x| self.log_pdf(x)).sum::<f64>() / xs.len() as f64
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// EM settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmOptions {
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Standard-deviation floor as a fraction of the data range.
    pub sigma_floor_frac: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-8,
            max_iter: 500,
            sigma_floor_frac: 1e-6,
        }
    }
}

/// Fitted model plus the EM trace.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub model: Gmm2,
    pub iterations: usize,
    /// Mean log-likelihood after initialisation and after every iteration.
    pub log_likelihood: Vec<f64>,
}

/// Minimum sample count accepted by [`fit_gmm2`].
pub const MIN_SAMPLES: usize = 20;

pub fn fit_gmm2(xs: &[f64]) -> Result<Gmm2> {
    fit_gmm2_with(xs, &EmOptions::default()).map(|f| f.model)
}

/// EM from quartile initialisation: means at the 25th and 75th percentiles,
/// equal weights and the pooled variance for both components.
pub fn fit_gmm2_with(xs: &[f64], opts: &EmOptions) -> Result<GmmFit> {
    if xs.len() < MIN_SAMPLES {
        return Err(Error::Validation(format!(
            "GMM fit needs at least {MIN_SAMPLES} samples, got {}",
            xs.len()
        )));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(
            "non-finite intensity in GMM input".into(),
        ));
    }
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Degenerate("all intensities are equal".into()));
    }
    let floor = opts.sigma_floor_frac * range;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let pooled = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(floor);
    let mut g = Gmm2 {
        mu_low: percentile(xs, 25.0)?,
        sigma_low: pooled,
        mu_high: percentile(xs, 75.0)?,
        sigma_high: pooled,
        pi_low: 0.5,
        pi_high: 0.5,
    };
    let mut trace = vec![g.mean_log_likelihood(xs)];
    let mut resp = vec![0.0; xs.len()];
    for it in 1..=opts.max_iter {
        // E step: responsibility of the high component.
        let (la, lb) = (g.pi_low.ln(), g.pi_high.ln());
        for (r, &x) in resp.iter_mut().zip(xs) {
            let a = la + g.component_log_pdf(x, false);
            let b = lb + g.component_log_pdf(x, true);
            *r = 1.0 / (1.0 + (a - b).exp());
        }
        // M step.
        let nh: f64 = resp.iter().sum();
        let nl = n - nh;
        if !(nh > 0.0 && nl > 0.0) {
            return Err(Error::Degenerate(
                "a GMM component lost all its samples".into(),
            ));
        }
        let (mut sh, mut sl) = (0.0, 0.0);
        for (&r, &x) in resp.iter().zip(xs) {
            sh += r * x;
            sl += (1.0 - r) * x;
        }
        let (muh, mul) = (sh / nh, sl / nl);
        let (mut vh, mut vl) = (0.0, 0.0);
        for (&r, &x) in resp.iter().zip(xs) {
            vh += r * (x - muh).powi(2);
            vl += (1.0 - r) * (x - mul).powi(2);
        }
        g = Gmm2 {
            mu_low: mul,
            sigma_low: (vl / nl).sqrt().max(floor),
            mu_high: muh,
            sigma_high: (vh / nh).sqrt().max(floor),
            pi_low: nl / n,
            pi_high: nh / n,
        };
        let ll = g.mean_log_likelihood(xs);
        if !ll.is_finite() {
            return Err(Error::Divergence("GMM log-likelihood is not finite".into()));
        }
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if (ll - prev).abs() < opts.tol {
            if g.mu_low > g.mu_high {
                g = Gmm2 {
                    mu_low: g.mu_high,
                    sigma_low: g.sigma_high,
                    mu_high: g.mu_low,
                    sigma_high: g.sigma_low,
                    pi_low: g.pi_high,
                    pi_high: g.pi_low,
                };
            }
            return Ok(GmmFit {
                model: g,
                iterations: it,
                log_likelihood: trace,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn two_blobs(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(0.0, 100.0).unwrap();
        let b = Normal::new(1000.0, 100.0).unwrap();
        let mut v: Vec<f64> = (0..n).map(|_| a.sample(&mut rng)).collect();
        v.extend((0..n).map(|_| b.sample(&mut rng)));
        v
    }

    #[test]
    fn recovers_two_blobs() {
        let fit = fit_gmm2_with(&two_blobs(1, 5000), &EmOptions::default()).unwrap();
        let g = fit.model;
        assert!(g.mu_low.abs() < 50.0, "{g:?}");
        assert!((g.mu_high - 1000.0).abs() < 50.0, "{g:?}");
        assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        g.validate().unwrap();
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(fit_gmm2(&[5.0; 40]), Err(Error::Degenerate(_))));
        assert!(matches!(fit_gmm2(&[1.0, 2.0]), Err(Error::Validation(_))));
    }

    #[test]
    fn two_deltas_hit_the_floor() {
        let xs: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { 0.0 } else { 10.0 })
            .collect();
        let g = fit_gmm2(&xs).unwrap();
        let floor = 1e-6 * 10.0;
        assert!(
            (g.mu_low - 0.0).abs() < 1e-9 && (g.mu_high - 10.0).abs() < 1e-9,
            "{g:?}"
        );
        assert_eq!(g.sigma_low, floor);
        assert_eq!(g.sigma_high, floor);
    }
}
