//! Hardness-weighted sampling for KL-regularised distributionally robust
//! optimisation.
//!
//! With stale per-example losses `L` and robustness `β`, examples are drawn
//! i.i.d. from `softmax(βL)`. The matching robust loss is
//! `(1/β) ln((1/n) Σ exp(βL_i))`.

pub mod toy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_W_MIN: f64 = 0.1;
pub const DEFAULT_W_MAX: f64 = 10.0;

fn check_losses(l: &[f64]) -> Result<f64> {
    if l.is_empty() {
        return Err(Error::Empty("loss vector is empty".into()));
    }
    if l.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("non-finite loss".into()));
    }
    Ok(l.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `softmax(βL)` with the maximum subtracted before exponentiating.
pub fn hardness_probs(l: &[f64], beta: f64) -> Result<Vec<f64>> {
    let max = check_losses(l)?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Validation(format!(
            "beta {beta} must be finite and >= 0"
        )));
    }
    let e: Vec<f64> = l.iter().map(|v| (beta * (v - max)).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// `(1/β) ln Σ exp(β L_i) - (1/β) ln m`, shifted by the maximum.
fn scaled_logsumexp(l: &[f64], beta: f64, m: f64) -> Result<f64> {
    let max = check_losses(l)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Validation(format!(
            "beta {beta} must be finite and > 0"
        )));
    }
    let s: f64 = l.iter().map(|v| (beta * (v - max)).exp()).sum();
    Ok(max + (s.ln() - m.ln()) / beta)
}

/// `(1/β) ln((1/n) Σ exp(β L_i))`.
pub fn robust_loss(l: &[f64], beta: f64) -> Result<f64> {
    let n = l.len() as f64;
    let r = scaled_logsumexp(l, beta, n)?;
    // Stays inside [mean, max] despite rounding.
    let mean = l.iter().sum::<f64>() / n;
    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(r.clamp(mean.min(max), max))
}

/// Chernoff upper bound on the `α`-tail threshold:
/// `(1/β) ln((1/(α n)) Σ exp(β L_i))`. At most a fraction `α` of the
/// losses reach it.
pub fn percentile_bound(l: &[f64], beta: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Validation(format!(
            "tail fraction {alpha} outside (0, 1]"
        )));
    }
    scaled_logsumexp(l, beta, alpha * l.len() as f64)
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

/// Index `j` with `cdf[j-1] <= u < cdf[j]` for `u` in `[0, 1)`.
pub fn inverse_cdf(p: &[f64], u: f64) -> usize {
    let total: f64 = p.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (j, &v) in p.iter().enumerate() {
        acc += v;
        if target < acc {
            return j;
        }
    }
    // Rounding can leave `acc` a hair below `target`; fall back to the last
    // index with mass.
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

/// Stale losses, robustness and the sampling stream.
#[derive(Clone, Debug)]
pub struct SamplerState {
    losses: Vec<f64>,
    beta: f64,
    w_min: f64,
    w_max: f64,
    rng: ChaCha8Rng,
}

impl SamplerState {
    pub fn new(losses: Vec<f64>, beta: f64, seed: u64) -> Result<Self> {
        Self::with_clip(losses, beta, DEFAULT_W_MIN, DEFAULT_W_MAX, seed)
    }

    pub fn with_clip(
        losses: Vec<f64>,
        beta: f64,
        w_min: f64,
        w_max: f64,
        seed: u64,
    ) -> Result<Self> {
        check_losses(&losses)?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Validation(format!(
                "beta {beta} must be finite and > 0"
            )));
        }
        if !(w_min > 0.0 && w_min <= 1.0 && w_max >= 1.0 && w_max.is_finite()) {
            return Err(Error::Validation(format!(
                "clip bounds ({w_min}, {w_max}) must satisfy 0 < min <= 1 <= max"
            )));
        }
        Ok(SamplerState {
            losses,
            beta,
            w_min,
            w_max,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn probs(&self) -> Vec<f64> {
        hardness_probs(&self.losses, self.beta).expect("state losses are valid")
    }

    /// `b` i.i.d. draws from the hardness distribution.
    pub fn sample_batch(&mut self, b: usize) -> Vec<usize> {
        let p = self.probs();
        (0..b)
            .map(|_| inverse_cdf(&p, self.rng.random::<f64>()))
            .collect()
    }

    /// Draws using externally supplied uniforms in `[0, 1)`.
    pub fn sample_with(&self, uniforms: &[f64]) -> Vec<usize> {
        let p = self.probs();
        uniforms.iter().map(|&u| inverse_cdf(&p, u)).collect()
    }

    /// `clip(exp(β (L_new - L_stale)), w_min, w_max)`.
    pub fn importance_weights(&self, batch: &[usize], new_losses: &[f64]) -> Result<Vec<f64>> {
        self.check_batch(batch, new_losses)?;
        Ok(batch
            .iter()
            .zip(new_losses)
            .map(|(&i, &l)| {
                (self.beta * (l - self.losses[i]))
                    .exp()
                    .clamp(self.w_min, self.w_max)
            })
            .collect())
    }

    /// Overwrites the stale losses of the batch; a repeated index keeps its
    /// last value.
    pub fn update_stale(&mut self, batch: &[usize], new_losses: &[f64]) -> Result<()> {
        self.check_batch(batch, new_losses)?;
        for (&i, &l) in batch.iter().zip(new_losses) {
            self.losses[i] = l;
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[usize], new_losses: &[f64]) -> Result<()> {
        if batch.len() != new_losses.len() {
            return Err(Error::Validation(
                "one loss per batch index is required".into(),
            ));
        }
        if let Some(&i) = batch.iter().find(|&&i| i >= self.losses.len()) {
            return Err(Error::Validation(format!("batch index {i} out of range")));
        }
        if new_losses.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite batch loss".into()));
        }
        Ok(())
    }
}
