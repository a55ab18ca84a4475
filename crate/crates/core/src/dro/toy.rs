//! Desk-scale ERM vs DRO comparison on 2-D Gaussian blobs with a linear
//! softmax classifier.
//!
//! ERM and DRO consume the same stream of uniforms: ERM maps `u` to
//! `floor(u n)`, DRO to the inverse CDF of the hardness distribution. As
//! `β → 0` the two runs therefore coincide.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{entropy, hardness_probs, SamplerState};
use crate::error::{Error, Result};

/// Labelled 2-D points.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Vec<[f64; 2]>,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        self.y.iter().for_each(|&y| c[y] += 1);
        c
    }
}

/// Isotropic blobs, one centre and sample count per class.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobSpec {
    pub centers: Vec<[f64; 2]>,
    pub sigma: f64,
    pub counts: Vec<usize>,
}

impl BlobSpec {
    /// Three classes; the last gets `minority_fraction` of `n` points.
    pub fn imbalanced(n: usize, minority_fraction: f64) -> Self {
        let minority = ((n as f64) * minority_fraction).round().max(1.0) as usize;
        let rest = n - minority;
        BlobSpec {
            centers: vec![[-2.0, 0.0], [2.0, 0.0], [0.0, 2.0]],
            sigma: 1.0,
            counts: vec![rest / 2, rest - rest / 2, minority],
        }
    }

    /// Same geometry, equal class sizes.
    pub fn balanced(n_per_class: usize) -> Self {
        BlobSpec {
            counts: vec![n_per_class; 3],
            ..Self::imbalanced(3, 0.34)
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Dataset {
        let noise = Normal::new(0.0, self.sigma).expect("sigma > 0");
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, (&ctr, &n)) in self.centers.iter().zip(&self.counts).enumerate() {
            for _ in 0..n {
                x.push([ctr[0] + noise.sample(rng), ctr[1] + noise.sample(rng)]);
                y.push(c);
            }
        }
        Dataset {
            x,
            y,
            classes: self.centers.len(),
        }
    }
}

/// `softmax(W x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSoftmax {
    pub w: Vec<[f64; 2]>,
    pub b: Vec<f64>,
}

impl LinearSoftmax {
    pub fn zeros(classes: usize) -> Self {
        LinearSoftmax {
            w: vec![[0.0; 2]; classes],
            b: vec![0.0; classes],
        }
    }

    pub fn probs(&self, x: &[f64; 2]) -> Vec<f64> {
        let z: Vec<f64> = self
            .w
            .iter()
            .zip(&self.b)
            .map(|(w, b)| w[0] * x[0] + w[1] * x[1] + b)
            .collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Cross-entropy of one example.
    pub fn loss(&self, x: &[f64; 2], y: usize) -> f64 {
        -self.probs(x)[y].max(f64::MIN_POSITIVE).ln()
    }

    pub fn predict(&self, x: &[f64; 2]) -> usize {
        crate::volume::argmax(&self.probs(x))
    }

    /// Adds `-scale ∇ loss(x, y)`.
    fn step(&mut self, x: &[f64; 2], y: usize, scale: f64) {
        let p = self.probs(x);
        for c in 0..p.len() {
            let d = p[c] - if c == y { 1.0 } else { 0.0 };
            self.w[c][0] -= scale * d * x[0];
            self.w[c][1] -= scale * d * x[1];
            self.b[c] -= scale * d;
        }
    }
}

pub fn per_class_accuracy(model: &LinearSoftmax, data: &Dataset) -> Vec<f64> {
    let mut hit = vec![0usize; data.classes];
    let mut tot = vec![0usize; data.classes];
    for (x, &y) in data.x.iter().zip(&data.y) {
        tot[y] += 1;
        hit[y] += (model.predict(x) == y) as usize;
    }
    hit.iter()
        .zip(&tot)
        .map(|(&h, &t)| {
            if t == 0 {
                f64::NAN
            } else {
                h as f64 / t as f64
            }
        })
        .collect()
}

pub fn mean_loss(model: &LinearSoftmax, data: &Dataset) -> f64 {
    data.x
        .iter()
        .zip(&data.y)
        .map(|(x, &y)| model.loss(x, y))
        .sum::<f64>()
        / data.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Erm,
    Dro { beta: f64, importance: bool },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: Mode, seed: u64) -> Self {
        TrainConfig {
            mode,
            lr: 0.1,
            epochs: 30,
            batch: 16,
            seed,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: Vec<f64>,
    /// Entropy of the sampling distribution in nats.
    pub sampling_entropy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub model: LinearSoftmax,
    pub history: Vec<EpochStats>,
}

/// Per-example SGD. One epoch is `n / batch` steps. Per-class accuracy in
/// the log is measured on `eval` (the training set without one).
pub fn toy_train(
    train: &Dataset,
    cfg: &TrainConfig,
    eval: Option<&Dataset>,
) -> Result<TrainResult> {
    if train.is_empty() {
        return Err(Error::Empty("empty training set".into()));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Validation(
            "batch size and learning rate must be positive".into(),
        ));
    }
    let n = train.len();
    let eval = eval.unwrap_or(train);
    let mut model = LinearSoftmax::zeros(train.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = match cfg.mode {
        Mode::Erm => None,
        Mode::Dro { beta, .. } => {
            let l0: Vec<f64> = train
                .x
                .iter()
                .zip(&train.y)
                .map(|(x, &y)| model.loss(x, y))
                .collect();
            Some(SamplerState::new(l0, beta, cfg.seed)?)
        }
    };
    let steps = (n / cfg.batch).max(1);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut uniforms = vec![0.0; cfg.batch];
    for epoch in 1..=cfg.epochs {
        for _ in 0..steps {
            uniforms.iter_mut().for_each(|u| *u = rng.random::<f64>());
            let scale = cfg.lr / cfg.batch as f64;
            match (&mut sampler, cfg.mode) {
                (None, _) => {
                    for &u in &uniforms {
                        let i = ((u * n as f64) as usize).min(n - 1);
                        model.step(&train.x[i], train.y[i], scale);
                    }
                }
                (Some(s), Mode::Dro { importance, .. }) => {
                    let batch = s.sample_with(&uniforms);
                    let losses: Vec<f64> = batch
                        .iter()
                        .map(|&i| model.loss(&train.x[i], train.y[i]))
                        .collect();
                    let weights = if importance {
                        s.importance_weights(&batch, &losses)?
                    } else {
                        vec![1.0; batch.len()]
                    };
                    s.update_stale(&batch, &losses)?;
                    for (&i, &w) in batch.iter().zip(&weights) {
                        model.step(&train.x[i], train.y[i], scale * w);
                    }
                }
                (Some(_), Mode::Erm) => unreachable!("ERM has no sampler"),
            }
        }
        let ml = mean_loss(&model, train);
        if !ml.is_finite() || model.w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "training loss is not finite at epoch {epoch}"
            )));
        }
        let sampling_entropy = match &sampler {
            None => (n as f64).ln(),
            Some(s) => entropy(&hardness_probs(s.losses(), s.beta())?),
        };
        history.push(EpochStats {
            epoch,
            mean_loss: ml,
            accuracy: per_class_accuracy(&model, eval),
            sampling_entropy,
        });
    }
    Ok(TrainResult { model, history })
}

fn worst_class(acc: &[f64]) -> f64 {
    acc.iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::INFINITY, f64::min)
}

/// Trains one DRO model per `β` and keeps the one with the best worst-class
/// validation accuracy (ties go to the earlier `β`).
pub fn select_beta(
    train: &Dataset,
    val: &Dataset,
    betas: &[f64],
    base: &TrainConfig,
) -> Result<(f64, TrainResult)> {
    let mut best: Option<(f64, f64, TrainResult)> = None;
    for &beta in betas {
        let cfg = TrainConfig {
            mode: Mode::Dro {
                beta,
                importance: true,
            },
            ..*base
        };
        let r = toy_train(train, &cfg, Some(val))?;
        let score = worst_class(&per_class_accuracy(&r.model, val));
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((beta, score, r));
        }
    }
    let (beta, _, r) = best.ok_or_else(|| Error::Empty("no beta candidates".into()))?;
    Ok((beta, r))
}

/// Result of one minority-class run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinorityOutcome {
    pub seed: u64,
    pub beta: f64,
    pub erm_minority_accuracy: f64,
    pub dro_minority_accuracy: f64,
}

/// Candidate robustness values for [`minority_experiment`].
pub const BETA_GRID: [f64; 3] = [1.0, 10.0, 100.0];

/// ERM vs tuned DRO on blobs with a 1% minority class, scored on a large
/// balanced test set.
pub fn minority_experiment(seed: u64) -> Result<MinorityOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = BlobSpec::imbalanced(2000, 0.01).sample(&mut rng);
    let val = BlobSpec::imbalanced(2000, 0.01).sample(&mut rng);
    let test = BlobSpec::balanced(2000).sample(&mut rng);
    let base = TrainConfig::new(Mode::Erm, seed);
    let erm = toy_train(&train, &base, None)?;
    let (beta, dro) = select_beta(&train, &val, &BETA_GRID, &base)?;
    let minority = train.classes - 1;
    Ok(MinorityOutcome {
        seed,
        beta,
        erm_minority_accuracy: per_class_accuracy(&erm.model, &test)[minority],
        dro_minority_accuracy: per_class_accuracy(&dro.model, &test)[minority],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = BlobSpec::imbalanced(300, 0.05).sample(&mut rng);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::new(
                Mode::Dro {
                    beta: 5.0,
                    importance: true,
                },
                9,
            )
        };
        assert_eq!(
            toy_train(&d, &cfg, None).unwrap(),
            toy_train(&d, &cfg, None).unwrap()
        );
    }

    #[test]
    fn tiny_beta_matches_erm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = BlobSpec::imbalanced(400, 0.05).sample(&mut rng);
        let mut erm_cfg = TrainConfig::new(Mode::Erm, 3);
        erm_cfg.epochs = 5;
        let dro_cfg = TrainConfig {
            mode: Mode::Dro {
                beta: 1e-9,
                importance: true,
            },
            ..erm_cfg
        };
        let a = toy_train(&d, &erm_cfg, None).unwrap();
        let b = toy_train(&d, &dro_cfg, None).unwrap();
        let (la, lb) = (
            a.history.last().unwrap().mean_loss,
            b.history.last().unwrap().mean_loss,
        );
        assert!((la - lb).abs() / la < 0.02, "{la} vs {lb}");
    }

    #[test]
    fn learns_balanced_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = BlobSpec::balanced(200).sample(&mut rng);
        let r = toy_train(&d, &TrainConfig::new(Mode::Erm, 1), None).unwrap();
        assert!(per_class_accuracy(&r.model, &d).iter().all(|&a| a > 0.8));
    }
}
