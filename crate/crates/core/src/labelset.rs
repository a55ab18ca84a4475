//! Label-set losses for partially annotated segmentations.
//!
//! Predictions are `N × K` row-major arrays of per-voxel class
//! probabilities; annotations give one non-empty class subset per voxel. A
//! loss is a label-set loss when it only depends on the prediction through
//! the marginalisation Φ, which replaces the probabilities inside each
//! voxel's label-set by their mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::{SubsetMask, MAX_CLASSES};

pub const DEFAULT_SMOOTHING: f64 = 1e-5;
pub const DEFAULT_ALPHA: u32 = 2;

const ROW_SUM_TOL: f64 = 1e-9;

/// `N × K` per-voxel probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftPrediction {
    n: usize,
    k: usize,
    p: Vec<f64>,
}

impl SoftPrediction {
    pub fn new(k: usize, p: Vec<f64>) -> Result<Self> {
        if !(1..=MAX_CLASSES).contains(&k) || !p.len().is_multiple_of(k) {
            return Err(Error::Validation(format!(
                "{} values is not a multiple of {k} classes",
                p.len()
            )));
        }
        for (i, row) in p.chunks_exact(k).enumerate() {
            if row.iter().any(|v| !(v >= &0.0 && v.is_finite())) {
                return Err(Error::InvalidValue(format!(
                    "negative or non-finite probability in row {i}"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Validation(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self::from_raw(k, p))
    }

    /// No validation: used for gradients and finite differences, where rows
    /// need not sum to one.
    pub fn from_raw(k: usize, p: Vec<f64>) -> Self {
        SoftPrediction {
            n: p.len() / k,
            k,
            p,
        }
    }

    pub fn voxels(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.k..(i + 1) * self.k]
    }
}

/// One label-set per voxel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialAnnotation {
    k: usize,
    g: Vec<SubsetMask>,
}

impl PartialAnnotation {
    pub fn new(k: usize, g: Vec<SubsetMask>) -> Result<Self> {
        let full = SubsetMask::full(k);
        for (i, s) in g.iter().enumerate() {
            if s.is_empty() || !s.is_subset_of(full) {
                return Err(Error::Validation(format!(
                    "invalid label-set {s} at voxel {i}"
                )));
            }
        }
        Ok(PartialAnnotation { k, g })
    }

    /// Fully annotated: every voxel gets a singleton.
    pub fn from_labels(k: usize, labels: &[usize]) -> Result<Self> {
        Self::new(
            k,
            labels.iter().map(|&c| SubsetMask::singleton(c)).collect(),
        )
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn sets(&self) -> &[SubsetMask] {
        &self.g
    }
}

fn check(p: &SoftPrediction, g: &PartialAnnotation) -> Result<()> {
    if p.k != g.k || p.n != g.g.len() {
        return Err(Error::Validation(format!(
            "prediction is {}x{} but annotation is {}x{}",
            p.n,
            p.k,
            g.g.len(),
            g.k
        )));
    }
    Ok(())
}

/// Φ: inside each label-set, probabilities are replaced by their mean.
pub fn marginalize(p: &SoftPrediction, g: &PartialAnnotation) -> Result<SoftPrediction> {
    check(p, g)?;
    let mut out = p.p.clone();
    for (row, s) in out.chunks_exact_mut(p.k).zip(&g.g) {
        if s.is_singleton() {
            continue;
        }
        let mean = s.iter().map(|c| row[c]).sum::<f64>() / s.len() as f64;
        s.iter().for_each(|c| row[c] = mean);
    }
    Ok(SoftPrediction::from_raw(p.k, out))
}

/// Ψ₀: uniform over each voxel's label-set.
pub fn psi0(g: &PartialAnnotation) -> SoftPrediction {
    let mut out = vec![0.0; g.g.len() * g.k];
    for (row, s) in out.chunks_exact_mut(g.k).zip(&g.g) {
        let v = 1.0 / s.len() as f64;
        s.iter().for_each(|c| row[c] = v);
    }
    SoftPrediction::from_raw(g.k, out)
}

fn pow(x: f64, alpha: u32) -> f64 {
    if alpha == 1 {
        x
    } else {
        x * x
    }
}

fn check_alpha(alpha: u32, eps: f64) -> Result<()> {
    if alpha != 1 && alpha != 2 {
        return Err(Error::Validation(format!(
            "alpha must be 1 or 2, got {alpha}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Validation("smoothing constant must be > 0".into()));
    }
    Ok(())
}

/// Soft mean-class Dice loss between prediction `p` and soft target `q`:
/// `1 - (1/K) Σ_c 2 Σ_i q_ic p_ic / (Σ_i q_ic^α + Σ_i p_ic^α + ε)`.
pub fn mean_class_dice(
    p: &SoftPrediction,
    q: &SoftPrediction,
    alpha: u32,
    eps: f64,
) -> Result<f64> {
    check_alpha(alpha, eps)?;
    if p.k != q.k || p.n != q.n {
        return Err(Error::Validation(
            "prediction and target shapes differ".into(),
        ));
    }
    let k = p.k;
    let (mut num, mut den) = (vec![0.0; k], vec![0.0; k]);
    for (pr, qr) in p.p.chunks_exact(k).zip(q.p.chunks_exact(k)) {
        for c in 0..k {
            num[c] += qr[c] * pr[c];
            den[c] += pow(qr[c], alpha) + pow(pr[c], alpha);
        }
    }
    let s: f64 = (0..k).map(|c| 2.0 * num[c] / (den[c] + eps)).sum();
    Ok(1.0 - s / k as f64)
}

/// Gradient of [`mean_class_dice`] with respect to `p`.
pub fn mean_class_dice_grad(
    p: &SoftPrediction,
    q: &SoftPrediction,
    alpha: u32,
    eps: f64,
) -> Result<Vec<f64>> {
    check_alpha(alpha, eps)?;
    if p.k != q.k || p.n != q.n {
        return Err(Error::Validation(
            "prediction and target shapes differ".into(),
        ));
    }
    let k = p.k;
    let (mut num, mut den) = (vec![0.0; k], vec![0.0; k]);
    for (pr, qr) in p.p.chunks_exact(k).zip(q.p.chunks_exact(k)) {
        for c in 0..k {
            num[c] += qr[c] * pr[c];
            den[c] += pow(qr[c], alpha) + pow(pr[c], alpha);
        }
    }
    let mut grad = vec![0.0; p.p.len()];
    for (i, (pr, qr)) in p.p.chunks_exact(k).zip(q.p.chunks_exact(k)).enumerate() {
        for c in 0..k {
            let b = den[c] + eps;
            let dpow = if alpha == 1 { 1.0 } else { 2.0 * pr[c] };
            let dt = 2.0 * qr[c] / b - 2.0 * num[c] * dpow / (b * b);
            grad[i * k + c] = -dt / k as f64;
        }
    }
    Ok(grad)
}

/// The non-singleton label-set of a leaf-Dice annotation, if any. Fails when
/// the annotation uses more than one non-singleton set or a singleton inside
/// it.
pub fn leaf_structure(g: &PartialAnnotation) -> Result<Option<SubsetMask>> {
    let mut partial: Option<SubsetMask> = None;
    for s in g.g.iter().filter(|s| !s.is_singleton()) {
        match partial {
            None => partial = Some(*s),
            Some(l) if l == *s => {}
            Some(l) => {
                return Err(Error::Validation(format!(
                    "leaf-Dice needs a single non-singleton label-set, found {l} and {s}"
                )))
            }
        }
    }
    if let Some(l) = partial {
        if l == SubsetMask::full(g.k) {
            return Err(Error::Validation(
                "the non-singleton label-set must be a proper subset".into(),
            ));
        }
        if g.g.iter().any(|s| s.is_singleton() && s.is_subset_of(l)) {
            return Err(Error::Validation(format!(
                "singleton annotation inside the unannotated set {l}"
            )));
        }
    }
    Ok(partial)
}

/// Target of the leaf-Dice: `1(g_i = {c})`.
fn leaf_target(g: &PartialAnnotation) -> SoftPrediction {
    let mut out = vec![0.0; g.g.len() * g.k];
    for (row, s) in out.chunks_exact_mut(g.k).zip(&g.g) {
        if s.is_singleton() {
            row[s.iter().next().unwrap()] = 1.0;
        }
    }
    SoftPrediction::from_raw(g.k, out)
}

/// Leaf-Dice loss: the mean-class Dice against `1(g_i = {c})`, so voxels
/// annotated with the unannotated set only enter through the `Σ p^α`
/// denominators.
pub fn leaf_dice(p: &SoftPrediction, g: &PartialAnnotation, alpha: u32, eps: f64) -> Result<f64> {
    check(p, g)?;
    leaf_structure(g)?;
    mean_class_dice(p, &leaf_target(g), alpha, eps)
}

pub fn leaf_dice_grad(
    p: &SoftPrediction,
    g: &PartialAnnotation,
    alpha: u32,
    eps: f64,
) -> Result<Vec<f64>> {
    check(p, g)?;
    leaf_structure(g)?;
    mean_class_dice_grad(p, &leaf_target(g), alpha, eps)
}

/// Chain rule through Φ: in-set partial derivatives are averaged.
fn marginalize_grad(grad_phi: &[f64], g: &PartialAnnotation) -> Vec<f64> {
    let mut out = grad_phi.to_vec();
    for (row, s) in out.chunks_exact_mut(g.k).zip(&g.g) {
        if s.is_singleton() {
            continue;
        }
        let mean = s.iter().map(|c| row[c]).sum::<f64>() / s.len() as f64;
        s.iter().for_each(|c| row[c] = mean);
    }
    out
}

/// The converted Dice loss `L_Dice(Φ(p; g), Ψ₀(g))`.
pub fn marginal_dice(
    p: &SoftPrediction,
    g: &PartialAnnotation,
    alpha: u32,
    eps: f64,
) -> Result<f64> {
    mean_class_dice(&marginalize(p, g)?, &psi0(g), alpha, eps)
}

pub fn marginal_dice_grad(
    p: &SoftPrediction,
    g: &PartialAnnotation,
    alpha: u32,
    eps: f64,
) -> Result<Vec<f64>> {
    let gp = mean_class_dice_grad(&marginalize(p, g)?, &psi0(g), alpha, eps)?;
    Ok(marginalize_grad(&gp, g))
}

/// `L_Dice(p, Ψ₀(g))`. Not a label-set loss.
pub fn soft_target_dice(
    p: &SoftPrediction,
    g: &PartialAnnotation,
    alpha: u32,
    eps: f64,
) -> Result<f64> {
    check(p, g)?;
    mean_class_dice(p, &psi0(g), alpha, eps)
}

pub fn soft_target_dice_grad(
    p: &SoftPrediction,
    g: &PartialAnnotation,
    alpha: u32,
    eps: f64,
) -> Result<Vec<f64>> {
    check(p, g)?;
    mean_class_dice_grad(p, &psi0(g), alpha, eps)
}

/// Cross-entropy `-(1/N) Σ_i Σ_c q_ic ln p_ic`.
pub fn cross_entropy(p: &SoftPrediction, q: &SoftPrediction) -> Result<f64> {
    if p.k != q.k || p.n != q.n {
        return Err(Error::Validation(
            "prediction and target shapes differ".into(),
        ));
    }
    let s: f64 =
        p.p.iter()
            .zip(&q.p)
            .filter(|(_, &qv)| qv > 0.0)
            .map(|(&pv, &qv)| qv * pv.ln())
            .sum();
    Ok(-s / p.n as f64)
}

/// The converted cross-entropy `CE(Φ(p; g), Ψ₀(g))`, which equals
/// `-(1/N) Σ_i ln(mean_{c∈g_i} p_ic)`.
pub fn marginal_ce(p: &SoftPrediction, g: &PartialAnnotation) -> Result<f64> {
    cross_entropy(&marginalize(p, g)?, &psi0(g))
}

pub fn marginal_ce_grad(p: &SoftPrediction, g: &PartialAnnotation) -> Result<Vec<f64>> {
    let phi = marginalize(p, g)?;
    let q = psi0(g);
    let n = p.n as f64;
    let gp: Vec<f64> = phi
        .p
        .iter()
        .zip(&q.p)
        .map(|(&pv, &qv)| if qv > 0.0 { -qv / (pv * n) } else { 0.0 })
        .collect();
    Ok(marginalize_grad(&gp, g))
}

/// Largest differences a loss shows under the label-set axiom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxiomReport {
    pub trials: usize,
    /// `max |L(p, g) - L(Φ(p; g), g)|`.
    pub max_phi_violation: f64,
    /// `max |L(p, g) - L(q, g)|` over in-set mass redistributions `q`.
    pub max_redistribution_violation: f64,
}

impl AxiomReport {
    pub fn max_violation(&self) -> f64 {
        self.max_phi_violation
            .max(self.max_redistribution_violation)
    }
}

/// A random leaf-Dice style instance: one proper non-singleton set `L'`,
/// every other voxel annotated with a singleton outside `L'`.
pub fn random_partial_instance<R: Rng>(
    rng: &mut R,
    n: usize,
    k: usize,
) -> (SoftPrediction, PartialAnnotation) {
    assert!(k >= 3, "need room for a non-singleton proper subset");
    let size = rng.random_range(2..k);
    let mut order: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let unannotated = SubsetMask::from_classes(order[..size].iter().copied());
    let rest = &order[size..];
    let g = (0..n)
        .map(|_| {
            if rng.random_bool(0.4) {
                unannotated
            } else {
                SubsetMask::singleton(rest[rng.random_range(0..rest.len())])
            }
        })
        .collect();
    (random_prediction(rng, n, k), PartialAnnotation { k, g })
}

/// Rows drawn uniformly on the simplex.
pub fn random_prediction<R: Rng>(rng: &mut R, n: usize, k: usize) -> SoftPrediction {
    let mut p = Vec::with_capacity(n * k);
    for _ in 0..n {
        let row: Vec<f64> = (0..k)
            .map(|_| -rng.random::<f64>().max(1e-300).ln())
            .collect();
        let s: f64 = row.iter().sum();
        p.extend(row.iter().map(|v| v / s));
    }
    SoftPrediction { n, k, p }
}

/// Moves each voxel's in-set mass around at random, keeping its in-set total.
pub fn redistribute<R: Rng>(
    rng: &mut R,
    p: &SoftPrediction,
    g: &PartialAnnotation,
) -> SoftPrediction {
    let mut out = p.p.clone();
    for (row, s) in out.chunks_exact_mut(p.k).zip(&g.g) {
        if s.is_singleton() {
            continue;
        }
        let mass: f64 = s.iter().map(|c| row[c]).sum();
        let w: Vec<f64> = s.iter().map(|_| rng.random::<f64>()).collect();
        let ws: f64 = w.iter().sum();
        for (c, wc) in s.iter().zip(&w) {
            row[c] = mass * wc / ws;
        }
    }
    SoftPrediction::from_raw(p.k, out)
}

/// Checks `L(p, g) = L(Φ(p; g), g) = L(q, g)` on random instances.
pub fn axiom_check<F>(loss: F, trials: usize, seed: u64) -> Result<AxiomReport>
where
    F: Fn(&SoftPrediction, &PartialAnnotation) -> Result<f64>,
{
    if trials == 0 {
        return Err(Error::Validation(
            "axiom check needs at least one trial".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut phi_v, mut red_v) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let n = rng.random_range(4..40);
        let k = rng.random_range(3..7);
        let (p, g) = random_partial_instance(&mut rng, n, k);
        let base = loss(&p, &g)?;
        phi_v = phi_v.max((base - loss(&marginalize(&p, &g)?, &g)?).abs());
        let q = redistribute(&mut rng, &p, &g);
        red_v = red_v.max((base - loss(&q, &g)?).abs());
    }
    Ok(AxiomReport {
        trials,
        max_phi_violation: phi_v,
        max_redistribution_violation: red_v,
    })
}
