//! Heat-kernel fusion of pre-registered atlases into a fallback segmentation.
//!
//! Every atlas arrives already warped onto the subject grid. Its local
//! dissimilarity is `D = α·SSD + (1 - α)·‖φ - G_σ * φ‖` and its voxel weight
//! `exp(-D²)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condition::Condition;
use crate::error::{Error, Result};
use crate::filter::{bspline_kernel, gaussian_kernel, separable};
use crate::volume::{MaskVolume, ProbabilityVolume, ScalarVolume, VectorVolume};

/// One warped atlas.
#[derive(Clone, Debug, PartialEq)]
pub struct AtlasEntry {
    pub id: String,
    pub ga_days: f64,
    pub condition: Condition,
    pub image: ScalarVolume,
    pub probs: ProbabilityVolume,
    pub displacement: VectorVolume,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub alpha: f64,
    pub bspline_order: usize,
    pub gauss_sigma_mm: f64,
    pub delta_ga_neurotypical_weeks: f64,
    pub delta_ga_spina_bifida_weeks: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            alpha: 0.5,
            bspline_order: 3,
            gauss_sigma_mm: 20.0,
            delta_ga_neurotypical_weeks: 1.0,
            delta_ga_spina_bifida_weeks: 3.0,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Validation(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.gauss_sigma_mm > 0.0 && self.gauss_sigma_mm.is_finite()) {
            return Err(Error::Validation("Gaussian sigma must be > 0".into()));
        }
        if !(self.delta_ga_neurotypical_weeks >= 0.0 && self.delta_ga_spina_bifida_weeks >= 0.0) {
            return Err(Error::Validation("GA windows must be >= 0".into()));
        }
        Ok(())
    }
}

/// Nearest whole week, halves rounded up.
pub fn round_ga_weeks(ga_weeks: f64) -> f64 {
    (ga_weeks + 0.5).floor()
}

/// True if an atlas of `atlas_condition` aged `atlas_ga_days` is eligible
/// for a subject of `condition` at `ga_weeks`. For [`Condition::Other`] the
/// neurotypical and spina bifida atlases are eligible, each within its own
/// window.
pub fn eligible(
    atlas_ga_days: f64,
    atlas_condition: Condition,
    ga_weeks: f64,
    condition: Condition,
    params: &FusionParams,
) -> bool {
    if condition != Condition::Other && atlas_condition != condition {
        return false;
    }
    let window = match atlas_condition {
        Condition::Neurotypical => params.delta_ga_neurotypical_weeks,
        Condition::SpinaBifida => params.delta_ga_spina_bifida_weeks,
        Condition::Other => return false,
    };
    (atlas_ga_days / 7.0 - round_ga_weeks(ga_weeks)).abs() <= window
}

/// Atlases passing [`eligible`]; an empty selection is an error.
pub fn select_atlases<'a>(
    entries: &'a [AtlasEntry],
    ga_weeks: f64,
    condition: Condition,
    params: &FusionParams,
) -> Result<Vec<&'a AtlasEntry>> {
    let picked: Vec<&AtlasEntry> = entries
        .iter()
        .filter(|e| eligible(e.ga_days, e.condition, ga_weeks, condition, params))
        .collect();
    if picked.is_empty() {
        return Err(Error::Empty(format!(
            "no {condition} atlas within the window around {} weeks",
            round_ga_weeks(ga_weeks)
        )));
    }
    Ok(picked)
}

fn normalized(v: &ScalarVolume, mask: Option<&MaskVolume>) -> Vec<f64> {
    let inside = |i: usize| mask.is_none_or(|m| m.data()[i]);
    let (mut n, mut s) = (0usize, 0.0);
    for (i, &x) in v.data().iter().enumerate() {
        if inside(i) {
            n += 1;
            s += x;
        }
    }
    if n == 0 {
        return v.data().to_vec();
    }
    let mean = s / n as f64;
    let var = v
        .data()
        .iter()
        .enumerate()
        .filter(|(i, _)| inside(*i))
        .map(|(_, &x)| (x - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let sd = var.sqrt();
    let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
    v.data().iter().map(|&x| (x - mean) * scale).collect()
}

/// B-spline smoothed squared difference after normalising each image to
/// zero mean and unit variance inside `mask` (the whole grid without one).
pub fn local_ssd(
    subject: &ScalarVolume,
    atlas: &ScalarVolume,
    mask: Option<&MaskVolume>,
    order: usize,
) -> Result<ScalarVolume> {
    subject.meta().ensure_same(atlas.meta())?;
    if let Some(m) = mask {
        subject.meta().ensure_same(m.meta())?;
    }
    let a = normalized(subject, mask);
    let b = normalized(atlas, mask);
    let sq: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).collect();
    let k = bspline_kernel(order);
    let out = separable(subject.meta(), &sq, [&k, &k, &k]);
    ScalarVolume::new(*subject.meta(), out)
}

/// `‖φ - G_σ * φ‖` per voxel, σ in mm.
pub fn high_freq_disp_norm(disp: &VectorVolume, sigma_mm: f64) -> Result<ScalarVolume> {
    if !(sigma_mm > 0.0) {
        return Err(Error::Validation("Gaussian sigma must be > 0".into()));
    }
    let meta = disp.meta();
    let ks: Vec<Vec<f64>> = (0..3)
        .map(|a| gaussian_kernel(sigma_mm / meta.spacing[a]))
        .collect();
    let mut sq = vec![0.0; meta.len()];
    for comp in 0..3 {
        let c: Vec<f64> = disp.data().iter().map(|v| v[comp]).collect();
        let low = separable(meta, &c, [&ks[0], &ks[1], &ks[2]]);
        for ((s, &x), &l) in sq.iter_mut().zip(&c).zip(&low) {
            *s += (x - l).powi(2);
        }
    }
    ScalarVolume::new(*meta, sq.into_iter().map(f64::sqrt).collect())
}

/// `exp(-D²)`.
pub fn heat_weight(d: f64) -> f64 {
    (-d * d).exp()
}

/// Per-atlas dissimilarity map `D`.
pub fn dissimilarity(
    entry: &AtlasEntry,
    subject: &ScalarVolume,
    mask: Option<&MaskVolume>,
    params: &FusionParams,
) -> Result<ScalarVolume> {
    let ssd = local_ssd(subject, &entry.image, mask, params.bspline_order)?;
    entry.displacement.meta().ensure_same(subject.meta())?;
    let hf = high_freq_disp_norm(&entry.displacement, params.gauss_sigma_mm)?;
    let a = params.alpha;
    let d = ssd
        .data()
        .iter()
        .zip(hf.data())
        .map(|(s, h)| a * s + (1.0 - a) * h)
        .collect();
    ScalarVolume::new(*subject.meta(), d)
}

/// `Σ w_k S_k / Σ w_k` with `w_k = exp(-D_k²)`. Weights are rescaled per
/// voxel by `exp(min_k D_k²)` so that they never all underflow.
pub fn fuse_with_distances(
    probs: &[&ProbabilityVolume],
    distances: &[ScalarVolume],
) -> Result<ProbabilityVolume> {
    if probs.is_empty() {
        return Err(Error::Empty("no atlases to fuse".into()));
    }
    if probs.len() != distances.len() {
        return Err(Error::Validation(
            "one distance map per atlas is required".into(),
        ));
    }
    let meta = *probs[0].meta();
    let k = probs[0].channels();
    for (p, d) in probs.iter().zip(distances) {
        meta.ensure_same(p.meta())?;
        meta.ensure_same(d.meta())?;
        if p.channels() != k {
            return Err(Error::Validation(
                "atlases have different channel counts".into(),
            ));
        }
    }
    let mut out = vec![0.0; meta.len() * k];
    out.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let d2min = distances
            .iter()
            .map(|d| d.data()[i].powi(2))
            .fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for (p, d) in probs.iter().zip(distances) {
            let w = (-(d.data()[i].powi(2) - d2min)).exp();
            total += w;
            for (o, &v) in row.iter_mut().zip(p.voxel(i)) {
                *o += w * v;
            }
        }
        row.iter_mut().for_each(|o| *o /= total);
    });
    ProbabilityVolume::new(meta, k, out)
}

/// Fallback probability map from the given (already selected) atlases.
pub fn fuse_atlases(
    entries: &[&AtlasEntry],
    subject: &ScalarVolume,
    mask: Option<&MaskVolume>,
    params: &FusionParams,
) -> Result<ProbabilityVolume> {
    params.validate()?;
    if entries.is_empty() {
        return Err(Error::Empty("no atlases to fuse".into()));
    }
    let distances = entries
        .par_iter()
        .map(|e| dissimilarity(e, subject, mask, params))
        .collect::<Result<Vec<_>>>()?;
    let probs: Vec<&ProbabilityVolume> = entries.iter().map(|e| &e.probs).collect();
    fuse_with_distances(&probs, &distances)
}
