//! Contracts of trust: anatomical BPAs built from distance-transformed
//! fallback masks, and an intensity BPA from a two-component GMM.
//!
//! Per class `c` the anatomical contract puts mass `w_c = φ_c(d(x, M^c))`
//! on the whole space and `1 - w_c` on "anything but c". Their combination
//! has the product form implemented by [`anatomical_mass`], and combining
//! it with a probability reduces to a reweighting by `w` (see
//! [`apply_anatomical`]). Both fast paths are tested against the generic
//! rule in [`crate::dempster`].

mod gmm;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gmm::{fit_gmm2, fit_gmm2_with, EmOptions, Gmm2, GmmFit, MIN_SAMPLES};

use crate::dempster::{Bpa, ClassProbability};
use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::volume::{GridMeta, LabelSpace, MaskVolume, ScalarVolume, SubsetMask};

/// Shape of the thresholding function φ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhiKind {
    #[serde(rename = "hard")]
    Hard,
    #[serde(rename = "exp")]
    Exponential,
}

/// Thresholding function mapping a distance in mm to `[0, 1]`.
///
/// A margin of 0 is accepted: the hard function is then the indicator of
/// the mask, and the exponential one is taken as its `η → 0` limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdingFn {
    pub kind: PhiKind,
    pub eta: f64,
}

impl ThresholdingFn {
    pub fn new(kind: PhiKind, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Validation(format!(
                "margin {eta} must be finite and >= 0"
            )));
        }
        Ok(ThresholdingFn { kind, eta })
    }

    pub fn hard(eta: f64) -> Result<Self> {
        Self::new(PhiKind::Hard, eta)
    }

    pub fn exponential(eta: f64) -> Result<Self> {
        Self::new(PhiKind::Exponential, eta)
    }

    pub fn eval(&self, d: f64) -> f64 {
        anatomical_weight(d, self)
    }
}

/// `φ(d)`: hard is `1` for `d <= η` (inclusive), exponential is `exp(-d/η)`.
pub fn anatomical_weight(d: f64, phi: &ThresholdingFn) -> f64 {
    match phi.kind {
        PhiKind::Hard => {
            if d <= phi.eta {
                1.0
            } else {
                0.0
            }
        }
        PhiKind::Exponential => {
            if d == 0.0 {
                1.0
            } else if phi.eta == 0.0 {
                0.0
            } else {
                (-d / phi.eta).exp()
            }
        }
    }
}

/// Per-voxel, per-class anatomical weights `w_c(x)`, voxel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AnatomicalWeights {
    meta: GridMeta,
    classes: usize,
    data: Vec<f64>,
}

impl AnatomicalWeights {
    /// Wraps precomputed weights; every value must lie in `[0, 1]`.
    pub fn new(meta: GridMeta, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != meta.len() * classes {
            return Err(Error::SizeMismatch {
                expected: meta.len() * classes,
                actual: data.len(),
            });
        }
        if data.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidValue(
                "anatomical weight outside [0, 1]".into(),
            ));
        }
        Ok(AnatomicalWeights {
            meta,
            classes,
            data,
        })
    }

    /// All weights 1: the vacuous contract.
    pub fn ones(meta: GridMeta, classes: usize) -> Self {
        AnatomicalWeights {
            meta,
            classes,
            data: vec![1.0; meta.len() * classes],
        }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    /// Weight map of one class.
    pub fn class_map(&self, c: usize) -> ScalarVolume {
        let data = self.data.chunks_exact(self.classes).map(|w| w[c]).collect();
        ScalarVolume::new(self.meta, data).expect("weights are finite")
    }
}

/// Builds `w_c = φ_c(d(x, M^c))` for every class.
///
/// The masks must partition the grid. A class whose mask is empty gets
/// weight 0 everywhere.
pub fn build_anatomical(
    masks: &[MaskVolume],
    margins_mm: &[f64],
    kind: PhiKind,
) -> Result<AnatomicalWeights> {
    if masks.is_empty() {
        return Err(Error::Empty("no class masks".into()));
    }
    if masks.len() != margins_mm.len() {
        return Err(Error::Validation(format!(
            "{} masks but {} margins",
            masks.len(),
            margins_mm.len()
        )));
    }
    let meta = *masks[0].meta();
    for m in masks {
        meta.ensure_same(m.meta())?;
    }
    for i in 0..meta.len() {
        let hits = masks.iter().filter(|m| m.data()[i]).count();
        if hits != 1 {
            let [x, y, z] = meta.coords(i);
            return Err(Error::Validation(format!(
                "class masks do not partition the grid: voxel ({x}, {y}, {z}) is in {hits} masks"
            )));
        }
    }
    let phis = margins_mm
        .iter()
        .map(|&eta| ThresholdingFn::new(kind, eta))
        .collect::<Result<Vec<_>>>()?;
    let per_class: Vec<Vec<f64>> = masks
        .par_iter()
        .zip(phis.par_iter())
        .map(|(m, phi)| {
            if m.is_empty() {
                return vec![0.0; meta.len()];
            }
            squared_edt(&meta, m.data())
                .into_iter()
                .map(|d2| anatomical_weight(d2.sqrt(), phi))
                .collect()
        })
        .collect();
    let k = masks.len();
    let mut data = vec![0.0; meta.len() * k];
    for (c, w) in per_class.iter().enumerate() {
        for (i, &v) in w.iter().enumerate() {
            data[i * k + c] = v;
        }
    }
    Ok(AnatomicalWeights {
        meta,
        classes: k,
        data,
    })
}

/// Mass of `C ∖ C'` under the combined anatomical BPA at one voxel, before
/// normalisation: `Π_c [δ_c(C')(1 - w_c) + (1 - δ_c(C')) w_c]`.
pub fn anatomical_mass(w: &[f64], c_prime: SubsetMask) -> f64 {
    w.iter()
        .enumerate()
        .map(|(c, &wc)| if c_prime.contains(c) { 1.0 - wc } else { wc })
        .product()
}

/// The per-class contract `m(C ∖ {c}) = 1 - w`, `m(C) = w`.
pub fn class_contract_bpa(space: &LabelSpace, c: usize, w: f64) -> Result<Bpa> {
    let full = space.full();
    Bpa::new(
        space.clone(),
        [
            (full, w),
            (SubsetMask::singleton(c).complement(space.len()), 1.0 - w),
        ],
    )
}

/// Combined anatomical BPA at one voxel from the product formula, enumerating
/// all `2^K` subsets.
pub fn anatomical_bpa(space: &LabelSpace, w: &[f64]) -> Result<Bpa> {
    let k = space.len();
    if w.len() != k {
        return Err(Error::SpaceMismatch);
    }
    let full = space.full();
    let mut masses = Vec::new();
    let mut empty_mass = 0.0;
    for c_prime in SubsetMask::all(k) {
        let m = anatomical_mass(w, c_prime);
        if c_prime == full {
            empty_mass = m;
        } else if m > 0.0 {
            masses.push((c_prime.complement(k), m));
        }
    }
    let agreement = 1.0 - empty_mass;
    if !(agreement > 0.0) {
        return Err(Error::CompleteContradiction(
            "anatomical contracts exclude every class".into(),
        ));
    }
    Bpa::new(
        space.clone(),
        masses.into_iter().map(|(s, m)| (s, m / agreement)),
    )
}

/// `p(c) w_c / Σ p w` in place.
pub fn apply_anatomical_in_place(p: &mut [f64], w: &[f64]) -> Result<()> {
    debug_assert_eq!(p.len(), w.len());
    let mut total = 0.0;
    for (pc, &wc) in p.iter_mut().zip(w) {
        *pc *= wc;
        total += *pc;
    }
    if !(total > 0.0) {
        return Err(Error::CompleteContradiction(
            "probability is excluded by every anatomical contract".into(),
        ));
    }
    p.iter_mut().for_each(|v| *v /= total);
    Ok(())
}

/// Combines a probability with the anatomical BPA in `O(K)`.
pub fn apply_anatomical(p: &ClassProbability, w: &[f64]) -> Result<ClassProbability> {
    if w.len() != p.values().len() {
        return Err(Error::SpaceMismatch);
    }
    let mut out = p.values().to_vec();
    apply_anatomical_in_place(&mut out, w)?;
    ClassProbability::new(p.space().clone(), out)
}

/// `(m(C_high), m(C))` for intensity `x`: the normalised component
/// likelihoods, evaluated in log space. Mixing weights do not enter.
pub fn intensity_masses(x: f64, gmm: &Gmm2) -> (f64, f64) {
    let a = gmm.component_log_pdf(x, true);
    let b = gmm.component_log_pdf(x, false);
    let high = 1.0 / (1.0 + (b - a).exp());
    let whole = 1.0 / (1.0 + (a - b).exp());
    (high, whole)
}

/// Intensity BPA with focal sets `C_high` and the whole space.
pub fn intensity_bpa(space: &LabelSpace, x: f64, gmm: &Gmm2, c_high: SubsetMask) -> Result<Bpa> {
    gmm.validate()?;
    check_c_high(space, c_high)?;
    let (high, whole) = intensity_masses(x, gmm);
    Bpa::new(space.clone(), [(c_high, high), (space.full(), whole)])
}

fn check_c_high(space: &LabelSpace, c_high: SubsetMask) -> Result<()> {
    if c_high.is_empty() || c_high == space.full() || !space.contains(c_high) {
        return Err(Error::Validation(
            "high-intensity class set must be a non-empty proper subset".into(),
        ));
    }
    Ok(())
}

/// `p(c) pl(c)` normalised, where `pl(c) = high + whole` on `C_high` and
/// `whole` elsewhere.
pub fn apply_intensity_in_place(p: &mut [f64], c_high: SubsetMask, high: f64, whole: f64) {
    let mut total = 0.0;
    for (c, pc) in p.iter_mut().enumerate() {
        *pc *= if c_high.contains(c) {
            high + whole
        } else {
            whole
        };
        total += *pc;
    }
    p.iter_mut().for_each(|v| *v /= total);
}

/// Combines a probability with an intensity BPA; `C_high` is read from the
/// BPA's focal sets.
pub fn apply_intensity(p: &ClassProbability, m: &Bpa) -> Result<ClassProbability> {
    if p.space() != m.space() {
        return Err(Error::SpaceMismatch);
    }
    let full = m.space().full();
    let mut c_high = None;
    for (s, _) in m.focal() {
        if s != full {
            if c_high.is_some() {
                return Err(Error::Validation(
                    "intensity BPA has more than two focal sets".into(),
                ));
            }
            c_high = Some(s);
        }
    }
    let whole = m.mass(full);
    if !(whole > 0.0) {
        return Err(Error::Validation(
            "intensity BPA needs positive mass on the whole space".into(),
        ));
    }
    let mut out = p.values().to_vec();
    if let Some(s) = c_high { apply_intensity_in_place(&mut out, s, m.mass(s), whole) }
    ClassProbability::new(p.space().clone(), out)
}

/// Contract configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractConfig {
    pub epsilon: f64,
    pub phi: PhiKind,
    pub margins_mm: BTreeMap<String, f64>,
    pub c_high: Vec<String>,
    /// Class names in channel order; `c0, c1, ...` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    /// Class excluded from the brain mask used for GMM fitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
    /// Pre-fitted intensity model; fitted per image when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm: Option<Gmm2>,
}

impl ContractConfig {
    pub fn label_space(&self, channels: usize) -> Result<LabelSpace> {
        match &self.classes {
            Some(names) => {
                let s = LabelSpace::new(names.clone())?;
                if s.len() != channels {
                    return Err(Error::Validation(format!(
                        "config lists {} classes but the volume has {channels} channels",
                        s.len()
                    )));
                }
                Ok(s)
            }
            None => LabelSpace::indexed(channels),
        }
    }

    /// Margins in class order; every class needs an entry.
    pub fn margins(&self, space: &LabelSpace) -> Result<Vec<f64>> {
        for k in self.margins_mm.keys() {
            if space.index_of(k).is_none() {
                return Err(Error::Validation(format!(
                    "margin given for unknown class {k:?}"
                )));
            }
        }
        space
            .names()
            .iter()
            .map(|n| {
                self.margins_mm
                    .get(n)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("no margin for class {n:?}")))
            })
            .collect()
    }

    pub fn c_high_mask(&self, space: &LabelSpace) -> Result<SubsetMask> {
        let s = space.subset(&self.c_high)?;
        check_c_high(space, s)?;
        Ok(s)
    }

    pub fn background_index(&self, space: &LabelSpace) -> Result<Option<usize>> {
        match &self.background {
            None => Ok(None),
            Some(b) => space
                .index_of(b)
                .map(Some)
                .ok_or_else(|| Error::Validation(format!("unknown background class {b:?}"))),
        }
    }
}
