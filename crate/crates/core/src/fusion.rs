//! Voxel-wise trustworthy fusion and the fail-safe conflict map.
//!
//! At each voxel the backbone prediction is blended with the fallback,
//! `(1 - ε) p_ai + ε p_fb`, and then combined with the anatomical and
//! intensity contracts.

use rayon::prelude::*;

use crate::contracts::{
    apply_anatomical_in_place, apply_intensity_in_place, fit_gmm2, intensity_masses,
    AnatomicalWeights, ContractConfig, Gmm2,
};
use crate::error::{Error, Result};
use crate::volume::{argmax, LabelSpace, MaskVolume, ProbabilityVolume, ScalarVolume, SubsetMask};

pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Where the intensity model comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GmmSource {
    Fixed(Gmm2),
    /// Fit on the image inside the fallback brain mask at fuse time.
    FitInBrain {
        background: Option<usize>,
    },
    /// No intensity contract.
    Disabled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    pub epsilon: f64,
    pub c_high: SubsetMask,
    pub gmm: GmmSource,
}

impl FusionConfig {
    pub fn new(epsilon: f64, c_high: SubsetMask, gmm: GmmSource) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Validation(format!(
                "epsilon {epsilon} must lie in (0, 1)"
            )));
        }
        Ok(FusionConfig {
            epsilon,
            c_high,
            gmm,
        })
    }

    pub fn from_contracts(cfg: &ContractConfig, space: &LabelSpace) -> Result<Self> {
        let gmm = match cfg.gmm {
            Some(g) => {
                g.validate()?;
                GmmSource::Fixed(g)
            }
            None => GmmSource::FitInBrain {
                background: cfg.background_index(space)?,
            },
        };
        Self::new(cfg.epsilon, cfg.c_high_mask(space)?, gmm)
    }
}

/// Union of the fallback's argmax regions, leaving out `background`.
pub fn brain_mask(p_fb: &ProbabilityVolume, background: Option<usize>) -> MaskVolume {
    let data = p_fb
        .voxels()
        .map(|row| Some(argmax(row)) != background)
        .collect();
    MaskVolume::new(*p_fb.meta(), data).expect("length matches grid")
}

/// Intensity model for this fusion, fitting it if the config asks for it.
pub fn resolve_gmm(
    p_fb: &ProbabilityVolume,
    image: &ScalarVolume,
    source: GmmSource,
) -> Result<Option<Gmm2>> {
    match source {
        GmmSource::Fixed(g) => Ok(Some(g)),
        GmmSource::Disabled => Ok(None),
        GmmSource::FitInBrain { background } => {
            let mask = brain_mask(p_fb, background);
            let xs: Vec<f64> = image
                .data()
                .iter()
                .zip(mask.data())
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .collect();
            fit_gmm2(&xs).map(Some)
        }
    }
}

fn check_inputs(
    p_ai: &ProbabilityVolume,
    p_fb: &ProbabilityVolume,
    aw: &AnatomicalWeights,
) -> Result<()> {
    p_ai.meta().ensure_same(p_fb.meta())?;
    p_ai.meta().ensure_same(aw.meta())?;
    if p_ai.channels() != p_fb.channels() || p_ai.channels() != aw.classes() {
        return Err(Error::Validation(format!(
            "channel counts differ: ai {}, fallback {}, contracts {}",
            p_ai.channels(),
            p_fb.channels(),
            aw.classes()
        )));
    }
    Ok(())
}

/// Trustworthy prediction at every voxel.
pub fn trustworthy_fuse(
    p_ai: &ProbabilityVolume,
    p_fb: &ProbabilityVolume,
    aw: &AnatomicalWeights,
    image: &ScalarVolume,
    cfg: &FusionConfig,
) -> Result<ProbabilityVolume> {
    check_inputs(p_ai, p_fb, aw)?;
    p_ai.meta().ensure_same(image.meta())?;
    let eps = cfg.epsilon;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Validation(format!(
            "epsilon {eps} must lie in (0, 1)"
        )));
    }
    let gmm = resolve_gmm(p_fb, image, cfg.gmm)?;
    let k = p_ai.channels();
    let mut out = vec![0.0; p_ai.data().len()];
    out.par_chunks_mut(k)
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            for ((o, &a), &f) in row.iter_mut().zip(p_ai.voxel(i)).zip(p_fb.voxel(i)) {
                *o = (1.0 - eps) * a + eps * f;
            }
            apply_anatomical_in_place(row, aw.at(i)).map_err(|_| {
                let [x, y, z] = p_ai.meta().coords(i);
                Error::CompleteContradiction(format!(
                    "fallback contradicts the contracts at voxel ({x}, {y}, {z})"
                ))
            })?;
            if let Some(g) = &gmm {
                let (high, whole) = intensity_masses(image.data()[i], g);
                apply_intensity_in_place(row, cfg.c_high, high, whole);
            }
            Ok(())
        })?;
    ProbabilityVolume::new(*p_ai.meta(), k, out)
}

/// `1 - Σ_c p_ai(c) w_c` per voxel, clamped to `[0, 1]`.
pub fn failsafe_map(p_ai: &ProbabilityVolume, aw: &AnatomicalWeights) -> Result<ScalarVolume> {
    p_ai.meta().ensure_same(aw.meta())?;
    if p_ai.channels() != aw.classes() {
        return Err(Error::Validation("channel counts differ".into()));
    }
    let data = (0..p_ai.meta().len())
        .into_par_iter()
        .map(|i| {
            let agree: f64 = p_ai.voxel(i).iter().zip(aw.at(i)).map(|(p, w)| p * w).sum();
            (1.0 - agree).clamp(0.0, 1.0)
        })
        .collect();
    ScalarVolume::new(*p_ai.meta(), data)
}

/// Fraction of (in-mask) voxels whose conflict is at least `tau`.
pub fn incident_fraction(
    conflict: &ScalarVolume,
    tau: f64,
    mask: Option<&MaskVolume>,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Validation(format!("threshold {tau} outside [0, 1]")));
    }
    if let Some(m) = mask {
        conflict.meta().ensure_same(m.meta())?;
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, &c) in conflict.data().iter().enumerate() {
        if mask.is_some_and(|m| !m.data()[i]) {
            continue;
        }
        total += 1;
        hit += (c >= tau) as usize;
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(hit as f64 / total as f64)
}
