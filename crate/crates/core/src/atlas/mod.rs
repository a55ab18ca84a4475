//! Atlas construction numerics: temporal weights, symmetrised weighted
//! intensity averaging and landmark-based weighted Procrustes.

mod procrustes;

pub use procrustes::{
    barycenter_and_size, landmark_weights, procrustes_solve, procrustes_solve_weighted,
    LandmarkConfig, LandmarkSet, ProcrustesOptions, ProcrustesSolution, SampleTransform,
};

use crate::error::{Error, Result};
use crate::volume::{GridMeta, MaskVolume, ScalarVolume};

/// Default temporal standard deviation in days.
pub const TEMPORAL_SIGMA_DAYS: f64 = 3.0;

/// Target in-mask mean and standard deviation used before averaging.
pub const TARGET_MEAN: f64 = 2000.0;
pub const TARGET_STD: f64 = 500.0;

/// Gaussian density of the age difference.
pub fn temporal_weight(ga: f64, ga_target: f64, sigma: f64) -> f64 {
    let z = (ga - ga_target) / sigma;
    (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
}

/// [`temporal_weight`] set to zero beyond three standard deviations.
pub fn procrustes_weight(ga: f64, ga_target: f64, sigma: f64) -> f64 {
    if (ga - ga_target).abs() > 3.0 * sigma {
        0.0
    } else {
        temporal_weight(ga, ga_target, sigma)
    }
}

/// Affine intensity map giving mean 2000 and standard deviation 500 inside
/// `mask` (the whole grid without one).
pub fn rescale_intensity(v: &ScalarVolume, mask: Option<&MaskVolume>) -> Result<ScalarVolume> {
    if let Some(m) = mask {
        v.meta().ensure_same(m.meta())?;
    }
    let vals: Vec<f64> = v
        .data()
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m.data()[*i]))
        .map(|(_, &x)| x)
        .collect();
    if vals.is_empty() {
        return Err(Error::Empty("intensity mask is empty".into()));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate(
            "constant intensities inside the mask".into(),
        ));
    }
    let a = TARGET_STD / sd;
    ScalarVolume::new(
        *v.meta(),
        v.data()
            .iter()
            .map(|x| TARGET_MEAN + a * (x - mean))
            .collect(),
    )
}

/// Index of the voxel mirrored across the centre plane of `axis`.
pub fn mirror_index(meta: &GridMeta, i: usize, axis: usize) -> usize {
    let mut c = meta.coords(i);
    c[axis] = meta.dims[axis] - 1 - c[axis];
    meta.index(c[0], c[1], c[2])
}

/// Mirror image of a volume across the centre plane of `axis`.
pub fn mirror(v: &ScalarVolume, axis: usize) -> ScalarVolume {
    let meta = *v.meta();
    let data = (0..meta.len())
        .map(|i| v.data()[mirror_index(&meta, i, axis)])
        .collect();
    ScalarVolume::new(meta, data).expect("values are finite")
}

/// `Σ w_i (I_i + S(I_i)) / (2 Σ w_i)` over rescaled volumes, with
/// `w_i` the temporal weight and `S` the mirror across `flip_axis`. The
/// weighted sum is formed first and then added to its own mirror image, so
/// the result is exactly symmetric.
pub fn weighted_average(
    volumes: &[ScalarVolume],
    ga_days: &[f64],
    ga_target: f64,
    flip_axis: usize,
    mask: Option<&MaskVolume>,
) -> Result<ScalarVolume> {
    if volumes.is_empty() {
        return Err(Error::Empty("no volumes to average".into()));
    }
    if volumes.len() != ga_days.len() {
        return Err(Error::Validation("one age per volume is required".into()));
    }
    if flip_axis > 2 {
        return Err(Error::Validation(format!(
            "flip axis {flip_axis} is not 0, 1 or 2"
        )));
    }
    let meta = *volumes[0].meta();
    let weights: Vec<f64> = ga_days
        .iter()
        .map(|&g| temporal_weight(g, ga_target, TEMPORAL_SIGMA_DAYS))
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Validation("all temporal weights are zero".into()));
    }
    let mut acc = vec![0.0; meta.len()];
    for (v, &w) in volumes.iter().zip(&weights) {
        meta.ensure_same(v.meta())?;
        if w == 0.0 {
            continue;
        }
        let r = rescale_intensity(v, mask)?;
        for (a, x) in acc.iter_mut().zip(r.data()) {
            *a += w * x;
        }
    }
    let data = (0..meta.len())
        .map(|i| (acc[i] + acc[mirror_index(&meta, i, flip_axis)]) / (2.0 * total))
        .collect();
    ScalarVolume::new(meta, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temporal_weight_values() {
        let peak = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * 3.0);
        assert!((temporal_weight(200.0, 200.0, 3.0) - peak).abs() < 1e-16);
        assert!((temporal_weight(203.0, 200.0, 3.0) - peak * (-0.5f64).exp()).abs() < 1e-16);
        assert_eq!(procrustes_weight(210.0, 200.0, 3.0), 0.0);
        assert!(procrustes_weight(209.0, 200.0, 3.0) > 0.0);
    }

    #[test]
    fn symmetric_volume_is_reproduced() {
        let meta = GridMeta::cube([6, 3, 2]).unwrap();
        let v = ScalarVolume::from_fn(meta, |[x, y, z]| {
            let xs = x.min(5 - x);
            (xs * 10 + y * 3 + z) as f64
        })
        .unwrap();
        let out = weighted_average(std::slice::from_ref(&v), &[200.0], 200.0, 0, None).unwrap();
        let r = rescale_intensity(&v, None).unwrap();
        for (a, b) in out.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn output_is_exactly_mirror_symmetric() {
        let meta = GridMeta::cube([5, 4, 3]).unwrap();
        let a =
            ScalarVolume::from_fn(meta, |[x, y, z]| (x * x * 7 + y * 3 + z) as f64 * 0.37).unwrap();
        let b = ScalarVolume::from_fn(meta, |[x, y, z]| ((x + 2 * y) % 5) as f64 + z as f64 * 0.1)
            .unwrap();
        for axis in 0..3 {
            let out = weighted_average(&[a.clone(), b.clone()], &[198.0, 203.5], 200.0, axis, None)
                .unwrap();
            assert_eq!(out, mirror(&out, axis));
        }
    }

    #[test]
    fn two_volume_mean() {
        let meta = GridMeta::cube([4, 2, 1]).unwrap();
        let a = ScalarVolume::from_fn(meta, |[x, y, _]| (x + 4 * y) as f64).unwrap();
        let b = ScalarVolume::from_fn(meta, |[x, y, _]| ((x * 3 + y) % 4) as f64).unwrap();
        let out =
            weighted_average(&[a.clone(), b.clone()], &[200.0, 200.0], 201.0, 0, None).unwrap();
        let (ra, rb) = (
            rescale_intensity(&a, None).unwrap(),
            rescale_intensity(&b, None).unwrap(),
        );
        let (ma, mb) = (mirror(&ra, 0), mirror(&rb, 0));
        for i in 0..meta.len() {
            let d = (ra.data()[i] + ma.data()[i] + rb.data()[i] + mb.data()[i]) / 4.0;
            assert!((out.data()[i] - d).abs() < 1e-9);
        }
        assert!(weighted_average(&[a], &[0.0], 1e6, 0, None).is_err());
    }
}
