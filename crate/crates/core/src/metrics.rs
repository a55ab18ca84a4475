//! Segmentation metrics and margin tuning.
//!
//! Percentiles use linear interpolation between closest ranks: for sorted
//! values `x[0..n]` and level `q` the rank is `h = (n - 1) q / 100` and the
//! result `x[floor h] + (h - floor h)(x[ceil h] - x[floor h])`.
//!
//! A surface voxel is a foreground voxel with at least one 6-connected
//! neighbour that is background or outside the grid. HD95 is computed per
//! direction (surface of A to surface of B and back) and the larger of the
//! two 95th percentiles is reported.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condition::Condition;
use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::volume::{LabelSpace, MaskVolume};

/// Linear-interpolation percentile, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of no values".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Validation(format!(
            "percentile level {q} outside [0, 100]"
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// `2|A∩B| / (|A|+|B|)`, with two empty masks scoring 1.
pub fn dice(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    a.meta().ensure_same(b.meta())?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Surface voxels of a mask.
pub fn surface(mask: &MaskVolume) -> MaskVolume {
    let meta = *mask.meta();
    let [nx, ny, nz] = meta.dims;
    MaskVolume::from_fn(meta, |[x, y, z]| {
        if !mask.get(x, y, z) {
            return false;
        }
        let outside_or_bg = |dx: isize, dy: isize, dz: isize| {
            let (xx, yy, zz) = (x as isize + dx, y as isize + dy, z as isize + dz);
            if xx < 0
                || yy < 0
                || zz < 0
                || xx >= nx as isize
                || yy >= ny as isize
                || zz >= nz as isize
            {
                return true;
            }
            !mask.get(xx as usize, yy as usize, zz as usize)
        };
        outside_or_bg(-1, 0, 0)
            || outside_or_bg(1, 0, 0)
            || outside_or_bg(0, -1, 0)
            || outside_or_bg(0, 1, 0)
            || outside_or_bg(0, 0, -1)
            || outside_or_bg(0, 0, 1)
    })
}

/// Distance in mm from every surface voxel of `a` to the surface of `b`.
pub fn directed_surface_distances(a: &MaskVolume, b: &MaskVolume) -> Result<Vec<f64>> {
    a.meta().ensure_same(b.meta())?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("surface distance to an empty mask".into()));
    }
    let sa = surface(a);
    let sb = surface(b);
    let d2 = squared_edt(sb.meta(), sb.data());
    Ok(sa
        .data()
        .iter()
        .zip(&d2)
        .filter(|(&s, _)| s)
        .map(|(_, &d)| d.sqrt())
        .collect())
}

/// 95th-percentile symmetric Hausdorff distance in mm.
pub fn hd95(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    let ab = percentile(&directed_surface_distances(a, b)?, 95.0)?;
    let ba = percentile(&directed_surface_distances(b, a)?, 95.0)?;
    Ok(ab.max(ba))
}

/// Margin distance: `hd95(pred, pred ∪ gt)`, which only sees false negatives.
pub fn hd95_fn(pred: &MaskVolume, gt: &MaskVolume) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("hd95_fn needs a non-empty prediction".into()));
    }
    let union = pred.union(gt)?;
    hd95(pred, &union)
}

/// 95th percentile of the margin distances over (prediction, ground truth) pairs.
pub fn tune_margin(pairs: &[(MaskVolume, MaskVolume)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("tune_margin needs at least one pair".into()));
    }
    let values = pairs
        .par_iter()
        .map(|(pred, gt)| hd95_fn(pred, gt))
        .collect::<Result<Vec<f64>>>()?;
    percentile(&values, 95.0)
}

/// Margins in mm per (class, condition).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarginTable {
    entries: BTreeMap<String, BTreeMap<Condition, f64>>,
}

impl MarginTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class: &str, cond: Condition, eta: f64) -> Result<()> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Validation(format!(
                "margin {eta} for {class} must be >= 0"
            )));
        }
        self.entries
            .entry(class.to_string())
            .or_default()
            .insert(cond, eta);
        Ok(())
    }

    /// Whether `(class, cond)` has an explicit entry.
    pub fn contains(&self, class: &str, cond: Condition) -> bool {
        self.entries.get(class).is_some_and(|m| m.contains_key(&cond))
    }

    /// Stored margin; for [`Condition::Other`] without an explicit entry the
    /// max rule of [`margin_for_other_pathologies`] applies.
    pub fn get(&self, class: &str, cond: Condition) -> Result<f64> {
        if let Some(&eta) = self.entries.get(class).and_then(|m| m.get(&cond)) {
            return Ok(eta);
        }
        if cond == Condition::Other {
            return margin_for_other_pathologies(self, class);
        }
        Err(Error::Validation(format!(
            "no margin for class {class} ({cond})"
        )))
    }

    /// Margins for every class of `space`, in class order.
    pub fn margins_for(&self, space: &LabelSpace, cond: Condition) -> Result<Vec<f64>> {
        space.names().iter().map(|c| self.get(c, cond)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Condition, f64)> {
        self.entries
            .iter()
            .flat_map(|(c, m)| m.iter().map(move |(&k, &v)| (c.as_str(), k, v)))
    }
}

/// `max(η_neurotypical, η_spina_bifida)` for class `class`.
pub fn margin_for_other_pathologies(table: &MarginTable, class: &str) -> Result<f64> {
    let nt = table.get(class, Condition::Neurotypical)?;
    let sb = table.get(class, Condition::SpinaBifida)?;
    Ok(nt.max(sb))
}
