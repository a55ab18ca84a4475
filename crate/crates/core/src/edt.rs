//! Exact Euclidean distance transform on anisotropic voxel grids.
//!
//! Separable lower-envelope-of-parabolas algorithm, one pass per axis. Pass
//! order is x, y, z and each pass adds `(offset * spacing)^2`, so values are
//! accumulated in the same order as a brute-force `((dx^2 + dy^2) + dz^2)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{GridMeta, MaskVolume, ScalarVolume};

/// Squared distance in mm² from every voxel centre to the nearest feature
/// voxel. Voxels with no feature anywhere get `f64::INFINITY`.
pub fn squared_edt(meta: &GridMeta, features: &[bool]) -> Vec<f64> {
    assert_eq!(features.len(), meta.len());
    let mut f: Vec<f64> = features
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    for axis in 0..3 {
        transform_axis(meta, &mut f, axis);
    }
    f
}

fn transform_axis(meta: &GridMeta, f: &mut [f64], axis: usize) {
    let [nx, ny, nz] = meta.dims;
    let n = meta.dims[axis];
    let s = meta.spacing[axis];
    if axis == 0 {
        f.par_chunks_mut(nx)
            .for_each_init(Envelope::default, |env, line| {
                let input = line.to_vec();
                env.run(&input, s, line);
            });
        return;
    }
    let stride = if axis == 1 { nx } else { nx * ny };
    let starts: Vec<usize> = if axis == 1 {
        (0..nz)
            .flat_map(|z| (0..nx).map(move |x| x + nx * ny * z))
            .collect()
    } else {
        (0..nx * ny).collect()
    };
    let src: &[f64] = f;
    let lines: Vec<Vec<f64>> = starts
        .par_iter()
        .map_init(Envelope::default, |env, &start| {
            let input: Vec<f64> = (0..n).map(|i| src[start + i * stride]).collect();
            let mut out = vec![0.0; n];
            env.run(&input, s, &mut out);
            out
        })
        .collect();
    for (&start, line) in starts.iter().zip(&lines) {
        for (i, &v) in line.iter().enumerate() {
            f[start + i * stride] = v;
        }
    }
}

#[derive(Default)]
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    /// `out[q] = min_p f[p] + ((q - p) * s)^2`.
    fn run(&mut self, f: &[f64], s: f64, out: &mut [f64]) {
        let n = f.len();
        self.sites.clear();
        self.bounds.clear();
        let pos = |i: usize| i as f64 * s;
        for q in (0..n).filter(|&q| f[q].is_finite()) {
            let xq = pos(q);
            loop {
                let Some(&p) = self.sites.last() else {
                    self.sites.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let xp = pos(p);
                let cross = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
                if cross <= *self.bounds.last().unwrap() {
                    self.sites.pop();
                    self.bounds.pop();
                } else {
                    self.sites.push(q);
                    self.bounds.push(cross);
                    break;
                }
            }
        }
        if self.sites.is_empty() {
            out.iter_mut().for_each(|v| *v = f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let xq = pos(q);
            while k + 1 < self.sites.len() && self.bounds[k + 1] < xq {
                k += 1;
            }
            let p = self.sites[k];
            let d = (q as f64 - p as f64) * s;
            *o = f[p] + d * d;
        }
    }
}

/// Distance in mm from each voxel to the nearest voxel of `mask`; zero inside.
pub fn distance_transform(mask: &MaskVolume) -> Result<ScalarVolume> {
    if mask.is_empty() {
        return Err(Error::Empty("distance transform of an empty mask".into()));
    }
    let d2 = squared_edt(mask.meta(), mask.data());
    ScalarVolume::new(*mask.meta(), d2.into_iter().map(f64::sqrt).collect())
}
