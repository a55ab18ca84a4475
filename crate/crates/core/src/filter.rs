//! Separable smoothing with reflect boundaries.
//!
//! Out-of-range samples mirror about the edge with the edge voxel repeated
//! (`d c b a | a b c d | d c b a`), which makes the extension periodic with
//! period `2n` and valid for kernels longer than the axis.

use rayon::prelude::*;

use crate::volume::GridMeta;

/// Source index for a possibly out-of-range position on an axis of length `n`.
pub fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m >= n {
        2 * n - 1 - m
    } else {
        m
    }
}

/// Centred B-spline of order `n` (degree `n`) at `x`.
pub fn bspline(n: usize, x: f64) -> f64 {
    // B_n(x) = 1/n! Σ_{k=0}^{n+1} (-1)^k C(n+1, k) (x + (n+1)/2 - k)_+^n
    let half = (n as f64 + 1.0) / 2.0;
    if x.abs() >= half {
        return 0.0;
    }
    let mut fact = 1.0;
    for i in 2..=n {
        fact *= i as f64;
    }
    let mut binom = 1.0;
    let mut acc = 0.0;
    for k in 0..=n + 1 {
        let t = x + half - k as f64;
        if t > 0.0 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom * t.powi(n as i32);
        }
        binom = binom * (n + 1 - k) as f64 / (k + 1) as f64;
    }
    acc / fact
}

/// B-spline of order `n` sampled at integer offsets, normalised to sum 1.
pub fn bspline_kernel(n: usize) -> Vec<f64> {
    let r = n.div_ceil(2);
    let mut k: Vec<f64> = (-(r as isize)..=r as isize)
        .map(|i| bspline(n, i as f64))
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Gaussian with standard deviation `sigma` voxels, truncated at ±4σ and
/// normalised to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Correlates `data` with an odd-length centred kernel along one axis.
pub fn convolve_axis(meta: &GridMeta, data: &[f64], axis: usize, kernel: &[f64]) -> Vec<f64> {
    assert_eq!(kernel.len() % 2, 1, "kernel length must be odd");
    let r = (kernel.len() / 2) as isize;
    let [nx, ny, _] = meta.dims;
    let n = meta.dims[axis];
    let stride = [1, nx, nx * ny][axis];
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let c = meta.coords(i);
            let base = i - c[axis] * stride;
            let mut acc = 0.0;
            for (j, &kv) in kernel.iter().enumerate() {
                let src = reflect(c[axis] as isize + j as isize - r, n);
                acc += kv * data[base + src * stride];
            }
            acc
        })
        .collect()
}

/// Applies one kernel per axis, x first.
pub fn separable(meta: &GridMeta, data: &[f64], kernels: [&[f64]; 3]) -> Vec<f64> {
    let mut out = data.to_vec();
    for (axis, k) in kernels.iter().enumerate() {
        out = convolve_axis(meta, &out, axis, k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_is_half_sample_symmetric() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(reflect(-1, 1), 0);
    }

    #[test]
    fn cubic_bspline_values() {
        assert!((bspline(3, 0.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((bspline(3, 1.0) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(bspline(3, 2.0), 0.0);
        assert!((bspline(0, 0.2) - 1.0).abs() < 1e-15);
        let k = bspline_kernel(3);
        assert_eq!(k.len(), 5);
        assert!((k[1] - 1.0 / 6.0).abs() < 1e-15 && (k[2] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constants_are_preserved() {
        let meta = GridMeta::cube([5, 3, 2]).unwrap();
        let data = vec![2.5; meta.len()];
        let g = gaussian_kernel(7.0);
        let out = separable(&meta, &data, [&g, &g, &g]);
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }
}
