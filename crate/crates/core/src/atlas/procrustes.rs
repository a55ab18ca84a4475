//! Weighted generalized Procrustes with diagonal scalings and translations.
//!
//! Minimises `½ Σ_i Σ_k w_ik ‖M_i x_ik + t_i - g_k‖²` over diagonal `M_i`,
//! translations `t_i` and a consensus `g`, where the consensus barycenter and
//! its mean squared spread are pinned to those of the weighted per-landmark
//! means of the raw data. Zero weights mark missing landmarks.
//!
//! Alternating least squares: the transform step is a closed-form 1-D
//! weighted regression per sample and axis, and the consensus step solves the
//! constrained problem exactly (a sphere-constrained quadratic in the
//! sum-zero subspace, reduced to a scalar secular equation). Both steps are
//! exact block minimisers, so the objective cannot increase.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::procrustes_weight;
use crate::error::{Error, Result};

/// One sample's landmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkConfig {
    pub sample_id: String,
    pub ga_days: f64,
    pub points: Vec<[f64; 3]>,
    pub present: Vec<bool>,
}

/// Landmark sets read from CSV, with landmark ids in column order.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    pub landmark_ids: Vec<String>,
    pub configs: Vec<LandmarkConfig>,
}

#[derive(Debug, Deserialize)]
struct LandmarkRow {
    sample_id: String,
    ga_days: f64,
    landmark_id: String,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
    present: String,
}

fn parse_present(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(Error::Validation(format!("bad present flag {other:?}"))),
    }
}

/// Landmark index to `(position, present)` for one sample.
type SampleRows = BTreeMap<usize, ([f64; 3], bool)>;

impl LandmarkSet {
    /// Parses `sample_id,ga_days,landmark_id,x_mm,y_mm,z_mm,present`.
    /// Samples and landmarks keep their order of first appearance; a
    /// landmark with no row for a sample counts as missing.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut landmark_ids: Vec<String> = Vec::new();
        let mut lm_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut samples: Vec<(String, f64, SampleRows)> = Vec::new();
        let mut sample_index: BTreeMap<String, usize> = BTreeMap::new();
        for (line, row) in rdr.deserialize::<LandmarkRow>().enumerate() {
            let row =
                row.map_err(|e| Error::Validation(format!("landmark CSV row {}: {e}", line + 1)))?;
            let present = parse_present(&row.present)?;
            let p = [row.x_mm, row.y_mm, row.z_mm];
            if present && p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!(
                    "non-finite coordinates for present landmark {} of {}",
                    row.landmark_id, row.sample_id
                )));
            }
            let k = *lm_index.entry(row.landmark_id.clone()).or_insert_with(|| {
                landmark_ids.push(row.landmark_id.clone());
                landmark_ids.len() - 1
            });
            let s = *sample_index
                .entry(row.sample_id.clone())
                .or_insert_with(|| {
                    samples.push((row.sample_id.clone(), row.ga_days, BTreeMap::new()));
                    samples.len() - 1
                });
            if samples[s].1 != row.ga_days {
                return Err(Error::Validation(format!(
                    "sample {} has several ages",
                    row.sample_id
                )));
            }
            if samples[s].2.insert(k, (p, present)).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate landmark {} for sample {}",
                    row.landmark_id, row.sample_id
                )));
            }
        }
        let n_lm = landmark_ids.len();
        let configs = samples
            .into_iter()
            .map(|(sample_id, ga_days, rows)| {
                let mut points = vec![[0.0; 3]; n_lm];
                let mut present = vec![false; n_lm];
                for (k, (p, pr)) in rows {
                    if pr {
                        points[k] = p;
                        present[k] = true;
                    }
                }
                LandmarkConfig {
                    sample_id,
                    ga_days,
                    points,
                    present,
                }
            })
            .collect();
        Ok(LandmarkSet {
            landmark_ids,
            configs,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(f)
    }
}

/// Solver settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcrustesOptions {
    pub max_iter: usize,
    /// Stop when `(f_prev - f) / f_prev` falls below this.
    pub rel_tol: f64,
}

impl Default for ProcrustesOptions {
    fn default() -> Self {
        ProcrustesOptions {
            max_iter: 500,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTransform {
    pub sample_id: String,
    /// Diagonal of `M_i`.
    pub scale: [f64; 3],
    pub translation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesSolution {
    pub transforms: Vec<SampleTransform>,
    pub consensus: Vec<[f64; 3]>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every half-step, starting from the initial consensus.
    pub trace: Vec<f64>,
}

/// Weights `w_ik`: the truncated temporal weight of sample `i` for present
/// landmarks, 0 otherwise. Without a target age every present landmark
/// weighs 1.
pub fn landmark_weights(configs: &[LandmarkConfig], ga_target: Option<f64>) -> Vec<Vec<f64>> {
    configs
        .iter()
        .map(|c| {
            let w = ga_target.map_or(1.0, |t| {
                procrustes_weight(c.ga_days, t, super::TEMPORAL_SIGMA_DAYS)
            });
            c.present.iter().map(|&p| if p { w } else { 0.0 }).collect()
        })
        .collect()
}

/// Solves with the temporal weighting around `ga_target`.
pub fn procrustes_solve(
    configs: &[LandmarkConfig],
    ga_target: Option<f64>,
) -> Result<ProcrustesSolution> {
    let w = landmark_weights(configs, ga_target);
    procrustes_solve_weighted(configs, &w, &ProcrustesOptions::default())
}

struct Problem<'a> {
    x: Vec<&'a [[f64; 3]]>,
    w: &'a [Vec<f64>],
    k: usize,
    /// Per-landmark total weights.
    wk: Vec<f64>,
    barycenter: [f64; 3],
    size: f64,
}

impl Problem<'_> {
    fn objective(&self, m: &[[f64; 3]], t: &[[f64; 3]], g: &[[f64; 3]]) -> f64 {
        let mut f = 0.0;
        for (i, xi) in self.x.iter().enumerate() {
            for k in 0..self.k {
                let w = self.w[i][k];
                if w == 0.0 {
                    continue;
                }
                let mut d2 = 0.0;
                for d in 0..3 {
                    let r = m[i][d] * xi[k][d] + t[i][d] - g[k][d];
                    d2 += r * r;
                }
                f += w * d2;
            }
        }
        0.5 * f
    }

    /// Best (m, t) per sample and axis for a fixed consensus.
    fn transform_step(&self, m: &mut [[f64; 3]], t: &mut [[f64; 3]], g: &[[f64; 3]]) {
        for (i, xi) in self.x.iter().enumerate() {
            let wi = &self.w[i];
            let sw: f64 = wi.iter().filter(|&&w| w != 0.0).sum();
            if sw == 0.0 {
                continue;
            }
            for d in 0..3 {
                let (mut mx, mut mg) = (0.0, 0.0);
                for k in 0..self.k {
                    if wi[k] != 0.0 {
                        mx += wi[k] * xi[k][d];
                        mg += wi[k] * g[k][d];
                    }
                }
                mx /= sw;
                mg /= sw;
                let (mut sxx, mut sxg) = (0.0, 0.0);
                for k in 0..self.k {
                    if wi[k] != 0.0 {
                        let dx = xi[k][d] - mx;
                        sxx += wi[k] * dx * dx;
                        sxg += wi[k] * dx * (g[k][d] - mg);
                    }
                }
                if sxx > 0.0 {
                    m[i][d] = sxg / sxx;
                }
                t[i][d] = mg - m[i][d] * mx;
            }
        }
    }

    /// Exact minimiser over the consensus under both constraints.
    fn consensus_step(&self, m: &[[f64; 3]], t: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        let k = self.k;
        // Weighted mean of the transformed points per landmark, centred on the target barycenter.
        let mut z = vec![[0.0; 3]; k];
        for (i, xi) in self.x.iter().enumerate() {
            for kk in 0..k {
                let w = self.w[i][kk];
                if w == 0.0 {
                    continue;
                }
                for d in 0..3 {
                    z[kk][d] += w * (m[i][d] * xi[kk][d] + t[i][d]);
                }
            }
        }
        for kk in 0..k {
            for d in 0..3 {
                z[kk][d] = z[kk][d] / self.wk[kk] - self.barycenter[d];
            }
        }
        let q = helmert(k);
        let dmat = DMatrix::from_diagonal(&DVector::from_vec(self.wk.clone()));
        let a = q.transpose() * &dmat * &q;
        let eig = SymmetricEigen::new(a);
        let lambda = eig.eigenvalues.clone();
        let v = eig.eigenvectors.clone();
        // b^d = Qᵀ D z^d, expressed in the eigenbasis.
        let mut beta = DMatrix::zeros(k - 1, 3);
        for d in 0..3 {
            let zd = DVector::from_iterator(k, (0..k).map(|kk| self.wk[kk] * z[kk][d]));
            let b = v.transpose() * (q.transpose() * zd);
            beta.set_column(d, &b);
        }
        let r2 = k as f64 * self.size;
        let e: Vec<f64> = (0..k - 1).map(|j| beta.row(j).norm_squared()).collect();
        let lmin = lambda.iter().copied().fold(f64::INFINITY, f64::min);
        let shifted: Vec<f64> = lambda.iter().map(|l| l - lmin).collect();
        let f = |s: f64| -> f64 {
            e.iter()
                .zip(&shifted)
                .map(|(ej, lj)| ej / (lj + s).powi(2))
                .sum()
        };
        let etot: f64 = e.iter().sum();
        if !(etot > 0.0) {
            return Err(Error::Degenerate(
                "transformed landmarks collapse to one point".into(),
            ));
        }
        let scale_tol = 1e-14 * lambda.iter().copied().fold(0.0, f64::max);
        let e_min: f64 = e
            .iter()
            .zip(&shifted)
            .filter(|(_, l)| **l <= scale_tol)
            .map(|(ej, _)| ej)
            .sum();
        let mut c = DMatrix::zeros(k - 1, 3);
        let hard_case = e_min <= 1e-300 && {
            let g0: f64 = e
                .iter()
                .zip(&shifted)
                .filter(|(_, l)| **l > scale_tol)
                .map(|(ej, lj)| ej / lj.powi(2))
                .sum();
            g0 <= r2
        };
        if hard_case {
            // The sphere is reached only by adding a component along the
            // bottom eigenspace.
            let mut norm2 = 0.0;
            let mut bottom = None;
            for j in 0..k - 1 {
                if shifted[j] > scale_tol {
                    for d in 0..3 {
                        c[(j, d)] = beta[(j, d)] / shifted[j];
                        norm2 += c[(j, d)].powi(2);
                    }
                } else if bottom.is_none() {
                    bottom = Some(j);
                }
            }
            let j = bottom.expect("minimum eigenvalue exists");
            c[(j, 0)] = (r2 - norm2).max(0.0).sqrt();
        } else {
            let mut lo = (e_min.sqrt() / r2.sqrt()).max(f64::MIN_POSITIVE);
            let mut hi = etot.sqrt() / r2.sqrt();
            if e_min <= 1e-300 {
                lo = f64::MIN_POSITIVE;
            }
            // f is decreasing on s > 0; bisect in log space, then polish.
            for _ in 0..200 {
                let mid = if lo > 0.0 && hi / lo > 4.0 {
                    (lo * hi).sqrt()
                } else {
                    0.5 * (lo + hi)
                };
                if f(mid) > r2 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            let s = 0.5 * (lo + hi);
            for j in 0..k - 1 {
                for d in 0..3 {
                    c[(j, d)] = beta[(j, d)] / (shifted[j] + s);
                }
            }
        }
        let h = &q * (&v * c);
        let mut g = vec![[0.0; 3]; k];
        // Remove rounding drift so both constraints hold to machine precision.
        let mut mean = [0.0; 3];
        for kk in 0..k {
            for d in 0..3 {
                mean[d] += h[(kk, d)] / k as f64;
            }
        }
        let mut norm2 = 0.0;
        for kk in 0..k {
            for d in 0..3 {
                norm2 += (h[(kk, d)] - mean[d]).powi(2);
            }
        }
        let rescale = (r2 / norm2).sqrt();
        for kk in 0..k {
            for d in 0..3 {
                g[kk][d] = self.barycenter[d] + (h[(kk, d)] - mean[d]) * rescale;
            }
        }
        Ok(g)
    }
}

/// Orthonormal basis of `{h ∈ R^k : Σ h = 0}` as the columns of a Helmert matrix.
fn helmert(k: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(k, k - 1);
    for j in 1..k {
        let norm = ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            q[(i, j - 1)] = 1.0 / norm;
        }
        q[(j, j - 1)] = -(j as f64) / norm;
    }
    q
}

/// Barycenter and mean squared spread of a configuration.
pub fn barycenter_and_size(g: &[[f64; 3]]) -> ([f64; 3], f64) {
    let k = g.len() as f64;
    let mut b = [0.0; 3];
    for p in g {
        for d in 0..3 {
            b[d] += p[d] / k;
        }
    }
    let s = g
        .iter()
        .map(|p| (0..3).map(|d| (p[d] - b[d]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / k;
    (b, s)
}

/// Solves with explicit weights `w[i][k]`.
pub fn procrustes_solve_weighted(
    configs: &[LandmarkConfig],
    w: &[Vec<f64>],
    opts: &ProcrustesOptions,
) -> Result<ProcrustesSolution> {
    let n = configs.len();
    if n < 2 {
        return Err(Error::Validation(
            "Procrustes needs at least two samples".into(),
        ));
    }
    if w.len() != n {
        return Err(Error::Validation(
            "one weight row per sample is required".into(),
        ));
    }
    let k = configs[0].points.len();
    if k < 2 {
        return Err(Error::Validation(
            "Procrustes needs at least two landmarks".into(),
        ));
    }
    for (c, wi) in configs.iter().zip(w) {
        if c.points.len() != k || c.present.len() != k || wi.len() != k {
            return Err(Error::Validation(format!(
                "sample {} has the wrong landmark count",
                c.sample_id
            )));
        }
        for kk in 0..k {
            if !(wi[kk] >= 0.0 && wi[kk].is_finite()) {
                return Err(Error::Validation(format!(
                    "invalid weight for sample {}",
                    c.sample_id
                )));
            }
            if wi[kk] != 0.0 && c.points[kk].iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!(
                    "non-finite landmark in {}",
                    c.sample_id
                )));
            }
        }
    }
    let mut wk = vec![0.0; k];
    for wi in w {
        for kk in 0..k {
            if wi[kk] != 0.0 {
                wk[kk] += wi[kk];
            }
        }
    }
    if let Some(kk) = wk.iter().position(|&s| s <= 0.0) {
        return Err(Error::Validation(format!(
            "landmark {kk} has zero total weight"
        )));
    }
    // Targets from the weighted per-landmark means of the raw data.
    let mut means = vec![[0.0; 3]; k];
    for (c, wi) in configs.iter().zip(w) {
        for kk in 0..k {
            if wi[kk] != 0.0 {
                for d in 0..3 {
                    means[kk][d] += wi[kk] * c.points[kk][d];
                }
            }
        }
    }
    for kk in 0..k {
        for d in 0..3 {
            means[kk][d] /= wk[kk];
        }
    }
    let (barycenter, size) = barycenter_and_size(&means);
    if !(size > 0.0) {
        return Err(Error::Degenerate("all landmarks coincide".into()));
    }
    let pb = Problem {
        x: configs.iter().map(|c| c.points.as_slice()).collect(),
        w,
        k,
        wk,
        barycenter,
        size,
    };

    // M_i = I and t_i moving each weighted barycenter onto the pooled one.
    let mut m = vec![[1.0; 3]; n];
    let mut t = vec![[0.0; 3]; n];
    let mut pooled = [0.0; 3];
    let mut pooled_w = 0.0;
    let mut own = vec![None; n];
    for (i, c) in configs.iter().enumerate() {
        let mut b = [0.0; 3];
        let mut sw = 0.0;
        for kk in 0..k {
            if w[i][kk] != 0.0 {
                sw += w[i][kk];
                for d in 0..3 {
                    b[d] += w[i][kk] * c.points[kk][d];
                    pooled[d] += w[i][kk] * c.points[kk][d];
                }
            }
        }
        pooled_w += sw;
        if sw > 0.0 {
            own[i] = Some(b.map(|v| v / sw));
        }
    }
    let pooled = pooled.map(|v| v / pooled_w);
    for i in 0..n {
        if let Some(b) = own[i] {
            for d in 0..3 {
                t[i][d] = pooled[d] - b[d];
            }
        }
    }

    let mut g = pb.consensus_step(&m, &t)?;
    let mut f = pb.objective(&m, &t, &g);
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    let slack = |prev: f64| 1e-12 * prev.max(1e-300) + 1e-18;
    for it in 1..=opts.max_iter {
        iterations = it;
        let prev = f;
        pb.transform_step(&mut m, &mut t, &g);
        let f1 = pb.objective(&m, &t, &g);
        trace.push(f1);
        g = pb.consensus_step(&m, &t)?;
        f = pb.objective(&m, &t, &g);
        trace.push(f);
        if f1 > prev + slack(prev) || f > f1 + slack(f1) {
            return Err(Error::Divergence(format!(
                "Procrustes objective increased at iteration {it}: {prev} -> {f1} -> {f}"
            )));
        }
        if prev <= 0.0 || (prev - f) / prev < opts.rel_tol {
            converged = true;
            break;
        }
    }
    let transforms = configs
        .iter()
        .zip(m.iter().zip(&t))
        .map(|(c, (mi, ti))| SampleTransform {
            sample_id: c.sample_id.clone(),
            scale: *mi,
            translation: *ti,
        })
        .collect();
    Ok(ProcrustesSolution {
        transforms,
        consensus: g,
        objective: f,
        iterations,
        converged,
        trace,
    })
}
