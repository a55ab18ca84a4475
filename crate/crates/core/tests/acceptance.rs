//! Acceptance criteria, one line of output per criterion.
//!
//! Runs with its own `main` so every criterion reports even when an earlier
//! one fails. The process exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use veritas::atlas::{procrustes_solve_weighted, LandmarkConfig, ProcrustesOptions};
use veritas::contracts::{
    anatomical_bpa, anatomical_mass, apply_anatomical, build_anatomical, fit_gmm2_with,
    intensity_bpa, EmOptions, Gmm2, PhiKind,
};
use veritas::dempster::{combine, combine_many, combine_prob, Bpa, ClassProbability};
use veritas::dro::toy::minority_experiment;
use veritas::dro::{hardness_probs, percentile_bound, robust_loss};
use veritas::fallback::{fuse_with_distances, high_freq_disp_norm, local_ssd};
use veritas::fusion::{failsafe_map, trustworthy_fuse, FusionConfig, GmmSource};
use veritas::io::write_volume;
use veritas::labelset::{
    axiom_check, leaf_dice, marginal_dice, mean_class_dice, psi0, random_prediction,
    soft_target_dice, PartialAnnotation, SoftPrediction,
};
use veritas::metrics::{hd95, hd95_fn, tune_margin};
use veritas::{GridMeta, LabelSpace, MaskVolume, ProbabilityVolume, ScalarVolume, SubsetMask, VectorVolume};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Dense Dempster oracle over all 2^K subsets.

fn dense_conjunctive(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for (s1, &m1) in a.iter().enumerate() {
        if m1 == 0.0 {
            continue;
        }
        for (s2, &m2) in b.iter().enumerate() {
            out[s1 & s2] += m1 * m2;
        }
    }
    out
}

fn dense_normalize(mut m: Vec<f64>) -> Option<Vec<f64>> {
    let agree: f64 = m[1..].iter().sum();
    if agree <= 1e-9 {
        return None;
    }
    m[0] = 0.0;
    m.iter_mut().for_each(|v| *v /= agree);
    Some(m)
}

fn dense_of(b: &Bpa, k: usize) -> Vec<f64> {
    let mut d = vec![0.0; 1 << k];
    for (s, m) in b.focal() {
        d[s.bits() as usize] += m;
    }
    d
}

fn random_bpa(rng: &mut ChaCha8Rng, space: &LabelSpace, k: usize) -> Bpa {
    let subsets = (1usize << k) - 1;
    let nfocal = rng.random_range(1..=subsets.min(6));
    let mut masses: Vec<(SubsetMask, f64)> = (0..nfocal)
        .map(|_| {
            let s = SubsetMask::from_bits(rng.random_range(1..=subsets) as u32);
            (s, -rng.random::<f64>().max(1e-12).ln())
        })
        .collect();
    let total: f64 = masses.iter().map(|(_, m)| m).sum();
    masses.iter_mut().for_each(|(_, m)| *m /= total);
    Bpa::new(space.clone(), masses).expect("valid random BPA")
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_err = 0.0f64;
    let mut compared = 0usize;
    for k in 2..=4usize {
        let space = LabelSpace::indexed(k).unwrap();
        for trial in 0..2000 {
            let n = if trial < 1000 { 2 } else { 3 };
            let ms: Vec<Bpa> = (0..n).map(|_| random_bpa(&mut rng, &space, k)).collect();
            let dense = ms
                .iter()
                .skip(1)
                .fold(dense_of(&ms[0], k), |acc, m| dense_conjunctive(&acc, &dense_of(m, k)));
            let oracle = dense_normalize(dense);
            let fast = if n == 2 { combine(&ms[0], &ms[1]) } else { combine_many(&space, ms.iter()) };
            match (oracle, fast) {
                (Some(o), Ok(f)) => {
                    let fd = dense_of(&f, k);
                    for s in 0..(1 << k) {
                        max_err = max_err.max((fd[s] - o[s]).abs());
                    }
                    compared += 1;
                }
                (None, Err(_)) => {}
                (None, Ok(_)) => {}
                (Some(_), Err(e)) => return Err(format!("combine failed on a combinable input: {e}")),
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(max_err < 1e-10, || format!("max abs error {max_err:e}"))?;
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("{compared} combinations, max abs error {max_err:.1e}, {secs:.2} s"))
}

fn criterion_2() -> Check {
    let space = LabelSpace::new(["a", "b", "c"]).unwrap();
    let (a, b, c) = (SubsetMask::singleton(0), SubsetMask::singleton(1), SubsetMask::singleton(2));
    for eps in [0.1, 0.01, 1e-6] {
        let m1 = Bpa::new(space.clone(), [(a, 1.0 - eps), (b, eps)]).unwrap();
        let m2 = Bpa::new(space.clone(), [(c, 1.0 - eps), (b, eps)]).unwrap();
        let m = combine(&m1, &m2).map_err(|e| e.to_string())?;
        ensure(m.mass(b) == 1.0, || format!("eps {eps}: m({{b}}) = {}", m.mass(b)))?;
    }
    Ok("m({b}) = 1 exactly for eps in {0.1, 0.01, 1e-6}".into())
}

fn random_weight(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..5) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random(),
    }
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut mass_err, mut apply_err, mut bpa_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut done = 0;
    while done < 1000 {
        let k = rng.random_range(2..=4usize);
        let full = (1usize << k) - 1;
        let space = LabelSpace::indexed(k).unwrap();
        let w: Vec<f64> = (0..k).map(|_| random_weight(&mut rng)).collect();
        // Class contract c: w_c on the whole set, 1 - w_c on everything but c.
        let mut fold = vec![0.0; 1 << k];
        fold[full] = 1.0;
        for (c, &wc) in w.iter().enumerate() {
            let mut mc = vec![0.0; 1 << k];
            mc[full] += wc;
            mc[full & !(1 << c)] += 1.0 - wc;
            fold = dense_conjunctive(&fold, &mc);
        }
        for cp in 0..=full {
            let got = anatomical_mass(&w, SubsetMask::from_bits(cp as u32));
            mass_err = mass_err.max((got - fold[full & !cp]).abs());
        }
        let pr = random_prediction(&mut rng, 1, k);
        let p = ClassProbability::new(space.clone(), pr.values().to_vec()).unwrap();
        let pw: f64 = p.values().iter().zip(&w).map(|(a, b)| a * b).sum();
        if pw <= 1e-12 || w.iter().all(|&v| v == 0.0) {
            continue;
        }
        let normalized = dense_normalize(fold.clone()).expect("some weight is positive");
        let lib_bpa = anatomical_bpa(&space, &w).map_err(|e| e.to_string())?;
        let ld = dense_of(&lib_bpa, k);
        for s in 0..=full {
            bpa_err = bpa_err.max((ld[s] - normalized[s]).abs());
        }
        let mut bayes = vec![0.0; 1 << k];
        for c in 0..k {
            bayes[1 << c] = p.values()[c];
        }
        let combined = dense_normalize(dense_conjunctive(&bayes, &normalized)).expect("pw > 0");
        let fast = apply_anatomical(&p, &w).map_err(|e| e.to_string())?;
        for c in 0..k {
            apply_err = apply_err.max((fast.values()[c] - combined[1 << c]).abs());
        }
        done += 1;
    }
    let worst = mass_err.max(apply_err).max(bpa_err);
    ensure(worst < 1e-10, || {
        format!("mass {mass_err:e}, bpa {bpa_err:e}, apply {apply_err:e}")
    })?;
    Ok(format!("{done} instances, max error {worst:.1e}"))
}

// ---------------------------------------------------------------------------

struct Phantom {
    p_ai: ProbabilityVolume,
    p_fb: ProbabilityVolume,
    image: ScalarVolume,
    region: MaskVolume,
}

fn phantom() -> Phantom {
    let meta = GridMeta::cube([16, 16, 16]).unwrap();
    let label = |x: usize| match x {
        0..=3 => 0,
        4..=11 => 1,
        _ => 2,
    };
    let region = MaskVolume::from_fn(meta, |[x, y, z]| (5..=7).contains(&x) && (4..12).contains(&y) && (4..12).contains(&z));
    let mut fb = Vec::new();
    let mut ai = Vec::new();
    for i in 0..meta.len() {
        let c = meta.coords(i);
        let l = label(c[0]);
        fb.extend((0..3).map(|k| if k == l { 0.8 } else { 0.1 }));
        let a = if region.data()[i] { 2 } else { l };
        ai.extend((0..3).map(|k| if k == a { 1.0 } else { 0.0 }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 10.0).unwrap();
    let image = ScalarVolume::from_fn(meta, |[x, _, _]| [50.0, 300.0, 120.0][label(x)] + noise.sample(&mut rng)).unwrap();
    Phantom {
        p_ai: ProbabilityVolume::new(meta, 3, ai).unwrap(),
        p_fb: ProbabilityVolume::new(meta, 3, fb).unwrap(),
        image,
        region,
    }
}

fn phantom_gmm() -> Gmm2 {
    Gmm2 {
        mu_low: 80.0,
        sigma_low: 40.0,
        mu_high: 300.0,
        sigma_high: 20.0,
        pi_low: 0.7,
        pi_high: 0.3,
    }
}

fn criterion_4() -> Check {
    let ph = phantom();
    let space = LabelSpace::indexed(3).unwrap();
    let masks: Vec<MaskVolume> = (0..3).map(|c| ph.p_fb.argmax_mask(c)).collect();
    let aw = build_anatomical(&masks, &[2.0; 3], PhiKind::Hard).map_err(|e| e.to_string())?;
    let c_high = SubsetMask::singleton(1);
    let gmm = phantom_gmm();
    let mut max_diff = 0.0f64;
    for eps in [1e-1, 1e-3, 1e-6] {
        let cfg = FusionConfig::new(eps, c_high, GmmSource::Fixed(gmm)).unwrap();
        let out = trustworthy_fuse(&ph.p_ai, &ph.p_fb, &aw, &ph.image, &cfg).map_err(|e| e.to_string())?;
        for i in (0..ph.region.meta().len()).filter(|&i| ph.region.data()[i]) {
            let fb = ClassProbability::new(space.clone(), ph.p_fb.voxel(i).to_vec()).unwrap();
            let anat = anatomical_bpa(&space, aw.at(i)).unwrap();
            let step = combine_prob(&fb, &anat).map_err(|e| e.to_string())?;
            let inten = intensity_bpa(&space, ph.image.data()[i], &gmm, c_high).unwrap();
            let want = combine_prob(&step, &inten).map_err(|e| e.to_string())?;
            for c in 0..3 {
                max_diff = max_diff.max((out.voxel(i)[c] - want.values()[c]).abs());
            }
        }
    }
    let conflict = failsafe_map(&ph.p_ai, &aw).map_err(|e| e.to_string())?;
    let mut conflict_err = 0.0f64;
    for (i, &v) in conflict.data().iter().enumerate() {
        let want = if ph.region.data()[i] { 1.0 } else { 0.0 };
        conflict_err = conflict_err.max((v - want).abs());
    }
    ensure(max_diff < 1e-9, || format!("region output differs from fallback+contracts by {max_diff:e}"))?;
    ensure(conflict_err < 1e-12, || format!("conflict map off by {conflict_err:e}"))?;
    Ok(format!(
        "{} region voxels, max diff {max_diff:.1e}, conflict exact",
        ph.region.count()
    ))
}

fn criterion_5() -> Check {
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for alpha in [1, 2] {
        let leaf = axiom_check(|p, g| leaf_dice(p, g, alpha, eps), 1000, 50 + alpha as u64).map_err(|e| e.to_string())?;
        let marg = axiom_check(|p, g| marginal_dice(p, g, alpha, eps), 1000, 60 + alpha as u64).map_err(|e| e.to_string())?;
        worst = worst.max(leaf.max_violation()).max(marg.max_violation());
    }
    let soft = axiom_check(|p, g| soft_target_dice(p, g, 2, eps), 1000, 70).map_err(|e| e.to_string())?;
    ensure(worst < 1e-9, || format!("label-set loss violation {worst:e}"))?;
    ensure(soft.max_violation() > 1e-6, || format!("soft-target violation only {:e}", soft.max_violation()))?;
    Ok(format!(
        "leaf/marginal max violation {worst:.1e}, soft-target {:.2e}",
        soft.max_violation()
    ))
}

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let eps = 1e-5;
    let mut collapse_err = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(2..6);
        let n = rng.random_range(5..60);
        let p = random_prediction(&mut rng, n, k);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let g = PartialAnnotation::from_labels(k, &labels).unwrap();
        for alpha in [1, 2] {
            let a = leaf_dice(&p, &g, alpha, eps).map_err(|e| e.to_string())?;
            let b = mean_class_dice(&p, &psi0(&g), alpha, eps).map_err(|e| e.to_string())?;
            collapse_err = collapse_err.max((a - b).abs());
        }
    }
    let (k, n) = (4, 20);
    let p = random_prediction(&mut rng, n, k);
    let g = PartialAnnotation::new(k, vec![SubsetMask::from_classes([0, 1]); n]).unwrap();
    let h = 1e-5;
    let mut worst_grad = 0.0f64;
    let mut worst_value = 0.0f64;
    for alpha in [1, 2] {
        let loss = |v: Vec<f64>| leaf_dice(&SoftPrediction::from_raw(k, v), &g, alpha, eps).unwrap();
        worst_value = worst_value.max((loss(p.values().to_vec()) - 1.0).abs());
        for j in 0..n * k {
            let mut up = p.values().to_vec();
            let mut dn = p.values().to_vec();
            up[j] += h;
            dn[j] -= h;
            worst_grad = worst_grad.max(((loss(up) - loss(dn)) / (2.0 * h)).abs());
        }
    }
    ensure(collapse_err < 1e-12, || format!("collapse error {collapse_err:e}"))?;
    ensure(worst_value == 0.0, || format!("loss differs from 1 by {worst_value:e}"))?;
    ensure(worst_grad < 1e-8, || format!("finite-difference gradient {worst_grad:e}"))?;
    Ok(format!("collapse error {collapse_err:.1e}, loss = 1, max |grad| {worst_grad:.1e}"))
}

/// Closed form for the marginal Dice when the annotations take values in a
/// partition `P` of the classes, first-power denominators and smoothing `eps`.
fn partition_formula(p: &SoftPrediction, g: &PartialAnnotation, blocks: &[SubsetMask], eps: f64) -> f64 {
    let k = p.classes();
    let mut total = 0.0;
    for &b in blocks {
        let (mut a, mut n_b, mut s) = (0.0, 0.0, 0.0);
        for (i, &gi) in g.sets().iter().enumerate() {
            let sij: f64 = b.iter().map(|c| p.row(i)[c]).sum();
            s += sij;
            if gi == b {
                n_b += 1.0;
                a += sij;
            }
        }
        total += 2.0 * a / (n_b + s + b.len() as f64 * eps);
    }
    1.0 - total / k as f64
}

fn random_partition(rng: &mut ChaCha8Rng, k: usize) -> Vec<SubsetMask> {
    loop {
        let ids: Vec<usize> = (0..k).map(|_| rng.random_range(0..k)).collect();
        let mut blocks: Vec<SubsetMask> = Vec::new();
        for id in 0..k {
            let b = SubsetMask::from_classes((0..k).filter(|&c| ids[c] == id));
            if !b.is_empty() {
                blocks.push(b);
            }
        }
        if blocks.iter().any(|b| !b.is_singleton()) && blocks.len() > 1 {
            return blocks;
        }
    }
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eps = 1e-5;
    let mut max_err = 0.0f64;
    let mut failing = 0;
    for _ in 0..100 {
        let k = rng.random_range(3..7);
        let n = rng.random_range(10..50);
        let blocks = random_partition(&mut rng, k);
        let sets: Vec<SubsetMask> = (0..n).map(|_| blocks[rng.random_range(0..blocks.len())]).collect();
        let g = PartialAnnotation::new(k, sets).unwrap();
        let p = random_prediction(&mut rng, n, k);
        let got = marginal_dice(&p, &g, 1, eps).map_err(|e| e.to_string())?;
        let err = (got - partition_formula(&p, &g, &blocks, eps)).abs();
        if err >= 1e-12 {
            failing += 1;
        }
        max_err = max_err.max(err);
    }
    ensure(max_err < 1e-12, || {
        format!("{failing}/100 instances exceed 1e-12, max abs difference {max_err:.3e}")
    })?;
    Ok(format!("max abs difference {max_err:.1e}"))
}

// ---------------------------------------------------------------------------

fn dro_objective(l: &[f64], q: &[f64], beta: f64) -> f64 {
    let n = l.len() as f64;
    let lin: f64 = l.iter().zip(q).map(|(a, b)| a * b).sum();
    let kl: f64 = q.iter().filter(|&&v| v > 0.0).map(|&v| v * (n * v).ln()).sum();
    lin - kl / beta
}

fn grid_oracle(l: &[f64], beta: f64) -> f64 {
    match l.len() {
        2 => (0..=100_000)
            .map(|i| {
                let t = i as f64 * 1e-5;
                dro_objective(l, &[t, 1.0 - t], beta)
            })
            .fold(f64::NEG_INFINITY, f64::max),
        3 => {
            let m = 1000;
            let mut best = f64::NEG_INFINITY;
            for i in 0..=m {
                for j in 0..=(m - i) {
                    let (a, b) = (i as f64 / m as f64, j as f64 / m as f64);
                    best = best.max(dro_objective(l, &[a, b, (1.0 - a - b).max(0.0)], beta));
                }
            }
            best
        }
        _ => unreachable!(),
    }
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut grid_err = 0.0f64;
    let mut cases = vec![(vec![0.2, 0.9], 1.0)];
    for _ in 0..60 {
        cases.push(((0..2).map(|_| rng.random::<f64>()).collect(), rng.random_range(0.5..3.0)));
    }
    for _ in 0..10 {
        cases.push(((0..3).map(|_| rng.random::<f64>()).collect(), rng.random_range(0.5..3.0)));
    }
    for (l, beta) in &cases {
        let r = robust_loss(l, *beta).map_err(|e| e.to_string())?;
        grid_err = grid_err.max((r - grid_oracle(l, *beta)).abs());
    }
    let mut limit_err = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..20);
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mean = l.iter().sum::<f64>() / n as f64;
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = l.iter().copied().fold(f64::INFINITY, f64::min);
        let range = (max - min).max(1e-12);
        let lo = (robust_loss(&l, 1e-6).unwrap() - mean).abs() / range;
        let hi = (robust_loss(&l, 1e6).unwrap() - max).abs() / range;
        limit_err = limit_err.max(lo).max(hi);
    }
    let (mut shift_err, mut sum_err, mut mono_fail) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..1000 {
        let n = rng.random_range(2..50);
        let beta = rng.random_range(0.1..10.0);
        let l: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let p = hardness_probs(&l, beta).unwrap();
        sum_err = sum_err.max((p.iter().sum::<f64>() - 1.0).abs());
        let c = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
        let ps = hardness_probs(&shifted, beta).unwrap();
        shift_err = shift_err.max(p.iter().zip(&ps).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let i = rng.random_range(0..n);
        let mut bumped = l.clone();
        bumped[i] += rng.random_range(0.01..1.0);
        let pb = hardness_probs(&bumped, beta).unwrap();
        let ok = (0..n).all(|j| if j == i { pb[j] > p[j] } else { pb[j] < p[j] });
        mono_fail += (!ok) as usize;
    }
    ensure(grid_err < 1e-4, || format!("grid oracle error {grid_err:e}"))?;
    ensure(limit_err < 1e-3, || format!("beta limits off by {limit_err:e} of the range"))?;
    ensure(sum_err < 1e-12 && shift_err < 1e-12, || format!("sum {sum_err:e}, shift {shift_err:e}"))?;
    ensure(mono_fail == 0, || format!("{mono_fail} monotonicity failures"))?;
    Ok(format!(
        "grid error {grid_err:.1e} over {} vectors, shift {shift_err:.1e}, monotone on 1000",
        cases.len()
    ))
}

fn criterion_9() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = 0;
    for _ in 0..1000 {
        let l: Vec<f64> = (0..100).map(|_| -rng.random::<f64>().max(1e-300).ln() * 2.0).collect();
        let beta = 10f64.powf(rng.random_range(-1.0..2.0));
        let alpha = rng.random_range(0.01..0.99);
        let b = percentile_bound(&l, beta, alpha).map_err(|e| e.to_string())?;
        let count = l.iter().filter(|&&v| v >= b).count();
        if count as f64 > alpha * 100.0 {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok("0 violations over 1000 vectors".into())
}

fn criterion_10() -> Check {
    let start = Instant::now();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..10 {
        let o = minority_experiment(seed).map_err(|e| e.to_string())?;
        if o.dro_minority_accuracy > o.erm_minority_accuracy {
            wins += 1;
        }
        lines.push(format!(
            "{seed}:{:.3}/{:.3}(b={})",
            o.erm_minority_accuracy, o.dro_minority_accuracy, o.beta
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(wins >= 8, || format!("DRO won {wins}/10 [{}]", lines.join(" ")))?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("DRO won {wins}/10 in {secs:.1} s, erm/dro per seed [{}]", lines.join(" ")))
}

fn random_configs(rng: &mut ChaCha8Rng, samples: usize, k: usize, missing: f64) -> Vec<LandmarkConfig> {
    let pts: Vec<[f64; 3]> = (0..k).map(|_| [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)]).collect();
    loop {
        let configs: Vec<LandmarkConfig> = (0..samples)
            .map(|i| {
                let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.8..1.25));
                let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
                LandmarkConfig {
                    sample_id: format!("s{i}"),
                    ga_days: 200.0,
                    points: pts.iter().map(|p| std::array::from_fn(|d| s[d] * p[d] + t[d])).collect(),
                    present: (0..k).map(|_| !rng.random_bool(missing)).collect(),
                }
            })
            .collect();
        let per_sample_ok = configs.iter().all(|c| c.present.iter().filter(|&&p| p).count() >= 3);
        let per_landmark_ok = (0..k).all(|j| configs.iter().filter(|c| c.present[j]).count() >= 2);
        if per_sample_ok && per_landmark_ok {
            return configs;
        }
    }
}

fn weights_of(configs: &[LandmarkConfig]) -> Vec<Vec<f64>> {
    configs
        .iter()
        .map(|c| c.present.iter().map(|&p| p as u8 as f64).collect())
        .collect()
}

fn criterion_11() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = ProcrustesOptions::default();
    let mut worst_rise = 0.0f64;
    for _ in 0..100 {
        let samples = rng.random_range(3..8);
        let k = rng.random_range(4..12);
        let mut configs = random_configs(&mut rng, samples, k, 0.2);
        for c in &mut configs {
            for p in &mut c.points {
                for v in p.iter_mut() {
                    *v += rng.random_range(-5.0..5.0);
                }
            }
        }
        let w: Vec<Vec<f64>> = configs
            .iter()
            .map(|c| c.present.iter().map(|&p| if p { rng.random_range(0.1..2.0) } else { 0.0 }).collect())
            .collect();
        let sol = procrustes_solve_weighted(&configs, &w, &opts).map_err(|e| e.to_string())?;
        for pair in sol.trace.windows(2) {
            worst_rise = worst_rise.max((pair[1] - pair[0]) / pair[0].abs().max(f64::MIN_POSITIVE));
        }
    }
    let mut worst_obj = 0.0f64;
    let mut worst_iter = 0;
    for _ in 0..20 {
        let configs = random_configs(&mut rng, 6, 10, 0.2);
        let sol = procrustes_solve_weighted(&configs, &weights_of(&configs), &opts).map_err(|e| e.to_string())?;
        worst_obj = worst_obj.max(sol.objective);
        worst_iter = worst_iter.max(sol.iterations);
    }
    ensure(worst_rise <= 1e-12, || format!("objective rose by a relative {worst_rise:e}"))?;
    ensure(worst_obj < 1e-8 && worst_iter <= 500, || {
        format!("noiseless objective {worst_obj:e} after {worst_iter} iterations")
    })?;
    Ok(format!(
        "max relative rise {worst_rise:.1e}; noiseless objective {worst_obj:.1e} within {worst_iter} iterations"
    ))
}

// ---------------------------------------------------------------------------

fn reflect(i: isize, n: usize) -> usize {
    // Mirror with the edge repeated, folded until in range.
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn cox_de_boor(n: usize, x: f64) -> f64 {
    if n == 0 {
        return if (-0.5..0.5).contains(&x) { 1.0 } else { 0.0 };
    }
    let h = (n as f64 + 1.0) / 2.0;
    ((x + h) * cox_de_boor(n - 1, x + 0.5) + (h - x) * cox_de_boor(n - 1, x - 0.5)) / n as f64
}

fn naive_filter(meta: &GridMeta, data: &[f64], kernels: [&[f64]; 3]) -> Vec<f64> {
    let [nx, ny, nz] = meta.dims;
    let r: [isize; 3] = std::array::from_fn(|a| (kernels[a].len() / 2) as isize);
    let mut out = vec![0.0; data.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = 0.0;
                for (a, &ka) in kernels[0].iter().enumerate() {
                    let xx = reflect(x as isize + a as isize - r[0], nx);
                    for (b, &kb) in kernels[1].iter().enumerate() {
                        let yy = reflect(y as isize + b as isize - r[1], ny);
                        for (c, &kc) in kernels[2].iter().enumerate() {
                            let zz = reflect(z as isize + c as isize - r[2], nz);
                            acc += ka * kb * kc * data[meta.index(xx, yy, zz)];
                        }
                    }
                }
                out[meta.index(x, y, z)] = acc;
            }
        }
    }
    out
}

/// Direct 1-D sums along each axis in turn, for kernels too wide for the
/// triple loop.
fn naive_filter_axes(meta: &GridMeta, data: &[f64], kernels: [&[f64]; 3]) -> Vec<f64> {
    let mut cur = data.to_vec();
    for axis in 0..3 {
        let n = meta.dims[axis];
        let r = (kernels[axis].len() / 2) as isize;
        let mut next = vec![0.0; cur.len()];
        for (i, o) in next.iter_mut().enumerate() {
            let c = meta.coords(i);
            let mut acc = 0.0;
            for (j, &kj) in kernels[axis].iter().enumerate() {
                let mut src = c;
                src[axis] = reflect(c[axis] as isize + j as isize - r, n);
                acc += kj * cur[meta.index(src[0], src[1], src[2])];
            }
            *o = acc;
        }
        cur = next;
    }
    cur
}

fn normalized_kernel(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn criterion_12() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Equal distances reduce heat-kernel fusion to the arithmetic mean.
    let meta = GridMeta::cube([6, 5, 4]).unwrap();
    let probs: Vec<ProbabilityVolume> = (0..4)
        .map(|_| {
            let p = random_prediction(&mut rng, meta.len(), 3);
            ProbabilityVolume::new(meta, 3, p.values().to_vec()).unwrap()
        })
        .collect();
    let d = ScalarVolume::from_fn(meta, |[x, y, z]| (x + 2 * y + 3 * z) as f64 * 0.1).unwrap();
    let refs: Vec<&ProbabilityVolume> = probs.iter().collect();
    let fused = fuse_with_distances(&refs, &vec![d; 4]).map_err(|e| e.to_string())?;
    let mut mean_err = 0.0f64;
    for (j, &v) in fused.data().iter().enumerate() {
        let m = probs.iter().map(|p| p.data()[j]).sum::<f64>() / 4.0;
        mean_err = mean_err.max((v - m).abs());
    }
    // Kernels against naive triple-loop filtering on a 16^3 grid.
    let meta = GridMeta::new([16, 16, 16], [1.0, 1.5, 2.0]).unwrap();
    let subject = ScalarVolume::from_fn(meta, |_| rng.random_range(0.0..100.0)).unwrap();
    let atlas = ScalarVolume::from_fn(meta, |_| rng.random_range(0.0..100.0)).unwrap();
    let z = |v: &ScalarVolume| {
        let n = v.data().len() as f64;
        let m = v.data().iter().sum::<f64>() / n;
        let sd = (v.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        v.data().iter().map(|x| (x - m) / sd).collect::<Vec<f64>>()
    };
    let (za, zb) = (z(&subject), z(&atlas));
    let sq: Vec<f64> = za.iter().zip(&zb).map(|(a, b)| (a - b).powi(2)).collect();
    let mut kernel_err = 0.0f64;
    for order in [1usize, 2, 3] {
        let r = order.div_ceil(2) as isize;
        let k = normalized_kernel((-r..=r).map(|i| cox_de_boor(order, i as f64)).collect());
        let want = naive_filter(&meta, &sq, [&k, &k, &k]);
        let got = local_ssd(&subject, &atlas, None, order).map_err(|e| e.to_string())?;
        for (a, b) in got.data().iter().zip(&want) {
            kernel_err = kernel_err.max((a - b).abs());
        }
    }
    let disp = VectorVolume::new(
        meta,
        (0..meta.len()).map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0))).collect(),
    )
    .unwrap();
    for sigma_mm in [1.5, 20.0] {
        let ks: Vec<Vec<f64>> = (0..3)
            .map(|a| {
                let s = sigma_mm / meta.spacing[a];
                let r = (4.0 * s).ceil() as isize;
                normalized_kernel((-r..=r).map(|i| (-(i as f64).powi(2) / (2.0 * s * s)).exp()).collect())
            })
            .collect();
        let mut want = vec![0.0; meta.len()];
        for comp in 0..3 {
            let c: Vec<f64> = disp.data().iter().map(|v| v[comp]).collect();
            let kr = [&ks[0][..], &ks[1][..], &ks[2][..]];
            let low = if sigma_mm < 5.0 { naive_filter(&meta, &c, kr) } else { naive_filter_axes(&meta, &c, kr) };
            for ((w, x), l) in want.iter_mut().zip(&c).zip(&low) {
                *w += (x - l).powi(2);
            }
        }
        let got = high_freq_disp_norm(&disp, sigma_mm).map_err(|e| e.to_string())?;
        for (a, b) in got.data().iter().zip(&want) {
            kernel_err = kernel_err.max((a - b.sqrt()).abs());
        }
    }
    ensure(mean_err < 1e-12, || format!("equal-distance fusion off the mean by {mean_err:e}"))?;
    ensure(kernel_err < 1e-8, || format!("kernel error {kernel_err:e}"))?;
    Ok(format!("mean error {mean_err:.1e}, kernel error {kernel_err:.1e}"))
}

fn brute_surface(m: &MaskVolume) -> Vec<[usize; 3]> {
    let meta = m.meta();
    let [nx, ny, nz] = meta.dims;
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !m.get(x, y, z) {
                    continue;
                }
                let edge = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                let bg = edge
                    || !m.get(x - 1, y, z)
                    || !m.get(x + 1, y, z)
                    || !m.get(x, y - 1, z)
                    || !m.get(x, y + 1, z)
                    || !m.get(x, y, z - 1)
                    || !m.get(x, y, z + 1);
                if bg {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

fn sorted_percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * q / 100.0;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn brute_directed(a: &[[usize; 3]], b: &[[usize; 3]], sp: [f64; 3]) -> Vec<f64> {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    (0..3)
                        .map(|d| {
                            let diff = (p[d] as f64 - q[d] as f64) * sp[d];
                            diff * diff
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

fn brute_hd95(a: &MaskVolume, b: &MaskVolume) -> f64 {
    let sp = a.meta().spacing;
    let (sa, sb) = (brute_surface(a), brute_surface(b));
    sorted_percentile(brute_directed(&sa, &sb, sp), 95.0).max(sorted_percentile(brute_directed(&sb, &sa, sp), 95.0))
}

fn random_blob(rng: &mut ChaCha8Rng, meta: GridMeta) -> MaskVolume {
    let [nx, ny, nz] = meta.dims;
    let c = [rng.random_range(0..nx) as f64, rng.random_range(0..ny) as f64, rng.random_range(0..nz) as f64];
    let r: [f64; 3] = std::array::from_fn(|_| rng.random_range(1.0..5.0));
    let mut m = MaskVolume::from_fn(meta, |p| {
        (0..3).map(|d| ((p[d] as f64 - c[d]) / r[d]).powi(2)).sum::<f64>() <= 1.0 || rng.random_bool(0.02)
    });
    m.set(c[0] as usize, c[1] as usize, c[2] as usize, true);
    m
}

fn criterion_13() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let spacings = [[1.0, 1.0, 1.0], [0.5, 1.0, 2.0], [1.25, 0.75, 1.5]];
    let mut mismatches = 0;
    let mut pairs = Vec::new();
    for t in 0..60 {
        let dims = [rng.random_range(3..=12), rng.random_range(3..=12), rng.random_range(3..=12)];
        let meta = GridMeta::new(dims, spacings[t % 3]).unwrap();
        let a = random_blob(&mut rng, meta);
        let b = random_blob(&mut rng, meta);
        let h = hd95(&a, &b).map_err(|e| e.to_string())?;
        let hf = hd95_fn(&a, &b).map_err(|e| e.to_string())?;
        if h != brute_hd95(&a, &b) {
            mismatches += 1;
        }
        if hf != brute_hd95(&a, &a.union(&b).unwrap()) {
            mismatches += 1;
        }
        pairs.push((a, b));
    }
    let mut tune_mismatch = 0;
    for chunk in pairs.chunks(7) {
        let vals: Vec<f64> = chunk.iter().map(|(a, b)| brute_hd95(a, &a.union(b).unwrap())).collect();
        if tune_margin(chunk).map_err(|e| e.to_string())? != sorted_percentile(vals, 95.0) {
            tune_mismatch += 1;
        }
    }
    ensure(mismatches == 0 && tune_mismatch == 0, || {
        format!("{mismatches} distance mismatches, {tune_mismatch} margin mismatches")
    })?;
    Ok(format!("{} mask pairs and {} margin groups bit-identical to brute force", pairs.len(), pairs.len().div_ceil(7)))
}

fn criterion_14() -> Check {
    let (mu, sd, w) = ([100.0, 220.0], [15.0, 25.0], 0.4);
    let sep = mu[1] - mu[0];
    let (mut worst_mu, mut worst_sd, mut worst_iter, mut worst_drop) = (0.0f64, 0.0f64, 0usize, 0.0f64);
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1400 + seed);
        let lo = Normal::new(mu[0], sd[0]).unwrap();
        let hi = Normal::new(mu[1], sd[1]).unwrap();
        let xs: Vec<f64> = (0..5000)
            .map(|_| if rng.random_bool(w) { lo.sample(&mut rng) } else { hi.sample(&mut rng) })
            .collect();
        let fit = fit_gmm2_with(&xs, &EmOptions::default()).map_err(|e| e.to_string())?;
        let m = fit.model;
        worst_mu = worst_mu.max((m.mu_low - mu[0]).abs() / sep).max((m.mu_high - mu[1]).abs() / sep);
        worst_sd = worst_sd
            .max((m.sigma_low - sd[0]).abs() / sd[0])
            .max((m.sigma_high - sd[1]).abs() / sd[1]);
        worst_iter = worst_iter.max(fit.iterations);
        for pair in fit.log_likelihood.windows(2) {
            worst_drop = worst_drop.max(pair[0] - pair[1]);
        }
    }
    ensure(worst_mu <= 0.05, || format!("mean error {:.2}% of the separation", 100.0 * worst_mu))?;
    ensure(worst_sd <= 0.10, || format!("sigma error {:.2}%", 100.0 * worst_sd))?;
    ensure(worst_iter <= 200, || format!("{worst_iter} iterations"))?;
    ensure(worst_drop <= 1e-12, || format!("log-likelihood dropped by {worst_drop:e}"))?;
    Ok(format!(
        "mean error {:.2}%, sigma error {:.2}%, <= {worst_iter} iterations, monotone",
        100.0 * worst_mu,
        100.0 * worst_sd
    ))
}

fn criterion_15() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let ph = phantom();
    write_volume(&ph.p_ai, d.join("ai.json")).map_err(|e| e.to_string())?;
    write_volume(&ph.p_fb, d.join("fb.json")).map_err(|e| e.to_string())?;
    write_volume(&ph.image, d.join("img.json")).map_err(|e| e.to_string())?;
    std::fs::write(
        d.join("contracts.json"),
        r#"{ "epsilon": 0.001, "phi": "exp", "margins_mm": { "c0": 2, "c1": 1.5, "c2": 3 }, "c_high": ["c1"], "background": "c0" }"#,
    )
    .map_err(|e| e.to_string())?;
    let run = |tag: &str, threads: &str| -> std::result::Result<[Vec<u8>; 3], String> {
        let out = d.join(format!("out_{tag}.json"));
        let conflict = d.join(format!("conflict_{tag}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_veritas"))
            .args(["--threads", threads, "fuse"])
            .arg("--ai")
            .arg(d.join("ai.json"))
            .arg("--fallback")
            .arg(d.join("fb.json"))
            .arg("--image")
            .arg(d.join("img.json"))
            .arg("--config")
            .arg(d.join("contracts.json"))
            .arg("--out")
            .arg(&out)
            .arg("--conflict")
            .arg(&conflict)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        let read = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
        Ok([read(&out)?, read(&out.with_extension("raw"))?, read(&conflict.with_extension("raw"))?])
    };
    let first = run("a", "1")?;
    let runs = [run("b", "1")?, run("c", "4")?, run("d", "3")?];
    ensure(runs.iter().all(|r| *r == first), || "fuse outputs differ between runs".into())?;
    Ok(format!("4 runs (1, 1, 4 and 3 threads) byte-identical, {} body bytes", first[1].len()))
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 15] = [
        ("Dempster combination matches the exhaustive oracle", criterion_1),
        ("Zadeh example gives m({b}) = 1", criterion_2),
        ("anatomical product formula matches the generic fold", criterion_3),
        ("fail-safe switching on the phantom", criterion_4),
        ("label-set axiom suite", criterion_5),
        ("leaf-Dice collapse", criterion_6),
        ("marginal Dice partition closed form", criterion_7),
        ("DRO closed forms", criterion_8),
        ("Chernoff percentile bound counting", criterion_9),
        ("toy DRO beats ERM on the minority class", criterion_10),
        ("Procrustes monotone objective and noiseless recovery", criterion_11),
        ("heat-kernel fusion and smoothing kernels", criterion_12),
        ("HD95 and margin tuning match brute force", criterion_13),
        ("two-component GMM recovery", criterion_14),
        ("fuse is byte-for-byte deterministic", criterion_15),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                println!("criterion {id:>2} FAIL  {name}: {detail}");
                failed.push(id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 15 criteria pass");
    } else {
        println!("acceptance: {} of 15 criteria fail: {failed:?}", failed.len());
        std::process::exit(1);
    }
}
