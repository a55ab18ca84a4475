//! The full trustworthy fusion on a small synthetic volume where the backbone
//! makes an anatomically implausible prediction in one region.

use veritas::contracts::{build_anatomical, PhiKind};
use veritas::fusion::{failsafe_map, incident_fraction, trustworthy_fuse, FusionConfig, GmmSource};
use veritas::metrics::dice;
use veritas::volume::argmax;
use veritas::{GridMeta, ProbabilityVolume, Result, ScalarVolume, SubsetMask};

fn main() -> Result<()> {
    let meta = GridMeta::cube([24, 12, 12])?;
    let truth = |x: usize| x * 3 / 24;
    // Fallback: correct but unsharp. Backbone: sharp, but wrong on x in 4..8.
    let fb: Vec<f64> = (0..meta.len())
        .flat_map(|i| {
            let c = truth(meta.coords(i)[0]);
            (0..3).map(move |k| if k == c { 0.8 } else { 0.1 })
        })
        .collect();
    let p_fb = ProbabilityVolume::new(meta, 3, fb)?;
    let labels: Vec<usize> = (0..meta.len())
        .map(|i| {
            let x = meta.coords(i)[0];
            if (4..8).contains(&x) { 2 } else { truth(x) }
        })
        .collect();
    let p_ai = ProbabilityVolume::one_hot(meta, 3, &labels)?;
    let image = ScalarVolume::from_fn(meta, |[x, y, z]| {
        [60.0, 120.0, 200.0][truth(x)] + ((x * 13 + y * 7 + z * 3) % 9) as f64
    })?;

    let masks: Vec<_> = (0..3).map(|c| p_fb.argmax_mask(c)).collect();
    let aw = build_anatomical(&masks, &[1.0, 1.0, 1.0], PhiKind::Hard)?;
    let cfg = FusionConfig::new(1e-3, SubsetMask::singleton(2), GmmSource::FitInBrain { background: None })?;
    let fused = trustworthy_fuse(&p_ai, &p_fb, &aw, &image, &cfg)?;

    let failsafe = failsafe_map(&p_ai, &aw)?;
    println!("fail-safe incident fraction: {:.3}", incident_fraction(&failsafe, 0.5, None)?);
    let truth_mask = ProbabilityVolume::one_hot(meta, 3, &(0..meta.len()).map(|i| truth(meta.coords(i)[0])).collect::<Vec<_>>())?;
    for c in 0..3 {
        let gt = truth_mask.argmax_mask(c);
        println!(
            "class {c}: Dice backbone {:.3}, trustworthy {:.3}",
            dice(&p_ai.argmax_mask(c), &gt)?,
            dice(&fused.argmax_mask(c), &gt)?
        );
    }
    let i = meta.index(6, 6, 6);
    println!("voxel (6,6,6): backbone {:?} -> fused {:.3?} (class {})", p_ai.voxel(i), fused.voxel(i), argmax(fused.voxel(i)));
    Ok(())
}
