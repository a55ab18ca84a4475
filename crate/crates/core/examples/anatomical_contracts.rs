//! Distance-based anatomical weights and their effect on a probability vector.

use veritas::contracts::{anatomical_bpa, apply_anatomical, build_anatomical, PhiKind};
use veritas::dempster::{combine_prob, ClassProbability};
use veritas::{GridMeta, LabelSpace, MaskVolume, Result};

fn main() -> Result<()> {
    let meta = GridMeta::new([20, 1, 1], [1.0, 1.0, 1.0])?;
    // Three slabs along x: background, grey matter, white matter.
    let masks: Vec<MaskVolume> = [(0, 6), (6, 12), (12, 20)]
        .iter()
        .map(|&(lo, hi)| MaskVolume::from_fn(meta, |[x, _, _]| x >= lo && x < hi))
        .collect();
    let margins = [2.0, 1.5, 3.0];

    let space = LabelSpace::new(["bg", "gm", "wm"])?;
    let p = ClassProbability::new(space.clone(), vec![0.1, 0.2, 0.7])?;
    for kind in [PhiKind::Hard, PhiKind::Exponential] {
        let aw = build_anatomical(&masks, &margins, kind)?;
        println!("{kind:?}");
        for x in [0, 4, 8, 11, 13] {
            let i = meta.index(x, 0, 0);
            let w = aw.at(i);
            let direct = apply_anatomical(&p, w);
            let via_bpa = anatomical_bpa(&space, w).and_then(|m| combine_prob(&p, &m));
            match (direct, via_bpa) {
                (Ok(a), Ok(b)) => println!("  x={x:2} w={w:.3?} -> {:.4?} (generic rule {:.4?})", a.values(), b.values()),
                (Err(e), _) => println!("  x={x:2} w={w:.3?} -> {e}"),
                (_, Err(e)) => println!("  x={x:2} generic rule failed: {e}"),
            }
        }
    }
    Ok(())
}
