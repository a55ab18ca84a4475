//! Fallback segmentation from warped atlases, weighted by a heat kernel on
//! local intensity dissimilarity and deformation roughness.

use veritas::fallback::{fuse_atlases, select_atlases, AtlasEntry, FusionParams};
use veritas::{Condition, GridMeta, ProbabilityVolume, Result, ScalarVolume, VectorVolume};

fn main() -> Result<()> {
    let meta = GridMeta::cube([16, 16, 16])?;
    let subject = ScalarVolume::from_fn(meta, |[x, _, _]| if x < 8 { 100.0 } else { 200.0 })?;
    let atlas = |id: &str, ga_days: f64, condition, boundary: usize, wobble: f64| -> Result<AtlasEntry> {
        let labels: Vec<usize> = (0..meta.len()).map(|i| (meta.coords(i)[0] >= boundary) as usize).collect();
        let dispo = (0..meta.len())
            .map(|i| {
                let [x, y, z] = meta.coords(i);
                [wobble * ((x + 2 * y + 3 * z) % 2) as f64, 0.0, 0.0]
            })
            .collect();
        Ok(AtlasEntry {
            id: id.into(),
            ga_days,
            condition,
            image: ScalarVolume::from_fn(meta, |[x, _, _]| if x < boundary { 100.0 } else { 200.0 })?,
            probs: ProbabilityVolume::one_hot(meta, 2, &labels)?,
            displacement: VectorVolume::new(meta, dispo)?,
        })
    };
    let entries = vec![
        atlas("nt-28a", 196.0, Condition::Neurotypical, 8, 0.0)?,
        atlas("nt-28b", 197.0, Condition::Neurotypical, 11, 0.0)?,
        atlas("nt-28c", 195.0, Condition::Neurotypical, 8, 2.0)?,
        atlas("sb-31", 217.0, Condition::SpinaBifida, 8, 0.0)?,
    ];
    let params = FusionParams::default();
    for (ga, cond) in [(28.0, Condition::Neurotypical), (30.0, Condition::SpinaBifida), (29.0, Condition::Other)] {
        let picked = select_atlases(&entries, ga, cond, &params)?;
        let ids: Vec<&str> = picked.iter().map(|e| e.id.as_str()).collect();
        let fb = fuse_atlases(&picked, &subject, None, &params)?;
        let edge = fb.voxel(meta.index(9, 8, 8));
        println!("{ga} weeks, {cond}: atlases {ids:?}, p(class 1) at x=9: {:.3}", edge[1]);
    }
    Ok(())
}
