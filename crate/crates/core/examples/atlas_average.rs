//! Temporally weighted, left-right symmetric average of intensity volumes.

use veritas::atlas::{mirror, temporal_weight, weighted_average};
use veritas::{GridMeta, Result, ScalarVolume};

fn main() -> Result<()> {
    let meta = GridMeta::cube([16, 12, 10])?;
    let ages = [196.0, 203.0, 210.0, 224.0];
    let volumes: Vec<ScalarVolume> = ages
        .iter()
        .map(|&ga| ScalarVolume::from_fn(meta, |[x, y, z]| ga + 3.0 * x as f64 + (y * z) as f64))
        .collect::<Result<_>>()?;
    for &ga in &ages {
        println!("ga {ga} days: weight {:.4} at target 205", temporal_weight(ga, 205.0, 3.0));
    }
    let avg = weighted_average(&volumes, &ages, 205.0, 0, None)?;
    let flipped = mirror(&avg, 0);
    let asym = avg.data().iter().zip(flipped.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (lo, hi) = avg.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    println!("average range [{lo:.3}, {hi:.3}], max asymmetry {asym:.1e}");
    Ok(())
}
