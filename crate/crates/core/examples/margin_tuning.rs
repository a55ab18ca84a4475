//! Margins from HD95 over validation pairs, per condition.

use veritas::metrics::{dice, hd95, hd95_fn, margin_for_other_pathologies, tune_margin, MarginTable};
use veritas::{Condition, GridMeta, MaskVolume, Result};

fn ball(meta: GridMeta, c: [f64; 3], r: f64) -> MaskVolume {
    MaskVolume::from_fn(meta, |p| {
        (0..3).map(|d| (p[d] as f64 - c[d]).powi(2)).sum::<f64>() <= r * r
    })
}

fn main() -> Result<()> {
    let meta = GridMeta::new([32, 32, 32], [0.8, 0.8, 0.8])?;
    let gt = ball(meta, [16.0, 16.0, 16.0], 9.0);
    let nt = vec![
        (ball(meta, [16.5, 16.0, 16.0], 9.0), gt.clone()),
        (ball(meta, [16.0, 16.0, 16.0], 8.0), gt.clone()),
    ];
    let sb = vec![
        (ball(meta, [18.0, 15.0, 16.0], 7.5), gt.clone()),
        (ball(meta, [14.0, 16.0, 17.0], 10.5), gt.clone()),
    ];
    for (name, pairs) in [("neurotypical", &nt), ("spina bifida", &sb)] {
        for (pred, gt) in pairs.iter() {
            println!(
                "{name}: Dice {:.3} HD95 {:.2} mm, one-sided {:.2} mm",
                dice(pred, gt)?,
                hd95(pred, gt)?,
                hd95_fn(pred, gt)?
            );
        }
    }
    let mut table = MarginTable::new();
    table.insert("wm", Condition::Neurotypical, tune_margin(&nt)?)?;
    table.insert("wm", Condition::SpinaBifida, tune_margin(&sb)?)?;
    for (c, cond, eta) in table.iter() {
        println!("η[{c}, {cond}] = {eta:.2} mm");
    }
    println!("η[wm, other] = {:.2} mm", margin_for_other_pathologies(&table, "wm")?);
    Ok(())
}
