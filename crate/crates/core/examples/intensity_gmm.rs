//! Fitting the two-component intensity model and applying the intensity contract.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use veritas::contracts::{fit_gmm2_with, EmOptions};
use veritas::contracts::{apply_intensity, intensity_bpa, intensity_masses};
use veritas::dempster::ClassProbability;
use veritas::{LabelSpace, Result, SubsetMask};

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let low = Normal::new(100.0, 15.0).unwrap();
    let high = Normal::new(220.0, 25.0).unwrap();
    let xs: Vec<f64> = (0..5000)
        .map(|i| if i % 5 < 2 { low.sample(&mut rng) } else { high.sample(&mut rng) })
        .collect();
    let fit = fit_gmm2_with(&xs, &EmOptions::default())?;
    let g = fit.model;
    println!(
        "EM: {} iterations, mean LL {:.4}\n  low  N({:.1}, {:.1}) π={:.3}\n  high N({:.1}, {:.1}) π={:.3}",
        fit.iterations,
        fit.log_likelihood.last().unwrap(),
        g.mu_low,
        g.sigma_low,
        g.pi_low,
        g.mu_high,
        g.sigma_high,
        g.pi_high
    );

    let space = LabelSpace::new(["csf", "gm", "wm"])?;
    // Bright tissue: CSF in T2 imaging.
    let c_high = SubsetMask::singleton(0);
    let p = ClassProbability::uniform(space.clone());
    for x in [80.0, 160.0, 240.0] {
        let (m_high, m_all) = intensity_masses(x, &g);
        let q = apply_intensity(&p, &intensity_bpa(&space, x, &g, c_high)?)?;
        println!("x={x:5}: m(C_high)={m_high:.3} m(C)={m_all:.3} -> {:.3?}", q.values());
    }
    Ok(())
}
