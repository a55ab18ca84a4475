//! Losses for partially annotated data, and a numerical check of the label-set axiom.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use veritas::labelset::{
    axiom_check, cross_entropy, leaf_dice, marginal_ce, marginal_dice, marginalize, psi0,
    random_partial_instance, soft_target_dice,
};
use veritas::labelset::{PartialAnnotation, SoftPrediction};
use veritas::Result;

type LossFn = dyn Fn(&SoftPrediction, &PartialAnnotation) -> Result<f64>;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (p, g) = random_partial_instance(&mut rng, 200, 5);
    println!("on a random 200-voxel, 5-class instance:");
    println!("  leaf Dice        {:.5}", leaf_dice(&p, &g, 2, 1e-5)?);
    println!("  marginal Dice    {:.5}", marginal_dice(&p, &g, 2, 1e-5)?);
    println!("  soft-target Dice {:.5}", soft_target_dice(&p, &g, 2, 1e-5)?);
    println!("  marginal CE      {:.5}", marginal_ce(&p, &g)?);
    let phi = marginalize(&p, &g)?;
    println!("  CE(Φ(p), Ψ0)     {:.5}", cross_entropy(&phi, &psi0(&g))?);

    println!("axiom check, 500 trials (max violation):");
    let losses: [(&str, &LossFn); 4] = [
        ("leaf Dice", &|p, g| leaf_dice(p, g, 2, 1e-5)),
        ("marginal Dice", &|p, g| marginal_dice(p, g, 2, 1e-5)),
        ("marginal CE", &|p, g| marginal_ce(p, g)),
        ("soft-target Dice", &|p, g| soft_target_dice(p, g, 2, 1e-5)),
    ];
    for (name, f) in losses {
        let r = axiom_check(f, 500, 1)?;
        println!("  {name:17} {:.3e}", r.max_violation());
    }
    Ok(())
}
