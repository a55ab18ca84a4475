//! Dempster's rule on a three-class frame, plus the classic Zadeh example.

use veritas::dempster::{combine, combine_prob, contradiction_mass, Bpa, ClassProbability};
use veritas::{LabelSpace, Result};

fn main() -> Result<()> {
    let space = LabelSpace::new(["csf", "gm", "wm"])?;
    let s = |names: &[&str]| space.subset(names);

    let backbone = Bpa::new(space.clone(), [(s(&["gm"])?, 0.6), (s(&["gm", "wm"])?, 0.3), (space.full(), 0.1)])?;
    let expert = Bpa::new(space.clone(), [(s(&["wm"])?, 0.5), (s(&["csf", "gm"])?, 0.2), (space.full(), 0.3)])?;
    println!("conflict K = {:.4}", contradiction_mass(&backbone, &expert)?);
    let fused = combine(&backbone, &expert)?;
    for (set, m) in fused.focal() {
        println!("  m({}) = {m:.4}", space.format_subset(set));
    }

    // A probability vector combined with evidence stays a probability vector.
    let p = ClassProbability::new(space.clone(), vec![0.2, 0.5, 0.3])?;
    let q = combine_prob(&p, &expert)?;
    println!("p ⊕ m = {:?}", q.values());

    // Two experts who almost fully disagree.
    let abc = LabelSpace::new(["a", "b", "c"])?;
    let e1 = Bpa::new(abc.clone(), [(abc.subset(&["a"])?, 0.99), (abc.subset(&["b"])?, 0.01)])?;
    let e2 = Bpa::new(abc.clone(), [(abc.subset(&["c"])?, 0.99), (abc.subset(&["b"])?, 0.01)])?;
    let z = combine(&e1, &e2)?;
    println!("Zadeh: K = {:.4}, m({{b}}) = {}", contradiction_mass(&e1, &e2)?, z.mass(abc.subset(&["b"])?));
    Ok(())
}
