//! Hardness-weighted sampling against a 1% minority class.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use veritas::dro::toy::{per_class_accuracy, toy_train, BlobSpec, Mode, TrainConfig};
use veritas::dro::{hardness_probs, percentile_bound, robust_loss};
use veritas::Result;

fn main() -> Result<()> {
    let losses = [0.1, 0.2, 0.3, 2.0];
    for beta in [0.0, 1.0, 10.0] {
        println!(
            "β={beta:4}: q={:.3?} robust loss {:.4}",
            hardness_probs(&losses, beta)?,
            robust_loss(&losses, beta.max(1e-9))?
        );
    }
    println!("percentile bound (β=1, α=0.5): {:.4}", percentile_bound(&losses, 1.0, 0.5)?);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let train = BlobSpec::imbalanced(2000, 0.01).sample(&mut rng);
    let test = BlobSpec::balanced(2000).sample(&mut rng);
    println!("train class counts {:?}", train.class_counts());
    for (name, mode) in [
        ("ERM", Mode::Erm),
        ("DRO β=10", Mode::Dro { beta: 10.0, importance: true }),
        ("DRO β=100", Mode::Dro { beta: 100.0, importance: true }),
    ] {
        let run = toy_train(&train, &TrainConfig::new(mode, 7), Some(&test))?;
        let last = run.history.last().unwrap();
        println!(
            "{name:10} test accuracy per class {:.3?}, final sampling entropy {:.2} nats",
            per_class_accuracy(&run.model, &test),
            last.sampling_entropy
        );
    }
    Ok(())
}
