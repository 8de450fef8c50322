//! Plaintext counting and largest-remainder weights on a pooled dataset.

use privspn::spn::{
    count_contributions, oracle_learn, random_selective, sample_rows, GeneratorConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let spn = random_selective(&GeneratorConfig::new(4, 256), &mut rng);
    let rows = sample_rows(&spn, 200, &mut rng);
    let counts = count_contributions(&spn, &rows)?;
    let learned = oracle_learn(&spn, &counts, 1);
    for (node, ws) in &learned.weights {
        println!(
            "{:<6} counts {:?} -> weights {ws:?}",
            spn.node(*node).name,
            counts.get(*node)
        );
    }
    Ok(())
}
