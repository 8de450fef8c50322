//! Three parties learn weights from private partitions without pooling rows.

use privspn::arith::FixedPointParams;
use privspn::field::DEFAULT_PRIME;
use privspn::net::SessionConfig;
use privspn::protocols::{learn_exact, local_statistics};
use privspn::spn::{
    count_contributions, oracle_learn, random_selective, sample_rows, GeneratorConfig,
};
use privspn::{FieldParams, SharingParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let spn = random_selective(&GeneratorConfig::new(4, 256), &mut rng);
    let rows = sample_rows(&spn, 90, &mut rng);
    let partitions: Vec<_> = rows.chunks(30).map(<[_]>::to_vec).collect();

    let params = SharingParams::with_default_degree(3, FieldParams::new(DEFAULT_PRIME)?)?;
    let fp = FixedPointParams::with_scale(256);
    let stats = local_statistics(&spn, &partitions)?;
    let out = learn_exact(&spn, &stats, &SessionConfig::new(params, 40), &fp)?;

    let learned = out.model.reconstruct(&spn)?;
    let plain = oracle_learn(&spn, &count_contributions(&spn, &rows)?, 0);
    for (node, ws) in &learned {
        println!(
            "{:<6} shared {ws:?} plaintext {:?}",
            spn.node(*node).name,
            plain.weights[node]
        );
    }
    println!(
        "tolerance {}, {} messages",
        fp.learning_tolerance(),
        out.session.counters.total.messages
    );
    Ok(())
}
