//! Predicted against observed message counts for a learning plan.

use privspn::arith::FixedPointParams;
use privspn::field::DEFAULT_PRIME;
use privspn::net::{CostModel, SessionConfig};
use privspn::protocols::{learn_exact, local_statistics, plan_learn_exact};
use privspn::spn::{random_selective, sample_rows, GeneratorConfig};
use privspn::{FieldParams, SharingParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let spn = random_selective(&GeneratorConfig::new(3, 256), &mut rng);
    let rows = sample_rows(&spn, 40, &mut rng);
    let fp = FixedPointParams::with_scale(256);

    for n in [3, 5, 7] {
        let mut parts = vec![Vec::new(); n];
        for (k, row) in rows.iter().enumerate() {
            parts[k % n].push(row.clone());
        }
        let params = SharingParams::with_default_degree(n, FieldParams::new(DEFAULT_PRIME)?)?;
        let (plan, _) = plan_learn_exact(&spn, n, &fp)?;
        let predicted = CostModel::new(n).plan_messages(plan.exercises());
        let out = learn_exact(
            &spn,
            &local_statistics(&spn, &parts)?,
            &SessionConfig::new(params, 40),
            &fp,
        )?;
        println!(
            "n = {n}: {} exercises, predicted {predicted}, observed {}",
            plan.len(),
            out.session.counters.total.messages
        );
    }
    Ok(())
}
