//! Division of a shared value by a public divisor with a statistical mask.

use std::collections::BTreeMap;

use privspn::field::DEFAULT_PRIME;
use privspn::net::{reconstruct, run_session, DataStore, Planner, SessionConfig, Stored};
use privspn::sharing::{shamir_share, SecretId};
use privspn::{FieldParams, SharingParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = SharingParams::with_default_degree(3, FieldParams::new(DEFAULT_PRIME)?)?;
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let values = [0u128, 1, 255, 256, 1000, 65535];

    let mut stores = vec![DataStore::new(); 3];
    let mut plan = Planner::new();
    let mut outs = Vec::new();
    for (k, &v) in values.iter().enumerate() {
        let id = SecretId::new(format!("u{k}"));
        for s in shamir_share(params.field().element(v), &params, &id, &mut rng)? {
            stores[s.owner.index()].insert(id.clone(), Stored::Shamir(s.value))?;
        }
        outs.push(plan.div_public(&id, 256));
    }

    let outcome = run_session(
        &SessionConfig::new(params, 40),
        plan.exercises(),
        stores,
        &BTreeMap::new(),
    )?;
    for (v, id) in values.iter().zip(&outs) {
        let q = reconstruct(&outcome.stores, id, &params)?.value();
        println!("{v:>6} / 256 -> {q} (exact {:.3})", *v as f64 / 256.0);
    }
    println!("{} messages", outcome.counters.total.messages);
    Ok(())
}
