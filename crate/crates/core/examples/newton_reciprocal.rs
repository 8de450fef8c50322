//! Shared fixed-point division a / b through a Newton reciprocal.

use std::collections::BTreeMap;

use privspn::arith::{plan_secure_divide, FixedPointParams};
use privspn::field::DEFAULT_PRIME;
use privspn::net::{reconstruct, run_session, DataStore, Planner, SessionConfig, Stored};
use privspn::sharing::{shamir_share, SecretId};
use privspn::{FieldParams, SharingParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = SharingParams::with_default_degree(3, FieldParams::new(DEFAULT_PRIME)?)?;
    let fp = FixedPointParams::with_scale(1000);
    fp.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let pairs = [(1u128, 3u128), (2, 7), (5, 5), (17, 600)];

    let mut stores = vec![DataStore::new(); 3];
    let mut plan = Planner::new();
    let mut outs = Vec::new();
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let (ia, ib) = (
            SecretId::new(format!("a{k}")),
            SecretId::new(format!("b{k}")),
        );
        for (id, v) in [(&ia, a), (&ib, b)] {
            for s in shamir_share(params.field().element(v), &params, id, &mut rng)? {
                stores[s.owner.index()].insert(id.clone(), Stored::Shamir(s.value))?;
            }
        }
        outs.push(plan_secure_divide(&mut plan, &ia, &ib, &fp)?);
    }

    let outcome = run_session(
        &SessionConfig::new(params, 40),
        plan.exercises(),
        stores,
        &BTreeMap::new(),
    )?;
    for ((a, b), id) in pairs.iter().zip(&outs) {
        let got = reconstruct(&outcome.stores, id, &params)?.value();
        println!(
            "1000 * {a}/{b} ~ {got} (exact {:.2})",
            1000.0 * *a as f64 / *b as f64
        );
    }
    println!(
        "{} exercises, {} messages",
        plan.len(),
        outcome.counters.total.messages
    );
    Ok(())
}
