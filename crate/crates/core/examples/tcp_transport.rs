//! The same multiplication over loopback TCP and in process.

use std::collections::BTreeMap;
use std::time::Duration;

use privspn::field::DEFAULT_PRIME;
use privspn::net::{
    reconstruct, run_session, DataStore, Planner, SessionConfig, Stored, TransportKind,
};
use privspn::sharing::{shamir_share, SecretId};
use privspn::{FieldParams, SharingParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = SharingParams::with_default_degree(3, FieldParams::new(DEFAULT_PRIME)?)?;
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let mut stores = vec![DataStore::new(); 3];
    for (name, v) in [("a", 12u128), ("b", 34)] {
        let id = SecretId::new(name);
        for s in shamir_share(params.field().element(v), &params, &id, &mut rng)? {
            stores[s.owner.index()].insert(id.clone(), Stored::Shamir(s.value))?;
        }
    }
    let mut plan = Planner::new();
    let c = plan.mul(&"a".into(), &"b".into());

    for transport in [TransportKind::InProcess, TransportKind::Tcp] {
        let mut cfg = SessionConfig::new(params, 40);
        cfg.transport = transport;
        cfg.latency = Duration::from_millis(2);
        let out = run_session(&cfg, plan.exercises(), stores.clone(), &BTreeMap::new())?;
        println!(
            "{transport:?}: a * b = {}, {} messages, {} bytes, {:.1} ms",
            reconstruct(&out.stores, &c, &params)?.value(),
            out.counters.total.messages,
            out.counters.total.bytes,
            out.wall_time.as_secs_f64() * 1e3
        );
    }
    Ok(())
}
