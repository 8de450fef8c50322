//! A client asks a conditional query against secret-shared weights.

use privspn::field::DEFAULT_PRIME;
use privspn::net::SessionConfig;
use privspn::protocols::{infer_marginal, EvidenceQuery, ShareMode, SharedWeightModel};
use privspn::spn::example_network;
use privspn::{FieldParams, SharingParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spn = example_network();
    let params = SharingParams::with_default_degree(3, FieldParams::new(DEFAULT_PRIME)?)?;
    let model = SharedWeightModel::deal(
        &spn,
        params,
        ShareMode::Polynomial,
        &mut ChaCha20Rng::seed_from_u64(2),
    )?;
    let cfg = SessionConfig::new(params, 40);
    for (x, e) in [("0=1,1=1", ""), ("0=1", ""), ("0=1", "1=1")] {
        let q = EvidenceQuery::parse(x, e)?;
        let r = infer_marginal(&spn, &model, &q, &cfg)?;
        println!(
            "Pr({x} | {e}) = {:.4}  S(xe) = {}, S(e) = {}",
            r.probability, r.joint, r.evidence
        );
    }
    Ok(())
}
