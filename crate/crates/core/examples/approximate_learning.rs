//! The averaged-fraction learner on one sum node with scripted masks.

use std::collections::BTreeMap;

use privspn::field::SMALL_PRIME;
use privspn::net::{Dealer, SessionConfig};
use privspn::protocols::{learn_approximate, mask_id};
use privspn::spn::{Polarity, SpnBuilder, SumEdgeCounts};
use privspn::{FieldParams, SharingParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut b = SpnBuilder::new();
    let x = b.leaf("X", 0, Polarity::Positive);
    let nx = b.leaf("NX", 0, Polarity::Negated);
    let s = b.sum("S", &[(x, 500), (nx, 500)]);
    let spn = b.build(s, 1, 1000)?;

    // (rows with X, rows reaching S) at each party.
    let local = [(71u64, 256u64), (209, 786), (320, 1127)];
    let stats: Vec<_> = local
        .iter()
        .map(|&(num, den)| {
            let mut c = SumEdgeCounts::zeros(&spn);
            c.counts.insert(s, vec![num, den - num]);
            c
        })
        .collect();

    let params = SharingParams::with_default_degree(3, FieldParams::new(SMALL_PRIME)?)?;
    let mut cfg = SessionConfig::new(params, 12);
    cfg.dealer = Dealer::Scripted(BTreeMap::from([(
        mask_id(s, 0),
        vec![752508, 776879, 567779],
    )]));
    let out = learn_approximate(&spn, &stats, &cfg)?;
    for (party, shares) in &out.model.parties {
        println!("party {}: {}", party.get(), shares.weights[&(s, 0)].value());
    }
    println!("weight of X: {:?}", out.model.reconstruct(&spn)?[&s][0]);
    Ok(())
}
