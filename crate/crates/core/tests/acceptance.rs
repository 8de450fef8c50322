//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use privspn::arith::{div_by_public_with_mask, plan_warm_up, FixedPointParams};
use privspn::field::{FieldParams, DEFAULT_PRIME, SMALL_PRIME};
use privspn::net::{
    reconstruct, run_session, DataStore, Dealer, Exercise, Op, Opcode, Planner, RevealTarget,
    SessionConfig, Stored,
};
use privspn::protocols::{
    infer_marginal, learn_approximate, learn_exact, local_statistics, mask_id, plan_learn_exact,
    EvidenceQuery, LocalStatistics, ShareMode, SharedWeightModel,
};
use privspn::sharing::{lagrange_reconstruct, shamir_share, SecretId, SharingParams};
use privspn::spn::{
    example_network, oracle_learn, random_selective, GeneratorConfig, NodeKind, Polarity,
    SpnBuilder, SpnGraph, SumEdgeCounts,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Outcome = Result<String, String>;
type Weights = BTreeMap<usize, Vec<u128>>;
type Criterion = (&'static str, fn() -> Outcome);

fn sharing(n: usize, p: u128) -> SharingParams {
    SharingParams::with_default_degree(n, FieldParams::new(p).unwrap()).unwrap()
}

fn session(n: usize, p: u128, rho: u32, seed: u64) -> SessionConfig {
    let mut cfg = SessionConfig::new(sharing(n, p), rho);
    cfg.seed = seed;
    cfg.timeout = Duration::from_secs(60);
    cfg
}

fn shared_stores(
    params: &SharingParams,
    secrets: &[(SecretId, u128)],
    seed: u64,
) -> Vec<DataStore> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut stores = vec![DataStore::new(); params.parties()];
    for (id, v) in secrets {
        for s in shamir_share(params.field().element(*v), params, id, &mut rng).unwrap() {
            stores[s.owner.index()]
                .insert(id.clone(), Stored::Shamir(s.value))
                .unwrap();
        }
    }
    stores
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed <= limit, || {
        format!("took {elapsed:.2?}, limit {limit:?}")
    })
}

/// Whether a node's support contains the row, by recursion over the graph.
fn supports(spn: &SpnGraph, i: usize, row: &[bool], memo: &mut BTreeMap<usize, bool>) -> bool {
    if let Some(&v) = memo.get(&i) {
        return v;
    }
    let v = match &spn.node(i).kind {
        NodeKind::Leaf { var, polarity } => row[*var] == (*polarity == Polarity::Positive),
        NodeKind::Sum { children } => children.iter().any(|(c, _)| supports(spn, *c, row, memo)),
        NodeKind::Product { children } => children.iter().all(|c| supports(spn, *c, row, memo)),
    };
    memo.insert(i, v);
    v
}

/// Rows reaching each sum-node child, counted one row at a time.
fn brute_counts(spn: &SpnGraph, rows: &[Vec<bool>]) -> BTreeMap<usize, Vec<u64>> {
    let mut counts = BTreeMap::new();
    for (i, node) in spn.nodes().iter().enumerate() {
        if let NodeKind::Sum { children } = &node.kind {
            counts.insert(i, vec![0u64; children.len()]);
        }
    }
    for row in rows {
        let mut memo = BTreeMap::new();
        for (i, c) in counts.iter_mut() {
            let NodeKind::Sum { children } = &spn.node(*i).kind else {
                unreachable!()
            };
            for (j, (child, _)) in children.iter().enumerate() {
                if supports(spn, *child, row, &mut memo) {
                    c[j] += 1;
                }
            }
        }
    }
    counts
}

// 1. Averaged learner on the three-party worked example.
fn worked_example() -> Outcome {
    let started = Instant::now();
    let mut b = SpnBuilder::new();
    let x = b.leaf("X", 0, Polarity::Positive);
    let nx = b.leaf("NX", 0, Polarity::Negated);
    let s = b.sum("S", &[(x, 500), (nx, 500)]);
    let spn = b.build(s, 1, 1000).unwrap();
    let stats: Vec<LocalStatistics> = [(71u64, 256u64), (209, 786), (320, 1127)]
        .iter()
        .map(|&(num, den)| {
            let mut c = SumEdgeCounts::zeros(&spn);
            c.counts.insert(s, vec![num, den - num]);
            c
        })
        .collect();
    let mut cfg = session(3, SMALL_PRIME, 12, 0);
    cfg.dealer = Dealer::Scripted(BTreeMap::from([(
        mask_id(s, 0),
        vec![752508, 776879, 567779],
    )]));
    let out = learn_approximate(&spn, &stats, &cfg).map_err(|e| e.to_string())?;
    let shares: Vec<u128> = out
        .model
        .parties
        .values()
        .map(|p| p.weights[&(s, 0)].value())
        .collect();
    check(shares == [752600, 776968, 567874], || {
        format!("shares {shares:?}")
    })?;
    let total = shares.iter().sum::<u128>() % SMALL_PRIME;
    check(total == 276, || format!("reconstructed {total}"))?;
    within(started.elapsed(), Duration::from_secs(1))?;
    Ok(format!("shares {shares:?} open to {total}"))
}

// 2. Public division on shares for every u up to 4096.
fn division_exhaustive() -> Outcome {
    let started = Instant::now();
    let params = sharing(3, DEFAULT_PRIME);
    let field = params.field();
    let rho = 40;
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let id = SecretId::new("u");
    let mut runs = 0u64;
    for d in [2u128, 16, 256] {
        for u in 0..=4096u128 {
            for _ in 0..8 {
                let r = rng.gen_range(0..1u128 << rho);
                let shares = shamir_share(field.element(u), &params, &id, &mut rng).unwrap();
                let out = div_by_public_with_mask(&shares, d, r, &params, &mut rng)
                    .map_err(|e| e.to_string())?;
                let got = lagrange_reconstruct(&out, &params).unwrap().value();
                // floor((u + r) / d) - floor(r / d)
                let expected = (u + r) / d - r / d;
                check(got == expected, || {
                    format!("u={u} d={d} r={r}: {got} != {expected}")
                })?;
                check((got * d).abs_diff(u) <= d, || {
                    format!("u={u} d={d}: result {got} outside [u/d - 1, u/d + 1]")
                })?;
                runs += 1;
            }
        }
    }
    within(started.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{runs} divisions, zero violations"))
}

fn ceil_log2(x: u128) -> u32 {
    128 - (x - 1).leading_zeros()
}

// 3. Warm-up of the reciprocal, exactly and on shares.
fn newton_warm_up() -> Outcome {
    let started = Instant::now();
    let mut checked = 0;
    for d in [16u128, 256] {
        let k = ceil_log2(d);
        // Exact rational recurrence u <- u (2d - u b) / d from u = 1.
        for b in 1..=d {
            let (dr, br) = (
                BigRational::from_integer(BigInt::from(d)),
                BigRational::from_integer(BigInt::from(b)),
            );
            let two = BigRational::from_integer(BigInt::from(2));
            let mut u = BigRational::one();
            for _ in 0..k {
                u = &u * (&two * &dr - &u * &br) / &dr;
            }
            let hi = &dr / &br;
            let lo = &hi / &two;
            check(lo <= u && u <= hi, || {
                format!(
                    "d={d} b={b}: exact warm-up {} outside [{lo}, {hi}]",
                    u.to_f64().unwrap()
                )
            })?;
        }

        let params = sharing(3, DEFAULT_PRIME);
        let secrets: Vec<(SecretId, u128)> = (1..=d)
            .map(|b| (SecretId::new(format!("b{b}")), b))
            .collect();
        let stores = shared_stores(&params, &secrets, d as u64);
        let mut plan = Planner::new();
        let outs: Vec<SecretId> = secrets
            .iter()
            .map(|(id, _)| plan_warm_up(&mut plan, id, d, k))
            .collect();
        let out = run_session(
            &session(3, DEFAULT_PRIME, 40, 3),
            plan.exercises(),
            stores,
            &BTreeMap::new(),
        )
        .map_err(|e| e.to_string())?;
        for ((_, b), id) in secrets.iter().zip(&outs) {
            let got = reconstruct(&out.stores, id, &params).unwrap().value() as f64;
            let (lo, hi) = (
                d as f64 / (2.0 * *b as f64) - 2.0,
                d as f64 / *b as f64 + 2.0,
            );
            check(lo <= got && got <= hi, || {
                format!("d={d} b={b}: shared warm-up {got} outside [{lo}, {hi}]")
            })?;
            checked += 1;
        }
    }
    within(started.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{checked} divisors in bounds, exactly and on shares"
    ))
}

fn random_rows(vars: usize, count: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<bool>> {
    (0..count)
        .map(|_| (0..vars).map(|_| rng.gen()).collect())
        .collect()
}

fn split(rows: &[Vec<bool>], parts: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<Vec<bool>>> {
    let mut out = vec![Vec::new(); parts];
    for row in rows {
        out[rng.gen_range(0..parts)].push(row.clone());
    }
    out
}

// 4. Exact learner against plaintext learning on random cases.
fn exact_learning_equivalence() -> Outcome {
    let started = Instant::now();
    let fp = FixedPointParams::default();
    let tau = fp.learning_tolerance();
    let expected_tau = 2u128.max((16 * (fp.k_err as u128 + 1) * 256).div_ceil(1 << 16));
    check(tau == expected_tau, || format!("tolerance {tau}"))?;
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut worst = 0u128;
    let mut edges = 0;
    for case in 0..50 {
        let vars = rng.gen_range(1..=6);
        let spn = random_selective(&GeneratorConfig::new(vars, 256), &mut rng);
        let count = rng.gen_range(0..=64);
        let rows = random_rows(vars, count, &mut rng);
        let n = if case % 2 == 0 { 3 } else { 5 };
        let parts = split(&rows, n, &mut rng);
        let stats = local_statistics(&spn, &parts).map_err(|e| e.to_string())?;
        let pooled = SumEdgeCounts {
            counts: brute_counts(&spn, &rows),
        };
        let oracle = oracle_learn(&spn, &pooled, 0).weights;
        let cfg = session(n, DEFAULT_PRIME, 40, case);
        let out = learn_exact(&spn, &stats, &cfg, &fp).map_err(|e| format!("case {case}: {e}"))?;
        let learned = out.model.reconstruct(&spn).map_err(|e| e.to_string())?;
        for (i, ws) in &learned {
            let total: u128 = ws.iter().sum();
            let slack = ws.len() as u128 * tau;
            check(total + slack >= 256 && total <= 256 + slack, || {
                format!("case {case}: node {i} sums to {total}")
            })?;
            for (j, (w, o)) in ws.iter().zip(&oracle[i]).enumerate() {
                worst = worst.max(w.abs_diff(*o));
                edges += 1;
                check(w.abs_diff(*o) <= tau, || {
                    format!("case {case}: edge {i}.{j} learned {w}, plaintext {o}")
                })?;
            }
        }
    }
    within(started.elapsed(), Duration::from_secs(600))?;
    Ok(format!(
        "50 cases, {edges} edges, largest deviation {worst} (tolerance {tau})"
    ))
}

// 5. Private inference on the two-variable example network.
fn example_inference() -> Outcome {
    let started = Instant::now();
    let spn = example_network();
    let d = spn.scale() as f64;
    let bound = 2.0 * spn.layers() as f64 / d;
    let params = sharing(3, DEFAULT_PRIME);
    let model = SharedWeightModel::deal(
        &spn,
        params,
        ShareMode::Polynomial,
        &mut ChaCha20Rng::seed_from_u64(5),
    )
    .map_err(|e| e.to_string())?;
    let cfg = session(3, DEFAULT_PRIME, 40, 5);
    let mut got = Vec::new();
    for (x, e, want) in [("0=1,1=1", "", 0.045), ("0=1", "", 0.33), ("", "", 1.0)] {
        let q = EvidenceQuery::parse(x, e).unwrap();
        let p = infer_marginal(&spn, &model, &q, &cfg)
            .map_err(|e| e.to_string())?
            .probability;
        check((p - want).abs() <= bound, || {
            format!("x={{{x}}}: {p} vs {want} (bound {bound})")
        })?;
        got.push(format!("{p:.4}"));
    }
    within(started.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{} within {bound}", got.join(", ")))
}

// 6. Learned sums and weights do not depend on how rows are split.
fn partition_invariance() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let spn = random_selective(&GeneratorConfig::new(5, 256), &mut rng);
    let rows = random_rows(5, 60, &mut rng);
    let n = 5;
    let fp = FixedPointParams::default();
    let (_, layout) = plan_learn_exact(&spn, n, &fp).unwrap();
    let params = sharing(n, DEFAULT_PRIME);
    let run = |parts: Vec<Vec<Vec<bool>>>| -> Result<(Vec<u128>, Weights), String> {
        let mut parts = parts;
        parts.resize(n, Vec::new());
        let stats = local_statistics(&spn, &parts).map_err(|e| e.to_string())?;
        let out = learn_exact(&spn, &stats, &session(n, DEFAULT_PRIME, 40, 66), &fp)
            .map_err(|e| e.to_string())?;
        let open = |id| {
            reconstruct(&out.session.stores, id, &params)
                .unwrap()
                .value()
        };
        let sums = layout
            .num
            .values()
            .chain(layout.den.values())
            .map(open)
            .collect();
        Ok((
            sums,
            out.model.reconstruct(&spn).map_err(|e| e.to_string())?,
        ))
    };
    let (base_sums, base_weights) = run(vec![rows.clone()])?;
    for k in [2, 3, 5] {
        let (sums, weights) = run(split(&rows, k, &mut rng))?;
        check(sums == base_sums, || {
            format!("{k}-way split changed the sums")
        })?;
        check(weights == base_weights, || {
            format!("{k}-way split changed the weights")
        })?;
    }
    Ok(format!(
        "{} shared sums and {} weights identical for 2, 3 and 5 way splits",
        base_sums.len(),
        base_weights.values().map(Vec::len).sum::<usize>()
    ))
}

/// Data messages of one exercise, counted by hand from the protocol steps.
fn hand_count(op: &Op, n: u64) -> u64 {
    match op {
        Op::Mul { .. } | Op::Sq2pq { .. } | Op::JointRandom { .. } => n * (n - 1),
        Op::Share { .. } => n - 1,
        Op::ClientInput { .. } | Op::Jrsz { .. } => n,
        Op::Reveal { target, .. } => match target {
            RevealTarget::Member(_) => n - 1,
            RevealTarget::All => n * (n - 1),
            RevealTarget::Client => n,
        },
        Op::DivPublic { .. } => 3 * (n - 1),
        _ => 0,
    }
}

fn plan_total(plan: &[Exercise], n: u64) -> u64 {
    plan.iter().map(|e| hand_count(&e.op, n) + 2 * n).sum()
}

// 7. Message counts are deterministic, grow with n and match the hand count.
fn traffic_accounting() -> Outcome {
    let mut single = Vec::new();
    for n in [3usize, 4, 5, 7] {
        let params = sharing(n, DEFAULT_PRIME);
        let stores = shared_stores(&params, &[("a".into(), 6), ("b".into(), 7)], 7);
        let mut plan = Planner::new();
        plan.mul(&"a".into(), &"b".into());
        let out = run_session(
            &session(n, DEFAULT_PRIME, 40, 7),
            plan.exercises(),
            stores,
            &BTreeMap::new(),
        )
        .map_err(|e| e.to_string())?;
        let (mul, fin) = (
            out.counters.opcode(Opcode::MulReshare).messages,
            out.counters.opcode(Opcode::Finished).messages,
        );
        let n = n as u64;
        check(mul == n * (n - 1) && fin == n, || {
            format!("n={n}: {mul} reshare and {fin} finished messages")
        })?;
        single.push(mul);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let spn = random_selective(&GeneratorConfig::new(4, 256), &mut rng);
    let rows = random_rows(4, 30, &mut rng);
    let fp = FixedPointParams::default();
    let mut totals = Vec::new();
    for n in [3usize, 5, 7] {
        let mut parts = split(&rows, n, &mut rng);
        parts.resize(n, Vec::new());
        let stats = local_statistics(&spn, &parts).map_err(|e| e.to_string())?;
        let (plan, _) = plan_learn_exact(&spn, n, &fp).unwrap();
        let cfg = session(n, DEFAULT_PRIME, 40, 8);
        let first = learn_exact(&spn, &stats, &cfg, &fp).map_err(|e| e.to_string())?;
        let second = learn_exact(&spn, &stats, &cfg, &fp).map_err(|e| e.to_string())?;
        let counters = &first.session.counters;
        check(counters == &second.session.counters, || {
            format!("n={n}: counters differ between runs")
        })?;
        check(counters.is_conserved(), || {
            format!("n={n}: counters not conserved")
        })?;
        let expected = plan_total(plan.exercises(), n as u64);
        check(counters.total.messages == expected, || {
            format!(
                "n={n}: {} messages, hand count {expected}",
                counters.total.messages
            )
        })?;
        totals.push(counters.total.messages);
    }
    check(totals.windows(2).all(|w| w[0] < w[1]), || {
        format!("totals {totals:?} not increasing")
    })?;
    Ok(format!(
        "one multiplication {single:?} for n = 3, 4, 5, 7; learning {totals:?} for n = 3, 5, 7"
    ))
}

// 8. Frequency of the reveal outside [d, 2^rho) in public division.
fn masking_leak_frequency() -> Outcome {
    let (rho, d, trials) = (12u32, 16u128, 100_000usize);
    let params = sharing(3, SMALL_PRIME);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let secrets: Vec<(SecretId, u128)> = (0..trials)
        .map(|i| (SecretId::new(format!("u{i}")), rng.gen_range(0..=d)))
        .collect();
    let stores = shared_stores(&params, &secrets, 8);
    let mut plan = Planner::new();
    for (id, _) in &secrets {
        plan.div_public(id, d);
    }
    let out = run_session(
        &session(3, SMALL_PRIME, rho, 8),
        plan.exercises(),
        stores,
        &BTreeMap::new(),
    )
    .map_err(|e| e.to_string())?;
    let freq = out.leak_events as f64 / trials as f64;
    let bound = 2.0 * d as f64 / (1u128 << rho) as f64;
    check(freq <= bound, || format!("frequency {freq} above {bound}"))?;
    Ok(format!(
        "{} of {trials} reveals ({freq:.5}) outside [d, 2^rho), bound {bound:.5}",
        out.leak_events
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("worked example of the averaged learner", worked_example),
        ("public division, exhaustive", division_exhaustive),
        ("reciprocal warm-up bound", newton_warm_up),
        (
            "exact learning matches plaintext",
            exact_learning_equivalence,
        ),
        ("inference on the example network", example_inference),
        ("partition invariance", partition_invariance),
        ("traffic accounting", traffic_accounting),
        ("masking leak frequency", masking_leak_frequency),
    ];
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = f();
        let t = started.elapsed();
        match &result {
            Ok(detail) => println!("PASS {} {name}: {detail} [{t:.2?}]", k + 1),
            Err(why) => {
                println!("FAIL {} {name}: {why} [{t:.2?}]", k + 1);
                failed.push(k + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}
