//! The two learning protocols.

use std::collections::BTreeMap;

use crate::arith::{plan_approx_inverse, plan_scaled_quotient, ArithError, FixedPointParams};
use crate::net::exercise::{Op, Planner, RevealTarget};
use crate::net::session::{run_session, SessionConfig, SessionOutcome};
use crate::sharing::{PartyId, SecretId};
use crate::spn::{largest_remainder, NodeId, SpnGraph};

use super::model::{ShareMode, SharedWeightModel};
use super::{
    check_structure, local_den_id, local_num_id, local_store, mask_id, weight_id, LocalStatistics,
    ProtocolError,
};

/// Ids of the interesting intermediate values of the exact learner.
#[derive(Clone, Debug, Default)]
pub struct ExactLayout {
    /// Shares of the summed numerator per sum edge.
    pub num: BTreeMap<(NodeId, usize), SecretId>,
    /// Shares of the summed denominator per sum node.
    pub den: BTreeMap<NodeId, SecretId>,
    /// Public `r * den` per sum node; zero marks a node without data.
    pub zero_test: BTreeMap<NodeId, SecretId>,
    pub weights: BTreeMap<(NodeId, usize), SecretId>,
}

fn party(k: usize) -> PartyId {
    PartyId::new(k as u16).expect("party ids start at 1")
}

/// Exercise queue of the exact learner for `parties` data owners.
///
/// Each party shares its counts, the shares are summed, a masked zero test
/// replaces empty denominators by 1, and every edge weight becomes
/// `num * approx_inverse(den) / e`, which is about `d * num / den`. Nodes
/// without data fall back to public uniform weights.
pub fn plan_learn_exact(
    spn: &SpnGraph,
    parties: usize,
    fp: &FixedPointParams,
) -> Result<(Planner, ExactLayout), ProtocolError> {
    let mut plan = Planner::new();
    let mut layout = ExactLayout::default();
    let sums: Vec<(NodeId, usize)> = spn.sum_nodes().map(|(i, ch)| (i, ch.len())).collect();

    let mut inputs = Vec::new();
    for &(i, k) in &sums {
        inputs.extend((0..k).map(|j| local_num_id(i, j)));
        inputs.push(local_den_id(i));
    }
    let shared = |k: usize, id: &SecretId| SecretId::new(format!("s{k}.{id}"));
    for k in 1..=parties {
        plan.push(Op::Share {
            dealer: party(k),
            inputs: inputs.clone(),
            outputs: inputs.iter().map(|id| shared(k, id)).collect(),
        })?;
    }

    for &(i, arity) in &sums {
        let den_parts: Vec<SecretId> = (1..=parties).map(|k| shared(k, &local_den_id(i))).collect();
        let terms: Vec<(i128, &SecretId)> = den_parts.iter().map(|id| (1, id)).collect();
        let den = plan.linear_into(&terms, 0, SecretId::new(format!("den.{i}")))?;
        let mut nums = Vec::with_capacity(arity);
        for j in 0..arity {
            let parts: Vec<SecretId> = (1..=parties)
                .map(|k| shared(k, &local_num_id(i, j)))
                .collect();
            let terms: Vec<(i128, &SecretId)> = parts.iter().map(|id| (1, id)).collect();
            let num = plan.linear_into(&terms, 0, SecretId::new(format!("num.{i}.{j}")))?;
            layout.num.insert((i, j), num.clone());
            nums.push(num);
        }

        let r = plan.joint_random();
        let masked = plan.mul(&r, &den);
        let test = plan.reveal(&masked, RevealTarget::All);
        let safe_den = plan.select_public(&test, 1, &den);
        let inverse = plan_approx_inverse(&mut plan, &safe_den, fp)?;
        let uniform = largest_remainder(&vec![0; arity], fp.scale);
        for (j, num) in nums.iter().enumerate() {
            let q = plan_scaled_quotient(&mut plan, num, &inverse, fp);
            let out = weight_id(i, j);
            plan.push(Op::SelectPublic {
                test: test.clone(),
                if_zero: uniform[j],
                otherwise: q,
                out: out.clone(),
            })?;
            layout.weights.insert((i, j), out);
        }
        layout.den.insert(i, den);
        layout.zero_test.insert(i, test);
    }
    Ok((plan, layout))
}

/// Secret ids of the learned weight of each sum edge.
pub type EdgeSecrets = BTreeMap<(NodeId, usize), SecretId>;

/// Exercise queue of the averaged-fraction learner: one zero sharing and
/// one local rounded fraction per sum edge.
pub fn plan_learn_approximate(
    spn: &SpnGraph,
    parties: usize,
    scale: u128,
) -> Result<(Planner, EdgeSecrets), ProtocolError> {
    let mut plan = Planner::new();
    let mut weights = BTreeMap::new();
    for (i, children) in spn.sum_nodes() {
        for j in 0..children.len() {
            let mask = mask_id(i, j);
            plan.push(Op::Jrsz { out: mask.clone() })?;
            let out = weight_id(i, j);
            plan.push(Op::ApproxFraction {
                num: local_num_id(i, j),
                den: local_den_id(i),
                mask,
                scale,
                parties: parties as u64,
                if_empty: None,
                out: out.clone(),
            })?;
            weights.insert((i, j), out);
        }
    }
    Ok((plan, weights))
}

#[derive(Debug)]
pub struct LearnOutcome {
    pub model: SharedWeightModel,
    /// Sum nodes that received public uniform weights.
    pub degenerate: Vec<NodeId>,
    pub session: SessionOutcome,
}

fn check_parties(cfg: &SessionConfig, stats: &[LocalStatistics]) -> Result<(), ProtocolError> {
    if stats.len() != cfg.sharing.parties() {
        return Err(ProtocolError::PartyCount {
            parties: cfg.sharing.parties(),
            stats: stats.len(),
        });
    }
    Ok(())
}

pub fn learn_exact(
    spn: &SpnGraph,
    stats: &[LocalStatistics],
    cfg: &SessionConfig,
    fp: &FixedPointParams,
) -> Result<LearnOutcome, ProtocolError> {
    check_structure(spn)?;
    check_parties(cfg, stats)?;
    fp.validate()?;
    let field = cfg.sharing.field();
    fp.check_field(field)?;
    if fp.scale != spn.scale() {
        return Err(ArithError::InvalidParams(format!(
            "scale {} differs from the structure's scale {}",
            fp.scale,
            spn.scale()
        ))
        .into());
    }
    // Remote counts are unknown here; the configured bound is trusted.
    for (i, _) in spn.sum_nodes().filter(|_| cfg.remote.is_none()) {
        let total: u64 = stats.iter().map(|s| s.total(i)).sum();
        if total as u128 > fp.divisor_bound {
            return Err(ArithError::InvalidParams(format!(
                "node {} has {total} instances, above the divisor bound {}",
                spn.node(i).name,
                fp.divisor_bound
            ))
            .into());
        }
    }

    let (plan, layout) = plan_learn_exact(spn, stats.len(), fp)?;
    let stores = stats.iter().map(|s| local_store(spn, s, field)).collect();
    let session = run_session(cfg, plan.exercises(), stores, &BTreeMap::new())?;

    // Every member holds the opened zero tests; with no member hosted here
    // they are not visible.
    let mut degenerate = Vec::new();
    if let Some(first) = session.stores.values().next() {
        for (&i, test) in &layout.zero_test {
            let value = first
                .plain(test)
                .map_err(|e| ProtocolError::Model(e.to_string()))?;
            if value.is_zero() {
                tracing::info!(node = %spn.node(i).name, "no instances reach this sum node, using uniform weights");
                degenerate.push(i);
            }
        }
    }
    let model =
        SharedWeightModel::from_stores(spn, &session.stores, ShareMode::Polynomial, cfg.sharing)?;
    Ok(LearnOutcome {
        model,
        degenerate,
        session,
    })
}

pub fn learn_approximate(
    spn: &SpnGraph,
    stats: &[LocalStatistics],
    cfg: &SessionConfig,
) -> Result<LearnOutcome, ProtocolError> {
    check_structure(spn)?;
    check_parties(cfg, stats)?;
    for (k, s) in stats.iter().enumerate() {
        if !cfg.hosts(party(k + 1)) {
            continue;
        }
        if let Some((i, _)) = spn.sum_nodes().find(|(i, _)| s.total(*i) == 0) {
            return Err(ProtocolError::EmptyLocalNode {
                party: party(k + 1),
                node: spn.node(i).name.clone(),
            });
        }
    }
    let field = cfg.sharing.field();
    let (plan, _) = plan_learn_approximate(spn, stats.len(), spn.scale())?;
    let stores = stats.iter().map(|s| local_store(spn, s, field)).collect();
    let session = run_session(cfg, plan.exercises(), stores, &BTreeMap::new())?;
    let model =
        SharedWeightModel::from_stores(spn, &session.stores, ShareMode::Additive, cfg.sharing)?;
    Ok(LearnOutcome {
        model,
        degenerate: Vec::new(),
        session,
    })
}
