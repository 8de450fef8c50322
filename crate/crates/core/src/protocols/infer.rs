//! Private marginal inference for an external client.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::net::exercise::{Op, Planner, RevealTarget};
use crate::net::session::{run_session, SessionConfig, SessionOutcome};
use crate::sharing::SecretId;
use crate::spn::{LeafValues, NodeKind, SpnGraph};

use super::model::{ShareMode, SharedWeightModel};
use super::{check_structure, weight_id, ProtocolError};

/// Query `Pr(x | e)` over partial assignments.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvidenceQuery {
    pub x: BTreeMap<usize, bool>,
    pub e: BTreeMap<usize, bool>,
}

/// Parses `var=value` pairs separated by commas, e.g. `0=1,3=0`.
pub fn parse_assignment(text: &str) -> Result<BTreeMap<usize, bool>, ProtocolError> {
    let mut out = BTreeMap::new();
    for pair in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (var, value) = pair
            .split_once('=')
            .ok_or_else(|| ProtocolError::Query(format!("expected var=value, found {pair:?}")))?;
        let var = usize::from_str(var.trim())
            .map_err(|_| ProtocolError::Query(format!("invalid variable {var:?}")))?;
        let value = match value.trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(ProtocolError::Query(format!(
                    "value {other:?} is not 0 or 1"
                )))
            }
        };
        if out.insert(var, value).is_some() {
            return Err(ProtocolError::Query(format!(
                "variable {var} assigned twice"
            )));
        }
    }
    Ok(out)
}

impl EvidenceQuery {
    pub fn new(x: BTreeMap<usize, bool>, e: BTreeMap<usize, bool>) -> Self {
        Self { x, e }
    }

    pub fn parse(x: &str, e: &str) -> Result<Self, ProtocolError> {
        Ok(Self::new(parse_assignment(x)?, parse_assignment(e)?))
    }

    /// The joint assignment `x e`. A variable may appear in both parts only
    /// with the same value.
    pub fn joint(&self) -> Result<BTreeMap<usize, bool>, ProtocolError> {
        let mut out = self.e.clone();
        for (&v, &b) in &self.x {
            if let Some(&other) = self.e.get(&v) {
                if other != b {
                    return Err(ProtocolError::Query(format!(
                        "variable {v} is {} in the query and {} in the evidence",
                        b as u8, other as u8
                    )));
                }
            }
            out.insert(v, b);
        }
        Ok(out)
    }
}

/// Fixed-point leaf values: the matching indicator of an assigned variable
/// is `scale`, its complement 0, and both indicators of an unassigned
/// variable are `scale`.
pub fn build_leaf_configuration(
    assignment: &BTreeMap<usize, bool>,
    num_vars: usize,
    scale: u128,
) -> Result<LeafValues<u128>, ProtocolError> {
    if let Some((&v, _)) = assignment.iter().find(|(&v, _)| v >= num_vars) {
        return Err(ProtocolError::Query(format!(
            "variable {v} is out of range for {num_vars} variables"
        )));
    }
    Ok((0..num_vars)
        .map(|v| match assignment.get(&v) {
            Some(true) => [scale, 0],
            Some(false) => [0, scale],
            None => [scale, scale],
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct InferenceLayout {
    /// Client input ids per variable `[positive, negated]`, for `x e` and `e`.
    pub joint_inputs: Vec<[SecretId; 2]>,
    pub evidence_inputs: Vec<[SecretId; 2]>,
    /// Ids under which the client receives the two root values.
    pub joint_root: SecretId,
    pub evidence_root: SecretId,
}

impl InferenceLayout {
    /// Client input values for both configurations.
    pub fn client_inputs(
        &self,
        joint: &LeafValues<u128>,
        evidence: &LeafValues<u128>,
    ) -> BTreeMap<SecretId, u128> {
        let mut out = BTreeMap::new();
        for (ids, vals) in [
            (&self.joint_inputs, joint),
            (&self.evidence_inputs, evidence),
        ] {
            for (pair, v) in ids.iter().zip(vals) {
                out.insert(pair[0].clone(), v[0]);
                out.insert(pair[1].clone(), v[1]);
            }
        }
        out
    }
}

fn plan_pass(plan: &mut Planner, spn: &SpnGraph, inputs: &[[SecretId; 2]]) -> SecretId {
    let d = spn.scale();
    let mut value: Vec<Option<SecretId>> = vec![None; spn.nodes().len()];
    let get = |value: &[Option<SecretId>], c: usize| value[c].clone().expect("children first");
    for &i in spn.bottom_up() {
        let v = match &spn.node(i).kind {
            NodeKind::Leaf { var, polarity } => inputs[*var][polarity.index()].clone(),
            NodeKind::Sum { children } => {
                let terms: Vec<SecretId> = children
                    .iter()
                    .enumerate()
                    .map(|(j, (c, _))| {
                        let prod = plan.mul(&weight_id(i, j), &get(&value, *c));
                        plan.div_public(&prod, d)
                    })
                    .collect();
                if terms.len() == 1 {
                    terms.into_iter().next().expect("one term")
                } else {
                    let refs: Vec<(i128, &SecretId)> = terms.iter().map(|t| (1, t)).collect();
                    plan.linear(&refs, 0)
                }
            }
            NodeKind::Product { children } => {
                let mut acc = get(&value, children[0]);
                for c in &children[1..] {
                    let prod = plan.mul(&acc, &get(&value, *c));
                    acc = plan.div_public(&prod, d);
                }
                acc
            }
        };
        value[i] = Some(v);
    }
    get(&value, spn.root())
}

/// Two bottom-up passes over shares, one per leaf configuration; only the
/// client learns the two root values.
pub fn plan_inference(spn: &SpnGraph) -> Result<(Planner, InferenceLayout), ProtocolError> {
    let mut plan = Planner::new();
    let ids = |tag: &str| -> Vec<[SecretId; 2]> {
        (0..spn.num_vars())
            .map(|v| {
                [
                    SecretId::new(format!("in.{tag}.{v}.pos")),
                    SecretId::new(format!("in.{tag}.{v}.neg")),
                ]
            })
            .collect()
    };
    let joint_inputs = ids("xe");
    let evidence_inputs = ids("e");
    let outputs = joint_inputs
        .iter()
        .chain(&evidence_inputs)
        .flat_map(|p| p.iter().cloned())
        .collect();
    plan.push(Op::ClientInput { outputs })?;
    let joint = plan_pass(&mut plan, spn, &joint_inputs);
    let evidence = plan_pass(&mut plan, spn, &evidence_inputs);
    let joint_root = SecretId::new("root.xe");
    let evidence_root = SecretId::new("root.e");
    plan.push(Op::Reveal {
        a: joint,
        target: RevealTarget::Client,
        out: joint_root.clone(),
    })?;
    plan.push(Op::Reveal {
        a: evidence,
        target: RevealTarget::Client,
        out: evidence_root.clone(),
    })?;
    Ok((
        plan,
        InferenceLayout {
            joint_inputs,
            evidence_inputs,
            joint_root,
            evidence_root,
        },
    ))
}

#[derive(Debug)]
pub struct InferenceOutcome {
    /// `S(x e) / S(e)` as computed by the client.
    pub probability: f64,
    /// Root values at scale `d`.
    pub joint: u128,
    pub evidence: u128,
    pub session: SessionOutcome,
}

pub fn infer_marginal(
    spn: &SpnGraph,
    model: &SharedWeightModel,
    query: &EvidenceQuery,
    cfg: &SessionConfig,
) -> Result<InferenceOutcome, ProtocolError> {
    check_structure(spn)?;
    if model.mode != ShareMode::Polynomial {
        return Err(ProtocolError::Model(
            "inference needs polynomial shares; additive models only support storage".into(),
        ));
    }
    if model.sharing != cfg.sharing {
        return Err(ProtocolError::Model(
            "model sharing parameters differ from the session".into(),
        ));
    }
    if let Some(p) = model
        .sharing
        .party_ids()
        .find(|p| cfg.hosts(*p) && !model.parties.contains_key(p))
    {
        return Err(ProtocolError::Model(format!(
            "no shares for party {}",
            p.get()
        )));
    }
    let joint_assign = query.joint()?;
    let d = spn.scale();
    let joint = build_leaf_configuration(&joint_assign, spn.num_vars(), d)?;
    let evidence = build_leaf_configuration(&query.e, spn.num_vars(), d)?;
    let (plan, layout) = plan_inference(spn)?;
    let inputs = layout.client_inputs(&joint, &evidence);
    let session = run_session(cfg, plan.exercises(), model.stores(), &inputs)?;
    let read = |id: &SecretId| {
        session
            .client_outputs
            .get(id)
            .map(|v| v.value())
            .ok_or_else(|| ProtocolError::Model(format!("client did not receive {id}")))
    };
    let joint_value = read(&layout.joint_root)?;
    let evidence_value = read(&layout.evidence_root)?;
    if evidence_value == 0 {
        return Err(ProtocolError::UndefinedConditional);
    }
    Ok(InferenceOutcome {
        probability: joint_value as f64 / evidence_value as f64,
        joint: joint_value,
        evidence: evidence_value,
        session,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_configurations() {
        let q = EvidenceQuery::parse("0=1", "").unwrap();
        let leaves = build_leaf_configuration(&q.joint().unwrap(), 2, 1000).unwrap();
        assert_eq!(leaves, vec![[1000, 0], [1000, 1000]]);
        let q = EvidenceQuery::parse("0=1", "0=0").unwrap();
        assert!(q.joint().is_err());
        let q = EvidenceQuery::parse("0=1,1=0", "0=1,1=0").unwrap();
        assert_eq!(q.joint().unwrap(), q.e);
        assert!(build_leaf_configuration(&q.x, 1, 10).is_err());
        assert!(parse_assignment("0=2").is_err());
        assert!(parse_assignment("0=1,0=1").is_err());
        assert!(parse_assignment("x").is_err());
    }
}
