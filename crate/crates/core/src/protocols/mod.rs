//! Private learning and inference on top of the exercise runtime.
//!
//! Every party keeps its local counts in plaintext under the same ids
//! ([`local_num_id`], [`local_den_id`]); the plans below only reference those
//! ids, so the same plan runs for every way of splitting the data.

mod infer;
mod learn;
mod model;

use thiserror::Error;

use crate::arith::ArithError;
use crate::field::FieldError;
use crate::net::exercise::PlanError;
use crate::net::session::{ReconstructError, SessionError};
use crate::net::store::{DataStore, Stored};
use crate::sharing::{PartyId, SecretId};
use crate::spn::{NodeId, SelectivityViolation, SpnGraph, SumEdgeCounts};

pub use infer::{
    build_leaf_configuration, infer_marginal, plan_inference, EvidenceQuery, InferenceLayout,
    InferenceOutcome,
};
pub use learn::{
    learn_approximate, learn_exact, plan_learn_approximate, plan_learn_exact, EdgeSecrets,
    ExactLayout, LearnOutcome,
};
pub use model::{PartyShares, ShareMode, SharedWeightModel};

/// Per-party sufficient statistics: `num` per sum edge, `den` per sum node.
pub type LocalStatistics = SumEdgeCounts;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid structure: {0}")]
    Structure(String),
    #[error("selectivity violated at party {party}: {violation}")]
    Selectivity {
        party: PartyId,
        violation: SelectivityViolation,
    },
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error("party {party} has no data for sum node {node}; the averaged-fraction learner needs every local denominator to be positive")]
    EmptyLocalNode { party: PartyId, node: String },
    #[error("the evidence has probability zero, the conditional is undefined")]
    UndefinedConditional,
    #[error("invalid query: {0}")]
    Query(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("{parties} parties but {stats} local statistics")]
    PartyCount { parties: usize, stats: usize },
}

impl ProtocolError {
    /// Failures caused by the data rather than the protocol run.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            ProtocolError::EmptyLocalNode { .. } | ProtocolError::UndefinedConditional
        )
    }
}

pub fn local_num_id(node: NodeId, child: usize) -> SecretId {
    SecretId::new(format!("lnum.{node}.{child}"))
}

pub fn local_den_id(node: NodeId) -> SecretId {
    SecretId::new(format!("lden.{node}"))
}

/// Joint random zero masking one edge's local fraction in the averaged
/// learner; a scripted dealer can fix it by this id.
pub fn mask_id(node: NodeId, child: usize) -> SecretId {
    SecretId::new(format!("mask.{node}.{child}"))
}

pub fn weight_id(node: NodeId, child: usize) -> SecretId {
    SecretId::new(format!("w.{node}.{child}"))
}

/// Local statistics of every party, rejecting non-selective partitions.
pub fn local_statistics(
    spn: &SpnGraph,
    partitions: &[Vec<Vec<bool>>],
) -> Result<Vec<LocalStatistics>, ProtocolError> {
    partitions
        .iter()
        .enumerate()
        .map(|(k, rows)| {
            crate::spn::count_contributions(spn, rows).map_err(|violation| {
                ProtocolError::Selectivity {
                    party: PartyId::new(k as u16 + 1).expect("non-zero"),
                    violation,
                }
            })
        })
        .collect()
}

/// A member's initial store holding its own counts in plaintext.
pub fn local_store(
    spn: &SpnGraph,
    stats: &LocalStatistics,
    field: crate::field::FieldParams,
) -> DataStore {
    let mut store = DataStore::new();
    for (i, children) in spn.sum_nodes() {
        let counts = stats.get(i);
        for j in 0..children.len() {
            let n = counts.get(j).copied().unwrap_or(0);
            store
                .insert(local_num_id(i, j), Stored::Plain(field.element(n as u128)))
                .expect("fresh store");
        }
        store
            .insert(
                local_den_id(i),
                Stored::Plain(field.element(stats.total(i) as u128)),
            )
            .expect("fresh store");
    }
    store
}

pub(crate) fn check_structure(spn: &SpnGraph) -> Result<(), ProtocolError> {
    let violations = spn.validate();
    if violations.is_empty() {
        Ok(())
    } else {
        let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        Err(ProtocolError::Structure(text.join("; ")))
    }
}
