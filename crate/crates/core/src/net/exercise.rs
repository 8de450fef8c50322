//! Exercises: the unit of work the manager schedules on all members.
//!
//! A plan is an ordered list of exercises. Every exercise names its inputs
//! and outputs by data id; members resolve them against their local store.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sharing::{PartyId, SecretId};

/// Monotone exercise number within a session (starts at 1).
pub type ExerciseId = u64;

/// Who receives the shares of a reveal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RevealTarget {
    Member(PartyId),
    /// Every member learns the value.
    All,
    /// The external inference client.
    Client,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Add {
        a: SecretId,
        b: SecretId,
        out: SecretId,
    },
    Sub {
        a: SecretId,
        b: SecretId,
        out: SecretId,
    },
    /// `constant + sum(coefficient * input)` with public integer coefficients.
    Linear {
        terms: Vec<(i128, SecretId)>,
        constant: i128,
        out: SecretId,
    },
    /// Multiply two polynomial sharings and reduce the degree by resharing.
    Mul {
        a: SecretId,
        b: SecretId,
        out: SecretId,
    },
    /// `dealer` Shamir-shares plaintext values from its own store.
    Share {
        dealer: PartyId,
        inputs: Vec<SecretId>,
        outputs: Vec<SecretId>,
    },
    Reveal {
        a: SecretId,
        target: RevealTarget,
        out: SecretId,
    },
    /// Approximate division of a shared non-negative integer by a public divisor.
    DivPublic {
        u: SecretId,
        divisor: u128,
        out: SecretId,
    },
    /// The manager deals additive shares of zero.
    Jrsz { out: SecretId },
    /// Additive shares to polynomial shares.
    Sq2pq { a: SecretId, out: SecretId },
    /// Polynomial shares of a uniform value nobody knows.
    JointRandom { out: SecretId },
    /// Local step of the averaged-fraction learner:
    /// `round(scale * num / (den * parties)) + mask`, or
    /// `round(if_empty / parties) + mask` when the local count `den` is zero;
    /// without a fallback a zero count is an error.
    ApproxFraction {
        num: SecretId,
        den: SecretId,
        mask: SecretId,
        scale: u128,
        parties: u64,
        if_empty: Option<u128>,
        out: SecretId,
    },
    /// Polynomial shares dealt by the inference client.
    ClientInput { outputs: Vec<SecretId> },
    /// `out = if_zero` (as a public constant sharing) when the public value
    /// `test` is zero, otherwise a copy of `otherwise`.
    SelectPublic {
        test: SecretId,
        if_zero: u128,
        otherwise: SecretId,
        out: SecretId,
    },
}

impl Op {
    /// Stable name used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Add { .. } => "ADD",
            Op::Sub { .. } => "SUB",
            Op::Linear { .. } => "LINEAR",
            Op::Mul { .. } => "MUL",
            Op::Share { .. } => "SHARE",
            Op::Reveal { .. } => "REVEAL",
            Op::DivPublic { .. } => "DIV_PUBLIC",
            Op::Jrsz { .. } => "JRSZ",
            Op::Sq2pq { .. } => "SQ2PQ",
            Op::JointRandom { .. } => "JOINT_RANDOM",
            Op::ApproxFraction { .. } => "APPROX_FRACTION",
            Op::ClientInput { .. } => "CLIENT_INPUT",
            Op::SelectPublic { .. } => "SELECT_PUBLIC",
        }
    }

    pub fn outputs(&self) -> Vec<&SecretId> {
        match self {
            Op::Add { out, .. }
            | Op::Sub { out, .. }
            | Op::Linear { out, .. }
            | Op::Mul { out, .. }
            | Op::DivPublic { out, .. }
            | Op::Jrsz { out }
            | Op::Sq2pq { out, .. }
            | Op::JointRandom { out }
            | Op::ApproxFraction { out, .. }
            | Op::SelectPublic { out, .. } => vec![out],
            // A reveal to the client or to another member leaves nothing in
            // most stores, but the id is still reserved.
            Op::Reveal { out, .. } => vec![out],
            Op::Share { outputs, .. } | Op::ClientInput { outputs } => outputs.iter().collect(),
        }
    }

    pub fn inputs(&self) -> Vec<&SecretId> {
        match self {
            Op::Add { a, b, .. } | Op::Sub { a, b, .. } | Op::Mul { a, b, .. } => vec![a, b],
            Op::Linear { terms, .. } => terms.iter().map(|(_, id)| id).collect(),
            Op::Share { inputs, .. } => inputs.iter().collect(),
            Op::Reveal { a, .. } | Op::Sq2pq { a, .. } => vec![a],
            Op::DivPublic { u, .. } => vec![u],
            Op::ApproxFraction { num, den, mask, .. } => vec![num, den, mask],
            Op::SelectPublic {
                test, otherwise, ..
            } => vec![test, otherwise],
            Op::Jrsz { .. } | Op::JointRandom { .. } | Op::ClientInput { .. } => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exercise {
    pub id: ExerciseId,
    pub op: Op,
}

impl Exercise {
    pub fn encode(&self) -> String {
        serde_json::to_string(&self.op).expect("exercise ops always serialize")
    }

    pub fn decode(id: ExerciseId, text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self {
            id,
            op: serde_json::from_str(text)?,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("result id {0} is already produced by an earlier exercise")]
    DuplicateResult(SecretId),
}

/// Builds an exercise queue, handing out fresh data ids for intermediates.
#[derive(Debug, Default, Clone)]
pub struct Planner {
    exercises: Vec<Exercise>,
    produced: HashSet<SecretId>,
    temp_counter: u64,
}

impl Planner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an exercise; result ids must not repeat.
    pub fn push(&mut self, op: Op) -> Result<ExerciseId, PlanError> {
        let outputs: Vec<SecretId> = op.outputs().into_iter().cloned().collect();
        if let Some(dup) = outputs.iter().find(|o| self.produced.contains(*o)) {
            return Err(PlanError::DuplicateResult(dup.clone()));
        }
        self.produced.extend(outputs);
        let id = self.exercises.len() as ExerciseId + 1;
        self.exercises.push(Exercise { id, op });
        Ok(id)
    }

    /// Fresh intermediate id; the `~` prefix is reserved for the planner.
    pub fn fresh(&mut self, tag: &str) -> SecretId {
        self.temp_counter += 1;
        SecretId::new(format!("~{}/{}", self.temp_counter, tag))
    }

    fn push_fresh(&mut self, op: Op) {
        self.push(op).expect("fresh ids never collide");
    }

    pub fn add(&mut self, a: &SecretId, b: &SecretId) -> SecretId {
        let out = self.fresh("add");
        self.push_fresh(Op::Add {
            a: a.clone(),
            b: b.clone(),
            out: out.clone(),
        });
        out
    }

    pub fn sub(&mut self, a: &SecretId, b: &SecretId) -> SecretId {
        let out = self.fresh("sub");
        self.push_fresh(Op::Sub {
            a: a.clone(),
            b: b.clone(),
            out: out.clone(),
        });
        out
    }

    pub fn linear(&mut self, terms: &[(i128, &SecretId)], constant: i128) -> SecretId {
        let out = self.fresh("lin");
        self.linear_into(terms, constant, out.clone())
            .expect("fresh ids never collide");
        out
    }

    pub fn linear_into(
        &mut self,
        terms: &[(i128, &SecretId)],
        constant: i128,
        out: SecretId,
    ) -> Result<SecretId, PlanError> {
        self.push(Op::Linear {
            terms: terms.iter().map(|(c, id)| (*c, (*id).clone())).collect(),
            constant,
            out: out.clone(),
        })?;
        Ok(out)
    }

    /// A public constant held by every party (a degree-0 sharing).
    pub fn constant(&mut self, value: i128) -> SecretId {
        self.linear(&[], value)
    }

    pub fn scale(&mut self, a: &SecretId, factor: i128) -> SecretId {
        self.linear(&[(factor, a)], 0)
    }

    pub fn mul(&mut self, a: &SecretId, b: &SecretId) -> SecretId {
        let out = self.fresh("mul");
        self.push_fresh(Op::Mul {
            a: a.clone(),
            b: b.clone(),
            out: out.clone(),
        });
        out
    }

    pub fn div_public(&mut self, u: &SecretId, divisor: u128) -> SecretId {
        let out = self.fresh("div");
        self.push_fresh(Op::DivPublic {
            u: u.clone(),
            divisor,
            out: out.clone(),
        });
        out
    }

    pub fn reveal(&mut self, a: &SecretId, target: RevealTarget) -> SecretId {
        let out = self.fresh("reveal");
        self.push_fresh(Op::Reveal {
            a: a.clone(),
            target,
            out: out.clone(),
        });
        out
    }

    pub fn joint_random(&mut self) -> SecretId {
        let out = self.fresh("rand");
        self.push_fresh(Op::JointRandom { out: out.clone() });
        out
    }

    pub fn select_public(
        &mut self,
        test: &SecretId,
        if_zero: u128,
        otherwise: &SecretId,
    ) -> SecretId {
        let out = self.fresh("sel");
        self.push_fresh(Op::SelectPublic {
            test: test.clone(),
            if_zero,
            otherwise: otherwise.clone(),
            out: out.clone(),
        });
        out
    }

    pub fn exercises(&self) -> &[Exercise] {
        &self.exercises
    }

    pub fn len(&self) -> usize {
        self.exercises.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exercises.is_empty()
    }

    pub fn into_exercises(self) -> Vec<Exercise> {
        self.exercises
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_increase_and_duplicates_are_rejected() {
        let mut plan = Planner::new();
        let a = SecretId::new("a");
        let b = SecretId::new("b");
        let first = plan
            .push(Op::Add {
                a: a.clone(),
                b: b.clone(),
                out: "c".into(),
            })
            .unwrap();
        let second = plan
            .push(Op::Mul {
                a: a.clone(),
                b,
                out: "d".into(),
            })
            .unwrap();
        assert_eq!((first, second), (1, 2));
        assert_eq!(
            plan.push(Op::Sq2pq { a, out: "c".into() }),
            Err(PlanError::DuplicateResult("c".into()))
        );
    }

    #[test]
    fn exercise_text_round_trip() {
        let ex = Exercise {
            id: 4,
            op: Op::Linear {
                terms: vec![(-1, "x".into()), (512, "y".into())],
                constant: 1 << 70,
                out: "z".into(),
            },
        };
        assert_eq!(Exercise::decode(4, &ex.encode()).unwrap(), ex);
    }
}
