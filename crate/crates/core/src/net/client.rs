//! Client endpoint: deals its private inputs and receives revealed results.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::arith::{mul_reshare_finish, recombination_vector, ArithError};
use crate::field::{FieldElement, FieldError};
use crate::net::counters::TrafficCounters;
use crate::net::exercise::{Exercise, ExerciseId, Op, RevealTarget};
use crate::net::frame::{Endpoint, Frame, Opcode};
use crate::net::member::{endpoint_rng, Outgoing, Report};
use crate::sharing::{shamir_share, PartyId, SecretId, SharingError, SharingParams};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no client input given for {0}")]
    MissingInput(SecretId),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Arith(#[from] ArithError),
}

#[derive(Debug)]
pub struct Client {
    session_id: u64,
    sharing: SharingParams,
    lambdas: Vec<FieldElement>,
    rng: ChaCha20Rng,
    /// Client input exercises with their values, in plan order.
    inputs: Vec<(ExerciseId, Vec<FieldElement>)>,
    /// Reveal exercise id → result id.
    expected: BTreeMap<ExerciseId, SecretId>,
    received: BTreeMap<ExerciseId, BTreeMap<PartyId, FieldElement>>,
    outputs: BTreeMap<SecretId, FieldElement>,
    counters: TrafficCounters,
    shutdown_seen: bool,
    aborted: bool,
    done: bool,
}

impl Client {
    /// Whether `plan` needs a client endpoint at all.
    pub fn required(plan: &[Exercise]) -> bool {
        plan.iter().any(|e| {
            matches!(
                e.op,
                Op::ClientInput { .. }
                    | Op::Reveal {
                        target: RevealTarget::Client,
                        ..
                    }
            )
        })
    }

    pub fn new(
        session_id: u64,
        sharing: SharingParams,
        seed: u64,
        plan: &[Exercise],
        values: &BTreeMap<SecretId, u128>,
    ) -> Result<Self, ClientError> {
        let field = sharing.field();
        let mut inputs = Vec::new();
        let mut expected = BTreeMap::new();
        for ex in plan {
            match &ex.op {
                Op::ClientInput { outputs } => {
                    let vals = outputs
                        .iter()
                        .map(|id| {
                            let v = values
                                .get(id)
                                .ok_or_else(|| ClientError::MissingInput(id.clone()))?;
                            Ok(field.canonical(*v)?)
                        })
                        .collect::<Result<Vec<_>, ClientError>>()?;
                    inputs.push((ex.id, vals));
                }
                Op::Reveal {
                    target: RevealTarget::Client,
                    out,
                    ..
                } => {
                    expected.insert(ex.id, out.clone());
                }
                _ => {}
            }
        }
        Ok(Self {
            session_id,
            lambdas: recombination_vector(&sharing)?,
            sharing,
            rng: endpoint_rng(seed, Endpoint::Client),
            inputs,
            expected,
            received: BTreeMap::new(),
            outputs: BTreeMap::new(),
            counters: TrafficCounters::new(),
            shutdown_seen: false,
            aborted: false,
            done: false,
        })
    }

    fn frame(&self, opcode: Opcode, exercise: ExerciseId) -> Frame {
        Frame::new(opcode, exercise, self.session_id, Endpoint::Client)
    }

    /// Sends every input share up front, tagged with its exercise id.
    pub fn start(&mut self) -> Vec<Outgoing> {
        let mut out = Vec::new();
        let n = self.sharing.parties();
        for (ex, values) in std::mem::take(&mut self.inputs) {
            let mut columns = vec![Vec::with_capacity(values.len()); n];
            for v in values {
                let shares = shamir_share(v, &self.sharing, &SecretId::new(""), &mut self.rng)
                    .expect("valid sharing parameters");
                for s in shares {
                    columns[s.owner.index()].push(s.value.value());
                }
            }
            for (i, col) in columns.into_iter().enumerate() {
                let f = self.frame(Opcode::ShareDist, ex).with_payload(col);
                self.counters.record(&f, Some("CLIENT_INPUT"));
                let to = Endpoint::Member(PartyId::new(i as u16 + 1).expect("non-zero"));
                out.push(Outgoing { to, frame: f });
            }
        }
        out
    }

    pub fn handle(&mut self, frame: Frame) -> Vec<Outgoing> {
        if self.done || frame.session != self.session_id {
            return Vec::new();
        }
        match (frame.opcode, frame.sender) {
            (Opcode::Shutdown, Endpoint::Manager) => {
                self.shutdown_seen = true;
                self.aborted = frame.payload.first().is_some_and(|&f| f != 0);
            }
            (Opcode::RevealTo, Endpoint::Member(p)) => self.on_reveal(p, &frame),
            (opcode, from) => {
                tracing::warn!(%opcode, %from, "client ignores frame");
            }
        }
        self.maybe_finish()
    }

    fn on_reveal(&mut self, from: PartyId, frame: &Frame) {
        let Some(out) = self.expected.get(&frame.exercise).cloned() else {
            tracing::warn!(exercise = frame.exercise, "unexpected reveal");
            return;
        };
        let Some(v) = frame
            .payload
            .first()
            .and_then(|&v| self.sharing.field().canonical(v).ok())
        else {
            tracing::warn!(exercise = frame.exercise, "malformed reveal");
            return;
        };
        let shares = self.received.entry(frame.exercise).or_default();
        shares.insert(from, v);
        if shares.len() == self.sharing.parties() {
            let values: Vec<FieldElement> = shares.values().copied().collect();
            self.outputs
                .insert(out, mul_reshare_finish(&values, &self.lambdas));
        }
    }

    fn maybe_finish(&mut self) -> Vec<Outgoing> {
        let complete = self.outputs.len() == self.expected.len();
        if !self.shutdown_seen || !(complete || self.aborted) {
            return Vec::new();
        }
        self.done = true;
        let report = Report {
            counters: self.counters.clone(),
            leak_events: 0,
        };
        vec![Outgoing {
            to: Endpoint::Manager,
            frame: report.to_frame(self.session_id, Endpoint::Client),
        }]
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn outputs(&self) -> &BTreeMap<SecretId, FieldElement> {
        &self.outputs
    }

    pub fn into_outputs(self) -> BTreeMap<SecretId, FieldElement> {
        self.outputs
    }

    pub fn missing_reveals(&self) -> BTreeSet<SecretId> {
        self.expected
            .values()
            .filter(|id| !self.outputs.contains_key(*id))
            .cloned()
            .collect()
    }
}
