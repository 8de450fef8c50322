//! Member endpoint: executes exercises against its local data store.
//!
//! The member is a pure state machine. It consumes frames and returns the
//! frames to send; transports and threads live elsewhere.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{
    division_finish, division_mask, division_residue, mul_reshare_finish, mul_reshare_start,
    recombination_vector, reveal_leaks, rounded_fraction, ArithError,
};
use crate::field::{FieldElement, FieldError};
use crate::net::counters::TrafficCounters;
use crate::net::exercise::{Exercise, ExerciseId, Op, RevealTarget};
use crate::net::frame::{Endpoint, Frame, Opcode};
use crate::net::store::{DataStore, StoreError, Stored};
use crate::sharing::{shamir_share, PartyId, SecretId, SharingError, SharingParams};

/// A frame together with its destination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outgoing {
    pub to: Endpoint,
    pub frame: Frame,
}

/// Counters an endpoint hands to the manager at shutdown.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub counters: TrafficCounters,
    pub leak_events: u64,
}

impl Report {
    pub fn to_frame(&self, session: u64, sender: Endpoint) -> Frame {
        Frame::new(Opcode::Report, 0, session, sender)
            .with_secret_id(serde_json::to_string(self).expect("reports serialize"))
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, serde_json::Error> {
        serde_json::from_str(&frame.secret_id)
    }
}

/// Deterministic per-endpoint randomness: one ChaCha stream per wire id.
pub fn endpoint_rng(seed: u64, endpoint: Endpoint) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(endpoint.wire_id() as u64);
    rng
}

#[derive(Debug, Error)]
pub enum MemberError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error("cannot decode exercise {0}: {1}")]
    BadExercise(ExerciseId, String),
    #[error("unexpected {opcode} from {from} in exercise {exercise}")]
    Unexpected {
        opcode: Opcode,
        from: Endpoint,
        exercise: ExerciseId,
    },
    #[error("exercise {got} is out of order (last started {last})")]
    OutOfOrder { got: ExerciseId, last: ExerciseId },
    #[error("frame for session {got}, expected {expected}")]
    WrongSession { got: u64, expected: u64 },
    #[error("payload of {got} elements, expected {expected}")]
    PayloadLength { got: usize, expected: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemberConfig {
    pub id: PartyId,
    pub sharing: SharingParams,
    pub session_id: u64,
    pub alice: PartyId,
    pub bob: PartyId,
    pub rho: u32,
    pub seed: u64,
    pub fault: Option<Fault>,
}

/// Fault injection for tests of the failure paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fault {
    /// The member misbehaves once an exercise above this id arrives.
    pub after: ExerciseId,
    pub mode: FaultMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultMode {
    /// Leave the network.
    Disconnect,
    /// Stay connected but never answer again.
    Hang,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Active,
    /// Sent a NACK; waits for the shutdown.
    Failed,
    Hung,
    Crashed,
    Done,
}

#[derive(Debug)]
enum Pending {
    Mul {
        received: BTreeMap<PartyId, FieldElement>,
    },
    AwaitShares {
        from: Endpoint,
    },
    Collect {
        received: BTreeMap<PartyId, FieldElement>,
    },
    Div {
        divisor: u128,
        u: FieldElement,
        q: Option<FieldElement>,
        w: Option<FieldElement>,
        z: BTreeMap<PartyId, FieldElement>,
    },
    AwaitDeal,
    Sum {
        received: BTreeMap<PartyId, FieldElement>,
    },
}

#[derive(Debug)]
struct Running {
    exercise: Exercise,
    pending: Pending,
}

#[derive(Debug)]
pub struct Member {
    cfg: MemberConfig,
    lambdas: Vec<FieldElement>,
    rng: ChaCha20Rng,
    store: DataStore,
    running: Option<Running>,
    last_started: ExerciseId,
    buffered: BTreeMap<ExerciseId, Vec<Frame>>,
    counters: TrafficCounters,
    leak_events: u64,
    phase: Phase,
    kind: Option<&'static str>,
    out: Vec<Outgoing>,
}

impl Member {
    pub fn new(cfg: MemberConfig, store: DataStore) -> Result<Self, MemberError> {
        if cfg.id.get() as usize > cfg.sharing.parties() {
            return Err(MemberError::Invalid(format!(
                "{} is outside a {}-party session",
                cfg.id,
                cfg.sharing.parties()
            )));
        }
        Ok(Self {
            lambdas: recombination_vector(&cfg.sharing)?,
            rng: endpoint_rng(cfg.seed, Endpoint::Member(cfg.id)),
            cfg,
            store,
            running: None,
            last_started: 0,
            buffered: BTreeMap::new(),
            counters: TrafficCounters::new(),
            leak_events: 0,
            phase: Phase::Active,
            kind: None,
            out: Vec::new(),
        })
    }

    pub fn id(&self) -> PartyId {
        self.cfg.id
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::Member(self.cfg.id)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn store(&self) -> &DataStore {
        &self.store
    }

    pub fn counters(&self) -> &TrafficCounters {
        &self.counters
    }

    pub fn leak_events(&self) -> u64 {
        self.leak_events
    }

    pub fn into_store(self) -> DataStore {
        self.store
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done | Phase::Crashed)
    }

    /// Processes one incoming frame and returns the frames to send.
    pub fn handle(&mut self, frame: Frame) -> Vec<Outgoing> {
        match self.phase {
            Phase::Crashed | Phase::Done => return Vec::new(),
            Phase::Hung => {
                if frame.opcode == Opcode::Shutdown {
                    self.phase = Phase::Crashed;
                }
                return Vec::new();
            }
            Phase::Failed if frame.opcode != Opcode::Shutdown => return Vec::new(),
            _ => {}
        }
        let exercise = frame.exercise;
        if let Err(e) = self.dispatch(frame) {
            self.nack(exercise, &e);
        }
        std::mem::take(&mut self.out)
    }

    fn nack(&mut self, exercise: ExerciseId, error: &MemberError) {
        tracing::warn!(member = self.cfg.id.get(), exercise, %error, "nack");
        let frame = Frame::new(Opcode::Nack, exercise, self.cfg.session_id, self.endpoint())
            .with_secret_id(error.to_string());
        self.send(Endpoint::Manager, frame);
        self.phase = Phase::Failed;
    }

    fn send(&mut self, to: Endpoint, frame: Frame) {
        self.counters.record(&frame, self.kind);
        self.out.push(Outgoing { to, frame });
    }

    fn frame(&self, opcode: Opcode, exercise: ExerciseId) -> Frame {
        Frame::new(opcode, exercise, self.cfg.session_id, self.endpoint())
    }

    fn dispatch(&mut self, frame: Frame) -> Result<(), MemberError> {
        if frame.session != self.cfg.session_id {
            return Err(MemberError::WrongSession {
                got: frame.session,
                expected: self.cfg.session_id,
            });
        }
        match (frame.opcode, frame.sender) {
            (Opcode::Shutdown, Endpoint::Manager) => {
                let report = Report {
                    counters: self.counters.clone(),
                    leak_events: self.leak_events,
                };
                let f = report.to_frame(self.cfg.session_id, self.endpoint());
                self.out.push(Outgoing {
                    to: Endpoint::Manager,
                    frame: f,
                });
                self.phase = Phase::Done;
                Ok(())
            }
            (Opcode::Exercise, Endpoint::Manager) => {
                if let Some(fault) = self.cfg.fault.filter(|f| frame.exercise > f.after) {
                    tracing::warn!(member = self.cfg.id.get(), ?fault.mode, "injected fault");
                    self.phase = match fault.mode {
                        FaultMode::Disconnect => Phase::Crashed,
                        FaultMode::Hang => Phase::Hung,
                    };
                    return Ok(());
                }
                let ex = Exercise::decode(frame.exercise, &frame.secret_id)
                    .map_err(|e| MemberError::BadExercise(frame.exercise, e.to_string()))?;
                self.start(ex)
            }
            (Opcode::MulReshare | Opcode::ShareDist | Opcode::RevealTo | Opcode::JrszDeal, _) => {
                let current = self.running.as_ref().map(|r| r.exercise.id);
                if current == Some(frame.exercise) {
                    self.on_data(frame)
                } else if frame.exercise > self.last_started {
                    self.buffered.entry(frame.exercise).or_default().push(frame);
                    Ok(())
                } else {
                    Err(MemberError::Unexpected {
                        opcode: frame.opcode,
                        from: frame.sender,
                        exercise: frame.exercise,
                    })
                }
            }
            (opcode, from) => Err(MemberError::Unexpected {
                opcode,
                from,
                exercise: frame.exercise,
            }),
        }
    }

    fn start(&mut self, ex: Exercise) -> Result<(), MemberError> {
        if ex.id <= self.last_started || self.running.is_some() {
            return Err(MemberError::OutOfOrder {
                got: ex.id,
                last: self.last_started,
            });
        }
        self.last_started = ex.id;
        self.kind = Some(ex.op.kind());
        let id = ex.id;
        self.running = Some(Running {
            exercise: ex.clone(),
            pending: Pending::AwaitDeal,
        });
        let pending = self.begin(&ex)?;
        match pending {
            None => self.finish(),
            Some(p) => {
                if let Some(r) = self.running.as_mut() {
                    r.pending = p;
                }
            }
        }
        for frame in self.buffered.remove(&id).unwrap_or_default() {
            if self.running.as_ref().map(|r| r.exercise.id) != Some(id) {
                return Err(MemberError::Unexpected {
                    opcode: frame.opcode,
                    from: frame.sender,
                    exercise: frame.exercise,
                });
            }
            self.on_data(frame)?;
        }
        Ok(())
    }

    fn finish(&mut self) {
        if let Some(r) = self.running.as_ref() {
            let f = self.frame(Opcode::Finished, r.exercise.id);
            self.send(Endpoint::Manager, f);
        }
        self.running = None;
        self.kind = None;
    }

    fn others(&self) -> impl Iterator<Item = PartyId> {
        let me = self.cfg.id;
        self.cfg.sharing.party_ids().filter(move |&p| p != me)
    }

    fn field(&self) -> crate::field::FieldParams {
        self.cfg.sharing.field()
    }

    fn element(&self, value: u128) -> Result<FieldElement, MemberError> {
        Ok(self.field().canonical(value)?)
    }

    /// Shamir-shares `values` and sends party `j` its column in one frame.
    /// Returns this member's own column.
    fn deal(
        &mut self,
        values: &[FieldElement],
        opcode: Opcode,
        exercise: ExerciseId,
        tag: &str,
    ) -> Result<Vec<FieldElement>, MemberError> {
        let mut columns = vec![Vec::with_capacity(values.len()); self.cfg.sharing.parties()];
        for &v in values {
            for s in shamir_share(v, &self.cfg.sharing, &SecretId::new(""), &mut self.rng)? {
                columns[s.owner.index()].push(s.value);
            }
        }
        let others: Vec<PartyId> = self.others().collect();
        for p in others {
            let f = self
                .frame(opcode, exercise)
                .with_secret_id(tag)
                .with_payload(columns[p.index()].iter().map(|v| v.value()).collect());
            self.send(Endpoint::Member(p), f);
        }
        Ok(std::mem::take(&mut columns[self.cfg.id.index()]))
    }

    /// Starts an exercise; `None` means it completed locally.
    fn begin(&mut self, ex: &Exercise) -> Result<Option<Pending>, MemberError> {
        let me = self.cfg.id;
        let field = self.field();
        match &ex.op {
            Op::Add { a, b, out } | Op::Sub { a, b, out } => {
                let (x, y) = (self.store.get(a)?, self.store.get(b)?);
                let sign = if matches!(ex.op, Op::Add { .. }) {
                    1
                } else {
                    -1
                };
                let value = match (x, y) {
                    (Stored::Shamir(x), Stored::Shamir(y)) => {
                        Stored::Shamir(x + field.from_i128(sign) * y)
                    }
                    (Stored::Additive(x), Stored::Additive(y)) => {
                        Stored::Additive(x + field.from_i128(sign) * y)
                    }
                    (Stored::Plain(x), Stored::Plain(y)) => {
                        Stored::Plain(x + field.from_i128(sign) * y)
                    }
                    (x, y) => {
                        return Err(MemberError::Invalid(format!(
                            "cannot combine {} and {} values",
                            x.kind(),
                            y.kind()
                        )))
                    }
                };
                self.store.insert(out.clone(), value)?;
                Ok(None)
            }
            Op::Linear {
                terms,
                constant,
                out,
            } => {
                let mut kind: Option<&'static str> = None;
                let mut acc = field.zero();
                for (c, id) in terms {
                    let v = self.store.get(id)?;
                    if kind.is_some_and(|k| k != v.kind()) {
                        return Err(MemberError::Invalid(format!(
                            "linear combination mixes value kinds at {id}"
                        )));
                    }
                    kind = Some(v.kind());
                    acc += field.from_i128(*c) * v.value();
                }
                let value = match kind {
                    None | Some("shamir") => Stored::Shamir(acc + field.from_i128(*constant)),
                    Some("plain") => Stored::Plain(acc + field.from_i128(*constant)),
                    _ => {
                        // Additive sharings carry the constant at one party only.
                        let c = if me.get() == 1 { *constant } else { 0 };
                        Stored::Additive(acc + field.from_i128(c))
                    }
                };
                self.store.insert(out.clone(), value)?;
                Ok(None)
            }
            Op::SelectPublic {
                test,
                if_zero,
                otherwise,
                out,
            } => {
                let value = if self.store.plain(test)?.is_zero() {
                    Stored::Shamir(self.element(*if_zero)?)
                } else {
                    self.store.get(otherwise)?
                };
                self.store.insert(out.clone(), value)?;
                Ok(None)
            }
            Op::ApproxFraction {
                num,
                den,
                mask,
                scale,
                parties,
                if_empty,
                out,
            } => {
                let n = self.store.plain(num)?.value();
                let d = self.store.plain(den)?.value();
                let local = match (rounded_fraction(n, d, *scale, *parties), if_empty) {
                    (Some(v), _) => v,
                    (None, Some(fallback)) => rounded_fraction(*fallback, *scale, *scale, *parties)
                        .ok_or_else(|| MemberError::Invalid("zero scale".into()))?,
                    (None, None) => {
                        return Err(MemberError::Invalid(format!(
                            "local denominator {den} is zero"
                        )))
                    }
                };
                let value = field.element(local) + self.store.additive(mask)?;
                self.store.insert(out.clone(), Stored::Additive(value))?;
                Ok(None)
            }
            Op::Mul { a, b, .. } => {
                let x = self.store.shamir(a)?;
                let y = self.store.shamir(b)?;
                let subs = mul_reshare_start(x, y, &self.cfg.sharing, &mut self.rng)?;
                let others: Vec<PartyId> = self.others().collect();
                for p in others {
                    let f = self
                        .frame(Opcode::MulReshare, ex.id)
                        .with_payload(vec![subs[p.index()].value()]);
                    self.send(Endpoint::Member(p), f);
                }
                Ok(Some(Pending::Mul {
                    received: BTreeMap::from([(me, subs[me.index()])]),
                }))
            }
            Op::Share {
                dealer,
                inputs,
                outputs,
            } => {
                if inputs.len() != outputs.len() {
                    return Err(MemberError::Invalid(
                        "share needs one output per input".into(),
                    ));
                }
                if *dealer != me {
                    return Ok(Some(Pending::AwaitShares {
                        from: Endpoint::Member(*dealer),
                    }));
                }
                let values = inputs
                    .iter()
                    .map(|id| self.store.plain(id))
                    .collect::<Result<Vec<_>, _>>()?;
                let tag = outputs.first().map(|o| o.0.clone()).unwrap_or_default();
                let own = self.deal(&values, Opcode::ShareDist, ex.id, &tag)?;
                for (id, v) in outputs.iter().zip(own) {
                    self.store.insert(id.clone(), Stored::Shamir(v))?;
                }
                Ok(None)
            }
            Op::ClientInput { .. } => Ok(Some(Pending::AwaitShares {
                from: Endpoint::Client,
            })),
            Op::Reveal { a, target, out } => {
                let share = self.store.shamir(a)?;
                let to_send: Vec<Endpoint> = match target {
                    RevealTarget::Member(t) if *t == me => vec![],
                    RevealTarget::Member(t) => vec![Endpoint::Member(*t)],
                    RevealTarget::All => self.others().map(Endpoint::Member).collect(),
                    RevealTarget::Client => vec![Endpoint::Client],
                };
                if let RevealTarget::Member(t) = target {
                    if t.get() as usize > self.cfg.sharing.parties() {
                        return Err(MemberError::Invalid(format!("no such member {t}")));
                    }
                }
                for to in to_send {
                    let f = self
                        .frame(Opcode::RevealTo, ex.id)
                        .with_secret_id(out.0.clone())
                        .with_payload(vec![share.value()]);
                    self.send(to, f);
                }
                let receives = match target {
                    RevealTarget::Member(t) => *t == me,
                    RevealTarget::All => true,
                    RevealTarget::Client => false,
                };
                Ok(receives.then(|| Pending::Collect {
                    received: BTreeMap::from([(me, share)]),
                }))
            }
            Op::DivPublic { u, divisor, .. } => {
                if *divisor == 0 || *divisor >= field.modulus() {
                    return Err(MemberError::Invalid(format!(
                        "bad public divisor {divisor}"
                    )));
                }
                let u = self.store.shamir(u)?;
                let mut pending = Pending::Div {
                    divisor: *divisor,
                    u,
                    q: None,
                    w: None,
                    z: BTreeMap::new(),
                };
                if me == self.cfg.alice {
                    let (r, q) = division_mask(*divisor, self.cfg.rho, &mut self.rng)?;
                    let own = self.deal(
                        &[field.element(r), field.element(q)],
                        Opcode::ShareDist,
                        ex.id,
                        "mask",
                    )?;
                    self.div_masked(ex.id, &mut pending, own[0], own[1])?;
                }
                Ok(Some(pending))
            }
            Op::Jrsz { .. } => Ok(Some(Pending::AwaitDeal)),
            Op::Sq2pq { a, .. } => {
                let mine = self.store.additive(a)?;
                let own = self.deal(&[mine], Opcode::ShareDist, ex.id, "")?;
                Ok(Some(Pending::Sum {
                    received: BTreeMap::from([(me, own[0])]),
                }))
            }
            Op::JointRandom { .. } => {
                let mine = field.sample_uniform(&mut self.rng)?;
                let own = self.deal(&[mine], Opcode::ShareDist, ex.id, "")?;
                Ok(Some(Pending::Sum {
                    received: BTreeMap::from([(me, own[0])]),
                }))
            }
        }
    }

    /// Holding `r` and `q`: send (or keep) the masked share `u + r` for Bob.
    fn div_masked(
        &mut self,
        exercise: ExerciseId,
        pending: &mut Pending,
        r: FieldElement,
        q_share: FieldElement,
    ) -> Result<(), MemberError> {
        let Pending::Div { u, q, .. } = pending else {
            unreachable!("division state");
        };
        *q = Some(q_share);
        let z = *u + r;
        if self.cfg.id == self.cfg.bob {
            self.div_collect_z(exercise, pending, self.cfg.id, z)
        } else {
            let f = self
                .frame(Opcode::RevealTo, exercise)
                .with_secret_id("masked")
                .with_payload(vec![z.value()]);
            self.send(Endpoint::Member(self.cfg.bob), f);
            Ok(())
        }
    }

    fn div_collect_z(
        &mut self,
        exercise: ExerciseId,
        pending: &mut Pending,
        from: PartyId,
        share: FieldElement,
    ) -> Result<(), MemberError> {
        let Pending::Div { z, w, divisor, .. } = pending else {
            unreachable!("division state");
        };
        if z.insert(from, share).is_some() {
            return Err(MemberError::Invalid(format!(
                "duplicate masked share from {from}"
            )));
        }
        if z.len() < self.cfg.sharing.parties() {
            return Ok(());
        }
        let values: Vec<FieldElement> = z.values().copied().collect();
        let revealed = mul_reshare_finish(&values, &self.lambdas);
        let divisor = *divisor;
        if reveal_leaks(revealed.value(), divisor, self.cfg.rho) {
            self.leak_events += 1;
        }
        let residue = self.field().element(division_residue(revealed, divisor));
        let own = self.deal(&[residue], Opcode::ShareDist, exercise, "residue")?;
        *w = Some(own[0]);
        Ok(())
    }

    fn expect_len(frame: &Frame, expected: usize) -> Result<(), MemberError> {
        if frame.payload.len() != expected {
            return Err(MemberError::PayloadLength {
                got: frame.payload.len(),
                expected,
            });
        }
        Ok(())
    }

    fn on_data(&mut self, frame: Frame) -> Result<(), MemberError> {
        let mut running = self
            .running
            .take()
            .expect("data only routed to a running exercise");
        let result = self.on_data_inner(&mut running, &frame);
        let done = matches!(result, Ok(true));
        self.running = Some(running);
        if done {
            self.finish();
        }
        result.map(|_| ())
    }

    fn sender_member(&self, frame: &Frame) -> Result<PartyId, MemberError> {
        match frame.sender {
            Endpoint::Member(p)
                if p.get() as usize <= self.cfg.sharing.parties() && p != self.cfg.id =>
            {
                Ok(p)
            }
            from => Err(MemberError::Unexpected {
                opcode: frame.opcode,
                from,
                exercise: frame.exercise,
            }),
        }
    }

    /// Returns whether the exercise is complete.
    fn on_data_inner(&mut self, running: &mut Running, frame: &Frame) -> Result<bool, MemberError> {
        let unexpected = || MemberError::Unexpected {
            opcode: frame.opcode,
            from: frame.sender,
            exercise: frame.exercise,
        };
        let n = self.cfg.sharing.parties();
        let ex_id = running.exercise.id;
        match (&mut running.pending, frame.opcode) {
            (Pending::Mul { received }, Opcode::MulReshare) => {
                let from = self.sender_member(frame)?;
                Self::expect_len(frame, 1)?;
                let v = self.element(frame.payload[0])?;
                if received.insert(from, v).is_some() {
                    return Err(unexpected());
                }
                if received.len() < n {
                    return Ok(false);
                }
                let values: Vec<FieldElement> = received.values().copied().collect();
                let product = mul_reshare_finish(&values, &self.lambdas);
                let out = running.exercise.op.outputs()[0].clone();
                self.store.insert(out, Stored::Shamir(product))?;
                Ok(true)
            }
            (Pending::AwaitShares { from }, Opcode::ShareDist) if frame.sender == *from => {
                let outputs: Vec<SecretId> =
                    running.exercise.op.outputs().into_iter().cloned().collect();
                Self::expect_len(frame, outputs.len())?;
                for (id, &v) in outputs.into_iter().zip(&frame.payload) {
                    let v = self.element(v)?;
                    self.store.insert(id, Stored::Shamir(v))?;
                }
                Ok(true)
            }
            (Pending::Collect { received }, Opcode::RevealTo) => {
                let from = self.sender_member(frame)?;
                Self::expect_len(frame, 1)?;
                let v = self.element(frame.payload[0])?;
                if received.insert(from, v).is_some() {
                    return Err(unexpected());
                }
                if received.len() < n {
                    return Ok(false);
                }
                let values: Vec<FieldElement> = received.values().copied().collect();
                let value = mul_reshare_finish(&values, &self.lambdas);
                let out = running.exercise.op.outputs()[0].clone();
                self.store.insert(out, Stored::Plain(value))?;
                Ok(true)
            }
            (Pending::Div { .. }, Opcode::ShareDist) => {
                let from = self.sender_member(frame)?;
                if from == self.cfg.alice {
                    Self::expect_len(frame, 2)?;
                    let r = self.element(frame.payload[0])?;
                    let q = self.element(frame.payload[1])?;
                    if matches!(running.pending, Pending::Div { q: Some(_), .. }) {
                        return Err(unexpected());
                    }
                    self.div_masked(ex_id, &mut running.pending, r, q)?;
                } else if from == self.cfg.bob {
                    Self::expect_len(frame, 1)?;
                    let v = self.element(frame.payload[0])?;
                    let Pending::Div { w, .. } = &mut running.pending else {
                        unreachable!()
                    };
                    if w.replace(v).is_some() {
                        return Err(unexpected());
                    }
                } else {
                    return Err(unexpected());
                }
                self.div_try_finish(running)
            }
            (Pending::Div { .. }, Opcode::RevealTo) if self.cfg.id == self.cfg.bob => {
                let from = self.sender_member(frame)?;
                Self::expect_len(frame, 1)?;
                let v = self.element(frame.payload[0])?;
                self.div_collect_z(ex_id, &mut running.pending, from, v)?;
                self.div_try_finish(running)
            }
            (Pending::AwaitDeal, Opcode::JrszDeal) if frame.sender == Endpoint::Manager => {
                Self::expect_len(frame, 1)?;
                let v = self.element(frame.payload[0])?;
                let out = running.exercise.op.outputs()[0].clone();
                self.store.insert(out, Stored::Additive(v))?;
                Ok(true)
            }
            (Pending::Sum { received }, Opcode::ShareDist) => {
                let from = self.sender_member(frame)?;
                Self::expect_len(frame, 1)?;
                let v = self.element(frame.payload[0])?;
                if received.insert(from, v).is_some() {
                    return Err(unexpected());
                }
                if received.len() < n {
                    return Ok(false);
                }
                let sum: FieldElement = received.values().copied().sum();
                let out = running.exercise.op.outputs()[0].clone();
                self.store.insert(out, Stored::Shamir(sum))?;
                Ok(true)
            }
            _ => Err(unexpected()),
        }
    }

    fn div_try_finish(&mut self, running: &mut Running) -> Result<bool, MemberError> {
        let Pending::Div {
            u,
            q: Some(q),
            w: Some(w),
            ..
        } = running.pending
        else {
            return Ok(false);
        };
        let Op::DivPublic { divisor, out, .. } = &running.exercise.op else {
            unreachable!("division state");
        };
        let inv = self.field().element(*divisor).inv()?;
        self.store
            .insert(out.clone(), Stored::Shamir(division_finish(u, q, w, inv)))?;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldParams, SMALL_PRIME};

    fn member() -> Member {
        let sharing = SharingParams::new(3, 1, FieldParams::new(SMALL_PRIME).unwrap()).unwrap();
        let cfg = MemberConfig {
            id: PartyId::new(3).unwrap(),
            sharing,
            session_id: 1,
            alice: PartyId::new(1).unwrap(),
            bob: PartyId::new(2).unwrap(),
            rho: 12,
            seed: 0,
            fault: None,
        };
        Member::new(cfg, DataStore::new()).unwrap()
    }

    fn exercise(id: ExerciseId, text: &str) -> Frame {
        Frame::new(Opcode::Exercise, id, 1, Endpoint::Manager).with_secret_id(text)
    }

    #[test]
    fn unknown_operation_is_nacked() {
        let mut m = member();
        let out = m.handle(exercise(1, r#"{"teleport":{"a":"x"}}"#));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].frame.opcode, Opcode::Nack);
        assert_eq!(m.phase(), Phase::Failed);
    }

    #[test]
    fn local_exercise_finishes_and_early_data_is_buffered() {
        let mut m = member();
        let p1 = Endpoint::Member(PartyId::new(1).unwrap());
        // Share from the dealer arrives before the exercise itself.
        let early = Frame::new(Opcode::ShareDist, 2, 1, p1).with_payload(vec![77]);
        assert!(m.handle(early).is_empty());
        let c = Exercise {
            id: 1,
            op: Op::Linear {
                terms: vec![],
                constant: 5,
                out: "c".into(),
            },
        };
        let out = m.handle(exercise(1, &c.encode()));
        assert_eq!(out[0].frame.opcode, Opcode::Finished);
        let share = Exercise {
            id: 2,
            op: Op::Share {
                dealer: PartyId::new(1).unwrap(),
                inputs: vec!["v".into()],
                outputs: vec!["s".into()],
            },
        };
        let out = m.handle(exercise(2, &share.encode()));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].frame.opcode, Opcode::Finished);
        assert_eq!(m.store().shamir(&"s".into()).unwrap().value(), 77);
        assert_eq!(m.store().shamir(&"c".into()).unwrap().value(), 5);
    }

    #[test]
    fn stale_and_foreign_frames_are_nacked() {
        let mut m = member();
        let wrong_session = Frame::new(Opcode::Exercise, 1, 9, Endpoint::Manager);
        assert_eq!(m.handle(wrong_session)[0].frame.opcode, Opcode::Nack);

        let mut m = member();
        let c = Exercise {
            id: 1,
            op: Op::Linear {
                terms: vec![],
                constant: 5,
                out: "c".into(),
            },
        };
        m.handle(exercise(1, &c.encode()));
        let p1 = Endpoint::Member(PartyId::new(1).unwrap());
        let stale = Frame::new(Opcode::MulReshare, 1, 1, p1).with_payload(vec![1]);
        assert_eq!(m.handle(stale)[0].frame.opcode, Opcode::Nack);
    }
}
