//! Manager endpoint: dispatches the exercise queue and deals shares of zero.
//!
//! An exercise is sent to every member and the next one only after all
//! members have reported FINISHED for it.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha20Rng;

use crate::net::counters::TrafficCounters;
use crate::net::exercise::{Exercise, ExerciseId, Op};
use crate::net::frame::{Endpoint, Frame, Opcode};
use crate::net::member::{endpoint_rng, Outgoing, Report};
use crate::sharing::{jrsz, PartyId, SecretId, SharingParams};

/// How the manager produces the shares of zero for JRSZ exercises.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Dealer {
    #[default]
    Random,
    /// Fixed shares (party order) per output id; ids not listed are random.
    Scripted(BTreeMap<SecretId, Vec<u128>>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AbortReason {
    /// No progress within the timeout while waiting on this exercise.
    Deadlock {
        exercise: ExerciseId,
    },
    Disconnected(Endpoint),
    Nack {
        from: Endpoint,
        exercise: ExerciseId,
        reason: String,
    },
    Protocol(String),
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AbortReason::Deadlock { exercise } => {
                write!(f, "no progress on exercise {exercise} before the timeout")
            }
            AbortReason::Disconnected(e) => write!(f, "{e} disconnected"),
            AbortReason::Nack {
                from,
                exercise,
                reason,
            } => write!(f, "{from} rejected exercise {exercise}: {reason}"),
            AbortReason::Protocol(m) => f.write_str(m),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManagerConfig {
    pub session_id: u64,
    pub sharing: SharingParams,
    pub seed: u64,
    pub dealer: Dealer,
    /// Whether a client takes part and must report.
    pub with_client: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum State {
    Running {
        next: usize,
        finished: BTreeSet<PartyId>,
    },
    Reporting {
        pending: BTreeSet<Endpoint>,
    },
    Done,
}

#[derive(Debug)]
pub struct Manager {
    cfg: ManagerConfig,
    plan: Vec<Exercise>,
    rng: ChaCha20Rng,
    state: State,
    counters: TrafficCounters,
    merged: TrafficCounters,
    leak_events: u64,
    abort: Option<AbortReason>,
    gone: BTreeSet<Endpoint>,
    out: Vec<Outgoing>,
}

impl Manager {
    pub fn new(cfg: ManagerConfig, plan: Vec<Exercise>) -> Self {
        Self {
            rng: endpoint_rng(cfg.seed, Endpoint::Manager),
            cfg,
            plan,
            state: State::Running {
                next: 0,
                finished: BTreeSet::new(),
            },
            counters: TrafficCounters::new(),
            merged: TrafficCounters::new(),
            leak_events: 0,
            abort: None,
            gone: BTreeSet::new(),
            out: Vec::new(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.state == State::Done
    }

    pub fn abort_reason(&self) -> Option<&AbortReason> {
        self.abort.as_ref()
    }

    /// Manager traffic merged with every report received so far.
    pub fn counters(&self) -> TrafficCounters {
        let mut all = self.counters.clone();
        all.merge(&self.merged);
        all
    }

    pub fn leak_events(&self) -> u64 {
        self.leak_events
    }

    /// Exercise currently waiting for FINISHED messages.
    pub fn current_exercise(&self) -> Option<ExerciseId> {
        match &self.state {
            State::Running { next, .. } => self.plan.get(*next).map(|e| e.id),
            _ => None,
        }
    }

    fn send(&mut self, to: Endpoint, frame: Frame, kind: Option<&str>) {
        if self.gone.contains(&to) {
            return;
        }
        self.counters.record(&frame, kind);
        self.out.push(Outgoing { to, frame });
    }

    pub fn start(&mut self) -> Vec<Outgoing> {
        self.dispatch_next();
        std::mem::take(&mut self.out)
    }

    fn members(&self) -> impl Iterator<Item = PartyId> {
        self.cfg.sharing.party_ids()
    }

    fn dispatch_next(&mut self) {
        let State::Running { next, .. } = self.state else {
            return;
        };
        let Some(ex) = self.plan.get(next).cloned() else {
            self.shutdown(false);
            return;
        };
        let text = ex.encode();
        let kind = ex.op.kind();
        let deal = match &ex.op {
            Op::Jrsz { out } => Some(self.deal_zero(out)),
            _ => None,
        };
        let members: Vec<PartyId> = self.members().collect();
        for p in members {
            let f = Frame::new(
                Opcode::Exercise,
                ex.id,
                self.cfg.session_id,
                Endpoint::Manager,
            )
            .with_secret_id(text.clone());
            self.send(Endpoint::Member(p), f, Some(kind));
            if let Some(shares) = &deal {
                let f = Frame::new(
                    Opcode::JrszDeal,
                    ex.id,
                    self.cfg.session_id,
                    Endpoint::Manager,
                )
                .with_secret_id(text_id(&ex.op))
                .with_payload(vec![shares[p.index()]]);
                self.send(Endpoint::Member(p), f, Some(kind));
            }
        }
    }

    fn deal_zero(&mut self, out: &SecretId) -> Vec<u128> {
        if let Dealer::Scripted(script) = &self.cfg.dealer {
            if let Some(v) = script.get(out) {
                return v.clone();
            }
        }
        jrsz(&self.cfg.sharing, out, &mut self.rng)
            .expect("valid sharing parameters")
            .into_iter()
            .map(|s| s.value.value())
            .collect()
    }

    fn shutdown(&mut self, aborted: bool) {
        let mut pending: BTreeSet<Endpoint> = self.members().map(Endpoint::Member).collect();
        if self.cfg.with_client {
            pending.insert(Endpoint::Client);
        }
        pending.retain(|e| !self.gone.contains(e));
        for &to in &pending {
            let f = Frame::new(Opcode::Shutdown, 0, self.cfg.session_id, Endpoint::Manager)
                .with_payload(vec![aborted as u128]);
            self.send(to, f, None);
        }
        self.state = if pending.is_empty() {
            State::Done
        } else {
            State::Reporting { pending }
        };
    }

    fn abort(&mut self, reason: AbortReason) {
        if self.abort.is_none() {
            tracing::warn!(%reason, "aborting session");
            self.abort = Some(reason);
        }
        if matches!(self.state, State::Running { .. }) {
            self.shutdown(true);
        }
    }

    pub fn handle(&mut self, frame: Frame) -> Vec<Outgoing> {
        self.on_frame(frame);
        std::mem::take(&mut self.out)
    }

    fn on_frame(&mut self, frame: Frame) {
        if frame.session != self.cfg.session_id {
            self.abort(AbortReason::Protocol(format!(
                "frame from {} for session {}",
                frame.sender, frame.session
            )));
            return;
        }
        match frame.opcode {
            Opcode::Nack => self.abort(AbortReason::Nack {
                from: frame.sender,
                exercise: frame.exercise,
                reason: frame.secret_id,
            }),
            Opcode::Report => {
                if let State::Reporting { pending } = &mut self.state {
                    if pending.remove(&frame.sender) {
                        match Report::from_frame(&frame) {
                            Ok(r) => {
                                self.merged.merge(&r.counters);
                                self.leak_events += r.leak_events;
                            }
                            Err(e) => tracing::warn!(from = %frame.sender, %e, "bad report"),
                        }
                        if pending.is_empty() {
                            self.state = State::Done;
                        }
                    }
                }
            }
            Opcode::Finished => self.on_finished(frame),
            other => self.abort(AbortReason::Protocol(format!(
                "manager cannot handle {other} from {}",
                frame.sender
            ))),
        }
    }

    fn on_finished(&mut self, frame: Frame) {
        let current = self.current_exercise();
        let n = self.cfg.sharing.parties();
        let State::Running { next, finished } = &mut self.state else {
            return;
        };
        let Endpoint::Member(p) = frame.sender else {
            let msg = format!("FINISHED from {}", frame.sender);
            self.abort(AbortReason::Protocol(msg));
            return;
        };
        if Some(frame.exercise) != current || !finished.insert(p) {
            let msg = format!("unexpected FINISHED({}) from {p}", frame.exercise);
            self.abort(AbortReason::Protocol(msg));
            return;
        }
        if finished.len() == n {
            *next += 1;
            finished.clear();
            self.dispatch_next();
        }
    }

    /// The transport lost `endpoint`.
    pub fn on_disconnect(&mut self, endpoint: Endpoint) -> Vec<Outgoing> {
        if !self.gone.insert(endpoint) {
            return Vec::new();
        }
        match &mut self.state {
            State::Running { .. } => self.abort(AbortReason::Disconnected(endpoint)),
            State::Reporting { pending } => {
                if pending.remove(&endpoint) {
                    if self.abort.is_none() {
                        self.abort = Some(AbortReason::Disconnected(endpoint));
                    }
                    if pending.is_empty() {
                        self.state = State::Done;
                    }
                }
            }
            State::Done => {}
        }
        std::mem::take(&mut self.out)
    }

    /// Nothing arrived within the timeout.
    pub fn on_timeout(&mut self) -> Vec<Outgoing> {
        match &self.state {
            State::Running { .. } => {
                let exercise = self.current_exercise().unwrap_or_default();
                self.abort(AbortReason::Deadlock { exercise });
            }
            State::Reporting { pending } => {
                tracing::warn!(missing = pending.len(), "reports missing at shutdown");
                if self.abort.is_none() {
                    let exercise = self.plan.last().map(|e| e.id).unwrap_or_default();
                    self.abort = Some(AbortReason::Deadlock { exercise });
                }
                self.state = State::Done;
            }
            State::Done => {}
        }
        std::mem::take(&mut self.out)
    }
}

fn text_id(op: &Op) -> String {
    op.outputs()
        .first()
        .map(|s| s.0.clone())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldParams, SMALL_PRIME};
    use crate::net::exercise::Planner;

    fn config() -> ManagerConfig {
        ManagerConfig {
            session_id: 5,
            sharing: SharingParams::new(3, 1, FieldParams::new(SMALL_PRIME).unwrap()).unwrap(),
            seed: 1,
            dealer: Dealer::Random,
            with_client: false,
        }
    }

    fn finished(ex: ExerciseId, p: u16) -> Frame {
        Frame::new(
            Opcode::Finished,
            ex,
            5,
            Endpoint::Member(PartyId::new(p).unwrap()),
        )
    }

    #[test]
    fn next_exercise_waits_for_every_member() {
        let mut plan = Planner::new();
        let a = plan.constant(1);
        plan.constant(2);
        plan.add(&a, &a);
        let mut m = Manager::new(config(), plan.into_exercises());
        let out = m.start();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|o| o.frame.exercise == 1));
        assert!(m.handle(finished(1, 1)).is_empty());
        assert!(m.handle(finished(1, 3)).is_empty());
        let out = m.handle(finished(1, 2));
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|o| o.frame.exercise == 2));
    }

    #[test]
    fn empty_plan_shuts_down_immediately() {
        let mut m = Manager::new(config(), Vec::new());
        let out = m.start();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|o| o.frame.opcode == Opcode::Shutdown));
        for p in 1..=3 {
            let r = Report::default().to_frame(5, Endpoint::Member(PartyId::new(p).unwrap()));
            m.handle(r);
        }
        assert!(m.is_done());
        assert_eq!(m.abort_reason(), None);
    }

    #[test]
    fn duplicate_finished_aborts() {
        let mut plan = Planner::new();
        plan.constant(1);
        let mut m = Manager::new(config(), plan.into_exercises());
        m.start();
        m.handle(finished(1, 1));
        m.handle(finished(1, 1));
        assert!(matches!(m.abort_reason(), Some(AbortReason::Protocol(_))));
    }

    #[test]
    fn scripted_dealer() {
        let mut cfg = config();
        cfg.dealer = Dealer::Scripted(BTreeMap::from([("z".into(), vec![1, 2, SMALL_PRIME - 3])]));
        let mut plan = Planner::new();
        plan.push(Op::Jrsz { out: "z".into() }).unwrap();
        let mut m = Manager::new(cfg, plan.into_exercises());
        let deals: Vec<u128> = m
            .start()
            .into_iter()
            .filter(|o| o.frame.opcode == Opcode::JrszDeal)
            .map(|o| o.frame.payload[0])
            .collect();
        assert_eq!(deals, vec![1, 2, SMALL_PRIME - 3]);
    }

    #[test]
    fn timeout_reports_deadlock() {
        let mut plan = Planner::new();
        plan.constant(1);
        let mut m = Manager::new(config(), plan.into_exercises());
        m.start();
        m.on_timeout();
        assert_eq!(
            m.abort_reason(),
            Some(&AbortReason::Deadlock { exercise: 1 })
        );
        m.on_timeout();
        assert!(m.is_done());
    }
}
