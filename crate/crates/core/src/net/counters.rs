//! Traffic accounting and the per-operation message cost model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::net::exercise::{Exercise, Op, RevealTarget};
use crate::net::frame::{Frame, Opcode};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub messages: u64,
    pub bytes: u64,
}

impl Tally {
    fn add(&mut self, messages: u64, bytes: u64) {
        self.messages += messages;
        self.bytes += bytes;
    }

    fn merge(&mut self, other: &Tally) {
        self.add(other.messages, other.bytes);
    }
}

/// Traffic attributed to one exercise kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindTally {
    pub exercises: u64,
    /// Protocol messages between parties (shares, reveals, deals).
    pub data: Tally,
    /// EXERCISE, FINISHED and NACK frames.
    pub control: Tally,
}

/// Sent-frame counters; every endpoint counts what it sends.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficCounters {
    pub total: Tally,
    pub by_opcode: BTreeMap<String, Tally>,
    pub by_kind: BTreeMap<String, KindTally>,
}

impl TrafficCounters {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one sent frame belonging to an exercise of `kind`.
    pub fn record(&mut self, frame: &Frame, kind: Option<&str>) {
        if !frame.opcode.is_counted() {
            return;
        }
        let bytes = frame.wire_len() as u64;
        self.total.add(1, bytes);
        self.by_opcode
            .entry(frame.opcode.name().to_string())
            .or_default()
            .add(1, bytes);
        let kind = kind.unwrap_or("UNSCHEDULED").to_string();
        let entry = self.by_kind.entry(kind).or_default();
        if frame.opcode.is_control() {
            entry.control.add(1, bytes);
        } else {
            entry.data.add(1, bytes);
        }
        if frame.opcode == Opcode::Exercise {
            entry.exercises += 1;
        }
    }

    pub fn merge(&mut self, other: &TrafficCounters) {
        self.total.merge(&other.total);
        for (k, v) in &other.by_opcode {
            self.by_opcode.entry(k.clone()).or_default().merge(v);
        }
        for (k, v) in &other.by_kind {
            let e = self.by_kind.entry(k.clone()).or_default();
            e.exercises += v.exercises;
            e.data.merge(&v.data);
            e.control.merge(&v.control);
        }
    }

    pub fn opcode(&self, opcode: Opcode) -> Tally {
        self.by_opcode
            .get(opcode.name())
            .copied()
            .unwrap_or_default()
    }

    /// Messages that are not scheduling traffic.
    pub fn data_messages(&self) -> u64 {
        self.by_kind.values().map(|k| k.data.messages).sum()
    }

    /// Sum over opcodes equals the totals.
    pub fn is_conserved(&self) -> bool {
        let (m, b) = self
            .by_opcode
            .values()
            .fold((0, 0), |(m, b), t| (m + t.messages, b + t.bytes));
        let (km, kb) = self.by_kind.values().fold((0, 0), |(m, b), k| {
            (
                m + k.data.messages + k.control.messages,
                b + k.data.bytes + k.control.bytes,
            )
        });
        m == self.total.messages && b == self.total.bytes && km == m && kb == b
    }

    /// Aligned text table, one row per opcode then one per exercise kind.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>12} {:>14}", "opcode", "messages", "bytes");
        for (name, t) in &self.by_opcode {
            let _ = writeln!(out, "{name:<16} {:>12} {:>14}", t.messages, t.bytes);
        }
        let _ = writeln!(
            out,
            "{:<16} {:>12} {:>14}",
            "total", self.total.messages, self.total.bytes
        );
        let _ = writeln!(
            out,
            "\n{:<16} {:>10} {:>12} {:>14} {:>12}",
            "exercise", "count", "data msgs", "data bytes", "control"
        );
        for (name, k) in &self.by_kind {
            let _ = writeln!(
                out,
                "{name:<16} {:>10} {:>12} {:>14} {:>12}",
                k.exercises, k.data.messages, k.data.bytes, k.control.messages
            );
        }
        out
    }
}

/// Closed-form message counts for `n` members.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostModel {
    pub members: u64,
}

impl CostModel {
    pub fn new(members: usize) -> Self {
        Self {
            members: members as u64,
        }
    }

    /// Data messages of one exercise.
    pub fn data_messages(&self, op: &Op) -> u64 {
        let n = self.members;
        match op {
            Op::Add { .. }
            | Op::Sub { .. }
            | Op::Linear { .. }
            | Op::ApproxFraction { .. }
            | Op::SelectPublic { .. } => 0,
            Op::Mul { .. } | Op::Sq2pq { .. } | Op::JointRandom { .. } => n * (n - 1),
            Op::Share { .. } => n - 1,
            Op::ClientInput { .. } | Op::Jrsz { .. } => n,
            Op::Reveal { target, .. } => match target {
                RevealTarget::Member(_) => n - 1,
                RevealTarget::All => n * (n - 1),
                RevealTarget::Client => n,
            },
            Op::DivPublic { .. } => 3 * (n - 1),
        }
    }

    /// One EXERCISE to and one FINISHED from every member.
    pub fn control_messages(&self) -> u64 {
        2 * self.members
    }

    pub fn plan_messages(&self, plan: &[Exercise]) -> u64 {
        plan.iter()
            .map(|e| self.data_messages(&e.op) + self.control_messages())
            .sum()
    }

    pub fn plan_data_messages(&self, plan: &[Exercise]) -> u64 {
        plan.iter().map(|e| self.data_messages(&e.op)).sum()
    }

    /// Sequential communication rounds of one exercise (excluding scheduling).
    pub fn rounds(&self, op: &Op) -> u64 {
        match op {
            Op::DivPublic { .. } => 3,
            op if self.data_messages(op) > 0 => 1,
            _ => 0,
        }
    }
}
