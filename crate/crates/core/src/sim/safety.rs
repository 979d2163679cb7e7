//! Message-level safety: every authenticated acceptance must be of a message
//! an honest component sent, and at most once per receiver.

use std::collections::BTreeSet;

use crate::crypto::sha256;
use crate::net::{NodeId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// Accepted bytes no honest component produced.
    Forged,
    /// Accepted the same bytes twice.
    Replayed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Violation {
    pub at: Tick,
    pub receiver: NodeId,
    pub kind: ViolationKind,
}

#[derive(Debug, Default)]
pub struct SafetyMonitor {
    honest: BTreeSet<[u8; 32]>,
    accepted: BTreeSet<(NodeId, [u8; 32])>,
    acceptances: u64,
    violations: Vec<Violation>,
}

impl SafetyMonitor {
    pub fn emitted(&mut self, bytes: &[u8]) {
        self.honest.insert(sha256(&[bytes]));
    }

    pub fn accepted(&mut self, at: Tick, receiver: NodeId, bytes: &[u8]) {
        self.acceptances += 1;
        let d = sha256(&[bytes]);
        let kind = if !self.honest.contains(&d) {
            Some(ViolationKind::Forged)
        } else if !self.accepted.insert((receiver, d)) {
            Some(ViolationKind::Replayed)
        } else {
            None
        };
        if let Some(kind) = kind {
            self.violations.push(Violation { at, receiver, kind });
        }
    }

    pub fn acceptances(&self) -> u64 {
        self.acceptances
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }
}
