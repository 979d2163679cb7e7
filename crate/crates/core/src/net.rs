//! Identifiers of network nodes and segments, and the [`Transport`] hook that
//! lets an adversary observe and rewrite protocol messages in transit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::enclave::PlatformId;
use crate::wire::MsgType;

/// Simulation time.
pub type Tick = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SwitchId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CtId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainId(pub u32);

impl fmt::Display for SwitchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "switch-{}", self.0)
    }
}

impl fmt::Display for CtId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ct-{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Controller,
    /// Untrusted host software of a platform (driver, attestation API).
    Host(PlatformId),
    Switch(SwitchId),
    Ct(CtId),
    Verifier,
}

impl NodeId {
    pub(crate) fn code(&self) -> [u8; 5] {
        let (k, v) = match self {
            NodeId::Controller => (0u8, 0u32),
            NodeId::Host(p) => (1, p.0),
            NodeId::Switch(s) => (2, s.0),
            NodeId::Ct(c) => (3, c.0),
            NodeId::Verifier => (4, 0),
        };
        let mut out = [k, 0, 0, 0, 0];
        out[1..].copy_from_slice(&v.to_be_bytes());
        out
    }
}

/// Logical communication segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    /// Controller <-> switch / compute task.
    Alpha,
    /// Switch <-> switch within a domain.
    Beta,
    /// Switch <-> local compute task.
    Gamma,
    /// Platform attestation traffic.
    Physical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hop {
    pub from: NodeId,
    pub to: NodeId,
    pub segment: Segment,
}

/// Carries one framed message. Returning `None` drops it.
pub trait Transport {
    fn carry(&mut self, hop: Hop, tag: MsgType, bytes: Vec<u8>) -> Option<Vec<u8>>;
}

/// Loss-free transport without observers.
#[derive(Debug, Default, Clone, Copy)]
pub struct Direct;

impl Transport for Direct {
    fn carry(&mut self, _hop: Hop, _tag: MsgType, bytes: Vec<u8>) -> Option<Vec<u8>> {
        Some(bytes)
    }
}

impl<F> Transport for F
where
    F: FnMut(Hop, MsgType, Vec<u8>) -> Option<Vec<u8>>,
{
    fn carry(&mut self, hop: Hop, tag: MsgType, bytes: Vec<u8>) -> Option<Vec<u8>> {
        self(hop, tag, bytes)
    }
}
