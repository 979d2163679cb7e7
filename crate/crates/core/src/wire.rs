//! Canonical message framing: `type tag (1 byte) || length (u32 BE) || payload`.
//!
//! Payload fields are written big-endian; variable-length byte strings carry a
//! u32 length prefix. Encodings are bit-stable for a fixed simulation seed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("invalid field: {0}")]
    Invalid(&'static str),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

/// Message type tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum MsgType {
    Enrollment = 0x01,
    PacketIn = 0x02,
    RuleInstall = 0x03,
    PskGrant = 0x04,
    DomainKeyUpdate = 0x05,
    BetaFrame = 0x06,
    GammaPacket = 0x07,
    RuleAck = 0x08,
    AttestChallenge = 0x09,
    AttestEvidence = 0x0a,
    /// Enclave image handed to a host for loading.
    DeployRequest = 0x0b,
    FlushRules = 0x0c,
    ClientHello = 0x10,
    ServerHello = 0x11,
    ClientFinished = 0x12,
    Record = 0x13,
    PkClientHello = 0x14,
    PkServerHello = 0x15,
    PkClientFinished = 0x16,
}

impl TryFrom<u8> for MsgType {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        use MsgType::*;
        Ok(match v {
            0x01 => Enrollment,
            0x02 => PacketIn,
            0x03 => RuleInstall,
            0x04 => PskGrant,
            0x05 => DomainKeyUpdate,
            0x06 => BetaFrame,
            0x07 => GammaPacket,
            0x08 => RuleAck,
            0x09 => AttestChallenge,
            0x0a => AttestEvidence,
            0x0b => DeployRequest,
            0x0c => FlushRules,
            0x10 => ClientHello,
            0x11 => ServerHello,
            0x12 => ClientFinished,
            0x13 => Record,
            0x14 => PkClientHello,
            0x15 => PkServerHello,
            0x16 => PkClientFinished,
            other => return Err(WireError::UnknownTag(other)),
        })
    }
}

pub fn frame(tag: MsgType, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + payload.len());
    out.push(tag as u8);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    out
}

/// Parses exactly one frame occupying all of `bytes`.
pub fn unframe(bytes: &[u8]) -> Result<(MsgType, &[u8]), WireError> {
    if bytes.len() < 5 {
        return Err(WireError::Truncated("frame header"));
    }
    let tag = MsgType::try_from(bytes[0])?;
    let len = u32::from_be_bytes(bytes[1..5].try_into().expect("length checked")) as usize;
    let payload = &bytes[5..];
    match payload.len().cmp(&len) {
        std::cmp::Ordering::Less => Err(WireError::Truncated("frame payload")),
        std::cmp::Ordering::Greater => Err(WireError::Trailing(payload.len() - len)),
        std::cmp::Ordering::Equal => Ok((tag, payload)),
    }
}

#[derive(Default, Debug)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    /// Fixed-size field, no length prefix.
    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.raw(v)
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated(what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1, "u8")?[0])
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2, "u16")?.try_into().expect("len")))
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4, "u32")?.try_into().expect("len")))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8, "u64")?.try_into().expect("len")))
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N, "fixed field")?.try_into().expect("len"))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.u32()? as usize;
        self.take(n, "byte string")
    }

    pub fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Trailing(self.buf.len()))
        }
    }
}
