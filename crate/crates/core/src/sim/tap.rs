//! The network adversary: sees every message on every segment, and can drop,
//! delay, mutate, replay and forge them.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::enclave::PlatformId;
use crate::net::{Hop, NodeId, Segment, Tick, Transport};
use crate::wire::MsgType;

/// One observed (or injected) message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub tick: Tick,
    pub hop: Hop,
    pub tag: MsgType,
    pub bytes: Vec<u8>,
    pub injected: bool,
}

/// Selects messages by segment and/or tag; empty fields match anything.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageFilter {
    #[serde(default)]
    pub segment: Option<Segment>,
    #[serde(default)]
    pub tag: Option<MsgType>,
}

impl MessageFilter {
    pub fn matches(&self, hop: &Hop, tag: MsgType) -> bool {
        self.segment.is_none_or(|s| s == hop.segment) && self.tag.is_none_or(|t| t == tag)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TapRule {
    /// Drop the next `remaining` matching messages.
    Drop { filter: MessageFilter, remaining: u64 },
    /// Flip one bit in each of the next `remaining` matching messages.
    Mutate { filter: MessageFilter, remaining: u64 },
    /// Hold the next `remaining` matching messages back by `ticks`, so later
    /// traffic overtakes them.
    Delay { filter: MessageFilter, ticks: Tick, remaining: u64 },
    /// Drop each matching message independently with probability `rate`.
    DropRate { filter: MessageFilter, rate: f64 },
}

/// A message as the adversary lets it through.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Carried {
    pub bytes: Vec<u8>,
    pub delay: Tick,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TapStats {
    pub observed: u64,
    pub dropped: u64,
    pub mutated: u64,
    pub delayed: u64,
    pub injected: u64,
    pub substituted: u64,
}

pub struct AdversaryTap {
    transcript: Vec<TranscriptEntry>,
    rules: Vec<TapRule>,
    rng: ChaCha20Rng,
    deploy_overrides: BTreeMap<PlatformId, Vec<u8>>,
    replay_evidence: u64,
    stats: TapStats,
}

impl AdversaryTap {
    pub fn new(seed: u64) -> Self {
        Self {
            transcript: Vec::new(),
            rules: Vec::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            deploy_overrides: BTreeMap::new(),
            replay_evidence: 0,
            stats: TapStats::default(),
        }
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn stats(&self) -> TapStats {
        self.stats
    }

    pub fn add_rule(&mut self, rule: TapRule) {
        self.rules.push(rule);
    }

    pub fn clear_rules(&mut self) {
        self.rules.clear();
    }

    /// Replace the next deploy request to `platform` with `frame`.
    pub fn override_deploy(&mut self, platform: PlatformId, frame: Vec<u8>) {
        self.deploy_overrides.insert(platform, frame);
    }

    /// Answer the next attestation challenge with the most recent evidence
    /// seen earlier instead of the fresh one.
    pub fn replay_next_evidence(&mut self) {
        self.replay_evidence += 1;
    }

    /// Most recent recorded message matching `filter`.
    pub fn last_matching(&self, filter: &MessageFilter) -> Option<&TranscriptEntry> {
        self.transcript
            .iter()
            .rev()
            .find(|e| !e.injected && filter.matches(&e.hop, e.tag))
    }

    /// The `index`-th recorded message matching `filter`.
    pub fn nth_matching(&self, filter: &MessageFilter, index: usize) -> Option<&TranscriptEntry> {
        self.transcript
            .iter()
            .filter(|e| !e.injected && filter.matches(&e.hop, e.tag))
            .nth(index)
    }

    pub fn record_injection(&mut self, tick: Tick, hop: Hop, tag: MsgType, bytes: Vec<u8>) {
        self.stats.injected += 1;
        self.push(tick, hop, tag, bytes, true);
    }

    /// Random bytes of length `len`, for forgeries.
    pub fn random_bytes(&mut self, len: usize) -> Vec<u8> {
        let mut v = vec![0u8; len];
        self.rng.fill(&mut v[..]);
        v
    }

    fn push(&mut self, tick: Tick, hop: Hop, tag: MsgType, bytes: Vec<u8>, injected: bool) {
        self.transcript.push(TranscriptEntry {
            tick,
            hop,
            tag,
            bytes,
            injected,
        });
    }

    fn substitute(&mut self, hop: &Hop, tag: MsgType, bytes: Vec<u8>) -> Vec<u8> {
        if let (MsgType::DeployRequest, NodeId::Host(p)) = (tag, hop.to) {
            if let Some(f) = self.deploy_overrides.remove(&p) {
                self.stats.substituted += 1;
                return f;
            }
        }
        if tag == MsgType::AttestEvidence && self.replay_evidence > 0 {
            let filter = MessageFilter {
                segment: None,
                tag: Some(MsgType::AttestEvidence),
            };
            if let Some(old) = self.last_matching(&filter) {
                let old = old.bytes.clone();
                self.replay_evidence -= 1;
                self.stats.substituted += 1;
                return old;
            }
        }
        bytes
    }

    fn flip_bit(&mut self, bytes: &mut [u8]) {
        if bytes.is_empty() {
            return;
        }
        // Keep the frame header intact so the damage reaches the payload.
        let lo = if bytes.len() > 5 { 5 } else { 0 };
        let i = self.rng.gen_range(lo..bytes.len());
        bytes[i] ^= 1 << self.rng.gen_range(0..8);
    }

    /// Passes one message through the adversary. Returns what is delivered:
    /// nothing if dropped, otherwise the (possibly altered) bytes and the
    /// extra delay.
    pub fn intercept(&mut self, tick: Tick, hop: Hop, tag: MsgType, bytes: Vec<u8>) -> Option<Carried> {
        self.stats.observed += 1;
        let first = self.transcript.len();
        let bytes = self.substitute(&hop, tag, bytes);
        self.push(tick, hop, tag, bytes.clone(), false);
        let mut out = Carried { bytes, delay: 0 };
        let mut rules = std::mem::take(&mut self.rules);
        let mut dropped = false;
        for rule in rules.iter_mut() {
            match rule {
                TapRule::Drop { filter, remaining } if *remaining > 0 && filter.matches(&hop, tag) => {
                    *remaining -= 1;
                    dropped = true;
                }
                TapRule::DropRate { filter, rate } if filter.matches(&hop, tag) => {
                    if self.rng.gen_bool(rate.clamp(0.0, 1.0)) {
                        dropped = true;
                    }
                }
                TapRule::Mutate { filter, remaining } if *remaining > 0 && filter.matches(&hop, tag) => {
                    *remaining -= 1;
                    self.flip_bit(&mut out.bytes);
                    self.stats.mutated += 1;
                }
                TapRule::Delay {
                    filter,
                    ticks,
                    remaining,
                } if *remaining > 0 && filter.matches(&hop, tag) => {
                    *remaining -= 1;
                    out.delay += *ticks;
                    self.stats.delayed += 1;
                }
                _ => {}
            }
            if dropped {
                break;
            }
        }
        self.rules = rules;
        if dropped {
            self.stats.dropped += 1;
            return None;
        }
        if out.bytes != self.transcript[first].bytes {
            self.push(tick, hop, tag, out.bytes.clone(), true);
        }
        Some(out)
    }

    /// SHA-256 over the whole transcript in order.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for e in &self.transcript {
            h.update(e.tick.to_be_bytes());
            h.update(e.hop.from.code());
            h.update(e.hop.to.code());
            h.update([e.hop.segment as u8, e.tag as u8, e.injected as u8]);
            h.update((e.bytes.len() as u64).to_be_bytes());
            h.update(&e.bytes);
        }
        h.finalize().into()
    }
}

/// Synchronous [`Transport`] through the tap, used for deployment and
/// attestation exchanges.
pub struct TapTransport<'a> {
    pub tap: &'a mut AdversaryTap,
    pub now: Tick,
}

impl Transport for TapTransport<'_> {
    fn carry(&mut self, hop: Hop, tag: MsgType, bytes: Vec<u8>) -> Option<Vec<u8>> {
        self.tap.intercept(self.now, hop, tag, bytes).map(|c| c.bytes)
    }
}
