//! The enclave-resident software switch: FIB lookup, local delivery,
//! domain-keyed tunnels between hosts and the table-miss path to the
//! controller.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::channel::{ChannelError, SecureChannel};
use crate::control::{
    decode_rules, encode_ack, enrollment_ack, Action, DomainKeyMaterial, EnrollmentMessage,
    FlowKey, FlowMatch, FlowRule, MISS_PRIORITY,
};
use crate::crypto::{sym_open, Ciphertext, CryptoError, PublicKey, Sealer, SymmetricKey};
use crate::enclave::EnclaveRuntime;
use crate::net::{NodeId, SwitchId, Tick};
use crate::wire::{frame, unframe, MsgType, Reader, WireError, Writer};

/// Code image of the reference switch.
pub const SWITCH_CODE: &[u8] = b"trusdn-switch/1 fib+beta+packet-in";
/// Jumbo-frame bound on packet payloads.
pub const MAX_PAYLOAD: usize = 9 * 1024;
pub const BUFFER_CAPACITY: usize = 64;
pub const MISS_TIMEOUT: Tick = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataPlaneError {
    #[error("more than {BUFFER_CAPACITY} packets buffered for one flow")]
    BufferOverflow,
    #[error("authentication failure")]
    AuthenticationFailure,
    #[error("replayed frame")]
    Replay,
    #[error("unknown peer {0}")]
    UnknownPeer(SwitchId),
    #[error("frame addressed to {0}")]
    Misaddressed(SwitchId),
    #[error("payload of {0} bytes exceeds the frame bound")]
    PayloadTooLarge(usize),
    #[error("switch not enrolled")]
    NotEnrolled,
    #[error("unexpected {0:?} message")]
    Unexpected(MsgType),
    #[error(transparent)]
    Malformed(#[from] WireError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub flow: FlowKey,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl Packet {
    pub fn new(flow: FlowKey, seq: u64, payload: Vec<u8>) -> Result<Self, DataPlaneError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(DataPlaneError::PayloadTooLarge(payload.len()));
        }
        Ok(Self { flow, seq, payload })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.flow.write(&mut w);
        w.u64(self.seq).bytes(&self.payload).finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let flow = FlowKey::read(&mut r)?;
        let seq = r.u64()?;
        let payload = r.bytes()?.to_vec();
        r.finish()?;
        if payload.len() > MAX_PAYLOAD {
            return Err(WireError::Invalid("packet payload too large"));
        }
        Ok(Self { flow, seq, payload })
    }

    /// `GammaPacket` frame as exchanged between a switch and a local task.
    pub fn to_frame(&self) -> Vec<u8> {
        frame(MsgType::GammaPacket, &self.to_bytes())
    }
}

/// Match-action table. Lookup picks the highest priority, then the newest
/// rule; the built-in miss rule sends to the controller.
#[derive(Clone, Debug)]
pub struct Fib {
    rules: Vec<(u64, FlowRule)>,
    next_seq: u64,
}

impl Default for Fib {
    fn default() -> Self {
        Self::new()
    }
}

impl Fib {
    pub fn new() -> Self {
        let miss = FlowRule {
            id: 0,
            matcher: FlowMatch::any(),
            action: Action::SendToController,
            priority: MISS_PRIORITY,
        };
        Self {
            rules: vec![(0, miss)],
            next_seq: 1,
        }
    }

    /// Inserts `rule`, replacing any rule with the same id or the same exact
    /// match.
    pub fn install(&mut self, rule: FlowRule) {
        self.rules.retain(|(_, r)| {
            r.id != rule.id && !(rule.matcher.is_exact() && r.matcher == rule.matcher)
        });
        self.rules.push((self.next_seq, rule));
        self.next_seq += 1;
    }

    pub fn lookup(&self, flow: &FlowKey) -> &FlowRule {
        self.rules
            .iter()
            .filter(|(_, r)| r.matcher.matches(flow))
            .max_by_key(|(seq, r)| (r.priority, *seq))
            .map(|(_, r)| r)
            .expect("miss rule matches every flow")
    }

    /// Removes every rule except the miss rule.
    pub fn clear(&mut self) {
        self.rules.retain(|(_, r)| r.id == 0);
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> impl Iterator<Item = &FlowRule> {
        self.rules.iter().map(|(_, r)| r)
    }
}

/// Inter-switch tunnel frame: header in clear, packet sealed under `K_beta`
/// with the header as associated data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BetaFrame {
    pub src: SwitchId,
    pub dst: SwitchId,
    pub epoch: u64,
    pub body: Ciphertext,
}

fn beta_aad(src: SwitchId, dst: SwitchId, epoch: u64) -> Vec<u8> {
    Writer::new()
        .raw(b"trusdn/beta/v1")
        .u32(src.0)
        .u32(dst.0)
        .u64(epoch)
        .finish()
}

impl BetaFrame {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new()
            .u32(self.src.0)
            .u32(self.dst.0)
            .u64(self.epoch)
            .raw(&self.body.to_bytes())
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        if b.len() < 16 {
            return Err(WireError::Truncated("beta header"));
        }
        let mut r = Reader::new(&b[..16]);
        let (src, dst, epoch) = (SwitchId(r.u32()?), SwitchId(r.u32()?), r.u64()?);
        let body = Ciphertext::from_bytes(&b[16..]).map_err(|_| WireError::Invalid("beta body"))?;
        Ok(Self {
            src,
            dst,
            epoch,
            body,
        })
    }

    pub fn to_frame(&self) -> Vec<u8> {
        frame(MsgType::BetaFrame, &self.to_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlarmKind {
    ForgedControl,
    ForgedBeta,
    ReplayedBeta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alarm {
    pub at: Tick,
    pub kind: AlarmKind,
}

/// What a switch emits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SwitchOutput {
    /// Sealed frame for the controller.
    ToController { tag: MsgType, bytes: Vec<u8> },
    /// Tunnel frame for a peer switch.
    Beta { peer: SwitchId, bytes: Vec<u8> },
    /// Packet frame for the task on a local port.
    Local { port: u16, bytes: Vec<u8> },
}

struct DomainKeys {
    epoch: u64,
    key: SymmetricKey,
    sealer: Sealer,
    previous: Option<(u64, SymmetricKey)>,
}

struct MissBuffer {
    since: Tick,
    packets: Vec<Packet>,
}

/// Switch state, held in the switch enclave's sealed memory.
pub struct SwitchState {
    id: SwitchId,
    alpha: SecureChannel,
    controller_pk: PublicKey,
    domain: Option<DomainKeys>,
    beta_rx: BTreeMap<(u64, u32), u64>,
    fib: Fib,
    buffers: BTreeMap<FlowKey, MissBuffer>,
    counters: BTreeMap<&'static str, u64>,
    alarms: Vec<Alarm>,
}

/// Enclave entry point: consume an enrollment frame addressed to switch
/// `id` and return the sealed acknowledgement frame.
pub fn enroll_switch(
    rt: &mut EnclaveRuntime<'_>,
    id: SwitchId,
    enrollment_frame: &[u8],
) -> Result<Vec<u8>, String> {
    let (tag, payload) = unframe(enrollment_frame).map_err(|e| e.to_string())?;
    if tag != MsgType::Enrollment {
        return Err(format!("expected enrollment, got {tag:?}"));
    }
    let msg = EnrollmentMessage::from_bytes(payload).map_err(|e| e.to_string())?;
    let node = NodeId::Switch(id);
    let keys = msg
        .open(rt.keypair().secret(), node)
        .map_err(|e| e.to_string())?;
    let material = keys.domain.ok_or("switch enrollment without a domain key")?;
    let mut st = SwitchState::new(id, keys.k_alpha, keys.controller_pk, material);
    let ack = st
        .alpha
        .seal(MsgType::Enrollment, &enrollment_ack(node))
        .map_err(|e| e.to_string())?;
    rt.set_state(st);
    Ok(frame(MsgType::Enrollment, &ack))
}

impl SwitchState {
    pub fn new(
        id: SwitchId,
        k_alpha: SymmetricKey,
        controller_pk: PublicKey,
        domain: DomainKeyMaterial,
    ) -> Self {
        let mut st = Self {
            id,
            alpha: SecureChannel::enclave_end(k_alpha),
            controller_pk,
            domain: None,
            beta_rx: BTreeMap::new(),
            fib: Fib::new(),
            buffers: BTreeMap::new(),
            counters: BTreeMap::new(),
            alarms: Vec::new(),
        };
        st.set_domain_key(domain);
        st
    }

    pub fn id(&self) -> SwitchId {
        self.id
    }

    pub fn controller_pk(&self) -> &PublicKey {
        &self.controller_pk
    }

    pub fn fib(&self) -> &Fib {
        &self.fib
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.alarms
    }

    pub fn k_alpha(&self) -> &SymmetricKey {
        self.alpha.key()
    }

    /// Current domain key and epoch.
    pub fn k_beta(&self) -> Option<(u64, &SymmetricKey)> {
        self.domain.as_ref().map(|d| (d.epoch, &d.key))
    }

    pub fn buffered(&self) -> usize {
        self.buffers.values().map(|b| b.packets.len()).sum()
    }

    /// Counter snapshot.
    pub fn metrics(&self) -> BTreeMap<String, u64> {
        self.counters
            .iter()
            .map(|(k, v)| ((*k).to_owned(), *v))
            .collect()
    }

    fn bump(&mut self, name: &'static str) {
        *self.counters.entry(name).or_default() += 1;
    }

    fn alarm(&mut self, at: Tick, kind: AlarmKind) {
        self.alarms.push(Alarm { at, kind });
        self.bump("alarms");
    }

    fn set_domain_key(&mut self, m: DomainKeyMaterial) {
        let previous = self.domain.take().map(|d| (d.epoch, d.key));
        self.domain = Some(DomainKeys {
            epoch: m.epoch,
            sealer: Sealer::new(m.k_beta.clone(), self.id.0),
            key: m.k_beta,
            previous,
        });
        // Receive windows of epochs outside the grace window are useless.
        let floor = m.epoch.saturating_sub(1);
        self.beta_rx.retain(|(e, _), _| *e >= floor);
    }

    /// Dispatches a framed message from `from`.
    pub fn handle(
        &mut self,
        from: NodeId,
        bytes: &[u8],
        now: Tick,
    ) -> Result<Vec<SwitchOutput>, DataPlaneError> {
        let (tag, payload) = unframe(bytes)?;
        match (from, tag) {
            (NodeId::Controller, _) => self.on_controller(tag, payload, now),
            (NodeId::Switch(_), MsgType::BetaFrame) => {
                let frame = BetaFrame::from_bytes(payload).inspect_err(|_| {
                    self.alarm(now, AlarmKind::ForgedBeta);
                })?;
                self.accept_beta(&frame, now)
            }
            (NodeId::Ct(_), MsgType::GammaPacket) => {
                self.switch_ingress(Packet::from_bytes(payload)?, now)
            }
            _ => Err(DataPlaneError::Unexpected(tag)),
        }
    }

    /// Sealed control message from the controller.
    pub fn on_controller(
        &mut self,
        tag: MsgType,
        sealed: &[u8],
        now: Tick,
    ) -> Result<Vec<SwitchOutput>, DataPlaneError> {
        let plain = match self.alpha.open(tag, sealed) {
            Ok(p) => p,
            Err(e) => {
                self.alarm(now, AlarmKind::ForgedControl);
                return Err(match e {
                    ChannelError::Replay { .. } => DataPlaneError::Replay,
                    _ => DataPlaneError::AuthenticationFailure,
                });
            }
        };
        match tag {
            MsgType::RuleInstall => self.install_rules(&plain, now),
            MsgType::DomainKeyUpdate => {
                let m = DomainKeyMaterial::from_bytes(&plain)?;
                if self.domain.as_ref().is_some_and(|d| m.epoch <= d.epoch) {
                    return Err(DataPlaneError::Replay);
                }
                self.set_domain_key(m);
                self.bump("domain_key_updates");
                Ok(vec![])
            }
            MsgType::FlushRules => {
                self.clear_rules();
                Ok(vec![])
            }
            other => Err(DataPlaneError::Unexpected(other)),
        }
    }

    /// Deletes all installed rules.
    pub fn clear_rules(&mut self) {
        self.fib.clear();
        self.bump("flushes");
    }

    /// A packet entering from a local task (or decapsulated from a tunnel).
    pub fn switch_ingress(&mut self, pkt: Packet, now: Tick) -> Result<Vec<SwitchOutput>, DataPlaneError> {
        self.bump("packets_in");
        let rule = *self.fib.lookup(&pkt.flow);
        if rule.action != Action::SendToController {
            return self.apply(rule.action, pkt);
        }
        if let Some(buf) = self.buffers.get_mut(&pkt.flow) {
            if now.saturating_sub(buf.since) <= MISS_TIMEOUT {
                if buf.packets.len() >= BUFFER_CAPACITY {
                    self.bump("buffer_overflows");
                    return Err(DataPlaneError::BufferOverflow);
                }
                buf.packets.push(pkt);
                self.bump("buffered");
                return Ok(vec![]);
            }
            let stale = self.buffers.remove(&pkt.flow).map_or(0, |b| b.packets.len());
            *self.counters.entry("buffer_timeouts").or_default() += stale as u64;
        }
        let sealed = self.alpha.seal(MsgType::PacketIn, &pkt.to_bytes())?;
        self.buffers.insert(
            pkt.flow,
            MissBuffer {
                since: now,
                packets: vec![pkt],
            },
        );
        self.bump("packet_ins_sent");
        Ok(vec![SwitchOutput::ToController {
            tag: MsgType::PacketIn,
            bytes: frame(MsgType::PacketIn, &sealed),
        }])
    }

    fn apply(&mut self, action: Action, pkt: Packet) -> Result<Vec<SwitchOutput>, DataPlaneError> {
        match action {
            Action::ForwardLocal(port) => {
                self.bump("forwarded_local");
                Ok(vec![SwitchOutput::Local {
                    port,
                    bytes: pkt.to_frame(),
                }])
            }
            Action::ForwardTunnel(peer) => {
                let f = self.emit_beta(&pkt, peer)?;
                self.bump("tunneled");
                Ok(vec![SwitchOutput::Beta {
                    peer,
                    bytes: f.to_frame(),
                }])
            }
            Action::Drop => {
                self.bump("dropped");
                Ok(vec![])
            }
            Action::SendToController => unreachable!("handled by the miss path"),
        }
    }

    /// Installs the rules of a decrypted install message, flushes buffered
    /// packets that now match, then acknowledges.
    fn install_rules(&mut self, plain: &[u8], now: Tick) -> Result<Vec<SwitchOutput>, DataPlaneError> {
        let rules = decode_rules(plain)?;
        for r in &rules {
            self.fib.install(*r);
            self.bump("rules_installed");
        }
        let mut out = Vec::new();
        let ready: Vec<FlowKey> = self
            .buffers
            .keys()
            .filter(|k| self.fib.lookup(k).action != Action::SendToController)
            .copied()
            .collect();
        for k in ready {
            let mut buf = self.buffers.remove(&k).expect("key listed above");
            if now.saturating_sub(buf.since) > MISS_TIMEOUT {
                *self.counters.entry("buffer_timeouts").or_default() += buf.packets.len() as u64;
                continue;
            }
            buf.packets.sort_by_key(|p| p.seq);
            let action = self.fib.lookup(&k).action;
            for p in buf.packets {
                out.extend(self.apply(action, p)?);
            }
        }
        let ids: Vec<u64> = rules.iter().map(|r| r.id).collect();
        let ack = self.alpha.seal(MsgType::RuleAck, &encode_ack(&ids))?;
        out.push(SwitchOutput::ToController {
            tag: MsgType::RuleAck,
            bytes: frame(MsgType::RuleAck, &ack),
        });
        Ok(out)
    }

    /// Seals `pkt` for `peer` under the current domain key.
    pub fn emit_beta(&mut self, pkt: &Packet, peer: SwitchId) -> Result<BetaFrame, DataPlaneError> {
        if peer == self.id {
            return Err(DataPlaneError::UnknownPeer(peer));
        }
        let d = self.domain.as_mut().ok_or(DataPlaneError::NotEnrolled)?;
        let body = d
            .sealer
            .seal(&pkt.to_bytes(), &beta_aad(self.id, peer, d.epoch))?;
        Ok(BetaFrame {
            src: self.id,
            dst: peer,
            epoch: d.epoch,
            body,
        })
    }

    fn beta_key(&self, epoch: u64) -> Option<&SymmetricKey> {
        let d = self.domain.as_ref()?;
        if d.epoch == epoch {
            return Some(&d.key);
        }
        match &d.previous {
            Some((e, k)) if *e == epoch && epoch + 1 == d.epoch => Some(k),
            _ => None,
        }
    }

    fn open_beta(&self, f: &BetaFrame) -> Result<Packet, DataPlaneError> {
        if f.dst != self.id {
            return Err(DataPlaneError::Misaddressed(f.dst));
        }
        if f.body.nonce_prefix() != f.src.0 {
            return Err(DataPlaneError::AuthenticationFailure);
        }
        let key = self.beta_key(f.epoch).ok_or(DataPlaneError::AuthenticationFailure)?;
        let plain = sym_open(key, &f.body, &beta_aad(f.src, f.dst, f.epoch))
            .map_err(|_| DataPlaneError::AuthenticationFailure)?;
        Ok(Packet::from_bytes(&plain)?)
    }

    /// Tunnel endpoint: open, reject replays, then forward per FIB.
    pub fn accept_beta(&mut self, f: &BetaFrame, now: Tick) -> Result<Vec<SwitchOutput>, DataPlaneError> {
        let pkt = match self.open_beta(f) {
            Ok(p) => p,
            Err(e) => {
                self.bump("beta_rejected");
                self.alarm(now, AlarmKind::ForgedBeta);
                return Err(e);
            }
        };
        let counter = f.body.nonce_counter();
        let slot = (f.epoch, f.src.0);
        if self.beta_rx.get(&slot).is_some_and(|last| counter <= *last) {
            self.bump("beta_rejected");
            self.alarm(now, AlarmKind::ReplayedBeta);
            return Err(DataPlaneError::Replay);
        }
        self.beta_rx.insert(slot, counter);
        self.bump("beta_accepted");
        self.switch_ingress(pkt, now)
    }
}
