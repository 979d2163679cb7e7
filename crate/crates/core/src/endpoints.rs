//! Compute tasks: PSK grant intake, the three-message PSK handshake, the
//! public-key baseline handshake and AEAD record channels.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::channel::SecureChannel;
use crate::control::{enrollment_ack, EnrollmentMessage, FlowKey, PskGrant};
use crate::crypto::{
    derive_key, diffie_hellman, hybrid_unwrap, mac_check, mac_tag, sha256, sign, sym_open,
    sym_seal, verify, Ciphertext, CryptoError, KeyOwner, KeyPair, KeyRole, PublicKey, Signature,
    SymmetricKey,
};
use crate::dataplane::{DataPlaneError, Packet};
use crate::enclave::EnclaveRuntime;
use crate::net::{CtId, NodeId, Tick};
use crate::wire::{frame, unframe, MsgType, Reader, WireError, Writer};

/// Code image of the reference compute task.
pub const COMPUTE_TASK_CODE: &[u8] = b"trusdn-ct/1 psk-handshake+records";
/// How long a handshake message waits for its flow's PSK grant.
pub const GRANT_WAIT: Tick = 32;

const CLIENT_PREFIX: u32 = 1;
const SERVER_PREFIX: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EndpointError {
    #[error("grant does not decrypt under this task's key")]
    DecryptionFailure,
    #[error("grant signature invalid")]
    BadGrantSignature,
    #[error("grant not addressed to this task")]
    NotARecipient,
    #[error("finished message mismatch")]
    FinishedMismatch,
    #[error("no PSK grant arrived in time")]
    HandshakeTimeout,
    #[error("session not established")]
    NotEstablished,
    #[error("record authentication failed")]
    AuthenticationFailure,
    #[error("replayed or reordered message")]
    Replay,
    #[error("no session for flow")]
    UnknownFlow,
    #[error("no public key known for {0}")]
    NoPeerKey(CtId),
    #[error("packet not addressed to this task")]
    Misaddressed,
    #[error("unexpected {0:?} message")]
    Unexpected(MsgType),
    #[error(transparent)]
    Malformed(#[from] WireError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    DataPlane(#[from] DataPlaneError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HandshakeMode {
    Psk,
    BaselinePk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
}

pub struct SessionState {
    /// Client-to-server direction.
    pub flow: FlowKey,
    pub role: Role,
    pub mode: HandshakeMode,
    pub psk: Option<SymmetricKey>,
    pub client_nonce: [u8; 32],
    pub server_nonce: Option<[u8; 32]>,
    session_key: Option<SymmetricKey>,
    pub established: bool,
    pub handshake_pk_ops: u32,
    pub handshake_messages: u32,
    pub failure: Option<EndpointError>,
    eph: Option<KeyPair>,
    tx_seq: u64,
    rx_next: u64,
    packet_seq: u64,
    outbox: VecDeque<Vec<u8>>,
    pub received: Vec<Vec<u8>>,
}

impl SessionState {
    fn new(flow: FlowKey, role: Role, mode: HandshakeMode, client_nonce: [u8; 32]) -> Self {
        Self {
            flow,
            role,
            mode,
            psk: None,
            client_nonce,
            server_nonce: None,
            session_key: None,
            established: false,
            handshake_pk_ops: 0,
            handshake_messages: 0,
            failure: None,
            eph: None,
            tx_seq: 0,
            rx_next: 0,
            packet_seq: 0,
            outbox: VecDeque::new(),
            received: Vec::new(),
        }
    }

    pub fn session_key(&self) -> Option<&SymmetricKey> {
        self.session_key.as_ref()
    }

    /// Direction this side sends in.
    fn out_flow(&self) -> FlowKey {
        match self.role {
            Role::Client => self.flow,
            Role::Server => self.flow.reversed(),
        }
    }

    fn packet(&mut self, tag: MsgType, body: &[u8]) -> Result<Packet, EndpointError> {
        let p = Packet::new(self.out_flow(), self.packet_seq, frame(tag, body))?;
        self.packet_seq += 1;
        Ok(p)
    }

    fn transcript(&self) -> [u8; 32] {
        let sn = self.server_nonce.unwrap_or([0; 32]);
        sha256(&[
            b"trusdn/handshake/v1",
            &self.flow.canonical().to_bytes(),
            &self.client_nonce,
            &sn,
        ])
    }

    fn finished(&self, label: &[u8]) -> Result<[u8; 32], EndpointError> {
        let k = self.session_key.as_ref().ok_or(EndpointError::NotEstablished)?;
        Ok(mac_tag(k, &[label, &self.transcript()].concat())?.0)
    }

    fn check_finished(&self, label: &[u8], got: &[u8]) -> bool {
        let Some(k) = &self.session_key else {
            return false;
        };
        mac_check(k, &[label, &self.transcript()].concat(), got)
    }

    fn prefixes(&self) -> (u32, u32) {
        match self.role {
            Role::Client => (CLIENT_PREFIX, SERVER_PREFIX),
            Role::Server => (SERVER_PREFIX, CLIENT_PREFIX),
        }
    }

    fn record_aad(&self, prefix: u32) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"trusdn/record/v1");
        self.flow.canonical().write(&mut w);
        w.u32(prefix).finish()
    }

    /// Seals `data` as the next record of this direction.
    pub fn seal_record(&mut self, data: &[u8]) -> Result<Vec<u8>, EndpointError> {
        if !self.established {
            return Err(EndpointError::NotEstablished);
        }
        let (own, _) = self.prefixes();
        let key = self.session_key.as_ref().ok_or(EndpointError::NotEstablished)?;
        let c = sym_seal(key, own, self.tx_seq, data, &self.record_aad(own))?;
        self.tx_seq += 1;
        Ok(c.to_bytes())
    }

    /// Opens the next record from the peer; anything but the next sequence
    /// number is refused.
    pub fn open_record(&mut self, bytes: &[u8]) -> Result<Vec<u8>, EndpointError> {
        if !self.established {
            return Err(EndpointError::NotEstablished);
        }
        let c = Ciphertext::from_bytes(bytes).map_err(|_| EndpointError::AuthenticationFailure)?;
        let (_, peer) = self.prefixes();
        if c.nonce_prefix() != peer {
            return Err(EndpointError::AuthenticationFailure);
        }
        let key = self.session_key.as_ref().ok_or(EndpointError::NotEstablished)?;
        let plain = sym_open(key, &c, &self.record_aad(peer))
            .map_err(|_| EndpointError::AuthenticationFailure)?;
        if c.nonce_counter() != self.rx_next {
            return Err(EndpointError::Replay);
        }
        self.rx_next += 1;
        Ok(plain)
    }
}

fn psk_session_key(psk: &SymmetricKey, flow: &FlowKey, cn: &[u8; 32], sn: &[u8; 32]) -> SymmetricKey {
    derive_key(
        KeyRole::Derived,
        psk.expose(),
        &[cn.as_slice(), sn.as_slice()].concat(),
        &[b"trusdn/psk-session/v1".as_slice(), &flow.canonical().to_bytes()].concat(),
    )
}

fn pk_session_key(shared: &[u8; 32], flow: &FlowKey, cn: &[u8; 32], sn: &[u8; 32]) -> SymmetricKey {
    derive_key(
        KeyRole::Derived,
        shared,
        &[cn.as_slice(), sn.as_slice()].concat(),
        &[b"trusdn/pk-session/v1".as_slice(), &flow.canonical().to_bytes()].concat(),
    )
}

fn pk_client_signed(flow: &FlowKey, cn: &[u8; 32], eph: &PublicKey) -> Vec<u8> {
    [b"trusdn/pk-client/v1".as_slice(), &flow.canonical().to_bytes(), cn, &eph.0].concat()
}

fn pk_server_signed(flow: &FlowKey, cn: &[u8; 32], sn: &[u8; 32], ec: &PublicKey, es: &PublicKey) -> Vec<u8> {
    [
        b"trusdn/pk-server/v1".as_slice(),
        &flow.canonical().to_bytes(),
        cn,
        sn,
        &ec.0,
        &es.0,
    ]
    .concat()
}

/// What a compute task emits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CtOutput {
    /// Packet towards the local switch.
    Send(Packet),
    /// Request a timer callback at the given tick.
    WakeAt(Tick),
}

/// Outcome of handling one inbound message.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CtResult {
    pub outputs: Vec<CtOutput>,
    /// The message carried authenticated content that was accepted.
    pub authenticated: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CtMetrics {
    pub grants_received: u64,
    pub duplicate_grants: u64,
    pub handshakes_established: u64,
    pub handshake_failures: u64,
    pub timeouts: u64,
    pub records_sent: u64,
    pub records_received: u64,
    pub records_rejected: u64,
    pub unwrap_wall_ns: u64,
    pub keygen_wall_ns: u64,
}

/// Compute-task state, held in the task enclave's sealed memory.
pub struct CtState {
    id: CtId,
    keypair: KeyPair,
    alpha: SecureChannel,
    controller_pk: PublicKey,
    psk_store: BTreeMap<FlowKey, (u64, SymmetricKey)>,
    sessions: BTreeMap<FlowKey, SessionState>,
    waiting: BTreeMap<FlowKey, (Tick, Packet)>,
    peer_keys: BTreeMap<CtId, PublicKey>,
    metrics: CtMetrics,
}

/// Enclave entry point: consume an enrollment frame addressed to task `id`
/// and return the sealed acknowledgement frame.
pub fn enroll_ct(
    rt: &mut EnclaveRuntime<'_>,
    id: CtId,
    enrollment_frame: &[u8],
) -> Result<Vec<u8>, String> {
    let (tag, payload) = unframe(enrollment_frame).map_err(|e| e.to_string())?;
    if tag != MsgType::Enrollment {
        return Err(format!("expected enrollment, got {tag:?}"));
    }
    let msg = EnrollmentMessage::from_bytes(payload).map_err(|e| e.to_string())?;
    let node = NodeId::Ct(id);
    let keypair = rt.keypair().clone();
    let keys = msg.open(keypair.secret(), node).map_err(|e| e.to_string())?;
    let mut st = CtState::new(id, keypair, keys.k_alpha, keys.controller_pk);
    let ack = st
        .alpha
        .seal(MsgType::Enrollment, &enrollment_ack(node))
        .map_err(|e| e.to_string())?;
    rt.set_state(st);
    Ok(frame(MsgType::Enrollment, &ack))
}

fn take_nonce<R: RngCore>(rng: &mut R) -> [u8; 32] {
    let mut n = [0u8; 32];
    rng.fill_bytes(&mut n);
    n
}

fn elapsed_ns(t: Instant) -> u64 {
    t.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

impl CtState {
    pub fn new(id: CtId, keypair: KeyPair, k_alpha: SymmetricKey, controller_pk: PublicKey) -> Self {
        Self {
            id,
            keypair,
            alpha: SecureChannel::enclave_end(k_alpha),
            controller_pk,
            psk_store: BTreeMap::new(),
            sessions: BTreeMap::new(),
            waiting: BTreeMap::new(),
            peer_keys: BTreeMap::new(),
            metrics: CtMetrics::default(),
        }
    }

    pub fn id(&self) -> CtId {
        self.id
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn metrics(&self) -> CtMetrics {
        self.metrics
    }

    pub fn psk(&self, flow: &FlowKey) -> Option<&SymmetricKey> {
        self.psk_store.get(&flow.canonical()).map(|(_, k)| k)
    }

    pub fn psks(&self) -> impl Iterator<Item = (&FlowKey, &(u64, SymmetricKey))> {
        self.psk_store.iter()
    }

    pub fn session(&self, flow: &FlowKey) -> Option<&SessionState> {
        self.sessions.get(&flow.canonical())
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionState> {
        self.sessions.values()
    }

    /// Out-of-band key directory used by the baseline handshake.
    pub fn set_peer_key(&mut self, peer: CtId, pk: PublicKey) {
        self.peer_keys.insert(peer, pk);
    }

    /// Dispatches a framed message from `from`.
    pub fn handle<R: RngCore + CryptoRng>(
        &mut self,
        from: NodeId,
        bytes: &[u8],
        rng: &mut R,
        now: Tick,
    ) -> Result<CtResult, EndpointError> {
        let (tag, payload) = unframe(bytes)?;
        match (from, tag) {
            (NodeId::Controller, MsgType::PskGrant) => {
                let plain = self
                    .alpha
                    .open(MsgType::PskGrant, payload)
                    .map_err(|_| EndpointError::AuthenticationFailure)?;
                let grant = PskGrant::from_bytes(&plain)?;
                let outputs = self.receive_psk_grant(&grant, rng, now)?;
                Ok(CtResult {
                    outputs,
                    authenticated: true,
                })
            }
            (NodeId::Switch(_), MsgType::GammaPacket) => {
                self.on_packet(Packet::from_bytes(payload)?, rng, now)
            }
            _ => Err(EndpointError::Unexpected(tag)),
        }
    }

    /// Opens a flow to `dst`: the returned packet carries the client hello and
    /// `payloads` are sent once the session is up.
    #[allow(clippy::too_many_arguments)]
    pub fn ct_open_flow<R: RngCore + CryptoRng>(
        &mut self,
        dst: CtId,
        src_port: u16,
        dst_port: u16,
        mode: HandshakeMode,
        payloads: Vec<Vec<u8>>,
        rng: &mut R,
    ) -> Result<Vec<CtOutput>, EndpointError> {
        let flow = FlowKey {
            src: self.id,
            dst,
            src_port,
            dst_port,
            proto: 6,
        };
        let cn = take_nonce(rng);
        let mut s = SessionState::new(flow, Role::Client, mode, cn);
        s.outbox = payloads.into();
        let hello = match mode {
            HandshakeMode::Psk => s.packet(MsgType::ClientHello, &cn)?,
            HandshakeMode::BaselinePk => {
                let start = Instant::now();
                let eph = KeyPair::generate(KeyOwner::ComputeTask, rng);
                self.metrics.keygen_wall_ns += elapsed_ns(start);
                let sig = sign(self.keypair.secret(), &pk_client_signed(&flow, &cn, &eph.public()));
                s.handshake_pk_ops += 2;
                let body = Writer::new().raw(&cn).raw(&eph.public().0).raw(&sig.0).finish();
                s.eph = Some(eph);
                s.packet(MsgType::PkClientHello, &body)?
            }
        };
        s.handshake_messages += 1;
        self.sessions.insert(flow.canonical(), s);
        Ok(vec![CtOutput::Send(hello)])
    }

    /// Verifies and stores a PSK grant, then resumes any handshake that was
    /// waiting for it. Re-delivery of a stored grant is a no-op.
    pub fn receive_psk_grant<R: RngCore + CryptoRng>(
        &mut self,
        grant: &PskGrant,
        rng: &mut R,
        now: Tick,
    ) -> Result<Vec<CtOutput>, EndpointError> {
        if !grant.verify(&self.controller_pk) {
            return Err(EndpointError::BadGrantSignature);
        }
        let wrapped = grant.wrapping_for(self.id).ok_or(EndpointError::NotARecipient)?;
        let key = grant.flow.canonical();
        if self
            .psk_store
            .get(&key)
            .is_some_and(|(e, _)| *e >= grant.grant_epoch)
        {
            self.metrics.duplicate_grants += 1;
            return Ok(vec![]);
        }
        let start = Instant::now();
        let raw = hybrid_unwrap(self.keypair.secret(), wrapped)
            .map_err(|_| EndpointError::DecryptionFailure)?;
        self.metrics.unwrap_wall_ns += elapsed_ns(start);
        let psk = SymmetricKey::from_slice(KeyRole::FlowPsk, &raw)
            .map_err(|_| EndpointError::DecryptionFailure)?;
        self.psk_store.insert(key, (grant.grant_epoch, psk));
        self.metrics.grants_received += 1;
        match self.waiting.remove(&key) {
            Some((deadline, pkt)) if now <= deadline => Ok(self.on_packet(pkt, rng, now)?.outputs),
            _ => Ok(vec![]),
        }
    }

    /// Expires handshake messages whose grant never came.
    pub fn on_timer(&mut self, now: Tick) {
        let expired: Vec<FlowKey> = self
            .waiting
            .iter()
            .filter(|(_, (deadline, _))| now > *deadline)
            .map(|(k, _)| *k)
            .collect();
        for k in expired {
            let (_, pkt) = self.waiting.remove(&k).expect("listed above");
            self.metrics.timeouts += 1;
            self.metrics.handshake_failures += 1;
            let entry = self.sessions.entry(k).or_insert_with(|| {
                let cn = pkt.payload.get(5..37).and_then(|s| s.try_into().ok()).unwrap_or([0; 32]);
                SessionState::new(pkt.flow, Role::Server, HandshakeMode::Psk, cn)
            });
            entry.failure = Some(EndpointError::HandshakeTimeout);
        }
    }

    fn park(&mut self, pkt: Packet, now: Tick) -> CtResult {
        let deadline = now + GRANT_WAIT;
        self.waiting.insert(pkt.flow.canonical(), (deadline, pkt));
        CtResult {
            outputs: vec![CtOutput::WakeAt(deadline + 1)],
            authenticated: false,
        }
    }

    fn fail(&mut self, key: &FlowKey, e: EndpointError) -> EndpointError {
        if let Some(s) = self.sessions.get_mut(key) {
            s.failure = Some(e.clone());
        }
        self.metrics.handshake_failures += 1;
        e
    }

    /// A packet delivered by the local switch.
    pub fn on_packet<R: RngCore + CryptoRng>(
        &mut self,
        pkt: Packet,
        rng: &mut R,
        now: Tick,
    ) -> Result<CtResult, EndpointError> {
        if pkt.flow.dst != self.id {
            return Err(EndpointError::Misaddressed);
        }
        let (tag, body) = unframe(&pkt.payload)?;
        let key = pkt.flow.canonical();
        let body = body.to_vec();
        match tag {
            MsgType::ClientHello => self.on_client_hello(pkt, &body, rng, now),
            MsgType::ServerHello => self.on_server_hello(pkt, &body, now),
            MsgType::ClientFinished | MsgType::PkClientFinished => {
                let s = self.sessions.get_mut(&key).ok_or(EndpointError::UnknownFlow)?;
                if s.role != Role::Server || s.established || s.server_nonce.is_none() {
                    return Err(EndpointError::Replay);
                }
                if !s.check_finished(b"client finished", &body) {
                    return Err(self.fail(&key, EndpointError::FinishedMismatch));
                }
                s.handshake_messages += 1;
                s.established = true;
                self.metrics.handshakes_established += 1;
                Ok(CtResult {
                    outputs: vec![],
                    authenticated: true,
                })
            }
            MsgType::PkClientHello => self.on_pk_client_hello(pkt.flow, &body, rng),
            MsgType::PkServerHello => self.on_pk_server_hello(pkt.flow, &body),
            MsgType::Record => {
                let s = self.sessions.get_mut(&key).ok_or(EndpointError::UnknownFlow)?;
                match s.open_record(&body) {
                    Ok(data) => {
                        s.received.push(data);
                        self.metrics.records_received += 1;
                        Ok(CtResult {
                            outputs: vec![],
                            authenticated: true,
                        })
                    }
                    Err(e) => {
                        self.metrics.records_rejected += 1;
                        Err(e)
                    }
                }
            }
            other => Err(EndpointError::Unexpected(other)),
        }
    }

    fn on_client_hello<R: RngCore + CryptoRng>(
        &mut self,
        pkt: Packet,
        body: &[u8],
        rng: &mut R,
        now: Tick,
    ) -> Result<CtResult, EndpointError> {
        let cn: [u8; 32] = body.try_into().map_err(|_| WireError::Invalid("client nonce"))?;
        let key = pkt.flow.canonical();
        if self.sessions.get(&key).is_some_and(|s| s.client_nonce == cn) {
            return Err(EndpointError::Replay);
        }
        let Some((_, psk)) = self.psk_store.get(&key) else {
            return Ok(self.park(pkt, now));
        };
        let psk = psk.clone();
        let sn = take_nonce(rng);
        let mut s = SessionState::new(pkt.flow, Role::Server, HandshakeMode::Psk, cn);
        s.server_nonce = Some(sn);
        s.session_key = Some(psk_session_key(&psk, &pkt.flow, &cn, &sn));
        s.psk = Some(psk);
        s.handshake_messages = 2;
        let fin = s.finished(b"server finished")?;
        let reply = s.packet(MsgType::ServerHello, &[sn.as_slice(), &fin].concat())?;
        self.sessions.insert(key, s);
        Ok(CtResult {
            outputs: vec![CtOutput::Send(reply)],
            authenticated: false,
        })
    }

    fn on_server_hello(&mut self, pkt: Packet, body: &[u8], now: Tick) -> Result<CtResult, EndpointError> {
        let key = pkt.flow.canonical();
        let psk = self.psk_store.get(&key).map(|(_, k)| k.clone());
        let s = self.sessions.get_mut(&key).ok_or(EndpointError::UnknownFlow)?;
        if s.role != Role::Client || s.established || s.mode != HandshakeMode::Psk {
            return Err(EndpointError::Replay);
        }
        let mut r = Reader::new(body);
        let sn: [u8; 32] = r.array()?;
        let fin: [u8; 32] = r.array()?;
        r.finish()?;
        let Some(psk) = psk else {
            return Ok(self.park(pkt, now));
        };
        s.server_nonce = Some(sn);
        s.session_key = Some(psk_session_key(&psk, &s.flow, &s.client_nonce, &sn));
        s.psk = Some(psk);
        if !s.check_finished(b"server finished", &fin) {
            s.session_key = None;
            return Err(self.fail(&key, EndpointError::FinishedMismatch));
        }
        self.client_complete(&key, MsgType::ClientFinished)
    }

    /// Client side after verifying the server: send finished, then flush the
    /// queued application data.
    fn client_complete(&mut self, key: &FlowKey, tag: MsgType) -> Result<CtResult, EndpointError> {
        let s = self.sessions.get_mut(key).expect("caller holds the session");
        let fin = s.finished(b"client finished")?;
        s.handshake_messages += 2;
        s.established = true;
        let mut outputs = vec![CtOutput::Send(s.packet(tag, &fin)?)];
        while let Some(data) = s.outbox.pop_front() {
            let rec = s.seal_record(&data)?;
            outputs.push(CtOutput::Send(s.packet(MsgType::Record, &rec)?));
            self.metrics.records_sent += 1;
        }
        self.metrics.handshakes_established += 1;
        Ok(CtResult {
            outputs,
            authenticated: true,
        })
    }

    fn on_pk_client_hello<R: RngCore + CryptoRng>(
        &mut self,
        flow: FlowKey,
        body: &[u8],
        rng: &mut R,
    ) -> Result<CtResult, EndpointError> {
        let mut r = Reader::new(body);
        let cn: [u8; 32] = r.array()?;
        let ec = PublicKey(r.array()?);
        let sig = Signature(r.array::<64>()?.to_vec());
        r.finish()?;
        let key = flow.canonical();
        if self.sessions.get(&key).is_some_and(|s| s.client_nonce == cn) {
            return Err(EndpointError::Replay);
        }
        let client_pk = *self.peer_keys.get(&flow.src).ok_or(EndpointError::NoPeerKey(flow.src))?;
        let mut s = SessionState::new(flow, Role::Server, HandshakeMode::BaselinePk, cn);
        s.handshake_pk_ops += 1;
        if !verify(&client_pk, &pk_client_signed(&flow, &cn, &ec), &sig) {
            return Err(EndpointError::AuthenticationFailure);
        }
        let start = Instant::now();
        let eph = KeyPair::generate(KeyOwner::ComputeTask, rng);
        self.metrics.keygen_wall_ns += elapsed_ns(start);
        let shared = diffie_hellman(eph.secret(), &ec)?;
        let sn = take_nonce(rng);
        let sig_s = sign(
            self.keypair.secret(),
            &pk_server_signed(&flow, &cn, &sn, &ec, &eph.public()),
        );
        s.handshake_pk_ops += 3;
        s.server_nonce = Some(sn);
        s.session_key = Some(pk_session_key(&shared, &flow, &cn, &sn));
        s.handshake_messages = 2;
        let fin = s.finished(b"server finished")?;
        let body = Writer::new()
            .raw(&sn)
            .raw(&eph.public().0)
            .raw(&sig_s.0)
            .raw(&fin)
            .finish();
        let reply = s.packet(MsgType::PkServerHello, &body)?;
        self.sessions.insert(key, s);
        Ok(CtResult {
            outputs: vec![CtOutput::Send(reply)],
            authenticated: true,
        })
    }

    fn on_pk_server_hello(&mut self, flow: FlowKey, body: &[u8]) -> Result<CtResult, EndpointError> {
        let key = flow.canonical();
        let server = flow.src;
        let server_pk = *self.peer_keys.get(&server).ok_or(EndpointError::NoPeerKey(server))?;
        let s = self.sessions.get_mut(&key).ok_or(EndpointError::UnknownFlow)?;
        if s.role != Role::Client || s.established || s.mode != HandshakeMode::BaselinePk {
            return Err(EndpointError::Replay);
        }
        let mut r = Reader::new(body);
        let sn: [u8; 32] = r.array()?;
        let es = PublicKey(r.array()?);
        let sig = Signature(r.array::<64>()?.to_vec());
        let fin: [u8; 32] = r.array()?;
        r.finish()?;
        let eph = s.eph.as_ref().ok_or(EndpointError::UnknownFlow)?;
        s.handshake_pk_ops += 1;
        let signed = pk_server_signed(&s.flow, &s.client_nonce, &sn, &eph.public(), &es);
        if !verify(&server_pk, &signed, &sig) {
            return Err(self.fail(&key, EndpointError::AuthenticationFailure));
        }
        let shared = diffie_hellman(eph.secret(), &es)?;
        s.handshake_pk_ops += 1;
        s.server_nonce = Some(sn);
        s.session_key = Some(pk_session_key(&shared, &s.flow, &s.client_nonce, &sn));
        if !s.check_finished(b"server finished", &fin) {
            s.session_key = None;
            return Err(self.fail(&key, EndpointError::FinishedMismatch));
        }
        s.eph = None;
        self.client_complete(&key, MsgType::PkClientFinished)
    }

    /// Sends `data` on an established flow.
    pub fn secure_send(&mut self, flow: &FlowKey, data: &[u8]) -> Result<Vec<CtOutput>, EndpointError> {
        let s = self
            .sessions
            .get_mut(&flow.canonical())
            .ok_or(EndpointError::UnknownFlow)?;
        let rec = s.seal_record(data)?;
        self.metrics.records_sent += 1;
        Ok(vec![CtOutput::Send(s.packet(MsgType::Record, &rec)?)])
    }

    /// Application data received so far on `flow`.
    pub fn secure_recv(&self, flow: &FlowKey) -> Result<&[Vec<u8>], EndpointError> {
        let s = self.session(flow).ok_or(EndpointError::UnknownFlow)?;
        if !s.established {
            return Err(EndpointError::NotEstablished);
        }
        Ok(&s.received)
    }
}
