//! The network controller: enrollment of attested switches and compute
//! tasks, packet-in handling with per-flow PSK distribution, rule
//! compilation and domain-key rotation.

mod messages;
mod view;

pub use messages::*;
pub use view::*;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::attestation::{
    attest_enclave, AttestPolicy, AttestationError, EpidAuthority, PlatformSignatureList, Verdict,
    Verifier,
};
use crate::channel::SecureChannel;
use crate::crypto::{CryptoError, KeyOwner, KeyPair, KeyRole, PseudonymBase, PublicKey, SymmetricKey};
use crate::dataplane::{self, Packet};
use crate::enclave::{Datacenter, EnclaveId, EnclaveKind, Measurement, PlatformError, PlatformId};
use crate::endpoints;
use crate::net::{CtId, DomainId, Hop, NodeId, Segment, SwitchId, Tick, Transport};
use crate::wire::{frame, unframe, MsgType, Reader, WireError, Writer};

/// Priority of the exact-match rules compiled for granted flows.
pub const EXACT_PRIORITY: u16 = 100;
/// Priority of the table-miss rule.
pub const MISS_PRIORITY: u16 = 0;
/// A flow whose installs stay unacknowledged this long is reinstalled on the
/// next packet-in.
pub const PENDING_RETRY: Tick = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControlError {
    #[error("enrollment rejected: {0:?}")]
    EnrollmentRejected(Verdict),
    #[error("no enrolled switch {0}")]
    NoSuchSwitch(SwitchId),
    #[error("no switch enrolled on platform {0:?}")]
    NoSwitchOnPlatform(PlatformId),
    #[error("unknown domain {0:?}")]
    NoSuchDomain(DomainId),
    #[error("message from unknown node {0:?}")]
    UnknownSender(NodeId),
    #[error("unexpected {0:?} message")]
    UnexpectedMessage(MsgType),
    #[error("authentication failure")]
    AuthenticationFailure,
    #[error("message lost in transit")]
    TransportFailure,
    #[error("enclave refused enrollment: {0}")]
    EnclaveRefused(String),
    #[error(transparent)]
    Malformed(#[from] WireError),
    #[error(transparent)]
    Attestation(#[from] AttestationError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Code and configuration of an enclave to deploy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnclaveImage {
    pub kind: EnclaveKind,
    pub code: Vec<u8>,
    pub config: Vec<u8>,
}

impl EnclaveImage {
    /// The reference software switch.
    pub fn switch() -> Self {
        Self {
            kind: EnclaveKind::Switch,
            code: dataplane::SWITCH_CODE.to_vec(),
            config: b"buffer=64;timeout=128".to_vec(),
        }
    }

    /// The reference compute task.
    pub fn compute_task() -> Self {
        Self {
            kind: EnclaveKind::ComputeTask,
            code: endpoints::COMPUTE_TASK_CODE.to_vec(),
            config: b"grant_wait=32".to_vec(),
        }
    }

    pub fn measurement(&self) -> Measurement {
        Measurement::compute(self.kind, &self.code, &self.config)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new()
            .u8(self.kind.code())
            .bytes(&self.code)
            .bytes(&self.config)
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let kind = EnclaveKind::from_code(r.u8()?).ok_or(WireError::Invalid("enclave kind"))?;
        let code = r.bytes()?.to_vec();
        let config = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Self { kind, code, config })
    }
}

/// A framed control message leaving the controller.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outgoing {
    pub to: NodeId,
    pub segment: Segment,
    pub tag: MsgType,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControllerConfig {
    /// Generate and distribute a PSK for every new flow. Off models a plain
    /// SDN control path.
    pub distribute_psk: bool,
    pub seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            distribute_psk: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowStatus {
    /// Rule installs sent, acknowledgements outstanding.
    Pending { since: Tick },
    Installed,
    /// No route: a drop rule was installed at the ingress switch.
    Unreachable,
}

/// Per-flow bookkeeping, keyed by canonical flow.
#[derive(Clone, Debug)]
pub struct FlowEntry {
    pub first: FlowKey,
    pub status: FlowStatus,
    pub grant_epoch: Option<u64>,
    pub installs: Vec<(SwitchId, Vec<FlowRule>)>,
    awaiting: BTreeSet<SwitchId>,
    pub packet_ins: u64,
    pub grants_issued: u64,
    pub install_messages: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ControllerMetrics {
    pub packet_ins: u64,
    pub duplicate_packet_ins: u64,
    pub reinstalls: u64,
    pub grants_issued: u64,
    pub install_messages: u64,
    pub rule_acks: u64,
    pub rejected_messages: u64,
    pub enrollments: u64,
    pub enrollment_rejections: u64,
    pub rotations: u64,
    pub keygen_wall_ns: u64,
    pub wrap_wall_ns: u64,
}

pub struct Controller {
    keypair: KeyPair,
    verifier: Verifier,
    view: GlobalView,
    flows: BTreeMap<FlowKey, FlowEntry>,
    psks: BTreeMap<(FlowKey, u64), SymmetricKey>,
    grant_epochs: BTreeMap<FlowKey, u64>,
    next_switch: u32,
    next_ct: u32,
    next_rule: u64,
    rng: ChaCha20Rng,
    config: ControllerConfig,
    anti_cuckoo: Option<PlatformSignatureList>,
    metrics: ControllerMetrics,
    key_log: Option<Vec<[u8; 32]>>,
}

fn elapsed_ns(t: Instant) -> u64 {
    t.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

impl Controller {
    pub fn new(authority: &EpidAuthority, config: ControllerConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let keypair = KeyPair::generate(KeyOwner::Authority, &mut rng);
        let verifier = Verifier::new("NC", authority, config.seed ^ 0x5eed);
        Self {
            keypair,
            verifier,
            view: GlobalView::default(),
            flows: BTreeMap::new(),
            psks: BTreeMap::new(),
            grant_epochs: BTreeMap::new(),
            next_switch: 0,
            next_ct: 0,
            next_rule: 1,
            rng,
            config,
            anti_cuckoo: None,
            metrics: ControllerMetrics::default(),
            key_log: None,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn view(&self) -> &GlobalView {
        &self.view
    }

    pub fn verifier(&self) -> &Verifier {
        &self.verifier
    }

    pub fn verifier_mut(&mut self) -> &mut Verifier {
        &mut self.verifier
    }

    pub fn metrics(&self) -> ControllerMetrics {
        self.metrics
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn set_distribute_psk(&mut self, on: bool) {
        self.config.distribute_psk = on;
    }

    /// Requires every later attestation to link to `list`.
    pub fn set_anti_cuckoo(&mut self, list: Option<PlatformSignatureList>) {
        self.anti_cuckoo = list;
    }

    pub fn anti_cuckoo(&self) -> Option<&PlatformSignatureList> {
        self.anti_cuckoo.as_ref()
    }

    /// Starts recording every key the controller generates.
    pub fn enable_key_audit(&mut self) {
        self.key_log.get_or_insert_with(Vec::new);
    }

    pub fn audited_keys(&self) -> &[[u8; 32]] {
        self.key_log.as_deref().unwrap_or(&[])
    }

    fn log_key(&mut self, k: &SymmetricKey) {
        if let Some(log) = &mut self.key_log {
            log.push(*k.expose());
        }
    }

    pub fn flow(&self, flow: &FlowKey) -> Option<&FlowEntry> {
        self.flows.get(&flow.canonical())
    }

    pub fn flows(&self) -> impl Iterator<Item = (&FlowKey, &FlowEntry)> {
        self.flows.iter()
    }

    /// PSKs retained per (canonical flow, grant epoch).
    pub fn psks(&self) -> &BTreeMap<(FlowKey, u64), SymmetricKey> {
        &self.psks
    }

    /// Forgets a flow so its next packet-in starts a fresh grant epoch.
    pub fn expire_flow(&mut self, flow: &FlowKey) {
        self.flows.remove(&flow.canonical());
    }

    fn new_domain(&mut self, domain: DomainId) {
        if !self.view.domains.contains_key(&domain) {
            let k_beta = SymmetricKey::generate(KeyRole::DomainBeta, &mut self.rng);
            self.log_key(&k_beta);
            self.view.domains.insert(
                domain,
                DomainRecord {
                    k_beta,
                    epoch: 0,
                    members: BTreeSet::new(),
                },
            );
        }
    }

    /// Ships `image` to the host, loads it there and attests the result.
    /// The host receives the image over `transport` and may alter it.
    fn deploy_and_attest(
        &mut self,
        dc: &mut Datacenter,
        platform: PlatformId,
        image: &EnclaveImage,
        now: Tick,
        transport: &mut dyn Transport,
    ) -> Result<(EnclaveId, PublicKey, Measurement), ControlError> {
        let hop = Hop {
            from: NodeId::Controller,
            to: NodeId::Host(platform),
            segment: Segment::Physical,
        };
        let sent = frame(MsgType::DeployRequest, &image.to_bytes());
        let got = transport
            .carry(hop, MsgType::DeployRequest, sent)
            .ok_or(ControlError::TransportFailure)?;
        let (tag, payload) = unframe(&got)?;
        if tag != MsgType::DeployRequest {
            return Err(ControlError::UnexpectedMessage(tag));
        }
        let loaded = EnclaveImage::from_bytes(payload)?;
        let eid = dc
            .get_mut(platform)?
            .create_enclave(loaded.kind, &loaded.code, &loaded.config)?;
        let expected = image.measurement();
        // Named bases need a certificate; without one the controller stays
        // unlinkable with a random base.
        let base = match (&self.anti_cuckoo, self.verifier.certificate()) {
            (Some(list), _) => list.base(),
            (None, Some(cert)) if self.verifier.is_authorized(now) => {
                PseudonymBase::named(cert.subject.clone())
            }
            _ => PseudonymBase::random(&mut self.rng),
        };
        let result = attest_enclave(
            &mut self.verifier,
            NodeId::Controller,
            dc,
            platform,
            eid,
            &expected,
            base,
            AttestPolicy {
                anti_cuckoo: self.anti_cuckoo.as_ref(),
            },
            now,
            transport,
        )?;
        self.view.verdicts.insert(eid, result.verdict);
        match result.enclave_pk {
            Some(pk) if result.verdict == Verdict::Accepted => Ok((eid, pk, expected)),
            _ => {
                self.metrics.enrollment_rejections += 1;
                Err(ControlError::EnrollmentRejected(result.verdict))
            }
        }
    }

    /// Sends the enrollment message, lets the enclave consume it and checks
    /// the sealed acknowledgement it returns.
    #[allow(clippy::too_many_arguments)]
    fn deliver_enrollment(
        &mut self,
        dc: &mut Datacenter,
        platform: PlatformId,
        eid: EnclaveId,
        node: NodeId,
        ek_pk: &PublicKey,
        keys: &EnrollmentKeys,
        transport: &mut dyn Transport,
    ) -> Result<SecureChannel, ControlError> {
        let (msg, eph) = EnrollmentMessage::build(ek_pk, node, keys, &mut self.rng)?;
        self.log_key(&eph.k_enc);
        self.log_key(&eph.k_mac);
        let out = Hop {
            from: NodeId::Controller,
            to: node,
            segment: Segment::Alpha,
        };
        let got = transport
            .carry(out, MsgType::Enrollment, frame(MsgType::Enrollment, &msg.to_bytes()))
            .ok_or(ControlError::TransportFailure)?;
        let ack = dc
            .get_mut(platform)?
            .ecall(eid, |rt| match node {
                NodeId::Switch(id) => dataplane::enroll_switch(rt, id, &got),
                NodeId::Ct(id) => endpoints::enroll_ct(rt, id, &got),
                _ => Err("not an enrollable node".to_owned()),
            })?
            .map_err(ControlError::EnclaveRefused)?;
        let back = Hop {
            from: node,
            to: NodeId::Controller,
            segment: Segment::Alpha,
        };
        let ack = transport
            .carry(back, MsgType::Enrollment, ack)
            .ok_or(ControlError::TransportFailure)?;
        let mut channel = SecureChannel::controller_end(keys.k_alpha.clone());
        let (tag, sealed) = unframe(&ack)?;
        let plain = channel
            .open(MsgType::Enrollment, sealed)
            .map_err(|_| ControlError::AuthenticationFailure)?;
        if tag != MsgType::Enrollment || plain != enrollment_ack(node) {
            return Err(ControlError::AuthenticationFailure);
        }
        Ok(channel)
    }

    /// Deploys a switch enclave on `platform`, attests it and, if accepted,
    /// enrolls it into `domain`.
    pub fn deploy_and_enroll_switch(
        &mut self,
        dc: &mut Datacenter,
        platform: PlatformId,
        image: &EnclaveImage,
        domain: DomainId,
        now: Tick,
        transport: &mut dyn Transport,
    ) -> Result<SwitchId, ControlError> {
        let (eid, ek_pk, measurement) = self.deploy_and_attest(dc, platform, image, now, transport)?;
        let id = SwitchId(self.next_switch);
        self.new_domain(domain);
        let d = &self.view.domains[&domain];
        let domain_keys = DomainKeyMaterial {
            k_beta: d.k_beta.clone(),
            epoch: d.epoch,
        };
        let k_alpha = SymmetricKey::generate(KeyRole::SessionAlpha, &mut self.rng);
        self.log_key(&k_alpha);
        let keys = EnrollmentKeys {
            k_alpha,
            domain: Some(domain_keys),
            controller_pk: self.keypair.public(),
        };
        let channel = self.deliver_enrollment(
            dc,
            platform,
            eid,
            NodeId::Switch(id),
            &ek_pk,
            &keys,
            transport,
        )?;
        self.next_switch += 1;
        self.view
            .add_switch(id, platform, eid, measurement, ek_pk, domain, channel);
        self.metrics.enrollments += 1;
        Ok(id)
    }

    /// Deploys and enrolls a compute task attached to `attach_to`, which must
    /// run on the same platform.
    pub fn deploy_and_enroll_ct(
        &mut self,
        dc: &mut Datacenter,
        platform: PlatformId,
        image: &EnclaveImage,
        attach_to: SwitchId,
        now: Tick,
        transport: &mut dyn Transport,
    ) -> Result<CtId, ControlError> {
        match self.view.switches.get(&attach_to) {
            Some(s) if s.platform == platform => {}
            _ => return Err(ControlError::NoSuchSwitch(attach_to)),
        }
        let (eid, ck_pk, measurement) = self.deploy_and_attest(dc, platform, image, now, transport)?;
        let id = CtId(self.next_ct);
        let k_alpha = SymmetricKey::generate(KeyRole::SessionAlpha, &mut self.rng);
        self.log_key(&k_alpha);
        let keys = EnrollmentKeys {
            k_alpha,
            domain: None,
            controller_pk: self.keypair.public(),
        };
        let channel =
            self.deliver_enrollment(dc, platform, eid, NodeId::Ct(id), &ck_pk, &keys, transport)?;
        self.next_ct += 1;
        let port = self
            .view
            .allocate_port(attach_to)
            .ok_or(ControlError::NoSuchSwitch(attach_to))?;
        self.view.add_ct(
            id,
            CtRecord {
                platform,
                enclave: eid,
                measurement,
                ck_pk,
                switch: attach_to,
                port,
                channel,
            },
        );
        self.metrics.enrollments += 1;
        Ok(id)
    }

    /// Builds a standalone enrollment message (for tests and tooling); the
    /// ephemeral keys are dropped on return.
    pub fn build_enrollment_message(
        &mut self,
        ek_pk: &PublicKey,
        node: NodeId,
        k_alpha: &SymmetricKey,
        domain: Option<DomainKeyMaterial>,
    ) -> Result<EnrollmentMessage, ControlError> {
        let keys = EnrollmentKeys {
            k_alpha: k_alpha.clone(),
            domain,
            controller_pk: self.keypair.public(),
        };
        let (msg, eph) = EnrollmentMessage::build(ek_pk, node, &keys, &mut self.rng)?;
        self.log_key(&eph.k_enc);
        self.log_key(&eph.k_mac);
        Ok(msg)
    }

    /// Fresh `SK_gamma` for `flow`, retained under the next grant epoch.
    pub fn generate_flow_psk(&mut self, flow: &FlowKey) -> (u64, SymmetricKey) {
        let key = flow.canonical();
        let start = Instant::now();
        let psk = SymmetricKey::generate(KeyRole::FlowPsk, &mut self.rng);
        self.metrics.keygen_wall_ns += elapsed_ns(start);
        let epoch = self.grant_epochs.get(&key).map_or(0, |e| e + 1);
        self.grant_epochs.insert(key, epoch);
        self.psks.insert((key, epoch), psk.clone());
        self.log_key(&psk);
        (epoch, psk)
    }

    /// Dispatches a framed message received from `from`.
    pub fn handle_message(
        &mut self,
        from: NodeId,
        bytes: &[u8],
        now: Tick,
    ) -> Result<Vec<Outgoing>, ControlError> {
        let (tag, payload) = unframe(bytes).inspect_err(|_| self.metrics.rejected_messages += 1)?;
        match (from, tag) {
            (NodeId::Switch(s), MsgType::PacketIn) => self.handle_packet_in(s, payload, now),
            (NodeId::Switch(s), MsgType::RuleAck) => self.handle_rule_ack(s, payload).map(|_| vec![]),
            (_, tag) => {
                self.metrics.rejected_messages += 1;
                Err(ControlError::UnexpectedMessage(tag))
            }
        }
    }

    fn open_from_switch(
        &mut self,
        s: SwitchId,
        tag: MsgType,
        sealed: &[u8],
    ) -> Result<Vec<u8>, ControlError> {
        let Some(rec) = self.view.switches.get_mut(&s) else {
            self.metrics.rejected_messages += 1;
            return Err(ControlError::UnknownSender(NodeId::Switch(s)));
        };
        rec.channel.open(tag, sealed).map_err(|_| {
            self.metrics.rejected_messages += 1;
            ControlError::AuthenticationFailure
        })
    }

    /// A table miss reported by `from_switch`: grant a PSK to both endpoints
    /// (new flows only) and install rules on the switches involved.
    pub fn handle_packet_in(
        &mut self,
        from_switch: SwitchId,
        sealed: &[u8],
        now: Tick,
    ) -> Result<Vec<Outgoing>, ControlError> {
        let plain = self.open_from_switch(from_switch, MsgType::PacketIn, sealed)?;
        let pkt = Packet::from_bytes(&plain)?;
        self.metrics.packet_ins += 1;
        let key = pkt.flow.canonical();
        if let Some(entry) = self.flows.get_mut(&key) {
            entry.packet_ins += 1;
            match entry.status {
                FlowStatus::Pending { since } if now.saturating_sub(since) < PENDING_RETRY => {
                    self.metrics.duplicate_packet_ins += 1;
                    return Ok(vec![]);
                }
                _ => {
                    self.metrics.reinstalls += 1;
                    return Ok(self.send_installs(key, now));
                }
            }
        }
        let route = self.route(&pkt.flow, from_switch);
        let mut out = Vec::new();
        let (installs, status, grant_epoch) = match route {
            Some(installs) => {
                let grant_epoch = if self.config.distribute_psk {
                    let (epoch, grants) = self.issue_grant(&pkt.flow)?;
                    out.extend(grants);
                    Some(epoch)
                } else {
                    None
                };
                (installs, FlowStatus::Pending { since: now }, grant_epoch)
            }
            None => {
                let drop = vec![self.rule(FlowMatch::exact(&pkt.flow), Action::Drop)];
                (vec![(from_switch, drop)], FlowStatus::Unreachable, None)
            }
        };
        self.flows.insert(
            key,
            FlowEntry {
                first: pkt.flow,
                status,
                grant_epoch,
                installs,
                awaiting: BTreeSet::new(),
                packet_ins: 1,
                grants_issued: grant_epoch.map_or(0, |_| 1),
                install_messages: 0,
            },
        );
        out.extend(self.send_installs(key, now));
        Ok(out)
    }

    fn rule(&mut self, matcher: FlowMatch, action: Action) -> FlowRule {
        let id = self.next_rule;
        self.next_rule += 1;
        FlowRule {
            id,
            matcher,
            action,
            priority: EXACT_PRIORITY,
        }
    }

    /// Rules for both directions of `flow`, destination switch first. `None`
    /// when an endpoint is unknown or the switches share no domain.
    fn route(&mut self, flow: &FlowKey, ingress: SwitchId) -> Option<Vec<(SwitchId, Vec<FlowRule>)>> {
        let a = self.view.compute_tasks.get(&flow.src)?;
        let b = self.view.compute_tasks.get(&flow.dst)?;
        let (sa, pa, sb, pb) = (a.switch, a.port, b.switch, b.port);
        if sa != ingress && sb != ingress {
            return None;
        }
        let fwd = FlowMatch::exact(flow);
        let rev = FlowMatch::exact(&flow.reversed());
        if sa == sb {
            let rules = vec![
                self.rule(fwd, Action::ForwardLocal(pb)),
                self.rule(rev, Action::ForwardLocal(pa)),
            ];
            return Some(vec![(sa, rules)]);
        }
        if self.view.switches[&sa].domain != self.view.switches[&sb].domain {
            return None;
        }
        let at_b = vec![
            self.rule(fwd, Action::ForwardLocal(pb)),
            self.rule(rev, Action::ForwardTunnel(sa)),
        ];
        let at_a = vec![
            self.rule(fwd, Action::ForwardTunnel(sb)),
            self.rule(rev, Action::ForwardLocal(pa)),
        ];
        Some(vec![(sb, at_b), (sa, at_a)])
    }

    fn issue_grant(&mut self, flow: &FlowKey) -> Result<(u64, Vec<Outgoing>), ControlError> {
        let (epoch, psk) = self.generate_flow_psk(flow);
        let canon = flow.canonical();
        let pk_src = self.view.compute_tasks[&flow.src].ck_pk;
        let pk_dst = self.view.compute_tasks[&flow.dst].ck_pk;
        let start = Instant::now();
        let grant = PskGrant::build(
            canon,
            epoch,
            &psk,
            [(flow.src, &pk_src), (flow.dst, &pk_dst)],
            self.keypair.secret(),
            &mut self.rng,
        )?;
        self.metrics.wrap_wall_ns += elapsed_ns(start);
        let body = grant.to_bytes();
        let mut out = Vec::with_capacity(2);
        for ct in [flow.src, flow.dst] {
            let rec = self.view.compute_tasks.get_mut(&ct).expect("routed endpoint");
            let sealed = rec.channel.seal(MsgType::PskGrant, &body)?;
            out.push(Outgoing {
                to: NodeId::Ct(ct),
                segment: Segment::Alpha,
                tag: MsgType::PskGrant,
                bytes: frame(MsgType::PskGrant, &sealed),
            });
        }
        self.metrics.grants_issued += 1;
        Ok((epoch, out))
    }

    fn send_installs(&mut self, key: FlowKey, now: Tick) -> Vec<Outgoing> {
        let entry = self.flows.get_mut(&key).expect("flow entry exists");
        let mut out = Vec::new();
        let mut awaiting = BTreeSet::new();
        for (sw, rules) in &entry.installs {
            let Some(rec) = self.view.switches.get_mut(sw) else {
                continue;
            };
            let Ok(sealed) = rec.channel.seal(MsgType::RuleInstall, &encode_rules(rules)) else {
                continue;
            };
            awaiting.insert(*sw);
            out.push(Outgoing {
                to: NodeId::Switch(*sw),
                segment: Segment::Alpha,
                tag: MsgType::RuleInstall,
                bytes: frame(MsgType::RuleInstall, &sealed),
            });
        }
        entry.install_messages += out.len() as u64;
        self.metrics.install_messages += out.len() as u64;
        if entry.status != FlowStatus::Unreachable {
            entry.status = FlowStatus::Pending { since: now };
        }
        entry.awaiting = awaiting;
        out
    }

    /// Marks the acknowledged rules of `from_switch` as installed.
    pub fn handle_rule_ack(&mut self, from_switch: SwitchId, sealed: &[u8]) -> Result<(), ControlError> {
        let plain = self.open_from_switch(from_switch, MsgType::RuleAck, sealed)?;
        let acked = decode_ack(&plain)?;
        self.metrics.rule_acks += 1;
        for entry in self.flows.values_mut() {
            let covered = entry
                .installs
                .iter()
                .filter(|(s, _)| *s == from_switch)
                .all(|(_, rules)| rules.iter().all(|r| acked.contains(&r.id)));
            if covered && entry.awaiting.remove(&from_switch) && entry.awaiting.is_empty() {
                if let FlowStatus::Pending { .. } = entry.status {
                    entry.status = FlowStatus::Installed;
                }
            }
        }
        Ok(())
    }

    /// Sealed "delete all flows" for `switch`.
    pub fn flush_rules(&mut self, switch: SwitchId) -> Result<Outgoing, ControlError> {
        let rec = self
            .view
            .switches
            .get_mut(&switch)
            .ok_or(ControlError::NoSuchSwitch(switch))?;
        let sealed = rec.channel.seal(MsgType::FlushRules, &[])?;
        Ok(Outgoing {
            to: NodeId::Switch(switch),
            segment: Segment::Alpha,
            tag: MsgType::FlushRules,
            bytes: frame(MsgType::FlushRules, &sealed),
        })
    }

    /// Replaces the domain key and re-delivers it to every member.
    pub fn rotate_domain_key(&mut self, domain: DomainId) -> Result<(u64, Vec<Outgoing>), ControlError> {
        if !self.view.domains.contains_key(&domain) {
            return Err(ControlError::NoSuchDomain(domain));
        }
        let k_beta = SymmetricKey::generate(KeyRole::DomainBeta, &mut self.rng);
        self.log_key(&k_beta);
        let d = self.view.domains.get_mut(&domain).expect("checked above");
        d.k_beta = k_beta.clone();
        d.epoch += 1;
        let material = DomainKeyMaterial {
            k_beta,
            epoch: d.epoch,
        };
        let members: Vec<SwitchId> = d.members.iter().copied().collect();
        let epoch = d.epoch;
        let body = material.to_bytes();
        let mut out = Vec::new();
        for s in members {
            let rec = self.view.switches.get_mut(&s).expect("member is enrolled");
            let sealed = rec.channel.seal(MsgType::DomainKeyUpdate, &body)?;
            out.push(Outgoing {
                to: NodeId::Switch(s),
                segment: Segment::Alpha,
                tag: MsgType::DomainKeyUpdate,
                bytes: frame(MsgType::DomainKeyUpdate, &sealed),
            });
        }
        self.metrics.rotations += 1;
        Ok((epoch, out))
    }
}

/// Plaintext an enclave seals to confirm enrollment as `node`.
pub(crate) fn enrollment_ack(node: NodeId) -> Vec<u8> {
    [b"trusdn/enrolled/v1".as_slice(), &node.code()].concat()
}

pub(crate) fn encode_ack(rule_ids: &[u64]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(rule_ids.len() as u32);
    for id in rule_ids {
        w.u64(*id);
    }
    w.finish()
}

fn decode_ack(b: &[u8]) -> Result<BTreeSet<u64>, WireError> {
    let mut r = Reader::new(b);
    let n = r.u32()? as usize;
    if n > 1024 {
        return Err(WireError::Invalid("ack count"));
    }
    let ids = (0..n).map(|_| r.u64()).collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(ids)
}
