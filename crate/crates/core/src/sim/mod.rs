//! Deterministic discrete-event network: controller, switch and task
//! enclaves on emulated platforms, wired through an adversary tap.
//!
//! Every link has a latency of one tick. A handler's i-th output departs
//! i ticks after the message that caused it, so control messages queue
//! behind each other at the sender.

mod safety;
mod tap;

pub use safety::{SafetyMonitor, Violation, ViolationKind};
pub use tap::{AdversaryTap, Carried, MessageFilter, TapRule, TapStats, TapTransport, TranscriptEntry};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::attestation::{
    anti_cuckoo_check, attest_enclave, issue_verifier_certificate, publish_platform_list,
    AttestPolicy, EpidAuthority, Verdict, Verifier,
};
use crate::control::{ControlError, Controller, ControllerConfig, EnclaveImage, FlowKey, FlowRule, Outgoing};
use crate::crypto::{EpidIssuer, PseudonymBase};
use crate::dataplane::{Packet, SwitchOutput, SwitchState};
use crate::enclave::{Datacenter, EnclaveId, Platform, PlatformError, PlatformId, StateRegion};
use crate::endpoints::{CtOutput, CtState, HandshakeMode};
use crate::net::{CtId, DomainId, Hop, NodeId, Segment, SwitchId, Tick};
use crate::wire::{unframe, MsgType};

pub const LINK_LATENCY: Tick = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("topology error: {0}")]
    Topology(String),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub seed: u64,
    pub platforms: u32,
    /// Platforms left out of the published signature list. They are run by
    /// the adversary.
    pub rogue: BTreeSet<u32>,
    /// Publish a platform list and require attestations to link to it.
    pub anti_cuckoo: bool,
    pub distribute_psk: bool,
}

impl NetworkConfig {
    pub fn new(seed: u64, platforms: u32) -> Self {
        Self {
            seed,
            platforms,
            rogue: BTreeSet::new(),
            anti_cuckoo: false,
            distribute_psk: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Event {
    Deliver {
        hop: Hop,
        tag: MsgType,
        bytes: Vec<u8>,
        injected: bool,
    },
    Wake(CtId),
    Open(OpenRequest),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpenRequest {
    pub src: CtId,
    pub dst: CtId,
    pub src_port: u16,
    pub dst_port: u16,
    pub mode: HandshakeMode,
    pub payloads: Vec<Vec<u8>>,
}

/// Outcome of one deployment attempt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeployRecord {
    pub at: Tick,
    pub platform: PlatformId,
    pub node: Option<NodeId>,
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
}

/// Per-flow timing observed by the simulator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlowTiming {
    pub opened_at: Tick,
    /// First delivery of the flow's opening packet at the destination task.
    pub first_delivery: Option<Tick>,
}

pub struct Network {
    dc: Datacenter,
    authority: EpidAuthority,
    controller: Controller,
    tap: AdversaryTap,
    safety: SafetyMonitor,
    queue: BTreeMap<(Tick, u64), Event>,
    seq: u64,
    now: Tick,
    rng: ChaCha20Rng,
    platform_ids: Vec<PlatformId>,
    timings: BTreeMap<FlowKey, FlowTiming>,
    payloads: Vec<Vec<u8>>,
    deployments: Vec<DeployRecord>,
    injected_fib_changes: u64,
    rejected: u64,
    isolation_probes: (u64, u64),
}

impl Network {
    pub fn new(cfg: NetworkConfig) -> Result<Self, SimError> {
        if cfg.platforms == 0 {
            return Err(SimError::Topology("no platforms".into()));
        }
        if let Some(r) = cfg.rogue.iter().find(|&&r| r >= cfg.platforms) {
            return Err(SimError::Topology(format!("rogue platform {r} does not exist")));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let (group, members) = EpidIssuer::setup("trusdn-dc", cfg.platforms as usize, &mut rng);
        let group = Arc::new(group);
        let mut dc = Datacenter::new();
        let mut platform_ids = Vec::new();
        for (i, m) in members.into_iter().enumerate() {
            let id = PlatformId(i as u32);
            let mut p = Platform::new(id, group.clone(), m, rng.next_u64());
            p.honest = !cfg.rogue.contains(&(i as u32));
            dc.insert(p);
            platform_ids.push(id);
        }
        let authority = EpidAuthority::new("epid-root", group, &mut rng);
        let mut controller = Controller::new(
            &authority,
            ControllerConfig {
                distribute_psk: cfg.distribute_psk,
                seed: rng.next_u64(),
            },
        );
        let cert = issue_verifier_certificate(
            &authority,
            "NC",
            controller.verifier().public_key(),
            0,
            Tick::MAX,
        );
        controller.verifier_mut().set_certificate_chain(vec![cert]);
        controller.enable_key_audit();
        if cfg.anti_cuckoo {
            let mut vp = Verifier::new("V_P", &authority, rng.next_u64());
            let vp_cert = issue_verifier_certificate(&authority, "V_P", vp.public_key(), 0, Tick::MAX);
            vp.set_certificate_chain(vec![vp_cert]);
            let listed: Vec<PlatformId> = platform_ids
                .iter()
                .copied()
                .filter(|p| !cfg.rogue.contains(&p.0))
                .collect();
            let (list, failures) = publish_platform_list(&vp, &mut dc, &listed, 0, 0)
                .map_err(|e| SimError::Topology(e.to_string()))?;
            if !failures.is_empty() {
                return Err(SimError::Topology(format!("list publication failed: {failures:?}")));
            }
            controller.set_anti_cuckoo(Some(list));
        }
        let tap = AdversaryTap::new(rng.next_u64());
        Ok(Self {
            dc,
            authority,
            controller,
            tap,
            safety: SafetyMonitor::default(),
            queue: BTreeMap::new(),
            seq: 0,
            now: 0,
            rng,
            platform_ids,
            timings: BTreeMap::new(),
            payloads: Vec::new(),
            deployments: Vec::new(),
            injected_fib_changes: 0,
            rejected: 0,
            isolation_probes: (0, 0),
        })
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut Controller {
        &mut self.controller
    }

    pub fn datacenter(&self) -> &Datacenter {
        &self.dc
    }

    pub fn datacenter_mut(&mut self) -> &mut Datacenter {
        &mut self.dc
    }

    pub fn authority(&self) -> &EpidAuthority {
        &self.authority
    }

    pub fn tap(&self) -> &AdversaryTap {
        &self.tap
    }

    pub fn tap_mut(&mut self) -> &mut AdversaryTap {
        &mut self.tap
    }

    pub fn safety(&self) -> &SafetyMonitor {
        &self.safety
    }

    pub fn platforms(&self) -> &[PlatformId] {
        &self.platform_ids
    }

    pub fn deployments(&self) -> &[DeployRecord] {
        &self.deployments
    }

    pub fn timing(&self, flow: &FlowKey) -> Option<FlowTiming> {
        self.timings.get(flow).copied()
    }

    /// Application payloads handed to tasks so far.
    pub fn payloads(&self) -> &[Vec<u8>] {
        &self.payloads
    }

    /// Forged or replayed messages that changed a switch's rule table.
    pub fn injected_fib_changes(&self) -> u64 {
        self.injected_fib_changes
    }

    /// Messages a receiver rejected.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// (attempts, successes) of host reads of enclave secrets.
    pub fn isolation_probes(&self) -> (u64, u64) {
        self.isolation_probes
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    fn platform(&self, index: u32) -> Result<PlatformId, SimError> {
        self.platform_ids
            .get(index as usize)
            .copied()
            .ok_or_else(|| SimError::Topology(format!("no platform {index}")))
    }

    fn record_deploy(&mut self, platform: PlatformId, r: &Result<NodeId, ControlError>) {
        let (node, verdict, error) = match r {
            Ok(n) => (Some(*n), Some(Verdict::Accepted), None),
            Err(ControlError::EnrollmentRejected(v)) => (None, Some(*v), Some(format!("{v:?}"))),
            Err(e) => (None, None, Some(e.to_string())),
        };
        self.deployments.push(DeployRecord {
            at: self.now,
            platform,
            node,
            verdict,
            error,
        });
    }

    /// Deploys `image` as a switch on platform `index`.
    pub fn deploy_switch_image(
        &mut self,
        index: u32,
        domain: DomainId,
        image: &EnclaveImage,
    ) -> Result<SwitchId, SimError> {
        let pid = self.platform(index)?;
        let mut t = TapTransport {
            tap: &mut self.tap,
            now: self.now,
        };
        let r = self
            .controller
            .deploy_and_enroll_switch(&mut self.dc, pid, image, domain, self.now, &mut t);
        self.record_deploy(pid, &r.as_ref().map(|s| NodeId::Switch(*s)).map_err(Clone::clone));
        Ok(r?)
    }

    pub fn deploy_switch(&mut self, index: u32, domain: DomainId) -> Result<SwitchId, SimError> {
        self.deploy_switch_image(index, domain, &EnclaveImage::switch())
    }

    /// Deploys a compute task on platform `index`, attached to the switch
    /// running there.
    pub fn deploy_ct(&mut self, index: u32) -> Result<CtId, SimError> {
        let pid = self.platform(index)?;
        let sw = self
            .controller
            .view()
            .switch_on(pid)
            .ok_or(ControlError::NoSwitchOnPlatform(pid))?;
        let mut t = TapTransport {
            tap: &mut self.tap,
            now: self.now,
        };
        let r = self.controller.deploy_and_enroll_ct(
            &mut self.dc,
            pid,
            &EnclaveImage::compute_task(),
            sw,
            self.now,
            &mut t,
        );
        self.record_deploy(pid, &r.as_ref().map(|c| NodeId::Ct(*c)).map_err(Clone::clone));
        Ok(r?)
    }

    /// Loads `image` on platform `index` and attests it without enrolling.
    /// With `use_list` false the anti-cuckoo list is ignored.
    pub fn attest_only(
        &mut self,
        index: u32,
        image: &EnclaveImage,
        use_list: bool,
    ) -> Result<Verdict, SimError> {
        let pid = self.platform(index)?;
        let eid = self
            .dc
            .get_mut(pid)?
            .create_enclave(image.kind, &image.code, &image.config)?;
        let list = if use_list {
            self.controller.anti_cuckoo().cloned()
        } else {
            None
        };
        let mut t = TapTransport {
            tap: &mut self.tap,
            now: self.now,
        };
        let r = attest_enclave(
            self.controller.verifier_mut(),
            NodeId::Controller,
            &mut self.dc,
            pid,
            eid,
            &image.measurement(),
            PseudonymBase::named("NC"),
            AttestPolicy {
                anti_cuckoo: list.as_ref(),
            },
            self.now,
            &mut t,
        )
        .map_err(ControlError::from)?;
        Ok(r.verdict)
    }

    /// Tenant-side check that platform `index` links to the published list.
    /// `None` when no list is in force.
    pub fn anti_cuckoo_check(&mut self, index: u32) -> Result<Option<bool>, SimError> {
        let pid = self.platform(index)?;
        let Some(list) = self.controller.anti_cuckoo().cloned() else {
            return Ok(None);
        };
        let now = self.now;
        let ok = anti_cuckoo_check(self.controller.verifier_mut(), &mut self.dc, pid, &list, now)
            .map_err(ControlError::from)?;
        Ok(Some(ok))
    }

    /// Gives every task the public keys of all others, as the baseline
    /// handshake requires.
    pub fn distribute_peer_keys(&mut self) -> Result<(), SimError> {
        let keys: Vec<(CtId, _)> = self
            .controller
            .view()
            .compute_tasks
            .iter()
            .map(|(&c, r)| (c, r.ck_pk))
            .collect();
        for &(c, _) in &keys {
            self.with_ct(c, |st| {
                for &(peer, pk) in &keys {
                    if peer != c {
                        st.set_peer_key(peer, pk);
                    }
                }
            })?;
        }
        Ok(())
    }

    fn ct_location(&self, c: CtId) -> Result<(PlatformId, EnclaveId), SimError> {
        let r = self
            .controller
            .view()
            .compute_tasks
            .get(&c)
            .ok_or_else(|| SimError::Topology(format!("unknown {c}")))?;
        Ok((r.platform, r.enclave))
    }

    fn switch_location(&self, s: SwitchId) -> Result<(PlatformId, EnclaveId), SimError> {
        let r = self
            .controller
            .view()
            .switches
            .get(&s)
            .ok_or_else(|| SimError::Topology(format!("unknown {s}")))?;
        Ok((r.platform, r.enclave))
    }

    /// Test hook: runs `f` on the task's enclave state.
    pub fn with_ct<R>(&mut self, c: CtId, f: impl FnOnce(&mut CtState) -> R) -> Result<R, SimError> {
        let (pid, eid) = self.ct_location(c)?;
        self.dc
            .get_mut(pid)?
            .ecall(eid, |rt| rt.state::<CtState>().map(f))?
            .ok_or_else(|| SimError::Topology(format!("{c} has no state")))
    }

    /// Test hook: runs `f` on the switch's enclave state.
    pub fn with_switch<R>(
        &mut self,
        s: SwitchId,
        f: impl FnOnce(&mut SwitchState) -> R,
    ) -> Result<R, SimError> {
        let (pid, eid) = self.switch_location(s)?;
        self.dc
            .get_mut(pid)?
            .ecall(eid, |rt| rt.state::<SwitchState>().map(f))?
            .ok_or_else(|| SimError::Topology(format!("{s} has no state")))
    }

    fn push_event(&mut self, at: Tick, ev: Event) {
        self.queue.insert((at, self.seq), ev);
        self.seq += 1;
    }

    /// Puts a message on the wire, `index` ticks after `now`. Plain
    /// forwards by a switch do not vouch for the bytes they carry.
    fn send_as(&mut self, hop: Hop, tag: MsgType, bytes: Vec<u8>, index: usize, origin: bool) {
        let depart = self.now + index as Tick;
        if origin {
            self.safety.emitted(&bytes);
        }
        if let Some(c) = self.tap.intercept(depart, hop, tag, bytes) {
            self.push_event(
                depart + LINK_LATENCY + c.delay,
                Event::Deliver {
                    hop,
                    tag,
                    bytes: c.bytes,
                    injected: false,
                },
            );
        }
    }

    fn send(&mut self, hop: Hop, tag: MsgType, bytes: Vec<u8>, index: usize) {
        self.send_as(hop, tag, bytes, index, true);
    }

    fn send_all(&mut self, outs: Vec<Outgoing>) {
        for (i, o) in outs.into_iter().enumerate() {
            let hop = Hop {
                from: NodeId::Controller,
                to: o.to,
                segment: o.segment,
            };
            self.send(hop, o.tag, o.bytes, i);
        }
    }

    /// Adversarial message delivered at `at` (at least one tick from now).
    pub fn inject(&mut self, at: Tick, hop: Hop, bytes: Vec<u8>) -> Result<(), SimError> {
        let (tag, _) = unframe(&bytes).map_err(|e| SimError::Topology(e.to_string()))?;
        let at = at.max(self.now + LINK_LATENCY);
        self.tap.record_injection(at - LINK_LATENCY, hop, tag, bytes.clone());
        self.push_event(
            at,
            Event::Deliver {
                hop,
                tag,
                bytes,
                injected: true,
            },
        );
        Ok(())
    }

    /// Schedules a task to open a flow at tick `at`.
    pub fn schedule_open(&mut self, at: Tick, req: OpenRequest) {
        let at = at.max(self.now);
        self.push_event(at, Event::Open(req));
    }

    /// Sends the domain's next key to its members.
    pub fn rotate_domain(&mut self, domain: DomainId) -> Result<u64, SimError> {
        let (epoch, outs) = self.controller.rotate_domain_key(domain)?;
        self.send_all(outs);
        Ok(epoch)
    }

    /// Deletes every rule on every switch.
    pub fn flush_all_rules(&mut self) -> Result<(), SimError> {
        let ids: Vec<SwitchId> = self.controller.view().switches.keys().copied().collect();
        let mut outs = Vec::new();
        for s in ids {
            outs.push(self.controller.flush_rules(s)?);
        }
        self.send_all(outs);
        Ok(())
    }

    /// Host software tries to read the secret key and sealed state of every
    /// enclave on platform `index`.
    pub fn probe_isolation(&mut self, index: u32) -> Result<(), SimError> {
        let pid = self.platform(index)?;
        let p = self.dc.get(pid)?;
        let ids: Vec<EnclaveId> = p.enclave_ids().collect();
        for e in ids {
            for region in [StateRegion::SecretKey, StateRegion::SealedState] {
                self.isolation_probes.0 += 1;
                if p.host_read_state(e, region).is_ok() {
                    self.isolation_probes.1 += 1;
                }
            }
        }
        Ok(())
    }

    /// Processes all events before `t`, then advances the clock to `t`.
    pub fn run_until(&mut self, t: Tick) {
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 >= t {
                break;
            }
            let ((at, _), ev) = entry.remove_entry();
            self.now = at;
            self.process(ev);
        }
        self.now = self.now.max(t);
    }

    /// Runs until no events remain or the clock passes `limit`. Returns true
    /// if the network went quiet.
    pub fn run_to_quiescence(&mut self, limit: Tick) -> bool {
        self.run_until(limit + 1);
        self.queue.is_empty()
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    fn process(&mut self, ev: Event) {
        match ev {
            Event::Deliver {
                hop,
                tag,
                bytes,
                injected,
            } => self.deliver(hop, tag, bytes, injected),
            Event::Wake(c) => {
                let now = self.now;
                let _ = self.with_ct(c, |st| st.on_timer(now));
            }
            Event::Open(req) => self.open(req),
        }
    }

    fn open(&mut self, req: OpenRequest) {
        let Ok((pid, eid)) = self.ct_location(req.src) else {
            return;
        };
        let flow = FlowKey {
            src: req.src,
            dst: req.dst,
            src_port: req.src_port,
            dst_port: req.dst_port,
            proto: 6,
        };
        self.payloads.extend(req.payloads.iter().cloned());
        let res = self.dc.get_mut(pid).and_then(|p| {
            p.ecall(eid, |rt| {
                let (st, rng) = rt.state_and_rng::<CtState>();
                st.map(|st| {
                    st.ct_open_flow(req.dst, req.src_port, req.dst_port, req.mode, req.payloads, rng)
                })
            })
        });
        self.timings.insert(
            flow,
            FlowTiming {
                opened_at: self.now,
                first_delivery: None,
            },
        );
        if let Ok(Some(Ok(outs))) = res {
            self.ct_outputs(req.src, outs);
        }
    }

    fn ct_outputs(&mut self, c: CtId, outs: Vec<CtOutput>) {
        let Some(sw) = self.controller.view().compute_tasks.get(&c).map(|r| r.switch) else {
            return;
        };
        let hop = Hop {
            from: NodeId::Ct(c),
            to: NodeId::Switch(sw),
            segment: Segment::Gamma,
        };
        let mut i = 0;
        for o in outs {
            match o {
                CtOutput::Send(pkt) => {
                    self.send(hop, MsgType::GammaPacket, pkt.to_frame(), i);
                    i += 1;
                }
                CtOutput::WakeAt(t) => self.push_event(t.max(self.now), Event::Wake(c)),
            }
        }
    }

    fn switch_outputs(&mut self, s: SwitchId, outs: Vec<SwitchOutput>) {
        for (i, o) in outs.into_iter().enumerate() {
            match o {
                SwitchOutput::ToController { tag, bytes } => {
                    let hop = Hop {
                        from: NodeId::Switch(s),
                        to: NodeId::Controller,
                        segment: Segment::Alpha,
                    };
                    self.send(hop, tag, bytes, i);
                }
                SwitchOutput::Beta { peer, bytes } => {
                    let hop = Hop {
                        from: NodeId::Switch(s),
                        to: NodeId::Switch(peer),
                        segment: Segment::Beta,
                    };
                    self.send(hop, MsgType::BetaFrame, bytes, i);
                }
                SwitchOutput::Local { port, bytes } => {
                    let target = self
                        .controller
                        .view()
                        .compute_tasks
                        .iter()
                        .find(|(_, r)| r.switch == s && r.port == port)
                        .map(|(&c, _)| c);
                    if let Some(c) = target {
                        let hop = Hop {
                            from: NodeId::Switch(s),
                            to: NodeId::Ct(c),
                            segment: Segment::Gamma,
                        };
                        self.send_as(hop, MsgType::GammaPacket, bytes, i, false);
                    }
                }
            }
        }
    }

    fn deliver(&mut self, hop: Hop, tag: MsgType, bytes: Vec<u8>, injected: bool) {
        let now = self.now;
        match hop.to {
            NodeId::Controller => match self.controller.handle_message(hop.from, &bytes, now) {
                Ok(outs) => {
                    self.safety.accepted(now, hop.to, &bytes);
                    self.send_all(outs);
                }
                Err(_) => self.rejected += 1,
            },
            NodeId::Switch(s) => {
                let Ok((pid, eid)) = self.switch_location(s) else {
                    self.rejected += 1;
                    return;
                };
                let res = self.dc.get_mut(pid).map(|p| {
                    p.ecall(eid, |rt| {
                        rt.state::<SwitchState>().map(|st| {
                            let before: Vec<FlowRule> = st.fib().rules().copied().collect();
                            let r = st.handle(hop.from, &bytes, now);
                            let changed = st.fib().rules().copied().ne(before.iter().copied());
                            (r, changed)
                        })
                    })
                });
                let Ok(Ok(Some((r, changed)))) = res else {
                    self.rejected += 1;
                    return;
                };
                if injected && changed {
                    self.injected_fib_changes += 1;
                }
                match r {
                    Ok(outs) => {
                        if matches!(hop.from, NodeId::Controller | NodeId::Switch(_)) {
                            self.safety.accepted(now, hop.to, &bytes);
                        }
                        self.switch_outputs(s, outs);
                    }
                    Err(_) => self.rejected += 1,
                }
            }
            NodeId::Ct(c) => {
                if tag == MsgType::GammaPacket {
                    if let Some(t) = unframe(&bytes)
                        .ok()
                        .and_then(|(_, p)| Packet::from_bytes(p).ok())
                        .and_then(|p| self.timings.get_mut(&p.flow))
                    {
                        t.first_delivery.get_or_insert(now);
                    }
                }
                let Ok((pid, eid)) = self.ct_location(c) else {
                    self.rejected += 1;
                    return;
                };
                let res = self.dc.get_mut(pid).map(|p| {
                    p.ecall(eid, |rt| {
                        let (st, rng) = rt.state_and_rng::<CtState>();
                        st.map(|st| st.handle(hop.from, &bytes, rng, now))
                    })
                });
                match res {
                    Ok(Ok(Some(Ok(r)))) => {
                        if r.authenticated {
                            self.safety.accepted(now, hop.to, &bytes);
                        }
                        self.ct_outputs(c, r.outputs);
                    }
                    _ => self.rejected += 1,
                }
            }
            NodeId::Host(_) | NodeId::Verifier => self.rejected += 1,
        }
    }

    /// Every key the adversary must never see: controller-generated keys,
    /// task PSKs and session keys, and switch domain keys.
    pub fn key_material(&mut self) -> BTreeSet<[u8; 32]> {
        let mut keys: BTreeSet<[u8; 32]> = self.controller.audited_keys().iter().copied().collect();
        let cts: Vec<CtId> = self.controller.view().compute_tasks.keys().copied().collect();
        for c in cts {
            let _ = self.with_ct(c, |st| {
                for (_, (_, k)) in st.psks() {
                    keys.insert(*k.expose());
                }
                for s in st.sessions() {
                    if let Some(k) = s.session_key() {
                        keys.insert(*k.expose());
                    }
                }
            });
        }
        let sws: Vec<SwitchId> = self.controller.view().switches.keys().copied().collect();
        for s in sws {
            let _ = self.with_switch(s, |st| {
                keys.insert(*st.k_alpha().expose());
                if let Some((_, k)) = st.k_beta() {
                    keys.insert(*k.expose());
                }
            });
        }
        keys
    }

    /// Transcript entries containing any key as a 32-byte window.
    pub fn key_leaks(&mut self) -> usize {
        let keys = self.key_material();
        self.tap
            .transcript()
            .iter()
            .filter(|e| e.bytes.windows(32).any(|w| keys.contains(w)))
            .count()
    }

    /// Transcript entries containing an 8-byte window of any payload.
    pub fn payload_leaks(&self) -> usize {
        let windows: BTreeSet<&[u8]> = self.payloads.iter().flat_map(|p| p.windows(8)).collect();
        self.tap
            .transcript()
            .iter()
            .filter(|e| e.bytes.windows(8).any(|w| windows.contains(w)))
            .count()
    }

    /// Counter snapshot across all components.
    pub fn metrics(&mut self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        let nc = self.controller.metrics();
        for (k, v) in [
            ("packet_ins", nc.packet_ins),
            ("duplicate_packet_ins", nc.duplicate_packet_ins),
            ("reinstalls", nc.reinstalls),
            ("grants_issued", nc.grants_issued),
            ("install_messages", nc.install_messages),
            ("rule_acks", nc.rule_acks),
            ("rejected_messages", nc.rejected_messages),
            ("enrollments", nc.enrollments),
            ("enrollment_rejections", nc.enrollment_rejections),
            ("rotations", nc.rotations),
        ] {
            m.insert(format!("nc.{k}"), v);
        }
        let sws: Vec<SwitchId> = self.controller.view().switches.keys().copied().collect();
        for s in sws {
            if let Ok(c) = self.with_switch(s, |st| st.metrics()) {
                for (k, v) in c {
                    *m.entry(format!("switch.{k}")).or_default() += v;
                }
            }
        }
        let cts: Vec<CtId> = self.controller.view().compute_tasks.keys().copied().collect();
        for c in cts {
            if let Ok(ct) = self.with_ct(c, |st| st.metrics()) {
                for (k, v) in [
                    ("grants_received", ct.grants_received),
                    ("duplicate_grants", ct.duplicate_grants),
                    ("handshakes_established", ct.handshakes_established),
                    ("handshake_failures", ct.handshake_failures),
                    ("timeouts", ct.timeouts),
                    ("records_sent", ct.records_sent),
                    ("records_received", ct.records_received),
                    ("records_rejected", ct.records_rejected),
                ] {
                    *m.entry(format!("ct.{k}")).or_default() += v;
                }
            }
        }
        let t = self.tap.stats();
        for (k, v) in [
            ("observed", t.observed),
            ("dropped", t.dropped),
            ("mutated", t.mutated),
            ("delayed", t.delayed),
            ("injected", t.injected),
            ("substituted", t.substituted),
        ] {
            m.insert(format!("tap.{k}"), v);
        }
        m.insert("sim.rejected".into(), self.rejected);
        m.insert("sim.injected_fib_changes".into(), self.injected_fib_changes);
        m.insert("sim.violations".into(), self.safety.violations().len() as u64);
        m.insert("sim.key_leaks".into(), self.key_leaks() as u64);
        m.insert("sim.payload_leaks".into(), self.payload_leaks() as u64);
        m
    }
}
