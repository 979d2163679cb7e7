//! Scripted attack scenarios: a topology, a timed adversary script and named
//! assertions over the final network state and the adversary's transcript.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::Verdict;
use crate::channel::SecureChannel;
use crate::control::{encode_rules, Action, EnclaveImage, FlowKey, FlowMatch, FlowRule, EXACT_PRIORITY};
use crate::crypto::{KeyRole, SymmetricKey};
use crate::dataplane::AlarmKind;
use crate::endpoints::HandshakeMode;
use crate::enclave::EnclaveKind;
use crate::net::{CtId, DomainId, Hop, NodeId, Segment, SwitchId, Tick};
use crate::sim::{MessageFilter, Network, NetworkConfig, OpenRequest, SimError, TapRule};
use crate::wire::{frame, MsgType};

pub const DEFAULT_TICK_LIMIT: Tick = 20_000;
const PAYLOAD_LEN: usize = 48;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Topology(#[from] SimError),
    #[error("script error at tick {at}: {msg}")]
    Script { at: Tick, msg: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub topology: Topology,
    #[serde(default)]
    pub adversary_script: Vec<ScriptStep>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub hosts: u32,
    /// Adversary-run hosts, left off the platform list.
    #[serde(default)]
    pub rogue_hosts: Vec<u32>,
    /// Switches to deploy; defaults to one per honest host in domain 0.
    #[serde(default)]
    pub switches: Option<Vec<SwitchSpec>>,
    /// Compute tasks, each attached to the switch on its host.
    #[serde(default)]
    pub cts: Vec<CtSpec>,
    #[serde(default)]
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub anti_cuckoo: bool,
    #[serde(default)]
    pub tick_limit: Option<Tick>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    pub host: u32,
    #[serde(default)]
    pub domain: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtSpec {
    pub host: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Psk,
    Pk,
}

impl From<Mode> for HandshakeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Psk => HandshakeMode::Psk,
            Mode::Pk => HandshakeMode::BaselinePk,
        }
    }
}

fn one() -> u32 {
    1
}

/// `count` flows from task `src` to task `dst`, the first at `at` and then
/// every `every` ticks, each carrying `messages` random payloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub src: u32,
    pub dst: u32,
    #[serde(default)]
    pub at: Tick,
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default)]
    pub every: Tick,
    #[serde(default = "one")]
    pub messages: u32,
    #[serde(default)]
    pub mode: Mode,
}

/// One timed step: `{"at": T, "action": "...", ...}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptStep {
    pub at: Tick,
    pub action: AdversaryAction,
}

impl Serialize for ScriptStep {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut v = serde_json::to_value(&self.action).map_err(serde::ser::Error::custom)?;
        v["at"] = self.at.into();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScriptStep {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut v = serde_json::Map::deserialize(d)?;
        let at = v.remove("at").ok_or_else(|| D::Error::missing_field("at"))?;
        let at = serde_json::from_value(at).map_err(D::Error::custom)?;
        let action = serde_json::from_value(v.into()).map_err(D::Error::custom)?;
        Ok(Self { at, action })
    }
}

/// A node named in a script: `"controller"`, `"switch:N"` or `"ct:N"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRef(pub NodeId);

impl Serialize for NodeRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let txt = match self.0 {
            NodeId::Controller => "controller".to_owned(),
            NodeId::Switch(x) => format!("switch:{}", x.0),
            NodeId::Ct(x) => format!("ct:{}", x.0),
            NodeId::Host(p) => format!("host:{}", p.0),
            NodeId::Verifier => "verifier".to_owned(),
        };
        s.serialize_str(&txt)
    }
}

impl<'de> Deserialize<'de> for NodeRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let txt = String::deserialize(d)?;
        let bad = || serde::de::Error::custom(format!("bad node reference {txt:?}"));
        if txt == "controller" {
            return Ok(Self(NodeId::Controller));
        }
        let (kind, n) = txt.split_once(':').ok_or_else(bad)?;
        let n: u32 = n.parse().map_err(|_| bad())?;
        match kind {
            "switch" => Ok(Self(NodeId::Switch(SwitchId(n)))),
            "ct" => Ok(Self(NodeId::Ct(CtId(n)))),
            _ => Err(bad()),
        }
    }
}

fn default_count() -> u64 {
    1
}

fn default_delay() -> Tick {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryAction {
    /// Drop the next `count` matching messages.
    Drop {
        #[serde(default)]
        segment: Option<Segment>,
        #[serde(default)]
        tag: Option<MsgType>,
        #[serde(default = "default_count")]
        count: u64,
    },
    /// Flip one bit in each of the next `count` matching messages.
    Mutate {
        #[serde(default)]
        segment: Option<Segment>,
        #[serde(default)]
        tag: Option<MsgType>,
        #[serde(default = "default_count")]
        count: u64,
    },
    /// Delay the next `count` matching messages so later ones overtake them.
    Reorder {
        #[serde(default)]
        segment: Option<Segment>,
        #[serde(default)]
        tag: Option<MsgType>,
        #[serde(default = "default_delay")]
        ticks: Tick,
        #[serde(default = "default_count")]
        count: u64,
    },
    /// Random loss on a segment from now on.
    Degrade { segment: Segment, rate: f64 },
    /// Re-send a recorded message to its original receiver: the `index`-th
    /// match, or the latest.
    Replay {
        #[serde(default)]
        segment: Option<Segment>,
        #[serde(default)]
        tag: Option<MsgType>,
        #[serde(default)]
        index: Option<usize>,
    },
    /// Random bytes framed as `tag`, delivered to `to` as if from `from`.
    Forge {
        from: NodeRef,
        to: NodeRef,
        tag: MsgType,
        #[serde(default)]
        len: Option<usize>,
    },
    /// A well-formed rule install, sealed under a key the adversary made up.
    ForgeRule { switch: u32 },
    /// Deploy another switch and answer its challenge with an old quote.
    ReplayQuote {
        host: u32,
        #[serde(default)]
        domain: u32,
    },
    /// Swap the switch image in transit. Without `code` the legitimate
    /// image is used unchanged.
    SybilSwitch {
        host: u32,
        #[serde(default)]
        domain: u32,
        #[serde(default)]
        code: Option<String>,
    },
    /// Redirect `victim`'s quoting traffic to `malicious`, then try to
    /// deploy on `victim` with and without the list check.
    Cuckoo { victim: u32, malicious: u32 },
    RotateDomain {
        #[serde(default)]
        domain: u32,
    },
    /// Host software reads enclave secrets on `host`.
    HostRead { host: u32 },
    /// Delete all rules everywhere.
    Flush,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assertion {
    EnrollmentGate,
    NoKeyMaterial,
    OnePskPerFlow,
    ForgedRejected,
    NoPayloadPlaintext,
    AllFlowsEstablished,
    FibUnchangedAlarmRaised,
    BetaAlarmRaised,
    StaleNonce,
    SybilRejected,
    IdenticalCodeEnrolled,
    CuckooDetected,
    CuckooAcceptedWithoutCheck,
    CuckooCheckFails,
    IsolationHolds,
    RotationApplied,
}

/// Checked in every scenario, whether listed or not.
pub const SAFETY_SET: [Assertion; 4] = [
    Assertion::EnrollmentGate,
    Assertion::NoKeyMaterial,
    Assertion::OnePskPerFlow,
    Assertion::ForgedRejected,
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub assertions: BTreeMap<Assertion, bool>,
    pub transcript_digest: String,
    pub metrics: BTreeMap<String, u64>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.assertions.values().all(|&ok| ok)
    }
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Adds a step that deploys `code` as a switch on `host`.
pub fn inject_sybil_switch(s: &mut Scenario, at: Tick, host: u32, code: Option<&[u8]>) {
    s.adversary_script.push(ScriptStep {
        at,
        action: AdversaryAction::SybilSwitch {
            host,
            domain: 0,
            code: code.map(hex::encode),
        },
    });
}

/// Adds a cuckoo redirection of `victim` to `malicious`.
pub fn enable_cuckoo(s: &mut Scenario, at: Tick, victim: u32, malicious: u32) {
    if !s.topology.rogue_hosts.contains(&malicious) {
        s.topology.rogue_hosts.push(malicious);
    }
    s.adversary_script.push(ScriptStep {
        at,
        action: AdversaryAction::Cuckoo { victim, malicious },
    });
}

/// Adds random loss on `segment`.
pub fn degrade_network(s: &mut Scenario, at: Tick, rate: f64, segment: Segment) {
    s.adversary_script.push(ScriptStep {
        at,
        action: AdversaryAction::Degrade { segment, rate },
    });
}

#[derive(Default)]
struct Observations {
    forge_rule_targets: Vec<SwitchId>,
    sybil_outcomes: Vec<(bool, Option<Verdict>)>,
    cuckoo: Vec<(Option<Verdict>, Verdict, Option<bool>)>,
    replay_verdicts: Vec<Option<Verdict>>,
    rotations: Vec<(DomainId, u64)>,
}

struct Run {
    net: Network,
    cts: Vec<CtId>,
    flows: Vec<FlowKey>,
    obs: Observations,
}

fn script_err(at: Tick, e: impl ToString) -> ScenarioError {
    ScenarioError::Script {
        at,
        msg: e.to_string(),
    }
}

fn filter(segment: Option<Segment>, tag: Option<MsgType>) -> MessageFilter {
    MessageFilter { segment, tag }
}

fn setup(s: &Scenario, seed: u64) -> Result<Run, ScenarioError> {
    let t = &s.topology;
    let mut cfg = NetworkConfig::new(seed, t.hosts);
    cfg.rogue = t.rogue_hosts.iter().copied().collect();
    cfg.anti_cuckoo = t.anti_cuckoo;
    let mut net = Network::new(cfg)?;
    let switches = t.switches.clone().unwrap_or_else(|| {
        (0..t.hosts)
            .filter(|h| !t.rogue_hosts.contains(h))
            .map(|host| SwitchSpec { host, domain: 0 })
            .collect()
    });
    for sw in switches {
        net.deploy_switch(sw.host, DomainId(sw.domain))?;
    }
    let mut cts = Vec::new();
    for c in &t.cts {
        cts.push(net.deploy_ct(c.host)?);
    }
    if t.flows.iter().any(|f| f.mode == Mode::Pk) {
        net.distribute_peer_keys()?;
    }
    let mut flows = Vec::new();
    let mut port = 20_000u16;
    for f in &t.flows {
        let (Some(&src), Some(&dst)) = (cts.get(f.src as usize), cts.get(f.dst as usize)) else {
            return Err(SimError::Topology(format!("flow {}->{} names an unknown task", f.src, f.dst)).into());
        };
        for i in 0..f.count {
            let payloads = (0..f.messages)
                .map(|_| {
                    let mut p = vec![0u8; PAYLOAD_LEN];
                    net.rng().fill_bytes(&mut p);
                    p
                })
                .collect();
            net.schedule_open(
                f.at + i as Tick * f.every,
                OpenRequest {
                    src,
                    dst,
                    src_port: port,
                    dst_port: 443,
                    mode: f.mode.into(),
                    payloads,
                },
            );
            flows.push(FlowKey {
                src,
                dst,
                src_port: port,
                dst_port: 443,
                proto: 6,
            });
            port = port.wrapping_add(1);
        }
    }
    Ok(Run {
        net,
        cts,
        flows,
        obs: Observations::default(),
    })
}

fn forged_rule_install(net: &mut Network) -> Vec<u8> {
    let key = SymmetricKey::generate(KeyRole::SessionAlpha, net.rng());
    let mut chan = SecureChannel::controller_end(key);
    let any = FlowMatch::any();
    let rule = FlowRule {
        id: 1 << 40,
        matcher: any,
        action: Action::Drop,
        priority: EXACT_PRIORITY + 1,
    };
    let sealed = chan
        .seal(MsgType::RuleInstall, &encode_rules(&[rule]))
        .expect("fresh channel seals");
    frame(MsgType::RuleInstall, &sealed)
}

fn verdict_of(r: &Result<impl Sized, SimError>) -> Option<Verdict> {
    match r {
        Ok(_) => Some(Verdict::Accepted),
        Err(SimError::Control(crate::control::ControlError::EnrollmentRejected(v))) => Some(*v),
        Err(_) => None,
    }
}

fn apply(run: &mut Run, at: Tick, action: &AdversaryAction) -> Result<(), ScenarioError> {
    let net = &mut run.net;
    match action {
        AdversaryAction::Drop { segment, tag, count } => net.tap_mut().add_rule(TapRule::Drop {
            filter: filter(*segment, *tag),
            remaining: *count,
        }),
        AdversaryAction::Mutate { segment, tag, count } => net.tap_mut().add_rule(TapRule::Mutate {
            filter: filter(*segment, *tag),
            remaining: *count,
        }),
        AdversaryAction::Reorder {
            segment,
            tag,
            ticks,
            count,
        } => net.tap_mut().add_rule(TapRule::Delay {
            filter: filter(*segment, *tag),
            ticks: *ticks,
            remaining: *count,
        }),
        AdversaryAction::Degrade { segment, rate } => {
            if !(0.0..=1.0).contains(rate) {
                return Err(script_err(at, format!("drop rate {rate} outside [0, 1]")));
            }
            net.tap_mut().add_rule(TapRule::DropRate {
                filter: filter(Some(*segment), None),
                rate: *rate,
            })
        }
        AdversaryAction::Replay { segment, tag, index } => {
            let f = filter(*segment, *tag);
            let entry = match index {
                Some(i) => net.tap().nth_matching(&f, *i),
                None => net.tap().last_matching(&f),
            };
            // Nothing recorded yet: the replay is a no-op.
            if let Some(e) = entry.cloned() {
                net.inject(at + 1, e.hop, e.bytes).map_err(|e| script_err(at, e))?;
            }
        }
        AdversaryAction::Forge { from, to, tag, len } => {
            let body = net.tap_mut().random_bytes(len.unwrap_or(96));
            let segment = match (from.0, to.0) {
                (NodeId::Switch(_), NodeId::Switch(_)) => Segment::Beta,
                (NodeId::Ct(_), _) | (_, NodeId::Ct(_)) if *tag != MsgType::PskGrant => Segment::Gamma,
                _ => Segment::Alpha,
            };
            let hop = Hop {
                from: from.0,
                to: to.0,
                segment,
            };
            net.inject(at + 1, hop, frame(*tag, &body)).map_err(|e| script_err(at, e))?;
        }
        AdversaryAction::ForgeRule { switch } => {
            let s = SwitchId(*switch);
            let bytes = forged_rule_install(net);
            let hop = Hop {
                from: NodeId::Controller,
                to: NodeId::Switch(s),
                segment: Segment::Alpha,
            };
            net.inject(at + 1, hop, bytes).map_err(|e| script_err(at, e))?;
            run.obs.forge_rule_targets.push(s);
        }
        AdversaryAction::ReplayQuote { host, domain } => {
            net.tap_mut().replay_next_evidence();
            let r = net.deploy_switch(*host, DomainId(*domain));
            run.obs.replay_verdicts.push(verdict_of(&r));
        }
        AdversaryAction::SybilSwitch { host, domain, code } => {
            let mut image = EnclaveImage::switch();
            let legit = code.is_none();
            if let Some(c) = code {
                image.code = hex::decode(c).unwrap_or_else(|_| c.as_bytes().to_vec());
            }
            let pid = *net
                .platforms()
                .get(*host as usize)
                .ok_or_else(|| script_err(at, format!("no host {host}")))?;
            net.tap_mut()
                .override_deploy(pid, frame(MsgType::DeployRequest, &image.to_bytes()));
            let r = net.deploy_switch(*host, DomainId(*domain));
            run.obs.sybil_outcomes.push((legit, verdict_of(&r)));
        }
        AdversaryAction::Cuckoo { victim, malicious } => {
            let target = *net
                .platforms()
                .get(*malicious as usize)
                .ok_or_else(|| script_err(at, format!("no host {malicious}")))?;
            let v = *net
                .platforms()
                .get(*victim as usize)
                .ok_or_else(|| script_err(at, format!("no host {victim}")))?;
            net.datacenter_mut().get_mut(v).map_err(|e| script_err(at, e))?.redirect_target = Some(target);
            let check = net.anti_cuckoo_check(*victim).map_err(|e| script_err(at, e))?;
            let image = EnclaveImage::switch();
            let with_check = if net.controller().anti_cuckoo().is_some() {
                net.attest_only(*victim, &image, true).ok()
            } else {
                None
            };
            let without = net
                .attest_only(*victim, &image, false)
                .map_err(|e| script_err(at, e))?;
            run.obs.cuckoo.push((with_check, without, check));
        }
        AdversaryAction::RotateDomain { domain } => {
            let epoch = net.rotate_domain(DomainId(*domain)).map_err(|e| script_err(at, e))?;
            run.obs.rotations.push((DomainId(*domain), epoch));
        }
        AdversaryAction::HostRead { host } => net.probe_isolation(*host).map_err(|e| script_err(at, e))?,
        AdversaryAction::Flush => net.flush_all_rules().map_err(|e| script_err(at, e))?,
    }
    Ok(())
}

fn enrollment_gate(net: &Network) -> bool {
    let view = net.controller().view();
    view.check().is_ok()
        && net
            .deployments()
            .iter()
            .all(|d| (d.verdict == Some(Verdict::Accepted)) == d.node.is_some() || d.verdict.is_none())
        && view.switches.values().all(|s| {
            net.datacenter()
                .get(s.platform)
                .and_then(|p| p.measurement(s.enclave))
                .is_ok_and(|m| m == EnclaveImage::switch().measurement())
        })
        && view.compute_tasks.values().all(|c| {
            net.datacenter()
                .get(c.platform)
                .and_then(|p| p.measurement(c.enclave))
                .is_ok_and(|m| m == EnclaveImage::compute_task().measurement())
                && net.datacenter().get(c.platform).and_then(|p| p.enclave_kind(c.enclave))
                    == Ok(EnclaveKind::ComputeTask)
        })
}

fn one_psk_per_flow(run: &mut Run) -> bool {
    let nc = run.net.controller();
    let mut per_flow: BTreeMap<FlowKey, usize> = BTreeMap::new();
    for (flow, _) in nc.psks().keys() {
        *per_flow.entry(*flow).or_default() += 1;
    }
    if per_flow.values().any(|&n| n > 1) || nc.flows().any(|(_, e)| e.grants_issued > 1) {
        return false;
    }
    let expected: BTreeMap<FlowKey, [u8; 32]> = nc
        .psks()
        .iter()
        .map(|((f, _), k)| (*f, *k.expose()))
        .collect();
    let cts = run.cts.clone();
    cts.into_iter().all(|c| {
        run.net
            .with_ct(c, |st| {
                st.psks()
                    .all(|(f, (_, k))| expected.get(&f.canonical()) == Some(k.expose()))
            })
            .unwrap_or(false)
    })
}

fn flows_established(run: &mut Run) -> bool {
    let flows = run.flows.clone();
    flows.iter().all(|f| {
        let client = run
            .net
            .with_ct(f.src, |st| st.session(f).is_some_and(|s| s.established))
            .unwrap_or(false);
        let server = run
            .net
            .with_ct(f.dst, |st| {
                st.session(f).is_some_and(|s| s.established) && st.secure_recv(f).is_ok_and(|r| !r.is_empty())
            })
            .unwrap_or(false);
        client && server
    })
}

fn switch_alarms(run: &mut Run, kinds: &[AlarmKind], only: Option<&[SwitchId]>) -> usize {
    let ids: Vec<SwitchId> = match only {
        Some(ids) => ids.to_vec(),
        None => run.net.controller().view().switches.keys().copied().collect(),
    };
    ids.into_iter()
        .map(|s| {
            run.net
                .with_switch(s, |st| st.alarms().iter().filter(|a| kinds.contains(&a.kind)).count())
                .unwrap_or(0)
        })
        .sum()
}

fn evaluate(run: &mut Run, a: Assertion) -> bool {
    match a {
        Assertion::EnrollmentGate => enrollment_gate(&run.net),
        Assertion::NoKeyMaterial => run.net.key_leaks() == 0,
        Assertion::OnePskPerFlow => one_psk_per_flow(run),
        Assertion::ForgedRejected => {
            run.net.safety().violations().is_empty() && run.net.injected_fib_changes() == 0
        }
        Assertion::NoPayloadPlaintext => run.net.payload_leaks() == 0,
        Assertion::AllFlowsEstablished => flows_established(run),
        Assertion::FibUnchangedAlarmRaised => {
            let targets = run.obs.forge_rule_targets.clone();
            !targets.is_empty()
                && run.net.injected_fib_changes() == 0
                && switch_alarms(run, &[AlarmKind::ForgedControl], Some(&targets)) >= targets.len()
        }
        Assertion::BetaAlarmRaised => {
            switch_alarms(run, &[AlarmKind::ForgedBeta, AlarmKind::ReplayedBeta], None) > 0
        }
        Assertion::StaleNonce => {
            !run.obs.replay_verdicts.is_empty()
                && run.obs.replay_verdicts.iter().all(|v| *v == Some(Verdict::StaleNonce))
        }
        Assertion::SybilRejected => {
            let bad: Vec<_> = run.obs.sybil_outcomes.iter().filter(|(legit, _)| !legit).collect();
            !bad.is_empty() && bad.iter().all(|(_, v)| *v == Some(Verdict::MeasurementMismatch))
        }
        Assertion::IdenticalCodeEnrolled => {
            let legit: Vec<_> = run.obs.sybil_outcomes.iter().filter(|(legit, _)| *legit).collect();
            !legit.is_empty() && legit.iter().all(|(_, v)| *v == Some(Verdict::Accepted))
        }
        Assertion::CuckooDetected => {
            !run.obs.cuckoo.is_empty()
                && run
                    .obs
                    .cuckoo
                    .iter()
                    .all(|(with, _, _)| *with == Some(Verdict::CuckooSuspected))
        }
        Assertion::CuckooAcceptedWithoutCheck => {
            !run.obs.cuckoo.is_empty() && run.obs.cuckoo.iter().all(|(_, without, _)| *without == Verdict::Accepted)
        }
        Assertion::CuckooCheckFails => {
            !run.obs.cuckoo.is_empty() && run.obs.cuckoo.iter().all(|(_, _, c)| *c == Some(false))
        }
        Assertion::IsolationHolds => {
            let (tries, wins) = run.net.isolation_probes();
            tries > 0 && wins == 0
        }
        Assertion::RotationApplied => {
            let rotations = run.obs.rotations.clone();
            !rotations.is_empty()
                && rotations.iter().all(|(d, _)| {
                    let epoch = run.net.controller().view().domains[d].epoch;
                    let members: Vec<SwitchId> =
                        run.net.controller().view().domains[d].members.iter().copied().collect();
                    members.into_iter().all(|s| {
                        run.net
                            .with_switch(s, |st| st.k_beta().map(|(e, _)| e) == Some(epoch))
                            .unwrap_or(false)
                    })
                })
        }
    }
}

/// Runs `s` under `seed` to quiescence (or its tick limit) and evaluates the
/// safety set plus the scenario's own assertions.
pub fn run_scenario(s: &Scenario, seed: u64) -> Result<ScenarioReport, ScenarioError> {
    let mut run = setup(s, seed)?;
    let mut script = s.adversary_script.clone();
    script.sort_by_key(|st| st.at);
    for step in &script {
        run.net.run_until(step.at);
        let now = run.net.now();
        apply(&mut run, now, &step.action)?;
    }
    let limit = s.topology.tick_limit.unwrap_or(DEFAULT_TICK_LIMIT);
    run.net.run_to_quiescence(limit);
    let mut assertions = BTreeMap::new();
    for a in SAFETY_SET.iter().chain(&s.assertions) {
        if !assertions.contains_key(a) {
            let ok = evaluate(&mut run, *a);
            assertions.insert(*a, ok);
        }
    }
    Ok(ScenarioReport {
        name: s.name.clone(),
        seed,
        assertions,
        transcript_digest: hex::encode(run.net.tap().digest()),
        metrics: run.net.metrics(),
    })
}
