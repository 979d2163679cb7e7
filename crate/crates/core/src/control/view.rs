//! The controller's global network view.

use std::collections::{BTreeMap, BTreeSet};

use crate::attestation::Verdict;
use crate::channel::SecureChannel;
use crate::crypto::{PublicKey, SymmetricKey};
use crate::enclave::{EnclaveId, Measurement, PlatformId};
use crate::net::{CtId, DomainId, NodeId, SwitchId};

pub struct SwitchRecord {
    pub platform: PlatformId,
    pub enclave: EnclaveId,
    pub measurement: Measurement,
    pub ek_pk: PublicKey,
    pub domain: DomainId,
    pub(crate) channel: SecureChannel,
    next_port: u16,
}

impl SwitchRecord {
    pub fn k_alpha(&self) -> &SymmetricKey {
        self.channel.key()
    }
}

pub struct CtRecord {
    pub platform: PlatformId,
    pub enclave: EnclaveId,
    pub measurement: Measurement,
    pub ck_pk: PublicKey,
    pub switch: SwitchId,
    /// Port of `switch` the task is attached to.
    pub port: u16,
    pub(crate) channel: SecureChannel,
}

pub struct DomainRecord {
    pub k_beta: SymmetricKey,
    pub epoch: u64,
    pub members: BTreeSet<SwitchId>,
}

#[derive(Default)]
pub struct GlobalView {
    pub hosts: BTreeSet<PlatformId>,
    pub switches: BTreeMap<SwitchId, SwitchRecord>,
    pub compute_tasks: BTreeMap<CtId, CtRecord>,
    pub domains: BTreeMap<DomainId, DomainRecord>,
    pub links: BTreeSet<(NodeId, NodeId)>,
    /// Most recent attestation verdict per enclave.
    pub verdicts: BTreeMap<EnclaveId, Verdict>,
}

impl GlobalView {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn add_switch(
        &mut self,
        id: SwitchId,
        platform: PlatformId,
        enclave: EnclaveId,
        measurement: Measurement,
        ek_pk: PublicKey,
        domain: DomainId,
        channel: SecureChannel,
    ) {
        self.hosts.insert(platform);
        self.links
            .insert((NodeId::Host(platform), NodeId::Switch(id)));
        for (&other, rec) in &self.switches {
            if rec.domain == domain {
                self.links.insert((NodeId::Switch(other), NodeId::Switch(id)));
            }
        }
        if let Some(d) = self.domains.get_mut(&domain) {
            d.members.insert(id);
        }
        self.switches.insert(
            id,
            SwitchRecord {
                platform,
                enclave,
                measurement,
                ek_pk,
                domain,
                channel,
                next_port: 1,
            },
        );
    }

    pub(crate) fn allocate_port(&mut self, switch: SwitchId) -> Option<u16> {
        let rec = self.switches.get_mut(&switch)?;
        let p = rec.next_port;
        rec.next_port = p.checked_add(1)?;
        Some(p)
    }

    pub(crate) fn add_ct(&mut self, id: CtId, rec: CtRecord) {
        self.links
            .insert((NodeId::Switch(rec.switch), NodeId::Ct(id)));
        self.compute_tasks.insert(id, rec);
    }

    /// Switch on `platform`, if one is enrolled there.
    pub fn switch_on(&self, platform: PlatformId) -> Option<SwitchId> {
        self.switches
            .iter()
            .find(|(_, r)| r.platform == platform)
            .map(|(&id, _)| id)
    }

    pub fn contains_enclave(&self, e: EnclaveId) -> bool {
        self.switches.values().any(|r| r.enclave == e)
            || self.compute_tasks.values().any(|r| r.enclave == e)
    }

    /// Structural invariants; returns the first violation found.
    pub fn check(&self) -> Result<(), String> {
        let accepted = |e: &EnclaveId| self.verdicts.get(e) == Some(&Verdict::Accepted);
        for (id, s) in &self.switches {
            if !accepted(&s.enclave) {
                return Err(format!("{id} enrolled without an accepted verdict"));
            }
            let homes = self
                .domains
                .iter()
                .filter(|(_, d)| d.members.contains(id))
                .map(|(&d, _)| d)
                .collect::<Vec<_>>();
            if homes != [s.domain] {
                return Err(format!("{id} belongs to domains {homes:?}"));
            }
        }
        for (id, c) in &self.compute_tasks {
            if !accepted(&c.enclave) {
                return Err(format!("{id} enrolled without an accepted verdict"));
            }
            if !self.switches.contains_key(&c.switch) {
                return Err(format!("{id} attached to unknown {}", c.switch));
            }
        }
        let exists = |n: &NodeId| match n {
            NodeId::Host(p) => self.hosts.contains(p),
            NodeId::Switch(s) => self.switches.contains_key(s),
            NodeId::Ct(c) => self.compute_tasks.contains_key(c),
            NodeId::Controller | NodeId::Verifier => true,
        };
        if let Some(l) = self.links.iter().find(|(a, b)| !exists(a) || !exists(b)) {
            return Err(format!("dangling link {l:?}"));
        }
        Ok(())
    }
}
