//! Emulated SGX-style platforms.
//!
//! A [`Platform`] plays the CPU and firmware: it measures enclaves at build
//! time, holds their report keys, and runs exactly one quoting enclave that
//! signs quotes with the platform's group member secret. Enclave secrets and
//! application state are reachable only through [`Platform::ecall`], which
//! stands for code executing inside the enclave. Host-level accessors never
//! return secret material.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::{
    epid_sign, mac_check, mac_tag, sha256, GroupMemberSecret, GroupPublicKey, KeyOwner, KeyPair,
    KeyRole, LinkableSignature, MacTag, PseudonymBase, PublicKey, SymmetricKey,
};
use crate::wire::{Reader, WireError, Writer};

const QUOTING_CODE: &[u8] = b"trusdn-quoting-enclave";
const BOOTSTRAP_CODE: &[u8] = b"trusdn-bootstrap-enclave";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlatformError {
    #[error("platform already has a quoting enclave")]
    DuplicateQuotingEnclave,
    #[error("reporter and target are on different platforms")]
    CrossPlatformReport,
    #[error("host access to enclave-private state of {0}")]
    IsolationViolation(EnclaveId),
    #[error("report rejected by the quoting enclave")]
    ReportRejected,
    #[error("no enclave {0}")]
    NoSuchEnclave(EnclaveId),
    #[error("no platform {0}")]
    NoSuchPlatform(PlatformId),
    #[error("quote signing failed: {0}")]
    Signing(#[from] crate::crypto::CryptoError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlatformId(pub u32);

impl fmt::Display for PlatformId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "platform-{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EnclaveId {
    pub platform: PlatformId,
    pub index: u32,
}

impl fmt::Display for EnclaveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "enclave-{}.{}", self.platform.0, self.index)
    }
}

impl EnclaveId {
    pub(crate) fn write(&self, w: &mut Writer) {
        w.u32(self.platform.0).u32(self.index);
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Self {
            platform: PlatformId(r.u32()?),
            index: r.u32()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnclaveKind {
    Switch,
    ComputeTask,
    Quoting,
    Bootstrap,
}

impl EnclaveKind {
    pub fn code(self) -> u8 {
        match self {
            EnclaveKind::Switch => 1,
            EnclaveKind::ComputeTask => 2,
            EnclaveKind::Quoting => 3,
            EnclaveKind::Bootstrap => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            1 => EnclaveKind::Switch,
            2 => EnclaveKind::ComputeTask,
            3 => EnclaveKind::Quoting,
            4 => EnclaveKind::Bootstrap,
            _ => return None,
        })
    }

    fn key_owner(self) -> KeyOwner {
        match self {
            EnclaveKind::ComputeTask => KeyOwner::ComputeTask,
            EnclaveKind::Quoting => KeyOwner::QuotingEnclave,
            EnclaveKind::Switch | EnclaveKind::Bootstrap => KeyOwner::Enclave,
        }
    }
}

/// Digest over code, configuration and page layout.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Measurement(pub [u8; 32]);

impl Measurement {
    /// `H(code || config || layout)`, where the layout descriptor is
    /// `kind (1) || len(code) (u64) || len(config) (u64)`.
    pub fn compute(kind: EnclaveKind, code: &[u8], config: &[u8]) -> Self {
        let layout = Writer::new()
            .u8(kind.code())
            .u64(code.len() as u64)
            .u64(config.len() as u64)
            .finish();
        Measurement(sha256(&[b"trusdn/measurement/v1", code, config, &layout]))
    }
}

impl fmt::Debug for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Measurement({})", &hex::encode(self.0)[..16])
    }
}

/// Local attestation structure, MACed under the target's report key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub reporter_measurement: Measurement,
    pub target_id: EnclaveId,
    pub user_data: [u8; 32],
    pub mac: MacTag,
}

impl Report {
    fn body(measurement: &Measurement, target: &EnclaveId, user_data: &[u8; 32]) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"REPORT").raw(&measurement.0);
        target.write(&mut w);
        w.raw(user_data).finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Self::body(&self.reporter_measurement, &self.target_id, &self.user_data);
        out.extend_from_slice(&self.mac.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        if &r.array::<6>()? != b"REPORT" {
            return Err(WireError::Invalid("report magic"));
        }
        let reporter_measurement = Measurement(r.array()?);
        let target_id = EnclaveId::read(&mut r)?;
        let user_data = r.array()?;
        let mac = MacTag(r.array()?);
        r.finish()?;
        Ok(Self {
            reporter_measurement,
            target_id,
            user_data,
            mac,
        })
    }
}

/// A report countersigned by a quoting enclave for a verifier's nonce.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quote {
    pub report: Report,
    pub challenge_nonce: [u8; 32],
    pub signature: LinkableSignature,
}

impl Quote {
    /// Bytes covered by the quote signature.
    pub fn signed_message(report: &Report, nonce: &[u8; 32]) -> Vec<u8> {
        let mut m = report.to_bytes();
        m.extend_from_slice(nonce);
        m
    }

    pub fn message(&self) -> Vec<u8> {
        Self::signed_message(&self.report, &self.challenge_nonce)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let base = self.signature.base();
        let mut w = Writer::new();
        w.bytes(&self.report.to_bytes()).raw(&self.challenge_nonce);
        match base.name() {
            Some(name) => w.u8(1).bytes(name.as_bytes()),
            None => w.u8(2),
        };
        w.raw(&base.point_bytes())
            .raw(&self.signature.pseudonym())
            .bytes(&self.signature.proof_bytes())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        use crate::crypto::BaseKind;
        let mut r = Reader::new(bytes);
        let report = Report::from_bytes(r.bytes()?)?;
        let challenge_nonce = r.array()?;
        let kind = match r.u8()? {
            1 => BaseKind::Named(
                String::from_utf8(r.bytes()?.to_vec())
                    .map_err(|_| WireError::Invalid("base name"))?,
            ),
            2 => BaseKind::Random,
            _ => return Err(WireError::Invalid("base kind")),
        };
        let base = PseudonymBase::from_parts(kind, r.array()?);
        let pseudonym = r.array()?;
        let signature = LinkableSignature::from_parts(pseudonym, base, r.bytes()?)
            .map_err(|_| WireError::Invalid("quote signature"))?;
        r.finish()?;
        Ok(Self {
            report,
            challenge_nonce,
            signature,
        })
    }
}

/// Regions of an enclave a host process may try to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateRegion {
    PublicKey,
    Measurement,
    SecretKey,
    SealedState,
}

struct Enclave {
    id: EnclaveId,
    measurement: Measurement,
    kind: EnclaveKind,
    keypair: KeyPair,
    sealed_state: Option<Box<dyn Any + Send>>,
}

/// View handed to code running inside an enclave.
pub struct EnclaveRuntime<'a> {
    id: EnclaveId,
    measurement: Measurement,
    kind: EnclaveKind,
    keypair: &'a KeyPair,
    state: &'a mut Option<Box<dyn Any + Send>>,
    report_keys: &'a BTreeMap<EnclaveId, SymmetricKey>,
    rng: &'a mut ChaCha20Rng,
}

impl<'a> EnclaveRuntime<'a> {
    pub fn id(&self) -> EnclaveId {
        self.id
    }

    pub fn measurement(&self) -> Measurement {
        self.measurement
    }

    pub fn kind(&self) -> EnclaveKind {
        self.kind
    }

    pub fn keypair(&self) -> &'a KeyPair {
        self.keypair
    }

    /// Enclave-local entropy.
    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        self.rng
    }

    /// Application state of type `T`, created with `init` on first use.
    pub fn state_or_insert_with<T: Any + Send>(&mut self, init: impl FnOnce() -> T) -> &mut T {
        if !matches!(self.state.as_ref(), Some(s) if s.is::<T>()) {
            *self.state = Some(Box::new(init()));
        }
        self.state
            .as_mut()
            .and_then(|s| s.downcast_mut::<T>())
            .expect("state type checked above")
    }

    pub fn state<T: Any + Send>(&mut self) -> Option<&mut T> {
        self.state.as_mut().and_then(|s| s.downcast_mut::<T>())
    }

    pub fn set_state<T: Any + Send>(&mut self, value: T) {
        *self.state = Some(Box::new(value));
    }

    /// Application state together with the enclave RNG, for handlers that
    /// need both at once.
    pub fn state_and_rng<T: Any + Send>(&mut self) -> (Option<&mut T>, &mut ChaCha20Rng) {
        (
            self.state.as_mut().and_then(|s| s.downcast_mut::<T>()),
            &mut *self.rng,
        )
    }

    /// EREPORT from this enclave to `target`.
    pub fn ereport(&self, target: EnclaveId, user_data: [u8; 32]) -> Result<Report, PlatformError> {
        make_report(self.report_keys, self.id, self.measurement, target, user_data)
    }
}

fn make_report(
    report_keys: &BTreeMap<EnclaveId, SymmetricKey>,
    reporter: EnclaveId,
    measurement: Measurement,
    target: EnclaveId,
    user_data: [u8; 32],
) -> Result<Report, PlatformError> {
    if reporter.platform != target.platform {
        return Err(PlatformError::CrossPlatformReport);
    }
    let key = report_keys
        .get(&target)
        .ok_or(PlatformError::NoSuchEnclave(target))?;
    let mac = mac_tag(key, &Report::body(&measurement, &target, &user_data))?;
    Ok(Report {
        reporter_measurement: measurement,
        target_id: target,
        user_data,
        mac,
    })
}

pub struct Platform {
    id: PlatformId,
    report_keys: BTreeMap<EnclaveId, SymmetricKey>,
    enclaves: BTreeMap<EnclaveId, Enclave>,
    qe: EnclaveId,
    bootstrap: EnclaveId,
    member: GroupMemberSecret,
    group: Arc<GroupPublicKey>,
    next_index: u32,
    rng: ChaCha20Rng,
    /// False for attacker-controlled machines.
    pub honest: bool,
    /// Set when malware forwards attestation traffic to another platform.
    pub redirect_target: Option<PlatformId>,
}

impl fmt::Debug for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Platform")
            .field("id", &self.id)
            .field("enclaves", &self.enclaves.len())
            .field("honest", &self.honest)
            .field("redirect_target", &self.redirect_target)
            .finish_non_exhaustive()
    }
}

impl Platform {
    /// A platform with its quoting and bootstrap enclaves already built.
    pub fn new(
        id: PlatformId,
        group: Arc<GroupPublicKey>,
        member: GroupMemberSecret,
        seed: u64,
    ) -> Self {
        let mut p = Self {
            id,
            report_keys: BTreeMap::new(),
            enclaves: BTreeMap::new(),
            qe: EnclaveId { platform: id, index: 0 },
            bootstrap: EnclaveId { platform: id, index: 1 },
            member,
            group,
            next_index: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            honest: true,
            redirect_target: None,
        };
        p.qe = p.build(EnclaveKind::Quoting, QUOTING_CODE, b"");
        p.bootstrap = p.build(EnclaveKind::Bootstrap, BOOTSTRAP_CODE, b"");
        p
    }

    pub fn id(&self) -> PlatformId {
        self.id
    }

    pub fn quoting_enclave(&self) -> EnclaveId {
        self.qe
    }

    pub fn bootstrap_enclave(&self) -> EnclaveId {
        self.bootstrap
    }

    pub fn group(&self) -> &Arc<GroupPublicKey> {
        &self.group
    }

    fn build(&mut self, kind: EnclaveKind, code: &[u8], config: &[u8]) -> EnclaveId {
        let id = EnclaveId {
            platform: self.id,
            index: self.next_index,
        };
        self.next_index += 1;
        let enclave = Enclave {
            id,
            measurement: Measurement::compute(kind, code, config),
            kind,
            keypair: KeyPair::generate(kind.key_owner(), &mut self.rng),
            sealed_state: None,
        };
        self.report_keys
            .insert(id, SymmetricKey::generate(KeyRole::ReportKey, &mut self.rng));
        self.enclaves.insert(id, enclave);
        id
    }

    /// Loads and measures a new enclave. The keypair is generated inside.
    pub fn create_enclave(
        &mut self,
        kind: EnclaveKind,
        code: &[u8],
        config: &[u8],
    ) -> Result<EnclaveId, PlatformError> {
        if kind == EnclaveKind::Quoting {
            return Err(PlatformError::DuplicateQuotingEnclave);
        }
        Ok(self.build(kind, code, config))
    }

    fn enclave(&self, id: EnclaveId) -> Result<&Enclave, PlatformError> {
        self.enclaves.get(&id).ok_or(PlatformError::NoSuchEnclave(id))
    }

    pub fn enclave_ids(&self) -> impl Iterator<Item = EnclaveId> + '_ {
        self.enclaves.keys().copied()
    }

    pub fn enclave_kind(&self, id: EnclaveId) -> Result<EnclaveKind, PlatformError> {
        Ok(self.enclave(id)?.kind)
    }

    /// EREPORT issued by `reporter` for `target`.
    pub fn ereport(
        &self,
        reporter: EnclaveId,
        target: EnclaveId,
        user_data: [u8; 32],
    ) -> Result<Report, PlatformError> {
        if reporter.platform != self.id || target.platform != self.id {
            return Err(PlatformError::CrossPlatformReport);
        }
        let r = self.enclave(reporter)?;
        make_report(&self.report_keys, r.id, r.measurement, target, user_data)
    }

    /// The target's side of local attestation: recompute the MAC with its
    /// report key.
    pub fn verify_report(&self, target: EnclaveId, report: &Report) -> bool {
        if report.target_id != target {
            return false;
        }
        let Some(key) = self.report_keys.get(&target) else {
            return false;
        };
        let body = Report::body(&report.reporter_measurement, &target, &report.user_data);
        mac_check(key, &body, &report.mac.0)
    }

    /// Host-process read of enclave memory. Only public data is returned.
    pub fn host_read_state(
        &self,
        enclave: EnclaveId,
        region: StateRegion,
    ) -> Result<Vec<u8>, PlatformError> {
        let e = self.enclave(enclave)?;
        match region {
            StateRegion::PublicKey => Ok(e.keypair.public().0.to_vec()),
            StateRegion::Measurement => Ok(e.measurement.0.to_vec()),
            StateRegion::SecretKey | StateRegion::SealedState => {
                Err(PlatformError::IsolationViolation(enclave))
            }
        }
    }

    pub fn public_key(&self, enclave: EnclaveId) -> Result<PublicKey, PlatformError> {
        Ok(self.enclave(enclave)?.keypair.public())
    }

    pub fn measurement(&self, enclave: EnclaveId) -> Result<Measurement, PlatformError> {
        Ok(self.enclave(enclave)?.measurement)
    }

    /// Runs `f` as code inside `enclave`.
    pub fn ecall<R>(
        &mut self,
        enclave: EnclaveId,
        f: impl FnOnce(&mut EnclaveRuntime<'_>) -> R,
    ) -> Result<R, PlatformError> {
        let e = self
            .enclaves
            .get_mut(&enclave)
            .ok_or(PlatformError::NoSuchEnclave(enclave))?;
        let mut rt = EnclaveRuntime {
            id: e.id,
            measurement: e.measurement,
            kind: e.kind,
            keypair: &e.keypair,
            state: &mut e.sealed_state,
            report_keys: &self.report_keys,
            rng: &mut self.rng,
        };
        Ok(f(&mut rt))
    }

    /// This platform's own QE: locally attest the report, then sign
    /// `report || nonce`. An attacker-controlled platform's QE signs whatever
    /// report it is handed.
    fn quote_locally(
        &mut self,
        report: &Report,
        nonce: [u8; 32],
        base: &PseudonymBase,
    ) -> Result<Quote, PlatformError> {
        let report = if self.verify_report(self.qe, report) {
            report.clone()
        } else if !self.honest {
            // Re-target the forwarded report at this QE so the quote looks
            // locally attested.
            let mac = mac_tag(
                &self.report_keys[&self.qe],
                &Report::body(&report.reporter_measurement, &self.qe, &report.user_data),
            )?;
            Report {
                target_id: self.qe,
                mac,
                ..report.clone()
            }
        } else {
            return Err(PlatformError::ReportRejected);
        };
        let msg = Quote::signed_message(&report, &nonce);
        let signature = epid_sign(&self.group, &self.member, base, &msg, &mut self.rng)?;
        Ok(Quote {
            report,
            challenge_nonce: nonce,
            signature,
        })
    }
}

/// All platforms of a deployment. Quote requests are routed here so that a
/// platform's `redirect_target` can divert them.
#[derive(Debug, Default)]
pub struct Datacenter {
    platforms: BTreeMap<PlatformId, Platform>,
}

impl Datacenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, platform: Platform) {
        self.platforms.insert(platform.id, platform);
    }

    pub fn get(&self, id: PlatformId) -> Result<&Platform, PlatformError> {
        self.platforms.get(&id).ok_or(PlatformError::NoSuchPlatform(id))
    }

    pub fn get_mut(&mut self, id: PlatformId) -> Result<&mut Platform, PlatformError> {
        self.platforms
            .get_mut(&id)
            .ok_or(PlatformError::NoSuchPlatform(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = PlatformId> + '_ {
        self.platforms.keys().copied()
    }

    pub fn platforms(&self) -> impl Iterator<Item = &Platform> {
        self.platforms.values()
    }

    /// Quote for a report addressed to `platform`'s QE. With a redirect in
    /// place the request is answered by the redirect target's QE.
    pub fn qe_quote(
        &mut self,
        platform: PlatformId,
        report: &Report,
        nonce: [u8; 32],
        base: &PseudonymBase,
    ) -> Result<Quote, PlatformError> {
        let answering = self.get(platform)?.redirect_target.unwrap_or(platform);
        self.get_mut(answering)?.quote_locally(report, nonce, base)
    }

    /// Platform-level attestation: the bootstrap enclave reports `H(message)`
    /// to the QE, which quotes it for `nonce`.
    pub fn platform_quote(
        &mut self,
        platform: PlatformId,
        message: &[u8],
        nonce: [u8; 32],
        base: &PseudonymBase,
    ) -> Result<Quote, PlatformError> {
        let p = self.get(platform)?;
        let report = p.ereport(p.bootstrap, p.qe, sha256(&[message]))?;
        self.qe_quote(platform, &report, nonce, base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{epid_verify, EpidIssuer};
    use curve25519_dalek::ristretto::CompressedRistretto;

    fn datacenter(n: usize) -> (Datacenter, Arc<GroupPublicKey>, Vec<GroupMemberSecret>) {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (group, members) = EpidIssuer::setup("dc", n, &mut rng);
        let group = Arc::new(group);
        let mut dc = Datacenter::new();
        for (i, m) in members.iter().enumerate() {
            dc.insert(Platform::new(PlatformId(i as u32), group.clone(), m.clone(), i as u64));
        }
        (dc, group, members)
    }

    #[test]
    fn measurement_determinism_and_sensitivity() {
        let a = Measurement::compute(EnclaveKind::Switch, b"code", b"cfg");
        assert_eq!(a, Measurement::compute(EnclaveKind::Switch, b"code", b"cfg"));
        assert_ne!(a, Measurement::compute(EnclaveKind::Switch, b"code", b"cfh"));
        assert_ne!(a, Measurement::compute(EnclaveKind::ComputeTask, b"code", b"cfg"));
        // The layout descriptor separates code/config boundaries.
        assert_ne!(
            Measurement::compute(EnclaveKind::Switch, b"ab", b"c"),
            Measurement::compute(EnclaveKind::Switch, b"a", b"bc")
        );
    }

    #[test]
    fn identical_enclaves_on_two_platforms_measure_equal() {
        let (mut dc, _, _) = datacenter(2);
        let a = dc.get_mut(PlatformId(0)).unwrap().create_enclave(EnclaveKind::Switch, b"sw", b"c").unwrap();
        let b = dc.get_mut(PlatformId(1)).unwrap().create_enclave(EnclaveKind::Switch, b"sw", b"c").unwrap();
        assert_eq!(
            dc.get(PlatformId(0)).unwrap().measurement(a).unwrap(),
            dc.get(PlatformId(1)).unwrap().measurement(b).unwrap()
        );
    }

    #[test]
    fn second_quoting_enclave_is_refused() {
        let (mut dc, _, _) = datacenter(1);
        assert_eq!(
            dc.get_mut(PlatformId(0)).unwrap().create_enclave(EnclaveKind::Quoting, b"q", b""),
            Err(PlatformError::DuplicateQuotingEnclave)
        );
    }

    #[test]
    fn host_cannot_read_secrets() {
        let (mut dc, _, _) = datacenter(1);
        let p = dc.get_mut(PlatformId(0)).unwrap();
        let e = p.create_enclave(EnclaveKind::ComputeTask, b"ct", b"").unwrap();
        p.ecall(e, |rt| *rt.state_or_insert_with(|| 7u32) += 1).unwrap();
        assert_eq!(
            p.host_read_state(e, StateRegion::SecretKey),
            Err(PlatformError::IsolationViolation(e))
        );
        assert_eq!(
            p.host_read_state(e, StateRegion::SealedState),
            Err(PlatformError::IsolationViolation(e))
        );
        assert_eq!(
            p.host_read_state(e, StateRegion::PublicKey).unwrap(),
            p.public_key(e).unwrap().0.to_vec()
        );
        assert_eq!(p.ecall(e, |rt| *rt.state::<u32>().unwrap()).unwrap(), 8);
    }

    #[test]
    fn report_round_trip_and_key_binding() {
        let (mut dc, _, _) = datacenter(1);
        let p = dc.get_mut(PlatformId(0)).unwrap();
        let sw = p.create_enclave(EnclaveKind::Switch, b"sw", b"").unwrap();
        let other = p.create_enclave(EnclaveKind::ComputeTask, b"ct", b"").unwrap();
        let qe = p.quoting_enclave();
        let pk = p.public_key(sw).unwrap();
        let user_data = sha256(&[&pk.0]);
        let report = p.ecall(sw, |rt| rt.ereport(qe, user_data)).unwrap().unwrap();
        assert!(p.verify_report(qe, &report));
        assert_eq!(report.user_data, sha256(&[&p.public_key(sw).unwrap().0]));
        assert!(!p.verify_report(other, &report));
        let mut retargeted = report.clone();
        retargeted.target_id = other;
        assert!(!p.verify_report(other, &retargeted));
        for i in 0..32 {
            let mut t = report.clone();
            t.reporter_measurement.0[i] ^= 1;
            assert!(!p.verify_report(qe, &t));
        }
        assert_eq!(Report::from_bytes(&report.to_bytes()).unwrap(), report);
    }

    #[test]
    fn cross_platform_report_is_refused() {
        let (dc, _, _) = datacenter(2);
        let p0 = dc.get(PlatformId(0)).unwrap();
        let p1 = dc.get(PlatformId(1)).unwrap();
        assert_eq!(
            p0.ereport(p0.bootstrap_enclave(), p1.quoting_enclave(), [0; 32]),
            Err(PlatformError::CrossPlatformReport)
        );
    }

    #[test]
    fn quotes_verify_and_tampered_reports_are_rejected() {
        let (mut dc, group, _) = datacenter(2);
        let base = PseudonymBase::named("V_P");
        let p = dc.get(PlatformId(0)).unwrap();
        let report = p.ereport(p.bootstrap_enclave(), p.quoting_enclave(), [1; 32]).unwrap();
        let q = dc.qe_quote(PlatformId(0), &report, [9; 32], &base).unwrap();
        assert!(epid_verify(&group, &base, &q.message(), &q.signature));
        assert_eq!(Quote::from_bytes(&q.to_bytes()).unwrap(), q);
        let mut bad = report.clone();
        bad.user_data[0] ^= 1;
        assert_eq!(
            dc.qe_quote(PlatformId(0), &bad, [9; 32], &base),
            Err(PlatformError::ReportRejected)
        );
    }

    #[test]
    fn redirected_quote_carries_malicious_pseudonym() {
        let (mut dc, group, members) = datacenter(3);
        let base = PseudonymBase::named("V_P");
        dc.get_mut(PlatformId(2)).unwrap().honest = false;
        dc.get_mut(PlatformId(0)).unwrap().redirect_target = Some(PlatformId(2));
        let q = dc.platform_quote(PlatformId(0), b"m", [3; 32], &base).unwrap();
        assert!(epid_verify(&group, &base, &q.message(), &q.signature));
        let oracle = |f: &GroupMemberSecret| {
            let b = CompressedRistretto(base.point_bytes()).decompress().unwrap();
            (b * f.scalar()).compress().to_bytes()
        };
        assert_eq!(q.signature.pseudonym(), oracle(&members[2]));
        assert_ne!(q.signature.pseudonym(), oracle(&members[0]));
    }

    #[test]
    fn redirect_to_honest_platform_is_rejected() {
        let (mut dc, _, _) = datacenter(2);
        dc.get_mut(PlatformId(0)).unwrap().redirect_target = Some(PlatformId(1));
        assert_eq!(
            dc.platform_quote(PlatformId(0), b"m", [3; 32], &PseudonymBase::named("x")),
            Err(PlatformError::ReportRejected)
        );
    }
}
