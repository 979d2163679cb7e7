//! Remote attestation of enclaves, verifier certificates and the published
//! platform signature list used to detect cuckoo attacks.
//!
//! An attestation session runs challenge -> report -> quote -> verify:
//!
//! 1. the verifier draws a nonce and names the host's quoting enclave;
//! 2. the enclave reports to that QE with `H(EK_pk)` as user data;
//! 3. the QE signs `report || nonce` under the verifier's pseudonym base;
//! 4. the verifier checks signature, nonce freshness, user data and
//!    measurement, in that order.
//!
//! With anti-cuckoo enabled the base is the provider's named base and the
//! resulting pseudonym must link to an entry of the published list.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    epid_linked, epid_verify, sha256, sign, verify, BaseKind, GroupPublicKey, KeyOwner, KeyPair,
    LinkableSignature, PseudonymBase, PublicKey, SecretKey, Signature,
};
use crate::enclave::{Datacenter, EnclaveId, Measurement, PlatformError, PlatformId, Quote};
use crate::net::{Hop, NodeId, Segment, Tick, Transport};
use crate::wire::{frame, unframe, MsgType, Reader, WireError, Writer};

/// Default number of ticks a challenge nonce stays valid.
pub const DEFAULT_FRESHNESS_WINDOW: Tick = 64;
/// Canonical message quoted for published list entries.
pub const PLATFORM_ATTEST_MESSAGE: &[u8] = b"trusdn/platform-attest/v1";
const TENANT_CHECK_MESSAGE: &[u8] = b"trusdn/tenant-check/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttestationError {
    #[error("verifier holds no valid certificate for named-base use")]
    UnauthorizedVerifier,
    #[error("attestation of {0} failed")]
    AttestationFailed(PlatformId),
    #[error("attestation message lost in transit")]
    TransportFailure,
    #[error("malformed attestation message: {0}")]
    Malformed(#[from] WireError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error("invalid signature list: {0}")]
    InvalidList(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    Accepted,
    MeasurementMismatch,
    BadSignature,
    StaleNonce,
    UserDataMismatch,
    CuckooSuspected,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Challenge {
    pub nonce: [u8; 32],
    pub qe_identity: EnclaveId,
    pub issued_at: Tick,
    pub base: PseudonymBase,
}

fn write_base(w: &mut Writer, base: &PseudonymBase) {
    match base.name() {
        Some(n) => w.u8(1).bytes(n.as_bytes()),
        None => w.u8(2),
    };
    w.raw(&base.point_bytes());
}

fn read_base(r: &mut Reader<'_>) -> Result<PseudonymBase, WireError> {
    let kind = match r.u8()? {
        1 => BaseKind::Named(
            String::from_utf8(r.bytes()?.to_vec()).map_err(|_| WireError::Invalid("base name"))?,
        ),
        2 => BaseKind::Random,
        _ => return Err(WireError::Invalid("base kind")),
    };
    Ok(PseudonymBase::from_parts(kind, r.array()?))
}

impl Challenge {
    pub fn to_frame(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&self.nonce);
        self.qe_identity.write(&mut w);
        w.u64(self.issued_at);
        write_base(&mut w, &self.base);
        frame(MsgType::AttestChallenge, &w.finish())
    }

    pub fn from_frame(bytes: &[u8]) -> Result<Self, WireError> {
        let (tag, payload) = unframe(bytes)?;
        if tag != MsgType::AttestChallenge {
            return Err(WireError::Invalid("expected attestation challenge"));
        }
        let mut r = Reader::new(payload);
        let c = Self {
            nonce: r.array()?,
            qe_identity: EnclaveId::read(&mut r)?,
            issued_at: r.u64()?,
            base: read_base(&mut r)?,
        };
        r.finish()?;
        Ok(c)
    }
}

/// What the enclave host returns: the quote and the enclave's public key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Evidence {
    pub quote: Quote,
    pub enclave_pk: PublicKey,
}

impl Evidence {
    pub fn to_frame(&self) -> Vec<u8> {
        let payload = Writer::new()
            .bytes(&self.quote.to_bytes())
            .raw(&self.enclave_pk.0)
            .finish();
        frame(MsgType::AttestEvidence, &payload)
    }

    pub fn from_frame(bytes: &[u8]) -> Result<Self, WireError> {
        let (tag, payload) = unframe(bytes)?;
        if tag != MsgType::AttestEvidence {
            return Err(WireError::Invalid("expected attestation evidence"));
        }
        let mut r = Reader::new(payload);
        let quote = Quote::from_bytes(r.bytes()?)?;
        let enclave_pk = PublicKey(r.array()?);
        r.finish()?;
        Ok(Self { quote, enclave_pk })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttestationResult {
    pub verdict: Verdict,
    /// Present iff the verdict is `Accepted`.
    pub enclave_pk: Option<PublicKey>,
    pub quote: Quote,
}

/// Minimal signed certificate naming a verifier and its pseudonym base.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierCertificate {
    pub subject: String,
    pub issuer: String,
    #[serde(with = "hex_pk")]
    pub pk: PublicKey,
    pub not_before: Tick,
    pub not_after: Tick,
    #[serde(with = "hex_sig")]
    pub signature: Signature,
}

mod hex_pk {
    use super::PublicKey;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(pk: &PublicKey, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&pk.to_hex())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PublicKey, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

mod hex_sig {
    use super::Signature;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(sig: &Signature, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&sig.0))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Signature, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map(Signature).map_err(serde::de::Error::custom)
    }
}

impl VerifierCertificate {
    fn body(subject: &str, issuer: &str, pk: &PublicKey, not_before: Tick, not_after: Tick) -> Vec<u8> {
        Writer::new()
            .raw(b"trusdn/cert/v1")
            .bytes(subject.as_bytes())
            .bytes(issuer.as_bytes())
            .raw(&pk.0)
            .u64(not_before)
            .u64(not_after)
            .finish()
    }

    pub fn signed_body(&self) -> Vec<u8> {
        Self::body(&self.subject, &self.issuer, &self.pk, self.not_before, self.not_after)
    }

    fn valid_at(&self, now: Tick) -> bool {
        self.not_before <= now && now <= self.not_after
    }
}

/// Anything that can sign certificates.
pub trait CertificateIssuer {
    fn issuer_name(&self) -> &str;
    fn issuer_secret(&self) -> &SecretKey;
}

/// Issues a certificate for `subject_name` valid over `[not_before, not_after]`.
pub fn issue_verifier_certificate(
    issuer: &dyn CertificateIssuer,
    subject_name: &str,
    subject_pk: PublicKey,
    not_before: Tick,
    not_after: Tick,
) -> VerifierCertificate {
    let body = VerifierCertificate::body(
        subject_name,
        issuer.issuer_name(),
        &subject_pk,
        not_before,
        not_after,
    );
    VerifierCertificate {
        subject: subject_name.to_owned(),
        issuer: issuer.issuer_name().to_owned(),
        pk: subject_pk,
        not_before,
        not_after,
        signature: sign(issuer.issuer_secret(), &body),
    }
}

/// Validates a leaf-first chain ending at a certificate issued by the root.
pub fn validate_chain(
    chain: &[VerifierCertificate],
    root_name: &str,
    root_pk: &PublicKey,
    now: Tick,
) -> bool {
    if chain.is_empty() {
        return false;
    }
    for (i, cert) in chain.iter().enumerate() {
        let (issuer_name, issuer_pk) = match chain.get(i + 1) {
            Some(parent) => (parent.subject.as_str(), &parent.pk),
            None => (root_name, root_pk),
        };
        if cert.issuer != issuer_name
            || !cert.valid_at(now)
            || !verify(issuer_pk, &cert.signed_body(), &cert.signature)
        {
            return false;
        }
    }
    true
}

/// The group-signature authority acting as root CA for named-base verifiers.
pub struct EpidAuthority {
    name: String,
    keypair: KeyPair,
    group: Arc<GroupPublicKey>,
}

impl EpidAuthority {
    pub fn new<R: RngCore + rand::CryptoRng>(
        name: &str,
        group: Arc<GroupPublicKey>,
        rng: &mut R,
    ) -> Self {
        Self {
            name: name.to_owned(),
            keypair: KeyPair::generate(KeyOwner::Authority, rng),
            group,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn group(&self) -> &Arc<GroupPublicKey> {
        &self.group
    }
}

impl CertificateIssuer for EpidAuthority {
    fn issuer_name(&self) -> &str {
        &self.name
    }

    fn issuer_secret(&self) -> &SecretKey {
        self.keypair.secret()
    }
}

/// Verifier-side session state: group parameters, outstanding challenges and
/// (optionally) a certificate chain authorizing named-base use.
pub struct Verifier {
    name: String,
    keypair: KeyPair,
    group: Arc<GroupPublicKey>,
    root_name: String,
    root_pk: PublicKey,
    chain: Vec<VerifierCertificate>,
    freshness_window: Tick,
    outstanding: BTreeMap<[u8; 32], Tick>,
    rng: ChaCha20Rng,
}

impl Verifier {
    pub fn new(name: &str, authority: &EpidAuthority, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Self {
            name: name.to_owned(),
            keypair: KeyPair::generate(KeyOwner::Verifier, &mut rng),
            group: authority.group.clone(),
            root_name: authority.name.clone(),
            root_pk: authority.public_key(),
            chain: Vec::new(),
            freshness_window: DEFAULT_FRESHNESS_WINDOW,
            outstanding: BTreeMap::new(),
            rng,
        }
    }

    pub fn with_freshness_window(mut self, window: Tick) -> Self {
        self.freshness_window = window;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn group(&self) -> &Arc<GroupPublicKey> {
        &self.group
    }

    /// Installs a leaf-first certificate chain for this verifier.
    pub fn set_certificate_chain(&mut self, chain: Vec<VerifierCertificate>) {
        self.chain = chain;
    }

    pub fn certificate(&self) -> Option<&VerifierCertificate> {
        self.chain.first()
    }

    pub fn certificate_chain(&self) -> &[VerifierCertificate] {
        &self.chain
    }

    /// Holds a valid chain whose leaf names this verifier's key.
    pub fn is_authorized(&self, now: Tick) -> bool {
        self.chain
            .first()
            .is_some_and(|leaf| leaf.pk == self.keypair.public())
            && validate_chain(&self.chain, &self.root_name, &self.root_pk, now)
    }

    pub fn challenge(&mut self, qe_identity: EnclaveId, base: PseudonymBase, now: Tick) -> Challenge {
        let mut nonce = [0u8; 32];
        self.rng.fill_bytes(&mut nonce);
        self.outstanding.insert(nonce, now);
        Challenge {
            nonce,
            qe_identity,
            issued_at: now,
            base,
        }
    }

    /// Consumes `challenge` and judges `evidence` against it.
    pub fn verify_evidence(
        &mut self,
        challenge: &Challenge,
        evidence: &Evidence,
        expected: &Measurement,
        now: Tick,
    ) -> AttestationResult {
        let issued = self.outstanding.remove(&challenge.nonce);
        let quote = &evidence.quote;
        let verdict = if !epid_verify(&self.group, &challenge.base, &quote.message(), &quote.signature)
        {
            Verdict::BadSignature
        } else if quote.challenge_nonce != challenge.nonce
            || issued.is_none_or(|t| now.saturating_sub(t) > self.freshness_window)
        {
            Verdict::StaleNonce
        } else if quote.report.user_data != sha256(&[&evidence.enclave_pk.0]) {
            Verdict::UserDataMismatch
        } else if &quote.report.reporter_measurement != expected {
            Verdict::MeasurementMismatch
        } else {
            Verdict::Accepted
        };
        AttestationResult {
            verdict,
            enclave_pk: (verdict == Verdict::Accepted).then_some(evidence.enclave_pk),
            quote: quote.clone(),
        }
    }
}

impl CertificateIssuer for Verifier {
    fn issuer_name(&self) -> &str {
        &self.name
    }

    fn issuer_secret(&self) -> &SecretKey {
        self.keypair.secret()
    }
}

/// Enclave-side answer to a challenge: report `H(EK_pk)` to the named QE and
/// obtain a quote for the challenge nonce.
pub fn answer_challenge(
    dc: &mut Datacenter,
    platform: PlatformId,
    enclave: EnclaveId,
    challenge: &Challenge,
) -> Result<Evidence, PlatformError> {
    let qe = challenge.qe_identity;
    let (report, enclave_pk) = dc.get_mut(platform)?.ecall(enclave, |rt| {
        let pk = rt.keypair().public();
        rt.ereport(qe, sha256(&[&pk.0])).map(|r| (r, pk))
    })??;
    let quote = dc.qe_quote(platform, &report, challenge.nonce, &challenge.base)?;
    Ok(Evidence { quote, enclave_pk })
}

/// One entry of the published list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ListEntry {
    pub signature: LinkableSignature,
    /// Exact byte string the signature covers.
    pub message: Vec<u8>,
}

/// Named-base platform signatures published by the provider's verifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlatformSignatureList {
    pub base_name: String,
    pub publisher: VerifierCertificate,
    pub entries: Vec<ListEntry>,
}

#[derive(Serialize, Deserialize)]
struct ListDoc {
    base_name: String,
    publisher: VerifierCertificate,
    entries: Vec<EntryDoc>,
}

#[derive(Serialize, Deserialize)]
struct EntryDoc {
    pseudonym: String,
    proof: String,
    message: String,
}

impl PlatformSignatureList {
    pub fn base(&self) -> PseudonymBase {
        PseudonymBase::named(self.base_name.clone())
    }

    pub fn to_json(&self) -> String {
        let doc = ListDoc {
            base_name: self.base_name.clone(),
            publisher: self.publisher.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryDoc {
                    pseudonym: hex::encode(e.signature.pseudonym()),
                    proof: hex::encode(e.signature.proof_bytes()),
                    message: hex::encode(&e.message),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("list document serializes")
    }

    /// Parses a list and checks that every entry verifies under `group`.
    pub fn from_json(s: &str, group: &GroupPublicKey) -> Result<Self, AttestationError> {
        let bad = |e: String| AttestationError::InvalidList(e);
        let doc: ListDoc = serde_json::from_str(s).map_err(|e| bad(e.to_string()))?;
        let base = PseudonymBase::named(doc.base_name.clone());
        let entries = doc
            .entries
            .into_iter()
            .map(|e| {
                let pseudonym: [u8; 32] = hex::decode(&e.pseudonym)
                    .map_err(|e| bad(e.to_string()))?
                    .try_into()
                    .map_err(|_| bad("pseudonym length".into()))?;
                let proof = hex::decode(&e.proof).map_err(|e| bad(e.to_string()))?;
                let message = hex::decode(&e.message).map_err(|e| bad(e.to_string()))?;
                let signature = LinkableSignature::from_parts(pseudonym, base.clone(), &proof)
                    .map_err(|e| bad(e.to_string()))?;
                if !epid_verify(group, &base, &message, &signature) {
                    return Err(bad("entry signature does not verify".into()));
                }
                Ok(ListEntry { signature, message })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            base_name: doc.base_name,
            publisher: doc.publisher,
            entries,
        })
    }

    /// True iff `(message, sig)` links to some entry.
    pub fn links(&self, group: &GroupPublicKey, message: &[u8], sig: &LinkableSignature) -> bool {
        self.entries.iter().any(|e| {
            epid_linked(group, (message, sig), (&e.message, &e.signature)).unwrap_or(false)
        })
    }
}

fn platform_attest_message(epoch: u64) -> Vec<u8> {
    let mut m = PLATFORM_ATTEST_MESSAGE.to_vec();
    m.extend_from_slice(&epoch.to_be_bytes());
    m
}

/// Attests each platform under the publisher's named base. Platforms whose
/// quote fails are reported and left out; the batch continues.
pub fn publish_platform_list(
    vp: &Verifier,
    dc: &mut Datacenter,
    platforms: &[PlatformId],
    epoch: u64,
    now: Tick,
) -> Result<(PlatformSignatureList, Vec<AttestationError>), AttestationError> {
    if !vp.is_authorized(now) {
        return Err(AttestationError::UnauthorizedVerifier);
    }
    let leaf = vp.certificate().expect("authorized implies a certificate").clone();
    let base_name = leaf.subject.clone();
    let base = PseudonymBase::named(base_name.clone());
    let message = platform_attest_message(epoch);
    let nonce = sha256(&[&message]);
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for &pid in platforms {
        let quote = match dc.platform_quote(pid, &message, nonce, &base) {
            Ok(q) => q,
            Err(_) => {
                failures.push(AttestationError::AttestationFailed(pid));
                continue;
            }
        };
        let signed = quote.message();
        if epid_verify(&vp.group, &base, &signed, &quote.signature)
            && quote.challenge_nonce == nonce
            && quote.report.user_data == sha256(&[&message])
        {
            entries.push(ListEntry {
                signature: quote.signature,
                message: signed,
            });
        } else {
            failures.push(AttestationError::AttestationFailed(pid));
        }
    }
    Ok((
        PlatformSignatureList {
            base_name,
            publisher: leaf,
            entries,
        },
        failures,
    ))
}

/// Requests a fresh quote from `platform` under the list's base and checks
/// that it links to a published entry.
pub fn anti_cuckoo_check(
    tenant: &mut Verifier,
    dc: &mut Datacenter,
    platform: PlatformId,
    list: &PlatformSignatureList,
    now: Tick,
) -> Result<bool, AttestationError> {
    if !tenant.is_authorized(now) {
        return Err(AttestationError::UnauthorizedVerifier);
    }
    let base = list.base();
    let qe = dc.get(platform)?.quoting_enclave();
    let challenge = tenant.challenge(qe, base.clone(), now);
    let quote = match dc.platform_quote(platform, TENANT_CHECK_MESSAGE, challenge.nonce, &base) {
        Ok(q) => q,
        Err(_) => return Ok(false),
    };
    tenant.outstanding.remove(&challenge.nonce);
    let message = quote.message();
    Ok(quote.challenge_nonce == challenge.nonce
        && epid_verify(&tenant.group, &base, &message, &quote.signature)
        && list.links(&tenant.group, &message, &quote.signature))
}

/// Optional anti-cuckoo policy for [`attest_enclave`].
#[derive(Clone, Copy, Debug, Default)]
pub struct AttestPolicy<'a> {
    pub anti_cuckoo: Option<&'a PlatformSignatureList>,
}

/// Runs a full attestation session against `enclave` on `platform`, carrying
/// the challenge and evidence through `transport`.
#[allow(clippy::too_many_arguments)]
pub fn attest_enclave(
    verifier: &mut Verifier,
    verifier_node: NodeId,
    dc: &mut Datacenter,
    platform: PlatformId,
    enclave: EnclaveId,
    expected: &Measurement,
    base: PseudonymBase,
    policy: AttestPolicy<'_>,
    now: Tick,
    transport: &mut dyn Transport,
) -> Result<AttestationResult, AttestationError> {
    let base = match policy.anti_cuckoo {
        Some(list) => {
            if !verifier.is_authorized(now) {
                return Err(AttestationError::UnauthorizedVerifier);
            }
            list.base()
        }
        None => base,
    };
    let qe = dc.get(platform)?.quoting_enclave();
    let challenge = verifier.challenge(qe, base, now);
    let out = Hop {
        from: verifier_node,
        to: NodeId::Host(platform),
        segment: Segment::Physical,
    };
    let delivered = transport
        .carry(out, MsgType::AttestChallenge, challenge.to_frame())
        .ok_or(AttestationError::TransportFailure)?;
    let received = Challenge::from_frame(&delivered)?;
    let evidence = answer_challenge(dc, platform, enclave, &received)?;
    let back = Hop {
        from: NodeId::Host(platform),
        to: verifier_node,
        segment: Segment::Physical,
    };
    let delivered = transport
        .carry(back, MsgType::AttestEvidence, evidence.to_frame())
        .ok_or(AttestationError::TransportFailure)?;
    let evidence = match Evidence::from_frame(&delivered) {
        Ok(e) => e,
        // A mangled quote is a signature failure, not a protocol error.
        Err(_) => {
            verifier.outstanding.remove(&challenge.nonce);
            return Ok(AttestationResult {
                verdict: Verdict::BadSignature,
                enclave_pk: None,
                quote: evidence.quote,
            });
        }
    };
    let mut result = verifier.verify_evidence(&challenge, &evidence, expected, now);
    if let (Verdict::Accepted, Some(list)) = (result.verdict, policy.anti_cuckoo) {
        if !list.links(&verifier.group, &result.quote.message(), &result.quote.signature) {
            result.verdict = Verdict::CuckooSuspected;
            result.enclave_pk = None;
        }
    }
    Ok(result)
}
