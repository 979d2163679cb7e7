//! EPID-style linkable group signatures.
//!
//! A group is a roster of member commitments `F_i = f_i * G`. A signature by
//! member `f` under base `B` exposes the pseudonym `f * B` together with a
//! ring proof (Schnorr-style, Fiat-Shamir) that the signer knows `f` with
//! `pseudonym = f * B` and `F_k = f * G` for some roster entry `k`, bound to
//! the message, the base and the group. Which roster entry signed stays
//! hidden; pseudonyms under the same named base link, under random or
//! distinct bases they do not.

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::{Identity, VartimeMultiscalarMul};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha512};
use subtle::ConstantTimeEq;

use super::CryptoError;

const NAMED_BASE_DOMAIN: &[u8] = b"trusdn/epid/named-base/v1";

/// Public parameters of one group: its identifier and member roster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPublicKey {
    group_id: String,
    members: Vec<CompressedRistretto>,
    digest: [u8; 64],
}

impl GroupPublicKey {
    pub fn new(group_id: impl Into<String>, members: Vec<CompressedRistretto>) -> Self {
        let group_id = group_id.into();
        let mut h = Sha512::new();
        h.update(b"trusdn/epid/group/v1");
        h.update((group_id.len() as u64).to_be_bytes());
        h.update(group_id.as_bytes());
        for m in &members {
            h.update(m.as_bytes());
        }
        Self {
            group_id,
            members,
            digest: h.finalize().into(),
        }
    }

    /// Roster built from the given member secrets, in order.
    pub fn from_members<'a>(
        group_id: impl Into<String>,
        secrets: impl IntoIterator<Item = &'a GroupMemberSecret>,
    ) -> Self {
        Self::new(group_id, secrets.into_iter().map(|s| s.commitment()).collect())
    }

    pub fn group_id(&self) -> &str {
        &self.group_id
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Issues member secrets and the matching roster.
pub struct EpidIssuer;

impl EpidIssuer {
    pub fn setup<R: RngCore + CryptoRng>(
        group_id: &str,
        members: usize,
        rng: &mut R,
    ) -> (GroupPublicKey, Vec<GroupMemberSecret>) {
        let secrets: Vec<_> = (0..members)
            .map(|_| GroupMemberSecret::random(group_id, rng))
            .collect();
        (GroupPublicKey::from_members(group_id, &secrets), secrets)
    }
}

/// The private member scalar `f`, `1 <= f < order`.
#[derive(Clone)]
pub struct GroupMemberSecret {
    f: Scalar,
    group_id: String,
}

impl GroupMemberSecret {
    pub fn random<R: RngCore + CryptoRng>(group_id: &str, rng: &mut R) -> Self {
        loop {
            let f = Scalar::random(rng);
            if f != Scalar::ZERO {
                return Self {
                    f,
                    group_id: group_id.to_owned(),
                };
            }
        }
    }

    /// Small, fixed member secrets for exhaustive tests.
    pub fn from_u64(group_id: &str, f: u64) -> Result<Self, CryptoError> {
        if f == 0 {
            return Err(CryptoError::InvalidEncoding("member secret must be non-zero"));
        }
        Ok(Self {
            f: Scalar::from(f),
            group_id: group_id.to_owned(),
        })
    }

    pub fn group_id(&self) -> &str {
        &self.group_id
    }

    fn commitment(&self) -> CompressedRistretto {
        RistrettoPoint::mul_base(&self.f).compress()
    }

    #[cfg(test)]
    pub(crate) fn scalar(&self) -> &Scalar {
        &self.f
    }
}

impl std::fmt::Debug for GroupMemberSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GroupMemberSecret({}, ..)", self.group_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BaseKind {
    Named(String),
    Random,
}

/// The base `B` whose power `B^f` is revealed as pseudonym.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudonymBase {
    kind: BaseKind,
    point: CompressedRistretto,
}

pub fn named_base_point(name: &str) -> RistrettoPoint {
    let mut input = NAMED_BASE_DOMAIN.to_vec();
    input.extend_from_slice(name.as_bytes());
    RistrettoPoint::hash_from_bytes::<Sha512>(&input)
}

impl PseudonymBase {
    pub fn named(name: impl Into<String>) -> Self {
        let name = name.into();
        let point = named_base_point(&name).compress();
        Self {
            kind: BaseKind::Named(name),
            point,
        }
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self {
            kind: BaseKind::Random,
            point: RistrettoPoint::random(rng).compress(),
        }
    }

    /// Reassembles a base from its parts, e.g. after deserialization. Use
    /// [`PseudonymBase::validate`] before trusting it.
    pub fn from_parts(kind: BaseKind, point: [u8; 32]) -> Self {
        Self {
            kind,
            point: CompressedRistretto(point),
        }
    }

    pub fn kind(&self) -> &BaseKind {
        &self.kind
    }

    pub fn name(&self) -> Option<&str> {
        match &self.kind {
            BaseKind::Named(n) => Some(n),
            BaseKind::Random => None,
        }
    }

    pub fn point_bytes(&self) -> [u8; 32] {
        self.point.to_bytes()
    }

    /// A base is usable when it decodes to a non-identity element and, if
    /// named, equals the hash of its name.
    pub fn validate(&self) -> Result<RistrettoPoint, CryptoError> {
        let p = self.point.decompress().ok_or(CryptoError::InvalidBase)?;
        if p == RistrettoPoint::identity() {
            return Err(CryptoError::InvalidBase);
        }
        if let BaseKind::Named(name) = &self.kind {
            if named_base_point(name).compress() != self.point {
                return Err(CryptoError::InvalidBase);
            }
        }
        Ok(p)
    }

    fn absorb(&self, h: &mut Sha512) {
        match &self.kind {
            BaseKind::Named(n) => {
                h.update([1u8]);
                h.update((n.len() as u64).to_be_bytes());
                h.update(n.as_bytes());
            }
            BaseKind::Random => h.update([2u8]),
        }
        h.update(self.point.as_bytes());
    }
}

/// Signature carrying the pseudonym `B^f` and the ring proof
/// `(c_0, s_0 .. s_{n-1})`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkableSignature {
    pseudonym: CompressedRistretto,
    base: PseudonymBase,
    c0: Scalar,
    responses: Vec<Scalar>,
}

impl LinkableSignature {
    pub fn pseudonym(&self) -> [u8; 32] {
        self.pseudonym.to_bytes()
    }

    pub fn base(&self) -> &PseudonymBase {
        &self.base
    }

    /// `c_0 || n (u32 BE) || s_0 .. s_{n-1}`. The pseudonym and base are
    /// serialized separately.
    pub fn proof_bytes(&self) -> Vec<u8> {
        let mut out = self.c0.as_bytes().to_vec();
        out.extend_from_slice(&(self.responses.len() as u32).to_be_bytes());
        for s in &self.responses {
            out.extend_from_slice(s.as_bytes());
        }
        out
    }

    pub fn from_parts(
        pseudonym: [u8; 32],
        base: PseudonymBase,
        proof: &[u8],
    ) -> Result<Self, CryptoError> {
        let bad = || CryptoError::InvalidEncoding("linkable signature proof");
        if proof.len() < 36 {
            return Err(bad());
        }
        let scalar = |b: &[u8]| -> Result<Scalar, CryptoError> {
            let arr: [u8; 32] = b.try_into().map_err(|_| bad())?;
            Option::from(Scalar::from_canonical_bytes(arr)).ok_or_else(bad)
        };
        let c0 = scalar(&proof[..32])?;
        let n = u32::from_be_bytes(proof[32..36].try_into().expect("length checked")) as usize;
        let rest = &proof[36..];
        if rest.len() != n * 32 {
            return Err(bad());
        }
        let responses = rest.chunks(32).map(scalar).collect::<Result<_, _>>()?;
        Ok(Self {
            pseudonym: CompressedRistretto(pseudonym),
            base,
            c0,
            responses,
        })
    }

    /// Test hook: the same proof with its pseudonym replaced.
    #[doc(hidden)]
    pub fn with_pseudonym(&self, pseudonym: [u8; 32]) -> Self {
        Self {
            pseudonym: CompressedRistretto(pseudonym),
            ..self.clone()
        }
    }
}

fn context(
    group: &GroupPublicKey,
    base: &PseudonymBase,
    pseudonym: &CompressedRistretto,
    m: &[u8],
) -> [u8; 64] {
    let mut h = Sha512::new();
    h.update(b"trusdn/epid/sig/v1");
    h.update(group.digest);
    base.absorb(&mut h);
    h.update(pseudonym.as_bytes());
    h.update((m.len() as u64).to_be_bytes());
    h.update(m);
    h.finalize().into()
}

fn ring_challenge(ctx: &[u8; 64], index: usize, l: &RistrettoPoint, r: &RistrettoPoint) -> Scalar {
    let mut h = Sha512::new();
    h.update(ctx);
    h.update((index as u64).to_be_bytes());
    h.update(l.compress().as_bytes());
    h.update(r.compress().as_bytes());
    Scalar::from_hash(h)
}

/// Signs `m` as an anonymous member of `group`, revealing `base^f`.
pub fn epid_sign<R: RngCore + CryptoRng>(
    group: &GroupPublicKey,
    member: &GroupMemberSecret,
    base: &PseudonymBase,
    m: &[u8],
    rng: &mut R,
) -> Result<LinkableSignature, CryptoError> {
    let b = base.validate()?;
    if member.group_id != group.group_id {
        return Err(CryptoError::NotAMember);
    }
    let own = member.commitment();
    let signer = group
        .members
        .iter()
        .position(|c| c == &own)
        .ok_or(CryptoError::NotAMember)?;
    let roster: Vec<RistrettoPoint> = group
        .members
        .iter()
        .map(|c| c.decompress().ok_or(CryptoError::InvalidEncoding("roster")))
        .collect::<Result<_, _>>()?;

    let pseudonym_point = b * member.f;
    let pseudonym = pseudonym_point.compress();
    let ctx = context(group, base, &pseudonym, m);
    let n = roster.len();

    let mut c = vec![Scalar::ZERO; n];
    let mut s = vec![Scalar::ZERO; n];
    let alpha = Scalar::random(rng);
    let next = (signer + 1) % n;
    c[next] = ring_challenge(
        &ctx,
        signer,
        &RistrettoPoint::mul_base(&alpha),
        &(b * alpha),
    );
    let mut i = next;
    while i != signer {
        s[i] = Scalar::random(rng);
        // Simulated responses are public, so variable time is fine here.
        let l = RistrettoPoint::vartime_double_scalar_mul_basepoint(&c[i], &roster[i], &s[i]);
        let r = RistrettoPoint::vartime_multiscalar_mul([s[i], c[i]], [b, pseudonym_point]);
        c[(i + 1) % n] = ring_challenge(&ctx, i, &l, &r);
        i = (i + 1) % n;
    }
    s[signer] = alpha - c[signer] * member.f;

    Ok(LinkableSignature {
        pseudonym,
        base: base.clone(),
        c0: c[0],
        responses: s,
    })
}

/// Accepts iff `sig` was produced over `m` under exactly `base` by some member
/// of `group`.
pub fn epid_verify(
    group: &GroupPublicKey,
    base: &PseudonymBase,
    m: &[u8],
    sig: &LinkableSignature,
) -> bool {
    if &sig.base != base || sig.responses.len() != group.members.len() || group.is_empty() {
        return false;
    }
    let Ok(b) = base.validate() else {
        return false;
    };
    let Some(pseudonym) = sig.pseudonym.decompress() else {
        return false;
    };
    if pseudonym == RistrettoPoint::identity() {
        return false;
    }
    let ctx = context(group, base, &sig.pseudonym, m);
    let mut c = sig.c0;
    for (i, (member, s)) in group.members.iter().zip(&sig.responses).enumerate() {
        let Some(f_point) = member.decompress() else {
            return false;
        };
        let l = RistrettoPoint::vartime_double_scalar_mul_basepoint(&c, &f_point, s);
        let r = RistrettoPoint::vartime_multiscalar_mul([*s, c], [b, pseudonym]);
        c = ring_challenge(&ctx, i, &l, &r);
    }
    bool::from(c.as_bytes().ct_eq(sig.c0.as_bytes()))
}

/// True iff both signatures verify and share a pseudonym under equal named
/// bases. Each input is `(message, signature)`.
pub fn epid_linked(
    group: &GroupPublicKey,
    a: (&[u8], &LinkableSignature),
    b: (&[u8], &LinkableSignature),
) -> Result<bool, CryptoError> {
    if !epid_verify(group, &a.1.base, a.0, a.1) || !epid_verify(group, &b.1.base, b.0, b.1) {
        return Err(CryptoError::UnverifiedInput);
    }
    let named_equal = matches!(
        (&a.1.base.kind, &b.1.base.kind),
        (BaseKind::Named(x), BaseKind::Named(y)) if x == y
    );
    Ok(named_equal && a.1.pseudonym == b.1.pseudonym)
}
