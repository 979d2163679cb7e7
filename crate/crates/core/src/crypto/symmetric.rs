//! Role-tagged symmetric keys, counter-nonce AEAD sealing and HMAC tags.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use super::CryptoError;

/// Length of every symmetric key in bytes.
pub const KEY_LEN: usize = 32;
/// Length of an AEAD nonce in bytes.
pub const NONCE_LEN: usize = 12;
/// Length of the Poly1305 authentication tag appended to every body.
pub const AEAD_TAG_LEN: usize = 16;
/// Length of a MAC tag in bytes.
pub const MAC_LEN: usize = 32;

type HmacSha256 = Hmac<Sha256>;

/// What a symmetric key is for. Fixed at creation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyRole {
    /// `K_alpha`: controller <-> switch (or compute task) session key.
    SessionAlpha,
    /// `K_beta`: domain-wide switch <-> switch key.
    DomainBeta,
    /// `K'`: ephemeral encryption key of an enrollment message.
    EphemeralEnc,
    /// `K''`: ephemeral MAC key of an enrollment message.
    EphemeralMac,
    /// `SK_gamma`: flow-specific pre-shared key.
    FlowPsk,
    /// Platform report key of a target enclave.
    ReportKey,
    /// Output of a key-derivation step.
    Derived,
}

impl KeyRole {
    pub fn can_encrypt(self) -> bool {
        !matches!(self, KeyRole::EphemeralMac | KeyRole::ReportKey)
    }

    pub fn can_mac(self) -> bool {
        matches!(
            self,
            KeyRole::EphemeralMac | KeyRole::Derived | KeyRole::ReportKey
        )
    }
}

/// A 256-bit secret tagged with its [`KeyRole`].
///
/// Equality is constant time over the bytes and keys of different roles are
/// never equal.
#[derive(Clone)]
pub struct SymmetricKey {
    bytes: [u8; KEY_LEN],
    role: KeyRole,
}

impl SymmetricKey {
    pub fn generate<R: RngCore + CryptoRng>(role: KeyRole, rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Self { bytes, role }
    }

    pub fn from_bytes(role: KeyRole, bytes: [u8; KEY_LEN]) -> Self {
        Self { bytes, role }
    }

    pub fn from_slice(role: KeyRole, bytes: &[u8]) -> Result<Self, CryptoError> {
        let bytes: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::InvalidLength("symmetric key"))?;
        Ok(Self { bytes, role })
    }

    pub fn role(&self) -> KeyRole {
        self.role
    }

    /// Raw key bytes. Callers must keep these inside the owning enclave or
    /// inside a sealed/wrapped container.
    pub fn expose(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }

    /// Same secret under a different role, e.g. when an unwrapped blob is
    /// assigned its final purpose.
    pub fn with_role(&self, role: KeyRole) -> Self {
        Self {
            bytes: self.bytes,
            role,
        }
    }
}

impl PartialEq for SymmetricKey {
    fn eq(&self, other: &Self) -> bool {
        self.role == other.role && bool::from(self.bytes.ct_eq(&other.bytes))
    }
}

impl Eq for SymmetricKey {}

impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetricKey")
            .field("role", &self.role)
            .finish_non_exhaustive()
    }
}

/// `Enc(K, m)`: nonce, authenticated body and a digest of the associated data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub nonce: [u8; NONCE_LEN],
    pub body: Vec<u8>,
    pub aad_digest: [u8; 32],
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + 32 + self.body.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.aad_digest);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < NONCE_LEN + 32 + AEAD_TAG_LEN {
            return Err(CryptoError::InvalidLength("ciphertext"));
        }
        let (nonce, rest) = bytes.split_at(NONCE_LEN);
        let (aad_digest, body) = rest.split_at(32);
        Ok(Self {
            nonce: nonce.try_into().expect("split length"),
            aad_digest: aad_digest.try_into().expect("split length"),
            body: body.to_vec(),
        })
    }

    /// Sender prefix encoded in the first four nonce bytes.
    pub fn nonce_prefix(&self) -> u32 {
        u32::from_be_bytes(self.nonce[..4].try_into().expect("fixed length"))
    }

    /// Counter encoded in the last eight nonce bytes.
    pub fn nonce_counter(&self) -> u64 {
        u64::from_be_bytes(self.nonce[4..].try_into().expect("fixed length"))
    }
}

pub(crate) fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

fn cipher(key: &SymmetricKey) -> ChaCha20Poly1305 {
    ChaCha20Poly1305::new(Key::from_slice(&key.bytes))
}

/// Owns a key together with its nonce counter.
///
/// Nonces are `prefix (4 bytes) || counter (8 bytes)`. Parties sharing one key
/// must use distinct prefixes.
#[derive(Clone, Debug)]
pub struct Sealer {
    key: SymmetricKey,
    prefix: u32,
    counter: u64,
}

impl Sealer {
    pub fn new(key: SymmetricKey, prefix: u32) -> Self {
        Self::with_counter(key, prefix, 0)
    }

    pub fn with_counter(key: SymmetricKey, prefix: u32, counter: u64) -> Self {
        Self {
            key,
            prefix,
            counter,
        }
    }

    pub fn key(&self) -> &SymmetricKey {
        &self.key
    }

    pub fn prefix(&self) -> u32 {
        self.prefix
    }

    pub fn seal(&mut self, plaintext: &[u8], aad: &[u8]) -> Result<Ciphertext, CryptoError> {
        if !self.key.role.can_encrypt() {
            return Err(CryptoError::WrongKeyRole(self.key.role));
        }
        if self.counter == u64::MAX {
            return Err(CryptoError::NonceExhausted);
        }
        let mut nonce = [0u8; NONCE_LEN];
        nonce[..4].copy_from_slice(&self.prefix.to_be_bytes());
        nonce[4..].copy_from_slice(&self.counter.to_be_bytes());
        self.counter += 1;
        let body = cipher(&self.key)
            .encrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: plaintext,
                    aad,
                },
            )
            .map_err(|_| CryptoError::AuthenticationFailure)?;
        Ok(Ciphertext {
            nonce,
            body,
            aad_digest: sha256(&[aad]),
        })
    }
}

/// Seals one message under `key` with an explicit nonce prefix and counter.
pub fn sym_seal(
    key: &SymmetricKey,
    prefix: u32,
    counter: u64,
    plaintext: &[u8],
    aad: &[u8],
) -> Result<Ciphertext, CryptoError> {
    Sealer::with_counter(key.clone(), prefix, counter).seal(plaintext, aad)
}

/// `Dec(K, c)`. Fails unless key, nonce, body and associated data all match.
pub fn sym_open(key: &SymmetricKey, c: &Ciphertext, aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if !bool::from(sha256(&[aad]).ct_eq(&c.aad_digest)) {
        return Err(CryptoError::AuthenticationFailure);
    }
    cipher(key)
        .decrypt(
            Nonce::from_slice(&c.nonce),
            Payload { msg: &c.body, aad },
        )
        .map_err(|_| CryptoError::AuthenticationFailure)
}

/// `mu = MAC(K, m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MacTag(pub [u8; MAC_LEN]);

impl AsRef<[u8]> for MacTag {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub fn mac_tag(key: &SymmetricKey, m: &[u8]) -> Result<MacTag, CryptoError> {
    if !key.role.can_mac() {
        return Err(CryptoError::WrongKeyRole(key.role));
    }
    let mut mac = <HmacSha256 as Mac>::new_from_slice(&key.bytes).expect("hmac accepts any key size");
    mac.update(m);
    Ok(MacTag(mac.finalize().into_bytes().into()))
}

/// Constant-time check of `tag` against `MAC(key, m)`. Tags of the wrong
/// length or keys that cannot MAC simply fail.
pub fn mac_check(key: &SymmetricKey, m: &[u8], tag: &[u8]) -> bool {
    match mac_tag(key, m) {
        Ok(expected) => tag.len() == MAC_LEN && bool::from(expected.0.ct_eq(tag)),
        Err(_) => false,
    }
}

/// HKDF-SHA256 extract-and-expand to a single 32-byte key.
pub fn derive_key(role: KeyRole, ikm: &[u8], salt: &[u8], info: &[u8]) -> SymmetricKey {
    let hk = hkdf::Hkdf::<Sha256>::new(Some(salt), ikm);
    let mut out = [0u8; KEY_LEN];
    hk.expand(info, &mut out).expect("32 bytes is a valid HKDF length");
    SymmetricKey::from_bytes(role, out)
}
