//! Public-key material over the Ristretto group: hybrid encryption
//! (`Enc_pk` / `Dec_sk`) and Schnorr signatures (`Sign_sk` / `Verify_pk`).

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha512};

use super::symmetric::{derive_key, KeyRole};
use super::CryptoError;

/// Largest plaintext accepted by [`hybrid_wrap`].
pub const MAX_WRAP_LEN: usize = 4096;
const ENCAP_LEN: usize = 32;

/// Who a keypair belongs to. Fixed at creation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KeyOwner {
    /// `EK`: switch enclave key.
    Enclave,
    /// `CK`: compute task key.
    ComputeTask,
    /// `QE`: quoting enclave key.
    QuotingEnclave,
    Verifier,
    Authority,
}

/// Compressed group element used as a public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub(crate) fn point(&self) -> Option<RistrettoPoint> {
        CompressedRistretto(self.0).decompress()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|_| CryptoError::InvalidEncoding("public key hex"))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::InvalidLength("public key"))?;
        Ok(PublicKey(arr))
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({})", &hex::encode(self.0)[..16])
    }
}

#[derive(Clone)]
pub struct SecretKey(pub(crate) Scalar);

impl SecretKey {
    pub fn public_key(&self) -> PublicKey {
        PublicKey(RistrettoPoint::mul_base(&self.0).compress().to_bytes())
    }
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    public: PublicKey,
    secret: SecretKey,
    owner: KeyOwner,
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(owner: KeyOwner, rng: &mut R) -> Self {
        let secret = SecretKey(Scalar::random(rng));
        Self {
            public: secret.public_key(),
            secret,
            owner,
        }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn secret(&self) -> &SecretKey {
        &self.secret
    }

    pub fn owner(&self) -> KeyOwner {
        self.owner
    }
}

fn wrap_cipher(shared: &RistrettoPoint, encap: &[u8; 32], pk: &PublicKey) -> ChaCha20Poly1305 {
    let k = derive_key(
        KeyRole::Derived,
        shared.compress().as_bytes(),
        b"trusdn/hybrid/v1",
        &[encap.as_slice(), pk.0.as_slice()].concat(),
    );
    ChaCha20Poly1305::new(Key::from_slice(k.expose()))
}

/// `Enc_pk(m)`: ephemeral Diffie-Hellman encapsulation followed by AEAD.
/// Output is `encapsulation (32 bytes) || AEAD body`.
pub fn hybrid_wrap<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    m: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, CryptoError> {
    if m.len() > MAX_WRAP_LEN {
        return Err(CryptoError::MessageTooLong {
            len: m.len(),
            max: MAX_WRAP_LEN,
        });
    }
    let recipient = pk.point().ok_or(CryptoError::InvalidEncoding("public key"))?;
    let eph = Scalar::random(rng);
    let encap = RistrettoPoint::mul_base(&eph).compress().to_bytes();
    let shared = recipient * eph;
    // The derived key is single use, so a fixed nonce is safe.
    let body = wrap_cipher(&shared, &encap, pk)
        .encrypt(
            Nonce::from_slice(&[0u8; 12]),
            Payload {
                msg: m,
                aad: &encap,
            },
        )
        .map_err(|_| CryptoError::DecryptionFailure)?;
    let mut out = encap.to_vec();
    out.extend_from_slice(&body);
    Ok(out)
}

/// `Dec_sk(c)`.
pub fn hybrid_unwrap(sk: &SecretKey, c: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if c.len() < ENCAP_LEN + 16 {
        return Err(CryptoError::DecryptionFailure);
    }
    let (encap, body) = c.split_at(ENCAP_LEN);
    let encap: [u8; 32] = encap.try_into().expect("split length");
    let eph = CompressedRistretto(encap)
        .decompress()
        .ok_or(CryptoError::DecryptionFailure)?;
    let shared = eph * sk.0;
    wrap_cipher(&shared, &encap, &sk.public_key())
        .decrypt(
            Nonce::from_slice(&[0u8; 12]),
            Payload {
                msg: body,
                aad: &encap,
            },
        )
        .map_err(|_| CryptoError::DecryptionFailure)
}

/// Raw Diffie-Hellman: the compressed point `sk * pk`.
pub fn diffie_hellman(sk: &SecretKey, pk: &PublicKey) -> Result<[u8; 32], CryptoError> {
    let p = pk.point().ok_or(CryptoError::InvalidEncoding("public key"))?;
    Ok((p * sk.0).compress().to_bytes())
}

/// `sigma`: Schnorr signature `R || s`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature(pub Vec<u8>);

fn challenge(r: &CompressedRistretto, pk: &PublicKey, m: &[u8]) -> Scalar {
    let mut h = Sha512::new();
    h.update(b"trusdn/schnorr/v1");
    h.update(r.as_bytes());
    h.update(pk.0);
    h.update(m);
    Scalar::from_hash(h)
}

/// `Sign_sk(m)`. The nonce is derived from the secret and the message, so
/// signing is deterministic.
pub fn sign(sk: &SecretKey, m: &[u8]) -> Signature {
    let pk = sk.public_key();
    let mut h = Sha512::new();
    h.update(b"trusdn/schnorr/nonce");
    h.update(sk.0.as_bytes());
    h.update(m);
    let k = Scalar::from_hash(h);
    let r = RistrettoPoint::mul_base(&k).compress();
    let s = k + challenge(&r, &pk, m) * sk.0;
    let mut out = r.to_bytes().to_vec();
    out.extend_from_slice(s.as_bytes());
    Signature(out)
}

/// `Verify_pk(m, sigma)`. Malformed encodings verify as false.
pub fn verify(pk: &PublicKey, m: &[u8], sig: &Signature) -> bool {
    if sig.0.len() != 64 {
        return false;
    }
    let r = CompressedRistretto(sig.0[..32].try_into().expect("length checked"));
    let s_bytes: [u8; 32] = sig.0[32..].try_into().expect("length checked");
    let Some(s) = Option::<Scalar>::from(Scalar::from_canonical_bytes(s_bytes)) else {
        return false;
    };
    let (Some(r_point), Some(pk_point)) = (r.decompress(), pk.point()) else {
        return false;
    };
    let c = challenge(&r, pk, m);
    RistrettoPoint::vartime_double_scalar_mul_basepoint(&-c, &pk_point, &s) == r_point
}
