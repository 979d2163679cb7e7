//! Cryptographic primitives: role-tagged AEAD and MAC, hybrid public-key
//! encryption, Schnorr signatures and linkable group signatures.

mod asymmetric;
mod epid;
mod symmetric;

pub use asymmetric::{
    diffie_hellman, hybrid_unwrap, hybrid_wrap, sign, verify, KeyOwner, KeyPair, PublicKey, SecretKey, Signature,
    MAX_WRAP_LEN,
};
pub use epid::{
    epid_linked, epid_sign, epid_verify, named_base_point, BaseKind, EpidIssuer, GroupMemberSecret,
    GroupPublicKey, LinkableSignature, PseudonymBase,
};
pub use symmetric::{
    derive_key, mac_check, mac_tag, sym_open, sym_seal, Ciphertext, KeyRole, MacTag, Sealer,
    SymmetricKey, AEAD_TAG_LEN, KEY_LEN, MAC_LEN, NONCE_LEN,
};

pub(crate) use symmetric::sha256;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("authentication failed")]
    AuthenticationFailure,
    #[error("decryption failed")]
    DecryptionFailure,
    #[error("nonce counter exhausted")]
    NonceExhausted,
    #[error("key role {0:?} not permitted for this operation")]
    WrongKeyRole(KeyRole),
    #[error("message of {len} bytes exceeds the {max}-byte limit")]
    MessageTooLong { len: usize, max: usize },
    #[error("invalid pseudonym base")]
    InvalidBase,
    #[error("signer is not a member of the group")]
    NotAMember,
    #[error("signature did not verify")]
    UnverifiedInput,
    #[error("invalid length for {0}")]
    InvalidLength(&'static str),
    #[error("invalid encoding: {0}")]
    InvalidEncoding(&'static str),
}
