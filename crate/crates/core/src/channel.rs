//! Point-to-point sealed channel over a pre-shared key.
//!
//! Each side seals with its own nonce prefix, and the receiver insists on a
//! strictly increasing counter from the peer's prefix, so replays and
//! reflections fail.

use thiserror::Error;

use crate::crypto::{sym_open, Ciphertext, CryptoError, Sealer, SymmetricKey};
use crate::wire::MsgType;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("authentication failed")]
    AuthenticationFailure,
    #[error("replayed or reordered message (counter {got}, last {last})")]
    Replay { got: u64, last: u64 },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Nonce prefix used by the controller on every α channel.
pub const CONTROLLER_PREFIX: u32 = 0;
/// Nonce prefix used by the enclave end of an α channel.
pub const ENCLAVE_PREFIX: u32 = 1;

#[derive(Clone, Debug)]
pub struct SecureChannel {
    sealer: Sealer,
    peer_prefix: u32,
    last_rx: Option<u64>,
}

fn aad(tag: MsgType, sender: u32) -> Vec<u8> {
    let mut a = b"trusdn/channel/v1".to_vec();
    a.push(tag as u8);
    a.extend_from_slice(&sender.to_be_bytes());
    a
}

impl SecureChannel {
    pub fn new(key: SymmetricKey, own_prefix: u32, peer_prefix: u32) -> Self {
        Self {
            sealer: Sealer::new(key, own_prefix),
            peer_prefix,
            last_rx: None,
        }
    }

    pub fn controller_end(key: SymmetricKey) -> Self {
        Self::new(key, CONTROLLER_PREFIX, ENCLAVE_PREFIX)
    }

    pub fn enclave_end(key: SymmetricKey) -> Self {
        Self::new(key, ENCLAVE_PREFIX, CONTROLLER_PREFIX)
    }

    pub fn key(&self) -> &SymmetricKey {
        self.sealer.key()
    }

    /// Seals `plaintext` for a message of type `tag`; returns ciphertext bytes.
    pub fn seal(&mut self, tag: MsgType, plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let own = self.sealer.prefix();
        Ok(self.sealer.seal(plaintext, &aad(tag, own))?.to_bytes())
    }

    pub fn open(&mut self, tag: MsgType, bytes: &[u8]) -> Result<Vec<u8>, ChannelError> {
        let c = Ciphertext::from_bytes(bytes).map_err(|_| ChannelError::AuthenticationFailure)?;
        if c.nonce_prefix() != self.peer_prefix {
            return Err(ChannelError::AuthenticationFailure);
        }
        let plain = sym_open(self.sealer.key(), &c, &aad(tag, self.peer_prefix))
            .map_err(|_| ChannelError::AuthenticationFailure)?;
        let got = c.nonce_counter();
        if let Some(last) = self.last_rx {
            if got <= last {
                return Err(ChannelError::Replay { got, last });
            }
        }
        self.last_rx = Some(got);
        Ok(plain)
    }
}
