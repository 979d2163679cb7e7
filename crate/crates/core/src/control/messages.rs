//! Flow identifiers, forwarding rules and the controller's key-carrying
//! messages (enrollment, PSK grants).

use rand::{CryptoRng, RngCore};

use crate::crypto::{
    hybrid_unwrap, hybrid_wrap, mac_check, mac_tag, sign, sym_open, verify, Ciphertext,
    CryptoError, KeyRole, MacTag, PublicKey, Sealer, SecretKey, Signature, SymmetricKey, KEY_LEN,
};
use crate::net::{CtId, NodeId, SwitchId};
use crate::wire::{Reader, WireError, Writer};

/// Directional 5-tuple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub src: CtId,
    pub dst: CtId,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl FlowKey {
    pub fn reversed(&self) -> Self {
        Self {
            src: self.dst,
            dst: self.src,
            src_port: self.dst_port,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }

    /// Direction-independent representative: the smaller of the key and its
    /// reverse.
    pub fn canonical(&self) -> Self {
        std::cmp::min(*self, self.reversed())
    }

    pub fn write(&self, w: &mut Writer) {
        w.u32(self.src.0)
            .u32(self.dst.0)
            .u16(self.src_port)
            .u16(self.dst_port)
            .u8(self.proto);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Self {
            src: CtId(r.u32()?),
            dst: CtId(r.u32()?),
            src_port: r.u16()?,
            dst_port: r.u16()?,
            proto: r.u8()?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }
}

/// Rule match with optional wildcards (`None` matches anything).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct FlowMatch {
    pub src: Option<CtId>,
    pub dst: Option<CtId>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub proto: Option<u8>,
}

impl FlowMatch {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn exact(k: &FlowKey) -> Self {
        Self {
            src: Some(k.src),
            dst: Some(k.dst),
            src_port: Some(k.src_port),
            dst_port: Some(k.dst_port),
            proto: Some(k.proto),
        }
    }

    pub fn matches(&self, k: &FlowKey) -> bool {
        self.src.is_none_or(|v| v == k.src)
            && self.dst.is_none_or(|v| v == k.dst)
            && self.src_port.is_none_or(|v| v == k.src_port)
            && self.dst_port.is_none_or(|v| v == k.dst_port)
            && self.proto.is_none_or(|v| v == k.proto)
    }

    pub fn is_exact(&self) -> bool {
        self.src.is_some()
            && self.dst.is_some()
            && self.src_port.is_some()
            && self.dst_port.is_some()
            && self.proto.is_some()
    }

    fn write(&self, w: &mut Writer) {
        let mask = (self.src.is_some() as u8)
            | (self.dst.is_some() as u8) << 1
            | (self.src_port.is_some() as u8) << 2
            | (self.dst_port.is_some() as u8) << 3
            | (self.proto.is_some() as u8) << 4;
        w.u8(mask)
            .u32(self.src.map_or(0, |c| c.0))
            .u32(self.dst.map_or(0, |c| c.0))
            .u16(self.src_port.unwrap_or(0))
            .u16(self.dst_port.unwrap_or(0))
            .u8(self.proto.unwrap_or(0));
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let mask = r.u8()?;
        let (src, dst, sp, dp, pr) = (r.u32()?, r.u32()?, r.u16()?, r.u16()?, r.u8()?);
        let bit = |i: u8| mask & (1 << i) != 0;
        Ok(Self {
            src: bit(0).then_some(CtId(src)),
            dst: bit(1).then_some(CtId(dst)),
            src_port: bit(2).then_some(sp),
            dst_port: bit(3).then_some(dp),
            proto: bit(4).then_some(pr),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    ForwardLocal(u16),
    ForwardTunnel(SwitchId),
    Drop,
    SendToController,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowRule {
    pub id: u64,
    pub matcher: FlowMatch,
    pub action: Action,
    pub priority: u16,
}

impl FlowRule {
    pub fn write(&self, w: &mut Writer) {
        w.u64(self.id).u16(self.priority);
        self.matcher.write(w);
        match self.action {
            Action::ForwardLocal(p) => w.u8(1).u32(p as u32),
            Action::ForwardTunnel(s) => w.u8(2).u32(s.0),
            Action::Drop => w.u8(3).u32(0),
            Action::SendToController => w.u8(4).u32(0),
        };
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let id = r.u64()?;
        let priority = r.u16()?;
        let matcher = FlowMatch::read(r)?;
        let kind = r.u8()?;
        let arg = r.u32()?;
        let action = match kind {
            1 => Action::ForwardLocal(u16::try_from(arg).map_err(|_| WireError::Invalid("port"))?),
            2 => Action::ForwardTunnel(SwitchId(arg)),
            3 => Action::Drop,
            4 => Action::SendToController,
            _ => return Err(WireError::Invalid("rule action")),
        };
        Ok(Self {
            id,
            matcher,
            action,
            priority,
        })
    }
}

pub fn encode_rules(rules: &[FlowRule]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(rules.len() as u32);
    for r in rules {
        r.write(&mut w);
    }
    w.finish()
}

pub fn decode_rules(bytes: &[u8]) -> Result<Vec<FlowRule>, WireError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()? as usize;
    if n > 1024 {
        return Err(WireError::Invalid("rule count"));
    }
    let rules = (0..n).map(|_| FlowRule::read(&mut r)).collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(rules)
}

/// Keys recovered by an enrolled enclave.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnrollmentKeys {
    pub k_alpha: SymmetricKey,
    pub domain: Option<DomainKeyMaterial>,
    pub controller_pk: PublicKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainKeyMaterial {
    pub k_beta: SymmetricKey,
    pub epoch: u64,
}

impl DomainKeyMaterial {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new().raw(self.k_beta.expose()).u64(self.epoch).finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let k_beta = SymmetricKey::from_bytes(KeyRole::DomainBeta, r.array()?);
        let epoch = r.u64()?;
        r.finish()?;
        Ok(Self { k_beta, epoch })
    }
}

fn enroll_aad(node: NodeId) -> Vec<u8> {
    [b"trusdn/enrollment/v1".as_slice(), &node.code()].concat()
}

/// `Enc(K', (K_alpha, K_beta, epoch)) || MAC(K'', body) || Enc_pk(EK_pk, (K', K''))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnrollmentMessage {
    pub body: Ciphertext,
    pub tag: MacTag,
    pub wrapped: Vec<u8>,
}

/// Ephemeral keys of one enrollment message, exposed only so callers can
/// audit them. They are not retained by the controller.
pub struct EphemeralKeys {
    pub k_enc: SymmetricKey,
    pub k_mac: SymmetricKey,
}

impl EnrollmentMessage {
    /// Message for the enclave that will act as `node`; the identity is bound
    /// as associated data.
    pub fn build<R: RngCore + CryptoRng>(
        ek_pk: &PublicKey,
        node: NodeId,
        keys: &EnrollmentKeys,
        rng: &mut R,
    ) -> Result<(Self, EphemeralKeys), CryptoError> {
        let k_enc = SymmetricKey::generate(KeyRole::EphemeralEnc, rng);
        let k_mac = SymmetricKey::generate(KeyRole::EphemeralMac, rng);
        let mut w = Writer::new();
        w.raw(keys.k_alpha.expose());
        match &keys.domain {
            Some(d) => w.u8(1).raw(d.k_beta.expose()).u64(d.epoch),
            None => w.u8(0),
        };
        w.raw(&keys.controller_pk.0);
        let body = Sealer::new(k_enc.clone(), 0).seal(&w.finish(), &enroll_aad(node))?;
        let tag = mac_tag(&k_mac, &body.to_bytes())?;
        let mut pair = k_enc.expose().to_vec();
        pair.extend_from_slice(k_mac.expose());
        let wrapped = hybrid_wrap(ek_pk, &pair, rng)?;
        Ok((Self { body, tag, wrapped }, EphemeralKeys { k_enc, k_mac }))
    }

    /// Receiver side: unwrap `K', K''`, check the MAC, then decrypt.
    pub fn open(&self, ek_sk: &SecretKey, node: NodeId) -> Result<EnrollmentKeys, CryptoError> {
        let pair = hybrid_unwrap(ek_sk, &self.wrapped)?;
        if pair.len() != 2 * KEY_LEN {
            return Err(CryptoError::InvalidLength("wrapped ephemeral keys"));
        }
        let k_enc = SymmetricKey::from_slice(KeyRole::EphemeralEnc, &pair[..KEY_LEN])?;
        let k_mac = SymmetricKey::from_slice(KeyRole::EphemeralMac, &pair[KEY_LEN..])?;
        if !mac_check(&k_mac, &self.body.to_bytes(), &self.tag.0) {
            return Err(CryptoError::AuthenticationFailure);
        }
        let plain = sym_open(&k_enc, &self.body, &enroll_aad(node))?;
        let bad = |_| CryptoError::InvalidEncoding("enrollment body");
        let mut r = Reader::new(&plain);
        let k_alpha = SymmetricKey::from_bytes(KeyRole::SessionAlpha, r.array().map_err(bad)?);
        let domain = match r.u8().map_err(bad)? {
            1 => Some(DomainKeyMaterial {
                k_beta: SymmetricKey::from_bytes(KeyRole::DomainBeta, r.array().map_err(bad)?),
                epoch: r.u64().map_err(bad)?,
            }),
            0 => None,
            _ => return Err(CryptoError::InvalidEncoding("enrollment body")),
        };
        let controller_pk = PublicKey(r.array().map_err(bad)?);
        r.finish().map_err(bad)?;
        Ok(EnrollmentKeys {
            k_alpha,
            domain,
            controller_pk,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new()
            .bytes(&self.body.to_bytes())
            .raw(&self.tag.0)
            .bytes(&self.wrapped)
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let body =
            Ciphertext::from_bytes(r.bytes()?).map_err(|_| WireError::Invalid("enrollment body"))?;
        let tag = MacTag(r.array()?);
        let wrapped = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Self { body, tag, wrapped })
    }
}

/// `SK_gamma` for one flow, wrapped for both endpoints and signed by the
/// controller.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PskGrant {
    /// Canonical flow key.
    pub flow: FlowKey,
    pub grant_epoch: u64,
    pub recipients: (CtId, CtId),
    pub wrapped_i: Vec<u8>,
    pub wrapped_j: Vec<u8>,
    pub nc_signature: Signature,
}

impl PskGrant {
    fn signed_body(
        flow: &FlowKey,
        grant_epoch: u64,
        recipients: (CtId, CtId),
        wrapped_i: &[u8],
        wrapped_j: &[u8],
    ) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"trusdn/psk-grant/v1");
        flow.write(&mut w);
        w.u64(grant_epoch)
            .u32(recipients.0 .0)
            .u32(recipients.1 .0)
            .bytes(wrapped_i)
            .bytes(wrapped_j)
            .finish()
    }

    pub fn build<R: RngCore + CryptoRng>(
        flow: FlowKey,
        grant_epoch: u64,
        psk: &SymmetricKey,
        recipients: [(CtId, &PublicKey); 2],
        nc_sk: &SecretKey,
        rng: &mut R,
    ) -> Result<Self, CryptoError> {
        let wrapped_i = hybrid_wrap(recipients[0].1, psk.expose(), rng)?;
        let wrapped_j = hybrid_wrap(recipients[1].1, psk.expose(), rng)?;
        let ids = (recipients[0].0, recipients[1].0);
        let body = Self::signed_body(&flow, grant_epoch, ids, &wrapped_i, &wrapped_j);
        Ok(Self {
            flow,
            grant_epoch,
            recipients: ids,
            wrapped_i,
            wrapped_j,
            nc_signature: sign(nc_sk, &body),
        })
    }

    pub fn verify(&self, nc_pk: &PublicKey) -> bool {
        let body = Self::signed_body(
            &self.flow,
            self.grant_epoch,
            self.recipients,
            &self.wrapped_i,
            &self.wrapped_j,
        );
        verify(nc_pk, &body, &self.nc_signature)
    }

    /// The wrapping addressed to `ct`, if any.
    pub fn wrapping_for(&self, ct: CtId) -> Option<&[u8]> {
        if self.recipients.0 == ct {
            Some(&self.wrapped_i)
        } else if self.recipients.1 == ct {
            Some(&self.wrapped_j)
        } else {
            None
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.flow.write(&mut w);
        w.u64(self.grant_epoch)
            .u32(self.recipients.0 .0)
            .u32(self.recipients.1 .0)
            .bytes(&self.wrapped_i)
            .bytes(&self.wrapped_j)
            .bytes(&self.nc_signature.0)
            .finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let flow = FlowKey::read(&mut r)?;
        let grant_epoch = r.u64()?;
        let recipients = (CtId(r.u32()?), CtId(r.u32()?));
        let wrapped_i = r.bytes()?.to_vec();
        let wrapped_j = r.bytes()?.to_vec();
        let nc_signature = Signature(r.bytes()?.to_vec());
        r.finish()?;
        Ok(Self {
            flow,
            grant_epoch,
            recipients,
            wrapped_i,
            wrapped_j,
            nc_signature,
        })
    }
}
