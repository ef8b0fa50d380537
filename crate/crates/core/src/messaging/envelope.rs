use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::MessagingError;
use crate::canonical;
use crate::crypto::{hash, hash_parts, open, seal, Address, Attestation, CryptoError, Digest256, KeyPair, PublicKey, SealedBox};
use crate::governance::{Ballot, PaymentAddressRecord, Poll, ProxyDesignation};
use crate::orderbook::{CounterOffer, Offer};
use crate::passport::{Revocation, TrustEdge};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    Direct,
    Group,
    Public,
}

/// The only payloads a public message may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PublicSubtype {
    BidAsk,
    PaymentAddress,
    ProxyDesignation,
    PassportRevocation,
}

/// Proof-of-work threshold: the stamp digest, read as a 256-bit integer,
/// must be below `2^bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowTarget {
    pub bits: u32,
}

impl PowTarget {
    pub const DEFAULT: PowTarget = PowTarget { bits: 244 };
    pub const ANY: PowTarget = PowTarget { bits: 256 };

    pub fn admits(&self, digest: &Digest256) -> bool {
        self.bits >= 256 || digest.leading_zero_bits() >= 256 - self.bits
    }
}

impl Default for PowTarget {
    fn default() -> Self {
        PowTarget::DEFAULT
    }
}

/// Message contents, before sealing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "body")]
pub enum Body {
    Note(String),
    Passport(TrustEdge),
    Counter(CounterOffer),
    Poll(Poll),
    Ballot(Ballot),
    Offer(Offer),
    PaymentAddress(PaymentAddressRecord),
    Proxy(ProxyDesignation),
    Revocation(Revocation),
}

impl Body {
    pub fn public_subtype(&self) -> Option<PublicSubtype> {
        match self {
            Body::Offer(_) => Some(PublicSubtype::BidAsk),
            Body::PaymentAddress(_) => Some(PublicSubtype::PaymentAddress),
            Body::Proxy(_) => Some(PublicSubtype::ProxyDesignation),
            Body::Revocation(_) => Some(PublicSubtype::PassportRevocation),
            _ => None,
        }
    }

    /// Signed bodies must come from their signer.
    pub fn authored_by(&self, sender: &Address) -> bool {
        match self {
            Body::Note(_) => true,
            Body::Passport(e) => e.truster == *sender && e.signature_valid(),
            Body::Counter(c) => c.responder == *sender && c.signature_valid(),
            Body::Poll(p) => p.issuer_address() == Some(*sender),
            Body::Ballot(b) => b.caster == *sender && b.signature_valid(),
            Body::Offer(o) => o.maker == *sender && o.signature_valid(),
            Body::PaymentAddress(r) => r.owner == *sender && r.signature_valid(),
            Body::Proxy(d) => d.grantor == *sender && d.signature_valid(),
            Body::Revocation(r) => r.truster == *sender && r.signature_valid(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Body> {
        serde_json::from_slice(bytes).ok()
    }
}

mod b64 {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        B64.decode(s).map_err(serde::de::Error::custom)
    }
}

/// An off-chain message. Field order here is the wire order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub kind: Kind,
    pub sender: Address,
    pub recipients: Vec<Address>,
    pub created_at: u64,
    pub subtype: Option<PublicSubtype>,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
    pub nonce: u64,
    pub signature: Attestation,
}

#[derive(Serialize)]
struct Content<'a> {
    kind: Kind,
    sender: &'a Address,
    recipients: &'a [Address],
    created_at: u64,
    subtype: Option<PublicSubtype>,
    #[serde(with = "b64")]
    payload: &'a [u8],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Sealed {
    boxes: Vec<SealedBox>,
}

fn content_bytes(
    kind: Kind,
    sender: &Address,
    recipients: &[Address],
    created_at: u64,
    subtype: Option<PublicSubtype>,
    payload: &[u8],
) -> Vec<u8> {
    serde_json::to_vec(&Content {
        kind,
        sender,
        recipients,
        created_at,
        subtype,
        payload,
    })
    .expect("content serializes")
}

fn stamp(message_id: &Digest256, nonce: u64) -> Digest256 {
    let mut buf = [0u8; 40];
    buf[..32].copy_from_slice(message_id.as_bytes());
    buf[32..].copy_from_slice(&nonce.to_be_bytes());
    hash(&buf)
}

/// First nonce from zero whose stamp meets `target`.
pub fn mine(message_id: &Digest256, target: PowTarget) -> u64 {
    (0u64..)
        .find(|&n| target.admits(&stamp(message_id, n)))
        .expect("a nonce exists")
}

impl Envelope {
    /// Hash of the wire form without nonce and signature.
    pub fn message_id(&self) -> Digest256 {
        hash(&content_bytes(
            self.kind,
            &self.sender,
            &self.recipients,
            self.created_at,
            self.subtype,
            &self.payload,
        ))
    }

    pub fn wire_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("envelope serializes")
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Envelope, MessagingError> {
        serde_json::from_slice(bytes).map_err(|e| MessagingError::Malformed(e.to_string()))
    }

    pub fn pow_digest(&self) -> Digest256 {
        stamp(&self.message_id(), self.nonce)
    }

    pub fn signature_valid(&self) -> bool {
        self.signature
            .verifies_for(&self.sender, self.message_id().as_bytes())
    }

    pub fn is_for(&self, address: &Address) -> bool {
        self.recipients.contains(address)
    }

    /// Cleartext body of a public message.
    pub fn public_body(&self) -> Option<Body> {
        if self.kind != Kind::Public {
            return None;
        }
        let body = Body::from_bytes(&self.payload)?;
        (body.public_subtype().is_some() && body.public_subtype() == self.subtype).then_some(body)
    }

    /// Opens the box addressed to `keys`.
    pub fn open_for(&self, keys: &KeyPair) -> Result<Body, MessagingError> {
        let sealed: Sealed =
            serde_json::from_slice(&self.payload).map_err(|e| MessagingError::Malformed(e.to_string()))?;
        let mine = sealed
            .boxes
            .iter()
            .find(|b| b.recipient == keys.address)
            .ok_or(MessagingError::Crypto(CryptoError::NotRecipient))?;
        let plain = open(keys, mine)?;
        Body::from_bytes(&plain).ok_or_else(|| MessagingError::Malformed("sealed body".into()))
    }
}

pub fn validate_pow(envelope: &Envelope, target: PowTarget) -> bool {
    target.admits(&envelope.pow_digest())
}

/// Builds, seals, stamps and signs a message. Direct takes exactly one
/// recipient, Group at least one, Public none.
pub fn compose(
    sender: &KeyPair,
    kind: Kind,
    recipients: &[PublicKey],
    body: &Body,
    now: u64,
    target: PowTarget,
) -> Result<Envelope, MessagingError> {
    let plain = body.to_bytes();
    let (subtype, payload) = match kind {
        Kind::Public => {
            if !recipients.is_empty() {
                return Err(MessagingError::BadRecipients("public messages have no recipients".into()));
            }
            let subtype = body.public_subtype().ok_or(MessagingError::ForbiddenPublicPayload)?;
            (Some(subtype), plain)
        }
        Kind::Direct | Kind::Group => {
            if kind == Kind::Direct && recipients.len() != 1 {
                return Err(MessagingError::BadRecipients("direct messages have one recipient".into()));
            }
            if recipients.is_empty() {
                return Err(MessagingError::BadRecipients("group has no members".into()));
            }
            let mut boxes = Vec::with_capacity(recipients.len());
            for pk in recipients {
                let entropy = hash_parts(&[b"eqb-envelope-seal", sender.address.0.as_bytes(), &now.to_be_bytes(), &plain]);
                boxes.push(seal(pk, &plain, entropy.as_bytes())?);
            }
            (None, canonical::to_vec(&Sealed { boxes }))
        }
    };
    let recipients: Vec<Address> = recipients.iter().map(Address::from_public_key).collect();
    let message_id = hash(&content_bytes(kind, &sender.address, &recipients, now, subtype, &payload));
    let nonce = mine(&message_id, target);
    Ok(Envelope {
        kind,
        sender: sender.address,
        recipients,
        created_at: now,
        subtype,
        payload,
        nonce,
        signature: sender.attest(message_id.as_bytes()),
    })
}

/// Acknowledgement that a private message was decrypted. Exempt from
/// proof-of-work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub message_id: Digest256,
    pub to: Address,
    pub confirmer: Address,
    pub attestation: Attestation,
}

impl Confirmation {
    fn claim(message_id: &Digest256) -> Digest256 {
        hash_parts(&[b"eqb-confirm", message_id.as_bytes()])
    }

    pub fn new(confirmer: &KeyPair, envelope: &Envelope) -> Self {
        let message_id = envelope.message_id();
        Confirmation {
            attestation: confirmer.attest(Self::claim(&message_id).as_bytes()),
            message_id,
            to: envelope.sender,
            confirmer: confirmer.address,
        }
    }

    pub fn signature_valid(&self) -> bool {
        self.attestation
            .verifies_for(&self.confirmer, Self::claim(&self.message_id).as_bytes())
    }
}
