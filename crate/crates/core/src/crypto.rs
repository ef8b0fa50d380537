//! Hashing, signatures, deterministic keys and sealed payloads.
//!
//! SHA-256 backs [`hash`]; Ed25519 backs signatures. Sealed boxes use an
//! ephemeral X25519 exchange against the recipient's signing key mapped onto
//! the Montgomery curve, with a SHA-256 keystream and tag.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use curve25519_dalek::montgomery::MontgomeryPoint;
use curve25519_dalek::scalar::Scalar;
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("malformed public key")]
    MalformedPublicKey,
    #[error("invalid hex: {0}")]
    InvalidHex(String),
    #[error("sealed box is not addressed to this key")]
    NotRecipient,
    #[error("sealed box failed authentication")]
    Tampered,
}

macro_rules! hex_bytes {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), hex::encode(self.0))
            }
        }

        impl FromStr for $name {
            type Err = CryptoError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let raw = hex::decode(s).map_err(|e| CryptoError::InvalidHex(e.to_string()))?;
                let bytes: [u8; $len] = raw
                    .try_into()
                    .map_err(|_| CryptoError::InvalidHex(format!("expected {} bytes", $len)))?;
                Ok(Self(bytes))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(self.0))
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_bytes!(
    /// A 256-bit digest. Renders as 64 lowercase hex characters.
    Digest256,
    32
);
hex_bytes!(PublicKey, 32);
hex_bytes!(Signature, 64);
hex_bytes!(
    /// A 32-byte secret: private key seeds and swap preimages.
    Secret32,
    32
);

impl Digest256 {
    pub const ZERO: Digest256 = Digest256([0; 32]);

    /// Number of leading zero bits, reading the digest as a big-endian integer.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }
}

pub type Txid = Digest256;

/// Identity on both chains and on the message layer: `hash(public_key)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub Digest256);

impl Address {
    pub fn from_public_key(pk: &PublicKey) -> Address {
        Address(hash(pk.as_bytes()))
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }

    pub fn short(&self) -> String {
        self.0.to_hex()[..8].to_string()
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self.short())
    }
}

impl FromStr for Address {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Address(s.parse()?))
    }
}

pub fn hash(data: &[u8]) -> Digest256 {
    Digest256(Sha256::digest(data).into())
}

/// Hash of several byte strings, each prefixed with its length so that
/// boundaries are unambiguous.
pub fn hash_parts(parts: &[&[u8]]) -> Digest256 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part);
    }
    Digest256(hasher.finalize().into())
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    pub public_key: PublicKey,
    pub address: Address,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public_key)
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn private_key(&self) -> Secret32 {
        Secret32(self.signing.to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }

    pub fn attest(&self, message: &[u8]) -> Attestation {
        Attestation {
            public_key: self.public_key,
            signature: self.sign(message),
        }
    }
}

pub fn keypair_from_seed(seed: &[u8; 32]) -> KeyPair {
    let signing = SigningKey::from_bytes(seed);
    let public_key = PublicKey(signing.verifying_key().to_bytes());
    KeyPair {
        address: Address::from_public_key(&public_key),
        public_key,
        signing,
    }
}

pub fn sign(private_key: &Secret32, message: &[u8]) -> Signature {
    Signature(SigningKey::from_bytes(&private_key.0).sign(message).to_bytes())
}

/// `Ok(false)` for a well-formed key that does not match; `Err` when the key
/// bytes are not a valid curve point.
pub fn verify(
    public_key: &PublicKey,
    message: &[u8],
    signature: &Signature,
) -> Result<bool, CryptoError> {
    let key = VerifyingKey::from_bytes(&public_key.0).map_err(|_| CryptoError::MalformedPublicKey)?;
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    Ok(key.verify(message, &sig).is_ok())
}

/// A signature bundled with the key that made it. On the wire this is a single
/// hex string of the 32-byte key followed by the 64-byte signature.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Attestation {
    pub public_key: PublicKey,
    pub signature: Signature,
}

impl Attestation {
    pub fn signer(&self) -> Address {
        Address::from_public_key(&self.public_key)
    }

    pub fn verify(&self, message: &[u8]) -> Result<bool, CryptoError> {
        verify(&self.public_key, message, &self.signature)
    }

    /// True only when the signature verifies and was made by `address`.
    pub fn verifies_for(&self, address: &Address, message: &[u8]) -> bool {
        self.signer() == *address && self.verify(message).unwrap_or(false)
    }
}

impl fmt::Debug for Attestation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Attestation(by {})", self.signer().short())
    }
}

impl Serialize for Attestation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut raw = Vec::with_capacity(96);
        raw.extend_from_slice(&self.public_key.0);
        raw.extend_from_slice(&self.signature.0);
        s.serialize_str(&hex::encode(raw))
    }
}

impl<'de> Deserialize<'de> for Attestation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let raw = hex::decode(&s).map_err(serde::de::Error::custom)?;
        if raw.len() != 96 {
            return Err(serde::de::Error::custom("attestation must be 96 bytes"));
        }
        let mut public_key = [0u8; 32];
        let mut signature = [0u8; 64];
        public_key.copy_from_slice(&raw[..32]);
        signature.copy_from_slice(&raw[32..]);
        Ok(Attestation {
            public_key: PublicKey(public_key),
            signature: Signature(signature),
        })
    }
}

/// Address → public key bindings known to a participant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyDirectory {
    keys: BTreeMap<Address, PublicKey>,
}

impl KeyDirectory {
    pub fn insert(&mut self, key: PublicKey) -> Address {
        let address = Address::from_public_key(&key);
        self.keys.insert(address, key);
        address
    }

    pub fn get(&self, address: &Address) -> Option<&PublicKey> {
        self.keys.get(address)
    }
}

/// Payload readable only by the holder of the recipient's private key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedBox {
    pub recipient: Address,
    pub ephemeral: PublicKey,
    #[serde(with = "hex::serde")]
    pub ciphertext: Vec<u8>,
    pub tag: Digest256,
}

fn keystream_xor(shared: &[u8; 32], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    for (counter, chunk) in data.chunks(32).enumerate() {
        let block = hash_parts(&[b"eqb-seal-stream", shared, &(counter as u64).to_be_bytes()]);
        out.extend(chunk.iter().zip(block.0.iter()).map(|(a, b)| a ^ b));
    }
    out
}

fn seal_tag(shared: &[u8; 32], ciphertext: &[u8]) -> Digest256 {
    hash_parts(&[b"eqb-seal-tag", shared, ciphertext])
}

/// `entropy` seeds the ephemeral key; callers pass something unique per
/// message so that simulations stay reproducible.
pub fn seal(recipient: &PublicKey, plaintext: &[u8], entropy: &[u8]) -> Result<SealedBox, CryptoError> {
    let key = VerifyingKey::from_bytes(&recipient.0).map_err(|_| CryptoError::MalformedPublicKey)?;
    let ephemeral_secret = Scalar::from_bytes_mod_order(
        hash_parts(&[b"eqb-seal-ephemeral", entropy, &recipient.0, plaintext]).0,
    );
    let ephemeral = MontgomeryPoint::mul_base(&ephemeral_secret);
    let shared = (key.to_montgomery() * ephemeral_secret).to_bytes();
    let ciphertext = keystream_xor(&shared, plaintext);
    Ok(SealedBox {
        recipient: Address::from_public_key(recipient),
        ephemeral: PublicKey(ephemeral.to_bytes()),
        tag: seal_tag(&shared, &ciphertext),
        ciphertext,
    })
}

pub fn open(keys: &KeyPair, sealed: &SealedBox) -> Result<Vec<u8>, CryptoError> {
    if sealed.recipient != keys.address {
        return Err(CryptoError::NotRecipient);
    }
    let shared = (MontgomeryPoint(sealed.ephemeral.0) * keys.signing.to_scalar()).to_bytes();
    if seal_tag(&shared, &sealed.ciphertext) != sealed.tag {
        return Err(CryptoError::Tampered);
    }
    Ok(keystream_xor(&shared, &sealed.ciphertext))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(n: u32) -> [u8; 32] {
        hash(&n.to_be_bytes()).0
    }

    #[test]
    fn empty_hash_is_32_bytes_and_renders_as_64_hex() {
        let d = hash(b"");
        assert_eq!(d.as_bytes().len(), 32);
        let rendered = d.to_string();
        assert_eq!(rendered.len(), 64);
        assert!(rendered.chars().all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c)));
        assert_eq!(rendered.parse::<Digest256>().unwrap(), d);
    }

    #[test]
    fn keypair_is_deterministic() {
        let a = keypair_from_seed(&seed(1));
        let b = keypair_from_seed(&seed(1));
        assert_eq!(a.address, b.address);
        assert_eq!(a.public_key, b.public_key);
        assert_eq!(a.address, Address::from_public_key(&a.public_key));
    }

    #[test]
    fn sign_verify_round_trip() {
        let kp = keypair_from_seed(&seed(2));
        let sig = sign(&kp.private_key(), b"poll");
        assert!(verify(&kp.public_key, b"poll", &sig).unwrap());
        assert_eq!(kp.sign(b"poll"), sig);
    }

    #[test]
    fn other_key_does_not_verify() {
        let a = keypair_from_seed(&seed(3));
        let b = keypair_from_seed(&seed(4));
        let sig = a.sign(b"poll");
        assert!(!verify(&b.public_key, b"poll", &sig).unwrap());
    }

    #[test]
    fn every_single_byte_mutation_fails() {
        let kp = keypair_from_seed(&seed(5));
        let message = hash(b"payload").0;
        let sig = kp.sign(&message);
        for i in 0..32 {
            let mut mutated = message;
            mutated[i] ^= 0x01;
            assert!(!verify(&kp.public_key, &mutated, &sig).unwrap(), "byte {i}");
        }
    }

    #[test]
    fn malformed_key_is_an_error_not_false() {
        // Scan for 32-byte strings that do not decompress to a curve point.
        let kp = keypair_from_seed(&seed(6));
        let sig = kp.sign(b"m");
        let bad = (0u8..=255)
            .map(|b| PublicKey([b; 32]))
            .find(|pk| VerifyingKey::from_bytes(&pk.0).is_err())
            .expect("some repeated-byte key is off-curve");
        assert_eq!(verify(&bad, b"m", &sig), Err(CryptoError::MalformedPublicKey));
    }

    #[test]
    fn attestation_wire_form_round_trips() {
        let kp = keypair_from_seed(&seed(7));
        let att = kp.attest(b"hello");
        let json = serde_json::to_string(&att).unwrap();
        assert_eq!(json.len(), 96 * 2 + 2);
        let back: Attestation = serde_json::from_str(&json).unwrap();
        assert_eq!(back, att);
        assert!(back.verifies_for(&kp.address, b"hello"));
        assert!(!back.verifies_for(&kp.address, b"hellO"));
    }

    #[test]
    fn sealed_box_opens_only_for_recipient() {
        let alice = keypair_from_seed(&seed(8));
        let bob = keypair_from_seed(&seed(9));
        let sealed = seal(&alice.public_key, b"private terms", b"n1").unwrap();
        assert_eq!(open(&alice, &sealed).unwrap(), b"private terms");
        assert_eq!(open(&bob, &sealed), Err(CryptoError::NotRecipient));

        // Bob relabels the box as his own: still unreadable.
        let mut stolen = sealed.clone();
        stolen.recipient = bob.address;
        assert_eq!(open(&bob, &stolen), Err(CryptoError::Tampered));

        let mut flipped = sealed;
        flipped.ciphertext[0] ^= 1;
        assert_eq!(open(&alice, &flipped), Err(CryptoError::Tampered));
    }

    #[test]
    fn leading_zero_bits() {
        let mut d = Digest256([0xff; 32]);
        assert_eq!(d.leading_zero_bits(), 0);
        d.0[0] = 0;
        d.0[1] = 0x10;
        assert_eq!(d.leading_zero_bits(), 11);
        assert_eq!(Digest256::ZERO.leading_zero_bits(), 256);
    }
}
