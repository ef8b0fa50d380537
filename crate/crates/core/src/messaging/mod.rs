//! Off-chain messages: direct, group and public envelopes with a
//! proof-of-work stamp, delivery confirmations, retention and rebroadcast.

mod envelope;
mod mailbox;

use thiserror::Error;

use crate::crypto::CryptoError;

pub use envelope::{compose, mine, validate_pow, Body, Confirmation, Envelope, Kind, PowTarget, PublicSubtype};
pub use mailbox::{
    rebroadcast_at, retained_until, retention_class, Delivery, DeliveryResult, Mailbox, Outgoing, RebroadcastState,
    RetentionClass, Stored, SyncView, FIRST_REBROADCAST, PRIVATE_RETENTION,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessagingError {
    #[error("public messages may only carry bid/ask, payment address, proxy or revocation payloads")]
    ForbiddenPublicPayload,
    #[error("bad recipient list: {0}")]
    BadRecipients(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("no peers to sync from")]
    NoPeers,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}
