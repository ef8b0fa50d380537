//! Earnings distributions, payment-address and proxy registries, polls in
//! the `eqbPoll` JSON layout and authority-ordered tabulation.

mod dividend;
mod poll;
mod proxy;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::{Address, KeyDirectory, KeyPair};
use crate::ledger::IssuanceKey;
use crate::messaging::{compose, Body, Envelope, Kind, MessagingError, PowTarget};

pub use dividend::{
    allocate_dividend, largest_remainder, snapshot_holders, Allocation, DistributionPlan, PaymentAddressRecord,
};
pub use poll::{normalize_layout, parse_poll, Answer, Poll, Question, SAMPLE_POLL};
pub use proxy::{
    poll_recipients, tabulate, AuditEntry, Authority, Ballot, BallotStatus, CountedVote, ProxyDesignation, ProxyScope,
    Registry, Tabulation,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GovernanceError {
    #[error("malformed poll: {0}")]
    MalformedPoll(String),
    #[error("no authorization on chain for {0:?}")]
    UnknownIssuance(IssuanceKey),
    #[error("record time {record_time} is after the chain tip at {tip_time}")]
    RecordAfterTip { record_time: u64, tip_time: u64 },
    #[error("no holders to distribute to")]
    EmptySnapshot,
    #[error("gross amount must be positive")]
    ZeroGross,
    #[error("poll closes at {close_at}, now {now}")]
    PollStillOpen { close_at: u64, now: u64 },
    #[error("no public key known for {0:?}")]
    UnknownKey(Address),
    #[error(transparent)]
    Messaging(#[from] MessagingError),
}

/// One group message carrying `poll`, sealed separately for every holder and
/// routed proxy.
pub fn create_poll(
    issuer: &KeyPair,
    poll: &Poll,
    holders: &BTreeMap<Address, u64>,
    designations: &[ProxyDesignation],
    keys: &KeyDirectory,
    now: u64,
    target: PowTarget,
) -> Result<Envelope, GovernanceError> {
    poll.check_shape()?;
    if poll.close_at() <= now {
        return Err(GovernanceError::MalformedPoll("closeDate is not in the future".into()));
    }
    if poll.issuer_address() != Some(issuer.address) {
        return Err(GovernanceError::MalformedPoll("issuerID is not the sending issuer".into()));
    }
    let recipients = poll_recipients(poll, holders, designations);
    if recipients.is_empty() {
        return Err(GovernanceError::EmptySnapshot);
    }
    let public_keys = recipients
        .iter()
        .map(|a| keys.get(a).copied().ok_or(GovernanceError::UnknownKey(*a)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(compose(issuer, Kind::Group, &public_keys, &Body::Poll(poll.clone()), now, target)?)
}
