use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::poll::Poll;
use super::GovernanceError;
use super::PaymentAddressRecord;
use crate::canonical;
use crate::crypto::{Address, Attestation, Digest256, KeyPair};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "scope", content = "target")]
pub enum ProxyScope {
    General,
    SpecificIssuer(Address),
    SpecificPoll(String),
}

/// Rank of a ballot's caster relative to the investor it speaks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Authority {
    GeneralProxy = 1,
    IssuerProxy = 2,
    PollProxy = 3,
    Investor = 4,
}

impl ProxyScope {
    pub fn applies_to(&self, poll: &Poll) -> bool {
        match self {
            ProxyScope::General => true,
            ProxyScope::SpecificIssuer(issuer) => poll.issuer_address() == Some(*issuer),
            ProxyScope::SpecificPoll(guid) => *guid == poll.guid,
        }
    }

    pub fn authority(&self) -> Authority {
        match self {
            ProxyScope::General => Authority::GeneralProxy,
            ProxyScope::SpecificIssuer(_) => Authority::IssuerProxy,
            ProxyScope::SpecificPoll(_) => Authority::PollProxy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProxyDesignation {
    pub grantor: Address,
    pub proxy: Address,
    pub scope: ProxyScope,
    pub designated_at: u64,
    pub revoked: bool,
    pub attestation: Attestation,
}

#[derive(Serialize)]
struct ProxyClaim<'a> {
    domain: &'static str,
    proxy: &'a Address,
    scope: &'a ProxyScope,
    designated_at: u64,
    revoked: bool,
}

impl ProxyDesignation {
    fn claim(proxy: &Address, scope: &ProxyScope, designated_at: u64, revoked: bool) -> Vec<u8> {
        canonical::to_vec(&ProxyClaim {
            domain: "eqb-proxy",
            proxy,
            scope,
            designated_at,
            revoked,
        })
    }

    pub fn new(grantor: &KeyPair, proxy: Address, scope: ProxyScope, now: u64) -> Self {
        Self::build(grantor, proxy, scope, now, false)
    }

    pub fn revocation(grantor: &KeyPair, proxy: Address, scope: ProxyScope, now: u64) -> Self {
        Self::build(grantor, proxy, scope, now, true)
    }

    fn build(grantor: &KeyPair, proxy: Address, scope: ProxyScope, now: u64, revoked: bool) -> Self {
        ProxyDesignation {
            attestation: grantor.attest(&Self::claim(&proxy, &scope, now, revoked)),
            grantor: grantor.address,
            proxy,
            scope,
            designated_at: now,
            revoked,
        }
    }

    pub fn signature_valid(&self) -> bool {
        self.attestation.verifies_for(
            &self.grantor,
            &Self::claim(&self.proxy, &self.scope, self.designated_at, self.revoked),
        )
    }

    pub fn id(&self) -> Digest256 {
        canonical::digest(self)
    }
}

/// Payment addresses and proxy designations, latest record per slot.
/// Revoked records stay as tombstones so an older record cannot come back.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    pub payment: BTreeMap<(Address, String), PaymentAddressRecord>,
    pub proxies: BTreeMap<(Address, Address, ProxyScope), ProxyDesignation>,
}

impl Registry {
    /// False when the record is forged or older than what is held.
    pub fn apply_payment(&mut self, record: PaymentAddressRecord) -> bool {
        if !record.signature_valid() {
            return false;
        }
        let slot = (record.owner, record.currency.clone());
        match self.payment.get(&slot) {
            Some(held) if (held.designated_at, held.id()) >= (record.designated_at, record.id()) => false,
            _ => {
                self.payment.insert(slot, record);
                true
            }
        }
    }

    pub fn apply_proxy(&mut self, designation: ProxyDesignation) -> bool {
        if !designation.signature_valid() {
            return false;
        }
        let slot = (designation.grantor, designation.proxy, designation.scope.clone());
        match self.proxies.get(&slot) {
            Some(held) if (held.designated_at, held.id()) >= (designation.designated_at, designation.id()) => false,
            _ => {
                self.proxies.insert(slot, designation);
                true
            }
        }
    }

    /// Owner → payment address for `currency`, revoked records left out.
    pub fn payment_addresses(&self, currency: &str) -> BTreeMap<Address, Address> {
        self.payment
            .values()
            .filter(|r| r.currency == currency && !r.revoked)
            .map(|r| (r.owner, r.payment_address))
            .collect()
    }

    pub fn live_proxies(&self) -> Vec<ProxyDesignation> {
        self.proxies.values().filter(|d| !d.revoked).cloned().collect()
    }
}

/// Holders plus every proxy that should see a copy of `poll`.
pub fn poll_recipients(
    poll: &Poll,
    holders: &BTreeMap<Address, u64>,
    designations: &[ProxyDesignation],
) -> BTreeSet<Address> {
    let mut out: BTreeSet<Address> = holders.iter().filter(|(_, &u)| u > 0).map(|(a, _)| *a).collect();
    for d in designations {
        if !d.revoked && holders.get(&d.grantor).is_some_and(|&u| u > 0) && d.scope.applies_to(poll) {
            out.insert(d.proxy);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    #[serde(rename = "pollGUID")]
    pub poll_guid: String,
    pub voter: Address,
    pub caster: Address,
    /// One answer index per question.
    pub answers: Vec<u32>,
    pub cast_at: u64,
    pub signature: Attestation,
}

#[derive(Serialize)]
struct BallotClaim<'a> {
    domain: &'static str,
    poll_guid: &'a str,
    voter: &'a Address,
    answers: &'a [u32],
    cast_at: u64,
}

impl Ballot {
    fn claim(poll_guid: &str, voter: &Address, answers: &[u32], cast_at: u64) -> Vec<u8> {
        canonical::to_vec(&BallotClaim {
            domain: "eqb-ballot",
            poll_guid,
            voter,
            answers,
            cast_at,
        })
    }

    pub fn new(caster: &KeyPair, poll_guid: &str, voter: Address, answers: Vec<u32>, cast_at: u64) -> Self {
        Ballot {
            signature: caster.attest(&Self::claim(poll_guid, &voter, &answers, cast_at)),
            poll_guid: poll_guid.to_string(),
            voter,
            caster: caster.address,
            answers,
            cast_at,
        }
    }

    pub fn signature_valid(&self) -> bool {
        self.signature.verifies_for(
            &self.caster,
            &Self::claim(&self.poll_guid, &self.voter, &self.answers, self.cast_at),
        )
    }

    pub fn id(&self) -> Digest256 {
        canonical::digest(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BallotStatus {
    Counted,
    /// A higher-authority ballot counted for the same investor.
    Outranked,
    /// The same caster sent a later ballot.
    Superseded,
    NotDesignated,
    BadSignature,
    WrongPoll,
    CastAfterClose,
    InvalidSelection,
    NotAHolder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub ballot: Digest256,
    pub voter: Address,
    pub caster: Address,
    pub authority: Option<Authority>,
    pub status: BallotStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountedVote {
    pub ballot: Digest256,
    pub caster: Address,
    pub authority: Authority,
    pub weight: u64,
    pub answers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tabulation {
    /// Units per answer, per question.
    pub totals: Vec<Vec<u64>>,
    pub counted: BTreeMap<Address, CountedVote>,
    /// Every ballot received, in input order.
    pub audit: Vec<AuditEntry>,
}

impl Tabulation {
    pub fn counted_weight(&self) -> u64 {
        self.counted.values().map(|c| c.weight).sum()
    }

    /// The poll with each answer's `value` set to its tally.
    pub fn tallied(&self, poll: &Poll) -> Poll {
        let mut out = poll.clone();
        for (q, question) in out.questions.iter_mut().enumerate() {
            for (a, answer) in question.answers.iter_mut().enumerate() {
                answer.value = self.totals[q][a].to_string();
            }
        }
        out
    }
}

/// Highest-authority live designation letting `caster` speak for `voter`
/// at `at`, with its designation time.
fn proxy_authority(
    poll: &Poll,
    voter: &Address,
    caster: &Address,
    designations: &[ProxyDesignation],
    at: u64,
) -> Option<(Authority, u64)> {
    designations
        .iter()
        .filter(|d| {
            !d.revoked
                && d.grantor == *voter
                && d.proxy == *caster
                && d.designated_at <= at
                && d.scope.applies_to(poll)
                && d.signature_valid()
        })
        .map(|d| (d.scope.authority(), d.designated_at))
        .max()
}

/// cast_at, ballot id, audit index, authority, designated_at
type Latest = (u64, Digest256, usize, Authority, u64);

pub fn tabulate(
    poll: &Poll,
    ballots: &[Ballot],
    designations: &[ProxyDesignation],
    snapshot: &BTreeMap<Address, u64>,
    now: u64,
) -> Result<Tabulation, GovernanceError> {
    let close_at = poll.close_at();
    if now < close_at {
        return Err(GovernanceError::PollStillOpen { close_at, now });
    }

    let mut audit: Vec<AuditEntry> = Vec::with_capacity(ballots.len());
    let mut latest: BTreeMap<(Address, Address), Latest> = BTreeMap::new();

    for ballot in ballots {
        let id = ballot.id();
        let idx = audit.len();
        let mut entry = AuditEntry {
            ballot: id,
            voter: ballot.voter,
            caster: ballot.caster,
            authority: None,
            status: BallotStatus::Counted,
        };
        let rank = if ballot.caster == ballot.voter {
            Some((Authority::Investor, u64::MAX))
        } else {
            proxy_authority(poll, &ballot.voter, &ballot.caster, designations, ballot.cast_at)
        };
        entry.authority = rank.map(|r| r.0);
        let valid_selection = ballot.answers.len() == poll.questions.len()
            && ballot
                .answers
                .iter()
                .zip(&poll.questions)
                .all(|(&a, q)| (a as usize) < q.answers.len());
        entry.status = if !ballot.signature_valid() {
            BallotStatus::BadSignature
        } else if ballot.poll_guid != poll.guid {
            BallotStatus::WrongPoll
        } else if ballot.cast_at > close_at {
            BallotStatus::CastAfterClose
        } else if !valid_selection {
            BallotStatus::InvalidSelection
        } else if snapshot.get(&ballot.voter).copied().unwrap_or(0) == 0 {
            BallotStatus::NotAHolder
        } else if rank.is_none() {
            BallotStatus::NotDesignated
        } else {
            BallotStatus::Counted
        };
        if entry.status == BallotStatus::Counted {
            let (authority, designated_at) = rank.expect("checked");
            let key = (ballot.voter, ballot.caster);
            let candidate = (ballot.cast_at, id, idx, authority, designated_at);
            match latest.get(&key) {
                Some(held) if (held.0, held.1) >= (candidate.0, candidate.1) => {
                    entry.status = BallotStatus::Superseded;
                }
                Some(held) => {
                    audit[held.2].status = BallotStatus::Superseded;
                    latest.insert(key, candidate);
                }
                None => {
                    latest.insert(key, candidate);
                }
            }
        }
        audit.push(entry);
    }

    // Per voter: highest authority, then latest designation, then lowest caster.
    let mut best: BTreeMap<Address, (Authority, u64, Reverse<Address>, usize)> = BTreeMap::new();
    for ((voter, caster), (_, _, idx, authority, designated_at)) in &latest {
        let candidate = (*authority, *designated_at, Reverse(*caster), *idx);
        match best.get(voter) {
            Some(held) if (held.0, held.1, held.2) >= (candidate.0, candidate.1, candidate.2) => {
                audit[*idx].status = BallotStatus::Outranked;
            }
            Some(held) => {
                audit[held.3].status = BallotStatus::Outranked;
                best.insert(*voter, candidate);
            }
            None => {
                best.insert(*voter, candidate);
            }
        }
    }

    let mut totals: Vec<Vec<u64>> = poll.questions.iter().map(|q| vec![0; q.answers.len()]).collect();
    let mut counted = BTreeMap::new();
    for (voter, (authority, _, Reverse(caster), idx)) in best {
        let ballot = &ballots[idx];
        let weight = snapshot[&voter];
        for (q, &a) in ballot.answers.iter().enumerate() {
            totals[q][a as usize] += weight;
        }
        counted.insert(
            voter,
            CountedVote {
                ballot: audit[idx].ballot,
                caster,
                authority,
                weight,
                answers: ballot.answers.clone(),
            },
        );
    }
    Ok(Tabulation { totals, counted, audit })
}
