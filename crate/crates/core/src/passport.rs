//! Trading passports: signed, expiring trust edges and the transfer
//! restriction rules evaluated over them.
//!
//! Trust is directional and never followed past two hops. The issuer's own
//! node is never consulted when proving a path; evidence comes from the
//! buyer's passports plus the passports held by the buyer's trusters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::crypto::{Address, Attestation, Digest256, KeyPair};

pub const DAY: u64 = 86_400;
pub const DEFAULT_PASSPORT_LIFETIME: u64 = 180 * DAY;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PassportError {
    #[error("expiry {expires_at} is not after {now}")]
    PastExpiry { expires_at: u64, now: u64 },
    #[error("edge was not signed by {0:?}")]
    NotYourEdge(Address),
    #[error("restriction level must be 0..=3, got {0}")]
    BadLevel(u8),
}

/// Transfer restriction carried by an issuance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RestrictionLevel(u8);

impl RestrictionLevel {
    pub const FREE: RestrictionLevel = RestrictionLevel(0);
    pub const TWO_DEGREES: RestrictionLevel = RestrictionLevel(1);
    pub const ONE_DEGREE: RestrictionLevel = RestrictionLevel(2);
    pub const ISSUER_ONLY: RestrictionLevel = RestrictionLevel(3);

    pub fn new(level: u8) -> Result<Self, PassportError> {
        if level <= 3 {
            Ok(RestrictionLevel(level))
        } else {
            Err(PassportError::BadLevel(level))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for RestrictionLevel {
    type Error = PassportError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        RestrictionLevel::new(v)
    }
}

impl From<RestrictionLevel> for u8 {
    fn from(v: RestrictionLevel) -> u8 {
        v.0
    }
}

impl fmt::Display for RestrictionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// A passport: `truster` vouches for `trustee` between `issued_at` and
/// `expires_at`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrustEdge {
    pub truster: Address,
    pub trustee: Address,
    pub issued_at: u64,
    pub expires_at: u64,
    pub attestation: Attestation,
}

#[derive(Serialize)]
struct EdgeClaim<'a> {
    domain: &'static str,
    trustee: &'a Address,
    issued_at: u64,
    expires_at: u64,
}

impl TrustEdge {
    fn claim_bytes(trustee: &Address, issued_at: u64, expires_at: u64) -> Vec<u8> {
        canonical::to_vec(&EdgeClaim {
            domain: "eqb-passport",
            trustee,
            issued_at,
            expires_at,
        })
    }

    pub fn id(&self) -> Digest256 {
        canonical::digest(self)
    }

    pub fn signature_valid(&self) -> bool {
        self.expires_at > self.issued_at
            && self.attestation.verifies_for(
                &self.truster,
                &Self::claim_bytes(&self.trustee, self.issued_at, self.expires_at),
            )
    }

    pub fn in_validity_window(&self, now: u64) -> bool {
        self.issued_at <= now && now < self.expires_at
    }
}

pub fn issue_passport(
    truster: &KeyPair,
    trustee: Address,
    now: u64,
    expires_at: u64,
) -> Result<TrustEdge, PassportError> {
    if expires_at <= now {
        return Err(PassportError::PastExpiry { expires_at, now });
    }
    Ok(TrustEdge {
        truster: truster.address,
        trustee,
        issued_at: now,
        expires_at,
        attestation: truster.attest(&TrustEdge::claim_bytes(&trustee, now, expires_at)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Revocation {
    pub edge_id: Digest256,
    pub truster: Address,
    pub revoked_at: u64,
    pub attestation: Attestation,
}

#[derive(Serialize)]
struct RevocationClaim<'a> {
    domain: &'static str,
    edge_id: &'a Digest256,
    revoked_at: u64,
}

impl Revocation {
    fn claim_bytes(edge_id: &Digest256, revoked_at: u64) -> Vec<u8> {
        canonical::to_vec(&RevocationClaim {
            domain: "eqb-revocation",
            edge_id,
            revoked_at,
        })
    }

    pub fn signature_valid(&self) -> bool {
        self.attestation
            .verifies_for(&self.truster, &Self::claim_bytes(&self.edge_id, self.revoked_at))
    }
}

pub fn revoke_passport(truster: &KeyPair, edge: &TrustEdge, now: u64) -> Result<Revocation, PassportError> {
    if edge.truster != truster.address {
        return Err(PassportError::NotYourEdge(truster.address));
    }
    let edge_id = edge.id();
    Ok(Revocation {
        attestation: truster.attest(&Revocation::claim_bytes(&edge_id, now)),
        edge_id,
        truster: truster.address,
        revoked_at: now,
    })
}

/// Passports a node holds or has been shown, plus every revocation it knows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassportDirectory {
    pub held: BTreeMap<Digest256, TrustEdge>,
    pub revocations: BTreeMap<Digest256, Revocation>,
    /// Latest `revoked_at` seen; rejoining nodes ask for everything after it.
    pub watermark: u64,
}

impl PassportDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false for forged or duplicate edges.
    pub fn store(&mut self, edge: TrustEdge) -> bool {
        if !edge.signature_valid() {
            return false;
        }
        self.held.insert(edge.id(), edge).is_none()
    }

    pub fn record_revocation(&mut self, revocation: Revocation) -> bool {
        if !revocation.signature_valid() {
            return false;
        }
        if let Some(edge) = self.held.get(&revocation.edge_id) {
            if edge.truster != revocation.truster {
                return false;
            }
        }
        self.watermark = self.watermark.max(revocation.revoked_at);
        self.revocations.insert(revocation.edge_id, revocation).is_none()
    }

    pub fn is_revoked(&self, edge: &TrustEdge, now: u64) -> bool {
        self.revocations
            .get(&edge.id())
            .is_some_and(|r| r.truster == edge.truster && r.revoked_at <= now)
    }

    pub fn is_live(&self, edge: &TrustEdge, now: u64) -> bool {
        edge.signature_valid() && edge.in_validity_window(now) && !self.is_revoked(edge, now)
    }

    /// Passports naming `trustee`, in id order.
    pub fn passports_of(&self, trustee: &Address) -> Vec<TrustEdge> {
        self.held.values().filter(|e| e.trustee == *trustee).cloned().collect()
    }

    pub fn revocations_after(&self, watermark: u64) -> Vec<Revocation> {
        self.revocations
            .values()
            .filter(|r| r.revoked_at > watermark)
            .cloned()
            .collect()
    }
}

/// Live trust edges at one instant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustView {
    edges: BTreeSet<(Address, Address)>,
}

impl TrustView {
    pub fn build<'a>(
        edges: impl IntoIterator<Item = &'a TrustEdge>,
        directory: &PassportDirectory,
        now: u64,
    ) -> Self {
        TrustView {
            edges: edges
                .into_iter()
                .filter(|e| directory.is_live(e, now))
                .map(|e| (e.truster, e.trustee))
                .collect(),
        }
    }

    pub fn trusts(&self, truster: &Address, trustee: &Address) -> bool {
        self.edges.contains(&(*truster, *trustee))
    }

    /// Every X with live edges issuer → X → buyer.
    pub fn intermediaries(&self, issuer: &Address, buyer: &Address) -> BTreeSet<Address> {
        self.edges
            .iter()
            .filter(|(truster, trustee)| trustee == buyer && truster != issuer && truster != buyer)
            .map(|(truster, _)| *truster)
            .filter(|x| self.trusts(issuer, x))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Degrees {
    One,
    Two,
    Unreachable,
}

/// Result of the passport query protocol: the separation found and the
/// passports that prove it, ready to embed in a transaction witness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustEvidence {
    pub degrees: Degrees,
    pub intermediaries: BTreeSet<Address>,
    pub edges: Vec<TrustEdge>,
}

/// `presented` are the buyer's passports; `query` asks a truster's node for
/// the passports it holds. `query` is never called for the issuer.
pub fn degrees_of_trust<F>(
    issuer: &Address,
    buyer: &Address,
    presented: &[TrustEdge],
    mut query: F,
    directory: &PassportDirectory,
    now: u64,
) -> TrustEvidence
where
    F: FnMut(&Address) -> Vec<TrustEdge>,
{
    let live: Vec<&TrustEdge> = presented
        .iter()
        .filter(|e| e.trustee == *buyer && directory.is_live(e, now))
        .collect();

    if let Some(direct) = live.iter().find(|e| e.truster == *issuer) {
        return TrustEvidence {
            degrees: Degrees::One,
            intermediaries: BTreeSet::new(),
            edges: vec![(*direct).clone()],
        };
    }

    let trusters: BTreeSet<Address> = live
        .iter()
        .map(|e| e.truster)
        .filter(|t| t != issuer && t != buyer)
        .collect();

    let mut edges = Vec::new();
    let mut intermediaries = BTreeSet::new();
    for truster in trusters {
        let upstream = query(&truster)
            .into_iter()
            .find(|e| e.truster == *issuer && e.trustee == truster && directory.is_live(e, now));
        if let Some(up) = upstream {
            let down = live
                .iter()
                .find(|e| e.truster == truster)
                .expect("truster came from live edges");
            edges.push(up);
            edges.push((*down).clone());
            intermediaries.insert(truster);
        }
    }

    TrustEvidence {
        degrees: if intermediaries.is_empty() {
            Degrees::Unreachable
        } else {
            Degrees::Two
        },
        intermediaries,
        edges,
    }
}

/// Why a restricted transfer was allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferBasis {
    Unrestricted,
    SelfTransfer,
    ReturnToIssuer,
    DirectTrust,
    ViaAccreditor(Address),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum TransferDenial {
    #[error("issuer-only units may only return to the issuer")]
    IssuerOnly,
    #[error("buyer holds no live passport from the issuer")]
    NoDirectTrust,
    #[error("no live trust path of two or fewer degrees")]
    NoTrustPath,
    #[error("the seller is the only accreditor between issuer and buyer")]
    SellerIsOnlyAccreditor,
}

/// Applies the level rules using only `edges` as evidence, filtered for
/// liveness through `directory`'s revocations.
pub fn validate_transfer(
    issuer: &Address,
    level: RestrictionLevel,
    seller: &Address,
    buyer: &Address,
    edges: &[TrustEdge],
    directory: &PassportDirectory,
    now: u64,
) -> Result<TransferBasis, TransferDenial> {
    if buyer == seller {
        return Ok(TransferBasis::SelfTransfer);
    }
    if buyer == issuer {
        return Ok(TransferBasis::ReturnToIssuer);
    }
    match level.get() {
        0 => return Ok(TransferBasis::Unrestricted),
        3 => return Err(TransferDenial::IssuerOnly),
        _ => {}
    }
    let view = TrustView::build(edges, directory, now);
    if view.trusts(issuer, buyer) {
        return Ok(TransferBasis::DirectTrust);
    }
    if level == RestrictionLevel::ONE_DEGREE {
        return Err(TransferDenial::NoDirectTrust);
    }
    let intermediaries = view.intermediaries(issuer, buyer);
    match intermediaries.iter().find(|x| *x != seller) {
        Some(x) => Ok(TransferBasis::ViaAccreditor(*x)),
        None if intermediaries.is_empty() => Err(TransferDenial::NoTrustPath),
        None => Err(TransferDenial::SellerIsOnlyAccreditor),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, keypair_from_seed};

    fn kp(name: &str) -> KeyPair {
        keypair_from_seed(&hash(name.as_bytes()).0)
    }

    #[test]
    fn issue_and_verify() {
        let issuer = kp("issuer");
        let buyer = kp("buyer");
        let edge = issue_passport(&issuer, buyer.address, 0, 90 * DAY).unwrap();
        assert!(edge.signature_valid());
        let mut dir = PassportDirectory::new();
        assert!(dir.store(edge.clone()));
        assert!(!dir.store(edge));
        assert_eq!(dir.passports_of(&buyer.address).len(), 1);
    }

    #[test]
    fn past_expiry_rejected() {
        let issuer = kp("issuer");
        assert_eq!(
            issue_passport(&issuer, kp("b").address, 100, 50),
            Err(PassportError::PastExpiry { expires_at: 50, now: 100 })
        );
    }

    #[test]
    fn accreditor_issues_fifty() {
        let acc = kp("acc");
        let mut dirs: Vec<PassportDirectory> = Vec::new();
        for i in 0..50 {
            let investor = kp(&format!("investor{i}"));
            let mut dir = PassportDirectory::new();
            dir.store(issue_passport(&acc, investor.address, 0, DEFAULT_PASSPORT_LIFETIME).unwrap());
            dirs.push(dir);
        }
        assert!(dirs.iter().all(|d| d.held.len() == 1));
        let trustees: BTreeSet<_> = dirs
            .iter()
            .flat_map(|d| d.held.values().map(|e| e.trustee))
            .collect();
        assert_eq!(trustees.len(), 50);
    }

    #[test]
    fn only_truster_may_revoke() {
        let issuer = kp("issuer");
        let other = kp("other");
        let edge = issue_passport(&issuer, kp("b").address, 0, 10).unwrap();
        assert_eq!(
            revoke_passport(&other, &edge, 1),
            Err(PassportError::NotYourEdge(other.address))
        );
        let rev = revoke_passport(&issuer, &edge, 1).unwrap();
        assert!(rev.signature_valid());
    }

    #[test]
    fn forged_revocation_ignored() {
        let issuer = kp("issuer");
        let mallory = kp("mallory");
        let edge = issue_passport(&issuer, kp("b").address, 0, 10).unwrap();
        let mut dir = PassportDirectory::new();
        dir.store(edge.clone());
        // Mallory signs a revocation for an edge she did not issue.
        let fake = Revocation {
            edge_id: edge.id(),
            truster: mallory.address,
            revoked_at: 1,
            attestation: mallory.attest(&Revocation::claim_bytes(&edge.id(), 1)),
        };
        assert!(!dir.record_revocation(fake));
        assert!(dir.is_live(&edge, 2));
    }

    fn setup() -> (KeyPair, KeyPair, KeyPair, KeyPair) {
        (kp("issuer"), kp("accreditor"), kp("buyer"), kp("seller"))
    }

    #[test]
    fn direct_edge_is_one_degree() {
        let (issuer, _, buyer, _) = setup();
        let edge = issue_passport(&issuer, buyer.address, 0, 100).unwrap();
        let ev = degrees_of_trust(
            &issuer.address,
            &buyer.address,
            &[edge],
            |_| panic!("no hop needed"),
            &PassportDirectory::new(),
            5,
        );
        assert_eq!(ev.degrees, Degrees::One);
    }

    #[test]
    fn accreditor_path_is_two_degrees_without_contacting_issuer() {
        let (issuer, acc, buyer, _) = setup();
        let up = issue_passport(&issuer, acc.address, 0, 100).unwrap();
        let down = issue_passport(&acc, buyer.address, 0, 100).unwrap();
        let mut contacted = Vec::new();
        let ev = degrees_of_trust(
            &issuer.address,
            &buyer.address,
            &[down],
            |who| {
                contacted.push(*who);
                vec![up.clone()]
            },
            &PassportDirectory::new(),
            5,
        );
        assert_eq!(ev.degrees, Degrees::Two);
        assert_eq!(contacted, vec![acc.address]);
        assert_eq!(ev.edges.len(), 2);
    }

    #[test]
    fn expired_intermediate_edge_is_unreachable() {
        let (issuer, acc, buyer, _) = setup();
        let up = issue_passport(&issuer, acc.address, 0, 10).unwrap();
        let down = issue_passport(&acc, buyer.address, 0, 100).unwrap();
        let ev = degrees_of_trust(
            &issuer.address,
            &buyer.address,
            &[down],
            |_| vec![up.clone()],
            &PassportDirectory::new(),
            10,
        );
        assert_eq!(ev.degrees, Degrees::Unreachable);
    }

    #[test]
    fn level_rules() {
        let (issuer, acc, buyer, seller) = setup();
        let dir = PassportDirectory::new();
        let l = |n| RestrictionLevel::new(n).unwrap();
        let direct = issue_passport(&issuer, buyer.address, 0, 100).unwrap();
        let up = issue_passport(&issuer, acc.address, 0, 100).unwrap();
        let down = issue_passport(&acc, buyer.address, 0, 100).unwrap();
        let (i, s, b) = (issuer.address, seller.address, buyer.address);

        assert_eq!(validate_transfer(&i, l(0), &s, &b, &[], &dir, 1), Ok(TransferBasis::Unrestricted));
        assert_eq!(validate_transfer(&i, l(1), &s, &b, &[], &dir, 1), Err(TransferDenial::NoTrustPath));
        assert_eq!(
            validate_transfer(&i, l(1), &s, &b, &[up.clone(), down.clone()], &dir, 1),
            Ok(TransferBasis::ViaAccreditor(acc.address))
        );
        assert_eq!(
            validate_transfer(&i, l(2), &s, &b, &[up, down], &dir, 1),
            Err(TransferDenial::NoDirectTrust)
        );
        assert_eq!(
            validate_transfer(&i, l(2), &s, &b, std::slice::from_ref(&direct), &dir, 1),
            Ok(TransferBasis::DirectTrust)
        );
        assert_eq!(
            validate_transfer(&i, l(3), &s, &b, &[direct], &dir, 1),
            Err(TransferDenial::IssuerOnly)
        );
        assert_eq!(validate_transfer(&i, l(3), &s, &i, &[], &dir, 1), Ok(TransferBasis::ReturnToIssuer));
        assert_eq!(validate_transfer(&i, l(3), &s, &s, &[], &dir, 1), Ok(TransferBasis::SelfTransfer));
    }

    #[test]
    fn seller_cannot_be_the_accreditor() {
        let (issuer, acc, buyer, seller) = setup();
        let dir = PassportDirectory::new();
        let l1 = RestrictionLevel::TWO_DEGREES;
        let via_seller = vec![
            issue_passport(&issuer, seller.address, 0, 100).unwrap(),
            issue_passport(&seller, buyer.address, 0, 100).unwrap(),
        ];
        assert_eq!(
            validate_transfer(&issuer.address, l1, &seller.address, &buyer.address, &via_seller, &dir, 1),
            Err(TransferDenial::SellerIsOnlyAccreditor)
        );
        let mut both = via_seller;
        both.push(issue_passport(&issuer, acc.address, 0, 100).unwrap());
        both.push(issue_passport(&acc, buyer.address, 0, 100).unwrap());
        assert_eq!(
            validate_transfer(&issuer.address, l1, &seller.address, &buyer.address, &both, &dir, 1),
            Ok(TransferBasis::ViaAccreditor(acc.address))
        );
    }

    #[test]
    fn revoked_edge_is_dead_from_revocation_time() {
        let (issuer, _, buyer, seller) = setup();
        let edge = issue_passport(&issuer, buyer.address, 0, 100).unwrap();
        let mut dir = PassportDirectory::new();
        dir.record_revocation(revoke_passport(&issuer, &edge, 50).unwrap());
        let check = |now| {
            validate_transfer(
                &issuer.address,
                RestrictionLevel::ONE_DEGREE,
                &seller.address,
                &buyer.address,
                std::slice::from_ref(&edge),
                &dir,
                now,
            )
        };
        assert!(check(49).is_ok());
        assert_eq!(check(50), Err(TransferDenial::NoDirectTrust));
        assert_eq!(dir.watermark, 50);
    }

    #[test]
    fn level_out_of_range_rejected_on_parse() {
        assert!(serde_json::from_str::<RestrictionLevel>("4").is_err());
        assert_eq!(serde_json::from_str::<RestrictionLevel>("2").unwrap(), RestrictionLevel::ONE_DEGREE);
    }
}
