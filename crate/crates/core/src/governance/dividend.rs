use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GovernanceError;
use crate::canonical;
use crate::crypto::{Address, Attestation, Digest256, KeyPair};
use crate::ledger::{holdings, known_issuances, ChainState, IssuanceKey};

/// Where an equity holder wants to be paid in one currency. A later record
/// for the same owner and currency replaces the earlier one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PaymentAddressRecord {
    pub owner: Address,
    pub currency: String,
    pub payment_address: Address,
    pub designated_at: u64,
    /// A revoked record withdraws the owner's address for this currency.
    pub revoked: bool,
    pub attestation: Attestation,
}

#[derive(Serialize)]
struct PaymentClaim<'a> {
    domain: &'static str,
    currency: &'a str,
    payment_address: &'a Address,
    designated_at: u64,
    revoked: bool,
}

impl PaymentAddressRecord {
    fn claim(currency: &str, payment_address: &Address, designated_at: u64, revoked: bool) -> Vec<u8> {
        canonical::to_vec(&PaymentClaim {
            domain: "eqb-payment-address",
            currency,
            payment_address,
            designated_at,
            revoked,
        })
    }

    pub fn new(owner: &KeyPair, currency: &str, payment_address: Address, now: u64) -> Self {
        Self::build(owner, currency, payment_address, now, false)
    }

    pub fn revocation(owner: &KeyPair, currency: &str, payment_address: Address, now: u64) -> Self {
        Self::build(owner, currency, payment_address, now, true)
    }

    fn build(owner: &KeyPair, currency: &str, payment_address: Address, now: u64, revoked: bool) -> Self {
        PaymentAddressRecord {
            owner: owner.address,
            currency: currency.to_string(),
            payment_address,
            designated_at: now,
            revoked,
            attestation: owner.attest(&Self::claim(currency, &payment_address, now, revoked)),
        }
    }

    pub fn signature_valid(&self) -> bool {
        self.attestation.verifies_for(
            &self.owner,
            &Self::claim(&self.currency, &self.payment_address, self.designated_at, self.revoked),
        )
    }

    pub fn id(&self) -> Digest256 {
        canonical::digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionPlan {
    pub issuer: Address,
    pub security_name: String,
    pub record_time: u64,
    pub gross: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    /// (holder, payment address, amount), by holder address.
    pub paid: Vec<(Address, Address, u64)>,
    /// Holders with no payment address on record; the issuer keeps these.
    pub withheld: Vec<(Address, u64)>,
}

impl Allocation {
    pub fn paid_total(&self) -> u64 {
        self.paid.iter().map(|p| p.2).sum()
    }

    pub fn withheld_total(&self) -> u64 {
        self.withheld.iter().map(|w| w.1).sum()
    }

    pub fn amount_for(&self, holder: &Address) -> Option<u64> {
        self.paid
            .iter()
            .find(|p| p.0 == *holder)
            .map(|p| p.2)
            .or_else(|| self.withheld.iter().find(|w| w.0 == *holder).map(|w| w.1))
    }
}

/// Holders of one issuance as of the last block at or before `record_time`.
/// Only authentic, key-held units count; the issuer's own units are included.
pub fn snapshot_holders(
    chain: &ChainState,
    issuer: &Address,
    security_name: &str,
    record_time: u64,
) -> Result<BTreeMap<Address, u64>, GovernanceError> {
    let key = IssuanceKey {
        issuer: *issuer,
        security_name: security_name.to_string(),
    };
    if !known_issuances(chain).contains_key(&key) {
        return Err(GovernanceError::UnknownIssuance(key));
    }
    if record_time > chain.tip_time() {
        return Err(GovernanceError::RecordAfterTip {
            record_time,
            tip_time: chain.tip_time(),
        });
    }
    let height = chain.height_at_time(record_time).unwrap_or(0);
    Ok(holdings(chain, &chain.utxo_at_height(height), &key))
}

/// Integer shares of `gross` proportional to `units`, by largest remainder.
/// Equal remainders go to the lower address first.
pub fn largest_remainder(gross: u64, units: &BTreeMap<Address, u64>) -> BTreeMap<Address, u64> {
    let total: u128 = units.values().map(|&u| u as u128).sum();
    if total == 0 {
        return units.keys().map(|a| (*a, 0)).collect();
    }
    let mut shares: BTreeMap<Address, u64> = BTreeMap::new();
    let mut remainders: Vec<(u128, Address)> = Vec::with_capacity(units.len());
    let mut assigned = 0u64;
    for (addr, &u) in units {
        let scaled = gross as u128 * u as u128;
        let floor = (scaled / total) as u64;
        shares.insert(*addr, floor);
        remainders.push((scaled % total, *addr));
        assigned += floor;
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, addr) in remainders.into_iter().take((gross - assigned) as usize) {
        *shares.get_mut(&addr).expect("present") += 1;
    }
    shares
}

/// `payment_addresses` maps holder → live payment address in the plan's
/// currency.
pub fn allocate_dividend(
    plan: &DistributionPlan,
    snapshot: &BTreeMap<Address, u64>,
    payment_addresses: &BTreeMap<Address, Address>,
) -> Result<Allocation, GovernanceError> {
    if plan.gross == 0 {
        return Err(GovernanceError::ZeroGross);
    }
    if snapshot.values().all(|&u| u == 0) {
        return Err(GovernanceError::EmptySnapshot);
    }
    let mut allocation = Allocation::default();
    for (holder, amount) in largest_remainder(plan.gross, snapshot) {
        match payment_addresses.get(&holder) {
            Some(pay_to) => allocation.paid.push((holder, *pay_to, amount)),
            None => allocation.withheld.push((holder, amount)),
        }
    }
    Ok(allocation)
}
