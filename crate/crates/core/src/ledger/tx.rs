use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::crypto::{hash, hash_parts, Address, Attestation, Digest256, Secret32, Txid};
use crate::passport::{RestrictionLevel, TrustEdge};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SecurityType {
    CommonShares,
    PreferredShares,
    TrustUnits,
    FundUnits,
    PartnershipUnits,
}

/// The descriptive part of an issuer annotation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IssuerDescriptor {
    pub company_name: String,
    pub company_domicile: String,
    pub security_name: String,
    pub security_type: SecurityType,
    pub restriction_level: RestrictionLevel,
}

/// Annotation that turns blank units into equity. The authorization covers
/// the descriptor, the issuer address and the blank outpoints consumed by the
/// authorizing transaction, so it cannot be replayed onto other units.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IssuerInfo {
    pub descriptor: IssuerDescriptor,
    pub issuer_address: Address,
    pub authorization: Attestation,
}

#[derive(Serialize)]
struct AuthorizationClaim<'a> {
    domain: &'static str,
    descriptor: &'a IssuerDescriptor,
    issuer_address: &'a Address,
    authorized: Vec<OutPoint>,
}

impl IssuerInfo {
    pub fn authorization_message(
        descriptor: &IssuerDescriptor,
        issuer_address: &Address,
        blank_outpoints: &[OutPoint],
    ) -> Vec<u8> {
        let mut authorized = blank_outpoints.to_vec();
        authorized.sort();
        canonical::to_vec(&AuthorizationClaim {
            domain: "eqb-authorize",
            descriptor,
            issuer_address,
            authorized,
        })
    }

    pub fn authorizes(&self, blank_outpoints: &[OutPoint]) -> bool {
        let msg = Self::authorization_message(&self.descriptor, &self.issuer_address, blank_outpoints);
        self.authorization.verifies_for(&self.issuer_address, &msg)
    }

    pub fn issuance(&self) -> IssuanceKey {
        IssuanceKey {
            issuer: self.issuer_address,
            security_name: self.descriptor.security_name.clone(),
        }
    }

    pub fn restriction_level(&self) -> RestrictionLevel {
        self.descriptor.restriction_level
    }
}

/// An issuance as seen by investors: one issuer, one security name. Repeated
/// authorizations add lots to the same issuance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IssuanceKey {
    pub issuer: Address,
    pub security_name: String,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: Txid,
    pub vout: u32,
}

impl OutPoint {
    pub fn new(txid: Txid, vout: u32) -> Self {
        OutPoint { txid, vout }
    }
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid, self.vout)
    }
}

impl fmt::Debug for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", &self.txid.to_hex()[..8], self.vout)
    }
}

impl FromStr for OutPoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (txid, vout) = s.split_once(':').ok_or("expected <txid>:<vout>")?;
        Ok(OutPoint {
            txid: txid.parse().map_err(|e| format!("{e}"))?,
            vout: vout.parse().map_err(|e| format!("bad vout: {e}"))?,
        })
    }
}

/// Spend condition on an output. Shared by the equity and payment chains.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LockScript {
    PayTo {
        address: Address,
    },
    /// Spendable by the preimage of `hash` plus `solo_claimant`'s signature,
    /// or by signatures of both `pair` members.
    HashlockOrBoth {
        hash: Digest256,
        solo_claimant: Address,
        pair: (Address, Address),
    },
}

impl LockScript {
    pub fn pay_to(address: Address) -> Self {
        LockScript::PayTo { address }
    }

    pub fn owner(&self) -> Option<Address> {
        match self {
            LockScript::PayTo { address } => Some(*address),
            LockScript::HashlockOrBoth { .. } => None,
        }
    }

    /// Every address that could ever move the output.
    pub fn parties(&self) -> Vec<Address> {
        match self {
            LockScript::PayTo { address } => vec![*address],
            LockScript::HashlockOrBoth { solo_claimant, pair, .. } => {
                let mut v = vec![*solo_claimant, pair.0, pair.1];
                v.sort();
                v.dedup();
                v
            }
        }
    }
}

/// Base (witness-free) output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOut {
    pub amount: u64,
    pub lock: LockScript,
}

/// An output together with its issuer annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquibitOutput {
    pub amount: u64,
    pub lock: LockScript,
    pub issuer_info: Option<IssuerInfo>,
}

impl EquibitOutput {
    pub fn is_blank(&self) -> bool {
        self.issuer_info.is_none()
    }

    pub fn owner(&self) -> Option<Address> {
        self.lock.owner()
    }
}

/// The part of a transaction committed to by its txid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxBase {
    pub inputs: Vec<OutPoint>,
    pub outputs: Vec<TxOut>,
    pub fee: u64,
    /// Not valid in a block whose timestamp is earlier than this.
    pub lock_time: u64,
    /// Height marker, present only on coinbase transactions.
    pub coinbase: Option<u64>,
}

impl TxBase {
    pub fn txid(&self) -> Txid {
        canonical::digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SpendProof {
    Key { signer: Attestation },
    Preimage { preimage: Secret32, signer: Attestation },
    Both { first: Attestation, second: Attestation },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    /// One entry per output.
    pub issuer_info: Vec<Option<IssuerInfo>>,
    /// One entry per input.
    pub spends: Vec<SpendProof>,
    /// Trust evidence for restricted transfers.
    pub passports: Vec<TrustEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub base: TxBase,
    pub witness: Witness,
}

impl Transaction {
    /// Unsigned transaction with no annotations on its outputs.
    pub fn unsigned(base: TxBase) -> Self {
        let witness = Witness {
            issuer_info: vec![None; base.outputs.len()],
            spends: Vec::new(),
            passports: Vec::new(),
        };
        Transaction { base, witness }
    }

    pub fn txid(&self) -> Txid {
        self.base.txid()
    }

    /// Commits to base and witness together.
    pub fn wtxid(&self) -> Digest256 {
        hash_parts(&[&canonical::to_vec(&self.base), &canonical::to_vec(&self.witness)])
    }

    /// Message every spend signature covers: the txid plus the issuer
    /// annotations, so a relay cannot move annotations between outputs.
    pub fn sighash(&self) -> Digest256 {
        Self::sighash_parts(&self.txid(), &self.witness.issuer_info)
    }

    pub fn sighash_parts(txid: &Txid, issuer_info: &[Option<IssuerInfo>]) -> Digest256 {
        hash_parts(&[b"eqb-sighash", &txid.0, &canonical::to_vec(issuer_info)])
    }

    pub fn is_coinbase(&self) -> bool {
        self.base.coinbase.is_some()
    }

    pub fn output(&self, vout: usize) -> Option<EquibitOutput> {
        let out = self.base.outputs.get(vout)?;
        Some(EquibitOutput {
            amount: out.amount,
            lock: out.lock.clone(),
            issuer_info: self.witness.issuer_info.get(vout).cloned().flatten(),
        })
    }

    pub fn outputs(&self) -> impl Iterator<Item = (u32, EquibitOutput)> + '_ {
        (0..self.base.outputs.len()).map(|i| (i as u32, self.output(i).expect("index in range")))
    }

    pub fn coinbase(height: u64, miner: Address, amount: u64) -> Self {
        Transaction::unsigned(TxBase {
            inputs: Vec::new(),
            outputs: vec![TxOut {
                amount,
                lock: LockScript::pay_to(miner),
            }],
            fee: 0,
            lock_time: 0,
            coinbase: Some(height),
        })
    }

    /// Preimage revealed by a hashlock spend, if any input carries one.
    pub fn revealed_preimage(&self) -> Option<Secret32> {
        self.witness.spends.iter().find_map(|s| match s {
            SpendProof::Preimage { preimage, .. } => Some(*preimage),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest256,
    pub timestamp: u64,
    pub base_merkle_root: Digest256,
    pub full_merkle_root: Digest256,
}

impl BlockHeader {
    pub fn hash(&self) -> Digest256 {
        canonical::digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub coinbase: Option<Transaction>,
    pub transactions: Vec<Transaction>,
}

impl Block {
    /// Coinbase first, then the ordered transactions.
    pub fn all_transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.coinbase.iter().chain(self.transactions.iter())
    }

    pub fn hash(&self) -> Digest256 {
        self.header.hash()
    }
}

/// Merkle root with the last node duplicated on odd levels; the empty tree
/// has the zero root.
pub fn merkle_root(leaves: &[Digest256]) -> Digest256 {
    if leaves.is_empty() {
        return Digest256::ZERO;
    }
    let mut level: Vec<Digest256> = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                let mut buf = [0u8; 64];
                buf[..32].copy_from_slice(&pair[0].0);
                buf[32..].copy_from_slice(&right.0);
                hash(&buf)
            })
            .collect();
    }
    level[0]
}

pub fn base_merkle_root<'a>(txs: impl Iterator<Item = &'a Transaction>) -> Digest256 {
    merkle_root(&txs.map(Transaction::txid).collect::<Vec<_>>())
}

pub fn full_merkle_root<'a>(txs: impl Iterator<Item = &'a Transaction>) -> Digest256 {
    merkle_root(&txs.map(Transaction::wtxid).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keypair_from_seed;

    fn sample_tx() -> Transaction {
        let kp = keypair_from_seed(&[1; 32]);
        let mut tx = Transaction::unsigned(TxBase {
            inputs: vec![OutPoint::new(hash(b"prev"), 0)],
            outputs: vec![TxOut {
                amount: 10,
                lock: LockScript::pay_to(kp.address),
            }],
            fee: 0,
            lock_time: 0,
            coinbase: None,
        });
        let sig = kp.attest(&tx.sighash().0);
        tx.witness.spends.push(SpendProof::Key { signer: sig });
        tx
    }

    #[test]
    fn witness_does_not_affect_txid() {
        let tx = sample_tx();
        let other = keypair_from_seed(&[2; 32]);
        let mut mutated = tx.clone();
        mutated.witness.spends = vec![SpendProof::Key {
            signer: other.attest(b"junk"),
        }];
        assert_eq!(tx.txid(), mutated.txid());
        assert_ne!(tx.wtxid(), mutated.wtxid());
    }

    #[test]
    fn merkle_root_shapes() {
        let a = hash(b"a");
        let b = hash(b"b");
        let c = hash(b"c");
        assert_eq!(merkle_root(&[]), Digest256::ZERO);
        assert_eq!(merkle_root(&[a]), a);
        let ab = {
            let mut buf = [0u8; 64];
            buf[..32].copy_from_slice(&a.0);
            buf[32..].copy_from_slice(&b.0);
            hash(&buf)
        };
        assert_eq!(merkle_root(&[a, b]), ab);
        assert_ne!(merkle_root(&[a, b, c]), merkle_root(&[a, b]));
        assert_ne!(merkle_root(&[a, b]), merkle_root(&[b, a]));
    }

    #[test]
    fn outpoint_parse() {
        let op = OutPoint::new(hash(b"x"), 3);
        assert_eq!(op.to_string().parse::<OutPoint>().unwrap(), op);
        assert!("nope".parse::<OutPoint>().is_err());
    }

    #[test]
    fn script_parties() {
        let a = Address(hash(b"a"));
        let b = Address(hash(b"b"));
        let lock = LockScript::HashlockOrBoth {
            hash: hash(b"x"),
            solo_claimant: a,
            pair: (a, b),
        };
        assert_eq!(lock.parties().len(), 2);
        assert_eq!(lock.owner(), None);
    }
}
