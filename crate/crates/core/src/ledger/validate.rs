use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::chain::ChainKind;
use super::tx::{EquibitOutput, IssuerInfo, LockScript, OutPoint, SpendProof, Transaction};
use crate::crypto::{hash, Address};
use crate::passport::{validate_transfer, PassportDirectory, TransferDenial};

/// Machine-readable rejection. Every variant is an in-model outcome.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "reason")]
pub enum Reject {
    #[error("input {input} is not validly signed")]
    BadSignature { input: usize },
    #[error("input {outpoint} is already spent")]
    DoubleSpend { outpoint: OutPoint },
    #[error("input {outpoint} does not exist")]
    UnknownInput { outpoint: OutPoint },
    #[error("inputs {inputs} do not equal outputs {outputs} plus fee {fee}")]
    ConservationViolation { inputs: u64, outputs: u64, fee: u64 },
    #[error("fee {fee} exceeds blank inputs {blank_inputs}")]
    FeeNotBlank { fee: u64, blank_inputs: u64 },
    #[error("output {output} carries an issuer annotation its inputs do not support")]
    IssuerMismatch { output: usize },
    #[error("output {output} violates transfer restrictions: {denial}")]
    RestrictionViolation { output: usize, denial: TransferDenial },
    #[error("input {input} reveals a preimage that does not match the hashlock")]
    WrongPreimage { input: usize },
    #[error("lock time {lock_time} not reached at {now}")]
    TimelockNotExpired { lock_time: u64, now: u64 },
    #[error("malformed transaction: {detail}")]
    Malformed { detail: String },
}

pub enum Lookup<'a> {
    Unspent(&'a EquibitOutput),
    Spent,
    Unknown,
}

pub trait UtxoView {
    fn lookup(&self, outpoint: &OutPoint) -> Lookup<'_>;
}

/// Chain tip plus the effects of transactions already accepted into a block
/// under construction.
pub struct Overlay<'a, V: UtxoView> {
    base: &'a V,
    spent: BTreeSet<OutPoint>,
    created: BTreeMap<OutPoint, EquibitOutput>,
}

impl<'a, V: UtxoView> Overlay<'a, V> {
    pub fn new(base: &'a V) -> Self {
        Overlay {
            base,
            spent: BTreeSet::new(),
            created: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, tx: &Transaction) {
        for input in &tx.base.inputs {
            self.created.remove(input);
            self.spent.insert(*input);
        }
        let txid = tx.txid();
        for (vout, out) in tx.outputs() {
            self.created.insert(OutPoint::new(txid, vout), out);
        }
    }
}

impl<V: UtxoView> UtxoView for Overlay<'_, V> {
    fn lookup(&self, outpoint: &OutPoint) -> Lookup<'_> {
        if let Some(out) = self.created.get(outpoint) {
            return Lookup::Unspent(out);
        }
        if self.spent.contains(outpoint) {
            return Lookup::Spent;
        }
        self.base.lookup(outpoint)
    }
}

pub struct ValidationContext<'a> {
    pub kind: ChainKind,
    /// Timestamp of the block the transaction would land in.
    pub now: u64,
    pub passports: &'a PassportDirectory,
}

fn check_spend(
    input: usize,
    lock: &LockScript,
    proof: Option<&SpendProof>,
    sighash: &[u8],
) -> Result<(), Reject> {
    let bad = Reject::BadSignature { input };
    match (lock, proof) {
        (LockScript::PayTo { address }, Some(SpendProof::Key { signer })) => {
            signer.verifies_for(address, sighash).then_some(()).ok_or(bad)
        }
        (
            LockScript::HashlockOrBoth {
                hash: lock_hash,
                solo_claimant,
                ..
            },
            Some(SpendProof::Preimage { preimage, signer }),
        ) => {
            if hash(preimage.as_bytes()) != *lock_hash {
                return Err(Reject::WrongPreimage { input });
            }
            signer.verifies_for(solo_claimant, sighash).then_some(()).ok_or(bad)
        }
        (LockScript::HashlockOrBoth { pair, .. }, Some(SpendProof::Both { first, second })) => {
            let ok = first.verifies_for(&pair.0, sighash) && second.verifies_for(&pair.1, sighash);
            ok.then_some(()).ok_or(bad)
        }
        _ => Err(bad),
    }
}

/// Checks one transaction against a UTXO view. On success returns the
/// transaction's fee.
pub fn validate_transaction<V: UtxoView>(
    tx: &Transaction,
    view: &V,
    ctx: &ValidationContext<'_>,
) -> Result<u64, Reject> {
    let base = &tx.base;
    let malformed = |detail: &str| Reject::Malformed {
        detail: detail.to_string(),
    };
    if base.coinbase.is_some() {
        return Err(malformed("coinbase outside coinbase position"));
    }
    if base.inputs.is_empty() {
        return Err(malformed("no inputs"));
    }
    if base.outputs.is_empty() {
        return Err(malformed("no outputs"));
    }
    if base.outputs.iter().any(|o| o.amount == 0) {
        return Err(malformed("zero-amount output"));
    }
    if tx.witness.issuer_info.len() != base.outputs.len() || tx.witness.spends.len() != base.inputs.len() {
        return Err(malformed("witness does not match base shape"));
    }

    let mut seen = BTreeSet::new();
    let mut spent: Vec<&EquibitOutput> = Vec::with_capacity(base.inputs.len());
    for input in &base.inputs {
        if !seen.insert(*input) {
            return Err(Reject::DoubleSpend { outpoint: *input });
        }
        match view.lookup(input) {
            Lookup::Unspent(out) => spent.push(out),
            Lookup::Spent => return Err(Reject::DoubleSpend { outpoint: *input }),
            Lookup::Unknown => return Err(Reject::UnknownInput { outpoint: *input }),
        }
    }

    if base.lock_time > ctx.now {
        return Err(Reject::TimelockNotExpired {
            lock_time: base.lock_time,
            now: ctx.now,
        });
    }

    let sighash = tx.sighash();
    for (i, out) in spent.iter().enumerate() {
        check_spend(i, &out.lock, tx.witness.spends.get(i), &sighash.0)?;
    }

    let total_in = spent.iter().try_fold(0u64, |acc, o| acc.checked_add(o.amount));
    let total_out = base.outputs.iter().try_fold(0u64, |acc, o| acc.checked_add(o.amount));
    let (Some(total_in), Some(total_out)) = (total_in, total_out) else {
        return Err(malformed("amount overflow"));
    };
    if total_out.checked_add(base.fee) != Some(total_in) {
        return Err(Reject::ConservationViolation {
            inputs: total_in,
            outputs: total_out,
            fee: base.fee,
        });
    }

    match ctx.kind {
        ChainKind::Payment => {
            if let Some(output) = tx.witness.issuer_info.iter().position(Option::is_some) {
                return Err(Reject::IssuerMismatch { output });
            }
            if spent.iter().any(|o| !o.is_blank()) {
                return Err(malformed("annotated input on payment chain"));
            }
        }
        ChainKind::Equity => check_issuance(tx, &spent, ctx)?,
    }
    Ok(base.fee)
}

fn check_issuance(tx: &Transaction, spent: &[&EquibitOutput], ctx: &ValidationContext<'_>) -> Result<(), Reject> {
    let base = &tx.base;
    let mut blank_in = 0u64;
    let mut blank_outpoints = Vec::new();
    let mut lot_in: BTreeMap<&IssuerInfo, u64> = BTreeMap::new();
    let mut sellers: BTreeMap<&IssuerInfo, BTreeSet<Address>> = BTreeMap::new();
    for (outpoint, out) in base.inputs.iter().zip(spent) {
        match &out.issuer_info {
            None => {
                blank_in += out.amount;
                blank_outpoints.push(*outpoint);
            }
            Some(info) => {
                *lot_in.entry(info).or_default() += out.amount;
                sellers.entry(info).or_default().extend(out.lock.parties());
            }
        }
    }

    if base.fee > blank_in {
        return Err(Reject::FeeNotBlank {
            fee: base.fee,
            blank_inputs: blank_in,
        });
    }

    let mut lot_out: BTreeMap<&IssuerInfo, u64> = BTreeMap::new();
    let mut newly_authorized = 0u64;
    let mut checked_new: BTreeSet<&IssuerInfo> = BTreeSet::new();
    for (i, (out, info)) in base.outputs.iter().zip(&tx.witness.issuer_info).enumerate() {
        let Some(info) = info else { continue };
        if lot_in.contains_key(info) {
            *lot_out.entry(info).or_default() += out.amount;
            continue;
        }
        if checked_new.insert(info) && !info.authorizes(&blank_outpoints) {
            return Err(Reject::IssuerMismatch { output: i });
        }
        newly_authorized += out.amount;
    }

    // Units of a lot may leave it only by becoming blank.
    for (info, out_amount) in &lot_out {
        let in_amount = lot_in[info];
        if *out_amount > in_amount {
            return Err(Reject::ConservationViolation {
                inputs: in_amount,
                outputs: *out_amount,
                fee: 0,
            });
        }
    }
    if newly_authorized + base.fee > blank_in {
        return Err(Reject::ConservationViolation {
            inputs: blank_in,
            outputs: newly_authorized,
            fee: base.fee,
        });
    }

    for (i, (out, info)) in base.outputs.iter().zip(&tx.witness.issuer_info).enumerate() {
        let Some(info) = info else { continue };
        let Some(lot_sellers) = sellers.get(info) else { continue };
        for recipient in out.lock.parties() {
            if lot_sellers.contains(&recipient) {
                continue;
            }
            for seller in lot_sellers {
                validate_transfer(
                    &info.issuer_address,
                    info.restriction_level(),
                    seller,
                    &recipient,
                    &tx.witness.passports,
                    ctx.passports,
                    ctx.now,
                )
                .map_err(|denial| Reject::RestrictionViolation { output: i, denial })?;
            }
        }
    }
    Ok(())
}
