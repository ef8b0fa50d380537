use std::collections::BTreeMap;

use thiserror::Error;

use super::chain::ChainState;
use super::tx::{
    EquibitOutput, IssuerDescriptor, IssuerInfo, LockScript, OutPoint, SpendProof, Transaction, TxBase, TxOut,
};
use crate::crypto::{Address, KeyPair};
use crate::passport::TrustEdge;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IssuanceError {
    #[error("input {0} is already authorized")]
    NonBlankInput(OutPoint),
    #[error("nothing to authorize")]
    EmptyAuthorization,
    #[error("input {0} is blank")]
    AlreadyBlank(OutPoint),
    #[error("inputs carry different issuer annotations")]
    MixedIssuers,
    #[error("input {0} is not owned by the signer")]
    NotOwner(OutPoint),
    #[error("need {needed} units, have {available}")]
    InsufficientFunds { needed: u64, available: u64 },
}

/// A spendable coin: where it is and what it holds.
pub type Coin = (OutPoint, EquibitOutput);

/// One output of a transaction being built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payment {
    pub amount: u64,
    pub lock: LockScript,
    pub issuer_info: Option<IssuerInfo>,
}

impl Payment {
    pub fn blank(to: Address, amount: u64) -> Self {
        Payment {
            amount,
            lock: LockScript::pay_to(to),
            issuer_info: None,
        }
    }

    pub fn units(to: Address, amount: u64, info: &IssuerInfo) -> Self {
        Payment {
            amount,
            lock: LockScript::pay_to(to),
            issuer_info: Some(info.clone()),
        }
    }
}

/// Assembles a transaction from inputs all spendable by `signer`'s key.
pub fn sign_transaction(
    inputs: &[OutPoint],
    payments: Vec<Payment>,
    fee: u64,
    lock_time: u64,
    passports: Vec<TrustEdge>,
    signer: &KeyPair,
) -> Transaction {
    let (outputs, infos): (Vec<_>, Vec<_>) = payments
        .into_iter()
        .filter(|p| p.amount > 0)
        .map(|p| {
            (
                TxOut {
                    amount: p.amount,
                    lock: p.lock,
                },
                p.issuer_info,
            )
        })
        .unzip();
    let mut tx = Transaction::unsigned(TxBase {
        inputs: inputs.to_vec(),
        outputs,
        fee,
        lock_time,
        coinbase: None,
    });
    tx.witness.issuer_info = infos;
    tx.witness.passports = passports;
    let sighash = tx.sighash();
    tx.witness.spends = inputs
        .iter()
        .map(|_| SpendProof::Key {
            signer: signer.attest(&sighash.0),
        })
        .collect();
    tx
}

/// Unspent key-locked coins of `owner` matching `annotation` (None = blank),
/// in outpoint order.
pub fn coins_of(state: &ChainState, owner: &Address, annotation: Option<&IssuerInfo>) -> Vec<Coin> {
    state
        .utxo()
        .iter()
        .filter(|(_, o)| o.owner() == Some(*owner) && o.issuer_info.as_ref() == annotation)
        .map(|(op, o)| (*op, o.clone()))
        .collect()
}

/// Smallest outpoint-ordered prefix of `coins` covering `amount`.
pub fn select_coins(coins: &[Coin], amount: u64) -> Result<(Vec<Coin>, u64), IssuanceError> {
    let mut picked = Vec::new();
    let mut total = 0u64;
    for coin in coins {
        if total >= amount && !picked.is_empty() {
            break;
        }
        total += coin.1.amount;
        picked.push(coin.clone());
    }
    if total < amount || picked.is_empty() {
        return Err(IssuanceError::InsufficientFunds {
            needed: amount,
            available: total,
        });
    }
    Ok((picked, total))
}

fn check_owned(coins: &[Coin], owner: &Address) -> Result<(), IssuanceError> {
    match coins.iter().find(|(_, o)| o.owner() != Some(*owner)) {
        Some((op, _)) => Err(IssuanceError::NotOwner(*op)),
        None => Ok(()),
    }
}

/// Turns `amount` of the issuer's blank `inputs` into equity; the rest, less
/// the fee, comes back blank.
pub fn authorize(
    inputs: &[Coin],
    issuer: &KeyPair,
    descriptor: IssuerDescriptor,
    amount: u64,
    fee: u64,
) -> Result<Transaction, IssuanceError> {
    if amount == 0 {
        return Err(IssuanceError::EmptyAuthorization);
    }
    if let Some((op, _)) = inputs.iter().find(|(_, o)| !o.is_blank()) {
        return Err(IssuanceError::NonBlankInput(*op));
    }
    check_owned(inputs, &issuer.address)?;
    let available: u64 = inputs.iter().map(|(_, o)| o.amount).sum();
    if amount + fee > available {
        return Err(IssuanceError::InsufficientFunds {
            needed: amount + fee,
            available,
        });
    }
    let outpoints: Vec<OutPoint> = inputs.iter().map(|(op, _)| *op).collect();
    let msg = IssuerInfo::authorization_message(&descriptor, &issuer.address, &outpoints);
    let info = IssuerInfo {
        descriptor,
        issuer_address: issuer.address,
        authorization: issuer.attest(&msg),
    };
    let payments = vec![
        Payment::units(issuer.address, amount, &info),
        Payment::blank(issuer.address, available - amount - fee),
    ];
    Ok(sign_transaction(&outpoints, payments, fee, 0, Vec::new(), issuer))
}

/// Strips the annotation from the holder's units. `fee_inputs` are blank
/// coins paying the fee; the change returns to the holder.
pub fn cancel(inputs: &[Coin], fee_inputs: &[Coin], fee: u64, holder: &KeyPair) -> Result<Transaction, IssuanceError> {
    let first = inputs.first().ok_or(IssuanceError::EmptyAuthorization)?;
    if let Some((op, _)) = inputs.iter().find(|(_, o)| o.is_blank()) {
        return Err(IssuanceError::AlreadyBlank(*op));
    }
    if inputs.iter().any(|(_, o)| o.issuer_info != first.1.issuer_info) {
        return Err(IssuanceError::MixedIssuers);
    }
    if let Some((op, _)) = fee_inputs.iter().find(|(_, o)| !o.is_blank()) {
        return Err(IssuanceError::NonBlankInput(*op));
    }
    check_owned(inputs, &holder.address)?;
    check_owned(fee_inputs, &holder.address)?;
    let units: u64 = inputs.iter().map(|(_, o)| o.amount).sum();
    let blank: u64 = fee_inputs.iter().map(|(_, o)| o.amount).sum();
    if fee > blank {
        return Err(IssuanceError::InsufficientFunds {
            needed: fee,
            available: blank,
        });
    }
    let outpoints: Vec<OutPoint> = inputs.iter().chain(fee_inputs).map(|(op, _)| *op).collect();
    Ok(sign_transaction(
        &outpoints,
        vec![Payment::blank(holder.address, units + blank - fee)],
        fee,
        0,
        Vec::new(),
        holder,
    ))
}

/// Moves `amount` units of one lot (or blank units when `lot` is None) from
/// `from` to `lock`, selecting coins from the chain tip and paying `fee` in
/// blank units.
pub fn transfer(
    state: &ChainState,
    from: &KeyPair,
    lot: Option<&IssuerInfo>,
    lock: LockScript,
    amount: u64,
    fee: u64,
    passports: Vec<TrustEdge>,
) -> Result<Transaction, IssuanceError> {
    let blank = coins_of(state, &from.address, None);
    let mut inputs = Vec::new();
    let mut payments = Vec::new();
    match lot {
        None => {
            let (picked, total) = select_coins(&blank, amount + fee)?;
            payments.push(Payment {
                amount,
                lock,
                issuer_info: None,
            });
            payments.push(Payment::blank(from.address, total - amount - fee));
            inputs.extend(picked);
        }
        Some(info) => {
            let (picked, total) = select_coins(&coins_of(state, &from.address, Some(info)), amount)?;
            payments.push(Payment {
                amount,
                lock,
                issuer_info: Some(info.clone()),
            });
            payments.push(Payment::units(from.address, total - amount, info));
            inputs.extend(picked);
            if fee > 0 {
                let (fee_coins, fee_total) = select_coins(&blank, fee)?;
                payments.push(Payment::blank(from.address, fee_total - fee));
                inputs.extend(fee_coins);
            }
        }
    }
    let outpoints: Vec<OutPoint> = inputs.iter().map(|(op, _)| *op).collect();
    Ok(sign_transaction(&outpoints, payments, fee, 0, passports, from))
}

/// Total units per annotation held under `owner`'s key.
pub fn balances_of(state: &ChainState, owner: &Address) -> BTreeMap<Option<IssuerInfo>, u64> {
    let mut out = BTreeMap::new();
    for o in state.utxo().values().filter(|o| o.owner() == Some(*owner)) {
        *out.entry(o.issuer_info.clone()).or_default() += o.amount;
    }
    out
}
