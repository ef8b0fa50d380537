use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::chain::ChainState;
use super::tx::{EquibitOutput, IssuanceKey, IssuerInfo, OutPoint, Transaction};
use crate::crypto::{Address, Txid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Authenticity {
    Authentic,
    Forged,
    Blank,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthenticityError {
    #[error("outpoint {0} is not in the chain history")]
    UnknownOutpoint(OutPoint),
}

/// Memoized backward tracer over one chain.
pub struct Tracer<'a> {
    chain: &'a ChainState,
    memo: HashMap<(Txid, IssuerInfoRef), bool>,
}

/// Index of the first output of a transaction carrying an annotation.
type IssuerInfoRef = usize;

struct LotIo<'t> {
    blank_outpoints: Vec<OutPoint>,
    blank_in: u64,
    lots_in: Vec<(&'t IssuerInfo, OutPoint, u64)>,
}

fn lot_io<'t>(chain: &'t ChainState, tx: &Transaction) -> Option<(LotIo<'t>, Vec<(OutPoint, EquibitOutput)>)> {
    let mut io = LotIo {
        blank_outpoints: Vec::new(),
        blank_in: 0,
        lots_in: Vec::new(),
    };
    let mut spent = Vec::new();
    for input in &tx.base.inputs {
        let prev = chain.transaction(&input.txid)?;
        let out = prev.output(input.vout as usize)?;
        match prev.witness.issuer_info.get(input.vout as usize).and_then(Option::as_ref) {
            None => {
                io.blank_in += out.amount;
                io.blank_outpoints.push(*input);
            }
            Some(info) => io.lots_in.push((info, *input, out.amount)),
        }
        spent.push((*input, out));
    }
    Some((io, spent))
}

impl<'a> Tracer<'a> {
    pub fn new(chain: &'a ChainState) -> Self {
        Tracer {
            chain,
            memo: HashMap::new(),
        }
    }

    pub fn verify(&mut self, outpoint: &OutPoint) -> Result<Authenticity, AuthenticityError> {
        let tx = self
            .chain
            .transaction(&outpoint.txid)
            .ok_or(AuthenticityError::UnknownOutpoint(*outpoint))?;
        let out = tx
            .output(outpoint.vout as usize)
            .ok_or(AuthenticityError::UnknownOutpoint(*outpoint))?;
        Ok(match &out.issuer_info {
            None => Authenticity::Blank,
            Some(info) if self.lot_authentic(tx, info) => Authenticity::Authentic,
            Some(_) => Authenticity::Forged,
        })
    }

    /// Whether the units annotated `info` created by `tx` are genuine.
    fn lot_authentic(&mut self, tx: &Transaction, info: &IssuerInfo) -> bool {
        let key = (tx.txid(), self.intern(tx, info));
        if let Some(v) = self.memo.get(&key) {
            return *v;
        }
        let v = self.compute(tx, info);
        self.memo.insert(key, v);
        v
    }

    fn intern(&self, tx: &Transaction, info: &IssuerInfo) -> IssuerInfoRef {
        tx.witness
            .issuer_info
            .iter()
            .position(|i| i.as_ref() == Some(info))
            .unwrap_or(usize::MAX)
    }

    fn compute(&mut self, tx: &Transaction, info: &IssuerInfo) -> bool {
        if tx.is_coinbase() {
            return false;
        }
        let chain = self.chain;
        let Some((io, _)) = lot_io(chain, tx) else {
            return false;
        };
        let out_of = |target: &IssuerInfo| -> u64 {
            tx.outputs()
                .filter(|(_, o)| o.issuer_info.as_ref() == Some(target))
                .map(|(_, o)| o.amount)
                .sum()
        };
        let same_lot: Vec<OutPoint> = io
            .lots_in
            .iter()
            .filter(|(i, _, _)| *i == info)
            .map(|(_, op, _)| *op)
            .collect();
        if !same_lot.is_empty() {
            let lot_in: u64 = io.lots_in.iter().filter(|(i, _, _)| *i == info).map(|(_, _, a)| a).sum();
            if out_of(info) > lot_in {
                return false;
            }
            return same_lot.iter().all(|op| {
                let parent = chain.transaction(&op.txid).expect("resolved above");
                self.lot_authentic(parent, info)
            });
        }
        if !info.authorizes(&io.blank_outpoints) {
            return false;
        }
        let mut new_lots: Vec<&IssuerInfo> = tx
            .witness
            .issuer_info
            .iter()
            .flatten()
            .filter(|i| !io.lots_in.iter().any(|(l, _, _)| l == i))
            .collect();
        new_lots.sort();
        new_lots.dedup();
        let newly: u64 = new_lots.iter().map(|i| out_of(i)).sum();
        newly + tx.base.fee <= io.blank_in
    }
}

pub fn verify_authenticity(outpoint: &OutPoint, chain: &ChainState) -> Result<Authenticity, AuthenticityError> {
    Tracer::new(chain).verify(outpoint)
}

/// Units newly authorized by `tx`, per annotation, when its authorization is
/// genuine. Empty for plain transfers.
pub fn authorizations_in(chain: &ChainState, tx: &Transaction) -> BTreeMap<IssuerInfo, u64> {
    let mut out = BTreeMap::new();
    if tx.is_coinbase() {
        return out;
    }
    let Some((io, _)) = lot_io(chain, tx) else {
        return out;
    };
    for (_, o) in tx.outputs() {
        let Some(info) = o.issuer_info else { continue };
        if io.lots_in.iter().any(|(l, _, _)| **l == info) || !info.authorizes(&io.blank_outpoints) {
            continue;
        }
        *out.entry(info).or_default() += o.amount;
    }
    out
}

/// Public bookkeeping for one issuer, computed from the chain alone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuerSummary {
    pub authorized_total: u64,
    /// Authentic units still held by the issuer.
    pub at_origin: u64,
    /// Authentic units held by anyone else, including escrow scripts.
    pub circulating: u64,
    /// Units returned to the blank pool.
    pub cancelled: u64,
}

pub fn issuer_summary(chain: &ChainState, issuer: &Address) -> IssuerSummary {
    let mut summary = IssuerSummary::default();
    for (_, tx) in chain.transactions() {
        for (info, amount) in authorizations_in(chain, tx) {
            if info.issuer_address == *issuer {
                summary.authorized_total += amount;
            }
        }
    }
    let mut tracer = Tracer::new(chain);
    for (op, out) in chain.utxo() {
        let Some(info) = &out.issuer_info else { continue };
        if info.issuer_address != *issuer || tracer.verify(op) != Ok(Authenticity::Authentic) {
            continue;
        }
        if out.owner() == Some(*issuer) {
            summary.at_origin += out.amount;
        } else {
            summary.circulating += out.amount;
        }
    }
    summary.cancelled = summary
        .authorized_total
        .saturating_sub(summary.at_origin + summary.circulating);
    summary
}

/// Authentic, key-held units of one issuance in `utxo`, per holder.
/// Escrowed units have no single owner and are left out.
pub fn holdings(
    chain: &ChainState,
    utxo: &BTreeMap<OutPoint, EquibitOutput>,
    issuance: &IssuanceKey,
) -> BTreeMap<Address, u64> {
    let mut tracer = Tracer::new(chain);
    let mut out = BTreeMap::new();
    for (op, o) in utxo {
        let (Some(info), Some(owner)) = (&o.issuer_info, o.owner()) else {
            continue;
        };
        if info.issuance() != *issuance || tracer.verify(op) != Ok(Authenticity::Authentic) {
            continue;
        }
        *out.entry(owner).or_default() += o.amount;
    }
    out
}

/// Every issuance with at least one genuine authorization on the chain.
pub fn known_issuances(chain: &ChainState) -> BTreeMap<IssuanceKey, u64> {
    let mut out = BTreeMap::new();
    for (_, tx) in chain.transactions() {
        for (info, amount) in authorizations_in(chain, tx) {
            *out.entry(info.issuance()).or_default() += amount;
        }
    }
    out
}
