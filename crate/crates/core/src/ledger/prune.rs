use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::chain::{ChainParams, ChainState};
use super::tx::{merkle_root, BlockHeader, OutPoint, TxBase};
use crate::canonical;
use crate::crypto::Digest256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunedBlock {
    pub header: BlockHeader,
    /// Coinbase first when present.
    pub transactions: Vec<TxBase>,
}

/// Headers and base transactions only: no annotations, no signatures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunedChain {
    pub params: ChainParams,
    pub blocks: Vec<PrunedBlock>,
    pub tip_hash: Digest256,
}

impl PrunedChain {
    pub fn serialized_len(&self) -> usize {
        canonical::to_vec(self).len()
    }
}

pub fn prune_witness(state: &ChainState) -> PrunedChain {
    PrunedChain {
        params: state.params.clone(),
        blocks: state
            .blocks()
            .iter()
            .map(|b| PrunedBlock {
                header: b.header.clone(),
                transactions: b.all_transactions().map(|tx| tx.base.clone()).collect(),
            })
            .collect(),
        tip_hash: state.tip().hash(),
    }
}

/// Re-derives every base merkle root and header link, then replays amounts
/// through a UTXO set to confirm txid continuity and conservation.
pub fn verify_pruned(chain: &PrunedChain) -> bool {
    let mut prev_hash = Digest256::ZERO;
    let mut prev_time = 0u64;
    let mut utxo: BTreeMap<OutPoint, u64> = BTreeMap::new();
    let mut issued = 0u64;
    for (i, block) in chain.blocks.iter().enumerate() {
        let h = &block.header;
        if h.height != i as u64 || h.prev_hash != prev_hash || h.timestamp < prev_time {
            return false;
        }
        if i == 0 && (h.timestamp != chain.params.genesis_time || !block.transactions.is_empty()) {
            return false;
        }
        let txids: Vec<Digest256> = block.transactions.iter().map(TxBase::txid).collect();
        if merkle_root(&txids) != h.base_merkle_root {
            return false;
        }

        let (coinbase, rest) = match block.transactions.split_first() {
            Some((first, rest)) if first.coinbase.is_some() => (Some(first), rest),
            _ => (None, &block.transactions[..]),
        };
        let mut fees = 0u64;
        for (tx, txid) in rest.iter().zip(txids.iter().skip(coinbase.is_some() as usize)) {
            if tx.coinbase.is_some() || tx.inputs.is_empty() {
                return false;
            }
            let mut total_in = 0u64;
            for input in &tx.inputs {
                match utxo.remove(input).and_then(|a| a.checked_add(total_in)) {
                    Some(sum) => total_in = sum,
                    None => return false,
                }
            }
            let total_out = tx.outputs.iter().try_fold(0u64, |acc, o| acc.checked_add(o.amount));
            if total_out.and_then(|t| t.checked_add(tx.fee)) != Some(total_in) {
                return false;
            }
            fees += tx.fee;
            for (vout, out) in tx.outputs.iter().enumerate() {
                utxo.insert(OutPoint::new(*txid, vout as u32), out.amount);
            }
        }

        let subsidy = chain.params.subsidy.min(chain.params.supply_cap.saturating_sub(issued));
        let expected = subsidy + fees;
        match coinbase {
            Some(cb) => {
                let ok = cb.coinbase == Some(h.height)
                    && cb.inputs.is_empty()
                    && cb.outputs.len() == 1
                    && cb.outputs[0].amount == expected
                    && expected > 0;
                if !ok {
                    return false;
                }
                utxo.insert(OutPoint::new(txids[0], 0), expected);
                issued += subsidy;
            }
            None if i > 0 && expected > 0 => return false,
            None => {}
        }

        prev_hash = h.hash();
        prev_time = h.timestamp;
    }
    !chain.blocks.is_empty()
        && prev_hash == chain.tip_hash
        && utxo.values().try_fold(0u64, |acc, a| acc.checked_add(*a)) == Some(issued)
}
