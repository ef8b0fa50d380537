use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tx::{base_merkle_root, full_merkle_root, Block, BlockHeader, EquibitOutput, OutPoint, Transaction};
use super::validate::{validate_transaction, Lookup, Overlay, Reject, UtxoView, ValidationContext};
use crate::canonical;
use crate::crypto::{Address, Digest256, Txid};
use crate::passport::PassportDirectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainKind {
    /// Issuer annotations allowed.
    Equity,
    /// Plain value transfer only.
    Payment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainParams {
    pub kind: ChainKind,
    pub supply_cap: u64,
    pub subsidy: u64,
    pub genesis_time: u64,
}

impl ChainParams {
    pub fn equity(genesis_time: u64) -> Self {
        ChainParams {
            kind: ChainKind::Equity,
            supply_cap: 1_000_000,
            subsidy: 50,
            genesis_time,
        }
    }

    pub fn payment(genesis_time: u64) -> Self {
        ChainParams {
            kind: ChainKind::Payment,
            ..Self::equity(genesis_time)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("expected height {expected}, got {got}")]
    BadHeight { expected: u64, got: u64 },
    #[error("block does not extend the tip")]
    BadPrevHash,
    #[error("timestamp {got} is earlier than the tip's {tip}")]
    BadTimestamp { tip: u64, got: u64 },
    #[error("merkle root does not match transactions")]
    BadMerkleRoot,
    #[error("coinbase must pay {expected}, pays {got}")]
    BadCoinbase { expected: u64, got: u64 },
    #[error("transactions not ordered by fee then txid")]
    BadOrder,
    #[error("transaction {index} rejected: {reject}")]
    InvalidTransaction { index: usize, reject: Reject },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImportError {
    #[error("snapshot is not valid JSON: {0}")]
    Json(String),
    #[error("snapshot has no genesis block")]
    MissingGenesis,
    #[error("block {height}: {error}")]
    Block { height: u64, error: BlockError },
}

/// Outcome of assembling a block from a mempool.
#[derive(Debug, Clone)]
pub struct ProducedBlock {
    pub block: Block,
    pub rejected: Vec<(Txid, Reject)>,
    /// Transactions spending outputs of other pending transactions; they wait
    /// for a later block.
    pub deferred: Vec<Txid>,
}

#[derive(Serialize, Deserialize)]
struct ChainExport {
    params: ChainParams,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainState {
    pub params: ChainParams,
    blocks: Vec<Block>,
    utxo: BTreeMap<OutPoint, EquibitOutput>,
    spent_by: BTreeMap<OutPoint, Txid>,
    /// txid → (height, position in `all_transactions`).
    tx_index: BTreeMap<Txid, (u64, usize)>,
    issued_so_far: u64,
}

impl UtxoView for ChainState {
    fn lookup(&self, outpoint: &OutPoint) -> Lookup<'_> {
        if let Some(out) = self.utxo.get(outpoint) {
            Lookup::Unspent(out)
        } else if self.spent_by.contains_key(outpoint) {
            Lookup::Spent
        } else {
            Lookup::Unknown
        }
    }
}

fn block_order_key(tx: &Transaction) -> (std::cmp::Reverse<u64>, Txid) {
    (std::cmp::Reverse(tx.base.fee), tx.txid())
}

impl ChainState {
    pub fn new(params: ChainParams) -> Self {
        let genesis = Block {
            header: BlockHeader {
                height: 0,
                prev_hash: Digest256::ZERO,
                timestamp: params.genesis_time,
                base_merkle_root: Digest256::ZERO,
                full_merkle_root: Digest256::ZERO,
            },
            coinbase: None,
            transactions: Vec::new(),
        };
        ChainState {
            params,
            blocks: vec![genesis],
            utxo: BTreeMap::new(),
            spent_by: BTreeMap::new(),
            tx_index: BTreeMap::new(),
            issued_so_far: 0,
        }
    }

    /// Builds a state from blocks without validating them. Used for
    /// inspecting foreign or deliberately corrupted chains.
    pub fn from_blocks_unchecked(params: ChainParams, blocks: Vec<Block>) -> Self {
        let mut state = ChainState::new(params);
        state.blocks.clear();
        for block in blocks {
            state.index_block(&block);
            state.blocks.push(block);
        }
        state
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("genesis always present")
    }

    pub fn height(&self) -> u64 {
        self.tip().header.height
    }

    pub fn tip_time(&self) -> u64 {
        self.tip().header.timestamp
    }

    pub fn issued_so_far(&self) -> u64 {
        self.issued_so_far
    }

    pub fn utxo(&self) -> &BTreeMap<OutPoint, EquibitOutput> {
        &self.utxo
    }

    pub fn utxo_sum(&self) -> u64 {
        self.utxo.values().map(|o| o.amount).sum()
    }

    pub fn is_spent(&self, outpoint: &OutPoint) -> bool {
        self.spent_by.contains_key(outpoint)
    }

    pub fn spender_of(&self, outpoint: &OutPoint) -> Option<Txid> {
        self.spent_by.get(outpoint).copied()
    }

    pub fn transaction(&self, txid: &Txid) -> Option<&Transaction> {
        let (height, pos) = self.tx_index.get(txid)?;
        self.blocks[*height as usize].all_transactions().nth(*pos)
    }

    pub fn height_of(&self, txid: &Txid) -> Option<u64> {
        self.tx_index.get(txid).map(|(h, _)| *h)
    }

    /// Output as created, whether or not it has since been spent.
    pub fn historical_output(&self, outpoint: &OutPoint) -> Option<EquibitOutput> {
        self.transaction(&outpoint.txid)?.output(outpoint.vout as usize)
    }

    pub fn transactions(&self) -> impl Iterator<Item = (u64, &Transaction)> {
        self.blocks
            .iter()
            .flat_map(|b| b.all_transactions().map(move |tx| (b.header.height, tx)))
    }

    /// Blank units the next block may mint.
    pub fn next_subsidy(&self) -> u64 {
        self.params
            .subsidy
            .min(self.params.supply_cap.saturating_sub(self.issued_so_far))
    }

    pub fn conservation_holds(&self) -> bool {
        self.utxo_sum() == self.issued_so_far && self.issued_so_far <= self.params.supply_cap
    }

    fn context<'a>(&self, now: u64, passports: &'a PassportDirectory) -> ValidationContext<'a> {
        ValidationContext {
            kind: self.params.kind,
            now,
            passports,
        }
    }

    /// Checks a transaction against the tip as if mined at `now`.
    pub fn check_transaction(&self, tx: &Transaction, now: u64, passports: &PassportDirectory) -> Result<u64, Reject> {
        validate_transaction(tx, self, &self.context(now, passports))
    }

    /// Assembles the next block. Invalid transactions are reported, never
    /// included; the result always applies cleanly to this state.
    pub fn produce_block(
        &self,
        mempool: &[Transaction],
        miner: Address,
        timestamp: u64,
        passports: &PassportDirectory,
    ) -> ProducedBlock {
        let timestamp = timestamp.max(self.tip_time());
        let ctx = self.context(timestamp, passports);
        let pending: BTreeSet<Txid> = mempool.iter().map(Transaction::txid).collect();

        let mut candidates: Vec<&Transaction> = mempool.iter().collect();
        candidates.sort_by_key(|tx| block_order_key(tx));
        candidates.dedup_by_key(|tx| tx.txid());

        let mut overlay = Overlay::new(self);
        let mut included = Vec::new();
        let mut rejected = Vec::new();
        let mut deferred = Vec::new();
        let mut fees = 0u64;
        for tx in candidates {
            let txid = tx.txid();
            if tx.base.inputs.iter().any(|i| pending.contains(&i.txid) && !self.tx_index.contains_key(&i.txid)) {
                deferred.push(txid);
                continue;
            }
            match validate_transaction(tx, &overlay, &ctx) {
                Ok(fee) => {
                    overlay.apply(tx);
                    fees += fee;
                    included.push(tx.clone());
                }
                Err(reject) => rejected.push((txid, reject)),
            }
        }

        let height = self.height() + 1;
        let reward = self.next_subsidy() + fees;
        let coinbase = (reward > 0).then(|| Transaction::coinbase(height, miner, reward));
        let all = || coinbase.iter().chain(included.iter());
        let header = BlockHeader {
            height,
            prev_hash: self.tip().hash(),
            timestamp,
            base_merkle_root: base_merkle_root(all()),
            full_merkle_root: full_merkle_root(all()),
        };
        ProducedBlock {
            block: Block {
                header,
                coinbase,
                transactions: included,
            },
            rejected,
            deferred,
        }
    }

    pub fn apply_block(&mut self, block: Block, passports: &PassportDirectory) -> Result<(), BlockError> {
        let h = &block.header;
        let expected = self.height() + 1;
        if h.height != expected {
            return Err(BlockError::BadHeight {
                expected,
                got: h.height,
            });
        }
        if h.prev_hash != self.tip().hash() {
            return Err(BlockError::BadPrevHash);
        }
        if h.timestamp < self.tip_time() {
            return Err(BlockError::BadTimestamp {
                tip: self.tip_time(),
                got: h.timestamp,
            });
        }
        if h.base_merkle_root != base_merkle_root(block.all_transactions())
            || h.full_merkle_root != full_merkle_root(block.all_transactions())
        {
            return Err(BlockError::BadMerkleRoot);
        }
        let keys: Vec<_> = block.transactions.iter().map(block_order_key).collect();
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BlockError::BadOrder);
        }

        let ctx = self.context(h.timestamp, passports);
        let mut overlay = Overlay::new(&*self);
        let mut fees = 0u64;
        for (index, tx) in block.transactions.iter().enumerate() {
            let fee = validate_transaction(tx, &overlay, &ctx)
                .map_err(|reject| BlockError::InvalidTransaction { index, reject })?;
            overlay.apply(tx);
            fees += fee;
        }

        let expected = self.next_subsidy() + fees;
        let got = match &block.coinbase {
            None => 0,
            Some(cb) => {
                let well_formed = cb.base.coinbase == Some(h.height)
                    && cb.base.inputs.is_empty()
                    && cb.base.outputs.len() == 1
                    && cb.base.fee == 0
                    && cb.witness.issuer_info.iter().all(Option::is_none)
                    && cb.base.outputs[0].amount > 0;
                if !well_formed {
                    return Err(BlockError::BadCoinbase { expected, got: 0 });
                }
                cb.base.outputs[0].amount
            }
        };
        if got != expected {
            return Err(BlockError::BadCoinbase { expected, got });
        }

        self.index_block(&block);
        self.blocks.push(block);
        Ok(())
    }

    fn index_block(&mut self, block: &Block) {
        let height = block.header.height;
        for (pos, tx) in block.all_transactions().enumerate() {
            let txid = tx.txid();
            for input in &tx.base.inputs {
                self.utxo.remove(input);
                self.spent_by.insert(*input, txid);
            }
            for (vout, out) in tx.outputs() {
                self.utxo.insert(OutPoint::new(txid, vout), out);
            }
            self.tx_index.insert(txid, (height, pos));
        }
        if let Some(cb) = &block.coinbase {
            let fees: u64 = block.transactions.iter().map(|t| t.base.fee).sum();
            let minted = cb.base.outputs.iter().map(|o| o.amount).sum::<u64>().saturating_sub(fees);
            self.issued_so_far += minted;
        }
    }

    /// UTXO set as of the end of block `height`.
    pub fn utxo_at_height(&self, height: u64) -> BTreeMap<OutPoint, EquibitOutput> {
        let mut utxo = BTreeMap::new();
        for block in self.blocks.iter().take_while(|b| b.header.height <= height) {
            for tx in block.all_transactions() {
                for input in &tx.base.inputs {
                    utxo.remove(input);
                }
                let txid = tx.txid();
                for (vout, out) in tx.outputs() {
                    utxo.insert(OutPoint::new(txid, vout), out);
                }
            }
        }
        utxo
    }

    /// Height of the last block whose timestamp is at or before `time`.
    pub fn height_at_time(&self, time: u64) -> Option<u64> {
        self.blocks
            .iter()
            .take_while(|b| b.header.timestamp <= time)
            .last()
            .map(|b| b.header.height)
    }

    pub fn export(&self) -> String {
        canonical::to_string(&ChainExport {
            params: self.params.clone(),
            blocks: self.blocks.clone(),
        })
    }

    /// Replays every block through full validation. Revocations only ever
    /// narrow what is valid, so an empty directory accepts any chain that was
    /// valid when built.
    pub fn import(json: &str) -> Result<Self, ImportError> {
        let export: ChainExport = serde_json::from_str(json).map_err(|e| ImportError::Json(e.to_string()))?;
        let mut blocks = export.blocks.into_iter();
        let genesis = blocks.next().ok_or(ImportError::MissingGenesis)?;
        let mut state = ChainState::new(export.params);
        if genesis != state.blocks[0] {
            return Err(ImportError::MissingGenesis);
        }
        let directory = PassportDirectory::new();
        for block in blocks {
            let height = block.header.height;
            state
                .apply_block(block, &directory)
                .map_err(|error| ImportError::Block { height, error })?;
        }
        Ok(state)
    }
}
