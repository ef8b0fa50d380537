use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{hash_parts, keypair_from_seed, KeyPair};
use crate::ledger::{
    authorize, balances_of, cancel, coins_of, transfer, ChainParams, ChainState, IssuerDescriptor, LockScript,
    SecurityType, Transaction,
};
use crate::passport::{PassportDirectory, RestrictionLevel};

/// Shape of a random single-chain ledger history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub seed: u64,
    pub blocks: u64,
    pub actors: usize,
    /// Upper bound on transactions attempted per block.
    pub max_txs: usize,
    pub subsidy: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            seed: 0,
            blocks: 30,
            actors: 4,
            max_txs: 4,
            subsidy: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadStats {
    pub blocks: u64,
    pub authorizations: u64,
    pub transfers: u64,
    pub blank_transfers: u64,
    pub cancels: u64,
    pub fees_paid: u64,
    /// Transactions the block builder refused, double-spends included.
    pub rejected: u64,
}

pub fn workload_actors(seed: u64, count: usize) -> Vec<KeyPair> {
    (0..count)
        .map(|i| keypair_from_seed(&hash_parts(&[b"eqb-workload", &seed.to_be_bytes(), &(i as u64).to_be_bytes()]).0))
        .collect()
}

/// Builds a random history of authorizations, transfers, cancellations and
/// blank payments, all at restriction level 0. `on_block` sees the state
/// after every block.
pub fn random_ledger(
    config: &WorkloadConfig,
    mut on_block: impl FnMut(&ChainState),
) -> (ChainState, Vec<KeyPair>, WorkloadStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let actors = workload_actors(config.seed, config.actors.max(2));
    let mut params = ChainParams::equity(crate::simnet::DEFAULT_GENESIS);
    params.subsidy = config.subsidy;
    let mut state = ChainState::new(params);
    let dir = PassportDirectory::new();
    let mut stats = WorkloadStats::default();

    for b in 0..config.blocks {
        let mut pool: Vec<Transaction> = Vec::new();
        if b >= 2 {
            for _ in 0..rng.random_range(0..=config.max_txs) {
                let who = &actors[rng.random_range(0..actors.len())];
                let other = loop {
                    let o = &actors[rng.random_range(0..actors.len())];
                    if o.address != who.address {
                        break o;
                    }
                };
                let balances = balances_of(&state, &who.address);
                let blank = balances.get(&None).copied().unwrap_or(0);
                let lots: Vec<_> = balances.keys().flatten().cloned().collect();
                let fee = if blank > 1 && rng.random_bool(0.4) { rng.random_range(1..=blank.min(3)) } else { 0 };
                let tx = match rng.random_range(0..4u8) {
                    0 if blank > fee => {
                        let descriptor = IssuerDescriptor {
                            company_name: format!("Workload {}", who.address.short()),
                            company_domicile: "Delaware".into(),
                            security_name: format!("S{}", rng.random_range(0..3u8)),
                            security_type: SecurityType::CommonShares,
                            restriction_level: RestrictionLevel::FREE,
                        };
                        let amount = rng.random_range(1..=blank - fee);
                        let coins = coins_of(&state, &who.address, None);
                        authorize(&coins, who, descriptor, amount, fee)
                            .ok()
                            .inspect(|_| stats.authorizations += 1)
                    }
                    1 if !lots.is_empty() => {
                        let lot = &lots[rng.random_range(0..lots.len())];
                        let amount = rng.random_range(1..=balances[&Some(lot.clone())]);
                        transfer(&state, who, Some(lot), LockScript::pay_to(other.address), amount, fee, Vec::new())
                            .ok()
                            .inspect(|_| stats.transfers += 1)
                    }
                    2 if !lots.is_empty() => {
                        let lot = &lots[rng.random_range(0..lots.len())];
                        let units = coins_of(&state, &who.address, Some(lot));
                        let fee_coins = if fee > 0 { coins_of(&state, &who.address, None) } else { Vec::new() };
                        cancel(&units, &fee_coins, fee, who).ok().inspect(|_| stats.cancels += 1)
                    }
                    _ if blank > fee => {
                        let amount = rng.random_range(1..=blank - fee);
                        transfer(&state, who, None, LockScript::pay_to(other.address), amount, fee, Vec::new())
                            .ok()
                            .inspect(|_| stats.blank_transfers += 1)
                    }
                    _ => None,
                };
                pool.extend(tx);
            }
        }
        let miner = actors[rng.random_range(0..actors.len())].address;
        let time = state.tip_time() + 600;
        let produced = state.produce_block(&pool, miner, time, &dir);
        stats.rejected += produced.rejected.len() as u64;
        stats.fees_paid += produced.block.coinbase.as_ref().map_or(0, |c| {
            c.outputs().map(|(_, o)| o.amount).sum::<u64>()
        }).saturating_sub(state.next_subsidy());
        state.apply_block(produced.block, &dir).expect("produced blocks apply");
        stats.blocks += 1;
        on_block(&state);
    }
    (state, actors, stats)
}
