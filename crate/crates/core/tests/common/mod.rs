#![allow(dead_code)]

use equibit_core::crypto::{hash, keypair_from_seed, Address, KeyPair};
use equibit_core::ledger::{
    authorize, coins_of, ChainParams, ChainState, IssuerDescriptor, IssuerInfo, OutPoint, SecurityType, Transaction,
};
use equibit_core::passport::{PassportDirectory, RestrictionLevel};

pub const T0: u64 = 1_483_228_800;

pub fn kp(name: &str) -> KeyPair {
    keypair_from_seed(&hash(name.as_bytes()).0)
}

pub fn descriptor(security: &str, level: u8) -> IssuerDescriptor {
    IssuerDescriptor {
        company_name: "Acme Holdings".into(),
        company_domicile: "Delaware".into(),
        security_name: security.into(),
        security_type: SecurityType::CommonShares,
        restriction_level: RestrictionLevel::new(level).unwrap(),
    }
}

pub fn equity_chain() -> ChainState {
    ChainState::new(ChainParams::equity(T0))
}

/// Mines one block with `txs`, panicking if any is rejected.
pub fn mine(chain: &mut ChainState, miner: Address, txs: &[Transaction]) {
    let now = chain.tip_time() + 600;
    let dir = PassportDirectory::new();
    let produced = chain.produce_block(txs, miner, now, &dir);
    assert!(produced.rejected.is_empty(), "rejected: {:?}", produced.rejected);
    assert!(produced.deferred.is_empty(), "deferred: {:?}", produced.deferred);
    chain.apply_block(produced.block, &dir).unwrap();
}

pub fn mine_empty(chain: &mut ChainState, miner: Address, blocks: usize) {
    for _ in 0..blocks {
        mine(chain, miner, &[]);
    }
}

/// Mines blanks to `issuer` and authorizes `amount` units; returns the
/// annotation and the authorized outpoint.
pub fn issue(chain: &mut ChainState, issuer: &KeyPair, security: &str, level: u8, amount: u64) -> (IssuerInfo, OutPoint) {
    while coins_of(chain, &issuer.address, None).iter().map(|c| c.1.amount).sum::<u64>() < amount {
        mine_empty(chain, issuer.address, 1);
    }
    let coins = coins_of(chain, &issuer.address, None);
    let tx = authorize(&coins, issuer, descriptor(security, level), amount, 0).unwrap();
    let info = tx.witness.issuer_info[0].clone().unwrap();
    let op = OutPoint::new(tx.txid(), 0);
    mine(chain, issuer.address, &[tx]);
    (info, op)
}
