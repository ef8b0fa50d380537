//! Equibit: issuer-annotated UTXO ledger, cross-chain swaps, off-chain
//! messaging, order book, governance, trading passports and a deterministic
//! network simulator.

pub mod canonical;
pub mod crypto;
pub mod governance;
pub mod ledger;
pub mod messaging;
pub mod orderbook;
pub mod passport;
pub mod simnet;
pub mod swap;
