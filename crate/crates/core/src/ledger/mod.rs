//! The equity chain and the payment chain share this ledger; the payment
//! chain simply never accepts issuer annotations.

pub mod authenticity;
pub mod chain;
pub mod issuance;
pub mod prune;
pub mod tx;
pub mod validate;

pub use authenticity::{
    holdings, issuer_summary, known_issuances, verify_authenticity, Authenticity, AuthenticityError, IssuerSummary,
    Tracer,
};
pub use chain::{BlockError, ChainKind, ChainParams, ChainState, ImportError, ProducedBlock};
pub use issuance::{authorize, balances_of, cancel, coins_of, select_coins, sign_transaction, transfer, Coin, IssuanceError, Payment};
pub use prune::{prune_witness, verify_pruned, PrunedBlock, PrunedChain};
pub use tx::{
    Block, BlockHeader, EquibitOutput, IssuanceKey, IssuerDescriptor, IssuerInfo, LockScript, OutPoint, SecurityType,
    SpendProof, Transaction, TxBase, TxOut, Witness,
};
pub use validate::{validate_transaction, Lookup, Overlay, Reject, UtxoView, ValidationContext};
