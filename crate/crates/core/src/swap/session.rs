use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, hash_parts, Address, Attestation, Digest256, KeyPair, Secret32, Txid};
use crate::ledger::{
    transfer, ChainState, IssuanceError, IssuerInfo, LockScript, OutPoint, Reject, SpendProof, Transaction, TxBase,
    TxOut,
};
use crate::passport::{PassportDirectory, TrustEdge};

pub const HOUR: u64 = 3_600;

/// A chain a swap party can read and submit to.
pub trait ChainAccess {
    fn state(&self) -> &ChainState;
    fn now(&self) -> u64;
    fn submit(&mut self, tx: Transaction) -> Result<(), Reject>;
}

/// A chain that mines every accepted transaction into its own block at once.
#[derive(Debug, Clone)]
pub struct InstantChain {
    pub state: ChainState,
    pub now: u64,
    pub miner: Address,
    pub passports: PassportDirectory,
}

impl InstantChain {
    pub fn new(state: ChainState, miner: Address) -> Self {
        let now = state.tip_time();
        InstantChain {
            state,
            now,
            miner,
            passports: PassportDirectory::new(),
        }
    }

    pub fn advance(&mut self, seconds: u64) {
        self.now += seconds;
    }

    pub fn set_time(&mut self, time: u64) {
        self.now = self.now.max(time);
    }

    pub fn mine_empty(&mut self) {
        let produced = self.state.produce_block(&[], self.miner, self.now, &self.passports);
        self.state
            .apply_block(produced.block, &self.passports)
            .expect("empty block always applies");
    }
}

impl ChainAccess for InstantChain {
    fn state(&self) -> &ChainState {
        &self.state
    }

    fn now(&self) -> u64 {
        self.now
    }

    fn submit(&mut self, tx: Transaction) -> Result<(), Reject> {
        let produced = self
            .state
            .produce_block(std::slice::from_ref(&tx), self.miner, self.now, &self.passports);
        if let Some((_, reject)) = produced.rejected.into_iter().next() {
            return Err(reject);
        }
        self.state
            .apply_block(produced.block, &self.passports)
            .expect("produced block applies");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SwapError {
    #[error("step {attempted} attempted, next step is {expected}")]
    OutOfOrder { expected: u8, attempted: u8 },
    #[error("{0} is not the party for this step")]
    WrongParty(Address),
    #[error("transaction does not carry the agreed terms")]
    TermsMismatch,
    #[error("refund locked until {unlock}, now {now}")]
    TimelockNotExpired { unlock: u64, now: u64 },
    #[error("output already claimed or refunded")]
    AlreadyClaimed,
    #[error("secret not yet revealed on the equity chain")]
    NoPreimage,
    #[error("equity refund must unlock before the payment refund")]
    InvalidTimelocks,
    #[error("chain rejected transaction: {0}")]
    Chain(Reject),
    #[error(transparent)]
    Funds(#[from] IssuanceError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapTerms {
    pub buyer: Address,
    pub seller: Address,
    /// Payment units the buyer pays.
    pub price: u64,
    /// Equity units the seller delivers.
    pub quantity: u64,
    pub issuer_info: IssuerInfo,
    /// Payment refund (TX2) unlocks this long after the session opens.
    pub payment_timelock: u64,
    /// Equity refund (TX4) unlocks this long after the session opens.
    pub equity_timelock: u64,
}

impl SwapTerms {
    pub fn new(buyer: Address, seller: Address, price: u64, quantity: u64, issuer_info: IssuerInfo) -> Self {
        SwapTerms {
            buyer,
            seller,
            price,
            quantity,
            issuer_info,
            payment_timelock: 48 * HOUR,
            equity_timelock: 24 * HOUR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwapState {
    Init,
    Tx2Countersigned,
    Tx1Posted,
    Tx4Countersigned,
    Tx3Posted,
    BuyerClaimed,
    Completed,
    RefundedEquibit,
    RefundedPayment,
    AbortedClean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SwapEvent {
    pub step: Option<u8>,
    pub time: u64,
    pub action: String,
    pub txid: Option<Txid>,
}

/// One atomic cross-chain trade. The secret stays out of serialized form
/// until the buyer reveals it on chain.
#[derive(Debug, Clone, Serialize)]
pub struct SwapSession {
    pub id: Digest256,
    pub terms: SwapTerms,
    pub hashlock: Digest256,
    #[serde(skip)]
    secret: Secret32,
    pub revealed: Option<Secret32>,
    pub t0: u64,
    pub state: SwapState,
    /// Last completed protocol step, 0 before step 1.
    pub step: u8,
    pub tx1: Option<Transaction>,
    pub tx2: Option<Transaction>,
    pub tx3: Option<Transaction>,
    pub tx4: Option<Transaction>,
    pub equity_claim: Option<Txid>,
    pub payment_claim: Option<Txid>,
    pub equity_refund: Option<Txid>,
    pub payment_refund: Option<Txid>,
    pub events: Vec<SwapEvent>,
    #[serde(skip)]
    tx2_buyer_sig: Option<Attestation>,
    #[serde(skip)]
    tx4_seller_sig: Option<Attestation>,
}

pub fn secret_from_seed(seed: &[u8]) -> Secret32 {
    Secret32(hash_parts(&[b"swap-secret", seed]).0)
}

fn escrow(hashlock: Digest256, claimant: Address, terms: &SwapTerms) -> LockScript {
    LockScript::HashlockOrBoth {
        hash: hashlock,
        solo_claimant: claimant,
        pair: (terms.buyer, terms.seller),
    }
}

fn spend_of(
    input: OutPoint,
    amount: u64,
    to: Address,
    info: Option<&IssuerInfo>,
    lock_time: u64,
) -> Transaction {
    let mut tx = Transaction::unsigned(TxBase {
        inputs: vec![input],
        outputs: vec![TxOut {
            amount,
            lock: LockScript::pay_to(to),
        }],
        fee: 0,
        lock_time,
        coinbase: None,
    });
    tx.witness.issuer_info = vec![info.cloned()];
    tx
}

impl SwapSession {
    /// Step 1: the buyer picks the secret.
    pub fn open(terms: SwapTerms, seed: &[u8], t0: u64) -> Result<Self, SwapError> {
        if terms.equity_timelock >= terms.payment_timelock {
            return Err(SwapError::InvalidTimelocks);
        }
        let secret = secret_from_seed(seed);
        let mut session = SwapSession {
            id: hash_parts(&[b"swap-session", seed]),
            hashlock: hash(secret.as_bytes()),
            secret,
            revealed: None,
            terms,
            t0,
            state: SwapState::Init,
            step: 1,
            tx1: None,
            tx2: None,
            tx3: None,
            tx4: None,
            equity_claim: None,
            payment_claim: None,
            equity_refund: None,
            payment_refund: None,
            events: Vec::new(),
            tx2_buyer_sig: None,
            tx4_seller_sig: None,
        };
        session.log(Some(1), t0, "buyer picks secret x and publishes H(x)", None);
        Ok(session)
    }

    pub fn payment_unlock(&self) -> u64 {
        self.t0 + self.terms.payment_timelock
    }

    pub fn equity_unlock(&self) -> u64 {
        self.t0 + self.terms.equity_timelock
    }

    pub fn tx1_outpoint(&self) -> Option<OutPoint> {
        self.tx1.as_ref().map(|t| OutPoint::new(t.txid(), 0))
    }

    pub fn tx3_outpoint(&self) -> Option<OutPoint> {
        self.tx3.as_ref().map(|t| OutPoint::new(t.txid(), 0))
    }

    /// Buyer-only view of the secret, for tests and the buyer's own wallet.
    pub fn secret_for(&self, buyer: &KeyPair) -> Option<Secret32> {
        (buyer.address == self.terms.buyer).then_some(self.secret)
    }

    fn log(&mut self, step: Option<u8>, time: u64, action: &str, txid: Option<Txid>) {
        self.events.push(SwapEvent {
            step,
            time,
            action: action.to_string(),
            txid,
        });
    }

    fn advance(&mut self, step: u8) -> Result<(), SwapError> {
        if self.step + 1 != step || self.is_terminal() {
            return Err(SwapError::OutOfOrder {
                expected: self.step + 1,
                attempted: step,
            });
        }
        Ok(())
    }

    fn party(actual: &KeyPair, expected: Address) -> Result<(), SwapError> {
        if actual.address == expected {
            Ok(())
        } else {
            Err(SwapError::WrongParty(actual.address))
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(
            self.state,
            SwapState::Completed | SwapState::RefundedEquibit | SwapState::RefundedPayment | SwapState::AbortedClean
        )
    }

    /// Step 2.
    pub fn build_tx1(&mut self, buyer: &KeyPair, payment: &impl ChainAccess) -> Result<Txid, SwapError> {
        self.advance(2)?;
        Self::party(buyer, self.terms.buyer)?;
        let lock = escrow(self.hashlock, self.terms.seller, &self.terms);
        let tx = transfer(payment.state(), buyer, None, lock, self.terms.price, 0, Vec::new())?;
        let txid = tx.txid();
        self.tx1 = Some(tx);
        self.step = 2;
        self.log(Some(2), payment.now(), "buyer builds TX1 paying into the hashlock", Some(txid));
        Ok(txid)
    }

    /// Step 3. TX2 references TX1 by txid before TX1 is public; the txid
    /// excludes witnesses, so it is stable.
    pub fn build_tx2(&mut self, buyer: &KeyPair, now: u64) -> Result<Txid, SwapError> {
        self.advance(3)?;
        Self::party(buyer, self.terms.buyer)?;
        let input = self.tx1_outpoint().expect("step 2 done");
        let tx = spend_of(input, self.terms.price, self.terms.buyer, None, self.payment_unlock());
        self.tx2_buyer_sig = Some(buyer.attest(&tx.sighash().0));
        let txid = tx.txid();
        self.tx2 = Some(tx);
        self.step = 3;
        self.log(Some(3), now, "buyer builds refund TX2, timelocked", Some(txid));
        Ok(txid)
    }

    /// Step 4: off-chain hand-over of TX2.
    pub fn send_tx2(&mut self, buyer: &KeyPair, now: u64) -> Result<(), SwapError> {
        self.advance(4)?;
        Self::party(buyer, self.terms.buyer)?;
        self.step = 4;
        self.log(Some(4), now, "buyer sends TX2 to seller off-chain", None);
        Ok(())
    }

    /// Step 5.
    pub fn countersign_tx2(&mut self, seller: &KeyPair, now: u64) -> Result<(), SwapError> {
        self.advance(5)?;
        Self::party(seller, self.terms.seller)?;
        let tx = self.tx2.as_mut().expect("step 3 done");
        let second = seller.attest(&tx.sighash().0);
        tx.witness.spends = vec![SpendProof::Both {
            first: self.tx2_buyer_sig.expect("buyer signed at step 3"),
            second,
        }];
        self.step = 5;
        self.state = SwapState::Tx2Countersigned;
        self.log(Some(5), now, "seller countersigns TX2 and returns it", None);
        Ok(())
    }

    /// Step 6.
    pub fn post_tx1(&mut self, buyer: &KeyPair, payment: &mut impl ChainAccess) -> Result<(), SwapError> {
        self.advance(6)?;
        Self::party(buyer, self.terms.buyer)?;
        let tx = self.tx1.clone().expect("step 2 done");
        let txid = tx.txid();
        payment.submit(tx).map_err(SwapError::Chain)?;
        self.step = 6;
        self.state = SwapState::Tx1Posted;
        self.log(Some(6), payment.now(), "buyer submits TX1 to the payment chain", Some(txid));
        Ok(())
    }

    /// Step 7. `passports` is the buyer's trust evidence for restricted units.
    pub fn build_tx3(
        &mut self,
        seller: &KeyPair,
        equity: &impl ChainAccess,
        lot: &IssuerInfo,
        passports: Vec<TrustEdge>,
    ) -> Result<Txid, SwapError> {
        self.advance(7)?;
        Self::party(seller, self.terms.seller)?;
        let lock = escrow(self.hashlock, self.terms.buyer, &self.terms);
        let tx = transfer(equity.state(), seller, Some(lot), lock, self.terms.quantity, 0, passports)?;
        let txid = tx.txid();
        self.tx3 = Some(tx);
        self.step = 7;
        self.log(Some(7), equity.now(), "seller builds TX3 paying equity into the hashlock", Some(txid));
        Ok(txid)
    }

    /// Step 8.
    pub fn build_tx4(&mut self, seller: &KeyPair, now: u64) -> Result<Txid, SwapError> {
        self.advance(8)?;
        Self::party(seller, self.terms.seller)?;
        let tx3 = self.tx3.as_ref().expect("step 7 done");
        let info = tx3.witness.issuer_info[0].clone();
        let input = OutPoint::new(tx3.txid(), 0);
        let tx = spend_of(input, self.terms.quantity, self.terms.seller, info.as_ref(), self.equity_unlock());
        self.tx4_seller_sig = Some(seller.attest(&tx.sighash().0));
        let txid = tx.txid();
        self.tx4 = Some(tx);
        self.step = 8;
        self.log(Some(8), now, "seller builds refund TX4, timelocked", Some(txid));
        Ok(txid)
    }

    /// Step 9.
    pub fn send_tx4(&mut self, seller: &KeyPair, now: u64) -> Result<(), SwapError> {
        self.advance(9)?;
        Self::party(seller, self.terms.seller)?;
        self.step = 9;
        self.log(Some(9), now, "seller sends TX4 to buyer off-chain", None);
        Ok(())
    }

    /// Step 10.
    pub fn countersign_tx4(&mut self, buyer: &KeyPair, now: u64) -> Result<(), SwapError> {
        self.advance(10)?;
        Self::party(buyer, self.terms.buyer)?;
        let tx = self.tx4.as_mut().expect("step 8 done");
        let first = buyer.attest(&tx.sighash().0);
        tx.witness.spends = vec![SpendProof::Both {
            first,
            second: self.tx4_seller_sig.expect("seller signed at step 8"),
        }];
        self.step = 10;
        self.state = SwapState::Tx4Countersigned;
        self.log(Some(10), now, "buyer countersigns TX4 and returns it", None);
        Ok(())
    }

    /// Step 11.
    pub fn post_tx3(&mut self, seller: &KeyPair, equity: &mut impl ChainAccess) -> Result<(), SwapError> {
        self.advance(11)?;
        Self::party(seller, self.terms.seller)?;
        let tx = self.tx3.clone().expect("step 7 done");
        let out = &tx.base.outputs[0];
        if tx.witness.issuer_info[0].as_ref() != Some(&self.terms.issuer_info) || out.amount != self.terms.quantity {
            return Err(SwapError::TermsMismatch);
        }
        let txid = tx.txid();
        equity.submit(tx).map_err(SwapError::Chain)?;
        self.step = 11;
        self.state = SwapState::Tx3Posted;
        self.log(Some(11), equity.now(), "seller submits TX3 to the equity chain", Some(txid));
        Ok(())
    }

    /// Spend of TX3's escrow revealing `preimage`; exposed so callers can
    /// try wrong secrets.
    pub fn equity_claim_tx(&self, buyer: &KeyPair, preimage: Secret32) -> Option<Transaction> {
        let tx3 = self.tx3.as_ref()?;
        let info = tx3.witness.issuer_info[0].clone();
        let mut tx = spend_of(OutPoint::new(tx3.txid(), 0), self.terms.quantity, buyer.address, info.as_ref(), 0);
        let signer = buyer.attest(&tx.sighash().0);
        tx.witness.spends = vec![SpendProof::Preimage { preimage, signer }];
        Some(tx)
    }

    /// Step 12: the buyer takes the equity, publishing x.
    pub fn claim_equibits(&mut self, buyer: &KeyPair, equity: &mut impl ChainAccess) -> Result<Txid, SwapError> {
        Self::party(buyer, self.terms.buyer)?;
        if self.equity_claim.is_some() || self.equity_refund.is_some() {
            return Err(SwapError::AlreadyClaimed);
        }
        if self.step != 11 {
            return Err(SwapError::OutOfOrder {
                expected: self.step + 1,
                attempted: 12,
            });
        }
        let escrow_op = self.tx3_outpoint().expect("step 11 done");
        if equity.state().is_spent(&escrow_op) {
            return Err(SwapError::AlreadyClaimed);
        }
        let tx = self.equity_claim_tx(buyer, self.secret).expect("tx3 built");
        let txid = tx.txid();
        equity.submit(tx).map_err(SwapError::Chain)?;
        self.equity_claim = Some(txid);
        self.revealed = Some(self.secret);
        self.step = 12;
        self.state = SwapState::BuyerClaimed;
        self.log(Some(12), equity.now(), "buyer claims equity from TX3, revealing x", Some(txid));
        Ok(txid)
    }

    /// Reads x from the buyer's claim on the equity chain, as the seller must.
    pub fn find_revealed_secret(&self, equity: &ChainState) -> Option<Secret32> {
        let spender = equity.spender_of(&self.tx3_outpoint()?)?;
        equity
            .transaction(&spender)?
            .revealed_preimage()
            .filter(|x| hash(x.as_bytes()) == self.hashlock)
    }

    /// Step 13: the seller takes the payment with the revealed x.
    pub fn claim_payment(
        &mut self,
        seller: &KeyPair,
        payment: &mut impl ChainAccess,
        equity: &ChainState,
    ) -> Result<Txid, SwapError> {
        Self::party(seller, self.terms.seller)?;
        let escrow_op = self.tx1_outpoint().filter(|_| self.step >= 6).ok_or(SwapError::OutOfOrder {
            expected: self.step + 1,
            attempted: 13,
        })?;
        if self.payment_claim.is_some() || payment.state().is_spent(&escrow_op) {
            return Err(SwapError::AlreadyClaimed);
        }
        let x = self.find_revealed_secret(equity).ok_or(SwapError::NoPreimage)?;
        let mut tx = spend_of(escrow_op, self.terms.price, seller.address, None, 0);
        let signer = seller.attest(&tx.sighash().0);
        tx.witness.spends = vec![SpendProof::Preimage { preimage: x, signer }];
        let txid = tx.txid();
        payment.submit(tx).map_err(SwapError::Chain)?;
        self.payment_claim = Some(txid);
        self.revealed = Some(x);
        self.step = self.step.max(13);
        self.state = SwapState::Completed;
        self.log(Some(13), payment.now(), "seller claims payment from TX1 using x", Some(txid));
        Ok(txid)
    }

    /// Buyer posts the countersigned TX2.
    pub fn refund_payment(&mut self, buyer: &KeyPair, payment: &mut impl ChainAccess) -> Result<Txid, SwapError> {
        Self::party(buyer, self.terms.buyer)?;
        if self.step < 6 {
            return Err(SwapError::OutOfOrder {
                expected: self.step + 1,
                attempted: 6,
            });
        }
        let escrow_op = self.tx1_outpoint().expect("posted");
        if self.payment_refund.is_some() || payment.state().is_spent(&escrow_op) {
            return Err(SwapError::AlreadyClaimed);
        }
        let now = payment.now();
        if now < self.payment_unlock() {
            return Err(SwapError::TimelockNotExpired {
                unlock: self.payment_unlock(),
                now,
            });
        }
        let tx = self.tx2.clone().expect("countersigned before posting");
        let txid = tx.txid();
        payment.submit(tx).map_err(SwapError::Chain)?;
        self.payment_refund = Some(txid);
        if self.state != SwapState::BuyerClaimed {
            self.state = SwapState::RefundedPayment;
        }
        self.log(None, now, "buyer posts refund TX2", Some(txid));
        Ok(txid)
    }

    /// Seller posts the countersigned TX4.
    pub fn refund_equibits(&mut self, seller: &KeyPair, equity: &mut impl ChainAccess) -> Result<Txid, SwapError> {
        Self::party(seller, self.terms.seller)?;
        if self.step < 11 {
            return Err(SwapError::OutOfOrder {
                expected: self.step + 1,
                attempted: 11,
            });
        }
        let escrow_op = self.tx3_outpoint().expect("posted");
        if self.equity_refund.is_some() || equity.state().is_spent(&escrow_op) {
            return Err(SwapError::AlreadyClaimed);
        }
        let now = equity.now();
        if now < self.equity_unlock() {
            return Err(SwapError::TimelockNotExpired {
                unlock: self.equity_unlock(),
                now,
            });
        }
        let tx = self.tx4.clone().expect("countersigned before posting");
        let txid = tx.txid();
        equity.submit(tx).map_err(SwapError::Chain)?;
        self.equity_refund = Some(txid);
        self.state = SwapState::RefundedEquibit;
        self.log(None, now, "seller posts refund TX4", Some(txid));
        Ok(txid)
    }

    /// Marks a session that stopped before anything was published.
    pub fn abort(&mut self, now: u64) {
        if self.step < 6 {
            self.state = SwapState::AbortedClean;
            self.log(None, now, "abandoned before anything was broadcast", None);
        }
    }

    /// Runs steps 2 through 11 in order.
    pub fn run_to_escrow(
        &mut self,
        buyer: &KeyPair,
        seller: &KeyPair,
        payment: &mut impl ChainAccess,
        equity: &mut impl ChainAccess,
        lot: &IssuerInfo,
        passports: Vec<TrustEdge>,
    ) -> Result<(), SwapError> {
        self.build_tx1(buyer, payment)?;
        self.build_tx2(buyer, payment.now())?;
        self.send_tx2(buyer, payment.now())?;
        self.countersign_tx2(seller, payment.now())?;
        self.post_tx1(buyer, payment)?;
        self.build_tx3(seller, equity, lot, passports)?;
        self.build_tx4(seller, equity.now())?;
        self.send_tx4(seller, equity.now())?;
        self.countersign_tx4(buyer, equity.now())?;
        self.post_tx3(seller, equity)
    }
}
