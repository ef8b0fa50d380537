//! Off-chain bids and asks: posting, countering, expiry and the local trade
//! history. Settlement goes through an atomic swap session.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::crypto::{hash_parts, Address, Attestation, Digest256, KeyPair, PublicKey, Txid};
use crate::ledger::{known_issuances, ChainState, IssuanceKey, IssuerInfo, Tracer};
use crate::messaging::{compose, Body, Envelope, Kind, MessagingError, PowTarget};
use crate::passport::{validate_transfer, PassportDirectory, TransferDenial, TrustEdge};
use crate::swap::{SwapError, SwapSession, SwapTerms};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderError {
    #[error("invalid terms: {0}")]
    InvalidTerms(String),
    #[error("offer expired at {expiry}, now {now}")]
    OfferExpired { expiry: u64, now: u64 },
    #[error("offer already taken")]
    OfferTaken,
    #[error("buyer does not qualify: {0}")]
    BuyerNotQualified(TransferDenial),
    #[error("no authorization on chain for {0:?}")]
    UnknownIssuance(IssuanceKey),
    #[error("seller holds no lot covering {0} units")]
    SellerLacksUnits(u64),
    #[error("makers cannot take their own offers")]
    SelfTrade,
    #[error(transparent)]
    Swap(#[from] SwapError),
    #[error(transparent)]
    Messaging(#[from] MessagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

/// Payment units per equity unit, as a ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Price {
    pub num: u64,
    pub den: u64,
}

impl Price {
    pub fn new(num: u64, den: u64) -> Self {
        Price { num, den }
    }

    pub fn whole(units: u64) -> Self {
        Price { num: units, den: 1 }
    }

    /// Total payment for `quantity`, rounded up.
    pub fn total(&self, quantity: u64) -> Option<u64> {
        if self.den == 0 {
            return None;
        }
        let scaled = quantity as u128 * self.num as u128;
        u64::try_from(scaled.div_ceil(self.den as u128)).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OfferTerms {
    pub side: Side,
    pub issuer: Address,
    pub security_name: String,
    pub quantity: u64,
    pub price: Price,
    pub expiry: u64,
}

impl OfferTerms {
    pub fn issuance(&self) -> IssuanceKey {
        IssuanceKey {
            issuer: self.issuer,
            security_name: self.security_name.clone(),
        }
    }

    fn check(&self, now: u64) -> Result<u64, OrderError> {
        if self.quantity == 0 {
            return Err(OrderError::InvalidTerms("zero quantity".into()));
        }
        if self.expiry <= now {
            return Err(OrderError::InvalidTerms(format!("expiry {} is not after {now}", self.expiry)));
        }
        self.price
            .total(self.quantity)
            .ok_or_else(|| OrderError::InvalidTerms("price denominator is zero or total overflows".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Offer {
    pub terms: OfferTerms,
    pub maker: Address,
    pub created_at: u64,
    pub attestation: Attestation,
}

#[derive(Serialize)]
struct OfferClaim<'a> {
    domain: &'static str,
    terms: &'a OfferTerms,
    created_at: u64,
}

impl Offer {
    fn claim(terms: &OfferTerms, created_at: u64) -> Vec<u8> {
        canonical::to_vec(&OfferClaim {
            domain: "eqb-offer",
            terms,
            created_at,
        })
    }

    pub fn id(&self) -> Digest256 {
        canonical::digest(self)
    }

    pub fn signature_valid(&self) -> bool {
        self.attestation
            .verifies_for(&self.maker, &Self::claim(&self.terms, self.created_at))
    }

    pub fn is_live(&self, now: u64) -> bool {
        now < self.terms.expiry
    }

    /// (buyer, seller) when `taker` takes this offer.
    pub fn parties(&self, taker: Address) -> (Address, Address) {
        match self.terms.side {
            Side::Ask => (taker, self.maker),
            Side::Bid => (self.maker, taker),
        }
    }
}

/// Private reply proposing different terms for an offer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CounterOffer {
    pub offer_id: Digest256,
    pub responder: Address,
    pub terms: OfferTerms,
    pub created_at: u64,
    pub attestation: Attestation,
}

#[derive(Serialize)]
struct CounterClaim<'a> {
    domain: &'static str,
    offer_id: &'a Digest256,
    terms: &'a OfferTerms,
    created_at: u64,
}

impl CounterOffer {
    fn claim(offer_id: &Digest256, terms: &OfferTerms, created_at: u64) -> Vec<u8> {
        canonical::to_vec(&CounterClaim {
            domain: "eqb-counter",
            offer_id,
            terms,
            created_at,
        })
    }

    pub fn id(&self) -> Digest256 {
        canonical::digest(self)
    }

    pub fn signature_valid(&self) -> bool {
        self.attestation.verifies_for(
            &self.responder,
            &Self::claim(&self.offer_id, &self.terms, self.created_at),
        )
    }
}

/// Signs the offer and wraps it in a public envelope.
pub fn post_offer(
    maker: &KeyPair,
    terms: OfferTerms,
    now: u64,
    target: PowTarget,
) -> Result<(Offer, Envelope), OrderError> {
    terms.check(now)?;
    let offer = Offer {
        attestation: maker.attest(&Offer::claim(&terms, now)),
        terms,
        maker: maker.address,
        created_at: now,
    };
    let envelope = compose(maker, Kind::Public, &[], &Body::Offer(offer.clone()), now, target)?;
    Ok((offer, envelope))
}

/// Direct message to the maker. The countered terms keep the offer's side.
pub fn counter_offer(
    responder: &KeyPair,
    offer: &Offer,
    maker_key: &PublicKey,
    mut terms: OfferTerms,
    now: u64,
    target: PowTarget,
) -> Result<(CounterOffer, Envelope), OrderError> {
    if !offer.is_live(now) {
        return Err(OrderError::OfferExpired {
            expiry: offer.terms.expiry,
            now,
        });
    }
    terms.side = offer.terms.side;
    terms.check(now)?;
    let offer_id = offer.id();
    let counter = CounterOffer {
        attestation: responder.attest(&CounterOffer::claim(&offer_id, &terms, now)),
        offer_id,
        responder: responder.address,
        terms,
        created_at: now,
    };
    let envelope = compose(
        responder,
        Kind::Direct,
        std::slice::from_ref(maker_key),
        &Body::Counter(counter.clone()),
        now,
        target,
    )?;
    Ok((counter, envelope))
}

/// The seller's authentic lot of `issuance` holding at least `quantity`.
/// Largest lot first, ties by lot order.
pub fn seller_lot(chain: &ChainState, seller: &Address, issuance: &IssuanceKey, quantity: u64) -> Option<IssuerInfo> {
    let mut tracer = Tracer::new(chain);
    let mut lots: BTreeMap<IssuerInfo, u64> = BTreeMap::new();
    for (op, out) in chain.utxo() {
        let Some(info) = &out.issuer_info else { continue };
        if out.owner() != Some(*seller) || info.issuance() != *issuance {
            continue;
        }
        if tracer.verify(op) == Ok(crate::ledger::Authenticity::Authentic) {
            *lots.entry(info.clone()).or_default() += out.amount;
        }
    }
    lots.into_iter()
        .filter(|(_, held)| *held >= quantity)
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(info, _)| info)
}

/// What a taker needs to open a swap on an offer.
pub struct TradeContext<'a> {
    pub equity: &'a ChainState,
    pub directory: &'a PassportDirectory,
    /// The buyer's trust evidence, already gathered through the passport query.
    pub buyer_evidence: &'a [TrustEdge],
    pub now: u64,
}

pub fn initiate_trade(taker: Address, offer: &Offer, ctx: &TradeContext<'_>) -> Result<SwapSession, OrderError> {
    if taker == offer.maker {
        return Err(OrderError::SelfTrade);
    }
    let (buyer, seller) = offer.parties(taker);
    open_trade(buyer, seller, &offer.terms, offer.id(), ctx)
}

/// The maker accepts a counter: a swap opens on the countered terms with
/// the responder as counterparty.
pub fn accept_counter(
    offer: &Offer,
    counter: &CounterOffer,
    ctx: &TradeContext<'_>,
) -> Result<SwapSession, OrderError> {
    if counter.offer_id != offer.id() || !counter.signature_valid() {
        return Err(OrderError::InvalidTerms("counter does not answer this offer".into()));
    }
    if counter.responder == offer.maker {
        return Err(OrderError::SelfTrade);
    }
    if counter.terms.expiry <= ctx.now {
        return Err(OrderError::OfferExpired {
            expiry: counter.terms.expiry,
            now: ctx.now,
        });
    }
    let (buyer, seller) = offer.parties(counter.responder);
    open_trade(buyer, seller, &counter.terms, counter.id(), ctx)
}

fn open_trade(
    buyer: Address,
    seller: Address,
    terms: &OfferTerms,
    basis: Digest256,
    ctx: &TradeContext<'_>,
) -> Result<SwapSession, OrderError> {
    if terms.expiry <= ctx.now {
        return Err(OrderError::OfferExpired {
            expiry: terms.expiry,
            now: ctx.now,
        });
    }
    let payment = terms.check(ctx.now)?;
    let issuance = terms.issuance();
    if !known_issuances(ctx.equity).contains_key(&issuance) {
        return Err(OrderError::UnknownIssuance(issuance));
    }
    let lot = seller_lot(ctx.equity, &seller, &issuance, terms.quantity)
        .ok_or(OrderError::SellerLacksUnits(terms.quantity))?;
    validate_transfer(
        &lot.issuer_address,
        lot.restriction_level(),
        &seller,
        &buyer,
        ctx.buyer_evidence,
        ctx.directory,
        ctx.now,
    )
    .map_err(OrderError::BuyerNotQualified)?;
    let swap_terms = SwapTerms::new(buyer, seller, payment, terms.quantity, lot);
    let seed = hash_parts(&[b"eqb-trade", basis.as_bytes(), buyer.0.as_bytes(), seller.0.as_bytes()]);
    Ok(SwapSession::open(swap_terms, seed.as_bytes(), ctx.now)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OfferCheck {
    Verified,
    /// No authorization for the named issuance exists on chain.
    Unverifiable,
}

pub fn check_offer(offer: &Offer, equity: &ChainState) -> OfferCheck {
    if known_issuances(equity).contains_key(&offer.terms.issuance()) {
        OfferCheck::Verified
    } else {
        OfferCheck::Unverifiable
    }
}

/// One node's view of the public book.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderBook {
    pub offers: BTreeMap<Digest256, Offer>,
    pub taken: BTreeSet<Digest256>,
}

impl OrderBook {
    /// False for forged, expired or already-known offers.
    pub fn insert(&mut self, offer: Offer, now: u64) -> bool {
        if !offer.signature_valid() || !offer.is_live(now) {
            return false;
        }
        self.offers.insert(offer.id(), offer).is_none()
    }

    pub fn get(&self, id: &Digest256) -> Option<&Offer> {
        self.offers.get(id)
    }

    pub fn expire(&mut self, now: u64) -> Vec<Digest256> {
        let gone: Vec<Digest256> = self
            .offers
            .iter()
            .filter(|(_, o)| !o.is_live(now))
            .map(|(id, _)| *id)
            .collect();
        for id in &gone {
            self.offers.remove(id);
        }
        gone
    }

    pub fn live(&self, now: u64) -> impl Iterator<Item = &Offer> {
        self.offers.values().filter(move |o| o.is_live(now))
    }

    pub fn mark_taken(&mut self, id: Digest256) {
        self.taken.insert(id);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settlement {
    pub offer_id: Digest256,
    pub session: Digest256,
    pub buyer: Address,
    pub seller: Address,
    pub quantity: u64,
    pub payment: u64,
    pub equity_claim: Txid,
    pub payment_claim: Txid,
    pub settled_at: u64,
}

/// What a node saw and did, in arrival order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeLog {
    pub offers: Vec<(u64, Offer)>,
    pub counters: Vec<(u64, CounterOffer)>,
    pub settlements: Vec<Settlement>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub offers: Vec<HistoryOffer>,
    pub counters: usize,
    pub settlements: Vec<Settlement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryOffer {
    pub id: Digest256,
    pub side: Side,
    pub maker: Address,
    pub issuance: IssuanceKey,
    pub quantity: u64,
    pub price: Price,
    pub seen_at: u64,
    pub expiry: u64,
    pub taken: bool,
}

/// Distinct offers seen, counters exchanged and settlements whose equity
/// claim is confirmed on `equity`.
pub fn compile_history(log: &TradeLog, equity: &ChainState) -> History {
    let mut seen = BTreeSet::new();
    let settled: BTreeSet<Digest256> = log
        .settlements
        .iter()
        .filter(|s| equity.transaction(&s.equity_claim).is_some())
        .map(|s| s.offer_id)
        .collect();
    let offers = log
        .offers
        .iter()
        .filter(|(_, o)| seen.insert(o.id()))
        .map(|(at, o)| HistoryOffer {
            id: o.id(),
            side: o.terms.side,
            maker: o.maker,
            issuance: o.terms.issuance(),
            quantity: o.terms.quantity,
            price: o.terms.price,
            seen_at: *at,
            expiry: o.terms.expiry,
            taken: settled.contains(&o.id()),
        })
        .collect();
    History {
        offers,
        counters: log.counters.len(),
        settlements: log
            .settlements
            .iter()
            .filter(|s| equity.transaction(&s.equity_claim).is_some())
            .cloned()
            .collect(),
    }
}
