mod common;

use common::*;
use equibit_core::crypto::{Address, KeyPair};
use equibit_core::ledger::{transfer, ChainParams, ChainState, IssuerInfo, LockScript};
use equibit_core::messaging::{Body, DeliveryResult, Kind, Mailbox, PowTarget};
use equibit_core::orderbook::*;
use equibit_core::passport::{issue_passport, PassportDirectory, TransferDenial, DAY};
use equibit_core::swap::{InstantChain, SwapState};
use proptest::prelude::*;

struct Market {
    issuer: KeyPair,
    seller: KeyPair,
    buyer: KeyPair,
    equity: ChainState,
    lot: IssuerInfo,
    now: u64,
}

/// Seller holds 100 units of the issuer's "Common" at `level`.
fn market(level: u8) -> Market {
    let (issuer, seller, buyer) = (kp("issuer"), kp("seller"), kp("buyer"));
    let mut equity = equity_chain();
    let (lot, _) = issue(&mut equity, &issuer, "Common", level, 100);
    let trust = issue_passport(&issuer, seller.address, equity.tip_time(), equity.tip_time() + 365 * DAY).unwrap();
    let tx = transfer(&equity, &issuer, Some(&lot), LockScript::pay_to(seller.address), 100, 0, vec![trust]).unwrap();
    mine(&mut equity, issuer.address, &[tx]);
    let now = equity.tip_time() + 60;
    Market {
        issuer,
        seller,
        buyer,
        equity,
        lot,
        now,
    }
}

fn ask(m: &Market, quantity: u64, price: Price, expiry: u64) -> OfferTerms {
    OfferTerms {
        side: Side::Ask,
        issuer: m.issuer.address,
        security_name: "Common".into(),
        quantity,
        price,
        expiry,
    }
}

fn ctx<'a>(m: &'a Market, dir: &'a PassportDirectory, now: u64) -> TradeContext<'a> {
    TradeContext {
        equity: &m.equity,
        directory: dir,
        buyer_evidence: &[],
        now,
    }
}

#[test]
fn posted_offer_is_public_and_visible() {
    let m = market(0);
    let (offer, env) = post_offer(&m.seller, ask(&m, 10, Price::whole(5), m.now + DAY), m.now, PowTarget::DEFAULT).unwrap();
    assert_eq!(env.kind, Kind::Public);
    assert!(env.recipients.is_empty());
    assert_eq!(env.public_body(), Some(Body::Offer(offer.clone())));

    let mut mb = Mailbox::new(PowTarget::DEFAULT);
    assert_eq!(mb.deliver(&env, &[], m.now).result, DeliveryResult::Ingested);
    assert_eq!(mb.live_offers(m.now), vec![offer.clone()]);
    assert_eq!(check_offer(&offer, &m.equity), OfferCheck::Verified);

    let mut book = OrderBook::default();
    assert!(book.insert(offer.clone(), m.now));
    assert!(!book.insert(offer.clone(), m.now));
    assert_eq!(book.live(m.now).count(), 1);
    assert_eq!(book.expire(m.now + DAY), vec![offer.id()]);
    assert_eq!(book.live(m.now + DAY).count(), 0);
}

#[test]
fn offer_with_past_expiry_is_invalid() {
    let m = market(0);
    for expiry in [m.now - 1, m.now] {
        assert!(matches!(
            post_offer(&m.seller, ask(&m, 10, Price::whole(5), expiry), m.now, PowTarget::ANY),
            Err(OrderError::InvalidTerms(_))
        ));
    }
    assert!(matches!(
        post_offer(&m.seller, ask(&m, 0, Price::whole(5), m.now + 1), m.now, PowTarget::ANY),
        Err(OrderError::InvalidTerms(_))
    ));
    assert!(matches!(
        post_offer(&m.seller, ask(&m, 1, Price::new(1, 0), m.now + 1), m.now, PowTarget::ANY),
        Err(OrderError::InvalidTerms(_))
    ));
}

#[test]
fn offer_for_unknown_issuance_is_unverifiable() {
    let m = market(0);
    let mut terms = ask(&m, 10, Price::whole(5), m.now + DAY);
    terms.security_name = "Ghost".into();
    let (offer, _) = post_offer(&m.seller, terms, m.now, PowTarget::ANY).unwrap();
    assert_eq!(check_offer(&offer, &m.equity), OfferCheck::Unverifiable);
    let dir = PassportDirectory::new();
    assert!(matches!(
        initiate_trade(m.buyer.address, &offer, &ctx(&m, &dir, m.now)),
        Err(OrderError::UnknownIssuance(_))
    ));
}

#[test]
fn forged_offer_is_not_booked() {
    let m = market(0);
    let (mut offer, _) = post_offer(&m.seller, ask(&m, 10, Price::whole(5), m.now + DAY), m.now, PowTarget::ANY).unwrap();
    offer.terms.quantity = 99;
    assert!(!offer.signature_valid());
    assert!(!OrderBook::default().insert(offer, m.now));
}

#[test]
fn counter_travels_as_direct_message_to_maker() {
    let m = market(0);
    let (offer, _) = post_offer(&m.seller, ask(&m, 10, Price::whole(5), m.now + DAY), m.now, PowTarget::ANY).unwrap();
    let mut terms = ask(&m, 10, Price::new(9, 2), m.now + DAY);
    terms.side = Side::Bid;
    let (counter, env) = counter_offer(&m.buyer, &offer, &m.seller.public_key, terms, m.now + 5, PowTarget::DEFAULT).unwrap();
    assert_eq!(env.kind, Kind::Direct);
    assert_eq!(env.recipients, vec![m.seller.address]);
    assert_eq!(counter.terms.side, Side::Ask);
    assert_eq!(counter.terms.price, Price::new(9, 2));
    assert_eq!(counter.offer_id, offer.id());

    let mut maker = Mailbox::new(PowTarget::DEFAULT);
    let d = maker.deliver(&env, std::slice::from_ref(&m.seller), m.now + 5);
    assert_eq!(d.result, DeliveryResult::DecryptedAndConfirmed);
    assert_eq!(d.body, Some(Body::Counter(counter)));
    let mut bystander = Mailbox::new(PowTarget::DEFAULT);
    assert_eq!(bystander.deliver(&env, &[kp("bystander")], m.now + 5).result, DeliveryResult::NotForMe);
}

#[test]
fn counter_to_expired_offer_fails() {
    let m = market(0);
    let expiry = m.now + DAY;
    let (offer, _) = post_offer(&m.seller, ask(&m, 10, Price::whole(5), expiry), m.now, PowTarget::ANY).unwrap();
    let r = counter_offer(&m.buyer, &offer, &m.seller.public_key, ask(&m, 10, Price::new(9, 2), expiry + DAY), expiry, PowTarget::ANY);
    assert_eq!(r.unwrap_err(), OrderError::OfferExpired { expiry, now: expiry });
}

#[test]
fn taking_unrestricted_offer_opens_swap() {
    let m = market(0);
    let (offer, _) = post_offer(&m.seller, ask(&m, 10, Price::new(9, 2), m.now + DAY), m.now, PowTarget::ANY).unwrap();
    let dir = PassportDirectory::new();
    let s = initiate_trade(m.buyer.address, &offer, &ctx(&m, &dir, m.now + 10)).unwrap();
    assert_eq!(s.state, SwapState::Init);
    assert_eq!(s.terms.buyer, m.buyer.address);
    assert_eq!(s.terms.seller, m.seller.address);
    assert_eq!(s.terms.quantity, 10);
    assert_eq!(s.terms.price, 45);
    assert_eq!(s.terms.issuer_info, m.lot);
    assert_eq!(s.t0, m.now + 10);
    assert_eq!(
        initiate_trade(m.seller.address, &offer, &ctx(&m, &dir, m.now)).unwrap_err(),
        OrderError::SelfTrade
    );
}

#[test]
fn bid_taker_is_the_seller() {
    let m = market(0);
    let mut terms = ask(&m, 10, Price::whole(3), m.now + DAY);
    terms.side = Side::Bid;
    let (offer, _) = post_offer(&m.buyer, terms, m.now, PowTarget::ANY).unwrap();
    let dir = PassportDirectory::new();
    let s = initiate_trade(m.seller.address, &offer, &ctx(&m, &dir, m.now)).unwrap();
    assert_eq!((s.terms.buyer, s.terms.seller), (m.buyer.address, m.seller.address));
    assert_eq!(s.terms.price, 30);
}

#[test]
fn restricted_offer_needs_qualified_buyer() {
    let m = market(2);
    let (offer, _) = post_offer(&m.seller, ask(&m, 10, Price::whole(5), m.now + DAY), m.now, PowTarget::ANY).unwrap();
    let dir = PassportDirectory::new();
    assert_eq!(
        initiate_trade(m.buyer.address, &offer, &ctx(&m, &dir, m.now)).unwrap_err(),
        OrderError::BuyerNotQualified(TransferDenial::NoDirectTrust)
    );
    let pass = issue_passport(&m.issuer, m.buyer.address, m.now, m.now + 30 * DAY).unwrap();
    let evidence = [pass];
    let qualified = TradeContext {
        buyer_evidence: &evidence,
        ..ctx(&m, &dir, m.now)
    };
    assert!(initiate_trade(m.buyer.address, &offer, &qualified).is_ok());
}

#[test]
fn expired_offer_cannot_be_taken() {
    let m = market(0);
    let expiry = m.now + DAY;
    let (offer, _) = post_offer(&m.seller, ask(&m, 10, Price::whole(5), expiry), m.now, PowTarget::ANY).unwrap();
    let dir = PassportDirectory::new();
    assert_eq!(
        initiate_trade(m.buyer.address, &offer, &ctx(&m, &dir, expiry + 1)).unwrap_err(),
        OrderError::OfferExpired { expiry, now: expiry + 1 }
    );
}

#[test]
fn seller_without_units_cannot_sell() {
    let m = market(0);
    let (offer, _) = post_offer(&m.seller, ask(&m, 101, Price::whole(5), m.now + DAY), m.now, PowTarget::ANY).unwrap();
    let dir = PassportDirectory::new();
    assert_eq!(
        initiate_trade(m.buyer.address, &offer, &ctx(&m, &dir, m.now)).unwrap_err(),
        OrderError::SellerLacksUnits(101)
    );
}

#[test]
fn accepted_counter_swaps_on_countered_terms() {
    let m = market(0);
    let (offer, _) = post_offer(&m.seller, ask(&m, 10, Price::whole(5), m.now + DAY), m.now, PowTarget::ANY).unwrap();
    let (counter, _) =
        counter_offer(&m.buyer, &offer, &m.seller.public_key, ask(&m, 8, Price::new(9, 2), m.now + DAY), m.now, PowTarget::ANY)
            .unwrap();
    let dir = PassportDirectory::new();
    let s = accept_counter(&offer, &counter, &ctx(&m, &dir, m.now + 1)).unwrap();
    assert_eq!(s.terms.quantity, 8);
    assert_eq!(s.terms.price, 36);
    assert_eq!(s.terms.buyer, m.buyer.address);
    let direct = initiate_trade(m.buyer.address, &offer, &ctx(&m, &dir, m.now + 1)).unwrap();
    assert_ne!(direct.hashlock, s.hashlock);

    let (other, _) = post_offer(&m.seller, ask(&m, 3, Price::whole(5), m.now + DAY), m.now, PowTarget::ANY).unwrap();
    assert!(matches!(
        accept_counter(&other, &counter, &ctx(&m, &dir, m.now)),
        Err(OrderError::InvalidTerms(_))
    ));
}

/// Runs a trade on `offer` to completion and returns its settlement.
fn settle(m: &mut Market, offer: &Offer) -> Settlement {
    let dir = PassportDirectory::new();
    let mut s = initiate_trade(m.buyer.address, offer, &ctx(m, &dir, m.now)).unwrap();
    let mut payment_state = ChainState::new(ChainParams::payment(T0));
    mine_empty(&mut payment_state, m.buyer.address, 12);
    let miner = kp("miner").address;
    let mut payment = InstantChain::new(payment_state, miner);
    let mut equity = InstantChain::new(m.equity.clone(), miner);
    payment.set_time(m.now + 600);
    equity.set_time(m.now + 600);
    let lot = m.lot.clone();
    s.run_to_escrow(&m.buyer, &m.seller, &mut payment, &mut equity, &lot, vec![])
        .unwrap();
    s.claim_equibits(&m.buyer, &mut equity).unwrap();
    let equity_state = equity.state.clone();
    s.claim_payment(&m.seller, &mut payment, &equity_state).unwrap();
    assert_eq!(s.state, SwapState::Completed);
    m.equity = equity.state;
    Settlement {
        offer_id: offer.id(),
        session: s.id,
        buyer: s.terms.buyer,
        seller: s.terms.seller,
        quantity: s.terms.quantity,
        payment: s.terms.price,
        equity_claim: s.equity_claim.unwrap(),
        payment_claim: s.payment_claim.unwrap(),
        settled_at: equity.now,
    }
}

#[test]
fn history_lists_offers_and_confirmed_settlements() {
    let mut m = market(0);
    let offers: Vec<Offer> = (1..=3)
        .map(|q| post_offer(&m.seller, ask(&m, q * 2, Price::whole(5), m.now + DAY), m.now, PowTarget::ANY).unwrap().0)
        .collect();
    let pre_trade = m.equity.clone();
    let settlement = settle(&mut m, &offers[1]);
    let mut log = TradeLog::default();
    for o in &offers {
        log.offers.push((m.now, o.clone()));
    }
    log.offers.push((m.now + 5, offers[0].clone()));
    log.settlements.push(settlement.clone());

    let h = compile_history(&log, &m.equity);
    assert_eq!(h.offers.len(), 3);
    assert_eq!(h.settlements, vec![settlement]);
    let taken: Vec<bool> = h.offers.iter().map(|o| o.taken).collect();
    assert_eq!(taken, vec![false, true, false]);
    assert_eq!(h.offers[1].quantity, 4);

    // A chain that never saw the claim shows no settlement.
    assert!(compile_history(&log, &pre_trade).settlements.is_empty());
}

#[test]
fn fresh_node_has_empty_history() {
    let m = market(0);
    assert_eq!(compile_history(&TradeLog::default(), &m.equity), History::default());
}

#[test]
fn seller_lot_prefers_largest_authentic_lot() {
    let m = market(0);
    let lot = seller_lot(&m.equity, &m.seller.address, &m.lot.issuance(), 50).unwrap();
    assert_eq!(lot, m.lot);
    assert_eq!(seller_lot(&m.equity, &m.seller.address, &m.lot.issuance(), 101), None);
    let stranger: Address = kp("stranger").address;
    assert_eq!(seller_lot(&m.equity, &stranger, &m.lot.issuance(), 1), None);
}

proptest! {
    #[test]
    fn price_total_is_ceiling(q in 1u64..1_000_000, num in 0u64..1_000_000, den in 1u64..1000) {
        let total = Price::new(num, den).total(q).unwrap();
        let exact = q as u128 * num as u128;
        prop_assert!(total as u128 * den as u128 >= exact);
        prop_assert!((total as u128) * (den as u128) < exact + den as u128);
    }
}
