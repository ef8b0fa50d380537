use serde::Serialize;

use super::session::{ChainAccess, InstantChain, SwapError, SwapSession, SwapTerms, HOUR};
use crate::crypto::{hash, KeyPair};
use crate::ledger::{
    authorize, coins_of, transfer, ChainParams, ChainState, IssuerDescriptor, IssuerInfo, LockScript, SecurityType,
};
use crate::passport::{issue_passport, RestrictionLevel, DAY};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleParams {
    pub t0: u64,
    pub price: u64,
    pub quantity: u64,
    pub restriction_level: u8,
    pub payment_timelock: u64,
    pub equity_timelock: u64,
    /// Hours after t0 at which the halted parties act.
    pub offsets_h: Vec<u64>,
    /// Time after t0 at which every remaining legal action is taken.
    pub settle_after: u64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            t0: 1_483_228_800,
            price: 500,
            quantity: 100,
            restriction_level: 1,
            payment_timelock: 48 * HOUR,
            equity_timelock: 24 * HOUR,
            offsets_h: vec![0, 23, 25, 47, 49],
            settle_after: 100 * HOUR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Race {
    BuyerFirst,
    SellerFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    /// Halted before anything was broadcast; both chains untouched.
    NothingPosted,
    Completed,
    Refunded,
    /// One party ended with both assets because the other stayed idle while
    /// it had a way to secure its side.
    TimeoutForfeit,
    Violation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionRecord {
    pub time: u64,
    pub actor: &'static str,
    pub action: &'static str,
    pub result: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleResult {
    /// Protocol stopped before this step; 14 means it ran to completion.
    pub halt_before: u8,
    pub offset_h: u64,
    pub race: Race,
    pub outcome: Outcome,
    pub actions: Vec<ActionRecord>,
    /// Failed window or secrecy checks; empty when the schedule behaved.
    pub failures: Vec<String>,
    pub payment_snapshot: String,
    pub equity_snapshot: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleReport {
    pub params: ScheduleParams,
    pub results: Vec<ScheduleResult>,
}

impl ScheduleReport {
    pub fn violations(&self) -> Vec<&ScheduleResult> {
        self.results
            .iter()
            .filter(|r| r.outcome == Outcome::Violation || !r.failures.is_empty())
            .collect()
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.results.iter().filter(|r| r.outcome == outcome).count()
    }
}

struct Fixture {
    buyer: KeyPair,
    seller: KeyPair,
    payment: InstantChain,
    equity: InstantChain,
    lot: IssuerInfo,
    passports: Vec<crate::passport::TrustEdge>,
}

fn fixture(params: &ScheduleParams) -> Fixture {
    let key = |name: &str| crate::crypto::keypair_from_seed(&hash(name.as_bytes()).0);
    let buyer = key("schedule-buyer");
    let seller = key("schedule-seller");
    let issuer = key("schedule-issuer");
    let start = params.t0 - 10 * HOUR;

    let mut payment = InstantChain::new(ChainState::new(ChainParams::payment(start)), buyer.address);
    while coins_of(&payment.state, &buyer.address, None).iter().map(|c| c.1.amount).sum::<u64>() < params.price {
        payment.advance(600);
        payment.mine_empty();
    }

    let mut equity = InstantChain::new(ChainState::new(ChainParams::equity(start)), issuer.address);
    while coins_of(&equity.state, &issuer.address, None).iter().map(|c| c.1.amount).sum::<u64>() < params.quantity {
        equity.advance(600);
        equity.mine_empty();
    }
    let descriptor = IssuerDescriptor {
        company_name: "Schedule Co".into(),
        company_domicile: "Ontario".into(),
        security_name: "Common".into(),
        security_type: SecurityType::CommonShares,
        restriction_level: RestrictionLevel::new(params.restriction_level).expect("level 0..=3"),
    };
    let coins = coins_of(&equity.state, &issuer.address, None);
    let auth = authorize(&coins, &issuer, descriptor, params.quantity, 0).expect("funded");
    let lot = auth.witness.issuer_info[0].clone().expect("annotated");
    equity.advance(600);
    equity.submit(auth).expect("authorization valid");

    let now = equity.now;
    let to_seller = issue_passport(&issuer, seller.address, now, now + 365 * DAY).expect("future expiry");
    let to_buyer = issue_passport(&issuer, buyer.address, now, now + 365 * DAY).expect("future expiry");
    let tx = transfer(
        &equity.state,
        &issuer,
        Some(&lot),
        LockScript::pay_to(seller.address),
        params.quantity,
        0,
        vec![to_seller],
    )
    .expect("issuer holds the lot");
    equity.advance(600);
    equity.submit(tx).expect("seller is trusted");

    payment.set_time(params.t0);
    equity.set_time(params.t0);
    Fixture {
        buyer,
        seller,
        payment,
        equity,
        lot,
        passports: vec![to_buyer],
    }
}

fn describe(r: &Result<impl std::fmt::Debug, SwapError>) -> String {
    match r {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("{e:?}"),
    }
}

struct Run<'a> {
    f: Fixture,
    session: SwapSession,
    secret_hex: String,
    actions: Vec<ActionRecord>,
    failures: Vec<String>,
    params: &'a ScheduleParams,
}

impl Run<'_> {
    fn public_data_leaks_secret(&self) -> bool {
        self.f.payment.state.export().contains(&self.secret_hex) || self.f.equity.state.export().contains(&self.secret_hex)
    }

    fn check_secrecy(&mut self, when: &str) {
        if self.session.equity_claim.is_none() && self.public_data_leaks_secret() {
            self.failures.push(format!("secret visible before the claim ({when})"));
        }
    }

    fn step(&mut self, step: u8) -> Result<(), SwapError> {
        let f = &mut self.f;
        let s = &mut self.session;
        let r = match step {
            2 => s.build_tx1(&f.buyer, &f.payment).map(drop),
            3 => s.build_tx2(&f.buyer, f.payment.now).map(drop),
            4 => s.send_tx2(&f.buyer, f.payment.now),
            5 => s.countersign_tx2(&f.seller, f.payment.now),
            6 => s.post_tx1(&f.buyer, &mut f.payment),
            7 => s.build_tx3(&f.seller, &f.equity, &f.lot, f.passports.clone()).map(drop),
            8 => s.build_tx4(&f.seller, f.equity.now).map(drop),
            9 => s.send_tx4(&f.seller, f.equity.now),
            10 => s.countersign_tx4(&f.buyer, f.equity.now),
            11 => s.post_tx3(&f.seller, &mut f.equity),
            12 => s.claim_equibits(&f.buyer, &mut f.equity).map(drop),
            13 => s.claim_payment(&f.seller, &mut f.payment, &f.equity.state).map(drop),
            _ => unreachable!("steps 2..=13"),
        };
        self.check_secrecy(&format!("after step {step}"));
        r
    }

    fn set_time(&mut self, time: u64) {
        self.f.payment.set_time(time);
        self.f.equity.set_time(time);
    }

    fn record(&mut self, actor: &'static str, action: &'static str, result: String) {
        self.actions.push(ActionRecord {
            time: self.f.payment.now,
            actor,
            action,
            result,
        });
    }

    fn buyer_moves(&mut self) -> (String, String) {
        let claim = if self.session.step >= 11 {
            let r = self.session.claim_equibits(&self.f.buyer, &mut self.f.equity);
            describe(&r)
        } else {
            "unavailable".to_string()
        };
        self.record("buyer", "claim TX3", claim.clone());
        let refund = if self.session.step >= 6 {
            describe(&self.session.refund_payment(&self.f.buyer, &mut self.f.payment))
        } else {
            "unavailable".to_string()
        };
        self.record("buyer", "refund TX2", refund.clone());
        (claim, refund)
    }

    fn seller_moves(&mut self) -> (String, String) {
        let claim = if self.session.step >= 6 {
            let r = self.session.claim_payment(&self.f.seller, &mut self.f.payment, &self.f.equity.state);
            describe(&r)
        } else {
            "unavailable".to_string()
        };
        self.record("seller", "claim TX1", claim.clone());
        let refund = if self.session.step >= 11 {
            describe(&self.session.refund_equibits(&self.f.seller, &mut self.f.equity))
        } else {
            "unavailable".to_string()
        };
        self.record("seller", "refund TX4", refund.clone());
        (claim, refund)
    }

    fn both_move(&mut self, race: Race) -> [(String, String); 2] {
        match race {
            Race::BuyerFirst => {
                let b = self.buyer_moves();
                let s = self.seller_moves();
                [b, s]
            }
            Race::SellerFirst => {
                let s = self.seller_moves();
                let b = self.buyer_moves();
                [b, s]
            }
        }
    }
}

fn event_time(session: &SwapSession, txid: Option<crate::crypto::Txid>) -> Option<u64> {
    let txid = txid?;
    session.events.iter().find(|e| e.txid == Some(txid)).map(|e| e.time)
}

fn classify(run: &Run<'_>, nothing_posted: bool) -> Outcome {
    let s = &run.session;
    if nothing_posted {
        return Outcome::NothingPosted;
    }
    let tx3_posted = s.step >= 11;
    let buyer_equity = s.equity_claim.is_some();
    let seller_payment = s.payment_claim.is_some();
    let buyer_payment = s.payment_refund.is_some();
    let seller_equity = s.equity_refund.is_some() || !tx3_posted;

    match (buyer_equity, seller_payment, buyer_payment, seller_equity) {
        (true, true, false, false) => Outcome::Completed,
        (false, false, true, true) => Outcome::Refunded,
        (true, false, true, false) => {
            // The seller loses at the later of the two buyer moves. It was
            // secured if the equity refund unlocked, or x was public, before then.
            let claim_at = event_time(s, s.equity_claim).expect("claimed");
            let refund_at = event_time(s, s.payment_refund).expect("refunded");
            let lost_at = claim_at.max(refund_at);
            let could_refund = claim_at > s.equity_unlock();
            let could_claim = claim_at < lost_at || claim_at < s.payment_unlock();
            if could_refund || could_claim {
                Outcome::TimeoutForfeit
            } else {
                Outcome::Violation
            }
        }
        _ => Outcome::Violation,
    }
}

fn window_checks(run: &Run<'_>, halt: u8, offset: u64, race: Race, first: &[(String, String); 2]) -> Vec<String> {
    let s = &run.session;
    let mut failures = Vec::new();
    let (buyer, seller) = (&first[0], &first[1]);
    let t = run.params.t0 + offset;
    match halt {
        ..=6 => {}
        7..=11 => {
            let expected_ok = t >= s.payment_unlock();
            if (buyer.1 == "ok") != expected_ok {
                failures.push(format!("payment refund at +{}h: {}", offset / HOUR, buyer.1));
            }
        }
        12 => {
            if race == Race::SellerFirst {
                let expected_ok = t >= s.equity_unlock();
                if (seller.1 == "ok") != expected_ok {
                    failures.push(format!("equity refund at +{}h: {}", offset / HOUR, seller.1));
                }
            }
        }
        13 => {
            let buyer_refund_wins = race == Race::BuyerFirst && t >= s.payment_unlock();
            if buyer_refund_wins != (buyer.1 == "ok") || buyer_refund_wins == (seller.0 == "ok") {
                failures.push(format!("after step 12 at +{}h: buyer {}, seller {}", offset / HOUR, buyer.1, seller.0));
            }
        }
        _ => {
            if buyer.0 == "ok" || seller.0 == "ok" || buyer.1 == "ok" || seller.1 == "ok" {
                failures.push("completed session still had a live action".into());
            }
        }
    }
    failures
}

fn run_schedule(params: &ScheduleParams, base: &Fixture, halt: u8, offset_h: u64, race: Race) -> ScheduleResult {
    let mut terms = SwapTerms::new(
        base.buyer.address,
        base.seller.address,
        params.price,
        params.quantity,
        base.lot.clone(),
    );
    terms.payment_timelock = params.payment_timelock;
    terms.equity_timelock = params.equity_timelock;
    let seed = format!("schedule-{halt}-{offset_h}-{race:?}");
    let session = SwapSession::open(terms, seed.as_bytes(), params.t0).expect("default timelocks are ordered");
    let secret_hex = session.secret_for(&base.buyer).expect("buyer").to_hex();
    let f = Fixture {
        buyer: base.buyer.clone(),
        seller: base.seller.clone(),
        payment: base.payment.clone(),
        equity: base.equity.clone(),
        lot: base.lot.clone(),
        passports: base.passports.clone(),
    };
    let pre_payment = f.payment.state.export();
    let pre_equity = f.equity.state.export();
    let mut run = Run {
        f,
        session,
        secret_hex,
        actions: Vec::new(),
        failures: Vec::new(),
        params,
    };

    for step in 2..halt.min(14) {
        if let Err(e) = run.step(step) {
            run.failures.push(format!("step {step} failed: {e}"));
        }
    }
    if halt <= 6 {
        run.session.abort(params.t0);
    }
    let payment_snapshot = run.f.payment.state.export();
    let equity_snapshot = run.f.equity.state.export();

    run.set_time(params.t0 + offset_h * HOUR);
    let first = run.both_move(race);
    let mut failures = window_checks(&run, halt, offset_h * HOUR, race, &first);

    run.set_time(params.t0 + params.settle_after);
    run.both_move(race);

    let nothing_posted = run.f.payment.state.export() == pre_payment && run.f.equity.state.export() == pre_equity;
    if halt <= 6 && !nothing_posted {
        failures.push("chains changed although the protocol halted before step 6".into());
    }
    let outcome = classify(&run, nothing_posted);
    failures.append(&mut run.failures);
    ScheduleResult {
        halt_before: halt,
        offset_h,
        race,
        outcome,
        actions: run.actions,
        failures,
        payment_snapshot,
        equity_snapshot,
    }
}

/// Drives a fresh session to every halt point, for every clock offset and
/// race order, and classifies each terminal state.
pub fn enumerate_schedules(params: &ScheduleParams) -> ScheduleReport {
    let base = fixture(params);
    let mut results = Vec::new();
    for halt in 1..=14u8 {
        for &offset in &params.offsets_h {
            for race in [Race::BuyerFirst, Race::SellerFirst] {
                results.push(run_schedule(params, &base, halt, offset, race));
            }
        }
    }
    ScheduleReport {
        params: params.clone(),
        results,
    }
}
