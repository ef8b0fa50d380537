use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::scenario::{Action, ChainSel, Scenario, ScopeSpec, SimConfig};
use super::transcript::{ChainSummary, Checkpoint, LogEntry, NodeSummary, OfferRecord, SwapSummary, Transcript, WorldSummary};
use super::SimError;
use crate::canonical;
use crate::crypto::{hash_parts, keypair_from_seed, Address, Digest256, KeyDirectory, KeyPair, Txid};
use crate::governance::{
    allocate_dividend, create_poll, parse_poll, snapshot_holders, tabulate, Ballot, DistributionPlan,
    PaymentAddressRecord, Poll, ProxyDesignation, ProxyScope, SAMPLE_POLL,
};
use crate::ledger::{
    authorize, cancel, coins_of, issuer_summary, select_coins, sign_transaction, transfer, Authenticity, ChainKind,
    ChainParams, ChainState, IssuanceKey, IssuerDescriptor, LockScript, Payment, Reject, SecurityType, Tracer,
    Transaction,
};
use crate::messaging::{compose, Body, Confirmation, Delivery, Envelope, Kind, Mailbox, PowTarget};
use crate::orderbook::{
    accept_counter, counter_offer, initiate_trade, post_offer, seller_lot, CounterOffer, Offer, OfferTerms, OrderBook,
    Settlement, TradeContext, TradeLog,
};
use crate::passport::{
    degrees_of_trust, issue_passport, revoke_passport, PassportDirectory, RestrictionLevel, TrustEdge, DAY,
};
use crate::swap::{ChainAccess, SwapSession, SwapState, HOUR};

/// A poll this node issued, with the ballots it has received.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollRecord {
    pub poll: Poll,
    pub snapshot: BTreeMap<Address, u64>,
    pub ballots: Vec<Ballot>,
}

#[derive(Debug, Clone)]
pub struct SimNode {
    pub name: String,
    pub keys: KeyPair,
    pub mailbox: Mailbox,
    pub directory: PassportDirectory,
    pub book: OrderBook,
    pub trade_log: TradeLog,
    pub equity_height: u64,
    pub payment_height: u64,
    pub online: bool,
    pub offline_until: Option<u64>,
    /// Store fingerprint taken when the node went offline.
    offline_fingerprint: Option<Digest256>,
    /// Passports this node issued, for revocation.
    pub issued: Vec<TrustEdge>,
    /// Polls received, by guid.
    pub polls: BTreeMap<String, Poll>,
    pub counters: BTreeMap<Digest256, CounterOffer>,
    pub issued_polls: BTreeMap<String, PollRecord>,
    /// Swap labels this node has stopped taking part in.
    pub halted: BTreeSet<String>,
}

impl SimNode {
    fn fingerprint(&self) -> Digest256 {
        let ids: Vec<&Digest256> = self.mailbox.store.keys().collect();
        canonical::digest(&(ids, &self.directory, self.mailbox.seen.len()))
    }
}

#[derive(Debug, Clone)]
pub struct SwapRecord {
    pub label: String,
    pub basis: Digest256,
    pub session: SwapSession,
    pub buyer: usize,
    pub seller: usize,
    logged: usize,
    last_error: Option<String>,
    pub settled: bool,
}

enum Packet {
    Envelope(Envelope),
    Confirmation(Confirmation),
}

struct InFlight {
    due: u64,
    to: usize,
    packet: Packet,
}

/// Read access to a chain plus a shared mempool, as one swap party sees it.
struct PoolChain<'a> {
    state: &'a ChainState,
    pool: &'a mut Vec<Transaction>,
    now: u64,
    passports: &'a PassportDirectory,
}

impl ChainAccess for PoolChain<'_> {
    fn state(&self) -> &ChainState {
        self.state
    }

    fn now(&self) -> u64 {
        self.now
    }

    fn submit(&mut self, tx: Transaction) -> Result<(), Reject> {
        let pending: BTreeSet<_> = self.pool.iter().flat_map(|t| t.base.inputs.iter().copied()).collect();
        if let Some(op) = tx.base.inputs.iter().find(|op| pending.contains(op)) {
            return Err(Reject::DoubleSpend { outpoint: *op });
        }
        self.state.check_transaction(&tx, self.now, self.passports)?;
        self.pool.push(tx);
        Ok(())
    }
}

/// The simulated network: two chains, their mempools and every node.
pub struct World {
    pub config: SimConfig,
    pub seed: u64,
    pub target: PowTarget,
    pub tick: u64,
    pub equity: ChainState,
    pub payment: ChainState,
    pub equity_pool: Vec<Transaction>,
    pub payment_pool: Vec<Transaction>,
    pub nodes: Vec<SimNode>,
    by_name: BTreeMap<String, usize>,
    by_address: BTreeMap<Address, usize>,
    pub keys: KeyDirectory,
    in_flight: Vec<InFlight>,
    pub offers: BTreeMap<String, OfferRecord>,
    pub counter_labels: BTreeMap<String, CounterOffer>,
    pub swaps: BTreeMap<String, SwapRecord>,
    pub log: Vec<LogEntry>,
    pub checkpoints: Vec<Checkpoint>,
    tx_origin: BTreeMap<Txid, String>,
    fresh_blocks: Vec<u64>,
}

pub fn node_keys(seed: u64, name: &str) -> KeyPair {
    keypair_from_seed(&hash_parts(&[b"eqb-sim-node", &seed.to_be_bytes(), name.as_bytes()]).0)
}

impl World {
    pub fn new(scenario: &Scenario) -> World {
        let c = &scenario.config;
        let params = |kind| ChainParams {
            kind,
            supply_cap: c.supply_cap,
            subsidy: c.subsidy,
            genesis_time: c.genesis_time,
        };
        let target = PowTarget { bits: c.pow_bits };
        let mut keys = KeyDirectory::default();
        let mut by_name = BTreeMap::new();
        let mut by_address = BTreeMap::new();
        let nodes = scenario
            .nodes
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let kp = node_keys(scenario.seed, name);
                keys.insert(kp.public_key);
                by_name.insert(name.clone(), i);
                by_address.insert(kp.address, i);
                SimNode {
                    name: name.clone(),
                    keys: kp,
                    mailbox: Mailbox::new(target),
                    directory: PassportDirectory::new(),
                    book: OrderBook::default(),
                    trade_log: TradeLog::default(),
                    equity_height: 0,
                    payment_height: 0,
                    online: true,
                    offline_until: None,
                    offline_fingerprint: None,
                    issued: Vec::new(),
                    polls: BTreeMap::new(),
                    counters: BTreeMap::new(),
                    issued_polls: BTreeMap::new(),
                    halted: BTreeSet::new(),
                }
            })
            .collect();
        World {
            config: c.clone(),
            seed: scenario.seed,
            target,
            tick: 0,
            equity: ChainState::new(params(ChainKind::Equity)),
            payment: ChainState::new(params(ChainKind::Payment)),
            equity_pool: Vec::new(),
            payment_pool: Vec::new(),
            nodes,
            by_name,
            by_address,
            keys,
            in_flight: Vec::new(),
            offers: BTreeMap::new(),
            counter_labels: BTreeMap::new(),
            swaps: BTreeMap::new(),
            log: Vec::new(),
            checkpoints: Vec::new(),
            tx_origin: BTreeMap::new(),
            fresh_blocks: Vec::new(),
        }
    }

    pub fn now(&self) -> u64 {
        self.config.genesis_time + self.tick * HOUR
    }

    pub fn node(&self, name: &str) -> &SimNode {
        &self.nodes[self.by_name[name]]
    }

    pub fn address_of(&self, name: &str) -> Address {
        self.node(name).keys.address
    }

    pub fn name_of(&self, address: &Address) -> String {
        self.by_address
            .get(address)
            .map(|i| self.nodes[*i].name.clone())
            .unwrap_or_else(|| address.short())
    }

    fn record(&mut self, actor: &str, event: &str, detail: Value) {
        self.log.push(LogEntry {
            tick: self.tick,
            time: self.now(),
            actor: actor.to_string(),
            event: event.to_string(),
            detail,
        });
    }

    fn fail(&mut self, actor: &str, action: &str, reason: impl ToString) {
        self.record(actor, "failed", json!({"action": action, "reason": reason.to_string()}));
    }

    // ---- tick phases -------------------------------------------------

    /// Brings back nodes whose offline period has ended.
    pub fn rejoin_due(&mut self) -> Result<(), SimError> {
        let now = self.now();
        for i in 0..self.nodes.len() {
            if self.nodes[i].online || self.nodes[i].offline_until.is_some_and(|t| t > now) {
                continue;
            }
            if self.nodes[i].offline_fingerprint != Some(self.nodes[i].fingerprint()) {
                return Err(self.violation("offline-isolation", format!("{} changed while offline", self.nodes[i].name)));
            }
            let node = &mut self.nodes[i];
            node.online = true;
            node.offline_until = None;
            node.offline_fingerprint = None;
            let caught_up = (self.equity.height() - node.equity_height, self.payment.height() - node.payment_height);
            node.equity_height = self.equity.height();
            node.payment_height = self.payment.height();
            let name = node.name.clone();
            let watermark = node.directory.watermark;
            let keys = node.keys.clone();
            let mut mailbox = std::mem::take(&mut self.nodes[i].mailbox);
            let peers: Vec<&Mailbox> = self
                .nodes
                .iter()
                .enumerate()
                .filter(|(j, n)| *j != i && n.online)
                .map(|(_, n)| &n.mailbox)
                .collect();
            let synced = mailbox.rejoin_sync(&peers, std::slice::from_ref(&keys), watermark, now);
            self.nodes[i].mailbox = mailbox;
            match synced {
                Ok(deliveries) => {
                    let fresh = deliveries.iter().filter(|d| d.body.is_some()).count();
                    self.record(
                        &name,
                        "rejoin",
                        json!({"equity_blocks": caught_up.0, "payment_blocks": caught_up.1,
                               "offered": deliveries.len(), "new": fresh, "watermark": watermark}),
                    );
                    for d in deliveries {
                        self.absorb(i, d, None);
                    }
                }
                Err(e) => self.record(&name, "rejoin", json!({"error": e.to_string()})),
            }
        }
        Ok(())
    }

    pub fn dispatch(&mut self, index: usize, actor: &str, action: &Action) {
        let i = self.by_name[actor];
        if !self.nodes[i].online {
            self.record(actor, "skipped", json!({"index": index, "reason": "offline"}));
            return;
        }
        match action {
            Action::Mine { blocks, chain } => {
                for _ in 0..*blocks {
                    self.produce(*chain, i);
                }
            }
            Action::Authorize {
                security,
                level,
                amount,
                fee,
            } => self.do_authorize(i, security, *level, *amount, *fee),
            Action::Transfer {
                to,
                issuer,
                security,
                amount,
                fee,
                chain,
            } => self.do_transfer(i, to, issuer.as_deref().zip(security.as_deref()), *amount, *fee, *chain),
            Action::Cancel { issuer, security, fee } => self.do_cancel(i, issuer, security, *fee),
            Action::IssuePassport { to, days } => self.do_issue_passport(i, to, *days),
            Action::RevokePassport { trustee } => self.do_revoke(i, trustee),
            Action::PostOffer {
                label,
                side,
                issuer,
                security,
                quantity,
                price,
                expires_in_h,
            } => {
                let terms = OfferTerms {
                    side: *side,
                    issuer: self.address_of(issuer),
                    security_name: security.clone(),
                    quantity: *quantity,
                    price: *price,
                    expiry: self.now() + expires_in_h * HOUR,
                };
                self.do_post_offer(i, label, terms)
            }
            Action::Counter {
                label,
                offer,
                quantity,
                price,
                expires_in_h,
            } => self.do_counter(i, label, offer, *quantity, *price, *expires_in_h),
            Action::TakeOffer { offer, swap } => self.do_take(i, offer, swap),
            Action::AcceptCounter { counter, swap } => self.do_accept_counter(i, counter, swap),
            Action::Halt { swap } => {
                self.nodes[i].halted.insert(swap.clone());
                self.record(actor, "halt", json!({"swap": swap}));
            }
            Action::RegisterPaymentAddress { currency } => {
                let kp = self.nodes[i].keys.clone();
                let record = PaymentAddressRecord::new(&kp, currency, kp.address, self.now());
                self.publish(i, Body::PaymentAddress(record), "register_payment_address");
            }
            Action::DesignateProxy { proxy, scope } => {
                let scope = match scope {
                    ScopeSpec::General => ProxyScope::General,
                    ScopeSpec::Issuer(n) => ProxyScope::SpecificIssuer(self.address_of(n)),
                    ScopeSpec::Poll(g) => ProxyScope::SpecificPoll(g.clone()),
                };
                let kp = self.nodes[i].keys.clone();
                let d = ProxyDesignation::new(&kp, self.address_of(proxy), scope, self.now());
                self.publish(i, Body::Proxy(d), "designate_proxy");
            }
            Action::CreatePoll {
                guid,
                security,
                close_in_h,
                description,
            } => self.do_create_poll(i, guid, security, *close_in_h, description.as_deref()),
            Action::Vote { poll, voter, answers } => self.do_vote(i, poll, voter.as_deref(), answers),
            Action::Tabulate { poll } => self.do_tabulate(i, poll),
            Action::Distribute {
                security,
                gross,
                currency,
                record_at_h,
            } => self.do_distribute(i, security, *gross, currency, *record_at_h),
            Action::GoOffline { hours } => {
                if *hours == 0 {
                    self.record(actor, "offline", json!({"hours": 0}));
                    return;
                }
                let until = self.now() + hours * HOUR;
                let node = &mut self.nodes[i];
                node.online = false;
                node.offline_until = Some(until);
                node.offline_fingerprint = Some(node.fingerprint());
                self.record(actor, "offline", json!({"hours": hours, "until": until}));
            }
            Action::Note { to, text } => {
                let recipients: Vec<usize> = to.iter().map(|n| self.by_name[n]).collect();
                let kind = if recipients.len() == 1 { Kind::Direct } else { Kind::Group };
                self.send_private(i, kind, &recipients, Body::Note(text.clone()), "note");
            }
            Action::Checkpoint { label } => {
                let summary = self.summary();
                let digest = canonical::digest(&summary);
                self.checkpoints.push(Checkpoint {
                    label: label.clone(),
                    tick: self.tick,
                    digest,
                    state: summary,
                });
                self.record(actor, "checkpoint", json!({"label": label, "digest": digest}));
            }
        }
    }

    /// Moves every swap as far as its online, willing parties can take it.
    pub fn advance_swaps(&mut self) {
        let labels: Vec<String> = self.swaps.keys().cloned().collect();
        for label in labels {
            let mut rec = self.swaps.remove(&label).expect("listed");
            self.step_swap(&mut rec);
            self.swaps.insert(label, rec);
        }
    }

    /// Delivers packets due this tick to online nodes.
    pub fn deliver(&mut self) {
        let now = self.now();
        let tick = self.tick;
        let (due, later): (Vec<InFlight>, Vec<InFlight>) =
            std::mem::take(&mut self.in_flight).into_iter().partition(|p| p.due <= tick);
        self.in_flight = later;
        for item in due {
            let to = item.to;
            if !self.nodes[to].online {
                let id = match &item.packet {
                    Packet::Envelope(e) => e.message_id(),
                    Packet::Confirmation(c) => c.message_id,
                };
                let name = self.nodes[to].name.clone();
                self.record(&name, "dropped", json!({"message": id}));
                continue;
            }
            match item.packet {
                Packet::Envelope(env) => {
                    let keys = self.nodes[to].keys.clone();
                    let d = self.nodes[to].mailbox.deliver(&env, std::slice::from_ref(&keys), now);
                    self.absorb(to, d, Some(&env));
                }
                Packet::Confirmation(c) => {
                    if self.nodes[to].mailbox.confirm(&c) {
                        let name = self.nodes[to].name.clone();
                        let by = self.name_of(&c.confirmer);
                        self.record(&name, "confirmed", json!({"message": c.message_id, "by": by}));
                    }
                }
            }
        }
    }

    /// Mines pending transactions on both chains; the miner rotates among
    /// online nodes.
    pub fn produce_pending(&mut self) {
        let online: Vec<usize> = (0..self.nodes.len()).filter(|i| self.nodes[*i].online).collect();
        if online.is_empty() {
            return;
        }
        for chain in [ChainSel::Equity, ChainSel::Payment] {
            let (state, pool) = self.chain(chain);
            if pool.is_empty() {
                continue;
            }
            let miner = online[(state.height() as usize) % online.len()];
            self.produce(chain, miner);
        }
    }

    pub fn gc(&mut self) {
        let now = self.now();
        for node in self.nodes.iter_mut().filter(|n| n.online) {
            node.mailbox.retention_gc(now);
            node.book.expire(now);
        }
    }

    pub fn rebroadcast(&mut self) {
        let now = self.now();
        for i in 0..self.nodes.len() {
            if !self.nodes[i].online {
                continue;
            }
            for env in self.nodes[i].mailbox.rebroadcast_tick(now) {
                let id = env.message_id();
                let pending: Vec<Address> = self.nodes[i].mailbox.outbox[&id].pending.keys().copied().collect();
                let name = self.nodes[i].name.clone();
                let to: Vec<String> = pending.iter().map(|a| self.name_of(a)).collect();
                self.record(&name, "rebroadcast", json!({"message": id, "to": to}));
                for a in pending {
                    if let Some(j) = self.by_address.get(&a).copied() {
                        self.queue(j, Packet::Envelope(env.clone()));
                    }
                }
            }
        }
    }

    pub fn check_invariants(&mut self) -> Result<(), SimError> {
        if !self.equity.conservation_holds() || !self.payment.conservation_holds() {
            return Err(self.violation("conservation", "UTXO sum differs from cumulative subsidy".into()));
        }
        let mut tracer = Tracer::new(&self.equity);
        for h in std::mem::take(&mut self.fresh_blocks) {
            let block = &self.equity.blocks()[h as usize];
            for tx in block.all_transactions() {
                let txid = tx.txid();
                for (vout, out) in tx.outputs() {
                    if out.issuer_info.is_some()
                        && tracer.verify(&crate::ledger::OutPoint::new(txid, vout)) != Ok(Authenticity::Authentic)
                    {
                        let detail = format!("{txid}:{vout} at height {h} is not authentic");
                        return Err(self.violation("authenticity", detail));
                    }
                }
            }
        }
        for rec in self.swaps.values() {
            let s = &rec.session;
            let on_equity = |t: &Option<Txid>| t.is_some_and(|t| self.equity.transaction(&t).is_some());
            let on_payment = |t: &Option<Txid>| t.is_some_and(|t| self.payment.transaction(&t).is_some());
            if (on_equity(&s.equity_claim) && on_payment(&s.payment_refund))
                || (on_payment(&s.payment_claim) && on_equity(&s.equity_refund))
            {
                let detail = format!("swap {} left one party with both assets", rec.label);
                return Err(self.violation("swap-atomicity", detail));
            }
        }
        for n in self.nodes.iter().filter(|n| n.online) {
            if n.equity_height != self.equity.height() || n.payment_height != self.payment.height() {
                let detail = format!("{} is online but behind the tip", n.name);
                return Err(self.violation("chain-view", detail));
            }
        }
        Ok(())
    }

    /// When every node is online, all of them hold the same public state.
    pub fn check_convergence(&mut self) -> Result<(), SimError> {
        if self.nodes.iter().any(|n| !n.online) {
            return Ok(());
        }
        let now = self.now();
        let views: Vec<Digest256> = self.nodes.iter().map(|n| public_view_digest(&n.mailbox, now)).collect();
        if let Some(pos) = views.iter().position(|v| *v != views[0]) {
            let detail = format!("{} and {} disagree on public state", self.nodes[0].name, self.nodes[pos].name);
            return Err(self.violation("convergence", detail));
        }
        Ok(())
    }

    fn violation(&self, property: &str, detail: String) -> SimError {
        SimError::Invariant {
            property: property.to_string(),
            tick: self.tick,
            detail,
        }
    }

    // ---- plumbing ----------------------------------------------------

    fn chain(&self, sel: ChainSel) -> (&ChainState, &Vec<Transaction>) {
        match sel {
            ChainSel::Equity => (&self.equity, &self.equity_pool),
            ChainSel::Payment => (&self.payment, &self.payment_pool),
        }
    }

    fn produce(&mut self, sel: ChainSel, miner: usize) {
        let now = self.now();
        let miner_addr = self.nodes[miner].keys.address;
        let passports = &self.nodes[miner].directory;
        let (state, pool) = match sel {
            ChainSel::Equity => (&mut self.equity, &mut self.equity_pool),
            ChainSel::Payment => (&mut self.payment, &mut self.payment_pool),
        };
        let produced = state.produce_block(pool, miner_addr, now, passports);
        let included: BTreeSet<Txid> = produced.block.transactions.iter().map(Transaction::txid).collect();
        let rejected: BTreeSet<Txid> = produced.rejected.iter().map(|(t, _)| *t).collect();
        pool.retain(|tx| {
            let id = tx.txid();
            !included.contains(&id) && !rejected.contains(&id)
        });
        state
            .apply_block(produced.block, passports)
            .expect("a produced block applies to its own parent");
        let height = state.height();
        if sel == ChainSel::Equity {
            self.fresh_blocks.push(height);
        }
        for n in self.nodes.iter_mut().filter(|n| n.online) {
            match sel {
                ChainSel::Equity => n.equity_height = height,
                ChainSel::Payment => n.payment_height = height,
            }
        }
        let name = self.nodes[miner].name.clone();
        let chain = match sel {
            ChainSel::Equity => "equity",
            ChainSel::Payment => "payment",
        };
        self.record(
            &name,
            "block",
            json!({"chain": chain, "height": height, "txs": included, "deferred": produced.deferred.len()}),
        );
        for (txid, reject) in produced.rejected {
            let origin = self.tx_origin.get(&txid).cloned().unwrap_or_default();
            self.record(&origin, "tx_rejected", json!({"chain": chain, "txid": txid, "reason": reject.to_string()}));
        }
    }

    fn submit(&mut self, i: usize, sel: ChainSel, tx: Transaction, what: &str) -> Txid {
        let txid = tx.txid();
        let name = self.nodes[i].name.clone();
        self.tx_origin.insert(txid, name.clone());
        match sel {
            ChainSel::Equity => self.equity_pool.push(tx),
            ChainSel::Payment => self.payment_pool.push(tx),
        }
        self.record(&name, what, json!({"txid": txid}));
        txid
    }

    fn queue(&mut self, to: usize, packet: Packet) {
        self.in_flight.push(InFlight {
            due: self.tick + 1,
            to,
            packet,
        });
    }

    fn publish(&mut self, i: usize, body: Body, what: &str) -> Option<Envelope> {
        let kp = self.nodes[i].keys.clone();
        let env = match compose(&kp, Kind::Public, &[], &body, self.now(), self.target) {
            Ok(env) => env,
            Err(e) => {
                let name = self.nodes[i].name.clone();
                self.fail(&name, what, e);
                return None;
            }
        };
        self.send(i, env.clone(), what, (0..self.nodes.len()).filter(|j| *j != i).collect());
        Some(env)
    }

    fn send_private(&mut self, i: usize, kind: Kind, to: &[usize], body: Body, what: &str) -> Option<Envelope> {
        let kp = self.nodes[i].keys.clone();
        let pks: Vec<_> = to.iter().map(|j| self.nodes[*j].keys.public_key).collect();
        match compose(&kp, kind, &pks, &body, self.now(), self.target) {
            Ok(env) => {
                self.send(i, env.clone(), what, to.to_vec());
                Some(env)
            }
            Err(e) => {
                let name = self.nodes[i].name.clone();
                self.fail(&name, what, e);
                None
            }
        }
    }

    fn send(&mut self, i: usize, env: Envelope, what: &str, to: Vec<usize>) {
        let now = self.now();
        self.nodes[i].mailbox.send(&env, now);
        if env.kind == Kind::Public {
            if let Some(body) = env.public_body() {
                self.apply_body(i, body, &env);
            }
        }
        let name = self.nodes[i].name.clone();
        let names: Vec<String> = to.iter().map(|j| self.nodes[*j].name.clone()).collect();
        let detail = if env.kind == Kind::Public {
            json!({"kind": env.kind, "subtype": env.subtype, "message": env.message_id(), "nonce": env.nonce})
        } else {
            json!({"kind": env.kind, "message": env.message_id(), "to": names, "nonce": env.nonce})
        };
        self.record(&name, what, detail);
        for j in to {
            self.queue(j, Packet::Envelope(env.clone()));
        }
    }

    fn absorb(&mut self, i: usize, d: Delivery, env: Option<&Envelope>) {
        for c in d.confirmations {
            if let Some(j) = self.by_address.get(&c.to).copied() {
                self.queue(j, Packet::Confirmation(c));
            }
        }
        let Some(body) = d.body else { return };
        let sender = env.map(|e| e.sender);
        let name = self.nodes[i].name.clone();
        let from = sender.map(|s| self.name_of(&s)).unwrap_or_default();
        self.record(&name, "received", json!({"from": from, "body": body_kind(&body)}));
        let env = env.cloned();
        self.apply_body_inner(i, body, env.as_ref());
    }

    fn apply_body(&mut self, i: usize, body: Body, env: &Envelope) {
        self.apply_body_inner(i, body, Some(env));
    }

    fn apply_body_inner(&mut self, i: usize, body: Body, _env: Option<&Envelope>) {
        let now = self.now();
        let me = self.nodes[i].keys.address;
        let node = &mut self.nodes[i];
        match body {
            Body::Passport(edge) => {
                if edge.trustee == me {
                    node.directory.store(edge);
                }
            }
            Body::Revocation(r) => {
                node.directory.record_revocation(r);
            }
            Body::Offer(o) => {
                if node.book.insert(o.clone(), now) {
                    node.trade_log.offers.push((now, o));
                }
            }
            Body::Counter(c) => {
                node.trade_log.counters.push((now, c.clone()));
                node.counters.insert(c.id(), c);
            }
            Body::Poll(p) => {
                node.polls.insert(p.guid.clone(), p);
            }
            Body::Ballot(b) => {
                if let Some(rec) = node.issued_polls.get_mut(&b.poll_guid) {
                    rec.ballots.push(b);
                }
            }
            Body::Note(_) | Body::PaymentAddress(_) | Body::Proxy(_) => {}
        }
    }

    /// Passport evidence for `buyer`: what the buyer's node holds plus one
    /// query hop to the buyer's trusters that are online.
    fn evidence_for(&self, buyer: Address, issuer: &Address) -> Vec<TrustEdge> {
        let Some(b) = self.by_address.get(&buyer).copied() else {
            return Vec::new();
        };
        let node = &self.nodes[b];
        let presented = node.directory.passports_of(&buyer);
        let query = |truster: &Address| -> Vec<TrustEdge> {
            match self.by_address.get(truster).map(|j| &self.nodes[*j]) {
                Some(n) if n.online => n.directory.passports_of(truster),
                _ => Vec::new(),
            }
        };
        degrees_of_trust(issuer, &buyer, &presented, query, &node.directory, self.now()).edges
    }

    fn issuance(&self, issuer: &str, security: &str) -> IssuanceKey {
        IssuanceKey {
            issuer: self.address_of(issuer),
            security_name: security.to_string(),
        }
    }

    // ---- actions -----------------------------------------------------

    fn do_authorize(&mut self, i: usize, security: &str, level: u8, amount: u64, fee: u64) {
        let kp = self.nodes[i].keys.clone();
        let name = self.nodes[i].name.clone();
        let descriptor = IssuerDescriptor {
            company_name: format!("{name} Holdings"),
            company_domicile: "Delaware".into(),
            security_name: security.to_string(),
            security_type: SecurityType::CommonShares,
            restriction_level: RestrictionLevel::new(level).expect("checked in script"),
        };
        let coins = coins_of(&self.equity, &kp.address, None);
        match authorize(&coins, &kp, descriptor, amount, fee) {
            Ok(tx) => {
                let txid = self.submit(i, ChainSel::Equity, tx, "authorize");
                self.record(&name, "issuance", json!({"security": security, "level": level, "amount": amount, "txid": txid}));
            }
            Err(e) => self.fail(&name, "authorize", e),
        }
    }

    fn do_transfer(&mut self, i: usize, to: &str, lot: Option<(&str, &str)>, amount: u64, fee: u64, sel: ChainSel) {
        let kp = self.nodes[i].keys.clone();
        let name = self.nodes[i].name.clone();
        let dest = self.address_of(to);
        let (state, _) = self.chain(sel);
        let built = match lot {
            None => transfer(state, &kp, None, LockScript::pay_to(dest), amount, fee, Vec::new()),
            Some((issuer, security)) => {
                let issuance = self.issuance(issuer, security);
                let Some(info) = seller_lot(&self.equity, &kp.address, &issuance, amount) else {
                    self.fail(&name, "transfer", format!("no lot of {security} covering {amount}"));
                    return;
                };
                let passports = if info.restriction_level().get() > 0 {
                    self.evidence_for(dest, &info.issuer_address)
                } else {
                    Vec::new()
                };
                transfer(&self.equity, &kp, Some(&info), LockScript::pay_to(dest), amount, fee, passports)
            }
        };
        match built {
            Ok(tx) => {
                self.submit(i, sel, tx, "transfer");
            }
            Err(e) => self.fail(&name, "transfer", e),
        }
    }

    fn do_cancel(&mut self, i: usize, issuer: &str, security: &str, fee: u64) {
        let kp = self.nodes[i].keys.clone();
        let name = self.nodes[i].name.clone();
        let issuance = self.issuance(issuer, security);
        let Some(info) = seller_lot(&self.equity, &kp.address, &issuance, 1) else {
            self.fail(&name, "cancel", format!("holds no {security}"));
            return;
        };
        let units = coins_of(&self.equity, &kp.address, Some(&info));
        let fee_inputs = if fee > 0 {
            match select_coins(&coins_of(&self.equity, &kp.address, None), fee) {
                Ok((c, _)) => c,
                Err(e) => return self.fail(&name, "cancel", e),
            }
        } else {
            Vec::new()
        };
        match cancel(&units, &fee_inputs, fee, &kp) {
            Ok(tx) => {
                self.submit(i, ChainSel::Equity, tx, "cancel");
            }
            Err(e) => self.fail(&name, "cancel", e),
        }
    }

    fn do_issue_passport(&mut self, i: usize, to: &str, days: u64) {
        let kp = self.nodes[i].keys.clone();
        let now = self.now();
        let j = self.by_name[to];
        match issue_passport(&kp, self.nodes[j].keys.address, now, now + days * DAY) {
            Ok(edge) => {
                self.nodes[i].issued.push(edge.clone());
                self.send_private(i, Kind::Direct, &[j], Body::Passport(edge), "issue_passport");
            }
            Err(e) => {
                let name = self.nodes[i].name.clone();
                self.fail(&name, "issue_passport", e);
            }
        }
    }

    fn do_revoke(&mut self, i: usize, trustee: &str) {
        let kp = self.nodes[i].keys.clone();
        let name = self.nodes[i].name.clone();
        let who = self.address_of(trustee);
        let Some(edge) = self.nodes[i].issued.iter().rev().find(|e| e.trustee == who).cloned() else {
            return self.fail(&name, "revoke_passport", format!("never trusted {trustee}"));
        };
        match revoke_passport(&kp, &edge, self.now()) {
            Ok(r) => {
                self.publish(i, Body::Revocation(r), "revoke_passport");
            }
            Err(e) => self.fail(&name, "revoke_passport", e),
        }
    }

    fn do_post_offer(&mut self, i: usize, label: &str, terms: OfferTerms) {
        let kp = self.nodes[i].keys.clone();
        let name = self.nodes[i].name.clone();
        let now = self.now();
        match post_offer(&kp, terms, now, self.target) {
            Ok((offer, env)) => {
                self.offers.insert(
                    label.to_string(),
                    OfferRecord {
                        label: label.to_string(),
                        id: offer.id(),
                        maker: name.clone(),
                        side: offer.terms.side,
                        issuer: self.name_of(&offer.terms.issuer),
                        security: offer.terms.security_name.clone(),
                        quantity: offer.terms.quantity,
                        price: offer.terms.price,
                        posted_at: now,
                        expiry: offer.terms.expiry,
                        taken_at: None,
                    },
                );
                self.send(i, env, "post_offer", (0..self.nodes.len()).filter(|j| *j != i).collect());
            }
            Err(e) => self.fail(&name, "post_offer", e),
        }
    }

    fn offer_seen_by(&self, i: usize, label: &str) -> Option<Offer> {
        let id = self.offers.get(label)?.id;
        self.nodes[i].book.get(&id).cloned()
    }

    fn do_counter(&mut self, i: usize, label: &str, offer: &str, quantity: u64, price: crate::orderbook::Price, hours: u64) {
        let kp = self.nodes[i].keys.clone();
        let name = self.nodes[i].name.clone();
        let now = self.now();
        let Some(o) = self.offer_seen_by(i, offer) else {
            return self.fail(&name, "counter", format!("offer {offer} not in book"));
        };
        let maker = self.by_address[&o.maker];
        let terms = OfferTerms {
            quantity,
            price,
            expiry: now + hours * HOUR,
            ..o.terms.clone()
        };
        match counter_offer(&kp, &o, &self.nodes[maker].keys.public_key, terms, now, self.target) {
            Ok((counter, env)) => {
                self.counter_labels.insert(label.to_string(), counter.clone());
                self.nodes[i].trade_log.counters.push((now, counter));
                self.send(i, env, "counter", vec![maker]);
            }
            Err(e) => self.fail(&name, "counter", e),
        }
    }

    fn open_swap(&mut self, label: &str, basis: Digest256, mut session: SwapSession, taker: usize, maker: usize) {
        session.terms.payment_timelock = self.config.payment_timelock_h * HOUR;
        session.terms.equity_timelock = self.config.equity_timelock_h * HOUR;
        let buyer = self.by_address[&session.terms.buyer];
        let seller = self.by_address[&session.terms.seller];
        let taker_name = self.nodes[taker].name.clone();
        self.record(
            &taker_name,
            "swap_opened",
            json!({"swap": label, "buyer": self.nodes[buyer].name, "seller": self.nodes[seller].name,
                   "quantity": session.terms.quantity, "price": session.terms.price, "hashlock": session.hashlock}),
        );
        self.send_private(taker, Kind::Direct, &[maker], Body::Note(format!("trade {basis}")), "trade_notice");
        self.swaps.insert(
            label.to_string(),
            SwapRecord {
                label: label.to_string(),
                basis,
                session,
                buyer,
                seller,
                logged: 0,
                last_error: None,
                settled: false,
            },
        );
    }

    fn do_take(&mut self, i: usize, offer: &str, swap: &str) {
        let name = self.nodes[i].name.clone();
        let now = self.now();
        let Some(o) = self.offer_seen_by(i, offer) else {
            return self.fail(&name, "take_offer", format!("offer {offer} not in book"));
        };
        if self.offers[offer].taken_at.is_some() {
            return self.fail(&name, "take_offer", crate::orderbook::OrderError::OfferTaken);
        }
        let me = self.nodes[i].keys.address;
        let (buyer, _) = o.parties(me);
        let evidence = self.evidence_for(buyer, &o.terms.issuer);
        let ctx = TradeContext {
            equity: &self.equity,
            directory: &self.nodes[i].directory,
            buyer_evidence: &evidence,
            now,
        };
        match initiate_trade(me, &o, &ctx) {
            Ok(session) => {
                self.offers.get_mut(offer).expect("known").taken_at = Some(now);
                let maker = self.by_address[&o.maker];
                self.open_swap(swap, o.id(), session, i, maker);
            }
            Err(e) => self.fail(&name, "take_offer", e),
        }
    }

    fn do_accept_counter(&mut self, i: usize, counter: &str, swap: &str) {
        let name = self.nodes[i].name.clone();
        let now = self.now();
        let Some(c) = self.counter_labels.get(counter).cloned() else {
            return self.fail(&name, "accept_counter", format!("counter {counter} was never sent"));
        };
        if !self.nodes[i].counters.contains_key(&c.id()) {
            return self.fail(&name, "accept_counter", format!("counter {counter} not received"));
        }
        let Some(label) = self.offers.iter().find(|(_, r)| r.id == c.offer_id).map(|(l, _)| l.clone()) else {
            return self.fail(&name, "accept_counter", "unknown offer");
        };
        let Some(o) = self.offer_seen_by(i, &label) else {
            return self.fail(&name, "accept_counter", format!("offer {label} not in book"));
        };
        let (buyer, _) = o.parties(c.responder);
        let evidence = self.evidence_for(buyer, &o.terms.issuer);
        let ctx = TradeContext {
            equity: &self.equity,
            directory: &self.nodes[i].directory,
            buyer_evidence: &evidence,
            now,
        };
        match accept_counter(&o, &c, &ctx) {
            Ok(session) => {
                self.offers.get_mut(&label).expect("known").taken_at = Some(now);
                let responder = self.by_address[&c.responder];
                self.open_swap(swap, c.id(), session, i, responder);
            }
            Err(e) => self.fail(&name, "accept_counter", e),
        }
    }

    fn do_create_poll(&mut self, i: usize, guid: &str, security: &str, close_in_h: u64, description: Option<&str>) {
        let kp = self.nodes[i].keys.clone();
        let name = self.nodes[i].name.clone();
        let now = self.now();
        let mut poll = parse_poll(SAMPLE_POLL)
            .expect("sample poll parses")
            .with_close_at(now + close_in_h * HOUR);
        poll.guid = guid.to_string();
        poll.issuer_id = kp.address.to_hex();
        if let Some(d) = description {
            poll.description = d.to_string();
        }
        let record_time = self.equity.tip_time().min(now);
        let snapshot = match snapshot_holders(&self.equity, &kp.address, security, record_time) {
            Ok(s) => s,
            Err(e) => return self.fail(&name, "create_poll", e),
        };
        let designations = self.nodes[i].mailbox.registry().live_proxies();
        match create_poll(&kp, &poll, &snapshot, &designations, &self.keys, now, self.target) {
            Ok(env) => {
                let to: Vec<usize> = env.recipients.iter().filter_map(|a| self.by_address.get(a).copied()).collect();
                self.nodes[i].issued_polls.insert(
                    guid.to_string(),
                    PollRecord {
                        poll,
                        snapshot,
                        ballots: Vec::new(),
                    },
                );
                self.send(i, env, "create_poll", to);
            }
            Err(e) => self.fail(&name, "create_poll", e),
        }
    }

    fn do_vote(&mut self, i: usize, guid: &str, voter: Option<&str>, answers: &[u32]) {
        let kp = self.nodes[i].keys.clone();
        let name = self.nodes[i].name.clone();
        let Some(poll) = self.nodes[i].polls.get(guid).cloned() else {
            return self.fail(&name, "vote", format!("poll {guid} not received"));
        };
        let voter = voter.map(|v| self.address_of(v)).unwrap_or(kp.address);
        let Some(issuer) = poll.issuer_address().and_then(|a| self.by_address.get(&a).copied()) else {
            return self.fail(&name, "vote", "issuer unknown");
        };
        let ballot = Ballot::new(&kp, guid, voter, answers.to_vec(), self.now());
        self.send_private(i, Kind::Direct, &[issuer], Body::Ballot(ballot), "vote");
    }

    fn do_tabulate(&mut self, i: usize, guid: &str) {
        let name = self.nodes[i].name.clone();
        let Some(rec) = self.nodes[i].issued_polls.get(guid).cloned() else {
            return self.fail(&name, "tabulate", format!("{name} did not issue poll {guid}"));
        };
        let designations = self.nodes[i].mailbox.registry().live_proxies();
        match tabulate(&rec.poll, &rec.ballots, &designations, &rec.snapshot, self.now()) {
            Ok(t) => {
                let audit: Vec<Value> = t
                    .audit
                    .iter()
                    .map(|a| json!({"voter": self.name_of(&a.voter), "caster": self.name_of(&a.caster), "status": a.status}))
                    .collect();
                self.record(&name, "tabulation", json!({"poll": guid, "totals": t.totals, "audit": audit}));
            }
            Err(e) => self.fail(&name, "tabulate", e),
        }
    }

    fn do_distribute(&mut self, i: usize, security: &str, gross: u64, currency: &str, record_at_h: Option<u64>) {
        let kp = self.nodes[i].keys.clone();
        let name = self.nodes[i].name.clone();
        let now = self.now();
        let record_time = record_at_h
            .map(|h| self.config.genesis_time + h * HOUR)
            .unwrap_or(now)
            .min(self.equity.tip_time());
        let snapshot = match snapshot_holders(&self.equity, &kp.address, security, record_time) {
            Ok(s) => s,
            Err(e) => return self.fail(&name, "distribute", e),
        };
        let plan = DistributionPlan {
            issuer: kp.address,
            security_name: security.to_string(),
            record_time,
            gross,
        };
        let registry = self.nodes[i].mailbox.registry().payment_addresses(currency);
        let alloc = match allocate_dividend(&plan, &snapshot, &registry) {
            Ok(a) => a,
            Err(e) => return self.fail(&name, "distribute", e),
        };
        let paid: Vec<Value> = alloc
            .paid
            .iter()
            .map(|(h, _, amt)| json!({"holder": self.name_of(h), "amount": amt}))
            .collect();
        let withheld: Vec<Value> = alloc
            .withheld
            .iter()
            .map(|(h, amt)| json!({"holder": self.name_of(h), "amount": amt}))
            .collect();
        let snap: BTreeMap<String, u64> = snapshot.iter().map(|(a, u)| (self.name_of(a), *u)).collect();
        self.record(
            &name,
            "dividend",
            json!({"security": security, "record_time": record_time, "gross": gross,
                   "snapshot": snap, "paid": paid, "withheld": withheld}),
        );
        let total = alloc.paid_total();
        if total == 0 {
            return;
        }
        let coins = coins_of(&self.payment, &kp.address, None);
        let (inputs, available) = match select_coins(&coins, total) {
            Ok(x) => x,
            Err(e) => return self.fail(&name, "distribute", e),
        };
        let mut payments: Vec<Payment> = alloc.paid.iter().map(|(_, to, amt)| Payment::blank(*to, *amt)).collect();
        payments.push(Payment::blank(kp.address, available - total));
        let outpoints: Vec<_> = inputs.iter().map(|(op, _)| *op).collect();
        let tx = sign_transaction(&outpoints, payments, 0, 0, Vec::new(), &kp);
        self.submit(i, ChainSel::Payment, tx, "dividend_payment");
    }

    // ---- swaps -------------------------------------------------------

    fn step_swap(&mut self, rec: &mut SwapRecord) {
        let now = self.now();
        let active = |w: &World, n: usize| w.nodes[n].online && !w.nodes[n].halted.contains(&rec.label);
        let buyer_on = active(self, rec.buyer);
        let seller_on = active(self, rec.seller);
        let buyer = self.nodes[rec.buyer].keys.clone();
        let seller = self.nodes[rec.seller].keys.clone();
        let evidence = self.evidence_for(buyer.address, &rec.session.terms.issuer_info.issuer_address);
        let lot = rec.session.terms.issuer_info.clone();
        let confirmed_pay = |w: &World, t: Option<Txid>| t.is_some_and(|t| w.payment.transaction(&t).is_some());
        let confirmed_eq = |w: &World, t: Option<Txid>| t.is_some_and(|t| w.equity.transaction(&t).is_some());
        let in_pool = |pool: &[Transaction], t: Option<Txid>| t.is_some_and(|t| pool.iter().any(|x| x.txid() == t));

        let World {
            equity,
            payment,
            equity_pool,
            payment_pool,
            nodes,
            ..
        } = self;
        let mut pay = PoolChain {
            state: payment,
            pool: payment_pool,
            now,
            passports: &nodes[rec.buyer].directory,
        };
        let s = &mut rec.session;
        let mut error = None;
        loop {
            if s.is_terminal() {
                break;
            }
            let tx1 = s.tx1.as_ref().map(Transaction::txid);
            let tx3 = s.tx3.as_ref().map(Transaction::txid);
            let r = match s.step {
                1 if buyer_on && seller_on => s.build_tx1(&buyer, &pay).map(drop),
                2 if buyer_on => s.build_tx2(&buyer, now).map(drop),
                3 if buyer_on => s.send_tx2(&buyer, now),
                4 if seller_on => s.countersign_tx2(&seller, now),
                5 if buyer_on => s.post_tx1(&buyer, &mut pay),
                6 if seller_on && tx1.is_some_and(|t| pay.state.transaction(&t).is_some()) => {
                    let eq = PoolChain {
                        state: equity,
                        pool: equity_pool,
                        now,
                        passports: &nodes[rec.seller].directory,
                    };
                    s.build_tx3(&seller, &eq, &lot, evidence.clone()).map(drop)
                }
                7 if seller_on => s.build_tx4(&seller, now).map(drop),
                8 if seller_on => s.send_tx4(&seller, now),
                9 if buyer_on => s.countersign_tx4(&buyer, now),
                10 if seller_on => {
                    let mut eq = PoolChain {
                        state: equity,
                        pool: equity_pool,
                        now,
                        passports: &nodes[rec.seller].directory,
                    };
                    s.post_tx3(&seller, &mut eq)
                }
                11 if buyer_on && tx3.is_some_and(|t| equity.transaction(&t).is_some()) && s.equity_refund.is_none() => {
                    let mut eq = PoolChain {
                        state: equity,
                        pool: equity_pool,
                        now,
                        passports: &nodes[rec.buyer].directory,
                    };
                    s.claim_equibits(&buyer, &mut eq).map(drop)
                }
                12 if seller_on && s.find_revealed_secret(equity).is_some() => {
                    s.claim_payment(&seller, &mut pay, equity).map(drop)
                }
                _ => break,
            };
            if let Err(e) = r {
                error = Some(e);
                break;
            }
        }
        // Refunds once the timelocks open.
        let tx1 = s.tx1.as_ref().map(Transaction::txid);
        let tx3 = s.tx3.as_ref().map(Transaction::txid);
        if seller_on
            && s.step >= 11
            && s.equity_claim.is_none()
            && s.equity_refund.is_none()
            && now >= s.equity_unlock()
            && tx3.is_some_and(|t| equity.transaction(&t).is_some())
        {
            let mut eq = PoolChain {
                state: equity,
                pool: equity_pool,
                now,
                passports: &nodes[rec.seller].directory,
            };
            if let Err(e) = s.refund_equibits(&seller, &mut eq) {
                error = Some(e);
            }
        }
        if buyer_on
            && s.step >= 6
            && s.equity_claim.is_none()
            && s.payment_claim.is_none()
            && s.payment_refund.is_none()
            && now >= s.payment_unlock()
            && tx1.is_some_and(|t| pay.state.transaction(&t).is_some())
        {
            if let Err(e) = s.refund_payment(&buyer, &mut pay) {
                error = Some(e);
            }
        }
        if s.step < 6 && now >= s.payment_unlock() {
            s.abort(now);
        }
        let tx1_lost = s.step >= 6 && !confirmed_pay(self, tx1) && !in_pool(&self.payment_pool, tx1);
        let s = &mut rec.session;
        if tx1_lost && s.state == SwapState::Tx1Posted {
            s.state = SwapState::AbortedClean;
        }

        let fresh: Vec<_> = rec.session.events[rec.logged..].to_vec();
        for ev in fresh {
            let actor = match ev.step {
                Some(1..=4) | Some(6) | Some(10) | Some(12) => self.nodes[rec.buyer].name.clone(),
                Some(_) => self.nodes[rec.seller].name.clone(),
                None if ev.action.starts_with("seller") => self.nodes[rec.seller].name.clone(),
                None => self.nodes[rec.buyer].name.clone(),
            };
            self.record(
                &actor,
                "swap_step",
                json!({"swap": rec.label, "step": ev.step, "action": ev.action, "txid": ev.txid}),
            );
        }
        rec.logged = rec.session.events.len();
        let error = error.map(|e| e.to_string());
        if error.is_some() && error != rec.last_error {
            let name = self.nodes[rec.buyer].name.clone();
            self.record(&name, "swap_error", json!({"swap": rec.label, "error": error}));
        }
        rec.last_error = error;

        let s = &rec.session;
        if !rec.settled
            && s.state == SwapState::Completed
            && confirmed_eq(self, s.equity_claim)
            && confirmed_pay(self, s.payment_claim)
        {
            rec.settled = true;
            let settlement = Settlement {
                offer_id: rec.basis,
                session: s.id,
                buyer: s.terms.buyer,
                seller: s.terms.seller,
                quantity: s.terms.quantity,
                payment: s.terms.price,
                equity_claim: s.equity_claim.expect("confirmed"),
                payment_claim: s.payment_claim.expect("confirmed"),
                settled_at: now,
            };
            for n in [rec.buyer, rec.seller] {
                self.nodes[n].trade_log.settlements.push(settlement.clone());
                self.nodes[n].book.mark_taken(rec.basis);
            }
            let name = self.nodes[rec.buyer].name.clone();
            self.record(&name, "swap_settled", json!({"swap": rec.label}));
        }
    }

    // ---- summaries ---------------------------------------------------

    pub fn summary(&self) -> WorldSummary {
        let now = self.now();
        let mut issuers = BTreeMap::new();
        for key in crate::ledger::known_issuances(&self.equity).keys() {
            issuers
                .entry(self.name_of(&key.issuer))
                .or_insert_with(|| issuer_summary(&self.equity, &key.issuer));
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let holdings: BTreeMap<String, u64> = self
                    .equity
                    .utxo()
                    .values()
                    .filter(|o| o.owner() == Some(n.keys.address))
                    .fold(BTreeMap::new(), |mut acc, o| {
                        let key = match &o.issuer_info {
                            None => "blank".to_string(),
                            Some(info) => format!("{}/{}", self.name_of(&info.issuer_address), info.descriptor.security_name),
                        };
                        *acc.entry(key).or_default() += o.amount;
                        acc
                    });
                let payment_balance = coins_of(&self.payment, &n.keys.address, None).iter().map(|c| c.1.amount).sum();
                (
                    n.name.clone(),
                    NodeSummary {
                        address: n.keys.address,
                        online: n.online,
                        equity_height: n.equity_height,
                        payment_height: n.payment_height,
                        holdings,
                        payment_balance,
                        stored_messages: n.mailbox.store.len(),
                        awaiting_confirmation: n.mailbox.outbox.values().filter(|o| !o.pending.is_empty()).count(),
                        live_offers: n.book.live(now).count(),
                        passports: n.directory.held.len(),
                        revocations: n.directory.revocations.len(),
                        public_view: public_view_digest(&n.mailbox, now),
                    },
                )
            })
            .collect();
        let swaps = self
            .swaps
            .iter()
            .map(|(label, r)| {
                let s = &r.session;
                (
                    label.clone(),
                    SwapSummary {
                        buyer: self.nodes[r.buyer].name.clone(),
                        seller: self.nodes[r.seller].name.clone(),
                        quantity: s.terms.quantity,
                        price: s.terms.price,
                        state: s.state,
                        step: s.step,
                        opened_at: s.t0,
                        hashlock: s.hashlock,
                        settled: r.settled,
                    },
                )
            })
            .collect();
        WorldSummary {
            time: now,
            equity: ChainSummary::of(&self.equity),
            payment: ChainSummary::of(&self.payment),
            issuers,
            nodes,
            offers: self.offers.values().cloned().collect(),
            swaps,
        }
    }

    pub fn transcript(&self, scenario: &Scenario) -> Transcript {
        Transcript::seal(
            scenario.name.clone(),
            scenario.seed,
            self.log.clone(),
            self.checkpoints.clone(),
            self.summary(),
        )
    }
}

fn body_kind(body: &Body) -> &'static str {
    match body {
        Body::Note(_) => "note",
        Body::Passport(_) => "passport",
        Body::Counter(_) => "counter",
        Body::Poll(_) => "poll",
        Body::Ballot(_) => "ballot",
        Body::Offer(_) => "offer",
        Body::PaymentAddress(_) => "payment_address",
        Body::Proxy(_) => "proxy",
        Body::Revocation(_) => "revocation",
    }
}

/// Digest of the public registries, live orders and revocations a mailbox holds.
pub fn public_view_digest(mailbox: &Mailbox, now: u64) -> Digest256 {
    let v = mailbox.sync_view(now);
    canonical::digest(&(&v.payment_addresses, &v.proxies, &v.live_orders, &v.revocations))
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<(World, Transcript), SimError> {
    scenario.check()?;
    let mut world = World::new(scenario);
    let events = scenario.ordered();
    if let Some(last) = events.last().map(|(_, e)| e.at) {
        let end = last + scenario.config.tail_hours;
        let mut next = 0;
        for tick in 0..=end {
            world.tick = tick;
            world.rejoin_due()?;
            world.deliver();
            while next < events.len() && events[next].1.at == tick {
                let (index, event) = events[next];
                world.dispatch(index, &event.actor, &event.action);
                next += 1;
            }
            world.advance_swaps();
            world.produce_pending();
            world.gc();
            world.rebroadcast();
            world.check_invariants()?;
        }
        world.check_convergence()?;
    }
    let transcript = world.transcript(scenario);
    Ok((world, transcript))
}
