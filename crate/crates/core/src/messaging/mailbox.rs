use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::envelope::{validate_pow, Body, Confirmation, Envelope, Kind, PowTarget, PublicSubtype};
use super::MessagingError;
use crate::canonical;
use crate::crypto::{Address, Digest256, KeyPair};
use crate::governance::{PaymentAddressRecord, Poll, ProxyDesignation, Registry};
use crate::orderbook::Offer;
use crate::passport::{Revocation, DAY};

pub const PRIVATE_RETENTION: u64 = 2 * DAY;
/// First rebroadcast comes this long after creation; each later one doubles it.
pub const FIRST_REBROADCAST: u64 = 4 * DAY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RetentionClass {
    PrivateTwoDay,
    PollUntilClose,
    OrderUntilExpiry,
    UntilRevokedOrSuperseded,
    RevocationPermanent,
}

pub fn retention_class(kind: Kind, subtype: Option<PublicSubtype>, body: &Body) -> RetentionClass {
    match (kind, subtype) {
        (Kind::Public, Some(PublicSubtype::BidAsk)) => RetentionClass::OrderUntilExpiry,
        (Kind::Public, Some(PublicSubtype::PaymentAddress | PublicSubtype::ProxyDesignation)) => {
            RetentionClass::UntilRevokedOrSuperseded
        }
        (Kind::Public, Some(PublicSubtype::PassportRevocation)) => RetentionClass::RevocationPermanent,
        _ if matches!(body, Body::Poll(_)) => RetentionClass::PollUntilClose,
        _ => RetentionClass::PrivateTwoDay,
    }
}

/// First instant at which the message is no longer kept, if any.
pub fn retained_until(class: RetentionClass, envelope: &Envelope, body: &Body) -> Option<u64> {
    match (class, body) {
        (RetentionClass::PrivateTwoDay, _) => Some(envelope.created_at + PRIVATE_RETENTION + 1),
        (RetentionClass::PollUntilClose, Body::Poll(p)) => Some(p.close_at() + 1),
        (RetentionClass::OrderUntilExpiry, Body::Offer(o)) => Some(o.terms.expiry),
        (RetentionClass::PollUntilClose | RetentionClass::OrderUntilExpiry, _) => Some(envelope.created_at),
        (RetentionClass::UntilRevokedOrSuperseded | RetentionClass::RevocationPermanent, _) => None,
    }
}

/// Supersession slot and ordering stamp for registry records.
fn slot_of(body: &Body) -> Option<(String, (u64, Digest256))> {
    match body {
        Body::PaymentAddress(r) => Some((
            canonical::to_string(&("payment", r.owner, &r.currency)),
            (r.designated_at, r.id()),
        )),
        Body::Proxy(d) => Some((
            canonical::to_string(&("proxy", d.grantor, d.proxy, &d.scope)),
            (d.designated_at, d.id()),
        )),
        _ => None,
    }
}

/// Time of the `attempt`-th rebroadcast (0-based).
pub fn rebroadcast_at(created_at: u64, attempt: u32) -> u64 {
    created_at.saturating_add(FIRST_REBROADCAST.saturating_mul(1u64 << attempt.min(40)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stored {
    pub envelope: Envelope,
    pub body: Body,
    pub class: RetentionClass,
    pub expires_at: Option<u64>,
    pub received_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RebroadcastState {
    pub message_id: Digest256,
    pub attempt: u32,
    pub next_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outgoing {
    pub envelope: Envelope,
    /// Recipients that have not confirmed yet.
    pub pending: BTreeMap<Address, RebroadcastState>,
    pub confirmed: BTreeSet<Address>,
    /// Every time the envelope went out, first send included.
    pub sent_at: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeliveryResult {
    DecryptedAndConfirmed,
    /// Public message taken into the store or the registries.
    Ingested,
    /// Already seen; any confirmation is re-sent but nothing else changes.
    Duplicate,
    NotForMe,
    BadPow,
    BadSignature,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub result: DeliveryResult,
    /// Present when this node can read the message and has not seen it before.
    pub body: Option<Body>,
    pub confirmations: Vec<Confirmation>,
}

impl Delivery {
    fn only(result: DeliveryResult) -> Self {
        Delivery {
            result,
            body: None,
            confirmations: Vec::new(),
        }
    }
}

/// The part of a node's message state that must agree across peers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncView {
    pub payment_addresses: Vec<PaymentAddressRecord>,
    pub proxies: Vec<ProxyDesignation>,
    pub open_polls: Vec<(Digest256, Poll)>,
    pub live_orders: Vec<Offer>,
    pub revocations: Vec<Revocation>,
}

/// One node's message store, outbox and seen-set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mailbox {
    pub target: PowTarget,
    pub store: BTreeMap<Digest256, Stored>,
    pub outbox: BTreeMap<Digest256, Outgoing>,
    pub seen: BTreeSet<Digest256>,
    /// Registry slot → (designated_at, record id) and the message holding it.
    slots: BTreeMap<String, ((u64, Digest256), Digest256)>,
}

impl Mailbox {
    pub fn new(target: PowTarget) -> Self {
        Mailbox {
            target,
            ..Mailbox::default()
        }
    }

    /// Records an outgoing private message for confirmation tracking.
    pub fn send(&mut self, envelope: &Envelope, now: u64) {
        let id = envelope.message_id();
        self.seen.insert(id);
        if envelope.kind == Kind::Public {
            if let Some(body) = envelope.public_body() {
                self.keep(envelope.clone(), body, now);
            }
            return;
        }
        let pending = envelope
            .recipients
            .iter()
            .map(|r| {
                (
                    *r,
                    RebroadcastState {
                        message_id: id,
                        attempt: 0,
                        next_at: rebroadcast_at(envelope.created_at, 0),
                    },
                )
            })
            .collect();
        self.outbox.insert(
            id,
            Outgoing {
                envelope: envelope.clone(),
                pending,
                confirmed: BTreeSet::new(),
                sent_at: vec![now],
            },
        );
    }

    fn keep(&mut self, envelope: Envelope, body: Body, now: u64) -> bool {
        let class = retention_class(envelope.kind, envelope.subtype, &body);
        let expires_at = retained_until(class, &envelope, &body);
        if expires_at.is_some_and(|t| t <= now) {
            return false;
        }
        let id = envelope.message_id();
        if let Some((slot, stamp)) = slot_of(&body) {
            if let Some((held, held_id)) = self.slots.get(&slot) {
                if *held >= stamp {
                    return false;
                }
                self.store.remove(held_id);
            }
            self.slots.insert(slot, (stamp, id));
        }
        self.store.insert(
            id,
            Stored {
                envelope,
                body,
                class,
                expires_at,
                received_at: now,
            },
        );
        true
    }

    pub fn deliver(&mut self, envelope: &Envelope, keys: &[KeyPair], now: u64) -> Delivery {
        if !validate_pow(envelope, self.target) {
            return Delivery::only(DeliveryResult::BadPow);
        }
        if !envelope.signature_valid() {
            return Delivery::only(DeliveryResult::BadSignature);
        }
        let id = envelope.message_id();
        if envelope.kind == Kind::Public {
            let Some(body) = envelope.public_body().filter(|b| b.authored_by(&envelope.sender)) else {
                return Delivery::only(DeliveryResult::Malformed);
            };
            if !self.seen.insert(id) {
                return Delivery::only(DeliveryResult::Duplicate);
            }
            self.keep(envelope.clone(), body.clone(), now);
            return Delivery {
                result: DeliveryResult::Ingested,
                body: Some(body),
                confirmations: Vec::new(),
            };
        }

        let mine: Vec<&KeyPair> = keys.iter().filter(|k| envelope.is_for(&k.address)).collect();
        let Some(first) = mine.first() else {
            return Delivery::only(DeliveryResult::NotForMe);
        };
        let body = match envelope.open_for(first) {
            Ok(b) if b.authored_by(&envelope.sender) => b,
            _ => return Delivery::only(DeliveryResult::Malformed),
        };
        let confirmations = mine.iter().map(|k| Confirmation::new(k, envelope)).collect();
        if !self.seen.insert(id) {
            return Delivery {
                result: DeliveryResult::Duplicate,
                body: None,
                confirmations,
            };
        }
        self.keep(envelope.clone(), body.clone(), now);
        Delivery {
            result: DeliveryResult::DecryptedAndConfirmed,
            body: Some(body),
            confirmations,
        }
    }

    /// True when the confirmation settled a pending recipient.
    pub fn confirm(&mut self, confirmation: &Confirmation) -> bool {
        if !confirmation.signature_valid() {
            return false;
        }
        let Some(out) = self.outbox.get_mut(&confirmation.message_id) else {
            return false;
        };
        if out.pending.remove(&confirmation.confirmer).is_some() {
            out.confirmed.insert(confirmation.confirmer);
            true
        } else {
            false
        }
    }

    pub fn retention_gc(&mut self, now: u64) -> Vec<Digest256> {
        let expired: Vec<Digest256> = self
            .store
            .iter()
            .filter(|(_, s)| s.expires_at.is_some_and(|t| t <= now))
            .map(|(id, _)| *id)
            .collect();
        for id in &expired {
            self.store.remove(id);
        }
        expired
    }

    /// Envelopes due for another send. Each due recipient moves to its next
    /// attempt; a sender that was away catches up without repeating.
    pub fn rebroadcast_tick(&mut self, now: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        for outgoing in self.outbox.values_mut() {
            let mut due = false;
            for state in outgoing.pending.values_mut() {
                while state.next_at <= now {
                    due = true;
                    state.attempt += 1;
                    state.next_at = rebroadcast_at(outgoing.envelope.created_at, state.attempt);
                }
            }
            if due {
                outgoing.sent_at.push(now);
                out.push(outgoing.envelope.clone());
            }
        }
        out
    }

    /// Envelopes this mailbox would hand to a peer whose addresses are
    /// `peer` and whose last revocation was at `watermark`.
    pub fn sync_offer(&self, peer: &[Address], watermark: u64, now: u64) -> Vec<Envelope> {
        let mut out: BTreeMap<Digest256, Envelope> = BTreeMap::new();
        for (id, s) in &self.store {
            if s.expires_at.is_some_and(|t| t <= now) {
                continue;
            }
            let wanted = match (&s.envelope.kind, &s.body) {
                (Kind::Public, Body::Revocation(r)) => r.revoked_at > watermark,
                (Kind::Public, _) => true,
                _ => peer.iter().any(|a| s.envelope.is_for(a)),
            };
            if wanted {
                out.insert(*id, s.envelope.clone());
            }
        }
        for (id, o) in &self.outbox {
            if peer.iter().any(|a| o.pending.contains_key(a)) {
                out.insert(*id, o.envelope.clone());
            }
        }
        out.into_values().collect()
    }

    /// Pulls everything missed while offline from `peers` and delivers it
    /// in message-id order.
    pub fn rejoin_sync(
        &mut self,
        peers: &[&Mailbox],
        keys: &[KeyPair],
        watermark: u64,
        now: u64,
    ) -> Result<Vec<Delivery>, MessagingError> {
        if peers.is_empty() {
            return Err(MessagingError::NoPeers);
        }
        let addresses: Vec<Address> = keys.iter().map(|k| k.address).collect();
        let mut incoming: BTreeMap<Digest256, Envelope> = BTreeMap::new();
        for peer in peers {
            for env in peer.sync_offer(&addresses, watermark, now) {
                incoming.insert(env.message_id(), env);
            }
        }
        Ok(incoming
            .values()
            .map(|env| self.deliver(env, keys, now))
            .collect())
    }

    pub fn registry(&self) -> Registry {
        let mut registry = Registry::default();
        for s in self.store.values() {
            match &s.body {
                Body::PaymentAddress(r) => {
                    registry.apply_payment(r.clone());
                }
                Body::Proxy(d) => {
                    registry.apply_proxy(d.clone());
                }
                _ => {}
            }
        }
        registry
    }

    pub fn live_offers(&self, now: u64) -> Vec<Offer> {
        self.store
            .values()
            .filter_map(|s| match &s.body {
                Body::Offer(o) if o.is_live(now) => Some(o.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn revocations(&self) -> Vec<Revocation> {
        let mut out: Vec<Revocation> = self
            .store
            .values()
            .filter_map(|s| match &s.body {
                Body::Revocation(r) => Some(r.clone()),
                _ => None,
            })
            .collect();
        out.sort();
        out
    }

    pub fn open_polls(&self, now: u64) -> Vec<(Digest256, Poll)> {
        let mut polls: BTreeMap<Digest256, Poll> = BTreeMap::new();
        for s in self.store.values() {
            if let Body::Poll(p) = &s.body {
                if now < p.close_at() {
                    polls.insert(p.id(), p.clone());
                }
            }
        }
        polls.into_iter().collect()
    }

    pub fn sync_view(&self, now: u64) -> SyncView {
        let registry = self.registry();
        SyncView {
            payment_addresses: registry.payment.into_values().collect(),
            proxies: registry.proxies.into_values().collect(),
            open_polls: self.open_polls(now),
            live_orders: self.live_offers(now),
            revocations: self.revocations(),
        }
    }
}
