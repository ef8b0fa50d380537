use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical;
use crate::crypto::{Address, Digest256};
use crate::ledger::{ChainState, IssuerSummary};
use crate::orderbook::{Price, Side};
use crate::swap::SwapState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: u64,
    pub time: u64,
    pub actor: String,
    pub event: String,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub height: u64,
    pub tip: Digest256,
    pub tip_time: u64,
    pub utxo_sum: u64,
    pub issued: u64,
}

impl ChainSummary {
    pub fn of(chain: &ChainState) -> Self {
        ChainSummary {
            height: chain.height(),
            tip: chain.tip().hash(),
            tip_time: chain.tip_time(),
            utxo_sum: chain.utxo_sum(),
            issued: chain.issued_so_far(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub address: Address,
    pub online: bool,
    pub equity_height: u64,
    pub payment_height: u64,
    /// "blank" or "issuer/security" → units on the equity chain.
    pub holdings: BTreeMap<String, u64>,
    pub payment_balance: u64,
    pub stored_messages: usize,
    pub awaiting_confirmation: usize,
    pub live_offers: usize,
    pub passports: usize,
    pub revocations: usize,
    pub public_view: Digest256,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfferRecord {
    pub label: String,
    pub id: Digest256,
    pub maker: String,
    pub side: Side,
    pub issuer: String,
    pub security: String,
    pub quantity: u64,
    pub price: Price,
    pub posted_at: u64,
    pub expiry: u64,
    pub taken_at: Option<u64>,
}

impl OfferRecord {
    /// Open on the book at `time`.
    pub fn open_at(&self, time: u64) -> bool {
        self.posted_at <= time && time < self.expiry && self.taken_at.is_none_or(|t| time < t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapSummary {
    pub buyer: String,
    pub seller: String,
    pub quantity: u64,
    pub price: u64,
    pub state: SwapState,
    pub step: u8,
    pub opened_at: u64,
    pub hashlock: Digest256,
    pub settled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub time: u64,
    pub equity: ChainSummary,
    pub payment: ChainSummary,
    /// Issuer node name → bookkeeping.
    pub issuers: BTreeMap<String, IssuerSummary>,
    pub nodes: BTreeMap<String, NodeSummary>,
    pub offers: Vec<OfferRecord>,
    pub swaps: BTreeMap<String, SwapSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub label: String,
    pub tick: u64,
    pub digest: Digest256,
    pub state: WorldSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub scenario: String,
    pub seed: u64,
    pub log: Vec<LogEntry>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_state: WorldSummary,
    /// Canonical hash of every other field.
    pub digest: Digest256,
}

#[derive(Serialize)]
struct Body<'a> {
    scenario: &'a str,
    seed: u64,
    log: &'a [LogEntry],
    checkpoints: &'a [Checkpoint],
    final_state: &'a WorldSummary,
}

impl Transcript {
    pub fn seal(
        scenario: String,
        seed: u64,
        log: Vec<LogEntry>,
        checkpoints: Vec<Checkpoint>,
        final_state: WorldSummary,
    ) -> Self {
        let mut t = Transcript {
            scenario,
            seed,
            log,
            checkpoints,
            final_state,
            digest: Digest256::ZERO,
        };
        t.digest = t.computed_digest();
        t
    }

    pub fn computed_digest(&self) -> Digest256 {
        canonical::digest(&Body {
            scenario: &self.scenario,
            seed: self.seed,
            log: &self.log,
            checkpoints: &self.checkpoints,
            final_state: &self.final_state,
        })
    }

    pub fn verify(&self) -> bool {
        self.digest == self.computed_digest()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&canonical::to_value(self)).expect("transcript serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn events<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a LogEntry> + 'a {
        self.log.iter().filter(move |e| e.event == event)
    }
}
