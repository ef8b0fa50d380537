use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ScriptError;
use crate::orderbook::{Price, Side};

pub const DEFAULT_GENESIS: u64 = 1_483_228_800;

/// Chain and protocol parameters a scenario may override.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub genesis_time: u64,
    pub supply_cap: u64,
    pub subsidy: u64,
    /// Proof-of-work target in bits; 256 accepts every stamp.
    pub pow_bits: u32,
    pub payment_timelock_h: u64,
    pub equity_timelock_h: u64,
    /// Hours simulated after the last scripted event.
    pub tail_hours: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            genesis_time: DEFAULT_GENESIS,
            supply_cap: 1_000_000,
            subsidy: 50,
            pow_bits: 244,
            payment_timelock_h: 48,
            equity_timelock_h: 24,
            tail_hours: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainSel {
    #[default]
    Equity,
    Payment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeSpec {
    General,
    /// Node name of the issuer.
    Issuer(String),
    /// Poll guid.
    Poll(String),
}

fn one() -> u64 {
    1
}

fn default_passport_days() -> u64 {
    180
}

/// One scripted action. Node names stand for the node's address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    /// The actor mines `blocks` blocks at once, including pending transactions.
    Mine {
        #[serde(default = "one")]
        blocks: u64,
        #[serde(default)]
        chain: ChainSel,
    },
    /// Authorizes `amount` units from all of the actor's blank coins.
    Authorize {
        security: String,
        #[serde(default)]
        level: u8,
        amount: u64,
        #[serde(default)]
        fee: u64,
    },
    /// Blank units when `issuer` is absent.
    Transfer {
        to: String,
        #[serde(default)]
        issuer: Option<String>,
        #[serde(default)]
        security: Option<String>,
        amount: u64,
        #[serde(default)]
        fee: u64,
        #[serde(default)]
        chain: ChainSel,
    },
    /// Returns all of the actor's units of one issuance to the blank pool.
    Cancel {
        issuer: String,
        security: String,
        #[serde(default)]
        fee: u64,
    },
    IssuePassport {
        to: String,
        #[serde(default = "default_passport_days")]
        days: u64,
    },
    RevokePassport {
        trustee: String,
    },
    PostOffer {
        label: String,
        side: Side,
        issuer: String,
        security: String,
        quantity: u64,
        price: Price,
        expires_in_h: u64,
    },
    Counter {
        label: String,
        offer: String,
        quantity: u64,
        price: Price,
        expires_in_h: u64,
    },
    TakeOffer {
        offer: String,
        swap: String,
    },
    AcceptCounter {
        counter: String,
        swap: String,
    },
    /// The actor stops taking part in a swap.
    Halt {
        swap: String,
    },
    RegisterPaymentAddress {
        currency: String,
    },
    DesignateProxy {
        proxy: String,
        scope: ScopeSpec,
    },
    CreatePoll {
        guid: String,
        security: String,
        close_in_h: u64,
        #[serde(default)]
        description: Option<String>,
    },
    Vote {
        poll: String,
        #[serde(default)]
        voter: Option<String>,
        answers: Vec<u32>,
    },
    Tabulate {
        poll: String,
    },
    /// Pays `gross` payment units pro rata to holders at `record_at_h`
    /// (default: now).
    Distribute {
        security: String,
        gross: u64,
        currency: String,
        #[serde(default)]
        record_at_h: Option<u64>,
    },
    GoOffline {
        hours: u64,
    },
    Note {
        to: Vec<String>,
        text: String,
    },
    Checkpoint {
        label: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEvent {
    /// Hours after genesis.
    pub at: u64,
    pub actor: String,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub config: SimConfig,
    pub nodes: Vec<String>,
    #[serde(default)]
    pub script: Vec<ScriptEvent>,
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Scenario, ScriptError> {
        let scenario: Scenario = serde_json::from_str(json).map_err(|e| ScriptError::Parse(e.to_string()))?;
        scenario.check()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Script events in dispatch order: by hour, then script position.
    pub fn ordered(&self) -> Vec<(usize, &ScriptEvent)> {
        let mut events: Vec<(usize, &ScriptEvent)> = self.script.iter().enumerate().collect();
        events.sort_by_key(|(i, e)| (e.at, *i));
        events
    }

    /// Static checks: known nodes, labels defined before use, sane values.
    pub fn check(&self) -> Result<(), ScriptError> {
        if self.nodes.is_empty() {
            return Err(ScriptError::NoNodes);
        }
        let names: BTreeSet<&str> = self.nodes.iter().map(String::as_str).collect();
        if names.len() != self.nodes.len() {
            return Err(ScriptError::DuplicateNode);
        }
        if self.config.pow_bits == 0 || self.config.pow_bits > 256 {
            return Err(ScriptError::Config("pow_bits must be in 1..=256".into()));
        }
        if self.config.equity_timelock_h == 0 || self.config.equity_timelock_h >= self.config.payment_timelock_h {
            return Err(ScriptError::Config("equity timelock must be positive and shorter than the payment timelock".into()));
        }
        let mut offers = BTreeSet::new();
        let mut counters = BTreeSet::new();
        let mut swaps = BTreeSet::new();
        let mut polls = BTreeSet::new();
        for (index, event) in self.ordered() {
            let fail = |reason: String| ScriptError::Event { index, reason };
            let node = |name: &str| {
                if names.contains(name) {
                    Ok(())
                } else {
                    Err(fail(format!("unknown node {name:?}")))
                }
            };
            node(&event.actor)?;
            let fresh = |set: &mut BTreeSet<String>, label: &str| {
                if set.insert(label.to_string()) {
                    Ok(())
                } else {
                    Err(fail(format!("label {label:?} reused")))
                }
            };
            let known = |set: &BTreeSet<String>, label: &str| {
                if set.contains(label) {
                    Ok(())
                } else {
                    Err(fail(format!("label {label:?} not defined earlier")))
                }
            };
            match &event.action {
                Action::Mine { blocks, .. } if *blocks == 0 => return Err(fail("zero blocks".into())),
                Action::Authorize { level, amount, .. } => {
                    if *level > 3 {
                        return Err(fail(format!("restriction level {level}")));
                    }
                    if *amount == 0 {
                        return Err(fail("zero amount".into()));
                    }
                }
                Action::Transfer {
                    to, issuer, security, ..
                } => {
                    node(to)?;
                    if let Some(i) = issuer {
                        node(i)?;
                    }
                    if issuer.is_some() != security.is_some() {
                        return Err(fail("issuer and security go together".into()));
                    }
                }
                Action::Cancel { issuer, .. } => node(issuer)?,
                Action::IssuePassport { to, days } => {
                    node(to)?;
                    if *days == 0 {
                        return Err(fail("zero-day passport".into()));
                    }
                }
                Action::RevokePassport { trustee } => node(trustee)?,
                Action::PostOffer { label, issuer, .. } => {
                    node(issuer)?;
                    fresh(&mut offers, label)?;
                }
                Action::Counter { label, offer, .. } => {
                    known(&offers, offer)?;
                    fresh(&mut counters, label)?;
                }
                Action::TakeOffer { offer, swap } => {
                    known(&offers, offer)?;
                    fresh(&mut swaps, swap)?;
                }
                Action::AcceptCounter { counter, swap } => {
                    known(&counters, counter)?;
                    fresh(&mut swaps, swap)?;
                }
                Action::Halt { swap } => known(&swaps, swap)?,
                Action::DesignateProxy { proxy, scope } => {
                    node(proxy)?;
                    if let ScopeSpec::Issuer(i) = scope {
                        node(i)?;
                    }
                }
                Action::CreatePoll { guid, .. } => fresh(&mut polls, guid)?,
                Action::Vote { poll, voter, .. } => {
                    known(&polls, poll)?;
                    if let Some(v) = voter {
                        node(v)?;
                    }
                }
                Action::Tabulate { poll } => known(&polls, poll)?,
                Action::Distribute { record_at_h, .. } => {
                    if record_at_h.is_some_and(|h| h > event.at) {
                        return Err(fail("record date after the distribution".into()));
                    }
                }
                Action::Note { to, .. } => {
                    if to.is_empty() {
                        return Err(fail("note without recipients".into()));
                    }
                    for n in to {
                        node(n)?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}
