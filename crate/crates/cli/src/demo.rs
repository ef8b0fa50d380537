use std::collections::BTreeMap;
use std::fmt::Write as _;

use equibit_core::governance::{parse_poll, SAMPLE_POLL};
use equibit_core::simnet::{run, LogEntry, Scenario, Transcript};
use serde_json::Value;

use crate::CliError;

const SWAP: &str = r#"{
  "name": "demo-swap",
  "seed": 11,
  "nodes": ["issuer", "buyer"],
  "script": [
    {"at": 0, "actor": "issuer", "action": "mine", "blocks": 2},
    {"at": 0, "actor": "buyer", "action": "mine", "blocks": 3, "chain": "payment"},
    {"at": 1, "actor": "issuer", "action": "authorize", "security": "DEMO", "amount": 40},
    {"at": 3, "actor": "issuer", "action": "post_offer", "label": "ask", "side": "Ask", "issuer": "issuer",
     "security": "DEMO", "quantity": 10, "price": {"num": 3, "den": 1}, "expires_in_h": 24},
    {"at": 4, "actor": "buyer", "action": "take_offer", "offer": "ask", "swap": "demo"}
  ]
}"#;

const POLL: &str = r#"{
  "name": "demo-poll",
  "seed": 12,
  "nodes": ["issuer", "ann", "ben", "cho", "dee", "proxy-p", "proxy-q", "proxy-r"],
  "script": [
    {"at": 0, "actor": "issuer", "action": "mine", "blocks": 3},
    {"at": 1, "actor": "issuer", "action": "authorize", "security": "VOTE", "amount": 100},
    {"at": 3, "actor": "issuer", "action": "transfer", "to": "ann", "issuer": "issuer", "security": "VOTE", "amount": 40},
    {"at": 5, "actor": "issuer", "action": "transfer", "to": "ben", "issuer": "issuer", "security": "VOTE", "amount": 30},
    {"at": 7, "actor": "issuer", "action": "transfer", "to": "cho", "issuer": "issuer", "security": "VOTE", "amount": 20},
    {"at": 9, "actor": "issuer", "action": "transfer", "to": "dee", "issuer": "issuer", "security": "VOTE", "amount": 10},
    {"at": 11, "actor": "ann", "action": "designate_proxy", "proxy": "proxy-p", "scope": "general"},
    {"at": 11, "actor": "ben", "action": "designate_proxy", "proxy": "proxy-q", "scope": {"issuer": "issuer"}},
    {"at": 11, "actor": "cho", "action": "designate_proxy", "proxy": "proxy-r", "scope": "general"},
    {"at": 12, "actor": "issuer", "action": "create_poll", "guid": "demo-poll", "security": "VOTE", "close_in_h": 10,
     "description": "Do you like polls?"},
    {"at": 13, "actor": "proxy-p", "action": "vote", "poll": "demo-poll", "voter": "ann", "answers": [0]},
    {"at": 13, "actor": "proxy-q", "action": "vote", "poll": "demo-poll", "voter": "ben", "answers": [1]},
    {"at": 13, "actor": "proxy-r", "action": "vote", "poll": "demo-poll", "voter": "cho", "answers": [0]},
    {"at": 14, "actor": "cho", "action": "vote", "poll": "demo-poll", "answers": [1]},
    {"at": 14, "actor": "dee", "action": "vote", "poll": "demo-poll", "answers": [0]},
    {"at": 23, "actor": "issuer", "action": "tabulate", "poll": "demo-poll"}
  ]
}"#;

const PASSPORT: &str = r#"{
  "name": "demo-passport",
  "seed": 13,
  "nodes": ["issuer", "agent", "investor", "stranger"],
  "script": [
    {"at": 0, "actor": "issuer", "action": "mine", "blocks": 3},
    {"at": 1, "actor": "issuer", "action": "authorize", "security": "GATED", "level": 1, "amount": 30},
    {"at": 2, "actor": "issuer", "action": "issue_passport", "to": "agent"},
    {"at": 2, "actor": "agent", "action": "issue_passport", "to": "investor"},
    {"at": 4, "actor": "issuer", "action": "transfer", "to": "investor", "issuer": "issuer", "security": "GATED", "amount": 10},
    {"at": 6, "actor": "issuer", "action": "transfer", "to": "stranger", "issuer": "issuer", "security": "GATED", "amount": 5},
    {"at": 8, "actor": "agent", "action": "revoke_passport", "trustee": "investor"},
    {"at": 10, "actor": "issuer", "action": "transfer", "to": "investor", "issuer": "issuer", "security": "GATED", "amount": 5}
  ]
}"#;

pub fn cmd_demo(name: &str) -> Result<String, CliError> {
    match name {
        "swap" => swap_demo(),
        "poll" => poll_demo(),
        "passport" => passport_demo(),
        other => Err(CliError::UnknownDemo(other.to_string())),
    }
}

fn simulate(json: &str) -> Result<Transcript, CliError> {
    let scenario = Scenario::from_json(json).map_err(|e| CliError::Artifact(e.to_string()))?;
    Ok(run(&scenario)?.1)
}

/// Maps each confirmed txid to "chain@height".
fn confirmations(t: &Transcript) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for e in t.events("block") {
        let at = format!("{}@{}", e.detail["chain"].as_str().unwrap_or("?"), e.detail["height"]);
        for tx in e.detail["txs"].as_array().into_iter().flatten() {
            if let Some(id) = tx.as_str() {
                out.insert(id.to_string(), at.clone());
            }
        }
    }
    out
}

fn short(v: &Value) -> String {
    v.as_str().map_or_else(|| "-".into(), |s| s.chars().take(12).collect())
}

fn line(out: &mut String, e: &LogEntry, text: impl std::fmt::Display) {
    let _ = writeln!(out, "[h{:>3}] {:<9} {text}", e.tick, e.actor);
}

fn swap_demo() -> Result<String, CliError> {
    let t = simulate(SWAP)?;
    let confirmed = confirmations(&t);
    let mut out = String::from("atomic swap: buyer pays 30 payment units for 10 DEMO\n");
    for e in &t.log {
        match e.event.as_str() {
            "swap_step" => {
                let step = e.detail["step"].as_u64().map_or("--".into(), |s| format!("{s:>2}"));
                let effect = match e.detail["txid"].as_str() {
                    Some(id) => match confirmed.get(id) {
                        Some(at) => format!("  tx {} confirmed on {at}", short(&e.detail["txid"])),
                        None => format!("  tx {} built", short(&e.detail["txid"])),
                    },
                    None => String::new(),
                };
                line(&mut out, e, format_args!("step {step}: {}{effect}", e.detail["action"].as_str().unwrap_or("")));
            }
            "swap_opened" | "swap_settled" | "swap_error" => line(&mut out, e, format_args!("{} {}", e.event, e.detail)),
            _ => {}
        }
    }
    if let Some(s) = t.final_state.swaps.get("demo") {
        let _ = writeln!(out, "final state {:?} after step {}", s.state, s.step);
    }
    for (name, n) in &t.final_state.nodes {
        let _ = writeln!(out, "{name}: holdings {:?}, payment balance {}", n.holdings, n.payment_balance);
    }
    Ok(out)
}

fn poll_demo() -> Result<String, CliError> {
    let mut out = String::new();
    let poll = parse_poll(SAMPLE_POLL).map_err(|e| CliError::Artifact(e.to_string()))?;
    let again = parse_poll(&poll.to_json()).map_err(|e| CliError::Artifact(e.to_string()))?;
    let _ = writeln!(
        out,
        "sample poll {:?}: {} question(s), round trip {}",
        poll.description,
        poll.questions.len(),
        if again == poll { "identical" } else { "DIFFERS" }
    );
    let t = simulate(POLL)?;
    for e in &t.log {
        match e.event.as_str() {
            "designate_proxy" | "vote" | "create_poll" => line(&mut out, e, format_args!("{} {}", e.event, e.detail)),
            "tabulation" => {
                for a in e.detail["audit"].as_array().into_iter().flatten() {
                    line(&mut out, e, format_args!("ballot {}", a));
                }
                line(&mut out, e, format_args!("totals {}", e.detail["totals"]));
            }
            "failed" => line(&mut out, e, format_args!("failed {}", e.detail)),
            _ => {}
        }
    }
    Ok(out)
}

fn passport_demo() -> Result<String, CliError> {
    let t = simulate(PASSPORT)?;
    let mut out = String::from("trust chain issuer -> agent -> investor on a level-1 security\n");
    for e in &t.log {
        match e.event.as_str() {
            "issue_passport" | "revoke_passport" | "transfer" | "failed" | "tx_rejected" => {
                line(&mut out, e, format_args!("{} {}", e.event, e.detail))
            }
            "block" if e.detail["chain"] == "equity" && e.detail["txs"].as_array().is_some_and(|t| t.len() > 1) => {
                line(&mut out, e, format_args!("block {} with {} txs", e.detail["height"], e.detail["txs"].as_array().map_or(0, Vec::len)))
            }
            _ => {}
        }
    }
    for (name, n) in &t.final_state.nodes {
        let _ = writeln!(out, "{name}: holdings {:?}", n.holdings);
    }
    Ok(out)
}
