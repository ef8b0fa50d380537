use std::path::PathBuf;

use equibit_core::canonical;
use equibit_core::governance::snapshot_holders;
use equibit_core::ledger::ChainState;
use equibit_core::simnet::{
    random_ledger, run, Action, Scenario, ScriptError, ScriptEvent, SimError, Transcript, WorkloadConfig,
};
use equibit_core::swap::{SwapState, HOUR};
use proptest::prelude::*;
use serde_json::json;

fn corpus(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"));
    Scenario::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn bare(nodes: &[&str]) -> Scenario {
    Scenario {
        name: "bare".into(),
        seed: 1,
        config: Default::default(),
        nodes: nodes.iter().map(|n| n.to_string()).collect(),
        script: Vec::new(),
    }
}

fn at(at: u64, actor: &str, action: Action) -> ScriptEvent {
    ScriptEvent {
        at,
        actor: actor.into(),
        action,
    }
}

const CORPUS: [&str; 5] = ["lifecycle", "double-spend", "offline-rejoin", "swap-refund", "restricted-transfer"];

#[test]
fn empty_script_is_genesis_only() {
    let (world, t) = run(&bare(&["a", "b"])).unwrap();
    assert_eq!(world.tick, 0);
    assert_eq!(t.final_state.equity.height, 0);
    assert_eq!(t.final_state.payment.height, 0);
    assert!(t.log.is_empty());
    assert!(t.checkpoints.is_empty());
    assert!(t.verify());
}

#[test]
fn corpus_runs_are_deterministic() {
    for name in CORPUS {
        let sc = corpus(name);
        let (_, a) = run(&sc).unwrap();
        let (_, b) = run(&sc).unwrap();
        assert_eq!(a.digest, b.digest, "{name}");
        assert_eq!(a.to_json(), b.to_json(), "{name}");
        let mut other = sc.clone();
        other.seed += 1;
        let (_, c) = run(&other).unwrap();
        assert_ne!(a.digest, c.digest, "{name}");
    }
}

#[test]
fn transcript_round_trips_through_json() {
    let (_, t) = run(&corpus("double-spend")).unwrap();
    let back = Transcript::from_json(&t.to_json()).unwrap();
    assert_eq!(back, t);
    assert!(back.verify());
    let mut tampered = back;
    tampered.seed ^= 1;
    assert!(!tampered.verify());
}

#[test]
fn scenario_json_round_trips() {
    for name in CORPUS {
        let sc = corpus(name);
        assert_eq!(Scenario::from_json(&sc.to_json()).unwrap(), sc);
    }
}

#[test]
fn double_spend_is_recorded_not_fatal() {
    let (_, t) = run(&corpus("double-spend")).unwrap();
    let rejected: Vec<_> = t.events("tx_rejected").collect();
    assert_eq!(rejected.len(), 1);
    assert!(rejected[0].detail["reason"].as_str().unwrap().contains("already spent"));
    let nodes = &t.final_state.nodes;
    let received = nodes["carol"].holdings.get("blank").copied().unwrap_or(0)
        + nodes["dana"].holdings.get("blank").copied().unwrap_or(0);
    // One of the two payments went through; the miner's coinbase is on top.
    assert!(received == 50 + 40 || received == 50 + 45, "{received}");
}

#[test]
fn restricted_transfers_follow_the_trust_graph() {
    let (_, t) = run(&corpus("restricted-transfer")).unwrap();
    let reasons: Vec<String> = t
        .events("tx_rejected")
        .map(|e| e.detail["reason"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(reasons.len(), 5, "{reasons:?}");
    assert!(reasons.iter().any(|r| r.contains("issuer-only")));
    let bob = &t.final_state.nodes["bob"];
    assert_eq!(bob.holdings.get("acme/ACME-R"), Some(&3));
    assert_eq!(t.final_state.nodes["carol"].holdings.get("acme/ACME-R"), None);
}

#[test]
fn counterparty_refunds_when_the_other_side_vanishes() {
    let (world, t) = run(&corpus("swap-refund")).unwrap();
    let seller_gone = &world.swaps["seller-vanishes"].session;
    assert_eq!(seller_gone.state, SwapState::RefundedPayment);
    let refund = seller_gone.payment_refund.unwrap();
    assert!(world.payment.transaction(&refund).is_some());
    assert!(seller_gone.tx3.is_none());
    // The refund lands at the first tick at or after the payment timelock.
    let posted = t
        .events("swap_step")
        .find(|e| e.detail["swap"] == "seller-vanishes" && e.detail["action"] == "buyer posts refund TX2")
        .unwrap();
    assert_eq!(posted.time, seller_gone.payment_unlock());

    let buyer_gone = &world.swaps["buyer-vanishes"].session;
    let eq_refund = buyer_gone.equity_refund.expect("seller reclaims equity");
    assert!(world.equity.transaction(&eq_refund).is_some());
    assert!(buyer_gone.equity_claim.is_none());
    let pay_refund = buyer_gone.payment_refund.expect("buyer reclaims payment on return");
    assert!(world.payment.transaction(&pay_refund).is_some());
    assert_eq!(t.final_state.nodes["acme"].holdings["acme/ACME"], 100);
}

#[test]
fn offline_node_computes_the_same_dividend_snapshot() {
    let sc = corpus("offline-rejoin");
    let (world, t) = run(&sc).unwrap();
    let dividend = t.events("dividend").next().unwrap();
    let record_time = dividend.detail["record_time"].as_u64().unwrap();
    let dana = world.node("dana");
    assert!(dana.online);
    assert_eq!(dana.equity_height, world.equity.height());
    // Dana's chain view is the block sequence up to her height.
    let blocks = world.equity.blocks()[..=dana.equity_height as usize].to_vec();
    let view = ChainState::from_blocks_unchecked(world.equity.params.clone(), blocks);
    let issuer = world.address_of("acme");
    let snap = snapshot_holders(&view, &issuer, "ACME", record_time).unwrap();
    let named: serde_json::Map<String, serde_json::Value> =
        snap.iter().map(|(a, u)| (world.name_of(a), json!(u))).collect();
    assert_eq!(serde_json::Value::Object(named), dividend.detail["snapshot"]);
}

#[test]
fn rejoined_node_matches_an_always_online_peer() {
    let (world, _) = run(&corpus("offline-rejoin")).unwrap();
    let now = world.now();
    let dana = canonical::to_vec(&world.node("dana").mailbox.sync_view(now));
    let carol = canonical::to_vec(&world.node("carol").mailbox.sync_view(now));
    assert_eq!(dana, carol);
    let view = world.node("dana").mailbox.sync_view(now);
    assert_eq!(view.payment_addresses.len(), 3);
    assert_eq!(view.proxies.len(), 1);
    assert_eq!(view.open_polls.len(), 1);
    assert_eq!(view.live_orders.len(), 1);
    assert_eq!(view.revocations.len(), 1);
    assert_eq!(world.node("dana").directory.revocations.len(), 1);
}

#[test]
fn unconfirmed_direct_messages_back_off() {
    let (_, t) = run(&corpus("offline-rejoin")).unwrap();
    let note = t
        .events("note")
        .find(|e| e.detail["to"] == json!(["erin"]))
        .unwrap();
    let id = &note.detail["message"];
    let times: Vec<u64> = t
        .events("rebroadcast")
        .filter(|e| &e.detail["message"] == id)
        .map(|e| e.time - note.time)
        .collect();
    assert_eq!(times, vec![96 * HOUR, 192 * HOUR, 384 * HOUR]);
}

#[test]
fn going_offline_for_zero_hours_changes_nothing() {
    let mut base = corpus("double-spend");
    base.script.push(at(2, "dana", Action::Checkpoint { label: "x".into() }));
    let mut zero = base.clone();
    zero.script.push(at(1, "dana", Action::GoOffline { hours: 0 }));
    let (_, a) = run(&base).unwrap();
    let (_, b) = run(&zero).unwrap();
    assert_eq!(a.final_state, b.final_state);
    assert_eq!(a.checkpoints, b.checkpoints);
}

#[test]
fn offline_actors_are_skipped_and_messages_dropped() {
    let mut sc = bare(&["a", "b"]);
    sc.script = vec![
        at(0, "b", Action::GoOffline { hours: 3 }),
        at(1, "b", Action::Mine { blocks: 1, chain: Default::default() }),
        at(1, "a", Action::Note { to: vec!["b".into()], text: "hi".into() }),
    ];
    let (world, t) = run(&sc).unwrap();
    assert_eq!(t.events("skipped").count(), 1);
    assert_eq!(t.events("dropped").count(), 1);
    assert_eq!(world.equity.height(), 0);
    assert_eq!(t.events("rejoin").count(), 1);
}

#[test]
fn lifecycle_completes_with_expected_bookkeeping() {
    let (world, t) = run(&corpus("lifecycle")).unwrap();
    for rec in world.swaps.values() {
        assert_eq!(rec.session.state, SwapState::Completed);
        assert!(rec.settled);
    }
    assert!(t.events("failed").next().is_none(), "{:?}", t.events("failed").collect::<Vec<_>>());
    let acme = &t.final_state.issuers["acme"];
    assert_eq!(acme.authorized_total, 100);
    assert_eq!(acme.at_origin + acme.circulating + acme.cancelled, 100);
    assert_eq!(acme.cancelled, 5);
    assert_eq!(t.final_state.issuers["carol"].authorized_total, 20);
    let tab = t.events("tabulation").next().unwrap();
    assert_eq!(tab.detail["totals"], json!([[10, 5]]));
    let views: Vec<_> = t.final_state.nodes.values().map(|n| n.public_view).collect();
    assert!(views.windows(2).all(|w| w[0] == w[1]));
    let settled = &world.node("bob").trade_log.settlements;
    assert_eq!(settled.len(), 1);
    assert_eq!((settled[0].quantity, settled[0].payment), (10, 40));
}

#[test]
fn golden_lifecycle_transcript() {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/golden/lifecycle.transcript.json");
    let (_, t) = run(&corpus("lifecycle")).unwrap();
    if std::env::var_os("EQB_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, t.to_json()).unwrap();
    }
    let expected = Transcript::from_json(&std::fs::read_to_string(&golden).unwrap()).unwrap();
    assert!(expected.verify());
    assert_eq!(t.digest, expected.digest);
    assert_eq!(t, expected);
}

#[test]
fn script_errors_name_the_event() {
    let mut sc = bare(&["a"]);
    sc.script = vec![
        at(0, "a", Action::Checkpoint { label: "ok".into() }),
        at(1, "zed", Action::Mine { blocks: 1, chain: Default::default() }),
    ];
    assert!(matches!(run(&sc), Err(SimError::Script(ScriptError::Event { index: 1, .. }))));

    sc.script = vec![at(0, "a", Action::TakeOffer { offer: "nope".into(), swap: "s".into() })];
    assert!(matches!(sc.check(), Err(ScriptError::Event { index: 0, .. })));

    sc.script = vec![at(
        3,
        "a",
        Action::Distribute {
            security: "X".into(),
            gross: 1,
            currency: "USD".into(),
            record_at_h: Some(4),
        },
    )];
    assert!(matches!(sc.check(), Err(ScriptError::Event { index: 0, .. })));

    assert_eq!(bare(&[]).check(), Err(ScriptError::NoNodes));
    assert_eq!(bare(&["a", "a"]).check(), Err(ScriptError::DuplicateNode));
    let mut cfg = bare(&["a"]);
    cfg.config.pow_bits = 0;
    assert!(matches!(cfg.check(), Err(ScriptError::Config(_))));
}

#[test]
fn malformed_scenarios_fail_to_parse() {
    for bad in [
        "{",
        r#"{"name":"x","seed":1,"nodes":["a"],"extra":1}"#,
        r#"{"name":"x","seed":1,"nodes":["a"],"script":[{"at":0,"actor":"a","action":"fly"}]}"#,
        r#"{"name":"x","seed":1,"nodes":["a"],"script":[{"at":0,"actor":"a","action":"mine","speed":2}]}"#,
    ] {
        assert!(matches!(Scenario::from_json(bad), Err(ScriptError::Parse(_))), "{bad}");
    }
}

#[test]
fn workload_generates_every_kind_of_transaction() {
    let cfg = WorkloadConfig {
        seed: 3,
        blocks: 40,
        ..Default::default()
    };
    let mut heights = Vec::new();
    let (state, _, stats) = random_ledger(&cfg, |s| {
        assert!(s.conservation_holds());
        heights.push(s.height());
    });
    assert_eq!(heights, (1..=40).collect::<Vec<_>>());
    assert_eq!(state.height(), 40);
    assert!(stats.authorizations > 0 && stats.transfers > 0 && stats.cancels > 0 && stats.blank_transfers > 0);
    let (again, _, stats2) = random_ledger(&cfg, |_| {});
    assert_eq!(again.tip().hash(), state.tip().hash());
    assert_eq!(stats, stats2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn workload_conserves_supply(seed in any::<u64>()) {
        let cfg = WorkloadConfig { seed, blocks: 15, ..Default::default() };
        let mut ok = true;
        random_ledger(&cfg, |s| ok &= s.utxo_sum() == s.issued_so_far());
        prop_assert!(ok);
    }
}
