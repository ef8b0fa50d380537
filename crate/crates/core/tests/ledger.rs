mod common;

use common::*;
use equibit_core::crypto::hash;
use equibit_core::ledger::*;
use equibit_core::passport::{issue_passport, revoke_passport, PassportDirectory, TransferDenial, DAY};

fn blank_coin(chain: &ChainState, who: &equibit_core::crypto::KeyPair) -> Coin {
    coins_of(chain, &who.address, None).remove(0)
}

#[test]
fn blank_spend_with_valid_signature_is_accepted() {
    let alice = kp("alice");
    let bob = kp("bob");
    let mut chain = equity_chain();
    mine_empty(&mut chain, alice.address, 1);
    let tx = transfer(&chain, &alice, None, LockScript::pay_to(bob.address), 20, 0, vec![]).unwrap();
    assert_eq!(chain.check_transaction(&tx, chain.tip_time(), &PassportDirectory::new()), Ok(0));
    mine(&mut chain, alice.address, &[tx]);
    assert_eq!(issuance::balances_of(&chain, &bob.address).get(&None), Some(&20));
    assert!(chain.conservation_holds());
}

#[test]
fn annotation_not_matching_inputs_is_issuer_mismatch() {
    let issuer_x = kp("issuer-x");
    let issuer_y = kp("issuer-y");
    let mut chain = equity_chain();
    let (info_x, _) = issue(&mut chain, &issuer_x, "X", 0, 10);
    let (info_y, _) = issue(&mut chain, &issuer_y, "Y", 0, 10);

    // Y's holder relabels Y units as X without any authorization.
    let coins = coins_of(&chain, &issuer_y.address, Some(&info_y));
    let inputs: Vec<OutPoint> = coins.iter().map(|c| c.0).collect();
    let tx = sign_transaction(&inputs, vec![Payment::units(issuer_y.address, 10, &info_x)], 0, 0, vec![], &issuer_y);
    let err = chain.check_transaction(&tx, chain.tip_time(), &PassportDirectory::new());
    assert_eq!(err, Err(Reject::IssuerMismatch { output: 0 }));
}

#[test]
fn fee_from_authorized_inputs_is_fee_not_blank() {
    let issuer = kp("issuer");
    let mut chain = equity_chain();
    let (info, op) = issue(&mut chain, &issuer, "S", 0, 40);
    mine_empty(&mut chain, issuer.address, 1);
    let dir = PassportDirectory::new();

    let bad = sign_transaction(&[op], vec![Payment::units(issuer.address, 35, &info)], 5, 0, vec![], &issuer);
    assert_eq!(
        chain.check_transaction(&bad, chain.tip_time(), &dir),
        Err(Reject::FeeNotBlank { fee: 5, blank_inputs: 0 })
    );

    // Same transfer with the fee moved onto a blank input.
    let (blank_op, blank_out) = blank_coin(&chain, &issuer);
    let good = sign_transaction(
        &[op, blank_op],
        vec![
            Payment::units(issuer.address, 40, &info),
            Payment::blank(issuer.address, blank_out.amount - 5),
        ],
        5,
        0,
        vec![],
        &issuer,
    );
    assert_eq!(chain.check_transaction(&good, chain.tip_time(), &dir), Ok(5));
}

#[test]
fn authorize_produces_authentic_units_at_issuer() {
    let issuer = kp("issuer");
    let mut chain = equity_chain();
    let (info, op) = issue(&mut chain, &issuer, "Common", 0, 100);
    let out = chain.utxo()[&op].clone();
    assert_eq!(out.amount, 100);
    assert_eq!(out.owner(), Some(issuer.address));
    assert_eq!(info.issuer_address, issuer.address);
    assert_eq!(info.descriptor.security_type, SecurityType::CommonShares);
    assert_eq!(verify_authenticity(&op, &chain), Ok(Authenticity::Authentic));
}

#[test]
fn authorize_rejects_empty_and_annotated_inputs() {
    let issuer = kp("issuer");
    let mut chain = equity_chain();
    mine_empty(&mut chain, issuer.address, 1);
    let coins = coins_of(&chain, &issuer.address, None);
    assert_eq!(
        authorize(&coins, &issuer, descriptor("S", 0), 0, 0),
        Err(IssuanceError::EmptyAuthorization)
    );
    let (info, op) = issue(&mut chain, &issuer, "S", 0, 10);
    let lot = vec![(op, chain.utxo()[&op].clone())];
    assert_eq!(info.issuer_address, issuer.address);
    assert_eq!(
        authorize(&lot, &issuer, descriptor("S", 0), 5, 0),
        Err(IssuanceError::NonBlankInput(op))
    );
}

#[test]
fn holder_cancels_units_back_to_blank() {
    let issuer = kp("issuer");
    let holder = kp("holder");
    let mut chain = equity_chain();
    let (info, _) = issue(&mut chain, &issuer, "S", 0, 30);
    let tx = transfer(&chain, &issuer, Some(&info), LockScript::pay_to(holder.address), 10, 0, vec![]).unwrap();
    mine(&mut chain, issuer.address, &[tx]);
    let supply_before = chain.utxo_sum();

    let lot = coins_of(&chain, &holder.address, Some(&info));
    let tx = cancel(&lot, &[], 0, &holder).unwrap();
    assert_eq!(chain.check_transaction(&tx, chain.tip_time() + 600, &PassportDirectory::new()), Ok(0));
    let issued_before = chain.issued_so_far();
    mine(&mut chain, issuer.address, &[tx]);

    let balances = issuance::balances_of(&chain, &holder.address);
    assert_eq!(balances.get(&None), Some(&10));
    assert_eq!(balances.get(&Some(info)), None);
    assert_eq!(chain.utxo_sum() - supply_before, chain.issued_so_far() - issued_before);

    let blank = coins_of(&chain, &holder.address, None);
    assert!(matches!(cancel(&blank, &[], 0, &holder), Err(IssuanceError::AlreadyBlank(_))));
}

#[test]
fn recycled_units_authorize_for_a_new_issuer() {
    let first = kp("issuer-1");
    let second = kp("issuer-2");
    let mut chain = equity_chain();
    let (info, _) = issue(&mut chain, &first, "Old", 0, 25);
    let tx = transfer(&chain, &first, Some(&info), LockScript::pay_to(second.address), 25, 0, vec![]).unwrap();
    mine(&mut chain, first.address, &[tx]);
    let lot = coins_of(&chain, &second.address, Some(&info));
    mine(&mut chain, first.address, &[cancel(&lot, &[], 0, &second).unwrap()]);

    let recycled = coins_of(&chain, &second.address, None);
    assert_eq!(recycled.len(), 1);
    let tx = authorize(&recycled, &second, descriptor("New", 1), 25, 0).unwrap();
    let op = OutPoint::new(tx.txid(), 0);
    mine(&mut chain, first.address, &[tx]);
    assert_eq!(verify_authenticity(&op, &chain), Ok(Authenticity::Authentic));
    let summary = issuer_summary(&chain, &second.address);
    assert_eq!(summary.authorized_total, 25);
    assert_eq!(summary.at_origin, 25);
    let old = issuer_summary(&chain, &first.address);
    assert_eq!((old.authorized_total, old.circulating, old.cancelled), (25, 0, 25));
}

#[test]
fn authorization_cannot_be_replayed_onto_other_blanks() {
    let issuer = kp("issuer");
    let thief = kp("thief");
    let mut chain = equity_chain();
    let (info, _) = issue(&mut chain, &issuer, "S", 0, 10);
    mine_empty(&mut chain, thief.address, 1);
    let (op, out) = blank_coin(&chain, &thief);
    let tx = sign_transaction(&[op], vec![Payment::units(thief.address, out.amount, &info)], 0, 0, vec![], &thief);
    assert_eq!(
        chain.check_transaction(&tx, chain.tip_time(), &PassportDirectory::new()),
        Err(Reject::IssuerMismatch { output: 0 })
    );
}

#[test]
fn coinbase_output_is_blank() {
    let miner = kp("miner");
    let mut chain = equity_chain();
    mine_empty(&mut chain, miner.address, 1);
    let cb = chain.tip().coinbase.as_ref().unwrap();
    let op = OutPoint::new(cb.txid(), 0);
    assert_eq!(verify_authenticity(&op, &chain), Ok(Authenticity::Blank));
    let unknown = OutPoint::new(hash(b"nowhere"), 0);
    assert_eq!(
        verify_authenticity(&unknown, &chain),
        Err(AuthenticityError::UnknownOutpoint(unknown))
    );
}

#[test]
fn tampered_annotation_is_forged() {
    let issuer = kp("issuer");
    let holder = kp("holder");
    let mut chain = equity_chain();
    let (info, _) = issue(&mut chain, &issuer, "S", 0, 10);
    let tx = transfer(&chain, &issuer, Some(&info), LockScript::pay_to(holder.address), 4, 0, vec![]).unwrap();
    mine(&mut chain, issuer.address, &[tx]);

    let mut blocks = chain.blocks().to_vec();
    let last = blocks.last_mut().unwrap();
    let mut forged_info = info.clone();
    forged_info.descriptor.company_name = "Someone Else".into();
    last.transactions[0].witness.issuer_info[0] = Some(forged_info);
    let target = OutPoint::new(last.transactions[0].txid(), 0);
    let untouched = OutPoint::new(last.transactions[0].txid(), 1);
    let forged = ChainState::from_blocks_unchecked(chain.params.clone(), blocks);
    assert_eq!(verify_authenticity(&target, &forged), Ok(Authenticity::Forged));
    assert_eq!(verify_authenticity(&untouched, &forged), Ok(Authenticity::Authentic));
}

#[test]
fn block_pays_subsidy_plus_fees_in_fee_order() {
    let alice = kp("alice");
    let bob = kp("bob");
    let miner = kp("miner");
    let mut chain = equity_chain();
    mine_empty(&mut chain, alice.address, 1);
    mine_empty(&mut chain, bob.address, 1);
    let low = transfer(&chain, &alice, None, LockScript::pay_to(bob.address), 10, 2, vec![]).unwrap();
    let high = transfer(&chain, &bob, None, LockScript::pay_to(alice.address), 10, 5, vec![]).unwrap();
    let produced = chain.produce_block(&[low.clone(), high.clone()], miner.address, chain.tip_time() + 1, &PassportDirectory::new());
    let block = produced.block;
    assert_eq!(block.coinbase.as_ref().unwrap().base.outputs[0].amount, 50 + 7);
    assert_eq!(block.transactions, vec![high, low]);
    chain.apply_block(block, &PassportDirectory::new()).unwrap();
    assert!(chain.conservation_holds());
}

#[test]
fn empty_block_and_exhausted_supply() {
    let miner = kp("miner");
    let mut params = ChainParams::equity(T0);
    params.supply_cap = 120;
    let mut chain = ChainState::new(params);
    let amounts: Vec<u64> = (0..4)
        .map(|_| {
            mine_empty(&mut chain, miner.address, 1);
            chain.tip().coinbase.as_ref().map_or(0, |cb| cb.base.outputs[0].amount)
        })
        .collect();
    assert_eq!(amounts, vec![50, 50, 20, 0]);
    assert!(chain.tip().coinbase.is_none());
    assert_eq!(chain.issued_so_far(), 120);
    assert!(chain.conservation_holds());
}

#[test]
fn double_spend_rejected_within_and_across_blocks() {
    let alice = kp("alice");
    let bob = kp("bob");
    let carol = kp("carol");
    let mut chain = equity_chain();
    mine_empty(&mut chain, alice.address, 1);
    let a = transfer(&chain, &alice, None, LockScript::pay_to(bob.address), 50, 0, vec![]).unwrap();
    let b = transfer(&chain, &alice, None, LockScript::pay_to(carol.address), 50, 0, vec![]).unwrap();
    let dir = PassportDirectory::new();
    let produced = chain.produce_block(&[a.clone(), b.clone()], alice.address, chain.tip_time() + 1, &dir);
    assert_eq!(produced.block.transactions.len(), 1);
    assert_eq!(produced.rejected.len(), 1);
    assert!(matches!(produced.rejected[0].1, Reject::DoubleSpend { .. }));
    chain.apply_block(produced.block, &dir).unwrap();
    let later = chain.produce_block(&[a, b], alice.address, chain.tip_time() + 1, &dir);
    assert!(later.block.transactions.is_empty());
    assert!(later.rejected.iter().all(|(_, r)| matches!(r, Reject::DoubleSpend { .. })));
}

#[test]
fn signature_by_non_owner_is_bad_signature() {
    let alice = kp("alice");
    let mallory = kp("mallory");
    let mut chain = equity_chain();
    mine_empty(&mut chain, alice.address, 1);
    let (op, out) = blank_coin(&chain, &alice);
    let tx = sign_transaction(&[op], vec![Payment::blank(mallory.address, out.amount)], 0, 0, vec![], &mallory);
    assert_eq!(
        chain.check_transaction(&tx, chain.tip_time(), &PassportDirectory::new()),
        Err(Reject::BadSignature { input: 0 })
    );
}

#[test]
fn lock_time_gates_inclusion() {
    let alice = kp("alice");
    let mut chain = equity_chain();
    mine_empty(&mut chain, alice.address, 1);
    let (op, out) = blank_coin(&chain, &alice);
    let unlock = chain.tip_time() + 3600;
    let tx = sign_transaction(&[op], vec![Payment::blank(alice.address, out.amount)], 0, unlock, vec![], &alice);
    let dir = PassportDirectory::new();
    assert_eq!(
        chain.check_transaction(&tx, unlock - 1, &dir),
        Err(Reject::TimelockNotExpired { lock_time: unlock, now: unlock - 1 })
    );
    assert_eq!(chain.check_transaction(&tx, unlock, &dir), Ok(0));
}

#[test]
fn dependent_transactions_wait_one_block() {
    let alice = kp("alice");
    let bob = kp("bob");
    let mut chain = equity_chain();
    mine_empty(&mut chain, alice.address, 1);
    let parent = transfer(&chain, &alice, None, LockScript::pay_to(bob.address), 30, 0, vec![]).unwrap();
    let child = sign_transaction(
        &[OutPoint::new(parent.txid(), 0)],
        vec![Payment::blank(alice.address, 30)],
        0,
        0,
        vec![],
        &bob,
    );
    let dir = PassportDirectory::new();
    let produced = chain.produce_block(&[parent, child.clone()], bob.address, chain.tip_time() + 1, &dir);
    assert_eq!(produced.deferred, vec![child.txid()]);
    chain.apply_block(produced.block, &dir).unwrap();
    let next = chain.produce_block(&[child], bob.address, chain.tip_time() + 1, &dir);
    assert_eq!(next.block.transactions.len(), 1);
}

#[test]
fn restricted_transfer_needs_passport_in_witness() {
    let issuer = kp("issuer");
    let buyer = kp("buyer");
    let mut chain = equity_chain();
    let (info, _) = issue(&mut chain, &issuer, "R", 2, 10);
    let mut dir = PassportDirectory::new();
    let now = chain.tip_time() + 600;

    let bare = transfer(&chain, &issuer, Some(&info), LockScript::pay_to(buyer.address), 5, 0, vec![]).unwrap();
    // Level 2: the buyer needs a direct passport from the issuer.
    assert_eq!(
        chain.check_transaction(&bare, now, &dir),
        Err(Reject::RestrictionViolation {
            output: 0,
            denial: TransferDenial::NoDirectTrust
        })
    );
    let edge = issue_passport(&issuer, buyer.address, now - 1, now + 90 * DAY).unwrap();
    let with = transfer(&chain, &issuer, Some(&info), LockScript::pay_to(buyer.address), 5, 0, vec![edge.clone()]).unwrap();
    assert_eq!(chain.check_transaction(&with, now, &dir), Ok(0));

    dir.record_revocation(revoke_passport(&issuer, &edge, now - 1).unwrap());
    assert!(matches!(
        chain.check_transaction(&with, now, &dir),
        Err(Reject::RestrictionViolation { .. })
    ));
}

#[test]
fn payment_chain_rejects_annotations() {
    let issuer = kp("issuer");
    let mut chain = ChainState::new(ChainParams::payment(T0));
    mine_empty(&mut chain, issuer.address, 1);
    let coins = coins_of(&chain, &issuer.address, None);
    let tx = authorize(&coins, &issuer, descriptor("S", 0), 10, 0).unwrap();
    assert_eq!(
        chain.check_transaction(&tx, chain.tip_time(), &PassportDirectory::new()),
        Err(Reject::IssuerMismatch { output: 0 })
    );
}

#[test]
fn witness_never_changes_txid() {
    let issuer = kp("issuer");
    let other = kp("other");
    let mut chain = equity_chain();
    let (info, _) = issue(&mut chain, &issuer, "S", 1, 10);
    let tx = transfer(&chain, &issuer, Some(&info), LockScript::pay_to(other.address), 3, 0, vec![]).unwrap();
    let witnesses = [
        Witness::default(),
        Witness {
            issuer_info: vec![None, None],
            spends: vec![SpendProof::Key { signer: other.attest(b"x") }],
            passports: vec![],
        },
        chain.blocks()[1].all_transactions().next().unwrap().witness.clone(),
    ];
    for w in witnesses {
        let mut mutated = tx.clone();
        mutated.witness = w;
        assert_eq!(mutated.txid(), tx.txid());
    }
}

#[test]
fn snapshot_round_trips_through_canonical_json() {
    let issuer = kp("issuer");
    let holder = kp("holder");
    let mut chain = equity_chain();
    let (info, _) = issue(&mut chain, &issuer, "S", 0, 10);
    let tx = transfer(&chain, &issuer, Some(&info), LockScript::pay_to(holder.address), 3, 0, vec![]).unwrap();
    mine(&mut chain, issuer.address, &[tx]);
    let json = chain.export();
    let back = ChainState::import(&json).unwrap();
    assert_eq!(back, chain);
    assert_eq!(back.export(), json);
    assert!(json.contains("\"amount\":3"));
    assert!(matches!(ChainState::import("{"), Err(ImportError::Json(_))));
}

#[test]
fn apply_block_rejects_bad_headers() {
    let miner = kp("miner");
    let chain = equity_chain();
    let dir = PassportDirectory::new();
    let produced = chain.produce_block(&[], miner.address, T0 + 600, &dir);

    let mut wrong_prev = produced.block.clone();
    wrong_prev.header.prev_hash = hash(b"elsewhere");
    assert_eq!(chain.clone().apply_block(wrong_prev, &dir), Err(BlockError::BadPrevHash));

    let mut greedy = produced.block.clone();
    greedy.coinbase = Some(Transaction::coinbase(1, miner.address, 51));
    let all: Vec<_> = greedy.all_transactions().cloned().collect();
    greedy.header.base_merkle_root = tx::base_merkle_root(all.iter());
    greedy.header.full_merkle_root = tx::full_merkle_root(all.iter());
    assert_eq!(
        chain.clone().apply_block(greedy, &dir),
        Err(BlockError::BadCoinbase { expected: 50, got: 51 })
    );
}

fn twenty_block_chain() -> ChainState {
    let issuers: Vec<_> = (0..5).map(|i| kp(&format!("issuer-{i}"))).collect();
    let holder = kp("holder");
    let mut chain = equity_chain();
    for (i, issuer) in issuers.iter().enumerate() {
        let (info, _) = issue(&mut chain, issuer, &format!("S{i}"), 0, 20);
        let tx = transfer(&chain, issuer, Some(&info), LockScript::pay_to(holder.address), 5, 0, vec![]).unwrap();
        mine(&mut chain, issuer.address, &[tx]);
    }
    while chain.height() < 20 {
        mine_empty(&mut chain, holder.address, 1);
    }
    chain
}

#[test]
fn pruned_chain_verifies_and_is_smaller() {
    let chain = twenty_block_chain();
    let pruned = prune_witness(&chain);
    assert!(verify_pruned(&pruned));
    assert!(pruned.serialized_len() < chain.export().len());

    let genesis_only = equity_chain();
    assert!(verify_pruned(&prune_witness(&genesis_only)));
}

#[test]
fn pruned_chain_detects_base_mutation() {
    let chain = twenty_block_chain();
    let pruned = prune_witness(&chain);
    let height = pruned.blocks.iter().position(|b| b.transactions.len() > 1).unwrap();

    let mut amount = pruned.clone();
    amount.blocks[height].transactions[1].outputs[0].amount += 1;
    assert!(!verify_pruned(&amount));

    let mut fee = pruned.clone();
    fee.blocks[height].transactions[1].fee += 1;
    assert!(!verify_pruned(&fee));

    let mut link = pruned.clone();
    link.blocks[3].header.timestamp += 1;
    assert!(!verify_pruned(&link));
}
