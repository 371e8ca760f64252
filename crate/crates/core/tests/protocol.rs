mod common;

use common::{bundled, fixture, lines_with, run, run_with};
use xchain::bridge::BridgePolicy;
use xchain::library::token;
use xchain::protocol::encode_lock;
use xchain::sim::{Action, Scheduled, Stop, When};
use xchain::txn::TxnError;
use xchain::{
    AbortReason, Address, Call, Chain, ChainId, CrossChainTransaction, IndexedAction, LockOrder, MethodFailure,
    RunOptions, RunOutput, Scenario, ScenarioError, Simulation, TxId, TxOutcome, Value, World,
};

fn addr(s: &str) -> Address {
    s.parse().unwrap()
}

fn balance(out: &RunOutput, token: &str, account: &str) -> i64 {
    let a = addr(token);
    out.world.chains[&a.chain]
        .state_of(&a)
        .unwrap()
        .int(&xchain::library::balance_var(account))
        .unwrap()
}

fn no_locks_left(out: &RunOutput) -> bool {
    out.world
        .chains
        .values()
        .all(|c| c.contracts.values().all(|k| !k.is_locked()))
        && out.world.executors.values().all(|e| e.held_locks().next().is_none())
}

#[test]
fn swap_commits_and_moves_both_tokens() {
    let out = run("swap", 1);
    assert_eq!(out.outcome(&TxId("T0".into())), Some(&TxOutcome::Committed));
    assert_eq!(balance(&out, "fantom/tokenA", "alice"), 6);
    assert_eq!(balance(&out, "fantom/tokenA", "bob"), 14);
    assert_eq!(balance(&out, "mumbai/tokenB", "bob"), 4);
    assert_eq!(balance(&out, "mumbai/tokenB", "alice"), 16);
    assert!(no_locks_left(&out));
}

#[test]
fn lock_failure_aborts_without_effects() {
    let out = run("swap-lockfail", 1);
    assert_eq!(
        out.outcome(&TxId("T0".into())),
        Some(&TxOutcome::Aborted(AbortReason::LockConflict))
    );
    assert_eq!(balance(&out, "fantom/tokenA", "alice"), 10);
    assert_eq!(balance(&out, "mumbai/tokenB", "alice"), 10);
    // The competing executor still holds tokenB; everything the protocol
    // locked has been released.
    let tok_b = &out.world.chains[&ChainId::new("mumbai")].contracts[&addr("mumbai/tokenB")];
    assert_eq!(tok_b.locked_by(), Some(&addr("mumbai/executor2")));
    assert!(!out.world.chains[&ChainId::new("fantom")].contracts[&addr("fantom/tokenA")].is_locked());
    assert!(out.world.executors.values().all(|e| e.held_locks().next().is_none()));
}

#[test]
fn failed_action_rolls_back_every_chain() {
    let out = run("swap-updatefail", 1);
    assert_eq!(
        out.outcome(&TxId("T0".into())),
        Some(&TxOutcome::Aborted(AbortReason::OpFailed))
    );
    // tokenA's transfer ran and was restored from the checkpoint.
    let text = out.trace.render();
    assert!(!lines_with(&text, &["target=fantom/tokenA", "method=transfer", "outcome=ok"]).is_empty());
    assert_eq!(balance(&out, "fantom/tokenA", "alice"), 10);
    assert_eq!(balance(&out, "fantom/tokenA", "bob"), 10);
    assert_eq!(balance(&out, "mumbai/tokenB", "bob"), 10);
    assert!(no_locks_left(&out));
    assert!(!lines_with(&text, &["kind=UnlockEvt", "params=[b:true]"]).is_empty());
}

#[test]
fn layered_transaction_takes_two_rounds() {
    let out = run("three-exchange", 1);
    let (_, _, outcome, rounds) = xchain::verify::outcomes(&out.trace).remove(0);
    assert_eq!(outcome, TxOutcome::Committed);
    assert_eq!(rounds, 2);
    // Action 0 completes before actions 1 and 2 start.
    let text = out.trace.render();
    let pos = |needle: &str| text.find(needle).unwrap_or_else(|| panic!("{needle}"));
    let a0 = pos("target=fantom/tokenA method=transfer");
    assert!(a0 < pos("target=mumbai/tokenB method=transfer"));
    assert!(a0 < pos("target=sepolia/tokenC method=transfer"));
}

#[test]
fn locks_are_taken_in_order_and_released_in_reverse() {
    let out = run("three-exchange", 4);
    let text = out.trace.render();
    let executor_ops: Vec<(String, String)> = text
        .lines()
        .filter(|l| l.contains("kind=Invoke") && (l.contains("method=lock_scope") || l.contains("method=unlock_scope")))
        .map(|l| {
            let chain = l.split("chain=").nth(1).unwrap().split(' ').next().unwrap().to_string();
            let m = l.split("method=").nth(1).unwrap().split(' ').next().unwrap().to_string();
            (m, chain)
        })
        .collect();
    let locks: Vec<&str> = executor_ops.iter().filter(|(m, _)| m == "lock_scope").map(|(_, c)| c.as_str()).collect();
    let unlocks: Vec<&str> = executor_ops.iter().filter(|(m, _)| m == "unlock_scope").map(|(_, c)| c.as_str()).collect();
    assert_eq!(locks, ["fantom", "mumbai", "sepolia"]);
    assert_eq!(unlocks, ["sepolia", "mumbai", "fantom"]);
}

#[test]
fn busy_executor_rejects_second_proposal() {
    let out = run_with(&fixture("busy.toml"), RunOptions::seeded(3));
    assert_eq!(
        out.outcome(&TxId("T1".into())),
        Some(&TxOutcome::Rejected(MethodFailure::ExecutorBusy))
    );
    assert_eq!(out.outcome(&TxId("T0".into())), Some(&TxOutcome::Committed));
    assert_eq!(balance(&out, "fantom/side", "carol"), 5);
}

#[test]
fn symmetric_conflict_depends_on_lock_order() {
    let s = bundled("symmetric-conflict");
    let (t0, t1) = (TxId("T0".into()), TxId("T1".into()));
    for seed in 0..20 {
        let declared = run_with(
            &s,
            RunOptions {
                seed: Some(seed),
                lock_order: Some(LockOrder::Declared),
                ..Default::default()
            },
        );
        let conflict = TxOutcome::Aborted(AbortReason::LockConflict);
        assert_eq!(declared.outcome(&t0), Some(&conflict), "seed {seed}");
        assert_eq!(declared.outcome(&t1), Some(&conflict), "seed {seed}");
        assert!(no_locks_left(&declared));

        let canonical = run_with(&s, RunOptions::seeded(seed));
        let commits = [&t0, &t1]
            .iter()
            .filter(|t| canonical.outcome(t) == Some(&TxOutcome::Committed))
            .count();
        assert_eq!(commits, 1, "seed {seed}");
    }
}

#[test]
fn cyclic_precedence_is_rejected() {
    let chain = ChainId::new("c");
    let act = |id| IndexedAction {
        id,
        chain: chain.clone(),
        target: Address::new(&chain, "tok"),
        method: "noop".into(),
        params: vec![],
    };
    let r = CrossChainTransaction::new(
        TxId("T".into()),
        vec![act(0), act(1), act(2)],
        [(0, 1), (1, 2), (2, 0)],
        Address::new(&chain, "o"),
    );
    assert_eq!(r, Err(TxnError::CyclicOrder(TxId("T".into()))));

    let text = swap_text().replace("originator = \"alice\"", "originator = \"alice\"\nprec = [[0, 1], [1, 0]]");
    let err = Scenario::parse(&text, "cyclic").expect_err("cycle rejected");
    assert!(matches!(err, ScenarioError::Validation { .. }), "{err}");
    assert!(err.to_string().contains("cycle"), "{err}");
}

fn swap_text() -> &'static str {
    xchain::scenario::BUNDLED.iter().find(|(n, _)| *n == "swap").unwrap().1
}

fn two_chain_world() -> World {
    let mut w = World::new(7);
    for id in ["p", "q"] {
        let cid = ChainId::new(id);
        let mut c = Chain::new(cid.clone());
        let owner = Address::new(&cid, "owner");
        let tok = Address::new(&cid, "tok");
        c.deploy(token(&tok, &owner, &[("u", 3), ("v", 0)])).unwrap();
        let exec = c.executor.clone();
        c.try_add_executor(&owner, &tok, &exec).unwrap();
        w.add_chain(c);
    }
    w.connect(&ChainId::new("p"), &ChainId::new("q"), BridgePolicy::default()).unwrap();
    w
}

#[test]
fn executor_entry_points_reject_strangers() {
    let mut w = two_chain_world();
    let stranger = addr("p/mallory");
    let call = Call::new(
        &stranger,
        &addr("p/executor"),
        "lock_scope",
        encode_lock(&TxId("X".into()), &[addr("p/tok")]),
    );
    assert_eq!(w.dispatch(&call, None).unwrap(), Err(MethodFailure::NotTrusted));
    assert!(!w.chains[&ChainId::new("p")].contracts[&addr("p/tok")].is_locked());
}

#[test]
fn programmatic_world_runs_a_transaction() {
    let w = two_chain_world();
    let act = |id, c: &str, from: &str, to: &str| IndexedAction {
        id,
        chain: ChainId::new(c),
        target: addr(&format!("{c}/tok")),
        method: "transfer".into(),
        params: vec![Value::text(from), Value::text(to), Value::Int(2)],
    };
    let txn = CrossChainTransaction::new(
        TxId("T9".into()),
        vec![act(0, "p", "u", "v"), act(1, "q", "u", "v")],
        [],
        addr("p/u"),
    )
    .unwrap();
    let sim = Simulation {
        world: w,
        schedule: vec![Scheduled {
            when: When::At(0),
            action: Action::Propose {
                proposer: addr("p/executor"),
                txn,
                declared: None,
            },
            adversarial: false,
        }],
        max_ticks: 500,
        stop: Stop::Quiesce,
    };
    let out = sim.run();
    assert!(out.error.is_none());
    assert_eq!(out.outcome(&TxId("T9".into())), Some(&TxOutcome::Committed));
    assert_eq!(balance(&out, "q/tok", "v"), 2);
    let v = xchain::verify::check_all_or_nothing(&out.trace, &out.transactions, &out.initial).unwrap();
    assert!(v.pass(), "{}", v.summary());
}

#[test]
fn interference_never_changes_outcomes() {
    for name in xchain::scenario::HONEST {
        let s = bundled(name);
        for seed in 0..30 {
            let quiet = run_with(&s, RunOptions::seeded(seed));
            let noisy = run_with(
                &s,
                RunOptions {
                    seed: Some(seed),
                    interference: true,
                    ..Default::default()
                },
            );
            assert!(noisy.error.is_none(), "{name} seed {seed}: {:?}", noisy.error);
            for t in &quiet.transactions {
                assert_eq!(quiet.outcome(&t.tx_id), noisy.outcome(&t.tx_id), "{name} seed {seed} {}", t.tx_id);
            }
            assert!(no_locks_left(&noisy) || name == &"swap-lockfail", "{name} seed {seed}");
        }
    }
}
