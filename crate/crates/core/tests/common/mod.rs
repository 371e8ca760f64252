#![allow(dead_code)]

use xchain::{RunOptions, RunOutput, Scenario};

pub fn bundled(name: &str) -> Scenario {
    Scenario::bundled(name).unwrap_or_else(|| panic!("no bundled scenario {name}"))
}

pub fn run_with(s: &Scenario, opts: RunOptions) -> RunOutput {
    s.build(&opts).expect("scenario builds").run()
}

pub fn run(name: &str, seed: u64) -> RunOutput {
    run_with(&bundled(name), RunOptions::seeded(seed))
}

pub fn fixture(name: &str) -> Scenario {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{e}"))
}

/// Rendered trace lines containing every needle.
pub fn lines_with<'a>(out: &'a str, needles: &[&str]) -> Vec<&'a str> {
    out.lines().filter(|l| needles.iter().all(|n| l.contains(n))).collect()
}

pub mod history {
    //! Hand-built histories over two counters, for the serializability
    //! checker.
    use xchain::chain::Invocation;
    use xchain::library::counter;
    use xchain::{Address, Call, Chain, ChainId, Chains, Event, Trace, TxId, TxOutcome, Value};

    pub fn chain_id() -> ChainId {
        ChainId::new("c")
    }

    pub fn at(local: &str) -> Address {
        Address::new(&chain_id(), local)
    }

    pub fn initial() -> Chains {
        let mut c = Chain::new(chain_id());
        c.deploy(counter(&at("c1"), &at("o"), 0)).unwrap();
        c.deploy(counter(&at("c2"), &at("o"), 0)).unwrap();
        let mut chains = Chains::new();
        chains.insert(chain_id(), c);
        chains
    }

    pub fn inc(trace: &mut Trace, who: &str, ctr: &str, returns: i64, tx: Option<&str>) {
        let call = Call::new(&at(who), &at(ctr), "increment", vec![]);
        let tx = tx.map(|t| TxId(t.into()));
        let inv = Invocation::from_call(&call, Ok(Value::Int(returns)), vec![at(ctr)], tx.as_ref());
        trace.push(Some(&chain_id()), Event::Invoke(inv));
        trace.now += 1;
    }

    pub fn commit(trace: &mut Trace, tx: &str) {
        trace.push(
            Some(&chain_id()),
            Event::Outcome {
                tx: TxId(tx.into()),
                outcome: TxOutcome::Committed,
                rounds: 1,
            },
        );
        trace.now += 1;
    }

    /// Two increments of one counter where the one that finished first saw
    /// the other's effect: legal only if the real-time order is ignored.
    pub fn stale_read() -> Trace {
        let mut t = Trace::new();
        inc(&mut t, "x", "c1", 2, None);
        inc(&mut t, "y", "c1", 1, None);
        t
    }

    /// Two overlapping transactions each observing half of the other.
    pub fn crossed_increments() -> Trace {
        let mut t = Trace::new();
        inc(&mut t, "e", "c1", 1, Some("T0"));
        inc(&mut t, "e", "c2", 1, Some("T1"));
        inc(&mut t, "e", "c2", 2, Some("T0"));
        inc(&mut t, "e", "c1", 2, Some("T1"));
        commit(&mut t, "T0");
        commit(&mut t, "T1");
        t
    }

    /// Overlapping transactions on disjoint counters, plus a later
    /// independent increment that sees both.
    pub fn disjoint_overlap() -> Trace {
        let mut t = Trace::new();
        inc(&mut t, "e", "c1", 1, Some("T0"));
        inc(&mut t, "e", "c2", 1, Some("T1"));
        inc(&mut t, "e", "c1", 2, Some("T0"));
        commit(&mut t, "T0");
        commit(&mut t, "T1");
        inc(&mut t, "z", "c2", 2, None);
        t
    }
}

pub mod discipline {
    //! Random operation sequences against one lockable token, checked
    //! step by step against a plain model of the lock rules.
    use proptest::prelude::*;
    use xchain::library::{balance_var, token};
    use xchain::{Address, Call, Chain, ChainId, MethodFailure, Trace, Value};

    pub const CALLERS: [&str; 4] = ["executor", "executor2", "mallory", "alice"];
    const TRUSTED: [&str; 2] = ["executor", "executor2"];
    const ACCOUNTS: [&str; 3] = ["alice", "bob", "carol"];

    #[derive(Clone, Debug)]
    pub enum Op {
        Lock(usize),
        Unlock(usize, bool),
        Transfer { caller: usize, from: usize, to: usize, amount: i64 },
    }

    pub fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..4usize).prop_map(Op::Lock),
            (0..4usize, any::<bool>()).prop_map(|(c, f)| Op::Unlock(c, f)),
            (0..4usize, 0..3usize, 0..3usize, 0..8i64).prop_map(|(caller, from, to, amount)| Op::Transfer {
                caller,
                from,
                to,
                amount
            }),
        ]
    }

    pub fn ops() -> impl Strategy<Value = Vec<Op>> {
        prop::collection::vec(op(), 1..40)
    }

    #[derive(Clone, Debug, PartialEq)]
    struct Model {
        bal: [i64; 3],
        lock: Option<(usize, [i64; 3])>,
    }

    /// Runs `ops` on a real chain and on the model; `Err` describes the
    /// first divergence.
    pub fn check(ops: &[Op]) -> Result<(), String> {
        let id = ChainId::new("c");
        let at = |s: &str| Address::new(&id, s);
        let tok = at("tok");
        let mut chain = Chain::new(id.clone());
        chain.deploy(token(&tok, &at("owner"), &[("alice", 5), ("bob", 5), ("carol", 0)])).unwrap();
        for t in TRUSTED {
            chain.try_add_executor(&at("owner"), &tok, &at(t)).unwrap();
        }
        let mut model = Model { bal: [5, 5, 0], lock: None };
        let mut trace = Trace::new();
        for (step, op) in ops.iter().enumerate() {
            let before = chain.state_of(&tok).unwrap().clone();
            let (got, want): (Result<Value, MethodFailure>, Result<(), MethodFailure>) = match *op {
                Op::Lock(c) => {
                    let got = chain.lock(&mut trace, &at(CALLERS[c]), &tok, None);
                    let want = if model.lock.is_some() {
                        Err(MethodFailure::AlreadyLocked)
                    } else if !TRUSTED.contains(&CALLERS[c]) {
                        Err(MethodFailure::NotTrusted)
                    } else {
                        model.lock = Some((c, model.bal));
                        Ok(())
                    };
                    (got, want)
                }
                Op::Unlock(c, failure) => {
                    let got = chain.unlock(&mut trace, &at(CALLERS[c]), &tok, failure, None);
                    let want = match model.lock {
                        Some((holder, saved)) if holder == c => {
                            if failure {
                                model.bal = saved;
                            }
                            model.lock = None;
                            Ok(())
                        }
                        _ => Err(MethodFailure::NotLockOwner),
                    };
                    (got, want)
                }
                Op::Transfer { caller, from, to, amount } => {
                    let call = Call::new(
                        &at(CALLERS[caller]),
                        &tok,
                        "transfer",
                        vec![Value::text(ACCOUNTS[from]), Value::text(ACCOUNTS[to]), Value::Int(amount)],
                    );
                    let got = chain.invoke(&mut trace, &call, None).map_err(|e| e.to_string())?;
                    let want = match model.lock {
                        Some((holder, _)) if holder != caller => Err(MethodFailure::LockedByOther),
                        _ if model.bal[from] < amount => Err(MethodFailure::InsufficientFunds),
                        _ => {
                            model.bal[from] -= amount;
                            model.bal[to] += amount;
                            Ok(())
                        }
                    };
                    (got, want)
                }
            };
            if got.is_ok() != want.is_ok() || (got.is_err() && got.as_ref().err() != want.as_ref().err()) {
                return Err(format!("step {step} {op:?}: got {got:?}, model says {want:?}"));
            }
            let st = chain.state_of(&tok).unwrap();
            for (i, a) in ACCOUNTS.iter().enumerate() {
                if st.int(&balance_var(a)) != Some(model.bal[i]) {
                    return Err(format!("step {step} {op:?}: {a} has {:?}, model says {}", st.int(&balance_var(a)), model.bal[i]));
                }
            }
            if want.is_err() && st != &before {
                return Err(format!("step {step} {op:?}: failed call changed state"));
            }
            let c = chain.contract(&tok).unwrap();
            let holder = model.lock.map(|(h, _)| at(CALLERS[h]));
            if c.locked_by() != holder.as_ref() {
                return Err(format!("step {step} {op:?}: lockedBy {:?}, model says {holder:?}", c.locked_by()));
            }
        }
        Ok(())
    }

    pub const CASES: u32 = 10_000;
}
