//! Two-phase atomic multi-chain transactions.
//!
//! Every chain has one trusted executor contract. The executor on the chain
//! where a transaction is proposed becomes its proposer and drives it:
//!
//! 1. lock the transaction's scope chain by chain, in lock order;
//! 2. run the layers one round at a time, all actions of a round in flight
//!    together;
//! 3. unlock every contacted chain in reverse order, restoring checkpoints
//!    if anything failed.
//!
//! Requests to the proposer's own chain go straight to the local executor;
//! all others travel as remote calls through the adapters.

use std::collections::BTreeMap;
use std::fmt;

use crate::adapter::{completion_result, FutureRef};
use crate::chain::{Call, CallResult, Invocation, MethodFailure};
use crate::sim::{SimError, World};
use crate::trace::Event;
use crate::txn::{layer_partition, scope_union, CrossChainTransaction, IndexedAction, LayerPlan};
use crate::types::{Address, ChainId, TxId, Value};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LockOrder {
    /// Sorted chain ids, identical for every transaction.
    #[default]
    Canonical,
    /// Each transaction's own declared chain order.
    Declared,
}

impl std::str::FromStr for LockOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(LockOrder::Canonical),
            "declared" => Ok(LockOrder::Declared),
            other => Err(format!("unknown lock order `{other}` (canonical|declared)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbortReason {
    /// Some chain refused to lock the transaction's scope.
    LockConflict,
    OpFailed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TxOutcome {
    Committed,
    Aborted(AbortReason),
    Rejected(MethodFailure),
}

impl fmt::Display for TxOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TxOutcome::Committed => f.write_str("Committed"),
            TxOutcome::Aborted(r) => write!(f, "Aborted({r:?})"),
            TxOutcome::Rejected(e) => write!(f, "Rejected({e})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    /// `next` indexes the next chain in lock order to request.
    Locking { next: usize },
    Executing { round: usize },
    Unlocking {
        failure: bool,
        next: usize,
        order: Vec<ChainId>,
        outcome: TxOutcome,
    },
    Done(TxOutcome),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Purpose {
    Lock(ChainId),
    Action(u32),
    Unlock(ChainId),
}

#[derive(Clone, Debug)]
pub struct ProposerState {
    pub txn: CrossChainTransaction,
    pub plan: LayerPlan,
    pub scopes: BTreeMap<ChainId, Vec<Address>>,
    pub lock_order: Vec<ChainId>,
    pub phase: Phase,
    pub pending: BTreeMap<FutureRef, Purpose>,
    collected: Vec<(Purpose, CallResult)>,
    /// Chains whose lock request was acknowledged, in lock order.
    pub locked_chains: Vec<ChainId>,
    pub rounds: u32,
}

impl ProposerState {
    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done(_))
    }

    pub fn outcome(&self) -> Option<&TxOutcome> {
        match &self.phase {
            Phase::Done(o) => Some(o),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExecutorContract {
    pub addr: Address,
    /// Locks held per transaction, in acquisition order.
    pub held: BTreeMap<TxId, Vec<Address>>,
    /// The transaction this executor proposes, if any; one at a time.
    pub proposer: Option<ProposerState>,
    pub history: Vec<(TxId, TxOutcome, u32)>,
}

impl ExecutorContract {
    pub fn new(addr: Address) -> Self {
        ExecutorContract {
            addr,
            held: BTreeMap::new(),
            proposer: None,
            history: Vec::new(),
        }
    }

    pub fn active_tx(&self) -> Option<&TxId> {
        self.proposer
            .as_ref()
            .filter(|p| !p.is_done())
            .map(|p| &p.txn.tx_id)
    }

    pub fn held_locks(&self) -> impl Iterator<Item = &Address> {
        self.held.values().flatten()
    }
}

fn tx_param(params: &[Value]) -> Result<TxId, MethodFailure> {
    params
        .first()
        .and_then(Value::as_str)
        .map(|s| TxId(s.to_string()))
        .ok_or(MethodFailure::BadParams)
}

pub fn encode_lock(tx: &TxId, scope: &[Address]) -> Vec<Value> {
    let mut p = vec![Value::text(&tx.0)];
    p.extend(scope.iter().map(Address::to_value));
    p
}

pub fn encode_action(tx: &TxId, a: &IndexedAction) -> Vec<Value> {
    let mut p = vec![Value::text(&tx.0), a.target.to_value(), Value::text(&a.method)];
    p.extend(a.params.iter().cloned());
    p
}

pub fn encode_unlock(tx: &TxId, failure: bool) -> Vec<Value> {
    vec![Value::text(&tx.0), Value::Bool(failure)]
}

impl World {
    pub fn is_executor(&self, addr: &Address) -> bool {
        self.executors.contains_key(addr)
    }

    fn authorized(&self, executor: &Address, caller: &Address) -> bool {
        caller == executor || self.executors.contains_key(caller)
    }

    fn record_executor_call(&mut self, executor: &Address, call: &Call, outcome: &CallResult, tx: Option<&TxId>) {
        let inv = Invocation::from_call(call, outcome.clone(), vec![], tx);
        let chain = self.chains.get_mut(&executor.chain).expect("executor chain");
        chain.record(&mut self.trace, Event::Invoke(inv));
    }

    /// Entry point for calls whose target is an executor contract.
    pub(crate) fn executor_entry(&mut self, call: &Call) -> Result<CallResult, SimError> {
        let exec = &call.target;
        let p = &call.params;
        match call.method.as_str() {
            "lock_scope" => {
                let tx = match tx_param(p) {
                    Ok(t) => t,
                    Err(e) => return Ok(self.refuse(call, e)),
                };
                let scope: Option<Vec<Address>> = p[1..].iter().map(Address::from_value).collect();
                match scope {
                    Some(w) => self.executor_lock_scope(exec, &call.caller, &tx, &w),
                    None => Ok(self.refuse(call, MethodFailure::BadParams)),
                }
            }
            "run_action" => {
                let tx = match tx_param(p) {
                    Ok(t) => t,
                    Err(e) => return Ok(self.refuse(call, e)),
                };
                let target = p.get(1).and_then(Address::from_value);
                let method = p.get(2).and_then(Value::as_str);
                match (target, method) {
                    (Some(target), Some(method)) => {
                        let action = IndexedAction {
                            id: 0,
                            chain: target.chain.clone(),
                            target,
                            method: method.to_string(),
                            params: p[3..].to_vec(),
                        };
                        self.executor_run_action(exec, &call.caller, &tx, &action)
                    }
                    _ => Ok(self.refuse(call, MethodFailure::BadParams)),
                }
            }
            "unlock_scope" => {
                let tx = match tx_param(p) {
                    Ok(t) => t,
                    Err(e) => return Ok(self.refuse(call, e)),
                };
                match p.get(1).and_then(Value::as_bool) {
                    Some(failure) => self.executor_unlock_scope(exec, &call.caller, &tx, failure),
                    None => Ok(self.refuse(call, MethodFailure::BadParams)),
                }
            }
            _ => Ok(self.refuse(call, MethodFailure::UnknownMethod)),
        }
    }

    fn refuse(&mut self, call: &Call, e: MethodFailure) -> CallResult {
        let r = Err(e);
        self.record_executor_call(&call.target, call, &r, None);
        r
    }

    /// Locks every contract of `scope`, in order, within one invocation. If
    /// any lock fails, the ones taken so far are released and a Nack naming
    /// the first failure is returned.
    pub fn executor_lock_scope(
        &mut self,
        executor: &Address,
        caller: &Address,
        tx: &TxId,
        scope: &[Address],
    ) -> Result<CallResult, SimError> {
        let call = Call::new(caller, executor, "lock_scope", encode_lock(tx, scope));
        if !self.authorized(executor, caller) {
            return Ok(self.refuse(&call, MethodFailure::NotTrusted));
        }
        let chain = self.chains.get_mut(&executor.chain).expect("executor chain");
        let mut taken = Vec::new();
        let mut result = Ok(Value::Bool(true));
        for addr in scope {
            match chain.lock(&mut self.trace, executor, addr, Some(tx)) {
                Ok(_) => taken.push(addr.clone()),
                Err(e) => {
                    for a in taken.iter().rev() {
                        chain
                            .unlock(&mut self.trace, executor, a, true, Some(tx))
                            .expect("releasing a lock just taken");
                    }
                    taken.clear();
                    result = Err(MethodFailure::Nack(format!("{e}@{addr}")));
                    break;
                }
            }
        }
        if !taken.is_empty() {
            let ex = self.executors.get_mut(executor).expect("executor");
            ex.held.entry(tx.clone()).or_default().extend(taken);
        }
        self.record_executor_call(executor, &call, &result, Some(tx));
        Ok(result)
    }

    /// Runs one action with the executor as caller. The executor must hold,
    /// for this transaction, every lock the action's scope needs.
    pub fn executor_run_action(
        &mut self,
        executor: &Address,
        caller: &Address,
        tx: &TxId,
        action: &IndexedAction,
    ) -> Result<CallResult, SimError> {
        let call = Call::new(caller, executor, "run_action", encode_action(tx, action));
        if !self.authorized(executor, caller) {
            return Ok(self.refuse(&call, MethodFailure::NotTrusted));
        }
        let chain = self.chains.get(&executor.chain).expect("executor chain");
        let scope = chain
            .contract(&action.target)
            .and_then(|c| c.scope_of(&action.method));
        if let Some(scope) = scope {
            let held = self.executors[executor].held.get(tx);
            if let Some(missing) = scope.iter().find(|a| !held.is_some_and(|h| h.contains(a))) {
                return Err(SimError::ScopeNotLocked {
                    tx: tx.clone(),
                    contract: missing.clone(),
                });
            }
        }
        let inner = Call::new(executor, &action.target, &action.method, action.params.clone());
        let chain = self.chains.get_mut(&executor.chain).expect("executor chain");
        let r = chain.invoke(&mut self.trace, &inner, Some(tx))?;
        let result = r.map_err(|e| MethodFailure::Nack(e.to_string()));
        self.record_executor_call(executor, &call, &result, Some(tx));
        Ok(result)
    }

    /// Unlocks everything held for `tx`, newest first, restoring checkpoints
    /// when `failure` is set. With nothing held this is a no-op Ack.
    pub fn executor_unlock_scope(
        &mut self,
        executor: &Address,
        caller: &Address,
        tx: &TxId,
        failure: bool,
    ) -> Result<CallResult, SimError> {
        let call = Call::new(caller, executor, "unlock_scope", encode_unlock(tx, failure));
        if !self.authorized(executor, caller) {
            return Ok(self.refuse(&call, MethodFailure::NotTrusted));
        }
        let held = self
            .executors
            .get_mut(executor)
            .expect("executor")
            .held
            .remove(tx)
            .unwrap_or_default();
        let chain = self.chains.get_mut(&executor.chain).expect("executor chain");
        for a in held.iter().rev() {
            chain
                .unlock(&mut self.trace, executor, a, failure, Some(tx))
                .expect("executor holds this lock");
        }
        let result = Ok(Value::Bool(true));
        self.record_executor_call(executor, &call, &result, Some(tx));
        Ok(result)
    }

    /// Hands `txn` to the executor at `proposer`, which starts locking right
    /// away. `declared_order` is used only under [`LockOrder::Declared`].
    pub fn propose(
        &mut self,
        proposer: &Address,
        txn: CrossChainTransaction,
        declared_order: Option<Vec<ChainId>>,
    ) -> Result<CallResult, SimError> {
        txn.validate_against(&self.chains)?;
        let call = Call::new(&txn.originator, proposer, "propose", vec![Value::text(&txn.tx_id.0)]);
        let busy = self
            .executors
            .get(proposer)
            .ok_or_else(|| SimError::UnknownExecutor(proposer.clone()))?
            .active_tx()
            .is_some();
        if busy {
            let r = Err(MethodFailure::ExecutorBusy);
            self.record_executor_call(proposer, &call, &r, Some(&txn.tx_id));
            self.trace.push(
                Some(&proposer.chain),
                Event::Outcome {
                    tx: txn.tx_id.clone(),
                    outcome: TxOutcome::Rejected(MethodFailure::ExecutorBusy),
                    rounds: 0,
                },
            );
            return Ok(r);
        }
        for c in txn.chains() {
            let exec = Address::new(&c, "executor");
            if c != proposer.chain && self.adapter_between(&proposer.chain, &c).is_none() {
                return Err(SimError::NoRoute(proposer.chain.clone(), c));
            }
            if !self.executors.contains_key(&exec) {
                return Err(SimError::UnknownExecutor(exec));
            }
        }
        let plan = layer_partition(&txn)?;
        let scopes = txn
            .chains()
            .into_iter()
            .map(|c| {
                let s = scope_union(&txn, &c, &self.chains).into_iter().collect();
                (c, s)
            })
            .collect();
        let lock_order = match self.lock_order {
            LockOrder::Canonical => txn.chains(),
            LockOrder::Declared => declared_order.unwrap_or_else(|| txn.chains_declared()),
        };
        let r = Ok(Value::text(&txn.tx_id.0));
        self.record_executor_call(proposer, &call, &r, Some(&txn.tx_id));
        let state = ProposerState {
            txn,
            plan,
            scopes,
            lock_order,
            phase: Phase::Locking { next: 0 },
            pending: BTreeMap::new(),
            collected: Vec::new(),
            locked_chains: Vec::new(),
            rounds: 0,
        };
        self.executors.get_mut(proposer).expect("checked").proposer = Some(state);
        self.proposer_step(proposer)?;
        Ok(r)
    }

    /// Sends one executor request for the proposer: directly when `chain` is
    /// the proposer's own chain, otherwise as a remote call.
    fn issue(
        &mut self,
        proposer: &Address,
        st: &mut ProposerState,
        chain: &ChainId,
        method: &str,
        params: Vec<Value>,
        purpose: Purpose,
    ) -> Result<(), SimError> {
        let target = Address::new(chain, "executor");
        if chain == &proposer.chain {
            let call = Call::new(proposer, &target, method, params);
            let r = self.executor_entry(&call)?;
            st.collected.push((purpose, r));
        } else {
            let adapter = self
                .adapter_between(&proposer.chain, chain)
                .ok_or_else(|| SimError::NoRoute(proposer.chain.clone(), chain.clone()))?;
            let f = self.rcall(&adapter, proposer, (&target, method), params, &target)?;
            st.pending.insert(f, purpose);
        }
        Ok(())
    }

    fn issue_round(&mut self, proposer: &Address, st: &mut ProposerState, round: usize) -> Result<(), SimError> {
        st.rounds += 1;
        for id in st.plan.layers[round].clone() {
            let a = st.txn.action(id).expect("planned").clone();
            let params = encode_action(&st.txn.tx_id, &a);
            self.issue(proposer, st, &a.chain, "run_action", params, Purpose::Action(id))?;
        }
        Ok(())
    }

    /// Advances the proposer's state machine as far as resolved results
    /// allow. Called after every delivery round.
    pub fn proposer_step(&mut self, proposer: &Address) -> Result<(), SimError> {
        let Some(mut st) = self.executors.get_mut(proposer).and_then(|e| e.proposer.take()) else {
            return Ok(());
        };
        let r = self.drive(proposer, &mut st);
        let ex = self.executors.get_mut(proposer).expect("executor");
        if let Phase::Done(o) = &st.phase {
            if ex.history.last().map(|h| &h.0) != Some(&st.txn.tx_id) {
                ex.history.push((st.txn.tx_id.clone(), o.clone(), st.rounds));
            }
        }
        ex.proposer = Some(st);
        r
    }

    fn drive(&mut self, proposer: &Address, st: &mut ProposerState) -> Result<(), SimError> {
        loop {
            let resolved: Vec<FutureRef> = st
                .pending
                .keys()
                .filter(|f| self.query(f).map(|s| s.is_terminal()).unwrap_or(false))
                .cloned()
                .collect();
            for f in resolved {
                let purpose = st.pending.remove(&f).expect("pending");
                let r = completion_result(&self.query(&f)?).expect("terminal call future");
                st.collected.push((purpose, r));
            }
            if !st.pending.is_empty() {
                return Ok(());
            }
            let results = std::mem::take(&mut st.collected);
            let tx = st.txn.tx_id.clone();
            match st.phase.clone() {
                Phase::Locking { next } => {
                    let failed = results.iter().find_map(|(p, r)| match (p, r) {
                        (Purpose::Lock(c), Err(_)) => Some(c.clone()),
                        _ => None,
                    });
                    if let Some(chain) = failed {
                        let mut order = st.locked_chains.clone();
                        order.push(chain);
                        order.reverse();
                        st.phase = Phase::Unlocking {
                            failure: true,
                            next: 0,
                            order,
                            outcome: TxOutcome::Aborted(AbortReason::LockConflict),
                        };
                        continue;
                    }
                    for (p, _) in &results {
                        if let Purpose::Lock(c) = p {
                            st.locked_chains.push(c.clone());
                        }
                    }
                    if next < st.lock_order.len() {
                        let chain = st.lock_order[next].clone();
                        let scope = st.scopes.get(&chain).cloned().unwrap_or_default();
                        st.phase = Phase::Locking { next: next + 1 };
                        self.issue(proposer, st, &chain, "lock_scope", encode_lock(&tx, &scope), Purpose::Lock(chain.clone()))?;
                    } else if st.plan.is_empty() {
                        st.phase = self.unlock_phase(st, false, TxOutcome::Committed);
                    } else {
                        st.phase = Phase::Executing { round: 0 };
                        self.issue_round(proposer, st, 0)?;
                    }
                }
                Phase::Executing { round } => {
                    if results.iter().any(|(_, r)| r.is_err()) {
                        st.phase = self.unlock_phase(st, true, TxOutcome::Aborted(AbortReason::OpFailed));
                    } else if round + 1 < st.plan.len() {
                        st.phase = Phase::Executing { round: round + 1 };
                        self.issue_round(proposer, st, round + 1)?;
                    } else {
                        st.phase = self.unlock_phase(st, false, TxOutcome::Committed);
                    }
                }
                Phase::Unlocking {
                    failure,
                    next,
                    order,
                    outcome,
                } => {
                    if next < order.len() {
                        let chain = order[next].clone();
                        st.phase = Phase::Unlocking {
                            failure,
                            next: next + 1,
                            order,
                            outcome,
                        };
                        self.issue(proposer, st, &chain, "unlock_scope", encode_unlock(&tx, failure), Purpose::Unlock(chain.clone()))?;
                    } else {
                        self.trace.push(
                            Some(&proposer.chain),
                            Event::Outcome {
                                tx,
                                outcome: outcome.clone(),
                                rounds: st.rounds,
                            },
                        );
                        st.phase = Phase::Done(outcome);
                        return Ok(());
                    }
                }
                Phase::Done(_) => return Ok(()),
            }
        }
    }

    fn unlock_phase(&self, st: &ProposerState, failure: bool, outcome: TxOutcome) -> Phase {
        let mut order = st.locked_chains.clone();
        order.reverse();
        Phase::Unlocking {
            failure,
            next: 0,
            order,
            outcome,
        }
    }

    pub fn step_proposers(&mut self) -> Result<(), SimError> {
        let active: Vec<Address> = self
            .executors
            .iter()
            .filter(|(_, e)| e.active_tx().is_some())
            .map(|(a, _)| a.clone())
            .collect();
        for p in active {
            self.proposer_step(&p)?;
        }
        Ok(())
    }
}
