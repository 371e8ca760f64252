//! Chains as deterministic state machines with a block ledger, and the
//! lockable-contract discipline every application contract follows.
//!
//! A contract's regular methods run only when the contract is unlocked or the
//! caller is the executor holding the lock. `lock` snapshots the state into a
//! checkpoint, `unlock(failure = true)` restores it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::bridge::BridgeId;
use crate::trace::{Event, Trace};
use crate::types::{render_list, Address, ChainId, TxId, Value};

/// Why a contract method refused to run or aborted. Failures are ordinary
/// outcomes: they are recorded on chain and leave state untouched.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, thiserror::Error)]
pub enum MethodFailure {
    #[error("LockedByOther")]
    LockedByOther,
    #[error("AlreadyLocked")]
    AlreadyLocked,
    #[error("NotTrusted")]
    NotTrusted,
    #[error("NotLockOwner")]
    NotLockOwner,
    #[error("NotOwner")]
    NotOwner,
    #[error("InsufficientFunds")]
    InsufficientFunds,
    #[error("UnknownTarget")]
    UnknownTarget,
    #[error("UnknownMethod")]
    UnknownMethod,
    #[error("UnknownVariable")]
    UnknownVariable,
    #[error("BadParams")]
    BadParams,
    #[error("Reverted")]
    Reverted,
    #[error("ExecutorBusy")]
    ExecutorBusy,
    #[error("Nack:{0}")]
    Nack(String),
}

impl MethodFailure {
    pub fn parse(s: &str) -> Option<MethodFailure> {
        use MethodFailure::*;
        Some(match s {
            "LockedByOther" => LockedByOther,
            "AlreadyLocked" => AlreadyLocked,
            "NotTrusted" => NotTrusted,
            "NotLockOwner" => NotLockOwner,
            "NotOwner" => NotOwner,
            "InsufficientFunds" => InsufficientFunds,
            "UnknownTarget" => UnknownTarget,
            "UnknownMethod" => UnknownMethod,
            "UnknownVariable" => UnknownVariable,
            "BadParams" => BadParams,
            "Reverted" => Reverted,
            "ExecutorBusy" => ExecutorBusy,
            other => Nack(other.strip_prefix("Nack:")?.to_string()),
        })
    }
}

pub type CallResult = Result<Value, MethodFailure>;

/// Scenario-breaking conditions. These abort a run.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("{method} on {target} wrote {written} outside its declared scope")]
    ScopeViolation {
        target: Address,
        method: String,
        written: Address,
    },
    #[error("contract {0} is not on chain {1}")]
    WrongChain(Address, ChainId),
    #[error("contract {0} already deployed")]
    Duplicate(Address),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContractState {
    pub vars: BTreeMap<String, Value>,
}

impl ContractState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: impl Into<String>, v: Value) -> Self {
        self.vars.insert(var.into(), v);
        self
    }

    pub fn get(&self, var: &str) -> Option<&Value> {
        self.vars.get(var)
    }

    pub fn int(&self, var: &str) -> Option<i64> {
        self.get(var).and_then(Value::as_int)
    }
}

impl fmt::Display for ContractState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.vars.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// A method body: pure over (state, params, caller), nested calls go through
/// the context.
pub type MethodBody = fn(&mut CallCtx<'_>, &[Value]) -> CallResult;

#[derive(Clone, Debug)]
pub struct MethodDef {
    pub name: String,
    pub body: MethodBody,
    /// Contracts this method may modify, directly or through nested calls.
    /// The target contract itself is always implied.
    pub scope: BTreeSet<Address>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LockInfo {
    pub by: Address,
    pub checkpoint: ContractState,
}

#[derive(Clone, Debug)]
pub struct Contract {
    pub addr: Address,
    pub kind: String,
    pub state: ContractState,
    pub owner: Address,
    /// `Some` exactly when locked; carries `lockedBy` and the checkpoint.
    pub lock: Option<LockInfo>,
    pub trusted_executors: BTreeSet<Address>,
    pub methods: BTreeMap<String, MethodDef>,
}

impl Contract {
    pub fn new(addr: Address, kind: impl Into<String>, owner: Address) -> Self {
        Contract {
            addr,
            kind: kind.into(),
            state: ContractState::new(),
            owner,
            lock: None,
            trusted_executors: BTreeSet::new(),
            methods: BTreeMap::new(),
        }
    }

    pub fn with_state(mut self, state: ContractState) -> Self {
        self.state = state;
        self
    }

    pub fn with_method(mut self, m: MethodDef) -> Self {
        self.methods.insert(m.name.clone(), m);
        self
    }

    pub fn is_locked(&self) -> bool {
        self.lock.is_some()
    }

    pub fn locked_by(&self) -> Option<&Address> {
        self.lock.as_ref().map(|l| &l.by)
    }

    pub fn checkpoint(&self) -> Option<&ContractState> {
        self.lock.as_ref().map(|l| &l.checkpoint)
    }

    /// Declared scope of `method` including the contract itself.
    pub fn scope_of(&self, method: &str) -> Option<BTreeSet<Address>> {
        self.methods.get(method).map(|m| {
            let mut s = m.scope.clone();
            s.insert(self.addr.clone());
            s
        })
    }

    fn admits(&self, caller: &Address) -> bool {
        match &self.lock {
            None => true,
            Some(l) => &l.by == caller,
        }
    }
}

/// A method invocation request.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Call {
    pub caller: Address,
    pub target: Address,
    pub method: String,
    pub params: Vec<Value>,
}

impl Call {
    pub fn new(caller: &Address, target: &Address, method: &str, params: Vec<Value>) -> Self {
        Call {
            caller: caller.clone(),
            target: target.clone(),
            method: method.to_string(),
            params,
        }
    }
}

/// One recorded invocation, as it appears in a block and in the trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Invocation {
    pub caller: Address,
    pub target: Address,
    pub method: String,
    pub params: Vec<Value>,
    pub outcome: CallResult,
    /// Contracts whose state `s` or lock metadata changed.
    pub mutated: Vec<Address>,
    /// Cross-chain transaction on whose behalf an executor made this call.
    pub tx: Option<TxId>,
}

impl Invocation {
    pub fn from_call(call: &Call, outcome: CallResult, mutated: Vec<Address>, tx: Option<&TxId>) -> Self {
        Invocation {
            caller: call.caller.clone(),
            target: call.target.clone(),
            method: call.method.clone(),
            params: call.params.clone(),
            outcome,
            mutated,
            tx: tx.cloned(),
        }
    }

    pub fn call(&self) -> Call {
        Call {
            caller: self.caller.clone(),
            target: self.target.clone(),
            method: self.method.clone(),
            params: self.params.clone(),
        }
    }

    pub fn ok(&self) -> bool {
        self.outcome.is_ok()
    }
}

impl fmt::Display for Invocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let outcome = match &self.outcome {
            Ok(v) => format!("ok:{v}"),
            Err(e) => format!("err:{e}"),
        };
        let tx = self.tx.as_ref().map(|t| t.0.as_str()).unwrap_or("-");
        write!(
            f,
            "caller={} target={} method={} params={} outcome={} mutated={} tx={}",
            self.caller,
            self.target,
            self.method,
            render_list(&self.params),
            outcome,
            render_list(&self.mutated),
            tx
        )
    }
}

/// Entries of a block: invocations and bridge send records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Record {
    Invoke(Invocation),
    Send {
        bridge: BridgeId,
        msg_id: u64,
        sender: Address,
        dest: Address,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub index: u64,
    pub actions: Vec<Record>,
}

impl Block {
    pub fn sent_messages(&self) -> Vec<u64> {
        self.actions
            .iter()
            .filter_map(|r| match r {
                Record::Send { msg_id, .. } => Some(*msg_id),
                _ => None,
            })
            .collect()
    }
}

/// Execution context handed to method bodies. Writes go to an overlay that is
/// committed only if the whole top-level invocation succeeds.
pub struct CallCtx<'a> {
    contracts: &'a BTreeMap<Address, Contract>,
    overlay: BTreeMap<Address, ContractState>,
    this: Address,
    caller: Address,
    guarded: bool,
    depth: u32,
}

const MAX_DEPTH: u32 = 8;

impl<'a> CallCtx<'a> {
    /// Original external caller, relayed through nested calls.
    pub fn caller(&self) -> &Address {
        &self.caller
    }

    pub fn this(&self) -> &Address {
        &self.this
    }

    pub fn owner(&self) -> &Address {
        &self.contracts[&self.this].owner
    }

    fn state(&self, addr: &Address) -> &ContractState {
        self.overlay
            .get(addr)
            .unwrap_or_else(|| &self.contracts[addr].state)
    }

    pub fn get(&self, var: &str) -> Result<&Value, MethodFailure> {
        self.state(&self.this)
            .get(var)
            .ok_or(MethodFailure::UnknownVariable)
    }

    pub fn get_int(&self, var: &str) -> Result<i64, MethodFailure> {
        self.get(var)?.as_int().ok_or(MethodFailure::BadParams)
    }

    /// Overwrites an existing variable of the current contract.
    pub fn set(&mut self, var: &str, v: Value) -> Result<(), MethodFailure> {
        self.get(var)?;
        let this = self.this.clone();
        let st = self
            .overlay
            .entry(this.clone())
            .or_insert_with(|| self.contracts[&this].state.clone());
        st.vars.insert(var.to_string(), v);
        Ok(())
    }

    /// Synchronously invokes another contract on the same chain. A failing
    /// nested call leaves no writes behind.
    pub fn call(&mut self, target: &Address, method: &str, params: &[Value]) -> CallResult {
        if self.depth >= MAX_DEPTH {
            return Err(MethodFailure::Reverted);
        }
        let contract = self
            .contracts
            .get(target)
            .ok_or(MethodFailure::UnknownTarget)?;
        let def = contract
            .methods
            .get(method)
            .ok_or(MethodFailure::UnknownMethod)?;
        if self.guarded && !contract.admits(&self.caller) {
            return Err(MethodFailure::LockedByOther);
        }
        let saved = self.overlay.clone();
        let prev = std::mem::replace(&mut self.this, target.clone());
        self.depth += 1;
        let r = (def.body)(self, params);
        self.depth -= 1;
        self.this = prev;
        if r.is_err() {
            self.overlay = saved;
        }
        r
    }
}

/// Pure evaluation result of a call against a set of contracts.
pub struct Evaluation {
    pub outcome: CallResult,
    pub writes: BTreeMap<Address, ContractState>,
}

/// Runs `call` against `contracts` without committing anything. With
/// `guarded = false` lock guards are ignored (ideal, interference-free
/// execution).
pub fn evaluate(contracts: &BTreeMap<Address, Contract>, call: &Call, guarded: bool) -> Evaluation {
    let mut ctx = CallCtx {
        contracts,
        overlay: BTreeMap::new(),
        this: call.caller.clone(),
        caller: call.caller.clone(),
        guarded,
        depth: 0,
    };
    let outcome = ctx.call(&call.target, &call.method, &call.params);
    let writes = if outcome.is_ok() {
        ctx.overlay
            .into_iter()
            .filter(|(a, s)| contracts[a].state != *s)
            .collect()
    } else {
        BTreeMap::new()
    };
    Evaluation { outcome, writes }
}

#[derive(Clone, Debug)]
pub struct Chain {
    pub id: ChainId,
    pub ledger: Vec<Block>,
    pub pending: Vec<Record>,
    pub contracts: BTreeMap<Address, Contract>,
    pub executor: Address,
    /// Seal a block every `seal_every` ticks.
    pub seal_every: u64,
}

pub type Chains = BTreeMap<ChainId, Chain>;

impl Chain {
    /// Creates a chain whose executor contract lives at `<id>/executor`.
    pub fn new(id: ChainId) -> Self {
        let executor = Address::new(&id, "executor");
        let mut contracts = BTreeMap::new();
        contracts.insert(
            executor.clone(),
            Contract::new(executor.clone(), "executor", executor.clone()),
        );
        Chain {
            id,
            ledger: Vec::new(),
            pending: Vec::new(),
            contracts,
            executor,
            seal_every: 1,
        }
    }

    pub fn deploy(&mut self, contract: Contract) -> Result<(), ChainError> {
        if contract.addr.chain != self.id {
            return Err(ChainError::WrongChain(contract.addr, self.id.clone()));
        }
        if self.contracts.contains_key(&contract.addr) {
            return Err(ChainError::Duplicate(contract.addr));
        }
        self.contracts.insert(contract.addr.clone(), contract);
        Ok(())
    }

    pub fn contract(&self, addr: &Address) -> Option<&Contract> {
        self.contracts.get(addr)
    }

    pub fn state_of(&self, addr: &Address) -> Option<&ContractState> {
        self.contracts.get(addr).map(|c| &c.state)
    }

    /// Runs a regular method and commits its writes, without recording.
    pub fn apply(&mut self, call: &Call, guarded: bool) -> Result<(CallResult, Vec<Address>), ChainError> {
        let target = match self.contracts.get(&call.target) {
            Some(c) => c,
            None => return Ok((Err(MethodFailure::UnknownTarget), vec![])),
        };
        let Some(scope) = target.scope_of(&call.method) else {
            return Ok((Err(MethodFailure::UnknownMethod), vec![]));
        };
        let eval = evaluate(&self.contracts, call, guarded);
        if let Some(w) = eval.writes.keys().find(|a| !scope.contains(a)) {
            return Err(ChainError::ScopeViolation {
                target: call.target.clone(),
                method: call.method.clone(),
                written: w.clone(),
            });
        }
        let mutated: Vec<Address> = eval.writes.keys().cloned().collect();
        for (addr, st) in eval.writes {
            self.contracts.get_mut(&addr).expect("evaluated").state = st;
        }
        Ok((eval.outcome, mutated))
    }

    /// Guarded invocation of a regular method, recorded in pending and the
    /// trace whether or not it succeeds.
    pub fn invoke(&mut self, trace: &mut Trace, call: &Call, tx: Option<&TxId>) -> Result<CallResult, ChainError> {
        let (outcome, mutated) = self.apply(call, true)?;
        let inv = Invocation::from_call(call, outcome.clone(), mutated, tx);
        self.record(trace, Event::Invoke(inv));
        Ok(outcome)
    }

    pub fn try_lock(&mut self, caller: &Address, target: &Address) -> CallResult {
        let c = self
            .contracts
            .get_mut(target)
            .ok_or(MethodFailure::UnknownTarget)?;
        if c.is_locked() {
            return Err(MethodFailure::AlreadyLocked);
        }
        if !c.trusted_executors.contains(caller) {
            return Err(MethodFailure::NotTrusted);
        }
        c.lock = Some(LockInfo {
            by: caller.clone(),
            checkpoint: c.state.clone(),
        });
        Ok(Value::Bool(true))
    }

    pub fn try_unlock(&mut self, caller: &Address, target: &Address, failure: bool) -> CallResult {
        let c = self
            .contracts
            .get_mut(target)
            .ok_or(MethodFailure::UnknownTarget)?;
        match c.lock.take() {
            Some(l) if &l.by == caller => {
                if failure {
                    c.state = l.checkpoint;
                }
                Ok(Value::Bool(true))
            }
            other => {
                c.lock = other;
                Err(MethodFailure::NotLockOwner)
            }
        }
    }

    pub fn try_add_executor(&mut self, caller: &Address, target: &Address, e: &Address) -> CallResult {
        let c = self
            .contracts
            .get_mut(target)
            .ok_or(MethodFailure::UnknownTarget)?;
        if &c.owner != caller {
            return Err(MethodFailure::NotOwner);
        }
        c.trusted_executors.insert(e.clone());
        Ok(Value::Bool(true))
    }

    pub fn lock(&mut self, trace: &mut Trace, caller: &Address, target: &Address, tx: Option<&TxId>) -> CallResult {
        let r = self.try_lock(caller, target);
        let call = Call::new(caller, target, "lock", vec![]);
        let mutated = if r.is_ok() { vec![target.clone()] } else { vec![] };
        self.record(trace, Event::Lock(Invocation::from_call(&call, r.clone(), mutated, tx)));
        r
    }

    pub fn unlock(
        &mut self,
        trace: &mut Trace,
        caller: &Address,
        target: &Address,
        failure: bool,
        tx: Option<&TxId>,
    ) -> CallResult {
        let r = self.try_unlock(caller, target, failure);
        let call = Call::new(caller, target, "unlock", vec![Value::Bool(failure)]);
        let mutated = if r.is_ok() { vec![target.clone()] } else { vec![] };
        self.record(trace, Event::Unlock(Invocation::from_call(&call, r.clone(), mutated, tx)));
        r
    }

    pub fn add_executor(&mut self, trace: &mut Trace, caller: &Address, target: &Address, e: &Address) -> CallResult {
        let before = self.contracts.get(target).map(|c| c.trusted_executors.len());
        let r = self.try_add_executor(caller, target, e);
        let after = self.contracts.get(target).map(|c| c.trusted_executors.len());
        let call = Call::new(caller, target, "add_executor", vec![e.to_value()]);
        let mutated = if before != after { vec![target.clone()] } else { vec![] };
        self.record(trace, Event::Invoke(Invocation::from_call(&call, r.clone(), mutated, None)));
        r
    }

    /// Appends an invocation event to pending and the trace. Used directly for
    /// infrastructure contracts (adapters, executors) whose logic lives
    /// outside the chain.
    pub fn record(&mut self, trace: &mut Trace, event: Event) {
        if let Some(inv) = event.invocation() {
            self.pending.push(Record::Invoke(inv.clone()));
        }
        trace.push(Some(&self.id), event);
    }

    pub fn record_send(&mut self, bridge: BridgeId, msg_id: u64, sender: Address, dest: Address) {
        self.pending.push(Record::Send {
            bridge,
            msg_id,
            sender,
            dest,
        });
    }

    /// Moves pending records into a new immutable block and returns its index.
    pub fn seal_block(&mut self, trace: &mut Trace) -> u64 {
        let index = self.ledger.len() as u64;
        let block = Block {
            index,
            actions: std::mem::take(&mut self.pending),
        };
        trace.push(
            Some(&self.id),
            Event::Seal {
                index,
                actions: block.actions.len(),
                msgs: block.sent_messages(),
            },
        );
        self.ledger.push(block);
        index
    }

    /// Application state only: `s` of every contract, no lock metadata.
    pub fn states(&self) -> BTreeMap<Address, ContractState> {
        self.contracts
            .iter()
            .map(|(a, c)| (a.clone(), c.state.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library;

    fn setup() -> (Chain, Address, Address, Address) {
        let id = ChainId::new("fantom");
        let mut chain = Chain::new(id.clone());
        let alice = Address::new(&id, "alice");
        let token = Address::new(&id, "token");
        let c = library::token(&token, &alice, &[("alice", 10), ("bob", 0)]);
        chain.deploy(c).unwrap();
        let exec = chain.executor.clone();
        chain.try_add_executor(&alice, &token, &exec).unwrap();
        (chain, alice, token, exec)
    }

    fn transfer(caller: &Address, token: &Address, amount: i64) -> Call {
        Call::new(
            caller,
            token,
            "transfer",
            vec![Value::text("alice"), Value::text("bob"), Value::Int(amount)],
        )
    }

    #[test]
    fn transfer_moves_balance() {
        let (mut chain, alice, token, _) = setup();
        let mut t = Trace::new();
        let r = chain.invoke(&mut t, &transfer(&alice, &token, 5), None).unwrap();
        assert!(r.is_ok());
        let s = chain.state_of(&token).unwrap();
        assert_eq!(s.int("bal.alice"), Some(5));
        assert_eq!(s.int("bal.bob"), Some(5));
        assert_eq!(t.len(), 1);
        assert_eq!(chain.pending.len(), 1);
    }

    #[test]
    fn insufficient_funds_is_recorded_noop() {
        let (mut chain, alice, token, _) = setup();
        let mut t = Trace::new();
        let before = chain.state_of(&token).unwrap().clone();
        let r = chain.invoke(&mut t, &transfer(&alice, &token, 11), None).unwrap();
        assert_eq!(r, Err(MethodFailure::InsufficientFunds));
        assert_eq!(chain.state_of(&token).unwrap(), &before);
        assert_eq!(chain.pending.len(), 1);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn guard_rejects_other_callers_while_locked() {
        let (mut chain, alice, token, exec) = setup();
        let mut t = Trace::new();
        chain.lock(&mut t, &exec, &token, None).unwrap();
        let r = chain.invoke(&mut t, &transfer(&alice, &token, 1), None).unwrap();
        assert_eq!(r, Err(MethodFailure::LockedByOther));
        let r = chain.invoke(&mut t, &transfer(&exec, &token, 1), None).unwrap();
        assert!(r.is_ok());
    }

    #[test]
    fn lock_checkpoints_and_rejects_relock_and_strangers() {
        let (mut chain, alice, token, exec) = setup();
        let mut t = Trace::new();
        let before = chain.state_of(&token).unwrap().clone();
        assert!(chain.lock(&mut t, &exec, &token, None).is_ok());
        let c = chain.contract(&token).unwrap();
        assert_eq!(c.checkpoint(), Some(&before));
        assert_eq!(c.locked_by(), Some(&exec));
        assert_eq!(chain.lock(&mut t, &exec, &token, None), Err(MethodFailure::AlreadyLocked));

        let (mut chain, alice2, token2, _) = setup();
        assert_eq!(chain.lock(&mut t, &alice2, &token2, None), Err(MethodFailure::NotTrusted));
        assert!(!chain.contract(&token2).unwrap().is_locked());
        let _ = alice;
    }

    #[test]
    fn unlock_failure_restores_checkpoint() {
        let (mut chain, _, token, exec) = setup();
        let mut t = Trace::new();
        let before = chain.state_of(&token).unwrap().clone();
        chain.lock(&mut t, &exec, &token, None).unwrap();
        chain.invoke(&mut t, &transfer(&exec, &token, 7), None).unwrap().unwrap();
        assert_ne!(chain.state_of(&token).unwrap(), &before);
        chain.unlock(&mut t, &exec, &token, true, None).unwrap();
        assert_eq!(chain.state_of(&token).unwrap(), &before);
        let c = chain.contract(&token).unwrap();
        assert!(!c.is_locked() && c.checkpoint().is_none());
    }

    #[test]
    fn unlock_commit_keeps_state() {
        let (mut chain, _, token, exec) = setup();
        let mut t = Trace::new();
        chain.lock(&mut t, &exec, &token, None).unwrap();
        chain.invoke(&mut t, &transfer(&exec, &token, 7), None).unwrap().unwrap();
        chain.unlock(&mut t, &exec, &token, false, None).unwrap();
        assert_eq!(chain.state_of(&token).unwrap().int("bal.bob"), Some(7));
        assert!(!chain.contract(&token).unwrap().is_locked());
    }

    #[test]
    fn unlock_requires_lock_owner() {
        let (mut chain, alice, token, exec) = setup();
        let mut t = Trace::new();
        assert_eq!(chain.unlock(&mut t, &exec, &token, false, None), Err(MethodFailure::NotLockOwner));
        chain.lock(&mut t, &exec, &token, None).unwrap();
        assert_eq!(chain.unlock(&mut t, &alice, &token, true, None), Err(MethodFailure::NotLockOwner));
        assert!(chain.contract(&token).unwrap().is_locked());
    }

    #[test]
    fn add_executor_owner_only_and_idempotent() {
        let (mut chain, alice, token, exec) = setup();
        let mut t = Trace::new();
        let bob = Address::new(&chain.id, "bob");
        assert_eq!(chain.add_executor(&mut t, &bob, &token, &bob), Err(MethodFailure::NotOwner));
        let e2 = Address::new(&chain.id, "executor2");
        chain.add_executor(&mut t, &alice, &token, &e2).unwrap();
        let set = chain.contract(&token).unwrap().trusted_executors.clone();
        assert!(set.contains(&e2) && set.contains(&exec));
        chain.add_executor(&mut t, &alice, &token, &e2).unwrap();
        assert_eq!(chain.contract(&token).unwrap().trusted_executors, set);
    }

    #[test]
    fn seal_indices_are_contiguous() {
        let (mut chain, alice, token, _) = setup();
        let mut t = Trace::new();
        for _ in 0..3 {
            chain.invoke(&mut t, &transfer(&alice, &token, 1), None).unwrap().unwrap();
        }
        assert_eq!(chain.seal_block(&mut t), 0);
        assert_eq!(chain.ledger[0].actions.len(), 3);
        assert!(chain.pending.is_empty());
        assert_eq!(chain.seal_block(&mut t), 1);
        assert!(chain.ledger[1].actions.is_empty());
        assert_eq!(chain.ledger.len(), 2);
    }

    #[test]
    fn unknown_target_and_method_are_failures() {
        let (mut chain, alice, token, _) = setup();
        let mut t = Trace::new();
        let ghost = Address::new(&chain.id, "ghost");
        let r = chain.invoke(&mut t, &Call::new(&alice, &ghost, "transfer", vec![]), None).unwrap();
        assert_eq!(r, Err(MethodFailure::UnknownTarget));
        let r = chain.invoke(&mut t, &Call::new(&alice, &token, "nope", vec![]), None).unwrap();
        assert_eq!(r, Err(MethodFailure::UnknownMethod));
    }

    #[test]
    fn nested_calls_relay_caller_and_enforce_scope() {
        let (mut chain, alice, token, exec) = setup();
        let fwd = Address::new(&chain.id, "fwd");
        chain
            .deploy(library::forwarder(&fwd, &alice, std::slice::from_ref(&token)))
            .unwrap();
        let mut t = Trace::new();
        let call = Call::new(
            &alice,
            &fwd,
            "forward",
            vec![token.to_value(), Value::text("alice"), Value::text("bob"), Value::Int(2)],
        );
        assert!(chain.invoke(&mut t, &call, None).unwrap().is_ok());
        assert_eq!(chain.state_of(&token).unwrap().int("bal.bob"), Some(2));

        // the lock guard on the inner contract sees the original caller
        chain.lock(&mut t, &exec, &token, None).unwrap();
        assert_eq!(chain.invoke(&mut t, &call, None).unwrap(), Err(MethodFailure::LockedByOther));
        chain.unlock(&mut t, &exec, &token, false, None).unwrap();

        let bad = Address::new(&chain.id, "bad");
        chain.deploy(library::forwarder(&bad, &alice, &[])).unwrap();
        let call = Call::new(
            &alice,
            &bad,
            "forward",
            vec![token.to_value(), Value::text("alice"), Value::text("bob"), Value::Int(1)],
        );
        assert!(matches!(
            chain.invoke(&mut t, &call, None),
            Err(ChainError::ScopeViolation { .. })
        ));
    }

    #[test]
    fn failure_names_round_trip() {
        for f in [
            MethodFailure::LockedByOther,
            MethodFailure::InsufficientFunds,
            MethodFailure::Nack("AlreadyLocked@m/t".into()),
        ] {
            assert_eq!(MethodFailure::parse(&f.to_string()), Some(f));
        }
    }
}
