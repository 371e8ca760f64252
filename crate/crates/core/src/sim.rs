//! The deterministic, seeded scheduler.
//!
//! Each tick runs four steps in a fixed order:
//!
//! 1. scripted and adversarial actions due this tick;
//! 2. bridge deliveries that are due;
//! 3. new proposals, then every active proposer advances;
//! 4. every chain seals a block, handing its sent messages to the bridges.
//!
//! All randomness comes from one ChaCha8 generator seeded by the scenario,
//! so a (scenario, seed) pair fully determines the trace.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::{Adapter, AdapterError, Payload};
use crate::bridge::{Bridge, BridgeError, BridgeId, BridgePolicy, Injection};
use crate::chain::{Call, CallResult, Chain, ChainError, Chains, MethodFailure};
use crate::protocol::{ExecutorContract, LockOrder};
use crate::trace::{Event, HaltReason, Trace};
use crate::txn::{CrossChainTransaction, TxnError};
use crate::types::{Address, ChainId, TxId, Value};

/// Conditions that abort a run. They point at a broken scenario or a
/// protocol bug, never at an ordinary failed operation.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Txn(#[from] TxnError),
    #[error("transaction {tx}: action ran on {contract}, which the executor has not locked")]
    ScopeNotLocked { tx: TxId, contract: Address },
    #[error("no executor at {0}")]
    UnknownExecutor(Address),
    #[error("no adapter route from {0} to {1}")]
    NoRoute(ChainId, ChainId),
    #[error("unknown chain {0}")]
    UnknownChain(ChainId),
}

pub struct World {
    pub chains: Chains,
    pub bridges: BTreeMap<BridgeId, Bridge>,
    pub adapters: BTreeMap<Address, Adapter>,
    pub executors: BTreeMap<Address, ExecutorContract>,
    pub trace: Trace,
    pub rng: ChaCha8Rng,
    pub lock_order: LockOrder,
    next_msg: u64,
}

/// Local name of the adapter on one chain that talks to `peer`.
pub fn adapter_name(peer: &ChainId) -> String {
    format!("adapter.{peer}")
}

impl World {
    pub fn new(seed: u64) -> Self {
        World {
            chains: Chains::new(),
            bridges: BTreeMap::new(),
            adapters: BTreeMap::new(),
            executors: BTreeMap::new(),
            trace: Trace::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            lock_order: LockOrder::Canonical,
            next_msg: 0,
        }
    }

    pub fn now(&self) -> u64 {
        self.trace.now
    }

    /// Adds a chain and registers its executor.
    pub fn add_chain(&mut self, chain: Chain) {
        let exec = chain.executor.clone();
        self.executors.insert(exec.clone(), ExecutorContract::new(exec));
        self.chains.insert(chain.id.clone(), chain);
    }

    /// Creates the two opposite bridges between `a` and `b` and an adapter
    /// pair on top of them.
    pub fn connect(&mut self, a: &ChainId, b: &ChainId, policy: BridgePolicy) -> Result<(), SimError> {
        for c in [a, b] {
            if !self.chains.contains_key(c) {
                return Err(SimError::UnknownChain(c.clone()));
            }
        }
        let pa = Address::new(a, adapter_name(b));
        let pb = Address::new(b, adapter_name(a));
        for (from, to) in [(&pa, &pb), (&pb, &pa)] {
            let id = BridgeId::new(&from.chain, &to.chain);
            self.bridges.insert(id.clone(), Bridge::new(id, policy.clone()));
            self.adapters.insert(from.clone(), Adapter::new(from.clone(), to.clone()));
        }
        Ok(())
    }

    pub fn adapter_between(&self, from: &ChainId, to: &ChainId) -> Option<Address> {
        let a = Address::new(from, adapter_name(to));
        self.adapters.contains_key(&a).then_some(a)
    }

    /// Sends over a bridge: the message gets a fresh id and a send record in
    /// the source chain's pending block; the bridge sees it when that block
    /// is sealed.
    pub(crate) fn bridge_send(
        &mut self,
        bridge: &BridgeId,
        sender: &Address,
        payload: Payload,
        dest: &Address,
    ) -> Result<(), SimError> {
        let msg_id = self.next_msg;
        let b = self
            .bridges
            .get_mut(bridge)
            .ok_or_else(|| BridgeError::UnknownBridge(bridge.clone()))?;
        b.send(msg_id, sender, payload.clone(), dest)?;
        self.next_msg += 1;
        let chain = self
            .chains
            .get_mut(&sender.chain)
            .ok_or_else(|| SimError::UnknownChain(sender.chain.clone()))?;
        chain.record_send(bridge.clone(), msg_id, sender.clone(), dest.clone());
        self.trace.push(
            Some(&sender.chain),
            Event::Send {
                bridge: bridge.clone(),
                msg_id,
                sender: sender.clone(),
                dest: dest.clone(),
                payload,
            },
        );
        Ok(())
    }

    /// Routes a call to whatever lives at its target: executor logic,
    /// adapters (which expose no callable methods) or a chain contract.
    pub fn dispatch(&mut self, call: &Call, tx: Option<&TxId>) -> Result<CallResult, SimError> {
        if self.executors.contains_key(&call.target) {
            return self.executor_entry(call);
        }
        let Some(chain) = self.chains.get_mut(&call.target.chain) else {
            return Ok(Err(MethodFailure::UnknownTarget));
        };
        if self.adapters.contains_key(&call.target) {
            let inv = crate::chain::Invocation::from_call(call, Err(MethodFailure::UnknownMethod), vec![], tx);
            chain.record(&mut self.trace, Event::Invoke(inv));
            return Ok(Err(MethodFailure::UnknownMethod));
        }
        Ok(chain.invoke(&mut self.trace, call, tx)?)
    }

    fn deliver(&mut self) -> Result<(), SimError> {
        let now = self.now();
        let ids: Vec<BridgeId> = self.bridges.keys().cloned().collect();
        for id in ids {
            let due = self.bridges.get_mut(&id).expect("listed").deliver_due(now, &mut self.rng);
            for m in due {
                self.trace.push(
                    Some(&m.dest.chain),
                    Event::Recv {
                        bridge: id.clone(),
                        msg_id: m.msg_id,
                        origin_block: m.origin_block,
                        sender: m.sender.clone(),
                        dest: m.dest.clone(),
                        payload: m.payload.clone(),
                    },
                );
                self.adapter_recv(&m)?;
            }
        }
        Ok(())
    }

    fn seal_due(&mut self) {
        let now = self.now();
        let ids: Vec<ChainId> = self.chains.keys().cloned().collect();
        for id in ids {
            let chain = self.chains.get_mut(&id).expect("listed");
            if !now.is_multiple_of(chain.seal_every.max(1)) {
                continue;
            }
            let k = chain.seal_block(&mut self.trace);
            for b in self.bridges.values_mut().filter(|b| b.id.src == id) {
                for note in b.on_seal(k, now, &mut self.rng) {
                    self.trace.push(Some(&id), Event::Adversary { action: note });
                }
            }
        }
    }

    pub fn bridges_drained(&self) -> bool {
        self.bridges.values().all(Bridge::is_drained)
    }

    /// No message in flight, no future pending and no proposer running.
    pub fn is_quiescent(&self) -> bool {
        self.bridges_drained()
            && self.adapters.values().all(Adapter::all_terminal)
            && self.executors.values().all(|e| e.active_tx().is_none())
            && self.chains.values().all(|c| c.pending.is_empty())
    }

    fn fire(&mut self, action: &Action, adversarial: bool) -> Result<(), SimError> {
        // Injections log their own, more detailed note.
        if adversarial && !matches!(action, Action::Inject { .. }) {
            self.trace.push(
                action.chain(),
                Event::Adversary {
                    action: action.to_string(),
                },
            );
        }
        match action {
            Action::Propose {
                proposer,
                txn,
                declared,
            } => {
                let _ = self.propose(proposer, txn.clone(), declared.clone())?;
            }
            Action::Call(call) => {
                let _ = self.dispatch(call, None)?;
            }
            Action::Lock { caller, target } => {
                let chain = self
                    .chains
                    .get_mut(&target.chain)
                    .ok_or_else(|| SimError::UnknownChain(target.chain.clone()))?;
                let _ = chain.lock(&mut self.trace, caller, target, None);
            }
            Action::Unlock {
                caller,
                target,
                failure,
            } => {
                let chain = self
                    .chains
                    .get_mut(&target.chain)
                    .ok_or_else(|| SimError::UnknownChain(target.chain.clone()))?;
                let _ = chain.unlock(&mut self.trace, caller, target, *failure, None);
            }
            Action::Notify {
                adapter,
                caller,
                data,
                dest,
                ack,
            } => {
                if *ack {
                    self.anotify(adapter, caller, data, dest)?;
                } else {
                    self.notify(adapter, caller, data, dest)?;
                }
            }
            Action::Rcall {
                adapter,
                caller,
                target,
                method,
                params,
            } => {
                self.rcall(adapter, caller, (target, method), params.clone(), target)?;
            }
            Action::Inject { bridge, injection } => {
                let id = self.next_msg;
                let now = self.now();
                let b = self
                    .bridges
                    .get_mut(bridge)
                    .ok_or_else(|| BridgeError::UnknownBridge(bridge.clone()))?;
                let note = b.inject(injection.clone(), id, now)?;
                if matches!(injection, Injection::Forge { .. }) {
                    self.next_msg += 1;
                }
                self.trace.push(Some(&bridge.dst), Event::Adversary { action: note });
            }
        }
        Ok(())
    }

    fn is_locked(&self, addr: &Address) -> bool {
        self.chains
            .get(&addr.chain)
            .and_then(|c| c.contract(addr))
            .is_some_and(|c| c.is_locked())
    }
}

/// Something the script makes happen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Propose {
        proposer: Address,
        txn: CrossChainTransaction,
        declared: Option<Vec<ChainId>>,
    },
    /// A direct method call by an ordinary account.
    Call(Call),
    Lock {
        caller: Address,
        target: Address,
    },
    Unlock {
        caller: Address,
        target: Address,
        failure: bool,
    },
    /// `notify` (`ack = false`) or `anotify` through an adapter.
    Notify {
        adapter: Address,
        caller: Address,
        data: Vec<u8>,
        dest: Address,
        ack: bool,
    },
    Rcall {
        adapter: Address,
        caller: Address,
        target: Address,
        method: String,
        params: Vec<Value>,
    },
    Inject {
        bridge: BridgeId,
        injection: Injection,
    },
}

impl Action {
    fn chain(&self) -> Option<&ChainId> {
        Some(match self {
            Action::Propose { proposer, .. } => &proposer.chain,
            Action::Call(c) => &c.target.chain,
            Action::Lock { target, .. } | Action::Unlock { target, .. } => &target.chain,
            Action::Notify { adapter, .. } | Action::Rcall { adapter, .. } => &adapter.chain,
            Action::Inject { bridge, .. } => &bridge.dst,
        })
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Propose { proposer, txn, .. } => write!(f, "propose({};{})", proposer, txn.tx_id),
            Action::Call(c) => write!(f, "call({}->{}.{})", c.caller, c.target, c.method),
            Action::Lock { caller, target } => write!(f, "lock({caller}->{target})"),
            Action::Unlock {
                caller,
                target,
                failure,
            } => write!(f, "unlock({caller}->{target};failure={failure})"),
            Action::Notify { adapter, dest, ack, .. } => {
                let op = if *ack { "anotify" } else { "notify" };
                write!(f, "{op}({adapter}->{dest})")
            }
            Action::Rcall {
                adapter, target, method, ..
            } => write!(f, "rcall({adapter}->{target}.{method})"),
            Action::Inject { bridge, injection } => write!(f, "inject({bridge};{injection})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum When {
    At(u64),
    /// The first tick at or after `after` on which `target` is locked.
    WhenLocked { target: Address, after: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scheduled {
    pub when: When,
    pub action: Action,
    pub adversarial: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stop {
    #[default]
    Quiesce,
    MaxTicks,
}

/// A world plus its script: everything needed for one run.
pub struct Simulation {
    pub world: World,
    pub schedule: Vec<Scheduled>,
    pub max_ticks: u64,
    pub stop: Stop,
}

/// Everything a finished run leaves behind.
pub struct RunOutput {
    pub trace: Trace,
    pub initial: Chains,
    pub world: World,
    /// Proposed transactions, in proposal order.
    pub transactions: Vec<CrossChainTransaction>,
    pub error: Option<SimError>,
    pub ticks: u64,
}

impl RunOutput {
    pub fn outcome(&self, tx: &TxId) -> Option<&crate::protocol::TxOutcome> {
        self.trace.events.iter().find_map(|e| match &e.event {
            Event::Outcome { tx: t, outcome, .. } if t == tx => Some(outcome),
            _ => None,
        })
    }

    pub fn quiesced(&self) -> bool {
        matches!(self.trace.halt(), Some((HaltReason::Quiesced, _)))
    }
}

impl Simulation {
    pub fn run(self) -> RunOutput {
        let Simulation {
            mut world,
            schedule,
            max_ticks,
            stop,
        } = self;
        let initial = world.chains.clone();
        let transactions = schedule
            .iter()
            .filter_map(|s| match &s.action {
                Action::Propose { txn, .. } => Some(txn.clone()),
                _ => None,
            })
            .collect();
        let mut fired = vec![false; schedule.len()];
        let mut error = None;
        let mut halted = None;
        let mut tick = 0;
        while tick < max_ticks {
            world.trace.now = tick;
            if let Err(e) = step(&mut world, &schedule, &mut fired, tick) {
                error = Some(e);
                halted = Some(HaltReason::Fatal);
                break;
            }
            let future_work = schedule
                .iter()
                .zip(&fired)
                .any(|(s, f)| !f && matches!(s.when, When::At(t) if t > tick));
            if stop == Stop::Quiesce && !future_work && world.is_quiescent() {
                halted = Some(HaltReason::Quiesced);
                break;
            }
            tick += 1;
        }
        let reason = halted.unwrap_or(HaltReason::MaxTicks);
        let drained = world.bridges_drained();
        world.trace.push(None, Event::Halt { reason, drained });
        RunOutput {
            trace: world.trace.clone(),
            initial,
            world,
            transactions,
            error,
            ticks: tick,
        }
    }
}

fn step(world: &mut World, schedule: &[Scheduled], fired: &mut [bool], tick: u64) -> Result<(), SimError> {
    let due = |s: &Scheduled, world: &World| match &s.when {
        When::At(t) => *t == tick,
        When::WhenLocked { target, after } => tick >= *after && world.is_locked(target),
    };
    for (i, s) in schedule.iter().enumerate() {
        if fired[i] || matches!(s.action, Action::Propose { .. }) || !due(s, world) {
            continue;
        }
        fired[i] = true;
        world.fire(&s.action, s.adversarial)?;
    }
    world.deliver()?;
    for (i, s) in schedule.iter().enumerate() {
        if fired[i] || !matches!(s.action, Action::Propose { .. }) || !due(s, world) {
            continue;
        }
        fired[i] = true;
        world.fire(&s.action, s.adversarial)?;
    }
    world.step_proposers()?;
    world.seal_due();
    Ok(())
}
