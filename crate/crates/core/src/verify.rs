//! Post-hoc checks over finished traces.
//!
//! * [`check_secure_transfer`] – every delivery was really sent in the block
//!   it claims, and on drained runs every send was delivered once;
//! * [`check_all_or_nothing`] – each transaction's scoped state ends at the
//!   ideal result (committed) or where it started (aborted);
//! * [`check_strict_serializability`] – an exhaustive search for an order of
//!   whole transactions and single independent operations that respects real
//!   time and reproduces every recorded outcome and the final state;
//! * [`extract_metrics`] – message and operation counts per chain.
//!
//! All state-based checks replay the trace's state-changing events from the
//! initial world rather than trusting the simulator's final snapshot.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use crate::chain::{Chains, ContractState, Invocation};
use crate::protocol::TxOutcome;
use crate::trace::{Event, Trace, TraceEvent};
use crate::txn::{ideal_execute, scope_union, CrossChainTransaction};
use crate::types::{Address, ChainId, TxId};

pub const DEFAULT_BUDGET: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Property {
    SecureTransferSafety,
    SecureTransferLiveness,
    AllOrNothing,
    StrictSerializability,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub property: Property,
    /// Trace indices of the events involved.
    pub events: Vec<usize>,
    pub explanation: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub check: &'static str,
    pub violations: Vec<Violation>,
    /// Free-form remarks, e.g. a serialization witness or a skipped audit.
    pub notes: Vec<String>,
    pub witness: Option<Vec<String>>,
}

impl Verdict {
    fn new(check: &'static str) -> Self {
        Verdict {
            check,
            violations: Vec::new(),
            notes: Vec::new(),
            witness: None,
        }
    }

    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }

    fn violate(&mut self, property: Property, events: Vec<usize>, explanation: impl Into<String>) {
        self.violations.push(Violation {
            property,
            events,
            explanation: explanation.into(),
        });
    }

    pub fn has(&self, property: Property) -> bool {
        self.violations.iter().any(|v| v.property == property)
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        match self.violations.first() {
            None => format!("{}: pass", self.check),
            Some(v) => format!(
                "{}: FAIL ({} violation(s)); first: {} at events {:?}: {}",
                self.check,
                self.violations.len(),
                v.property,
                v.events,
                v.explanation
            ),
        }
    }
}

/// Line-oriented form, same key=value style as the trace.
impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "verdict check={} pass={} violations={}",
            self.check,
            self.pass(),
            self.violations.len()
        )?;
        for v in &self.violations {
            let events: Vec<String> = v.events.iter().map(|e| e.to_string()).collect();
            writeln!(
                f,
                "violation property={} events=[{}] detail={}",
                v.property,
                events.join(","),
                v.explanation.replace(' ', "_")
            )?;
        }
        if let Some(w) = &self.witness {
            writeln!(f, "witness order=[{}]", w.join(","))?;
        }
        for n in &self.notes {
            writeln!(f, "note {}", n.replace(' ', "_"))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("transaction {0} has no outcome in the trace")]
    MissingOutcome(TxId),
    #[error("{events} state-changing events exceed the search budget of {budget}; use a smaller scenario or raise --budget")]
    BudgetExceeded { events: usize, budget: usize },
}

// ---------------------------------------------------------------------------
// Secure Transfer

/// Safety: each `Recv(m, k)` matches exactly one `Send` of `m` with the same
/// bridge, endpoints and payload, sealed in block `k` of the source chain.
/// Liveness, audited only when the run halted with drained bridges: every
/// `Send` is received exactly once.
pub fn check_secure_transfer(trace: &Trace) -> Verdict {
    let mut v = Verdict::new("secure_transfer");
    let mut sends: BTreeMap<u64, (usize, &TraceEvent)> = BTreeMap::new();
    let mut sealed_in: BTreeMap<(ChainId, u64), (u64, usize)> = BTreeMap::new();
    for (i, e) in trace.iter() {
        match &e.event {
            Event::Send { msg_id, .. } => {
                if let Some((j, _)) = sends.insert(*msg_id, (i, e)) {
                    v.violate(
                        Property::SecureTransferSafety,
                        vec![j, i],
                        format!("message id {msg_id} sent twice"),
                    );
                }
            }
            Event::Seal { index, msgs, .. } => {
                let chain = e.chain.clone().expect("seals name their chain");
                for m in msgs {
                    sealed_in.insert((chain.clone(), *m), (*index, i));
                }
            }
            _ => {}
        }
    }
    let mut received: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, e) in trace.iter() {
        let Event::Recv {
            bridge,
            msg_id,
            origin_block,
            sender,
            dest,
            payload,
        } = &e.event
        else {
            continue;
        };
        received.entry(*msg_id).or_default().push(i);
        let Some((si, s)) = sends.get(msg_id) else {
            v.violate(
                Property::SecureTransferSafety,
                vec![i],
                format!("msg {msg_id} delivered on {bridge} but never sent (forged)"),
            );
            continue;
        };
        let Event::Send {
            bridge: sb,
            sender: ss,
            dest: sd,
            payload: sp,
            ..
        } = &s.event
        else {
            unreachable!("indexed sends only");
        };
        if sb != bridge || ss != sender || sd != dest || sp != payload {
            v.violate(
                Property::SecureTransferSafety,
                vec![*si, i],
                format!("msg {msg_id} delivered with different contents than sent (tampered)"),
            );
            continue;
        }
        match sealed_in.get(&(bridge.src.clone(), *msg_id)) {
            Some((k, _)) if k == origin_block => {}
            Some((k, seal)) => v.violate(
                Property::SecureTransferSafety,
                vec![*si, *seal, i],
                format!("msg {msg_id} claims block {origin_block} but was sealed in block {k}"),
            ),
            None => v.violate(
                Property::SecureTransferSafety,
                vec![*si, i],
                format!("msg {msg_id} delivered before its send was sealed"),
            ),
        }
    }
    for (m, rs) in &received {
        if rs.len() > 1 && sends.contains_key(m) {
            v.violate(
                Property::SecureTransferSafety,
                rs.clone(),
                format!("msg {m} delivered {} times", rs.len()),
            );
        }
    }
    match trace.halt() {
        Some((_, true)) => {
            for (m, (si, _)) in &sends {
                if !received.contains_key(m) {
                    v.violate(
                        Property::SecureTransferLiveness,
                        vec![*si],
                        format!("msg {m} was sent but never delivered (dropped)"),
                    );
                }
            }
        }
        _ => v.notes.push("liveness not audited: run did not halt with drained bridges".into()),
    }
    v
}

// ---------------------------------------------------------------------------
// Replay

/// Indices of events that change contract state: successful invocations,
/// locks and unlocks.
pub fn mutating_events(trace: &Trace) -> Vec<usize> {
    trace
        .iter()
        .filter(|(_, e)| e.event.invocation().is_some_and(|i| !i.mutated.is_empty()))
        .map(|(i, _)| i)
        .collect()
}

/// Re-executes one recorded invocation; `true` iff it reproduces the
/// recorded outcome.
fn replay_one(chains: &mut Chains, e: &Event) -> bool {
    let Some(inv) = e.invocation() else {
        return true;
    };
    let Some(chain) = chains.get_mut(&inv.target.chain) else {
        return false;
    };
    let r = match e {
        Event::Lock(_) => chain.try_lock(&inv.caller, &inv.target),
        Event::Unlock(_) => {
            let failure = inv.params.first().and_then(|v| v.as_bool()).unwrap_or(false);
            chain.try_unlock(&inv.caller, &inv.target, failure)
        }
        _ if inv.method == "add_executor" => match inv.params.first().and_then(Address::from_value) {
            Some(ex) => chain.try_add_executor(&inv.caller, &inv.target, &ex),
            None => return false,
        },
        _ => match chain.apply(&inv.call(), true) {
            Ok((r, _)) => r,
            Err(_) => return false,
        },
    };
    r == inv.outcome
}

/// Replays the given events in order from `initial`. On a mismatch returns
/// the trace index of the first event whose outcome was not reproduced.
pub fn replay(initial: &Chains, trace: &Trace, events: &[usize]) -> Result<Chains, usize> {
    let mut chains = initial.clone();
    for &i in events {
        if !replay_one(&mut chains, &trace.events[i].event) {
            return Err(i);
        }
    }
    Ok(chains)
}

fn scoped_states(chains: &Chains, scope: &BTreeSet<Address>) -> BTreeMap<Address, ContractState> {
    scope
        .iter()
        .filter_map(|a| {
            chains
                .get(&a.chain)
                .and_then(|c| c.state_of(a))
                .map(|s| (a.clone(), s.clone()))
        })
        .collect()
}

fn full_scope(txn: &CrossChainTransaction, chains: &Chains) -> BTreeSet<Address> {
    txn.chains()
        .iter()
        .flat_map(|c| scope_union(txn, c, chains))
        .collect()
}

/// Outcome events in trace order.
pub fn outcomes(trace: &Trace) -> Vec<(usize, TxId, TxOutcome, u32)> {
    trace
        .iter()
        .filter_map(|(i, e)| match &e.event {
            Event::Outcome { tx, outcome, rounds } => Some((i, tx.clone(), outcome.clone(), *rounds)),
            _ => None,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// All-or-nothing

/// Compares the replayed final scoped state with the ideal semantics.
///
/// With one transaction: committed ⇒ scoped state equals the ideal execution
/// from `initial`; aborted ⇒ it equals the initial scoped state. With several,
/// the committed ones are executed ideally in outcome order and the result is
/// compared on the union of all scopes.
pub fn check_all_or_nothing(
    trace: &Trace,
    txns: &[CrossChainTransaction],
    initial: &Chains,
) -> Result<Verdict, VerifyError> {
    let mut v = Verdict::new("all_or_nothing");
    let outs = outcomes(trace);
    for t in txns {
        if !outs.iter().any(|(_, id, _, _)| id == &t.tx_id) {
            return Err(VerifyError::MissingOutcome(t.tx_id.clone()));
        }
    }
    let finals = match replay(initial, trace, &mutating_events(trace)) {
        Ok(c) => c,
        Err(i) => {
            v.violate(
                Property::AllOrNothing,
                vec![i],
                "trace does not replay: recorded outcome not reproducible",
            );
            return Ok(v);
        }
    };
    let mut scope = BTreeSet::new();
    for t in txns {
        scope.extend(full_scope(t, initial));
    }
    let mut ideal = initial.clone();
    for (i, id, outcome, _) in &outs {
        let Some(t) = txns.iter().find(|t| &t.tx_id == id) else {
            continue;
        };
        if *outcome != TxOutcome::Committed {
            // Aborted and rejected transactions must leave no trace.
            continue;
        }
        match ideal_execute(t, &ideal) {
            Ok((next, res)) if res.is_success() => ideal = next,
            Ok((_, res)) => {
                v.violate(
                    Property::AllOrNothing,
                    vec![*i],
                    format!("{id} committed but its ideal execution is a {res}"),
                );
            }
            Err(e) => v.violate(Property::AllOrNothing, vec![*i], format!("{id}: ideal execution failed: {e}")),
        }
    }
    if v.pass() {
        let got = scoped_states(&finals, &scope);
        let want = scoped_states(&ideal, &scope);
        for (addr, w) in &want {
            let g = got.get(addr);
            if g != Some(w) {
                v.violate(
                    Property::AllOrNothing,
                    vec![],
                    format!(
                        "{addr}: final state {} differs from expected {w}",
                        g.map(|s| s.to_string()).unwrap_or_else(|| "-".into())
                    ),
                );
            }
        }
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Strict serializability

#[derive(Clone, Debug)]
struct Unit {
    label: String,
    events: Vec<usize>,
    start: usize,
    /// `usize::MAX` for transactions that never finished.
    end: usize,
}

fn fingerprint(chains: &Chains) -> u64 {
    let mut h = DefaultHasher::new();
    for (id, c) in chains {
        id.hash(&mut h);
        for (a, k) in &c.contracts {
            a.hash(&mut h);
            k.state.hash(&mut h);
            match &k.lock {
                Some(l) => {
                    1u8.hash(&mut h);
                    l.by.hash(&mut h);
                    l.checkpoint.hash(&mut h);
                }
                None => 0u8.hash(&mut h),
            }
            k.trusted_executors.hash(&mut h);
        }
    }
    h.finish()
}

fn same_world(a: &Chains, b: &Chains) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((ia, ca), (ib, cb))| {
            ia == ib
                && ca.contracts.len() == cb.contracts.len()
                && ca.contracts.iter().zip(&cb.contracts).all(|((x, kx), (y, ky))| {
                    x == y
                        && kx.state == ky.state
                        && kx.lock == ky.lock
                        && kx.trusted_executors == ky.trusted_executors
                })
        })
}

fn units_of(trace: &Trace, muts: &[usize]) -> Vec<Unit> {
    let mut by_tx: BTreeMap<TxId, Vec<usize>> = BTreeMap::new();
    let mut singles = Vec::new();
    for &i in muts {
        let inv: &Invocation = trace.events[i].event.invocation().expect("mutating");
        match &inv.tx {
            Some(t) => by_tx.entry(t.clone()).or_default().push(i),
            None => singles.push(i),
        }
    }
    let mut units = Vec::new();
    for (tx, events) in by_tx {
        let start = trace
            .iter()
            .find(|(_, e)| {
                e.event
                    .invocation()
                    .is_some_and(|inv| inv.method == "propose" && inv.tx.as_ref() == Some(&tx))
            })
            .map(|(i, _)| i)
            .unwrap_or(events[0])
            .min(events[0]);
        let end = trace
            .iter()
            .find(|(_, e)| matches!(&e.event, Event::Outcome { tx: t, .. } if t == &tx))
            .map(|(i, _)| i)
            .unwrap_or(usize::MAX)
            .max(*events.last().expect("non-empty"));
        units.push(Unit {
            label: tx.0.clone(),
            events,
            start,
            end,
        });
    }
    for i in singles {
        units.push(Unit {
            label: format!("op@{i}"),
            events: vec![i],
            start: i,
            end: i,
        });
    }
    units.sort_by_key(|u| (u.start, u.end));
    units
}

/// Searches for a serial order of transactions (as contiguous blocks, in
/// their own trace order) and independent operations such that a unit that
/// finished before another started stays first, replaying from `initial`
/// reproduces every recorded outcome, and the final world equals the one
/// obtained by replaying the trace as observed.
pub fn check_strict_serializability(trace: &Trace, initial: &Chains, budget: usize) -> Result<Verdict, VerifyError> {
    let mut v = Verdict::new("strict_serializability");
    let muts = mutating_events(trace);
    if muts.len() > budget {
        return Err(VerifyError::BudgetExceeded {
            events: muts.len(),
            budget,
        });
    }
    // A trace that does not even replay in its own order can still be
    // reordered into a legal history; the search decides. Without an observed
    // final world only the recorded outcomes constrain the search.
    let observed = replay(initial, trace, &muts).ok();
    let units = units_of(trace, &muts);
    let n = units.len();
    // must_precede[b] = set of units that must come before b.
    let must_precede: Vec<u64> = (0..n)
        .map(|b| {
            (0..n)
                .filter(|&a| a != b && units[a].end < units[b].start)
                .fold(0u64, |m, a| m | (1 << a))
        })
        .collect();
    let mut order = Vec::new();
    if search(trace, &units, &must_precede, initial.clone(), 0, &mut order, &mut HashSet::new(), observed.as_ref()) {
        v.witness = Some(order.iter().map(|&u| units[u].label.clone()).collect());
        return Ok(v);
    }
    let unconstrained = vec![0u64; n];
    let mut relaxed = Vec::new();
    let explanation = if search(trace, &units, &unconstrained, initial.clone(), 0, &mut relaxed, &mut HashSet::new(), observed.as_ref()) {
        let labels: Vec<&str> = relaxed.iter().map(|&u| units[u].label.as_str()).collect();
        format!(
            "real-time order violated: only [{}] reproduces the recorded outcomes, but it places a unit before one that finished before it started",
            labels.join(",")
        )
    } else {
        format!("no serial order of {n} units reproduces the recorded outcomes and final state")
    };
    v.violate(Property::StrictSerializability, muts.clone(), explanation);
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn search(
    trace: &Trace,
    units: &[Unit],
    must_precede: &[u64],
    world: Chains,
    placed: u64,
    order: &mut Vec<usize>,
    seen: &mut HashSet<(u64, u64)>,
    observed: Option<&Chains>,
) -> bool {
    if order.len() == units.len() {
        return observed.is_none_or(|o| same_world(&world, o));
    }
    if !seen.insert((placed, fingerprint(&world))) {
        return false;
    }
    for u in 0..units.len() {
        if placed & (1 << u) != 0 || must_precede[u] & !placed != 0 {
            continue;
        }
        let mut next = world.clone();
        if !units[u]
            .events
            .iter()
            .all(|&i| replay_one(&mut next, &trace.events[i].event))
        {
            continue;
        }
        order.push(u);
        if search(trace, units, must_precede, next, placed | (1 << u), order, seen, observed) {
            return true;
        }
        order.pop();
    }
    false
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChainMetrics {
    /// Bridge messages sent from this chain.
    pub xc_msgs: usize,
    /// Executor-level operations on this chain: propose, lock_scope,
    /// run_action and unlock_scope, failed ones included.
    pub tx_count: usize,
    /// Every recorded invocation on this chain, one unit each.
    pub op_cost: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxMetrics {
    pub tx: TxId,
    pub proposer: Option<ChainId>,
    pub outcome: TxOutcome,
    pub rounds: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MetricsReport {
    pub per_chain: BTreeMap<ChainId, ChainMetrics>,
    pub per_tx: Vec<TxMetrics>,
}

const EXECUTOR_OPS: &[&str] = &["propose", "lock_scope", "run_action", "unlock_scope"];

pub fn extract_metrics(trace: &Trace) -> MetricsReport {
    let mut r = MetricsReport::default();
    for (_, e) in trace.iter() {
        let Some(chain) = &e.chain else { continue };
        match &e.event {
            Event::Send { .. } => r.per_chain.entry(chain.clone()).or_default().xc_msgs += 1,
            Event::Invoke(inv) | Event::Lock(inv) | Event::Unlock(inv) => {
                let m = r.per_chain.entry(chain.clone()).or_default();
                m.op_cost += 1;
                if matches!(e.event, Event::Invoke(_))
                    && inv.target.local == "executor"
                    && EXECUTOR_OPS.contains(&inv.method.as_str())
                {
                    m.tx_count += 1;
                }
            }
            Event::Seal { .. } => {
                r.per_chain.entry(chain.clone()).or_default();
            }
            Event::Outcome { tx, outcome, rounds } => r.per_tx.push(TxMetrics {
                tx: tx.clone(),
                proposer: Some(chain.clone()),
                outcome: outcome.clone(),
                rounds: *rounds,
            }),
            _ => {}
        }
    }
    r
}

impl MetricsReport {
    pub fn chain(&self, id: &str) -> ChainMetrics {
        self.per_chain.get(&ChainId::new(id)).cloned().unwrap_or_default()
    }

    /// Fixed-width table; proposer chains are marked.
    pub fn table(&self) -> String {
        let proposers: BTreeSet<&ChainId> = self.per_tx.iter().filter_map(|t| t.proposer.as_ref()).collect();
        let mut out = format!(
            "{:<12} {:<12} {:>7} {:>8} {:>7}\n",
            "chain", "role", "xc_msgs", "tx_count", "op_cost"
        );
        for (c, m) in &self.per_chain {
            let role = if proposers.contains(c) { "proposer" } else { "participant" };
            out.push_str(&format!(
                "{:<12} {:<12} {:>7} {:>8} {:>7}\n",
                c.as_str(),
                role,
                m.xc_msgs,
                m.tx_count,
                m.op_cost
            ));
        }
        for t in &self.per_tx {
            out.push_str(&format!("tx {} outcome={} rounds={}\n", t.tx, t.outcome, t.rounds));
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (c, m) in &self.per_chain {
            writeln!(
                f,
                "metrics chain={} xc_msgs={} tx_count={} op_cost={}",
                c, m.xc_msgs, m.tx_count, m.op_cost
            )?;
        }
        for t in &self.per_tx {
            writeln!(f, "metrics tx={} outcome={} rounds={}", t.tx, t.outcome, t.rounds)?;
        }
        Ok(())
    }
}
