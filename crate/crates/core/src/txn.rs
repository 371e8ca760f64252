//! Cross-chain transactions: indexed actions under a partial order, their
//! layering, per-chain scopes, and the ideal sequential execution used as the
//! reference semantics.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::chain::{Call, ChainError, Chains, ContractState, MethodFailure};
use crate::types::{Address, ChainId, TxId, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexedAction {
    pub id: u32,
    pub chain: ChainId,
    pub target: Address,
    pub method: String,
    pub params: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TxnError {
    #[error("transaction {0}: the precedence relation has a cycle")]
    CyclicOrder(TxId),
    #[error("transaction {tx}: action {id} is declared twice")]
    DuplicateAction { tx: TxId, id: u32 },
    #[error("transaction {tx}: precedence pair references unknown action {id}")]
    UnknownAction { tx: TxId, id: u32 },
    #[error("transaction {tx}: action {id} targets {target}, which is not on chain {chain}")]
    ChainMismatch {
        tx: TxId,
        id: u32,
        target: Address,
        chain: ChainId,
    },
    #[error("transaction {tx}: action {id} targets unknown contract or method {target}.{method}")]
    UnknownTarget {
        tx: TxId,
        id: u32,
        target: Address,
        method: String,
    },
    #[error("transaction {tx}: actions {a} and {b} share a layer on chain {chain} with overlapping scopes")]
    OverlappingLayerScopes { tx: TxId, a: u32, b: u32, chain: ChainId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossChainTransaction {
    pub tx_id: TxId,
    pub actions: Vec<IndexedAction>,
    /// Pairs `(m, n)` meaning `m` must precede `n`.
    pub prec: BTreeSet<(u32, u32)>,
    pub originator: Address,
}

impl CrossChainTransaction {
    /// Builds a transaction, checking ids, chain membership and acyclicity.
    pub fn new(
        tx_id: TxId,
        actions: Vec<IndexedAction>,
        prec: impl IntoIterator<Item = (u32, u32)>,
        originator: Address,
    ) -> Result<Self, TxnError> {
        let txn = CrossChainTransaction {
            tx_id,
            actions,
            prec: prec.into_iter().collect(),
            originator,
        };
        let mut seen = BTreeSet::new();
        for a in &txn.actions {
            if !seen.insert(a.id) {
                return Err(TxnError::DuplicateAction {
                    tx: txn.tx_id.clone(),
                    id: a.id,
                });
            }
            if a.target.chain != a.chain {
                return Err(TxnError::ChainMismatch {
                    tx: txn.tx_id.clone(),
                    id: a.id,
                    target: a.target.clone(),
                    chain: a.chain.clone(),
                });
            }
        }
        for &(m, n) in &txn.prec {
            for id in [m, n] {
                if !seen.contains(&id) {
                    return Err(TxnError::UnknownAction {
                        tx: txn.tx_id.clone(),
                        id,
                    });
                }
            }
        }
        layer_partition(&txn)?;
        Ok(txn)
    }

    pub fn action(&self, id: u32) -> Option<&IndexedAction> {
        self.actions.iter().find(|a| a.id == id)
    }

    /// Participating chains in canonical (sorted) order.
    pub fn chains(&self) -> Vec<ChainId> {
        self.actions
            .iter()
            .map(|a| a.chain.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Participating chains in order of first appearance among the actions.
    pub fn chains_declared(&self) -> Vec<ChainId> {
        let mut out: Vec<ChainId> = Vec::new();
        for a in &self.actions {
            if !out.contains(&a.chain) {
                out.push(a.chain.clone());
            }
        }
        out
    }

    /// Checks targets and methods against deployed contracts, and that
    /// same-layer actions on one chain have disjoint scopes.
    pub fn validate_against(&self, chains: &Chains) -> Result<(), TxnError> {
        let mut scopes = BTreeMap::new();
        for a in &self.actions {
            let scope = chains
                .get(&a.chain)
                .and_then(|c| c.contract(&a.target))
                .and_then(|c| c.scope_of(&a.method))
                .ok_or_else(|| TxnError::UnknownTarget {
                    tx: self.tx_id.clone(),
                    id: a.id,
                    target: a.target.clone(),
                    method: a.method.clone(),
                })?;
            scopes.insert(a.id, scope);
        }
        let plan = layer_partition(self)?;
        for layer in &plan.layers {
            for (i, &a) in layer.iter().enumerate() {
                for &b in &layer[i + 1..] {
                    let (x, y) = (self.action(a).unwrap(), self.action(b).unwrap());
                    if x.chain == y.chain && !scopes[&a].is_disjoint(&scopes[&b]) {
                        return Err(TxnError::OverlappingLayerScopes {
                            tx: self.tx_id.clone(),
                            a,
                            b,
                            chain: x.chain.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ordered layers of action ids; each layer is one protocol round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerPlan {
    pub layers: Vec<Vec<u32>>,
}

impl LayerPlan {
    pub fn layer_of(&self, id: u32) -> Option<usize> {
        self.layers.iter().position(|l| l.contains(&id))
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Longest-path layering: an action's layer is one past the deepest of its
/// predecessors; ids ascend within a layer.
pub fn layer_partition(txn: &CrossChainTransaction) -> Result<LayerPlan, TxnError> {
    let ids: BTreeSet<u32> = txn.actions.iter().map(|a| a.id).collect();
    let mut indeg: BTreeMap<u32, usize> = ids.iter().map(|&i| (i, 0)).collect();
    let mut succ: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(m, n) in &txn.prec {
        if m == n {
            return Err(TxnError::CyclicOrder(txn.tx_id.clone()));
        }
        succ.entry(m).or_default().push(n);
        *indeg.get_mut(&n).ok_or(TxnError::UnknownAction {
            tx: txn.tx_id.clone(),
            id: n,
        })? += 1;
    }
    let mut depth: BTreeMap<u32, usize> = BTreeMap::new();
    let mut ready: VecDeque<u32> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&i, _)| i).collect();
    for &i in &ready {
        depth.insert(i, 0);
    }
    let mut visited = 0;
    while let Some(m) = ready.pop_front() {
        visited += 1;
        let dm = depth[&m];
        for &n in succ.get(&m).map(Vec::as_slice).unwrap_or(&[]) {
            let dn = depth.entry(n).or_insert(0);
            *dn = (*dn).max(dm + 1);
            let d = indeg.get_mut(&n).expect("known");
            *d -= 1;
            if *d == 0 {
                ready.push_back(n);
            }
        }
    }
    if visited != ids.len() {
        return Err(TxnError::CyclicOrder(txn.tx_id.clone()));
    }
    let n_layers = depth.values().max().map_or(0, |d| d + 1);
    let mut layers = vec![Vec::new(); n_layers];
    for (id, d) in depth {
        layers[d].push(id);
    }
    for l in &mut layers {
        l.sort_unstable();
    }
    Ok(LayerPlan { layers })
}

/// Union of the declared scopes of every action on `chain`, targets included.
pub fn scope_union(txn: &CrossChainTransaction, chain: &ChainId, chains: &Chains) -> BTreeSet<Address> {
    let mut out = BTreeSet::new();
    for a in txn.actions.iter().filter(|a| &a.chain == chain) {
        out.insert(a.target.clone());
        if let Some(s) = chains
            .get(chain)
            .and_then(|c| c.contract(&a.target))
            .and_then(|c| c.scope_of(&a.method))
        {
            out.extend(s);
        }
    }
    out
}

/// Scoped application state of every participating chain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorldCheckpoint {
    pub per_chain: BTreeMap<ChainId, BTreeMap<Address, ContractState>>,
}

impl WorldCheckpoint {
    pub fn capture(txn: &CrossChainTransaction, chains: &Chains) -> Self {
        let mut per_chain = BTreeMap::new();
        for id in txn.chains() {
            let scope = scope_union(txn, &id, chains);
            per_chain.insert(id.clone(), capture_scope(chains, &id, &scope));
        }
        WorldCheckpoint { per_chain }
    }

    fn restore(&self, chains: &mut Chains) {
        for (id, states) in &self.per_chain {
            let chain = chains.get_mut(id).expect("checkpointed chain");
            for (addr, st) in states {
                chain.contracts.get_mut(addr).expect("checkpointed contract").state = st.clone();
            }
        }
    }
}

pub fn capture_scope(chains: &Chains, id: &ChainId, scope: &BTreeSet<Address>) -> BTreeMap<Address, ContractState> {
    let chain = &chains[id];
    scope
        .iter()
        .filter_map(|a| chain.state_of(a).map(|s| (a.clone(), s.clone())))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdealOutcome {
    Success { results: BTreeMap<u32, Value> },
    Failure {
        layer: usize,
        action: u32,
        reason: MethodFailure,
    },
}

impl IdealOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, IdealOutcome::Success { .. })
    }
}

impl fmt::Display for IdealOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdealOutcome::Success { results } => write!(f, "success({} actions)", results.len()),
            IdealOutcome::Failure { layer, action, reason } => {
                write!(f, "failure(layer={layer};action={action};reason={reason})")
            }
        }
    }
}

/// Executes `txn` directly and without interference on a copy of `chains`:
/// layer by layer, ascending ids within a layer. On the first failing action
/// the checkpoint of every participating chain is restored.
pub fn ideal_execute(txn: &CrossChainTransaction, chains: &Chains) -> Result<(Chains, IdealOutcome), ChainError> {
    let mut world = chains.clone();
    let cp = WorldCheckpoint::capture(txn, &world);
    let plan = layer_partition(txn).expect("validated at construction");
    let mut results = BTreeMap::new();
    for (k, layer) in plan.layers.iter().enumerate() {
        for &id in layer {
            let a = txn.action(id).expect("layer ids are action ids");
            let chain = world.get_mut(&a.chain).expect("participating chain");
            let caller = chain.executor.clone();
            let call = Call::new(&caller, &a.target, &a.method, a.params.clone());
            let (r, _) = chain.apply(&call, false)?;
            match r {
                Ok(v) => {
                    results.insert(id, v);
                }
                Err(reason) => {
                    cp.restore(&mut world);
                    return Ok((
                        world,
                        IdealOutcome::Failure {
                            layer: k,
                            action: id,
                            reason,
                        },
                    ));
                }
            }
        }
    }
    Ok((world, IdealOutcome::Success { results }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Chain;
    use crate::library;

    fn act(id: u32, chain: &str, target: &str) -> IndexedAction {
        let c = ChainId::new(chain);
        IndexedAction {
            id,
            target: Address::new(&c, target),
            chain: c,
            method: "noop".into(),
            params: vec![],
        }
    }

    fn tx(actions: Vec<IndexedAction>, prec: &[(u32, u32)]) -> Result<CrossChainTransaction, TxnError> {
        let c = ChainId::new("a");
        CrossChainTransaction::new(TxId("t".into()), actions, prec.iter().copied(), Address::new(&c, "o"))
    }

    #[test]
    fn unconstrained_actions_share_layer_zero() {
        let t = tx(vec![act(2, "a", "x"), act(0, "a", "y"), act(1, "b", "z")], &[]).unwrap();
        assert_eq!(layer_partition(&t).unwrap().layers, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn chain_order_gives_one_layer_each() {
        let t = tx(vec![act(0, "a", "x"), act(1, "a", "y"), act(2, "a", "z")], &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(layer_partition(&t).unwrap().layers, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn diamond_layers() {
        let t = tx(
            vec![act(0, "a", "a"), act(1, "a", "b"), act(2, "b", "c"), act(3, "b", "d")],
            &[(0, 1), (0, 2), (1, 3), (2, 3)],
        )
        .unwrap();
        assert_eq!(layer_partition(&t).unwrap().layers, vec![vec![0], vec![1, 2], vec![3]]);
    }

    #[test]
    fn longest_path_wins_over_short_edge() {
        // 0 -> 1 -> 2 and 0 -> 2: action 2 sits after 1
        let t = tx(vec![act(0, "a", "a"), act(1, "a", "b"), act(2, "a", "c")], &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(layer_partition(&t).unwrap().layers, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn cycles_and_bad_refs_are_rejected() {
        assert!(matches!(tx(vec![act(0, "a", "a"), act(1, "a", "b")], &[(0, 1), (1, 0)]), Err(TxnError::CyclicOrder(_))));
        assert!(matches!(tx(vec![act(0, "a", "a")], &[(0, 0)]), Err(TxnError::CyclicOrder(_))));
        assert!(matches!(tx(vec![act(0, "a", "a")], &[(0, 5)]), Err(TxnError::UnknownAction { .. })));
        assert!(matches!(tx(vec![act(0, "a", "a"), act(0, "a", "b")], &[]), Err(TxnError::DuplicateAction { .. })));
        let mut bad = act(0, "a", "x");
        bad.target.chain = ChainId::new("b");
        assert!(matches!(tx(vec![bad], &[]), Err(TxnError::ChainMismatch { .. })));
    }

    fn two_token_world() -> Chains {
        let mut chains = Chains::new();
        for (c, tok) in [("fantom", "tokenA"), ("mumbai", "tokenB")] {
            let id = ChainId::new(c);
            let mut chain = Chain::new(id.clone());
            let owner = Address::new(&id, "alice");
            chain
                .deploy(library::token(&Address::new(&id, tok), &owner, &[("alice", 10), ("bob", 10)]))
                .unwrap();
            chain
                .deploy(library::forwarder(&Address::new(&id, "fwd"), &owner, &[Address::new(&id, tok)]))
                .unwrap();
            chains.insert(id, chain);
        }
        chains
    }

    fn transfer(id: u32, chain: &str, tok: &str, from: &str, to: &str, amt: i64) -> IndexedAction {
        let c = ChainId::new(chain);
        IndexedAction {
            id,
            target: Address::new(&c, tok),
            chain: c,
            method: "transfer".into(),
            params: vec![Value::text(from), Value::text(to), Value::Int(amt)],
        }
    }

    #[test]
    fn scope_union_covers_targets_and_indirect_reach() {
        let chains = two_token_world();
        let f = ChainId::new("fantom");
        let t = tx(vec![transfer(0, "fantom", "tokenA", "alice", "bob", 1)], &[]).unwrap();
        assert_eq!(scope_union(&t, &f, &chains), [Address::new(&f, "tokenA")].into_iter().collect());
        let mut fwd = act(1, "fantom", "fwd");
        fwd.method = "forward".into();
        let t = tx(vec![fwd], &[]).unwrap();
        let s = scope_union(&t, &f, &chains);
        assert!(s.contains(&Address::new(&f, "tokenA")) && s.contains(&Address::new(&f, "fwd")));
        assert!(scope_union(&t, &ChainId::new("mumbai"), &chains).is_empty());
    }

    #[test]
    fn same_layer_overlap_is_rejected() {
        let chains = two_token_world();
        let t = tx(
            vec![
                transfer(0, "fantom", "tokenA", "alice", "bob", 1),
                transfer(1, "fantom", "tokenA", "bob", "alice", 1),
            ],
            &[],
        )
        .unwrap();
        assert!(matches!(t.validate_against(&chains), Err(TxnError::OverlappingLayerScopes { .. })));
        let t = tx(
            vec![
                transfer(0, "fantom", "tokenA", "alice", "bob", 1),
                transfer(1, "fantom", "tokenA", "bob", "alice", 1),
            ],
            &[(0, 1)],
        )
        .unwrap();
        assert!(t.validate_against(&chains).is_ok());
    }

    #[test]
    fn ideal_swap_applies_both_legs() {
        let chains = two_token_world();
        let t = tx(
            vec![
                transfer(0, "fantom", "tokenA", "alice", "bob", 4),
                transfer(1, "mumbai", "tokenB", "bob", "alice", 6),
            ],
            &[],
        )
        .unwrap();
        let (after, out) = ideal_execute(&t, &chains).unwrap();
        assert!(out.is_success());
        let a = after[&ChainId::new("fantom")].state_of(&Address::new(&ChainId::new("fantom"), "tokenA")).unwrap();
        assert_eq!((a.int("bal.alice"), a.int("bal.bob")), (Some(6), Some(14)));
        let b = after[&ChainId::new("mumbai")].state_of(&Address::new(&ChainId::new("mumbai"), "tokenB")).unwrap();
        assert_eq!((b.int("bal.alice"), b.int("bal.bob")), (Some(16), Some(4)));
    }

    #[test]
    fn ideal_failure_restores_checkpoint_exactly() {
        let chains = two_token_world();
        let t = tx(
            vec![
                transfer(0, "fantom", "tokenA", "alice", "bob", 4),
                transfer(1, "mumbai", "tokenB", "bob", "alice", 60),
            ],
            &[(0, 1)],
        )
        .unwrap();
        let (after, out) = ideal_execute(&t, &chains).unwrap();
        assert_eq!(
            out,
            IdealOutcome::Failure {
                layer: 1,
                action: 1,
                reason: MethodFailure::InsufficientFunds
            }
        );
        for (id, c) in &chains {
            assert_eq!(after[id].states(), c.states());
        }
    }

    #[test]
    fn empty_transaction_is_vacuous_success() {
        let chains = two_token_world();
        let t = tx(vec![], &[]).unwrap();
        let (after, out) = ideal_execute(&t, &chains).unwrap();
        assert!(out.is_success());
        for (id, c) in &chains {
            assert_eq!(after[id].states(), c.states());
        }
    }
}
