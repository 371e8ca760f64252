//! Scenario files: chains, bridges, transactions and scripted events in TOML.
//!
//! The grammar is documented in `docs/scenario-format.md`. Loading validates
//! every reference by building the world once, so a scenario that loads can
//! always be run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::adapter::Payload;
use crate::bridge::{BridgeId, BridgeMode, BridgePolicy, Injection};
use crate::chain::{Call, Chain, Contract};
use crate::library;
use crate::protocol::LockOrder;
use crate::sim::{Action, Scheduled, Simulation, Stop, When, World};
use crate::txn::{layer_partition, scope_union, CrossChainTransaction, IndexedAction};
use crate::types::{Address, ChainId, TxId, Value};

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("swap", include_str!("../scenarios/swap.toml")),
    ("swap-lockfail", include_str!("../scenarios/swap-lockfail.toml")),
    ("swap-updatefail", include_str!("../scenarios/swap-updatefail.toml")),
    ("three-exchange", include_str!("../scenarios/three-exchange.toml")),
    ("symmetric-conflict", include_str!("../scenarios/symmetric-conflict.toml")),
    ("adversary-forge", include_str!("../scenarios/adversary-forge.toml")),
    ("adversary-drop", include_str!("../scenarios/adversary-drop.toml")),
];

/// The bundled scenarios whose bridges are all honest.
pub const HONEST: &[&str] = &[
    "swap",
    "swap-lockfail",
    "swap-updatefail",
    "three-exchange",
    "symmetric-conflict",
];

pub const DEFAULT_MAX_TICKS: u64 = 2000;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{origin}:{line}:{col}: parse error: {msg}")]
    Parse {
        origin: String,
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("{origin}: {location}: {msg}")]
    Validation {
        origin: String,
        location: String,
        msg: String,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    #[serde(default)]
    seed: u64,
    max_delay: Option<u64>,
    #[serde(default)]
    reorder: bool,
    lock_order: Option<String>,
    max_ticks: Option<u64>,
    stop: Option<String>,
    #[serde(default, rename = "chain")]
    chains: Vec<ChainSpec>,
    #[serde(default, rename = "bridge")]
    bridges: Vec<BridgeSpec>,
    #[serde(default, rename = "tx")]
    txs: Vec<TxSpec>,
    #[serde(default)]
    script: Vec<EventSpec>,
    #[serde(default)]
    adversary: Vec<EventSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainSpec {
    id: String,
    seal_every: Option<u64>,
    #[serde(default, rename = "contract")]
    contracts: Vec<ContractSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContractSpec {
    name: String,
    kind: String,
    owner: Option<String>,
    #[serde(default)]
    balances: BTreeMap<String, i64>,
    start: Option<i64>,
    #[serde(default)]
    reach: Vec<String>,
    #[serde(default)]
    executors: Vec<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BridgeSpec {
    between: [String; 2],
    mode: Option<String>,
    max_delay: Option<u64>,
    reorder: Option<bool>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TxSpec {
    id: String,
    proposer: String,
    originator: Option<String>,
    #[serde(default)]
    at: u64,
    lock_order: Option<Vec<String>>,
    #[serde(default)]
    prec: Vec<[u32; 2]>,
    #[serde(default, rename = "action")]
    actions: Vec<ActionSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionSpec {
    id: u32,
    target: String,
    method: String,
    #[serde(default)]
    params: Vec<toml::Value>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventSpec {
    kind: String,
    at: Option<u64>,
    when_locked: Option<String>,
    #[serde(default)]
    after: u64,
    caller: Option<String>,
    target: Option<String>,
    method: Option<String>,
    #[serde(default)]
    params: Vec<toml::Value>,
    failure: Option<bool>,
    data: Option<String>,
    dest: Option<String>,
    bridge: Option<String>,
    msg: Option<u64>,
    payload: Option<PayloadSpec>,
    sender: Option<String>,
    fake_k: Option<u64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PayloadSpec {
    kind: String,
    seq: Option<u64>,
    ok: Option<bool>,
    result: Option<toml::Value>,
    origin: Option<String>,
    data: Option<String>,
    final_dest: Option<String>,
    target: Option<String>,
    method: Option<String>,
    #[serde(default)]
    params: Vec<toml::Value>,
}

/// Per-run overrides on top of what the file says.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub lock_order: Option<LockOrder>,
    /// Forces reordering on (or off) for every bridge.
    pub reorder: Option<bool>,
    /// Adds seeded adversarial interference: an out-of-scope transfer,
    /// guarded-method attempts on locked contracts and foreign lock attempts.
    pub interference: bool,
}

impl RunOptions {
    pub fn seeded(seed: u64) -> Self {
        RunOptions {
            seed: Some(seed),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    origin: String,
    file: ScenarioFile,
}

/// Counts describing a loaded scenario.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Summary {
    pub chains: usize,
    pub bridges: usize,
    pub transactions: Vec<(String, usize)>,
}

struct Ctx<'a> {
    origin: &'a str,
}

impl Ctx<'_> {
    fn err(&self, location: impl Into<String>, msg: impl Into<String>) -> ScenarioError {
        ScenarioError::Validation {
            origin: self.origin.to_string(),
            location: location.into(),
            msg: msg.into(),
        }
    }

    fn addr(&self, loc: &str, s: &str) -> Result<Address, ScenarioError> {
        s.parse::<Address>().map_err(|e| self.err(loc, e.0))
    }

    /// A full address, or a local name resolved on `chain`.
    fn local_or_addr(&self, loc: &str, chain: &ChainId, s: &str) -> Result<Address, ScenarioError> {
        if s.contains('/') {
            self.addr(loc, s)
        } else {
            Ok(Address::new(chain, s))
        }
    }

    fn value(&self, loc: &str, v: &toml::Value) -> Result<Value, ScenarioError> {
        match v {
            toml::Value::Integer(i) => Ok(Value::Int(*i)),
            toml::Value::Boolean(b) => Ok(Value::Bool(*b)),
            toml::Value::String(s) => match s.strip_prefix("0x") {
                Some(h) => hex::decode(h).map(Value::Bytes).map_err(|e| self.err(loc, e.to_string())),
                None => Ok(Value::text(s)),
            },
            other => Err(self.err(loc, format!("unsupported value {other}"))),
        }
    }

    fn values(&self, loc: &str, vs: &[toml::Value]) -> Result<Vec<Value>, ScenarioError> {
        vs.iter()
            .enumerate()
            .map(|(i, v)| self.value(&format!("{loc}.params[{i}]"), v))
            .collect()
    }

    fn need<'v, T>(&self, loc: &str, field: &str, v: &'v Option<T>) -> Result<&'v T, ScenarioError> {
        v.as_ref().ok_or_else(|| self.err(loc, format!("missing `{field}`")))
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, col)
}

impl Scenario {
    /// Parses and validates scenario text. `origin` names it in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| {
            let (line, col) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            ScenarioError::Parse {
                origin: origin.to_string(),
                line,
                col,
                msg: e.message().to_string(),
            }
        })?;
        let name = file.name.clone().unwrap_or_else(|| {
            Path::new(origin)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| origin.to_string())
        });
        let s = Scenario {
            name,
            origin: origin.to_string(),
            file,
        };
        s.build(&RunOptions::default())?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Scenario::parse(&text, &path.display().to_string())
    }

    pub fn bundled(name: &str) -> Option<Scenario> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, text)| Scenario::parse(text, n).expect("bundled scenarios are valid"))
    }

    /// A file path if one exists, otherwise a bundled scenario name.
    pub fn resolve(path_or_name: &str) -> Result<Scenario, ScenarioError> {
        if Path::new(path_or_name).is_file() {
            return Scenario::load(path_or_name);
        }
        Scenario::bundled(path_or_name).ok_or_else(|| ScenarioError::Io {
            path: path_or_name.to_string(),
            msg: "no such file or bundled scenario".to_string(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.file.seed
    }

    pub fn max_delay(&self) -> u64 {
        self.file
            .bridges
            .iter()
            .map(|b| b.max_delay.or(self.file.max_delay).unwrap_or(3))
            .max()
            .unwrap_or(self.file.max_delay.unwrap_or(3))
    }

    pub fn summary(&self) -> Summary {
        Summary {
            chains: self.file.chains.len(),
            bridges: self.file.bridges.len() * 2,
            transactions: self
                .file
                .txs
                .iter()
                .map(|t| (t.id.clone(), t.actions.len()))
                .collect(),
        }
    }

    /// Tick by which every transaction must be done on honest bridges:
    /// its proposal tick plus `slack × (layers + 2) × 2 × (maxDelay + 2)`.
    pub fn termination_bound(&self, slack: u64) -> u64 {
        let sim = self.build(&RunOptions::default()).expect("validated");
        let d = self.max_delay();
        sim.schedule
            .iter()
            .filter_map(|s| match (&s.when, &s.action) {
                (When::At(at), Action::Propose { txn, .. }) => {
                    let layers = layer_partition(txn).expect("validated").len() as u64;
                    Some(at + slack * (layers + 2) * 2 * (d + 2))
                }
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Builds a runnable simulation.
    pub fn build(&self, opts: &RunOptions) -> Result<Simulation, ScenarioError> {
        let f = &self.file;
        let cx = Ctx { origin: &self.origin };
        let seed = opts.seed.unwrap_or(f.seed);
        let mut world = World::new(seed);
        world.lock_order = match opts.lock_order {
            Some(o) => o,
            None => match &f.lock_order {
                Some(s) => s.parse().map_err(|e: String| cx.err("lock_order", e))?,
                None => LockOrder::Canonical,
            },
        };
        let stop = match f.stop.as_deref() {
            None | Some("quiesce") => Stop::Quiesce,
            Some("max_ticks") => Stop::MaxTicks,
            Some(other) => return Err(cx.err("stop", format!("unknown stop condition `{other}` (quiesce|max_ticks)"))),
        };

        for (ci, cs) in f.chains.iter().enumerate() {
            let loc = format!("chain[{ci}]");
            if cs.id.is_empty() || cs.id.contains(['/', ' ']) {
                return Err(cx.err(&loc, format!("invalid chain id `{}`", cs.id)));
            }
            let id = ChainId::new(&cs.id);
            if world.chains.contains_key(&id) {
                return Err(cx.err(&loc, format!("duplicate chain `{id}`")));
            }
            let mut chain = Chain::new(id.clone());
            chain.seal_every = cs.seal_every.unwrap_or(1).max(1);
            for (ki, k) in cs.contracts.iter().enumerate() {
                let loc = format!("{loc}.contract[{ki}]");
                let contract = build_contract(&cx, &loc, &id, k)?;
                let (addr, owner) = (contract.addr.clone(), contract.owner.clone());
                chain
                    .deploy(contract)
                    .map_err(|e| cx.err(&loc, e.to_string()))?;
                let exec = chain.executor.clone();
                chain.try_add_executor(&owner, &addr, &exec).expect("owner adds");
                for (ei, e) in k.executors.iter().enumerate() {
                    let e = cx.local_or_addr(&format!("{loc}.executors[{ei}]"), &id, e)?;
                    chain.try_add_executor(&owner, &addr, &e).expect("owner adds");
                }
            }
            world.add_chain(chain);
        }

        for (bi, b) in f.bridges.iter().enumerate() {
            let loc = format!("bridge[{bi}]");
            let (a, c) = (ChainId::new(&b.between[0]), ChainId::new(&b.between[1]));
            for x in [&a, &c] {
                if !world.chains.contains_key(x) {
                    return Err(cx.err(&loc, format!("unknown chain `{x}`")));
                }
            }
            if a == c {
                return Err(cx.err(&loc, "a bridge needs two distinct chains"));
            }
            if world.adapter_between(&a, &c).is_some() {
                return Err(cx.err(&loc, format!("duplicate bridge {a} <-> {c}")));
            }
            let mode = match b.mode.as_deref() {
                None | Some("honest") => BridgeMode::Honest,
                Some("adversarial") => BridgeMode::Adversarial,
                Some(other) => return Err(cx.err(&loc, format!("unknown mode `{other}` (honest|adversarial)"))),
            };
            let max_delay = b.max_delay.or(f.max_delay).unwrap_or(3);
            if max_delay == 0 {
                return Err(cx.err(&loc, "max_delay must be at least 1"));
            }
            let policy = BridgePolicy {
                mode,
                max_delay,
                allow_reorder: opts.reorder.unwrap_or(b.reorder.unwrap_or(f.reorder)),
            };
            world.connect(&a, &c, policy).map_err(|e| cx.err(&loc, e.to_string()))?;
        }

        let mut schedule = Vec::new();
        let mut tx_ids = BTreeSet::new();
        for (ti, t) in f.txs.iter().enumerate() {
            let loc = format!("tx[{ti}]");
            if !tx_ids.insert(t.id.clone()) {
                return Err(cx.err(&loc, format!("duplicate transaction id `{}`", t.id)));
            }
            let pchain = ChainId::new(&t.proposer);
            if !world.chains.contains_key(&pchain) {
                return Err(cx.err(format!("{loc}.proposer"), format!("unknown chain `{pchain}`")));
            }
            let proposer = Address::new(&pchain, "executor");
            let originator = match &t.originator {
                Some(o) => cx.local_or_addr(&format!("{loc}.originator"), &pchain, o)?,
                None => Address::new(&pchain, "user"),
            };
            let mut actions = Vec::new();
            for (ai, a) in t.actions.iter().enumerate() {
                let aloc = format!("{loc}.action[{ai}]");
                let target = cx.addr(&format!("{aloc}.target"), &a.target)?;
                if !world.chains.contains_key(&target.chain) {
                    return Err(cx.err(format!("{aloc}.target"), format!("unknown chain `{}`", target.chain)));
                }
                actions.push(IndexedAction {
                    id: a.id,
                    chain: target.chain.clone(),
                    target,
                    method: a.method.clone(),
                    params: cx.values(&aloc, &a.params)?,
                });
            }
            let prec = t.prec.iter().map(|p| (p[0], p[1]));
            let txn = CrossChainTransaction::new(TxId(t.id.clone()), actions, prec, originator)
                .map_err(|e| cx.err(&loc, e.to_string()))?;
            txn.validate_against(&world.chains)
                .map_err(|e| cx.err(&loc, e.to_string()))?;
            for c in txn.chains() {
                if c != pchain && world.adapter_between(&pchain, &c).is_none() {
                    return Err(cx.err(&loc, format!("no bridge between proposer chain {pchain} and {c}")));
                }
            }
            let declared = match &t.lock_order {
                Some(order) => {
                    let order: Vec<ChainId> = order.iter().map(ChainId::new).collect();
                    let want: BTreeSet<_> = txn.chains().into_iter().collect();
                    let got: BTreeSet<_> = order.iter().cloned().collect();
                    if want != got || order.len() != want.len() {
                        return Err(cx.err(
                            format!("{loc}.lock_order"),
                            "must list each participating chain exactly once",
                        ));
                    }
                    Some(order)
                }
                None => None,
            };
            schedule.push(Scheduled {
                when: When::At(t.at),
                action: Action::Propose {
                    proposer,
                    txn,
                    declared,
                },
                adversarial: false,
            });
        }

        for (group, adversarial) in [(&f.script, false), (&f.adversary, true)] {
            let name = if adversarial { "adversary" } else { "script" };
            for (ei, e) in group.iter().enumerate() {
                let loc = format!("{name}[{ei}]");
                schedule.push(build_event(&cx, &loc, &world, e, adversarial)?);
            }
        }

        if opts.interference {
            schedule.extend(interference(&world, &schedule, seed));
        }

        Ok(Simulation {
            world,
            schedule,
            max_ticks: f.max_ticks.unwrap_or(DEFAULT_MAX_TICKS),
            stop,
        })
    }
}

fn build_contract(cx: &Ctx<'_>, loc: &str, chain: &ChainId, k: &ContractSpec) -> Result<Contract, ScenarioError> {
    if k.name.is_empty() || k.name.contains(['/', ' ']) || k.name == "executor" || k.name.starts_with("adapter.") {
        return Err(cx.err(loc, format!("invalid or reserved contract name `{}`", k.name)));
    }
    let addr = Address::new(chain, &k.name);
    let owner = match &k.owner {
        Some(o) => cx.local_or_addr(&format!("{loc}.owner"), chain, o)?,
        None => Address::new(chain, "owner"),
    };
    let balances: Vec<(&str, i64)> = k.balances.iter().map(|(a, b)| (a.as_str(), *b)).collect();
    Ok(match k.kind.as_str() {
        "token" => library::token(&addr, &owner, &balances),
        "counter" => library::counter(&addr, &owner, k.start.unwrap_or(0)),
        "inbox" => library::inbox(&addr, &owner),
        "forwarder" => {
            let reach = k
                .reach
                .iter()
                .enumerate()
                .map(|(i, r)| cx.addr(&format!("{loc}.reach[{i}]"), r))
                .collect::<Result<Vec<_>, _>>()?;
            library::forwarder(&addr, &owner, &reach)
        }
        "failing" => library::failing(&addr, &owner),
        other => {
            return Err(cx.err(
                format!("{loc}.kind"),
                format!("unknown contract kind `{other}` (one of {})", library::KINDS.join(", ")),
            ))
        }
    })
}

fn parse_bridge(cx: &Ctx<'_>, loc: &str, s: &str) -> Result<BridgeId, ScenarioError> {
    let (a, b) = s
        .split_once("->")
        .ok_or_else(|| cx.err(loc, format!("bridge `{s}` must look like `src->dst`")))?;
    Ok(BridgeId::new(&ChainId::new(a.trim()), &ChainId::new(b.trim())))
}

fn build_payload(cx: &Ctx<'_>, loc: &str, p: &PayloadSpec) -> Result<Payload, ScenarioError> {
    Ok(match p.kind.as_str() {
        "ack" => Payload::Ack {
            seq: *cx.need(loc, "seq", &p.seq)?,
            result: p.result.as_ref().map(|r| cx.value(loc, r)).transpose()?,
            ok: p.ok.unwrap_or(true),
        },
        "anotify" => Payload::Anotify {
            origin: cx.addr(loc, cx.need(loc, "origin", &p.origin)?)?,
            data: p.data.clone().unwrap_or_default().into_bytes(),
            seq: p.seq,
            final_dest: cx.addr(loc, cx.need(loc, "final_dest", &p.final_dest)?)?,
        },
        "rcall" => Payload::Rcall {
            origin: cx.addr(loc, cx.need(loc, "origin", &p.origin)?)?,
            target: cx.addr(loc, cx.need(loc, "target", &p.target)?)?,
            method: cx.need(loc, "method", &p.method)?.clone(),
            params: cx.values(loc, &p.params)?,
            seq: *cx.need(loc, "seq", &p.seq)?,
        },
        other => return Err(cx.err(loc, format!("unknown payload kind `{other}` (ack|anotify|rcall)"))),
    })
}

fn build_event(cx: &Ctx<'_>, loc: &str, world: &World, e: &EventSpec, adversarial: bool) -> Result<Scheduled, ScenarioError> {
    let when = match (e.at, &e.when_locked) {
        (Some(at), None) => When::At(at),
        (None, Some(t)) => When::WhenLocked {
            target: cx.addr(&format!("{loc}.when_locked"), t)?,
            after: e.after,
        },
        (None, None) => When::At(0),
        (Some(_), Some(_)) => return Err(cx.err(loc, "use either `at` or `when_locked`, not both")),
    };
    let known_chain = |a: &Address, field: &str| {
        if world.chains.contains_key(&a.chain) {
            Ok(())
        } else {
            Err(cx.err(format!("{loc}.{field}"), format!("unknown chain `{}`", a.chain)))
        }
    };
    let caller = || -> Result<Address, ScenarioError> {
        let c = cx.addr(&format!("{loc}.caller"), cx.need(loc, "caller", &e.caller)?)?;
        known_chain(&c, "caller")?;
        if adversarial && world.executors.contains_key(&c) {
            return Err(cx.err(format!("{loc}.caller"), "the adversary cannot act as an executor"));
        }
        Ok(c)
    };
    let target = || -> Result<Address, ScenarioError> {
        let t = cx.addr(&format!("{loc}.target"), cx.need(loc, "target", &e.target)?)?;
        known_chain(&t, "target")?;
        Ok(t)
    };
    let action = match e.kind.as_str() {
        "call" => {
            let (caller, target) = (caller()?, target()?);
            let method = cx.need(loc, "method", &e.method)?;
            Action::Call(Call::new(&caller, &target, method, cx.values(loc, &e.params)?))
        }
        "lock" => Action::Lock {
            caller: caller()?,
            target: target()?,
        },
        "unlock" => Action::Unlock {
            caller: caller()?,
            target: target()?,
            failure: e.failure.unwrap_or(false),
        },
        "notify" | "anotify" | "rcall" => {
            let caller = caller()?;
            let dest = if e.kind == "rcall" {
                target()?
            } else {
                let d = cx.addr(&format!("{loc}.dest"), cx.need(loc, "dest", &e.dest)?)?;
                known_chain(&d, "dest")?;
                d
            };
            let adapter = world
                .adapter_between(&caller.chain, &dest.chain)
                .ok_or_else(|| cx.err(loc, format!("no bridge between {} and {}", caller.chain, dest.chain)))?;
            if e.kind == "rcall" {
                Action::Rcall {
                    adapter,
                    caller,
                    target: dest,
                    method: cx.need(loc, "method", &e.method)?.clone(),
                    params: cx.values(loc, &e.params)?,
                }
            } else {
                Action::Notify {
                    adapter,
                    caller,
                    data: e.data.clone().unwrap_or_default().into_bytes(),
                    dest,
                    ack: e.kind == "anotify",
                }
            }
        }
        "forge" | "drop" | "corrupt" => {
            if !adversarial {
                return Err(cx.err(loc, format!("`{}` is only allowed in [[adversary]]", e.kind)));
            }
            let bloc = format!("{loc}.bridge");
            let bridge = parse_bridge(cx, &bloc, cx.need(loc, "bridge", &e.bridge)?)?;
            let b = world
                .bridges
                .get(&bridge)
                .ok_or_else(|| cx.err(&bloc, format!("unknown bridge {bridge}")))?;
            if b.policy.mode != BridgeMode::Adversarial {
                return Err(cx.err(&bloc, format!("bridge {bridge} is honest; injections need mode = \"adversarial\"")));
            }
            let ploc = format!("{loc}.payload");
            let injection = match e.kind.as_str() {
                "forge" => {
                    let sender = cx.addr(&format!("{loc}.sender"), cx.need(loc, "sender", &e.sender)?)?;
                    let dest = cx.addr(&format!("{loc}.dest"), cx.need(loc, "dest", &e.dest)?)?;
                    if dest.chain != bridge.dst {
                        return Err(cx.err(format!("{loc}.dest"), format!("not on {}", bridge.dst)));
                    }
                    Injection::Forge {
                        payload: build_payload(cx, &ploc, cx.need(loc, "payload", &e.payload)?)?,
                        sender,
                        dest,
                        fake_k: e.fake_k.unwrap_or(0),
                    }
                }
                "drop" => Injection::Drop {
                    msg_id: *cx.need(loc, "msg", &e.msg)?,
                },
                _ => Injection::Corrupt {
                    msg_id: *cx.need(loc, "msg", &e.msg)?,
                    payload: build_payload(cx, &ploc, cx.need(loc, "payload", &e.payload)?)?,
                },
            };
            Action::Inject { bridge, injection }
        }
        other => {
            return Err(cx.err(
                format!("{loc}.kind"),
                format!("unknown event kind `{other}` (call|lock|unlock|notify|anotify|rcall|forge|drop|corrupt)"),
            ))
        }
    };
    Ok(Scheduled {
        when,
        action,
        adversarial,
    })
}

/// Seeded adversarial noise that must not change any transaction's result:
/// one transfer on a token outside every transaction's scope, a guarded call
/// on a locked in-scope contract per transaction, and a lock attempt by an
/// untrusted account per transaction.
fn interference(world: &World, schedule: &[Scheduled], seed: u64) -> Vec<Scheduled> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a7e_f00d_cafe);
    let txns: Vec<&CrossChainTransaction> = schedule
        .iter()
        .filter_map(|s| match &s.action {
            Action::Propose { txn, .. } => Some(txn),
            _ => None,
        })
        .collect();
    let mut in_scope = BTreeSet::new();
    for t in &txns {
        for c in t.chains() {
            in_scope.extend(scope_union(t, &c, &world.chains));
        }
    }
    let mut out = Vec::new();
    let mallory = |c: &ChainId| Address::new(c, "mallory");
    let token_accounts = |a: &Address| -> Option<(String, String)> {
        let c = world.chains.get(&a.chain)?.contract(a)?;
        if c.kind != "token" {
            return None;
        }
        let mut accts = c.state.vars.keys().filter_map(|k| k.strip_prefix("bal.").map(str::to_string));
        let first = accts.next()?;
        let second = accts.next().unwrap_or_else(|| first.clone());
        Some((first, second))
    };
    let bystanders: Vec<&Address> = world
        .chains
        .values()
        .flat_map(|c| c.contracts.keys())
        .filter(|a| !in_scope.contains(*a) && token_accounts(a).is_some())
        .collect();
    if let Some(&b) = bystanders.choose(&mut rng) {
        let (from, to) = token_accounts(b).expect("token");
        let call = Call::new(
            &mallory(&b.chain),
            b,
            "transfer",
            vec![Value::text(from), Value::text(to), Value::Int(1)],
        );
        out.push(Scheduled {
            when: When::At(rng.gen_range(0..=6)),
            action: Action::Call(call),
            adversarial: true,
        });
    }
    for t in &txns {
        let mut scope = BTreeSet::new();
        for c in t.chains() {
            scope.extend(scope_union(t, &c, &world.chains));
        }
        let scope: Vec<Address> = scope.into_iter().collect();
        let Some(target) = scope.choose(&mut rng).cloned() else {
            continue;
        };
        let call = match token_accounts(&target) {
            Some((from, to)) => Call::new(
                &mallory(&target.chain),
                &target,
                "transfer",
                vec![Value::text(from), Value::text(to), Value::Int(1)],
            ),
            None => Call::new(&mallory(&target.chain), &target, "noop", vec![]),
        };
        out.push(Scheduled {
            when: When::WhenLocked {
                target: target.clone(),
                after: rng.gen_range(0..=3),
            },
            action: Action::Call(call),
            adversarial: true,
        });
        let victim = scope.choose(&mut rng).cloned().expect("non-empty");
        out.push(Scheduled {
            when: When::At(rng.gen_range(0..=6)),
            action: Action::Lock {
                caller: mallory(&victim.chain),
                target: victim,
            },
            adversarial: true,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_scenarios_load() {
        for (name, _) in BUNDLED {
            let s = Scenario::bundled(name).unwrap();
            assert_eq!(&s.name, name);
        }
    }

    #[test]
    fn swap_has_two_chains_two_bridges_one_two_action_tx() {
        let s = Scenario::bundled("swap").unwrap().summary();
        assert_eq!(s.chains, 2);
        assert_eq!(s.bridges, 2);
        assert_eq!(s.transactions, vec![("T0".to_string(), 2)]);
    }

    #[test]
    fn three_exchange_has_three_chains() {
        let s = Scenario::bundled("three-exchange").unwrap().summary();
        assert_eq!(s.chains, 3);
        assert_eq!(s.transactions.len(), 1);
    }

    #[test]
    fn unknown_chain_reference_is_named() {
        let text = r#"
[[chain]]
id = "a"
[[chain.contract]]
name = "tok"
kind = "token"
balances = { x = 1 }

[[tx]]
id = "T"
proposer = "a"
[[tx.action]]
id = 0
target = "nowhere/tok"
method = "noop"
"#;
        let e = Scenario::parse(text, "t.toml").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("tx[0].action[0].target") && msg.contains("nowhere"), "{msg}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = Scenario::parse("seed = 1\n[[chain]\n", "bad.toml").unwrap_err();
        match e {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(Scenario::parse("sede = 1\n", "x").is_err());
    }

    #[test]
    fn injections_need_an_adversarial_bridge() {
        let text = r#"
[[chain]]
id = "a"
[[chain]]
id = "b"
[[bridge]]
between = ["a", "b"]
[[adversary]]
kind = "drop"
bridge = "a->b"
msg = 0
"#;
        let msg = Scenario::parse(text, "x").unwrap_err().to_string();
        assert!(msg.contains("honest"), "{msg}");
    }

    #[test]
    fn interference_adds_seeded_adversary_events() {
        let s = Scenario::bundled("swap").unwrap();
        let plain = s.build(&RunOptions::seeded(3)).unwrap();
        let noisy = s
            .build(&RunOptions {
                seed: Some(3),
                interference: true,
                ..RunOptions::default()
            })
            .unwrap();
        assert_eq!(noisy.schedule.len(), plain.schedule.len() + 3);
        assert!(noisy.schedule[plain.schedule.len()..].iter().all(|s| s.adversarial));
    }
}
