//! Adapter contracts: notify, notify-with-acknowledgement and remote call on
//! top of a pair of opposite bridges.
//!
//! An adapter `p` on chain C talks to its peer `q` on chain D. Requests that
//! expect an answer get a fresh sequence number and a future; the peer's
//! `Ack` carrying the same sequence number resolves it.

use std::collections::BTreeMap;
use std::fmt;

use crate::bridge::{BridgeId, BridgeMessage};
use crate::chain::{Call, CallResult, Invocation, MethodFailure};
use crate::sim::{SimError, World};
use crate::trace::Event;
use crate::types::{render_list, Address, Value};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Payload {
    /// `seq` is `None` for a plain notify, which expects no acknowledgement.
    Anotify {
        origin: Address,
        data: Vec<u8>,
        seq: Option<u64>,
        final_dest: Address,
    },
    /// `origin` is the requesting contract, relayed as the caller at the
    /// destination.
    Rcall {
        origin: Address,
        target: Address,
        method: String,
        params: Vec<Value>,
        seq: u64,
    },
    Ack {
        seq: u64,
        result: Option<Value>,
        ok: bool,
    },
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Anotify {
                origin,
                data,
                seq,
                final_dest,
            } => {
                let seq = seq.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
                write!(
                    f,
                    "anotify({origin};{};{seq};{final_dest})",
                    Value::Bytes(data.clone())
                )
            }
            Payload::Rcall {
                origin,
                target,
                method,
                params,
                seq,
            } => write!(
                f,
                "rcall({origin};{target}.{method};{};{seq})",
                render_list(params)
            ),
            Payload::Ack { seq, result, ok } => {
                let r = result.as_ref().map(|v| v.to_string()).unwrap_or_else(|| "-".into());
                write!(f, "ack({seq};{r};{ok})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FutureState {
    Pending,
    Delivered,
    Completed { result: Value, ok: bool },
}

impl FutureState {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, FutureState::Pending)
    }
}

impl fmt::Display for FutureState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FutureState::Pending => f.write_str("Pending"),
            FutureState::Delivered => f.write_str("Delivered"),
            FutureState::Completed { result, ok } => write!(f, "Completed({result};{ok})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FutureKind {
    Notify,
    Call,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Future {
    pub seq: u64,
    pub kind: FutureKind,
    pub state: FutureState,
}

/// Handle returned to the requesting contract.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FutureRef {
    pub adapter: Address,
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AdapterError {
    #[error("destination {dest} is not on the peer chain of adapter {adapter}")]
    WrongChain { adapter: Address, dest: Address },
    #[error("future {seq} was not issued by adapter {adapter}")]
    UnknownFuture { adapter: Address, seq: u64 },
    #[error("no adapter at {0}")]
    UnknownAdapter(Address),
    #[error("remote call target {target} differs from destination {dest}")]
    TargetMismatch { target: Address, dest: Address },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adapter {
    pub addr: Address,
    pub peer: Address,
    pub out_bridge: BridgeId,
    pub in_bridge: BridgeId,
    next_seq: u64,
    futures: BTreeMap<u64, Future>,
}

impl Adapter {
    pub fn new(addr: Address, peer: Address) -> Self {
        let out_bridge = BridgeId::new(&addr.chain, &peer.chain);
        let in_bridge = out_bridge.reverse();
        Adapter {
            addr,
            peer,
            out_bridge,
            in_bridge,
            next_seq: 1,
            futures: BTreeMap::new(),
        }
    }

    fn issue(&mut self, kind: FutureKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.futures.insert(
            seq,
            Future {
                seq,
                kind,
                state: FutureState::Pending,
            },
        );
        seq
    }

    /// Resolves the future `seq`. Unknown sequence numbers and acks for
    /// already-terminal futures are refused; terminal states never change.
    pub fn resolve(&mut self, seq: u64, result: Option<Value>, ok: bool) -> Result<FutureState, String> {
        let f = self
            .futures
            .get_mut(&seq)
            .ok_or_else(|| format!("unknown-seq:{seq}"))?;
        if f.state.is_terminal() {
            return Err(format!("duplicate-ack:{seq}"));
        }
        f.state = match f.kind {
            FutureKind::Notify => FutureState::Delivered,
            FutureKind::Call => FutureState::Completed {
                result: result.unwrap_or(Value::Bool(ok)),
                ok,
            },
        };
        Ok(f.state.clone())
    }

    pub fn query(&self, seq: u64) -> Result<&FutureState, AdapterError> {
        self.futures
            .get(&seq)
            .map(|f| &f.state)
            .ok_or_else(|| AdapterError::UnknownFuture {
                adapter: self.addr.clone(),
                seq,
            })
    }

    pub fn futures(&self) -> impl Iterator<Item = &Future> {
        self.futures.values()
    }

    pub fn all_terminal(&self) -> bool {
        self.futures.values().all(|f| f.state.is_terminal())
    }

    fn check_dest(&self, dest: &Address) -> Result<(), AdapterError> {
        if dest.chain != self.peer.chain {
            return Err(AdapterError::WrongChain {
                adapter: self.addr.clone(),
                dest: dest.clone(),
            });
        }
        Ok(())
    }
}

/// Encodes a method failure as the result value carried in a negative ack.
pub fn failure_value(f: &MethodFailure) -> Value {
    Value::text(f.to_string())
}

/// Decodes a completed future back into a call result.
pub fn completion_result(state: &FutureState) -> Option<CallResult> {
    match state {
        FutureState::Completed { result, ok: true } => Some(Ok(result.clone())),
        FutureState::Completed { result, ok: false } => Some(Err(result
            .as_str()
            .and_then(MethodFailure::parse)
            .unwrap_or(MethodFailure::Reverted))),
        _ => None,
    }
}

impl World {
    fn adapter_mut(&mut self, addr: &Address) -> Result<&mut Adapter, AdapterError> {
        self.adapters
            .get_mut(addr)
            .ok_or_else(|| AdapterError::UnknownAdapter(addr.clone()))
    }

    fn record_adapter_call(&mut self, adapter: &Address, caller: &Address, method: &str, params: Vec<Value>, outcome: CallResult) {
        let call = Call::new(caller, adapter, method, params);
        let inv = Invocation::from_call(&call, outcome, vec![], None);
        let chain = self.chains.get_mut(&adapter.chain).expect("adapter chain");
        chain.record(&mut self.trace, Event::Invoke(inv));
    }

    /// Fire-and-forget notification: one bridge message, no future.
    pub fn notify(&mut self, adapter: &Address, caller: &Address, data: &[u8], dest: &Address) -> Result<(), SimError> {
        let a = self.adapter_mut(adapter)?;
        a.check_dest(dest)?;
        let (peer, bridge) = (a.peer.clone(), a.out_bridge.clone());
        self.record_adapter_call(adapter, caller, "notify", vec![Value::Bytes(data.to_vec()), dest.to_value()], Ok(Value::Bool(true)));
        let payload = Payload::Anotify {
            origin: caller.clone(),
            data: data.to_vec(),
            seq: None,
            final_dest: dest.clone(),
        };
        self.bridge_send(&bridge, adapter, payload, &peer)
    }

    /// Notification with acknowledgement; the future turns `Delivered` once
    /// the peer's ack comes back.
    pub fn anotify(&mut self, adapter: &Address, caller: &Address, data: &[u8], dest: &Address) -> Result<FutureRef, SimError> {
        let a = self.adapter_mut(adapter)?;
        a.check_dest(dest)?;
        let seq = a.issue(FutureKind::Notify);
        let (peer, bridge) = (a.peer.clone(), a.out_bridge.clone());
        self.record_adapter_call(adapter, caller, "anotify", vec![Value::Bytes(data.to_vec()), dest.to_value()], Ok(Value::Int(seq as i64)));
        self.trace_future(adapter, seq, FutureState::Pending);
        let payload = Payload::Anotify {
            origin: caller.clone(),
            data: data.to_vec(),
            seq: Some(seq),
            final_dest: dest.clone(),
        };
        self.bridge_send(&bridge, adapter, payload, &peer)?;
        Ok(FutureRef {
            adapter: adapter.clone(),
            seq,
        })
    }

    /// Remote call of `target.method(params)`; the future completes with the
    /// remote result and success flag.
    pub fn rcall(
        &mut self,
        adapter: &Address,
        caller: &Address,
        target: (&Address, &str),
        params: Vec<Value>,
        dest: &Address,
    ) -> Result<FutureRef, SimError> {
        if target.0 != dest {
            return Err(AdapterError::TargetMismatch {
                target: target.0.clone(),
                dest: dest.clone(),
            }
            .into());
        }
        let a = self.adapter_mut(adapter)?;
        a.check_dest(dest)?;
        let seq = a.issue(FutureKind::Call);
        let (peer, bridge) = (a.peer.clone(), a.out_bridge.clone());
        self.record_adapter_call(
            adapter,
            caller,
            "rcall",
            vec![dest.to_value(), Value::text(target.1)],
            Ok(Value::Int(seq as i64)),
        );
        self.trace_future(adapter, seq, FutureState::Pending);
        let payload = Payload::Rcall {
            origin: caller.clone(),
            target: dest.clone(),
            method: target.1.to_string(),
            params,
            seq,
        };
        self.bridge_send(&bridge, adapter, payload, &peer)?;
        Ok(FutureRef {
            adapter: adapter.clone(),
            seq,
        })
    }

    pub fn query(&self, f: &FutureRef) -> Result<FutureState, AdapterError> {
        self.adapters
            .get(&f.adapter)
            .ok_or_else(|| AdapterError::UnknownAdapter(f.adapter.clone()))?
            .query(f.seq)
            .cloned()
    }

    fn trace_future(&mut self, adapter: &Address, seq: u64, state: FutureState) {
        self.trace.push(
            Some(&adapter.chain),
            Event::Future {
                adapter: adapter.clone(),
                seq,
                state,
            },
        );
    }

    /// Bridge delivery into the destination adapter. Every outcome is
    /// recorded; nothing is surfaced to the bridge.
    pub fn adapter_recv(&mut self, m: &BridgeMessage) -> Result<(), SimError> {
        let here = m.dest.clone();
        let Some(adapter) = self.adapters.get(&here) else {
            self.trace.push(
                Some(&here.chain),
                Event::Anomaly {
                    at: here.clone(),
                    detail: format!("no-adapter:msg={}", m.msg_id),
                },
            );
            return Ok(());
        };
        let back = adapter.out_bridge.clone();
        let relayer = Address::new(&here.chain, "relayer");
        self.record_adapter_call(
            &here,
            &relayer,
            "recv",
            vec![Value::Int(m.msg_id as i64), Value::Int(m.origin_block as i64)],
            Ok(Value::Bool(true)),
        );
        match &m.payload {
            Payload::Anotify {
                origin,
                data,
                seq,
                final_dest,
            } => {
                let call = Call::new(
                    &here,
                    final_dest,
                    "notification",
                    vec![
                        origin.to_value(),
                        Value::text(origin.chain.as_str()),
                        Value::Bytes(data.clone()),
                    ],
                );
                let r = self.dispatch(&call, None)?;
                if let Some(s) = seq {
                    let ack = Payload::Ack {
                        seq: *s,
                        result: None,
                        ok: r.is_ok(),
                    };
                    self.bridge_send(&back, &here, ack, &m.sender)?;
                }
            }
            Payload::Rcall {
                origin,
                target,
                method,
                params,
                seq,
            } => {
                let call = Call::new(origin, target, method, params.clone());
                let r = self.dispatch(&call, None)?;
                let ack = match r {
                    Ok(v) => Payload::Ack {
                        seq: *seq,
                        result: Some(v),
                        ok: true,
                    },
                    Err(e) => Payload::Ack {
                        seq: *seq,
                        result: Some(failure_value(&e)),
                        ok: false,
                    },
                };
                self.bridge_send(&back, &here, ack, &m.sender)?;
            }
            Payload::Ack { seq, result, ok } => {
                let resolved = self
                    .adapters
                    .get_mut(&here)
                    .expect("checked")
                    .resolve(*seq, result.clone(), *ok);
                match resolved {
                    Ok(state) => self.trace_future(&here, *seq, state),
                    Err(detail) => {
                        self.trace.push(
                            Some(&here.chain),
                            Event::Anomaly {
                                at: here.clone(),
                                detail: format!("{detail}:msg={}", m.msg_id),
                            },
                        );
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ChainId;

    fn adapter() -> Adapter {
        let (c, d) = (ChainId::new("c"), ChainId::new("d"));
        Adapter::new(Address::new(&c, "adapter.d"), Address::new(&d, "adapter.c"))
    }

    #[test]
    fn sequence_numbers_increase_and_futures_start_pending() {
        let mut a = adapter();
        let s1 = a.issue(FutureKind::Notify);
        let s2 = a.issue(FutureKind::Call);
        assert!(s2 > s1);
        assert_eq!(a.query(s1), Ok(&FutureState::Pending));
        assert_eq!(a.query(s2), Ok(&FutureState::Pending));
    }

    #[test]
    fn resolution_matches_kind_and_is_final() {
        let mut a = adapter();
        let n = a.issue(FutureKind::Notify);
        let c = a.issue(FutureKind::Call);
        assert_eq!(a.resolve(c, Some(Value::Int(3)), true), Ok(FutureState::Completed { result: Value::Int(3), ok: true }));
        assert_eq!(a.resolve(n, None, true), Ok(FutureState::Delivered));
        assert!(a.resolve(n, None, true).is_err());
        assert_eq!(a.query(n), Ok(&FutureState::Delivered));
        assert!(a.resolve(42, None, true).is_err());
        assert!(a.all_terminal());
    }

    #[test]
    fn foreign_future_is_unknown() {
        let a = adapter();
        assert!(matches!(a.query(9), Err(AdapterError::UnknownFuture { .. })));
    }

    #[test]
    fn completion_decodes_failures() {
        let st = FutureState::Completed {
            result: failure_value(&MethodFailure::LockedByOther),
            ok: false,
        };
        assert_eq!(completion_result(&st), Some(Err(MethodFailure::LockedByOther)));
        assert_eq!(completion_result(&FutureState::Pending), None);
    }
}
