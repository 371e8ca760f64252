//! The append-only global event log.
//!
//! Every component writes here; every checker reads from here. Each event
//! renders to one line of `key=value` fields in a fixed order, so two runs of
//! the same scenario and seed produce byte-identical logs.

use std::fmt;

use crate::adapter::{FutureState, Payload};
use crate::bridge::BridgeId;
use crate::chain::Invocation;
use crate::protocol::TxOutcome;
use crate::types::{render_list, Address, ChainId, TxId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Invoke(Invocation),
    Lock(Invocation),
    Unlock(Invocation),
    Send {
        bridge: BridgeId,
        msg_id: u64,
        sender: Address,
        dest: Address,
        payload: Payload,
    },
    Recv {
        bridge: BridgeId,
        msg_id: u64,
        origin_block: u64,
        sender: Address,
        dest: Address,
        payload: Payload,
    },
    Seal {
        index: u64,
        actions: usize,
        msgs: Vec<u64>,
    },
    Future {
        adapter: Address,
        seq: u64,
        state: FutureState,
    },
    Adversary {
        action: String,
    },
    Outcome {
        tx: TxId,
        outcome: TxOutcome,
        rounds: u32,
    },
    Anomaly {
        at: Address,
        detail: String,
    },
    Halt {
        reason: HaltReason,
        drained: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HaltReason {
    Quiesced,
    MaxTicks,
    Fatal,
}

impl fmt::Display for HaltReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HaltReason::Quiesced => "quiesced",
            HaltReason::MaxTicks => "max_ticks",
            HaltReason::Fatal => "fatal",
        })
    }
}

impl Event {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Event::Invoke(_) => "Invoke",
            Event::Lock(_) => "LockEvt",
            Event::Unlock(_) => "UnlockEvt",
            Event::Send { .. } => "Send",
            Event::Recv { .. } => "Recv",
            Event::Seal { .. } => "Seal",
            Event::Future { .. } => "FutureEvt",
            Event::Adversary { .. } => "AdversaryEvt",
            Event::Outcome { .. } => "OutcomeEvt",
            Event::Anomaly { .. } => "Anomaly",
            Event::Halt { .. } => "Halt",
        }
    }

    /// The invocation record for `Invoke`, `LockEvt` and `UnlockEvt` events.
    pub fn invocation(&self) -> Option<&Invocation> {
        match self {
            Event::Invoke(i) | Event::Lock(i) | Event::Unlock(i) => Some(i),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub tick: u64,
    pub chain: Option<ChainId>,
    pub event: Event,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let chain = self.chain.as_ref().map(|c| c.as_str()).unwrap_or("-");
        write!(
            f,
            "tick={} kind={} chain={}",
            self.tick,
            self.event.kind_name(),
            chain
        )?;
        match &self.event {
            Event::Invoke(i) | Event::Lock(i) | Event::Unlock(i) => write!(f, " {i}"),
            Event::Send {
                bridge,
                msg_id,
                sender,
                dest,
                payload,
            } => write!(
                f,
                " bridge={bridge} msg={msg_id} sender={sender} dest={dest} payload={payload}"
            ),
            Event::Recv {
                bridge,
                msg_id,
                origin_block,
                sender,
                dest,
                payload,
            } => write!(
                f,
                " bridge={bridge} msg={msg_id} k={origin_block} sender={sender} dest={dest} payload={payload}"
            ),
            Event::Seal {
                index,
                actions,
                msgs,
            } => write!(
                f,
                " block={index} actions={actions} msgs={}",
                render_list(msgs)
            ),
            Event::Future {
                adapter,
                seq,
                state,
            } => write!(f, " adapter={adapter} seq={seq} state={state}"),
            Event::Adversary { action } => write!(f, " action={action}"),
            Event::Outcome {
                tx,
                outcome,
                rounds,
            } => write!(f, " tx={tx} outcome={outcome} rounds={rounds}"),
            Event::Anomaly { at, detail } => write!(f, " at={at} detail={detail}"),
            Event::Halt { reason, drained } => write!(f, " reason={reason} drained={drained}"),
        }
    }
}

/// The run's event log plus the current scheduler tick.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub now: u64,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, chain: Option<&ChainId>, event: Event) -> usize {
        self.events.push(TraceEvent {
            tick: self.now,
            chain: chain.cloned(),
            event,
        });
        self.events.len() - 1
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &TraceEvent)> {
        self.events.iter().enumerate()
    }

    /// Canonical text form: one event per line, `\n` terminated.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn halt(&self) -> Option<(HaltReason, bool)> {
        self.events.iter().rev().find_map(|e| match e.event {
            Event::Halt { reason, drained } => Some((reason, drained)),
            _ => None,
        })
    }
}
