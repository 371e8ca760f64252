//! Simulated unidirectional bridges.
//!
//! A message becomes visible to the bridge only once the source block holding
//! its send record is sealed; the sealing block's index is the message's
//! origin block `k`. Honest bridges deliver every sealed message exactly once
//! after a seeded delay. Adversarial bridges additionally accept forged,
//! dropped and corrupted messages.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::Payload;
use crate::types::{Address, ChainId};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BridgeId {
    pub src: ChainId,
    pub dst: ChainId,
    pub tag: u8,
}

impl BridgeId {
    pub fn new(src: &ChainId, dst: &ChainId) -> Self {
        BridgeId {
            src: src.clone(),
            dst: dst.clone(),
            tag: 0,
        }
    }

    pub fn reverse(&self) -> BridgeId {
        BridgeId {
            src: self.dst.clone(),
            dst: self.src.clone(),
            tag: self.tag,
        }
    }
}

impl fmt::Display for BridgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}#{}", self.src, self.dst, self.tag)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BridgeMode {
    Honest,
    Adversarial,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BridgePolicy {
    pub mode: BridgeMode,
    /// Delays are uniform in `[1, max_delay]` ticks.
    pub max_delay: u64,
    pub allow_reorder: bool,
}

impl Default for BridgePolicy {
    fn default() -> Self {
        BridgePolicy {
            mode: BridgeMode::Honest,
            max_delay: 3,
            allow_reorder: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BridgeMessage {
    pub msg_id: u64,
    pub payload: Payload,
    pub sender: Address,
    pub dest: Address,
    pub origin_block: u64,
    pub due: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Injection {
    Forge {
        payload: Payload,
        sender: Address,
        dest: Address,
        fake_k: u64,
    },
    Drop {
        msg_id: u64,
    },
    Corrupt {
        msg_id: u64,
        payload: Payload,
    },
}

impl fmt::Display for Injection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Injection::Forge {
                payload,
                dest,
                fake_k,
                ..
            } => write!(f, "forge(dest={dest};k={fake_k};payload={payload})"),
            Injection::Drop { msg_id } => write!(f, "drop(msg={msg_id})"),
            Injection::Corrupt { msg_id, payload } => {
                write!(f, "corrupt(msg={msg_id};payload={payload})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum BridgeError {
    #[error("bridge {bridge}: {addr} is not on the expected chain")]
    DestChainMismatch { bridge: BridgeId, addr: Address },
    #[error("bridge {0} is honest and cannot be tampered with")]
    NotAdversarialBridge(BridgeId),
    #[error("no bridge {0}")]
    UnknownBridge(BridgeId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Staged {
    msg_id: u64,
    payload: Payload,
    sender: Address,
    dest: Address,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tamper {
    Drop,
    Corrupt(Payload),
}

#[derive(Clone, Debug)]
pub struct Bridge {
    pub id: BridgeId,
    pub policy: BridgePolicy,
    staged: Vec<Staged>,
    queue: Vec<BridgeMessage>,
    /// Drop/corrupt injections waiting for their message to show up.
    armed: BTreeMap<u64, Tamper>,
    last_due: u64,
}

impl Bridge {
    pub fn new(id: BridgeId, policy: BridgePolicy) -> Self {
        Bridge {
            id,
            policy,
            staged: Vec::new(),
            queue: Vec::new(),
            armed: BTreeMap::new(),
            last_due: 0,
        }
    }

    /// Stages a message until the source chain seals its next block.
    pub fn send(&mut self, msg_id: u64, sender: &Address, payload: Payload, dest: &Address) -> Result<(), BridgeError> {
        if sender.chain != self.id.src {
            return Err(BridgeError::DestChainMismatch {
                bridge: self.id.clone(),
                addr: sender.clone(),
            });
        }
        if dest.chain != self.id.dst {
            return Err(BridgeError::DestChainMismatch {
                bridge: self.id.clone(),
                addr: dest.clone(),
            });
        }
        self.staged.push(Staged {
            msg_id,
            payload,
            sender: sender.clone(),
            dest: dest.clone(),
        });
        Ok(())
    }

    /// Binds staged messages to sealed source block `k` and schedules them.
    /// Returns descriptions of any tampering applied on the way in.
    pub fn on_seal(&mut self, k: u64, now: u64, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut notes = Vec::new();
        for s in std::mem::take(&mut self.staged) {
            let delay = rng.gen_range(1..=self.policy.max_delay.max(1));
            let due = if self.policy.allow_reorder {
                now + delay
            } else {
                (now + delay).max(self.last_due)
            };
            self.last_due = self.last_due.max(due);
            let mut msg = BridgeMessage {
                msg_id: s.msg_id,
                payload: s.payload,
                sender: s.sender,
                dest: s.dest,
                origin_block: k,
                due,
            };
            match self.armed.remove(&msg.msg_id) {
                Some(Tamper::Drop) => {
                    notes.push(format!("dropped(msg={})", msg.msg_id));
                    continue;
                }
                Some(Tamper::Corrupt(p)) => {
                    notes.push(format!("corrupted(msg={})", msg.msg_id));
                    msg.payload = p;
                }
                None => {}
            }
            self.queue.push(msg);
        }
        notes
    }

    /// Removes and returns every message due at or before `now`, FIFO or in a
    /// seeded permutation when reordering is allowed.
    pub fn deliver_due(&mut self, now: u64, rng: &mut ChaCha8Rng) -> Vec<BridgeMessage> {
        let (mut due, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.queue)
            .into_iter()
            .partition(|m| m.due <= now);
        self.queue = rest;
        if self.policy.allow_reorder && due.len() > 1 {
            due.shuffle(rng);
        }
        due
    }

    /// Applies an adversarial injection. Forged messages are due immediately;
    /// drop and corrupt act on a queued message or wait for it to be sealed.
    pub fn inject(&mut self, action: Injection, forged_id: u64, now: u64) -> Result<String, BridgeError> {
        if self.policy.mode != BridgeMode::Adversarial {
            return Err(BridgeError::NotAdversarialBridge(self.id.clone()));
        }
        let note = action.to_string();
        match action {
            Injection::Forge {
                payload,
                sender,
                dest,
                fake_k,
            } => {
                if dest.chain != self.id.dst {
                    return Err(BridgeError::DestChainMismatch {
                        bridge: self.id.clone(),
                        addr: dest,
                    });
                }
                self.queue.push(BridgeMessage {
                    msg_id: forged_id,
                    payload,
                    sender,
                    dest,
                    origin_block: fake_k,
                    due: now,
                });
                Ok(format!("{note};msg={forged_id}"))
            }
            Injection::Drop { msg_id } => {
                let before = self.queue.len();
                self.queue.retain(|m| m.msg_id != msg_id);
                if self.queue.len() == before {
                    self.armed.insert(msg_id, Tamper::Drop);
                    Ok(format!("{note};armed"))
                } else {
                    Ok(format!("{note};applied"))
                }
            }
            Injection::Corrupt { msg_id, payload } => {
                if let Some(m) = self.queue.iter_mut().find(|m| m.msg_id == msg_id) {
                    m.payload = payload;
                    Ok(format!("{note};applied"))
                } else {
                    self.armed.insert(msg_id, Tamper::Corrupt(payload));
                    Ok(format!("{note};armed"))
                }
            }
        }
    }

    pub fn is_drained(&self) -> bool {
        self.staged.is_empty() && self.queue.is_empty()
    }

    pub fn in_flight(&self) -> usize {
        self.staged.len() + self.queue.len()
    }
}
