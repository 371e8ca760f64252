//! Cross-chain messaging and atomic multi-chain transactions on a
//! deterministic simulator.
//!
//! * [`chain`] – chains, lockable contracts and the block ledger;
//! * [`bridge`] and [`adapter`] – message transport with notify, acknowledged
//!   notify and remote call on top;
//! * [`txn`] – transactions as partially ordered actions and their ideal,
//!   interference-free execution;
//! * [`protocol`] – the two-phase lock / execute / unlock protocol;
//! * [`sim`] and [`scenario`] – the seeded scheduler and its config format;
//! * [`verify`] – checkers and metrics over finished traces.

pub mod adapter;
pub mod bridge;
pub mod chain;
pub mod library;
pub mod protocol;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod txn;
pub mod types;
pub mod verify;

pub use chain::{Call, CallResult, Chain, Chains, MethodFailure};
pub use protocol::{AbortReason, LockOrder, TxOutcome};
pub use sim::{RunOutput, SimError, Simulation, World};
pub use trace::{Event, Trace};
pub use txn::{CrossChainTransaction, IndexedAction};
pub use types::{Address, ChainId, TxId, Value};
pub use scenario::{RunOptions, Scenario, ScenarioError};
