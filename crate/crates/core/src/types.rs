//! Identifiers and the value domain shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Identifier of one simulated chain. Ordered lexicographically; that order is
/// the canonical lock order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChainId(String);

impl ChainId {
    pub fn new(id: impl Into<String>) -> Self {
        ChainId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A contract (or account) location: `chain/local`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address {
    pub chain: ChainId,
    pub local: String,
}

impl Address {
    pub fn new(chain: &ChainId, local: impl Into<String>) -> Self {
        Address {
            chain: chain.clone(),
            local: local.into(),
        }
    }

    /// Encodes the address as an opaque byte value for use in method params.
    pub fn to_value(&self) -> Value {
        Value::Bytes(self.to_string().into_bytes())
    }

    pub fn from_value(v: &Value) -> Option<Address> {
        v.as_str().and_then(|s| s.parse().ok())
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.chain, self.local)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed address `{0}` (expected chain/name)")]
pub struct AddressParseError(pub String);

impl FromStr for Address {
    type Err = AddressParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((c, l)) if !c.is_empty() && !l.is_empty() && !l.contains('/') => Ok(Address {
                chain: ChainId::new(c),
                local: l.to_string(),
            }),
            _ => Err(AddressParseError(s.to_string())),
        }
    }
}

/// Identifier of a cross-chain transaction.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(pub String);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Contract-visible values: integers, booleans and opaque bytes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Bytes(Vec<u8>),
}

impl Value {
    pub fn text(s: impl AsRef<str>) -> Value {
        Value::Bytes(s.as_ref().as_bytes().to_vec())
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        self.as_bytes().and_then(|b| std::str::from_utf8(b).ok())
    }
}

fn is_plain(b: &[u8]) -> bool {
    !b.is_empty()
        && b
            .iter()
            .all(|c| c.is_ascii_alphanumeric() || b"_.-/:@".contains(c))
}

/// Canonical, whitespace-free rendering used in trace lines.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "i:{i}"),
            Value::Bool(b) => write!(f, "b:{b}"),
            Value::Bytes(b) if is_plain(b) => {
                write!(f, "s:{}", std::str::from_utf8(b).expect("ascii"))
            }
            Value::Bytes(b) => write!(f, "x:{}", hex::encode(b)),
        }
    }
}

pub(crate) fn render_list<T: fmt::Display>(items: &[T]) -> String {
    let inner: Vec<String> = items.iter().map(|v| v.to_string()).collect();
    format!("[{}]", inner.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_round_trip() {
        let a: Address = "fantom/tokenA".parse().unwrap();
        assert_eq!(a.chain, ChainId::new("fantom"));
        assert_eq!(a.local, "tokenA");
        assert_eq!(Address::from_value(&a.to_value()), Some(a));
        assert!("noslash".parse::<Address>().is_err());
        assert!("a/b/c".parse::<Address>().is_err());
    }

    #[test]
    fn value_rendering_has_no_whitespace() {
        assert_eq!(Value::Int(-3).to_string(), "i:-3");
        assert_eq!(Value::text("alice").to_string(), "s:alice");
        assert_eq!(Value::text("a b").to_string(), "x:612062");
        assert_eq!(Value::Bytes(vec![]).to_string(), "x:");
    }
}
