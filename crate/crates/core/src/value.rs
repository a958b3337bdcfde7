//! Runtime values shared by the evaluator, the demand store and the
//! procedure table.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A value produced by evaluation or carried by a procedural demand.
///
/// The language itself only produces `Int`, `Float` and `Bool`. `Text` and
/// `Bytes` exist so procedures (pipeline stages in particular) can exchange
/// structured artifacts through the demand store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
    Bytes(Vec<u8>),
}

// Floats compare by bit pattern: "equal" throughout the runtime means
// bit-identical, which is what conflict detection and oracle checks need.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Text(a), Value::Text(b)) => a == b,
            (Value::Bytes(a), Value::Bytes(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Bool(_) => "bool",
            Value::Text(_) => "text",
            Value::Bytes(_) => "bytes",
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Appends the canonical binary encoding (tag byte + big-endian body).
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Value::Int(v) => {
                out.push(0);
                out.extend_from_slice(&v.to_be_bytes());
            }
            Value::Float(v) => {
                out.push(1);
                out.extend_from_slice(&v.to_bits().to_be_bytes());
            }
            Value::Bool(v) => {
                out.push(2);
                out.push(u8::from(*v));
            }
            Value::Text(s) => {
                out.push(3);
                out.extend_from_slice(&(s.len() as u32).to_be_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            Value::Bytes(b) => {
                out.push(4);
                out.extend_from_slice(&(b.len() as u32).to_be_bytes());
                out.extend_from_slice(b);
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    /// Decodes one value from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Option<(Value, usize)> {
        let (&tag, rest) = bytes.split_first()?;
        match tag {
            0 => Some((Value::Int(i64::from_be_bytes(rest.get(..8)?.try_into().ok()?)), 9)),
            1 => Some((
                Value::Float(f64::from_bits(u64::from_be_bytes(rest.get(..8)?.try_into().ok()?))),
                9,
            )),
            2 => match rest.first()? {
                0 => Some((Value::Bool(false), 2)),
                1 => Some((Value::Bool(true), 2)),
                _ => None,
            },
            3 | 4 => {
                let len = u32::from_be_bytes(rest.get(..4)?.try_into().ok()?) as usize;
                let body = rest.get(4..4 + len)?;
                let value = if tag == 3 {
                    Value::Text(String::from_utf8(body.to_vec()).ok()?)
                } else {
                    Value::Bytes(body.to_vec())
                };
                Some((value, 5 + len))
            }
            _ => None,
        }
    }

    pub fn decode(bytes: &[u8]) -> Option<Value> {
        match Value::decode_prefix(bytes)? {
            (v, n) if n == bytes.len() => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Text(s) => write!(f, "{s:?}"),
            Value::Bytes(b) => write!(f, "bytes:{}", b.len()),
        }
    }
}
