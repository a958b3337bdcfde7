//! Demands, their signatures and the canonical payload encoding.
//!
//! Encoding (all integers big-endian, `lp` = u32 length prefix):
//!
//! ```text
//! kind:u8  lp(geer_id)  lp(node id u64 | procedure name | system body)
//! n:u32 { lp(dimension) tag:i64 }*   m:u32 { lp(value) }*
//! ```
//!
//! Context pairs are sorted by dimension name. For system demands the body
//! starts with the 16-byte signature, which is random rather than derived.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Context;
use crate::lang::{GeerId, NodeId};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DemandKind {
    Intensional,
    Procedural,
    System,
    Resource,
}

impl DemandKind {
    pub fn byte(self) -> u8 {
        match self {
            DemandKind::Intensional => 1,
            DemandKind::Procedural => 2,
            DemandKind::System => 3,
            DemandKind::Resource => 4,
        }
    }

    pub fn from_byte(b: u8) -> Option<DemandKind> {
        match b {
            1 => Some(DemandKind::Intensional),
            2 => Some(DemandKind::Procedural),
            3 => Some(DemandKind::System),
            4 => Some(DemandKind::Resource),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DemandKind::Intensional => "intensional",
            DemandKind::Procedural => "procedural",
            DemandKind::System => "system",
            DemandKind::Resource => "resource",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DemandState {
    Pending,
    InProcess,
    Computed,
}

impl DemandState {
    pub fn name(self) -> &'static str {
        match self {
            DemandState::Pending => "pending",
            DemandState::InProcess => "inProcess",
            DemandState::Computed => "computed",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DemandSignature(pub [u8; 16]);

impl DemandSignature {
    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        DemandSignature(b)
    }

    pub fn digest(bytes: &[u8]) -> Self {
        let d = Sha256::digest(bytes);
        let mut b = [0u8; 16];
        b.copy_from_slice(&d[..16]);
        DemandSignature(b)
    }
}

impl fmt::Display for DemandSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

impl fmt::Debug for DemandSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sig({})", &self.hex()[..8])
    }
}

impl FromStr for DemandSignature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|e| e.to_string())?;
        Ok(DemandSignature(bytes.try_into().map_err(|_| "signature must be 16 bytes".to_owned())?))
    }
}

impl Serialize for DemandSignature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.hex())
    }
}

impl<'de> Deserialize<'de> for DemandSignature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DemandPayload {
    Intensional { node: NodeId, context: Context },
    Procedural { procedure: String, args: Vec<Value>, context: Context },
    /// Opaque protocol record; interpreted by the tier layer.
    System { body: Vec<u8> },
    Resource,
}

impl DemandPayload {
    pub fn kind(&self) -> DemandKind {
        match self {
            DemandPayload::Intensional { .. } => DemandKind::Intensional,
            DemandPayload::Procedural { .. } => DemandKind::Procedural,
            DemandPayload::System { .. } => DemandKind::System,
            DemandPayload::Resource => DemandKind::Resource,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub worker: String,
    pub lease_deadline: u64,
}

/// Result recorded for a computed demand: exactly one value or one error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Value(Value),
    Error { kind: String, detail: String },
}

impl Outcome {
    pub fn error(kind: impl Into<String>, detail: impl Into<String>) -> Outcome {
        Outcome::Error { kind: kind.into(), detail: detail.into() }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Value(v) => write!(f, "{v}"),
            Outcome::Error { kind, detail } => write!(f, "error:{kind}:{}", detail.replace(char::is_whitespace, "_")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demand {
    pub signature: DemandSignature,
    pub state: DemandState,
    pub geer_id: Option<GeerId>,
    pub payload: DemandPayload,
    pub destination_tier: String,
    pub claim: Option<Claim>,
}

fn put_lp(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

/// Canonical encoding of a deterministic demand's identity (the hash input).
pub fn encode_payload(geer_id: Option<&GeerId>, payload: &DemandPayload, system_sig: Option<&DemandSignature>) -> Vec<u8> {
    let mut out = vec![payload.kind().byte()];
    put_lp(&mut out, geer_id.map(|g| g.0.as_bytes()).unwrap_or_default());
    let no_ctx = Context::new();
    let (ctx, args): (&Context, &[Value]) = match payload {
        DemandPayload::Intensional { node, context } => {
            put_lp(&mut out, &u64::from(*node).to_be_bytes());
            (context, &[])
        }
        DemandPayload::Procedural { procedure, args, context } => {
            put_lp(&mut out, procedure.as_bytes());
            (context, args)
        }
        DemandPayload::System { body } => {
            let mut field = system_sig.map(|s| s.0.to_vec()).unwrap_or_else(|| vec![0; 16]);
            field.extend_from_slice(body);
            put_lp(&mut out, &field);
            (&no_ctx, &[])
        }
        DemandPayload::Resource => {
            put_lp(&mut out, &[]);
            (&no_ctx, &[])
        }
    };
    out.extend_from_slice(&(ctx.len() as u32).to_be_bytes());
    for (d, t) in ctx.iter() {
        put_lp(&mut out, d.as_bytes());
        out.extend_from_slice(&t.to_be_bytes());
    }
    out.extend_from_slice(&(args.len() as u32).to_be_bytes());
    for a in args {
        put_lp(&mut out, &a.encode());
    }
    out
}

/// Signature of a demand: SHA-256/128 of the canonical encoding for
/// deterministic kinds, a fresh random id for system demands.
pub fn signature_of(geer_id: Option<&GeerId>, payload: &DemandPayload, rng: &mut impl RngCore) -> DemandSignature {
    match payload {
        DemandPayload::System { .. } => DemandSignature::random(rng),
        _ => DemandSignature::digest(&encode_payload(geer_id, payload, None)),
    }
}

impl Demand {
    fn new(signature: DemandSignature, geer_id: Option<GeerId>, payload: DemandPayload, destination: &str) -> Demand {
        Demand {
            signature,
            state: DemandState::Pending,
            geer_id,
            payload,
            destination_tier: destination.to_owned(),
            claim: None,
        }
    }

    fn deterministic(geer_id: Option<GeerId>, payload: DemandPayload, destination: &str) -> Demand {
        let sig = DemandSignature::digest(&encode_payload(geer_id.as_ref(), &payload, None));
        Demand::new(sig, geer_id, payload, destination)
    }

    pub fn intensional(geer_id: GeerId, node: NodeId, context: Context, destination: &str) -> Demand {
        Demand::deterministic(Some(geer_id), DemandPayload::Intensional { node, context }, destination)
    }

    pub fn procedural(procedure: &str, args: Vec<Value>, context: Context, destination: &str) -> Demand {
        let payload = DemandPayload::Procedural { procedure: procedure.to_owned(), args, context };
        Demand::deterministic(None, payload, destination)
    }

    pub fn resource(geer_id: GeerId, destination: &str) -> Demand {
        Demand::deterministic(Some(geer_id), DemandPayload::Resource, destination)
    }

    pub fn system(body: Vec<u8>, destination: &str, rng: &mut impl RngCore) -> Demand {
        Demand::new(DemandSignature::random(rng), None, DemandPayload::System { body }, destination)
    }

    pub fn kind(&self) -> DemandKind {
        self.payload.kind()
    }

    /// Wire form of the demand (the canonical encoding, carrying the random
    /// signature for system demands).
    pub fn encode(&self) -> Vec<u8> {
        encode_payload(self.geer_id.as_ref(), &self.payload, Some(&self.signature))
    }

    /// Decodes a wire-form demand. Deterministic signatures are recomputed;
    /// system signatures are read from the body.
    pub fn decode(bytes: &[u8], destination: &str) -> Result<Demand, String> {
        let mut r = Reader { bytes, pos: 0 };
        let kind = DemandKind::from_byte(r.u8()?).ok_or("unknown demand kind")?;
        let geer = r.lp()?;
        let geer_id = if geer.is_empty() {
            None
        } else {
            Some(GeerId(String::from_utf8(geer.to_vec()).map_err(|_| "geer id not utf-8")?))
        };
        let field = r.lp()?.to_vec();
        let n = r.u32()?;
        let mut context = Context::new();
        for _ in 0..n {
            let d = std::str::from_utf8(r.lp()?).map_err(|_| "dimension not utf-8")?.to_owned();
            let t = i64::from_be_bytes(r.take(8)?.try_into().unwrap());
            context = context.with_tag(&d, t);
        }
        let m = r.u32()?;
        let mut args = Vec::new();
        for _ in 0..m {
            args.push(Value::decode(r.lp()?).ok_or("bad argument value")?);
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after demand".into());
        }
        if kind == DemandKind::Intensional && !args.is_empty() {
            return Err("arguments on non-procedural demand".into());
        }
        let payload = match kind {
            DemandKind::Intensional => {
                let node = u64::from_be_bytes(field.as_slice().try_into().map_err(|_| "bad node id")?);
                DemandPayload::Intensional { node: NodeId::try_from(node).map_err(|_| "node id range")?, context }
            }
            DemandKind::Procedural => DemandPayload::Procedural {
                procedure: String::from_utf8(field).map_err(|_| "procedure name not utf-8")?,
                args,
                context,
            },
            DemandKind::System => {
                if field.len() < 16 || n != 0 || m != 0 {
                    return Err("malformed system demand".into());
                }
                let sig = DemandSignature(field[..16].try_into().unwrap());
                let payload = DemandPayload::System { body: field[16..].to_vec() };
                return Ok(Demand::new(sig, geer_id, payload, destination));
            }
            DemandKind::Resource => {
                if !field.is_empty() || n != 0 || m != 0 || geer_id.is_none() {
                    return Err("malformed resource demand".into());
                }
                DemandPayload::Resource
            }
        };
        Ok(Demand::deterministic(geer_id, payload, destination))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated demand")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn lp(&mut self) -> Result<&'a [u8], String> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}
