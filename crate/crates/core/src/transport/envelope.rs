//! The envelope and its wire form.
//!
//! ```text
//! frame    = len:u32 body                      (len <= 16 MiB)
//! body     = kind:u8 signature:[u8;16] lp(source) lp(destination) lp(token) lp(payload) sent_at:u64
//! ```
//!
//! All integers are big-endian; `lp` is a u32 length prefix.

use crate::eduction::{Demand, DemandKind, DemandSignature};

use super::TransportError;

pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub signature: DemandSignature,
    pub kind: DemandKind,
    pub source: String,
    pub destination: String,
    pub token: Vec<u8>,
    /// Wire form of the demand.
    pub payload: Vec<u8>,
    pub sent_at: u64,
}

fn put_lp(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

impl Envelope {
    pub fn new(demand: &Demand, source: &str, token: Vec<u8>, sent_at: u64) -> Envelope {
        Envelope {
            signature: demand.signature,
            kind: demand.kind(),
            source: source.to_owned(),
            destination: demand.destination_tier.clone(),
            token,
            payload: demand.encode(),
            sent_at,
        }
    }

    pub fn body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.payload.len() + self.token.len());
        out.push(self.kind.byte());
        out.extend_from_slice(&self.signature.0);
        put_lp(&mut out, self.source.as_bytes());
        put_lp(&mut out, self.destination.as_bytes());
        put_lp(&mut out, &self.token);
        put_lp(&mut out, &self.payload);
        out.extend_from_slice(&self.sent_at.to_be_bytes());
        out
    }

    pub fn encode_frame(&self) -> Result<Vec<u8>, TransportError> {
        let body = self.body();
        if body.len() > MAX_FRAME {
            return Err(TransportError::FrameTooLarge(body.len()));
        }
        let mut out = (body.len() as u32).to_be_bytes().to_vec();
        out.extend_from_slice(&body);
        Ok(out)
    }

    /// Parses a body and checks that the payload is a demand of the stated
    /// kind whose signature matches the header.
    pub fn decode_body(body: &[u8]) -> Result<Envelope, TransportError> {
        let bad = |m: &str| TransportError::Malformed(m.to_owned());
        let mut r = Cursor { bytes: body, pos: 0 };
        let kind = DemandKind::from_byte(r.take(1)?[0]).ok_or_else(|| bad("unknown kind byte"))?;
        let signature = DemandSignature(r.take(16)?.try_into().unwrap());
        let source = String::from_utf8(r.lp()?.to_vec()).map_err(|_| bad("source not utf-8"))?;
        let destination = String::from_utf8(r.lp()?.to_vec()).map_err(|_| bad("destination not utf-8"))?;
        let token = r.lp()?.to_vec();
        let payload = r.lp()?.to_vec();
        let sent_at = u64::from_be_bytes(r.take(8)?.try_into().unwrap());
        if r.pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        let env = Envelope { signature, kind, source, destination, token, payload, sent_at };
        env.demand()?;
        Ok(env)
    }

    /// Decodes one complete frame (length prefix included).
    pub fn decode_frame(frame: &[u8]) -> Result<Envelope, TransportError> {
        if frame.len() < 4 {
            return Err(TransportError::Malformed("frame shorter than its length prefix".into()));
        }
        let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
        if len > MAX_FRAME {
            return Err(TransportError::FrameTooLarge(len));
        }
        if frame.len() != len + 4 {
            return Err(TransportError::Malformed("frame length mismatch".into()));
        }
        Envelope::decode_body(&frame[4..])
    }

    pub fn demand(&self) -> Result<Demand, TransportError> {
        let d = Demand::decode(&self.payload, &self.destination).map_err(TransportError::Malformed)?;
        if d.signature != self.signature || d.kind() != self.kind {
            return Err(TransportError::Malformed("payload does not match header".into()));
        }
        Ok(d)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TransportError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TransportError::Malformed("truncated envelope".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn lp(&mut self) -> Result<&'a [u8], TransportError> {
        let n = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize;
        self.take(n)
    }
}
