//! Per-node credentials: an HMAC-SHA-256 tag over the node id and issue
//! time, keyed by the instance secret.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use crate::transport::Envelope;

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, PartialEq, Eq)]
pub struct Credential {
    pub node_id: String,
    pub issued_at: u64,
    pub token: [u8; 32],
}

// Never print the tag itself.
impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Credential")
            .field("node_id", &self.node_id)
            .field("issued_at", &self.issued_at)
            .field("token", &"<redacted>")
            .finish()
    }
}

fn mac(secret: &[u8], node_id: &str, issued_at: u64) -> [u8; 32] {
    let mut m = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    m.update(&(node_id.len() as u32).to_be_bytes());
    m.update(node_id.as_bytes());
    m.update(&issued_at.to_be_bytes());
    m.finalize().into_bytes().into()
}

/// A fresh random instance secret, hex encoded.
pub fn generate_secret() -> String {
    let mut key = [0u8; 32];
    rand::fill(&mut key);
    hex::encode(key)
}

pub fn issue_credential(secret: &[u8], node_id: &str, now: u64) -> Credential {
    Credential { node_id: node_id.to_owned(), issued_at: now, token: mac(secret, node_id, now) }
}

impl Credential {
    /// Envelope form: `lp(node_id) issued_at:u64 token:[u8;32]`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = (self.node_id.len() as u32).to_be_bytes().to_vec();
        out.extend_from_slice(self.node_id.as_bytes());
        out.extend_from_slice(&self.issued_at.to_be_bytes());
        out.extend_from_slice(&self.token);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Credential> {
        let n = u32::from_be_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
        let node_id = std::str::from_utf8(bytes.get(4..4 + n)?).ok()?.to_owned();
        let rest = bytes.get(4 + n..)?;
        if rest.len() != 40 {
            return None;
        }
        let issued_at = u64::from_be_bytes(rest[..8].try_into().ok()?);
        Some(Credential { node_id, issued_at, token: rest[8..].try_into().ok()? })
    }

    /// Constant-time check of the tag.
    pub fn verify(&self, secret: &[u8]) -> bool {
        let mut m = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
        m.update(&(self.node_id.len() as u32).to_be_bytes());
        m.update(self.node_id.as_bytes());
        m.update(&self.issued_at.to_be_bytes());
        m.verify_slice(&self.token).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    MissingToken,
    MalformedToken,
    BadMac,
    /// The token is valid but belongs to a node other than the one that
    /// owns the envelope's source tier.
    IdentityMismatch,
    UnknownSource,
}

impl RejectReason {
    pub fn name(self) -> &'static str {
        match self {
            RejectReason::MissingToken => "missing_token",
            RejectReason::MalformedToken => "malformed_token",
            RejectReason::BadMac => "bad_mac",
            RejectReason::IdentityMismatch => "identity_mismatch",
            RejectReason::UnknownSource => "unknown_source",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

/// Who may speak as whom: source id (tier or client) to owning node id.
pub type Directory = BTreeMap<String, String>;

/// Pure acceptance check for an incoming envelope.
pub fn verify_envelope(env: &Envelope, secret: &[u8], directory: &Directory) -> Verdict {
    if env.token.is_empty() {
        return Verdict::Reject(RejectReason::MissingToken);
    }
    let Some(cred) = Credential::decode(&env.token) else {
        return Verdict::Reject(RejectReason::MalformedToken);
    };
    if !cred.verify(secret) {
        return Verdict::Reject(RejectReason::BadMac);
    }
    match directory.get(&env.source) {
        None => Verdict::Reject(RejectReason::UnknownSource),
        Some(owner) if *owner != cred.node_id => Verdict::Reject(RejectReason::IdentityMismatch),
        Some(_) => Verdict::Accept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eduction::{Context, Demand};

    const SECRET: &[u8] = b"instance secret";

    fn env_from(source: &str, token: Vec<u8>) -> Envelope {
        let d = Demand::procedural("f", vec![], Context::new(), "T2");
        Envelope::new(&d, source, token, 0)
    }

    fn directory() -> Directory {
        [("T3".to_owned(), "nodeA".to_owned()), ("T4".to_owned(), "nodeB".to_owned())].into()
    }

    #[test]
    fn valid_token_accepted() {
        let c = issue_credential(SECRET, "nodeA", 17);
        assert!(c.verify(SECRET));
        assert_eq!(Credential::decode(&c.encode()), Some(c.clone()));
        assert_eq!(verify_envelope(&env_from("T3", c.encode()), SECRET, &directory()), Verdict::Accept);
    }

    #[test]
    fn rejections() {
        let a = issue_credential(SECRET, "nodeA", 17);
        let dir = directory();
        let reject = |e: Envelope| match verify_envelope(&e, SECRET, &dir) {
            Verdict::Reject(r) => r,
            Verdict::Accept => panic!("accepted"),
        };
        assert_eq!(reject(env_from("T4", a.encode())), RejectReason::IdentityMismatch);
        let mut flipped = a.encode();
        *flipped.last_mut().unwrap() ^= 1;
        assert_eq!(reject(env_from("T3", flipped)), RejectReason::BadMac);
        assert_eq!(reject(env_from("T3", vec![])), RejectReason::MissingToken);
        assert_eq!(reject(env_from("T3", vec![1, 2, 3])), RejectReason::MalformedToken);
        assert_eq!(reject(env_from("T9", a.encode())), RejectReason::UnknownSource);
        let forged = issue_credential(b"other secret", "nodeA", 17);
        assert_eq!(reject(env_from("T3", forged.encode())), RejectReason::BadMac);
    }

    #[test]
    fn debug_redacts_token() {
        let c = issue_credential(SECRET, "nodeA", 1);
        let shown = format!("{c:?}");
        assert!(!shown.contains(&hex::encode(c.token)));
        assert!(shown.contains("redacted"));
    }
}
