//! Persistent images: `EDIMG1`, one mode byte, the payload, and a SHA-256
//! trailer over everything before it.

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::RecoveryError;

pub const IMAGE_MAGIC: &[u8; 6] = b"EDIMG1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpMode {
    Binary,
    GzipBinary,
}

impl DumpMode {
    fn byte(self) -> u8 {
        match self {
            DumpMode::Binary => 0,
            DumpMode::GzipBinary => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersistentImage {
    pub mode: DumpMode,
    /// The stored payload (compressed in gzip mode).
    pub bytes: Vec<u8>,
    pub hash: [u8; 32],
}

impl PersistentImage {
    fn digest(mode: DumpMode, payload: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(IMAGE_MAGIC);
        h.update([mode.byte()]);
        h.update(payload);
        h.finalize().into()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = IMAGE_MAGIC.to_vec();
        out.push(self.mode.byte());
        out.extend_from_slice(&self.bytes);
        out.extend_from_slice(&self.hash);
        out
    }

    pub fn from_bytes(raw: &[u8]) -> Result<PersistentImage, RecoveryError> {
        let rest = raw
            .strip_prefix(IMAGE_MAGIC.as_slice())
            .ok_or_else(|| RecoveryError::Format("missing EDIMG1 magic".into()))?;
        if rest.len() < 33 {
            return Err(RecoveryError::Format("image truncated".into()));
        }
        let mode = match rest[0] {
            0 => DumpMode::Binary,
            1 => DumpMode::GzipBinary,
            b => return Err(RecoveryError::Format(format!("unknown dump mode {b}"))),
        };
        let (payload, hash) = rest[1..].split_at(rest.len() - 33);
        Ok(PersistentImage { mode, bytes: payload.to_vec(), hash: hash.try_into().unwrap() })
    }

    pub fn verify(&self) -> Result<(), RecoveryError> {
        if Self::digest(self.mode, &self.bytes) == self.hash {
            Ok(())
        } else {
            Err(RecoveryError::IntegrityFailure)
        }
    }

    /// The uncompressed binary encoding.
    pub fn binary_payload(&self) -> Result<Vec<u8>, RecoveryError> {
        self.verify()?;
        match self.mode {
            DumpMode::Binary => Ok(self.bytes.clone()),
            DumpMode::GzipBinary => {
                let mut out = Vec::new();
                GzDecoder::new(self.bytes.as_slice())
                    .read_to_end(&mut out)
                    .map_err(|e| RecoveryError::Format(format!("gzip: {e}")))?;
                Ok(out)
            }
        }
    }
}

pub fn dump_state<T: Serialize>(state: &T, mode: DumpMode) -> Result<PersistentImage, RecoveryError> {
    let binary = bincode::serialize(state).map_err(|e| RecoveryError::Format(e.to_string()))?;
    let bytes = match mode {
        DumpMode::Binary => binary,
        DumpMode::GzipBinary => {
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&binary).and_then(|_| enc.finish()).map_err(|e| RecoveryError::Format(e.to_string()))?
        }
    };
    let hash = PersistentImage::digest(mode, &bytes);
    Ok(PersistentImage { mode, bytes, hash })
}

/// Verifies the integrity hash before decoding anything.
pub fn restore_state<T: DeserializeOwned>(image: &PersistentImage) -> Result<T, RecoveryError> {
    let binary = image.binary_payload()?;
    bincode::deserialize(&binary).map_err(|e| RecoveryError::Format(e.to_string()))
}
