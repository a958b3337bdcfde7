//! Demand migration: the envelope format and the transports that carry it.

mod envelope;
mod inproc;
mod select;
mod sim;
mod tcp;

use std::time::{SystemTime, UNIX_EPOCH};

pub use envelope::{Envelope, MAX_FRAME};
pub use inproc::{InProcEndpoint, InProcHub};
pub use select::{
    benchmark_and_select, measure, select_protocol, InProcProbe, LatencyMeasurement, Probe, ProtocolKind, TcpProbe,
    MIN_PROBES,
};
pub use sim::{LinkFault, NetStats, ProtocolConfig, SimNetwork, SimProbe, NET_EMITTER};
pub use tcp::{read_frame, write_envelope, Responder, TcpClient, TcpEndpoint};

use crate::forensic::ForensicEvent;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("transport down: {0}")]
    TransportDown(String),
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    FrameTooLarge(usize),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("timed out")]
    Timeout,
    #[error("every protocol failed every probe")]
    AllProtocolsDown,
    #[error("at least 3 probes are required, got {0}")]
    TooFewProbes(u32),
}

pub(crate) fn frame_dropped(emitter: &str, err: &TransportError, at_micros: u64) -> ForensicEvent {
    ForensicEvent::new("malformed_frame", emitter, at_micros).with("reason", err)
}

pub fn wall_micros() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(0)
}
