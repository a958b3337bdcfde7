//! Control messages carried as system-demand bodies.

use serde::{Deserialize, Serialize};

use super::TierKind;
use crate::eduction::{Demand, DemandKind, DemandSignature, FetchResult, Outcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierRegistration {
    pub node_id: String,
    pub tier_id: String,
    pub destination_gmt: String,
    pub kind: TierKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FetchState {
    NotFound,
    Pending,
    InProcess,
    Computed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemMessage {
    Register(TierRegistration),
    RegistrationAck { tier_id: String, dst: Option<String> },
    Heartbeat { tier_id: String },
    Claim { kind: DemandKind, lease: u64 },
    Claimed { demand: Option<Demand> },
    Deliver { signature: DemandSignature, outcome: Outcome },
    Delivered { signature: DemandSignature },
    Fetch { signatures: Vec<DemandSignature> },
    Fetched { entries: Vec<(DemandSignature, FetchState, Option<Outcome>)> },
    ReleaseClaims { worker: String },
    ClaimsReleased { worker: String, signatures: Vec<DemandSignature> },
    Resource { geer: Vec<u8> },
    ProgramResult { signature: DemandSignature, outcome: Outcome },
    DstChanged { dst: String },
}

impl SystemMessage {
    pub fn encode(&self) -> Vec<u8> {
        bincode::serialize(self).expect("system messages always serialize")
    }

    pub fn decode(bytes: &[u8]) -> Result<SystemMessage, String> {
        bincode::deserialize(bytes).map_err(|e| e.to_string())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemMessage::Register(_) => "register",
            SystemMessage::RegistrationAck { .. } => "registration_ack",
            SystemMessage::Heartbeat { .. } => "heartbeat",
            SystemMessage::Claim { .. } => "claim",
            SystemMessage::Claimed { .. } => "claimed",
            SystemMessage::Deliver { .. } => "deliver",
            SystemMessage::Delivered { .. } => "delivered",
            SystemMessage::Fetch { .. } => "fetch",
            SystemMessage::Fetched { .. } => "fetched",
            SystemMessage::ReleaseClaims { .. } => "release_claims",
            SystemMessage::ClaimsReleased { .. } => "claims_released",
            SystemMessage::Resource { .. } => "resource",
            SystemMessage::ProgramResult { .. } => "program_result",
            SystemMessage::DstChanged { .. } => "dst_changed",
        }
    }
}

pub(crate) fn fetch_entry(sig: DemandSignature, r: FetchResult) -> (DemandSignature, FetchState, Option<Outcome>) {
    match r {
        FetchResult::NotFound => (sig, FetchState::NotFound, None),
        FetchResult::Pending => (sig, FetchState::Pending, None),
        FetchResult::InProcess => (sig, FetchState::InProcess, None),
        FetchResult::Computed(o) => (sig, FetchState::Computed, Some(o)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eduction::Context;
    use crate::value::Value;

    #[test]
    fn round_trip() {
        let d = Demand::procedural("add", vec![Value::Int(1), Value::Int(2)], Context::new(), "T2");
        let msgs = [
            SystemMessage::Register(TierRegistration {
                node_id: "n1".into(),
                tier_id: "T4".into(),
                destination_gmt: "T1".into(),
                kind: TierKind::Dwt,
            }),
            SystemMessage::Claimed { demand: Some(d.clone()) },
            SystemMessage::Fetched { entries: vec![(d.signature, FetchState::Computed, Some(Outcome::Value(Value::Int(3))))] },
        ];
        for m in msgs {
            assert_eq!(SystemMessage::decode(&m.encode()).unwrap(), m);
        }
        assert!(SystemMessage::decode(&[0xff; 3]).is_err());
    }
}
