//! The multi-tier runtime: the GMT control plane, the store, generator and
//! worker tiers, and a deterministic simulator that hosts them.

mod engines;
mod gmt;
mod host;
mod instance;
mod messages;
mod topology;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use engines::{DgtEngine, DstEngine, DwtEngine, StoreClient, StoreImage};
pub use gmt::{Gmt, NodeRecord, TierRef, OPERATOR};
pub use host::{ControlReply, ControlRequest, Gateway, HostHandle, RemoteClient};
pub use instance::{GateStats, HealingReport, Instance, InstanceConfig, InstanceStatus, StoreCounts, CLIENT};
pub use messages::{FetchState, SystemMessage, TierRegistration};
pub use topology::{
    run_scenario, DemandResult, NodeSpec, Scenario, ScenarioError, ScenarioOutcome, ScenarioStep, TierSpec, TimedStep,
    TimingSpec, Topology,
};

use crate::transport::ProtocolKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierKind {
    Gmt,
    Dst,
    Dgt,
    Dwt,
}

impl TierKind {
    pub fn name(self) -> &'static str {
        match self {
            TierKind::Gmt => "gmt",
            TierKind::Dst => "dst",
            TierKind::Dgt => "dgt",
            TierKind::Dwt => "dwt",
        }
    }
}

impl fmt::Display for TierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gmt" => Ok(TierKind::Gmt),
            "dst" => Ok(TierKind::Dst),
            "dgt" => Ok(TierKind::Dgt),
            "dwt" => Ok(TierKind::Dwt),
            _ => Err(format!("unknown tier kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierStatus {
    Allocated,
    Live,
    Failed,
    Deallocated,
}

impl TierStatus {
    pub fn name(self) -> &'static str {
        match self {
            TierStatus::Allocated => "allocated",
            TierStatus::Live => "live",
            TierStatus::Failed => "failed",
            TierStatus::Deallocated => "deallocated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub protocol: ProtocolKind,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub node_id: String,
    pub endpoints: Vec<Endpoint>,
    /// Maximum number of tiers of each kind the node may host.
    pub capacity: std::collections::BTreeMap<TierKind, usize>,
}

impl NodeDescriptor {
    /// A node reachable in-process under its own id.
    pub fn local(node_id: &str, capacity: &[(TierKind, usize)]) -> NodeDescriptor {
        NodeDescriptor {
            node_id: node_id.to_owned(),
            endpoints: vec![Endpoint { protocol: ProtocolKind::InProcess, address: node_id.to_owned() }],
            capacity: capacity.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationRequest {
    pub kind: TierKind,
    pub count: usize,
    pub preferred_node: Option<String>,
    pub configuration: Vec<(String, String)>,
}

impl AllocationRequest {
    pub fn new(kind: TierKind, count: usize) -> Self {
        AllocationRequest { kind, count, preferred_node: None, configuration: Vec::new() }
    }

    pub fn on(mut self, node: &str) -> Self {
        self.preferred_node = Some(node.to_owned());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeallocationRequest {
    pub tier_id: String,
    pub reason: String,
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub accepted: bool,
    pub credential: Option<Vec<u8>>,
    pub assigned_tier_ids: Vec<String>,
}

impl fmt::Debug for RegistrationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegistrationResult")
            .field("accepted", &self.accepted)
            .field("credential", &self.credential.as_ref().map(|_| "<redacted>"))
            .field("assigned_tier_ids", &self.assigned_tier_ids)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TierError {
    #[error("node {0} is already registered")]
    DuplicateNode(String),
    #[error("invalid node descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown tier {0}")]
    UnknownTier(String),
    #[error("capacity exceeded: {requested} {kind} tiers requested, {available} available")]
    CapacityExceeded { kind: TierKind, requested: usize, available: usize },
    #[error("no live DST")]
    NoDstAvailable,
    #[error("no node has capacity for a replacement {0}")]
    NoCapacity(TierKind),
    #[error("unauthenticated request: {0}")]
    Unauthenticated(String),
    #[error("GMT unavailable")]
    GmtUnavailable,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Numeric part of a tier id, used to order tiers (T2 before T10).
pub fn tier_number(id: &str) -> Option<u32> {
    id.strip_prefix('T')?.parse().ok()
}
