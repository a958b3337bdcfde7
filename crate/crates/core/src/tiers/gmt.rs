//! The general manager tier's control plane. It is a single-owner service:
//! the hosting instance calls into it and routes its messages.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{
    tier_number, AllocationRequest, DeallocationRequest, NodeDescriptor, RegistrationResult, TierError, TierKind,
    TierRegistration, TierStatus,
};
use crate::autonomic::{issue_credential, Credential, Directory};
use crate::forensic::ForensicEvent;
use crate::lang::{Geer, GeerId};

/// Identity used by operators and clients that are not tiers.
pub const OPERATOR: &str = "operator";

#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub descriptor: NodeDescriptor,
    pub credential: Credential,
    pub registered_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TierRef {
    pub tier_id: String,
    pub kind: TierKind,
    pub node_id: String,
    pub status: TierStatus,
    pub last_heartbeat: u64,
    pub replaced_by: Option<String>,
}

#[derive(Debug)]
pub struct Gmt {
    tier_id: String,
    secret: Vec<u8>,
    nodes: BTreeMap<String, NodeRecord>,
    tiers: BTreeMap<u32, TierRef>,
    next_tier: u32,
    geers: BTreeMap<GeerId, Arc<Geer>>,
    heartbeat_timeout: u64,
    events: Vec<ForensicEvent>,
}

impl Gmt {
    /// Boots the GMT as tier T1 on `node`, which is registered first.
    pub fn boot(node: NodeDescriptor, secret: &[u8], heartbeat_timeout: u64, now: u64) -> Result<Gmt, TierError> {
        let mut g = Gmt {
            tier_id: "T1".into(),
            secret: secret.to_vec(),
            nodes: BTreeMap::new(),
            tiers: BTreeMap::new(),
            next_tier: 2,
            geers: BTreeMap::new(),
            heartbeat_timeout,
            events: Vec::new(),
        };
        let node_id = node.node_id.clone();
        g.register_node(node, now)?;
        g.tiers.insert(
            1,
            TierRef {
                tier_id: "T1".into(),
                kind: TierKind::Gmt,
                node_id,
                status: TierStatus::Live,
                last_heartbeat: now,
                replaced_by: None,
            },
        );
        Ok(g)
    }

    pub fn tier_id(&self) -> &str {
        &self.tier_id
    }

    fn event(&mut self, name: &str, now: u64) -> &mut ForensicEvent {
        self.events.push(ForensicEvent::new(name, self.tier_id.clone(), now * 1000));
        self.events.last_mut().unwrap()
    }

    pub fn take_events(&mut self) -> Vec<ForensicEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn register_node(&mut self, descriptor: NodeDescriptor, now: u64) -> Result<RegistrationResult, TierError> {
        let id = descriptor.node_id.clone();
        if id.is_empty() || id == OPERATOR {
            return Err(TierError::InvalidDescriptor(format!("node id {id:?} is reserved")));
        }
        if descriptor.endpoints.is_empty() {
            return Err(TierError::InvalidDescriptor(format!("node {id} declares no endpoint")));
        }
        if self.nodes.contains_key(&id) {
            return Err(TierError::DuplicateNode(id));
        }
        let credential = issue_credential(&self.secret, &id, now);
        let token = credential.encode();
        self.nodes.insert(id.clone(), NodeRecord { descriptor, credential, registered_at: now });
        self.event("node_registered", now).properties.insert("node".into(), id);
        Ok(RegistrationResult { accepted: true, credential: Some(token), assigned_tier_ids: Vec::new() })
    }

    pub fn node(&self, id: &str) -> Option<&NodeRecord> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    pub fn credential(&self, node: &str) -> Option<&Credential> {
        self.nodes.get(node).map(|n| &n.credential)
    }

    pub fn operator_credential(&self, now: u64) -> Credential {
        issue_credential(&self.secret, OPERATOR, now)
    }

    fn authorize(&self, credential: &Credential) -> Result<(), TierError> {
        if !credential.verify(&self.secret) {
            return Err(TierError::Unauthenticated("bad credential".into()));
        }
        if credential.node_id != OPERATOR && !self.nodes.contains_key(&credential.node_id) {
            return Err(TierError::Unauthenticated(format!("node {} is not registered", credential.node_id)));
        }
        Ok(())
    }

    pub fn tiers(&self) -> impl Iterator<Item = &TierRef> {
        self.tiers.values()
    }

    pub fn tier(&self, id: &str) -> Option<&TierRef> {
        tier_number(id).and_then(|n| self.tiers.get(&n))
    }

    fn tier_mut(&mut self, id: &str) -> Result<&mut TierRef, TierError> {
        tier_number(id).and_then(|n| self.tiers.get_mut(&n)).ok_or_else(|| TierError::UnknownTier(id.to_owned()))
    }

    pub fn live(&self, kind: TierKind) -> impl Iterator<Item = &TierRef> {
        self.tiers.values().filter(move |t| t.kind == kind && t.status == TierStatus::Live)
    }

    /// The authoritative store: the lowest-numbered live DST.
    pub fn dst(&self) -> Option<&str> {
        self.live(TierKind::Dst).next().map(|t| t.tier_id.as_str())
    }

    /// Slots in use on `node` for `kind`. Failed and deallocated tiers do not
    /// hold a slot.
    fn used(&self, node: &str, kind: TierKind) -> usize {
        self.tiers
            .values()
            .filter(|t| t.node_id == node && t.kind == kind)
            .filter(|t| matches!(t.status, TierStatus::Allocated | TierStatus::Live))
            .count()
    }

    fn free(&self, node: &NodeRecord, kind: TierKind) -> usize {
        let cap = node.descriptor.capacity.get(&kind).copied().unwrap_or(0);
        cap.saturating_sub(self.used(&node.descriptor.node_id, kind))
    }

    /// Picks hosts for `count` tiers: the preferred node only, or otherwise
    /// the node with the most free slots each time (ties by node id).
    fn place(&self, kind: TierKind, count: usize, preferred: Option<&str>) -> Result<Vec<String>, TierError> {
        let mut free: Vec<(String, usize)> = match preferred {
            Some(p) => {
                let n = self.nodes.get(p).ok_or_else(|| TierError::UnknownNode(p.to_owned()))?;
                vec![(p.to_owned(), self.free(n, kind))]
            }
            None => self.nodes.values().map(|n| (n.descriptor.node_id.clone(), self.free(n, kind))).collect(),
        };
        let available: usize = free.iter().map(|f| f.1).sum();
        if available < count {
            return Err(TierError::CapacityExceeded { kind, requested: count, available });
        }
        let mut hosts = Vec::with_capacity(count);
        for _ in 0..count {
            let best = free.iter_mut().filter(|f| f.1 > 0).max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).unwrap();
            best.1 -= 1;
            hosts.push(best.0.clone());
        }
        Ok(hosts)
    }

    fn create(&mut self, kind: TierKind, node: String, now: u64) -> TierRef {
        let n = self.next_tier;
        self.next_tier += 1;
        let t = TierRef {
            tier_id: format!("T{n}"),
            kind,
            node_id: node,
            status: TierStatus::Allocated,
            last_heartbeat: now,
            replaced_by: None,
        };
        self.tiers.insert(n, t.clone());
        self.event("tier_allocated", now)
            .properties
            .extend([("tier".into(), t.tier_id.clone()), ("kind".into(), kind.name().into()), ("node".into(), t.node_id.clone())]);
        t
    }

    /// Creates tier records; the tiers go live when their registration
    /// demand reaches the GMT.
    pub fn allocate(&mut self, request: &AllocationRequest, requester: &Credential, now: u64) -> Result<Vec<TierRef>, TierError> {
        self.authorize(requester)?;
        if request.count == 0 {
            return Err(TierError::InvalidRequest("count must be at least 1".into()));
        }
        match request.kind {
            TierKind::Gmt => return Err(TierError::InvalidRequest("an instance has exactly one GMT".into())),
            TierKind::Dgt | TierKind::Dwt if self.dst().is_none() => return Err(TierError::NoDstAvailable),
            TierKind::Dst if request.count > 1 || self.used_anywhere(TierKind::Dst) => {
                return Err(TierError::InvalidRequest("an instance has a single DST".into()))
            }
            _ => {}
        }
        let hosts = self.place(request.kind, request.count, request.preferred_node.as_deref())?;
        Ok(hosts.into_iter().map(|h| self.create(request.kind, h, now)).collect())
    }

    fn used_anywhere(&self, kind: TierKind) -> bool {
        self.tiers.values().any(|t| t.kind == kind && matches!(t.status, TierStatus::Allocated | TierStatus::Live))
    }

    /// Handles a tier's registration demand. Returns the DST the tier should
    /// use.
    pub fn on_registration(&mut self, source: &str, reg: &TierRegistration, now: u64) -> Result<Option<String>, TierError> {
        let gmt = self.tier_id.clone();
        let t = self.tier_mut(&reg.tier_id)?;
        if reg.tier_id != source || reg.destination_gmt != gmt || t.kind != reg.kind || t.node_id != reg.node_id {
            let e = ForensicEvent::new("registration_rejected", gmt, now * 1000).with("tier", &reg.tier_id);
            self.events.push(e);
            return Err(TierError::InvalidRequest(format!("registration for {} does not match its allocation", reg.tier_id)));
        }
        match t.status {
            TierStatus::Allocated | TierStatus::Live => {
                let first = t.status == TierStatus::Allocated;
                t.status = TierStatus::Live;
                t.last_heartbeat = now;
                if first {
                    let id = t.tier_id.clone();
                    self.event("tier_live", now).properties.insert("tier".into(), id);
                }
                Ok(self.dst().map(str::to_owned))
            }
            TierStatus::Failed | TierStatus::Deallocated => {
                Err(TierError::InvalidRequest(format!("{} is {}", reg.tier_id, t.status.name())))
            }
        }
    }

    /// Records a heartbeat. A failed tier stays failed; it is reported so
    /// that healing is reconsidered.
    pub fn heartbeat(&mut self, tier_id: &str, now: u64) -> Result<(), TierError> {
        let Ok(t) = self.tier_mut(tier_id) else {
            self.event("unknown_heartbeat", now).properties.insert("tier".into(), tier_id.to_owned());
            return Err(TierError::UnknownTier(tier_id.to_owned()));
        };
        match t.status {
            TierStatus::Live | TierStatus::Allocated => t.last_heartbeat = now,
            TierStatus::Failed => {
                self.event("tier_still_failed", now).properties.insert("tier".into(), tier_id.to_owned());
            }
            TierStatus::Deallocated => {}
        }
        Ok(())
    }

    /// Marks every live or allocated tier whose last heartbeat is older than
    /// the timeout as failed. Idempotent.
    pub fn detect_failures(&mut self, now: u64) -> Vec<String> {
        let timeout = self.heartbeat_timeout;
        let mut failed = Vec::new();
        for t in self.tiers.values_mut() {
            if t.kind == TierKind::Gmt || !matches!(t.status, TierStatus::Live | TierStatus::Allocated) {
                continue;
            }
            if now.saturating_sub(t.last_heartbeat) > timeout {
                t.status = TierStatus::Failed;
                failed.push(t.tier_id.clone());
            }
        }
        for id in &failed {
            self.event("tier_failed", now).properties.insert("tier".into(), id.clone());
        }
        failed
    }

    pub fn deallocate(&mut self, request: &DeallocationRequest, requester: &Credential, now: u64) -> Result<TierRef, TierError> {
        self.authorize(requester)?;
        let t = self.tier_mut(&request.tier_id)?;
        if t.kind == TierKind::Gmt {
            return Err(TierError::InvalidRequest("the GMT cannot be deallocated".into()));
        }
        if t.status == TierStatus::Deallocated {
            return Err(TierError::UnknownTier(request.tier_id.clone()));
        }
        t.status = TierStatus::Deallocated;
        let t = t.clone();
        self.event("tier_deallocated", now)
            .properties
            .extend([("tier".into(), t.tier_id.clone()), ("reason".into(), request.reason.clone())]);
        Ok(t)
    }

    /// Allocates a replacement for a failed tier and retires the failed one.
    pub fn replace(&mut self, failed: &str, now: u64) -> Result<TierRef, TierError> {
        let t = self.tier(failed).ok_or_else(|| TierError::UnknownTier(failed.to_owned()))?.clone();
        if t.status != TierStatus::Failed {
            return Err(TierError::InvalidRequest(format!("{failed} is {}", t.status.name())));
        }
        let host = self.place(t.kind, 1, None).map_err(|_| TierError::NoCapacity(t.kind))?.remove(0);
        let r = self.create(t.kind, host, now);
        let f = self.tier_mut(failed)?;
        f.status = TierStatus::Deallocated;
        f.replaced_by = Some(r.tier_id.clone());
        Ok(r)
    }

    /// Operator-driven heal in place: the tier may register again.
    pub fn readmit(&mut self, tier_id: &str, now: u64) -> Result<(), TierError> {
        let t = self.tier_mut(tier_id)?;
        if t.status != TierStatus::Failed && t.status != TierStatus::Live {
            return Err(TierError::InvalidRequest(format!("{tier_id} is {}", t.status.name())));
        }
        t.status = TierStatus::Allocated;
        t.last_heartbeat = now;
        Ok(())
    }

    /// Sources whose envelopes tiers accept: live tiers plus the operator.
    /// The GMT itself also hears from tiers that are still registering.
    pub fn directory(&self, include_allocated: bool) -> Directory {
        let mut d: Directory = self
            .tiers
            .values()
            .filter(|t| t.status == TierStatus::Live || (include_allocated && t.status == TierStatus::Allocated))
            .map(|t| (t.tier_id.clone(), t.node_id.clone()))
            .collect();
        d.insert(super::CLIENT.to_owned(), OPERATOR.to_owned());
        d
    }

    pub fn publish_geer(&mut self, geer: Geer) -> GeerId {
        let id = geer.geer_id.clone();
        self.geers.entry(id.clone()).or_insert_with(|| Arc::new(geer));
        id
    }

    pub fn geer(&self, id: &GeerId) -> Option<&Arc<Geer>> {
        self.geers.get(id)
    }
}
