//! A whole runtime instance in one deterministic process. Tiers are stepped
//! round-robin once per tick; every message crosses the simulated network
//! and the authentication gate of its receiver.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::engines::{DgtEngine, DstEngine, DwtEngine, Inbound, Incoming, StoreClient, TierIo, Timing};
use super::gmt::{Gmt, TierRef};
use super::messages::SystemMessage;
use super::{
    tier_number, AllocationRequest, DeallocationRequest, NodeDescriptor, TierError, TierKind, TierStatus,
};
use crate::autonomic::{
    sync_classification_caches, verify_envelope, Directory, PolicyEngine, SyncNode, Verdict, CLASSIFY_TAG,
    HEAL_FAILED_TIERS, RESELECT_PROTOCOL, SYNC_CLASSIFICATION_CACHES,
};
use crate::eduction::{
    Context, Demand, DemandKind, DemandPayload, DemandSignature, DemandStore, EvalConfig, Outcome, ProcedureTable,
    Warehouse,
};
use crate::forensic::{ExportFormat, ForensicEvent, ForensicLog};
use crate::lang::{Geer, NodeId};
use crate::transport::{benchmark_and_select, Envelope, LinkFault, Probe, ProtocolKind, SimNetwork, MIN_PROBES};
use crate::value::Value;

/// Address of the operator's client inside an instance.
pub const CLIENT: &str = "client";

#[derive(Debug, Clone)]
pub struct InstanceConfig {
    pub seed: u64,
    pub heartbeat_interval: u64,
    pub heartbeat_timeout: u64,
    pub lease: u64,
    pub reply_timeout: u64,
    pub retry_budget: u64,
    pub eval: EvalConfig,
    pub procedures: ProcedureTable,
    pub auto_heal: bool,
}

impl InstanceConfig {
    pub fn new(seed: u64) -> Self {
        InstanceConfig {
            seed,
            heartbeat_interval: 5,
            heartbeat_timeout: 15,
            lease: 20,
            reply_timeout: 8,
            retry_budget: 500,
            eval: EvalConfig::default(),
            procedures: ProcedureTable::standard(),
            auto_heal: true,
        }
    }

    fn timing(&self) -> Timing {
        Timing {
            heartbeat_interval: self.heartbeat_interval,
            reply_timeout: self.reply_timeout,
            lease: self.lease,
            retry_budget: self.retry_budget,
        }
    }
}

#[derive(Debug)]
enum Engine {
    Dst(DstEngine),
    Dgt(DgtEngine),
    Dwt(DwtEngine),
}

#[derive(Debug)]
struct Slot {
    id: String,
    kind: TierKind,
    node: String,
    engine: Engine,
    alive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealingReport {
    pub failed: String,
    pub kind: TierKind,
    pub reverted: Vec<DemandSignature>,
    pub replacement: Option<String>,
    /// Transactions re-applied from the failed tier's log.
    pub replayed: Option<usize>,
    pub error: Option<TierError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceStatus {
    pub now: u64,
    pub nodes: Vec<NodeDescriptor>,
    pub tiers: Vec<TierRef>,
    pub store: Option<StoreCounts>,
}

impl InstanceStatus {
    /// Human-readable table: one line per node, one per tier, one for the
    /// store.
    pub fn render(&self) -> String {
        let mut out = format!("now={}\n", self.now);
        for n in &self.nodes {
            let caps: Vec<String> = n.capacity.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out += &format!("node {} capacity {}\n", n.node_id, caps.join(","));
        }
        for t in &self.tiers {
            out += &format!("tier {} {} {} {}", t.tier_id, t.kind, t.node_id, t.status.name());
            if let Some(r) = &t.replaced_by {
                out += &format!(" replaced_by={r}");
            }
            out.push('\n');
        }
        if let Some(s) = self.store {
            out += &format!(
                "store total={} pending={} in_process={} computed={}\n",
                s.total, s.pending, s.in_process, s.computed
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreCounts {
    pub total: usize,
    pub pending: usize,
    pub in_process: usize,
    pub computed: usize,
}

#[derive(Debug, Clone)]
struct ProgramRequest {
    demand: Demand,
    dgt: String,
}

#[derive(Debug, Default)]
struct Client {
    store: StoreClient,
    programs: BTreeMap<DemandSignature, ProgramRequest>,
    results: BTreeMap<DemandSignature, Outcome>,
    next_dgt: usize,
    dst: Option<String>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct GateStats {
    pub accepted: u64,
    pub rejected: u64,
}

pub struct Instance {
    config: InstanceConfig,
    timing: Timing,
    now: u64,
    secret: Vec<u8>,
    net: SimNetwork,
    rng: ChaCha8Rng,
    gmt: Gmt,
    policy: PolicyEngine,
    slots: BTreeMap<u32, Slot>,
    disks: BTreeMap<String, Vec<u8>>,
    caches: BTreeMap<String, Warehouse<DemandSignature>>,
    protocols: BTreeMap<String, ProtocolKind>,
    client: Client,
    client_token: Vec<u8>,
    log: ForensicLog,
    pending_events: Vec<ForensicEvent>,
    healing: Vec<HealingReport>,
    unhealed: BTreeSet<String>,
    gate: GateStats,
}

impl std::fmt::Debug for Instance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Instance").field("now", &self.now).field("tiers", &self.slots.len()).finish()
    }
}

/// Drains an inbox through the authentication gate.
#[allow(clippy::too_many_arguments)]
fn gate(
    net: &mut SimNetwork,
    addr: &str,
    now: u64,
    secret: &[u8],
    directory: &Directory,
    events: &mut Vec<ForensicEvent>,
    stats: &mut GateStats,
) -> Vec<Incoming> {
    let mut out = Vec::new();
    while let Some(env) = net.recv(addr, now) {
        let reject = |reason: &str, events: &mut Vec<ForensicEvent>| {
            events.push(
                ForensicEvent::new("unauthenticated_message", addr, now * 1000)
                    .with("reason", reason)
                    .with("source", &env.source)
                    .with("sig", env.signature.hex()),
            );
        };
        if env.destination != addr {
            stats.rejected += 1;
            reject("misrouted", events);
            continue;
        }
        if let Verdict::Reject(r) = verify_envelope(&env, secret, directory) {
            stats.rejected += 1;
            reject(r.name(), events);
            continue;
        }
        let parsed = env.demand().map_err(|e| e.to_string()).and_then(|d| match d.payload {
            DemandPayload::System { body } => SystemMessage::decode(&body).map(Inbound::System),
            _ => Ok(Inbound::Demand(d)),
        });
        match parsed {
            Ok(body) => {
                stats.accepted += 1;
                out.push(Incoming { from: env.source, body });
            }
            Err(e) => {
                stats.rejected += 1;
                events.push(
                    ForensicEvent::new("malformed_message", addr, now * 1000).with("source", &env.source).with("error", e),
                );
            }
        }
    }
    out
}

impl Instance {
    /// Boots an instance whose GMT (tier T1) runs on `gmt_node`.
    pub fn new(config: InstanceConfig, secret: &[u8], gmt_node: NodeDescriptor) -> Result<Instance, TierError> {
        let gmt = Gmt::boot(gmt_node.clone(), secret, config.heartbeat_timeout, 0)?;
        let mut net = SimNetwork::new(config.seed);
        net.open(gmt.tier_id());
        net.open(CLIENT);
        let client_token = gmt.operator_credential(0).encode();
        let mut inst = Instance {
            timing: config.timing(),
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9)),
            config,
            now: 0,
            secret: secret.to_vec(),
            net,
            gmt,
            policy: PolicyEngine::standard("T1"),
            slots: BTreeMap::new(),
            disks: BTreeMap::new(),
            caches: BTreeMap::new(),
            protocols: BTreeMap::new(),
            client: Client::default(),
            client_token,
            log: ForensicLog::new(),
            pending_events: Vec::new(),
            healing: Vec::new(),
            unhealed: BTreeSet::new(),
            gate: GateStats::default(),
        };
        inst.add_node_state(&gmt_node.node_id);
        let events = inst.gmt.take_events();
        inst.pending_events.extend(events);
        Ok(inst)
    }

    fn add_node_state(&mut self, node: &str) {
        self.caches.entry(node.to_owned()).or_default();
        let initial = self.best_protocol();
        self.protocols.entry(node.to_owned()).or_insert(initial);
    }

    /// The fastest protocol the network currently offers, without logging.
    fn best_protocol(&self) -> ProtocolKind {
        let mut probes: Vec<_> = ProtocolKind::ALL.iter().map(|p| self.net.probe(*p)).collect();
        let mut refs: Vec<&mut dyn Probe> = probes.iter_mut().map(|p| p as &mut dyn Probe).collect();
        benchmark_and_select(&mut refs, MIN_PROBES).map_or(ProtocolKind::InProcess, |(_, chosen)| chosen)
    }

    fn client_protocol(&self) -> ProtocolKind {
        self.protocols.get(&self.gmt_node()).copied().unwrap_or(ProtocolKind::InProcess)
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn config(&self) -> &InstanceConfig {
        &self.config
    }

    pub fn gmt(&self) -> &Gmt {
        &self.gmt
    }

    pub fn log(&self) -> &ForensicLog {
        &self.log
    }

    pub fn export(&self, format: ExportFormat) -> Vec<u8> {
        self.log.export(format)
    }

    pub fn set_auto_heal(&mut self, on: bool) {
        self.config.auto_heal = on;
    }

    pub fn gate_stats(&self) -> GateStats {
        self.gate
    }

    pub fn healing_reports(&self) -> &[HealingReport] {
        &self.healing
    }

    pub fn network_mut(&mut self) -> &mut SimNetwork {
        &mut self.net
    }

    pub fn protocol_of(&self, node: &str) -> Option<ProtocolKind> {
        self.protocols.get(node).copied()
    }

    pub fn cache(&self, node: &str) -> Option<&Warehouse<DemandSignature>> {
        self.caches.get(node)
    }

    /// Queues an event (for example a pipeline stage change) for the next
    /// tick's log and policy pass.
    pub fn record(&mut self, event: ForensicEvent) {
        self.pending_events.push(event);
    }

    pub fn event(&self, name: &str, emitter: &str) -> ForensicEvent {
        ForensicEvent::new(name, emitter, self.now * 1000)
    }

    pub fn register_node(&mut self, descriptor: NodeDescriptor) -> Result<(), TierError> {
        let id = descriptor.node_id.clone();
        self.gmt.register_node(descriptor, self.now)?;
        self.add_node_state(&id);
        self.capacity_changed();
        self.collect_gmt_events();
        Ok(())
    }

    fn collect_gmt_events(&mut self) {
        let events = self.gmt.take_events();
        self.pending_events.extend(events);
    }

    fn capacity_changed(&mut self) {
        for id in &self.unhealed {
            let e = ForensicEvent::new("tier_still_failed", "T1", self.now * 1000).with("tier", id).with("cause", "capacity");
            self.pending_events.push(e);
        }
    }

    fn engine_for(&self, t: &TierRef) -> Engine {
        match t.kind {
            TierKind::Dst => Engine::Dst(DstEngine::new(&t.tier_id, &t.node_id, "T1")),
            TierKind::Dgt => Engine::Dgt(DgtEngine::new(&t.tier_id, &t.node_id, "T1", self.config.eval)),
            TierKind::Dwt => Engine::Dwt(DwtEngine::new(&t.tier_id, &t.node_id, "T1", self.config.procedures.clone())),
            TierKind::Gmt => unreachable!("the GMT is not allocated"),
        }
    }

    fn spawn(&mut self, t: &TierRef, engine: Engine) {
        self.net.open(&t.tier_id);
        let n = tier_number(&t.tier_id).expect("tier ids are numbered");
        self.slots.insert(n, Slot { id: t.tier_id.clone(), kind: t.kind, node: t.node_id.clone(), engine, alive: true });
    }

    /// Allocation on behalf of the operator.
    pub fn allocate(&mut self, request: AllocationRequest) -> Result<Vec<String>, TierError> {
        let cred = self.gmt.operator_credential(self.now);
        let result = self.gmt.allocate(&request, &cred, self.now);
        self.collect_gmt_events();
        let refs = result?;
        for t in &refs {
            let engine = self.engine_for(t);
            self.spawn(t, engine);
        }
        Ok(refs.into_iter().map(|t| t.tier_id).collect())
    }

    pub fn deallocate(&mut self, tier_id: &str, reason: &str) -> Result<(), TierError> {
        let cred = self.gmt.operator_credential(self.now);
        let req = DeallocationRequest { tier_id: tier_id.to_owned(), reason: reason.to_owned() };
        let result = self.gmt.deallocate(&req, &cred, self.now);
        self.collect_gmt_events();
        let t = result?;
        self.fence(tier_id);
        if t.kind == TierKind::Dwt {
            self.release_claims_of(tier_id);
        }
        self.capacity_changed();
        Ok(())
    }

    /// Stops a tier's engine and closes its address.
    fn fence(&mut self, tier_id: &str) {
        let Some(slot) = tier_number(tier_id).and_then(|n| self.slots.get_mut(&n)) else { return };
        if slot.alive {
            slot.alive = false;
            self.net.close(tier_id);
            if let Engine::Dst(d) = &slot.engine {
                self.disks.insert(tier_id.to_owned(), d.wal_bytes());
            }
        }
    }

    fn release_claims_of(&mut self, worker: &str) {
        if let Some(dst) = self.gmt.dst().map(str::to_owned) {
            self.send_from_gmt(&dst, &SystemMessage::ReleaseClaims { worker: worker.to_owned() });
        }
    }

    fn send_from_gmt(&mut self, to: &str, msg: &SystemMessage) {
        let node = self.gmt.tier("T1").map(|t| t.node_id.clone()).unwrap_or_default();
        let token = self.gmt.credential(&node).map(|c| c.encode()).unwrap_or_default();
        let protocol = self.protocols.get(&node).copied().unwrap_or(ProtocolKind::InProcess);
        let mut io = TierIo {
            id: "T1",
            now: self.now,
            net: &mut self.net,
            protocol,
            token: &token,
            rng: &mut self.rng,
            events: &mut self.pending_events,
        };
        let _ = io.send(to, msg);
    }

    /// Fault injection: the tier's process dies. A store's log survives.
    pub fn kill(&mut self, tier_id: &str) -> Result<(), TierError> {
        let n = tier_number(tier_id).ok_or_else(|| TierError::UnknownTier(tier_id.to_owned()))?;
        match self.slots.get(&n) {
            Some(s) if s.alive => {}
            _ => return Err(TierError::UnknownTier(tier_id.to_owned())),
        }
        self.fence(tier_id);
        let e = self.event("tier_killed", "sim").with("tier", tier_id);
        self.pending_events.push(e);
        Ok(())
    }

    /// Restarts a killed tier under its old id; a store is rebuilt from its
    /// log.
    pub fn restart(&mut self, tier_id: &str) -> Result<(), TierError> {
        let n = tier_number(tier_id).ok_or_else(|| TierError::UnknownTier(tier_id.to_owned()))?;
        let (kind, node) = match self.slots.get(&n) {
            Some(s) if !s.alive => (s.kind, s.node.clone()),
            Some(_) => return Err(TierError::InvalidRequest(format!("{tier_id} is running"))),
            None => return Err(TierError::UnknownTier(tier_id.to_owned())),
        };
        self.gmt.readmit(tier_id, self.now)?;
        let t = self.gmt.tier(tier_id).cloned().expect("readmitted tiers exist");
        let engine = if kind == TierKind::Dst {
            let wal = self.disks.get(tier_id).cloned().unwrap_or_default();
            let (engine, report) = DstEngine::recover(tier_id, &node, "T1", &wal)
                .map_err(|e| TierError::InvalidRequest(format!("log replay failed: {e}")))?;
            let e = self.event("wal_replayed", tier_id).with("applied", report.applied.len());
            self.pending_events.push(e);
            Engine::Dst(engine)
        } else {
            self.engine_for(&t)
        };
        self.spawn(&t, engine);
        let e = self.event("tier_restarted", "sim").with("tier", tier_id);
        self.pending_events.push(e);
        Ok(())
    }

    /// Replaces a failed tier: its claims are reverted, a new tier of the
    /// same kind is allocated where there is room, and a store is rebuilt
    /// from the failed one's log.
    pub fn heal(&mut self, failed: &str) -> HealingReport {
        let kind = self.gmt.tier(failed).map(|t| t.kind).unwrap_or(TierKind::Dwt);
        let mut report =
            HealingReport { failed: failed.to_owned(), kind, reverted: Vec::new(), replacement: None, replayed: None, error: None };
        self.fence(failed);
        if kind == TierKind::Dwt {
            self.release_claims_of(failed);
        }
        match self.gmt.replace(failed, self.now) {
            Ok(t) => {
                let engine = if kind == TierKind::Dst {
                    let wal = self.disks.get(failed).cloned().unwrap_or_default();
                    match DstEngine::recover(&t.tier_id, &t.node_id, "T1", &wal) {
                        Ok((engine, r)) => {
                            report.replayed = Some(r.applied.len());
                            Engine::Dst(engine)
                        }
                        Err(_) => Engine::Dst(DstEngine::new(&t.tier_id, &t.node_id, "T1")),
                    }
                } else {
                    self.engine_for(&t)
                };
                self.spawn(&t, engine);
                if kind == TierKind::Dst {
                    self.announce_dst(&t.tier_id);
                }
                report.replacement = Some(t.tier_id.clone());
                self.unhealed.remove(failed);
            }
            Err(e) => {
                report.error = Some(e);
                self.unhealed.insert(failed.to_owned());
            }
        }
        let mut e = self.event("heal_attempted", "T1").with("tier", failed);
        match (&report.replacement, &report.error) {
            (Some(r), _) => e = e.with("replacement", r),
            (_, Some(err)) => e = e.with("error", err),
            _ => {}
        }
        self.pending_events.push(e);
        self.collect_gmt_events();
        self.healing.push(report.clone());
        report
    }

    fn announce_dst(&mut self, dst: &str) {
        let targets: Vec<String> = self
            .slots
            .values()
            .filter(|s| s.alive && matches!(s.kind, TierKind::Dgt | TierKind::Dwt))
            .map(|s| s.id.clone())
            .collect();
        for t in targets {
            self.send_from_gmt(&t, &SystemMessage::DstChanged { dst: dst.to_owned() });
        }
    }

    /// Advances the instance by one tick.
    pub fn step(&mut self) {
        self.now += 1;
        let now = self.now;
        self.net.deliver(now);
        let mut batch = std::mem::take(&mut self.pending_events);
        self.step_gmt(&mut batch);
        self.step_tiers(&mut batch);
        self.step_client(&mut batch);
        self.gmt.detect_failures(now);
        batch.extend(self.gmt.take_events());
        batch.extend(self.net.take_events());
        self.absorb(batch);
    }

    /// Logs a batch of events and runs the policies they trigger, then the
    /// events those actions produce, until nothing new fires.
    fn absorb(&mut self, mut batch: Vec<ForensicEvent>) {
        for _ in 0..8 {
            if batch.is_empty() {
                break;
            }
            let actions = self.policy.tick(&batch, self.now * 1000);
            for e in batch.drain(..) {
                self.log.record(e);
            }
            for e in self.policy.take_events() {
                self.log.record(e);
            }
            for a in actions {
                self.run_action(&a.action);
            }
            batch = std::mem::take(&mut self.pending_events);
            batch.extend(self.net.take_events());
        }
        for e in batch {
            self.log.record(e);
        }
    }

    fn run_action(&mut self, action: &str) {
        match action {
            SYNC_CLASSIFICATION_CACHES => self.sync_caches(),
            RESELECT_PROTOCOL => self.reselect_protocols(),
            HEAL_FAILED_TIERS => {
                let failed: Vec<String> =
                    self.gmt.tiers().filter(|t| t.status == TierStatus::Failed).map(|t| t.tier_id.clone()).collect();
                for id in failed {
                    if self.config.auto_heal {
                        self.heal(&id);
                    } else {
                        let e = self.event("heal_attempted", "T1").with("tier", &id).with("error", "disabled");
                        self.pending_events.push(e);
                    }
                }
            }
            other => {
                let e = self.event("unknown_action", "T1").with("action", other);
                self.pending_events.push(e);
            }
        }
    }

    /// Classification results cached on every node become available on all
    /// of them. A node is unreachable when all of its tiers have failed.
    pub fn sync_caches(&mut self) {
        let unreachable: BTreeSet<String> = self
            .caches
            .keys()
            .filter(|n| {
                let mut tiers = self.gmt.tiers().filter(|t| t.node_id == **n && t.status != TierStatus::Deallocated);
                let mut any = false;
                let all_failed = tiers.all(|t| {
                    any = true;
                    t.status == TierStatus::Failed
                });
                any && all_failed
            })
            .cloned()
            .collect();
        let mut nodes: Vec<SyncNode<'_, DemandSignature>> = self
            .caches
            .iter_mut()
            .map(|(id, wh)| SyncNode { node_id: id.clone(), warehouse: (!unreachable.contains(id)).then_some(wh) })
            .collect();
        let report = sync_classification_caches(&mut nodes, CLASSIFY_TAG, "T1", self.now * 1000);
        self.pending_events.extend(report.events);
        let imported: usize = report.imported.values().sum();
        let e = self.event("caches_synced", "T1").with("imported", imported).with("conflicts", report.conflicts);
        self.pending_events.push(e);
    }

    /// Each node measures the available protocols and keeps the fastest.
    pub fn reselect_protocols(&mut self) {
        let nodes: Vec<String> = self.protocols.keys().cloned().collect();
        for node in nodes {
            let mut probes: Vec<_> = ProtocolKind::ALL.iter().map(|p| self.net.probe(*p)).collect();
            let mut refs: Vec<&mut dyn Probe> = probes.iter_mut().map(|p| p as &mut dyn Probe).collect();
            let e = match benchmark_and_select(&mut refs, MIN_PROBES) {
                Ok((_, chosen)) => {
                    self.protocols.insert(node.clone(), chosen);
                    self.event("protocol_selected", &node).with("protocol", chosen.name())
                }
                Err(err) => self.event("protocol_selection_failed", &node).with("error", err),
            };
            self.pending_events.push(e);
        }
    }

    fn step_gmt(&mut self, batch: &mut Vec<ForensicEvent>) {
        let directory = self.gmt.directory(true);
        let inbox = gate(&mut self.net, "T1", self.now, &self.secret, &directory, batch, &mut self.gate);
        for m in inbox {
            match m.body {
                Inbound::System(SystemMessage::Register(reg)) => {
                    if let Ok(dst) = self.gmt.on_registration(&m.from, &reg, self.now) {
                        let ack = SystemMessage::RegistrationAck { tier_id: reg.tier_id.clone(), dst };
                        self.send_from_gmt(&m.from, &ack);
                    }
                }
                Inbound::System(SystemMessage::Heartbeat { tier_id }) => {
                    if tier_id == m.from {
                        let _ = self.gmt.heartbeat(&tier_id, self.now);
                    } else {
                        batch.push(self.event("heartbeat_spoofed", "T1").with("source", &m.from).with("tier", &tier_id));
                    }
                }
                Inbound::System(SystemMessage::ClaimsReleased { worker, signatures }) => {
                    batch.push(self.event("claims_reverted", "T1").with("worker", &worker).with("count", signatures.len()));
                    if let Some(r) = self.healing.iter_mut().rev().find(|r| r.failed == worker) {
                        r.reverted.extend(signatures);
                    }
                }
                Inbound::Demand(d) if d.kind() == DemandKind::Resource => {
                    let found = d.geer_id.as_ref().and_then(|g| self.gmt.geer(g)).map(|g| g.encode());
                    match found {
                        Some(geer) => self.send_from_gmt(&m.from, &SystemMessage::Resource { geer }),
                        None => batch.push(self.event("unknown_geer", "T1").with("source", &m.from)),
                    }
                }
                Inbound::System(other) => {
                    batch.push(self.event("unexpected_message", "T1").with("from", &m.from).with("message", other.name()))
                }
                Inbound::Demand(d) => batch
                    .push(self.event("unexpected_message", "T1").with("from", &m.from).with("message", d.kind().name())),
            }
        }
        batch.append(&mut self.pending_events);
        batch.extend(self.gmt.take_events());
    }

    fn step_tiers(&mut self, batch: &mut Vec<ForensicEvent>) {
        let directory = self.gmt.directory(false);
        let ids: Vec<u32> = self.slots.iter().filter(|(_, s)| s.alive).map(|(n, _)| *n).collect();
        for n in ids {
            let slot = self.slots.get_mut(&n).unwrap();
            let inbox = gate(&mut self.net, &slot.id, self.now, &self.secret, &directory, batch, &mut self.gate);
            let token = self.gmt.credential(&slot.node).map(|c| c.encode()).unwrap_or_default();
            let protocol = self.protocols.get(&slot.node).copied().unwrap_or(ProtocolKind::InProcess);
            let mut io = TierIo {
                id: &slot.id,
                now: self.now,
                net: &mut self.net,
                protocol,
                token: &token,
                rng: &mut self.rng,
                events: batch,
            };
            match &mut slot.engine {
                Engine::Dst(e) => e.step(&mut io, inbox, &self.timing),
                Engine::Dgt(e) => e.step(&mut io, inbox, &self.timing),
                Engine::Dwt(e) => {
                    let cache = self.caches.entry(slot.node.clone()).or_default();
                    e.step(&mut io, inbox, &self.timing, cache)
                }
            }
        }
    }

    fn live_dgt(&mut self) -> Option<String> {
        let dgts: Vec<String> = self.gmt.live(TierKind::Dgt).map(|t| t.tier_id.clone()).collect();
        if dgts.is_empty() {
            return None;
        }
        let pick = dgts[self.client.next_dgt % dgts.len()].clone();
        self.client.next_dgt += 1;
        Some(pick)
    }

    fn step_client(&mut self, batch: &mut Vec<ForensicEvent>) {
        let directory = self.gmt.directory(false);
        let inbox = gate(&mut self.net, CLIENT, self.now, &self.secret, &directory, batch, &mut self.gate);
        let dst = self.gmt.dst().map(str::to_owned);
        let protocol = self.client_protocol();
        let mut io = TierIo {
            id: CLIENT,
            now: self.now,
            net: &mut self.net,
            protocol,
            token: &self.client_token,
            rng: &mut self.rng,
            events: batch,
        };
        if dst != self.client.dst {
            if let Some(d) = &dst {
                self.client.store.redirect(&mut io, d);
            }
            self.client.dst = dst.clone();
        }
        for m in inbox {
            match m.body {
                Inbound::System(SystemMessage::Fetched { entries }) => self.client.store.on_fetched(&mut io, dst.as_deref(), entries),
                Inbound::System(SystemMessage::ProgramResult { signature, outcome }) => {
                    if self.client.programs.remove(&signature).is_some() {
                        self.client.results.insert(signature, outcome);
                    }
                }
                Inbound::System(other) => io.unexpected(&m.from, other.name()),
                Inbound::Demand(d) => io.unexpected(&m.from, d.kind().name()),
            }
        }
        self.client.store.poll(&mut io, dst.as_deref());
        // Programs whose generator is gone are resubmitted elsewhere.
        let orphaned: Vec<DemandSignature> = self
            .client
            .programs
            .iter()
            .filter(|(_, p)| self.gmt.tier(&p.dgt).is_none_or(|t| t.status != TierStatus::Live))
            .map(|(s, _)| *s)
            .collect();
        for sig in orphaned {
            if let Some(dgt) = self.live_dgt() {
                let p = self.client.programs.get_mut(&sig).unwrap();
                p.dgt = dgt.clone();
                p.demand.destination_tier = dgt;
                let demand = p.demand.clone();
                self.send_from_client(&demand);
            }
        }
    }

    fn send_from_client(&mut self, demand: &Demand) {
        let protocol = self.client_protocol();
        let mut io = TierIo {
            id: CLIENT,
            now: self.now,
            net: &mut self.net,
            protocol,
            token: &self.client_token,
            rng: &mut self.rng,
            events: &mut self.pending_events,
        };
        let _ = io.send_demand(demand);
    }

    /// Flushes pending events and closes the log with a shutdown record.
    pub fn shutdown(&mut self, unfinished: usize) {
        self.step();
        self.now += 1;
        let e = self.event("instance_shutdown", "T1").with("unfinished", unfinished);
        self.log.record(e);
    }

    pub fn step_n(&mut self, n: u64) {
        for _ in 0..n {
            self.step();
        }
    }

    /// Steps until `done` holds or `max_ticks` have passed. Returns whether
    /// `done` held.
    pub fn run_until(&mut self, max_ticks: u64, mut done: impl FnMut(&Instance) -> bool) -> bool {
        for _ in 0..max_ticks {
            if done(self) {
                return true;
            }
            self.step();
        }
        done(self)
    }

    /// Every allocated tier has registered.
    pub fn is_ready(&self) -> bool {
        self.gmt.tiers().all(|t| t.status != TierStatus::Allocated)
    }

    pub fn wait_ready(&mut self, max_ticks: u64) -> bool {
        self.run_until(max_ticks, Instance::is_ready)
    }

    /// Publishes `geer` at the GMT and sends a program demand for `node`
    /// (the entry expression by default) to a live generator.
    pub fn submit_program(&mut self, geer: &Geer, node: Option<NodeId>, context: Context) -> Result<DemandSignature, TierError> {
        let dgt = self.live_dgt().ok_or_else(|| TierError::InvalidRequest("no live DGT".into()))?;
        let id = self.gmt.publish_geer(geer.clone());
        let demand = Demand::intensional(id, node.unwrap_or(geer.entry), context, &dgt);
        let sig = demand.signature;
        if self.client.programs.contains_key(&sig) {
            return Ok(sig);
        }
        self.client.results.remove(&sig);
        self.send_from_client(&demand);
        self.client.programs.insert(sig, ProgramRequest { demand, dgt });
        Ok(sig)
    }

    pub fn program_result(&self, sig: &DemandSignature) -> Option<&Outcome> {
        self.client.results.get(sig)
    }

    pub fn programs_outstanding(&self) -> usize {
        self.client.programs.len()
    }

    /// Submits a program demand and runs the instance until it is answered.
    pub fn evaluate(&mut self, geer: &Geer, context: Context, max_ticks: u64) -> Outcome {
        let sig = match self.submit_program(geer, None, context) {
            Ok(s) => s,
            Err(e) => return Outcome::error("unavailable", e.to_string()),
        };
        if self.run_until(max_ticks, |i| i.program_result(&sig).is_some()) {
            self.client.results[&sig].clone()
        } else {
            Outcome::error("unavailable", format!("no result after {max_ticks} ticks"))
        }
    }

    /// Deposits a procedural demand directly with the store.
    pub fn submit_procedure(&mut self, name: &str, args: Vec<Value>) -> DemandSignature {
        let demand = Demand::procedural(name, args, Context::new(), "");
        let dst = self.gmt.dst().map(str::to_owned);
        let protocol = self.client_protocol();
        let mut io = TierIo {
            id: CLIENT,
            now: self.now,
            net: &mut self.net,
            protocol,
            token: &self.client_token,
            rng: &mut self.rng,
            events: &mut self.pending_events,
        };
        self.client.store.submit(&mut io, dst.as_deref(), demand)
    }

    pub fn procedure_result(&self, sig: &DemandSignature) -> Option<&Outcome> {
        self.client.store.result(sig)
    }

    pub fn procedures_outstanding(&self) -> usize {
        self.client.store.outstanding()
    }

    /// Sends an arbitrary envelope into the network (adversarial tests).
    pub fn inject(&mut self, env: &Envelope) -> Result<(), TierError> {
        let protocol = self.client_protocol();
        self.net.send(protocol, env, self.now).map_err(|e| TierError::InvalidRequest(e.to_string()))
    }

    /// Sends `count` envelopes that must not pass any gate: no token,
    /// garbage tokens, tokens minted with the wrong secret, a real
    /// credential used for a tier on another node, and unknown sources.
    /// Targets cycle over every running tier. Returns the count sent.
    pub fn inject_adversarial(&mut self, count: usize) -> usize {
        use rand::Rng;
        let targets: Vec<(String, String)> = std::iter::once(("T1".to_owned(), self.gmt_node()))
            .chain(self.slots.values().filter(|s| s.alive).map(|s| (s.id.clone(), s.node.clone())))
            .collect();
        let nodes: Vec<String> = self.gmt.nodes().map(|n| n.descriptor.node_id.clone()).collect();
        let mut sent = 0;
        for i in 0..count {
            let (to, to_node) = &targets[i % targets.len()];
            let demand = match i % 3 {
                0 => Demand::procedural("add", vec![Value::Int(i as i64), Value::Int(1)], Context::new(), to),
                1 => Demand::system(
                    SystemMessage::Claim { kind: DemandKind::Procedural, lease: 1000 }.encode(),
                    to,
                    &mut self.rng,
                ),
                _ => Demand::system(SystemMessage::Heartbeat { tier_id: to.clone() }.encode(), to, &mut self.rng),
            };
            // A source on a different node than `to`, so identity checks
            // have something to catch.
            let other = self.slots.values().find(|s| &s.node != to_node).map(|s| (s.id.clone(), s.node.clone()));
            let (source, token) = match i % 5 {
                0 => (other.as_ref().map_or("T2".to_owned(), |o| o.0.clone()), Vec::new()),
                1 => {
                    let len = self.rng.random_range(1..64);
                    ("T2".to_owned(), (0..len).map(|_| self.rng.random()).collect())
                }
                2 => {
                    let forged = crate::autonomic::issue_credential(b"not the secret", to_node, self.now);
                    ("T2".to_owned(), forged.encode())
                }
                3 => match &other {
                    Some((id, _)) => {
                        let wrong = nodes.iter().find(|n| *n != &other.as_ref().unwrap().1).cloned().unwrap_or_default();
                        (id.clone(), self.gmt.credential(&wrong).map(|c| c.encode()).unwrap_or_default())
                    }
                    None => ("T999".to_owned(), self.client_token.clone()),
                },
                _ => (format!("intruder{i}"), self.gmt.credential(to_node).map(|c| c.encode()).unwrap_or_default()),
            };
            let env = Envelope::new(&demand, &source, token, self.now * 1000);
            if self.inject(&env).is_ok() {
                sent += 1;
            }
        }
        sent
    }

    fn gmt_node(&self) -> String {
        self.gmt.tier("T1").map(|t| t.node_id.clone()).unwrap_or_default()
    }

    pub fn inject_raw(&mut self, from: &str, to: &str, frame: Vec<u8>) -> Result<(), TierError> {
        self.net.send_raw(from, to, frame, self.now).map_err(|e| TierError::InvalidRequest(e.to_string()))
    }

    pub fn set_link_fault(&mut self, from: &str, to: &str, fault: LinkFault) {
        self.net.set_link_fault(from, to, fault);
    }

    fn slot(&self, tier_id: &str) -> Option<&Slot> {
        tier_number(tier_id).and_then(|n| self.slots.get(&n))
    }

    pub fn is_running(&self, tier_id: &str) -> bool {
        self.slot(tier_id).is_some_and(|s| s.alive)
    }

    /// The store of the authoritative DST.
    pub fn store(&self) -> Option<&DemandStore> {
        let id = self.gmt.dst()?;
        match &self.slot(id)?.engine {
            Engine::Dst(d) => Some(d.store()),
            _ => None,
        }
    }

    pub fn store_dump(&self) -> Option<String> {
        self.store().map(DemandStore::dump)
    }

    pub fn dwt(&self, tier_id: &str) -> Option<&DwtEngine> {
        match &self.slot(tier_id)?.engine {
            Engine::Dwt(d) => Some(d),
            _ => None,
        }
    }

    pub fn dgt(&self, tier_id: &str) -> Option<&DgtEngine> {
        match &self.slot(tier_id)?.engine {
            Engine::Dgt(d) => Some(d),
            _ => None,
        }
    }

    pub fn status(&self) -> InstanceStatus {
        InstanceStatus {
            now: self.now,
            nodes: self.gmt.nodes().map(|n| n.descriptor.clone()).collect(),
            tiers: self.gmt.tiers().cloned().collect(),
            store: self.store().map(|s| {
                use crate::eduction::DemandState::*;
                StoreCounts {
                    total: s.len(),
                    pending: s.count_in(Pending),
                    in_process: s.count_in(InProcess),
                    computed: s.count_in(Computed),
                }
            }),
        }
    }
}
