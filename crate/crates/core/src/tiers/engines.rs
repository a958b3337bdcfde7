//! Tier engines. Each engine is a sequential worker stepped once per tick by
//! its host; everything it knows arrives through its gated inbox.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::messages::{fetch_entry, FetchState, SystemMessage, TierRegistration};
use super::TierKind;
use crate::eduction::{
    Context, Demand, DemandKind, DemandPayload, DemandSignature, DemandStore, EvalConfig, EvalError, FetchResult,
    Machine, Outcome, ProcedureTable, Step, Warehouse,
};
use crate::forensic::ForensicEvent;
use crate::lang::{Geer, GeerId, NodeId};
use crate::recovery::{replay, Recoverable, RecoverableService, RecoveryError, ReplayReport, WriteAheadLogger};
use crate::transport::{Envelope, ProtocolKind, SimNetwork, TransportError};

/// Everything a tier may touch while it is being stepped.
pub(crate) struct TierIo<'a> {
    pub id: &'a str,
    pub now: u64,
    pub net: &'a mut SimNetwork,
    pub protocol: ProtocolKind,
    pub token: &'a [u8],
    pub rng: &'a mut ChaCha8Rng,
    pub events: &'a mut Vec<ForensicEvent>,
}

impl TierIo<'_> {
    pub fn send_demand(&mut self, demand: &Demand) -> Result<(), TransportError> {
        let env = Envelope::new(demand, self.id, self.token.to_vec(), self.now * 1000);
        self.net.send(self.protocol, &env, self.now)
    }

    pub fn send(&mut self, to: &str, msg: &SystemMessage) -> Result<(), TransportError> {
        let d = Demand::system(msg.encode(), to, self.rng);
        self.send_demand(&d)
    }

    pub fn event(&mut self, name: &str) -> &mut ForensicEvent {
        self.events.push(ForensicEvent::new(name, self.id, self.now * 1000));
        self.events.last_mut().unwrap()
    }

    pub fn unexpected(&mut self, from: &str, what: &str) {
        self.event("unexpected_message").properties.extend([("from".into(), from.into()), ("message".into(), what.into())]);
    }
}

/// Tick-denominated timing shared by every tier of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub heartbeat_interval: u64,
    pub reply_timeout: u64,
    pub lease: u64,
    /// Ticks a generator waits on a silent store before giving up.
    pub retry_budget: u64,
}

#[derive(Debug, Clone)]
pub enum Inbound {
    System(SystemMessage),
    Demand(Demand),
}

#[derive(Debug, Clone)]
pub struct Incoming {
    pub from: String,
    pub body: Inbound,
}

/// Registration and heartbeats, common to every non-GMT tier.
#[derive(Debug, Clone)]
struct Lifecycle {
    tier_id: String,
    node_id: String,
    kind: TierKind,
    gmt: String,
    registered: bool,
    last_register: Option<u64>,
    last_beat: u64,
}

impl Lifecycle {
    fn new(tier_id: &str, node_id: &str, kind: TierKind, gmt: &str) -> Self {
        Lifecycle {
            tier_id: tier_id.to_owned(),
            node_id: node_id.to_owned(),
            kind,
            gmt: gmt.to_owned(),
            registered: false,
            last_register: None,
            last_beat: 0,
        }
    }

    fn tick(&mut self, io: &mut TierIo<'_>, timing: &Timing) {
        if !self.registered {
            if self.last_register.is_none_or(|t| io.now - t >= timing.reply_timeout) {
                let reg = TierRegistration {
                    node_id: self.node_id.clone(),
                    tier_id: self.tier_id.clone(),
                    destination_gmt: self.gmt.clone(),
                    kind: self.kind,
                };
                let _ = io.send(&self.gmt, &SystemMessage::Register(reg));
                self.last_register = Some(io.now);
            }
        } else if io.now - self.last_beat >= timing.heartbeat_interval {
            let _ = io.send(&self.gmt, &SystemMessage::Heartbeat { tier_id: self.tier_id.clone() });
            self.last_beat = io.now;
        }
    }

    fn acknowledged(&mut self, io: &mut TierIo<'_>) {
        if !self.registered {
            self.registered = true;
            self.last_beat = io.now;
            io.event("tier_registered").properties.insert("kind".into(), self.kind.name().into());
        }
    }
}

/// The store's recoverable state: deposits and accepted deliveries are
/// logged; claims are not.
#[derive(Debug)]
pub struct StoreImage {
    pub store: DemandStore,
}

impl Default for StoreImage {
    fn default() -> Self {
        StoreImage { store: DemandStore::new("dst") }
    }
}

impl Recoverable for StoreImage {
    fn apply(&mut self, operation: &str, payload: &[u8]) -> Result<(), String> {
        let err = |e: bincode::Error| e.to_string();
        match operation {
            "deposit" => {
                let (now, demand): (u64, Demand) = bincode::deserialize(payload).map_err(err)?;
                self.store.deposit(demand, now).map(|_| ()).map_err(|e| e.to_string())
            }
            "deliver" => {
                let (now, sig, outcome, worker): (u64, DemandSignature, Outcome, String) =
                    bincode::deserialize(payload).map_err(err)?;
                self.store.deliver(&sig, outcome, &worker, now).map(|_| ()).map_err(|e| e.to_string())
            }
            other => Err(format!("unknown store operation {other}")),
        }
    }
}

#[derive(Debug)]
pub struct DstEngine {
    life: Lifecycle,
    service: RecoverableService<StoreImage>,
}

impl DstEngine {
    pub fn new(tier_id: &str, node_id: &str, gmt: &str) -> Self {
        let mut image = StoreImage::default();
        image.store.set_emitter(tier_id);
        DstEngine {
            life: Lifecycle::new(tier_id, node_id, TierKind::Dst, gmt),
            service: RecoverableService::new(WriteAheadLogger::in_memory(), image),
        }
    }

    /// Rebuilds a store from the write-ahead log of a previous incarnation
    /// and keeps appending to it.
    pub fn recover(tier_id: &str, node_id: &str, gmt: &str, wal: &[u8]) -> Result<(Self, ReplayReport), RecoveryError> {
        let (mut image, report) = replay::<StoreImage>(wal, None)?;
        image.store.take_events();
        image.store.set_emitter(tier_id);
        let engine = DstEngine {
            life: Lifecycle::new(tier_id, node_id, TierKind::Dst, gmt),
            service: RecoverableService::new(WriteAheadLogger::resume_in_memory(wal)?, image),
        };
        Ok((engine, report))
    }

    pub fn store(&self) -> &DemandStore {
        &self.service.state().store
    }

    pub fn store_mut(&mut self) -> &mut DemandStore {
        &mut self.service.volatile_mut().store
    }

    pub fn wal_bytes(&self) -> Vec<u8> {
        self.service.logger().bytes()
    }

    pub fn is_registered(&self) -> bool {
        self.life.registered
    }

    fn logged(&mut self, io: &mut TierIo<'_>, op: &str, effect: Vec<u8>) {
        if let Err(e) = self.service.execute(op, effect) {
            io.event("wal_failure").properties.extend([("op".into(), op.into()), ("error".into(), e.to_string())]);
        }
    }

    fn deposit(&mut self, io: &mut TierIo<'_>, mut demand: Demand) {
        if self.store().entry(&demand.signature).is_some() {
            return;
        }
        demand.claim = None;
        let effect = bincode::serialize(&(io.now, &demand)).expect("demands serialize");
        self.logged(io, "deposit", effect);
    }

    fn deliver(&mut self, io: &mut TierIo<'_>, worker: &str, sig: DemandSignature, outcome: Outcome) {
        let now = io.now;
        match self.store().fetch(&sig) {
            FetchResult::NotFound => {
                io.event("unknown_delivery").properties.extend([("sig".into(), sig.hex()), ("worker".into(), worker.into())]);
            }
            FetchResult::Computed(_) => {
                let _ = self.store_mut().deliver(&sig, outcome, worker, now);
            }
            FetchResult::Pending | FetchResult::InProcess => {
                let effect = bincode::serialize(&(now, sig, &outcome, worker)).expect("outcomes serialize");
                self.logged(io, "deliver", effect);
            }
        }
        let _ = io.send(worker, &SystemMessage::Delivered { signature: sig });
    }

    pub(crate) fn step(&mut self, io: &mut TierIo<'_>, inbox: Vec<Incoming>, timing: &Timing) {
        for m in inbox {
            match m.body {
                Inbound::Demand(d) if matches!(d.kind(), DemandKind::Procedural | DemandKind::Intensional) => {
                    self.deposit(io, d)
                }
                Inbound::Demand(d) => io.unexpected(&m.from, d.kind().name()),
                Inbound::System(msg) => match msg {
                    SystemMessage::RegistrationAck { .. } => self.life.acknowledged(io),
                    SystemMessage::Claim { kind, lease } => {
                        match self.store_mut().claim(Some(kind), &m.from, lease.max(1), io.now) {
                            Ok(demand) => {
                                let _ = io.send(&m.from, &SystemMessage::Claimed { demand });
                            }
                            Err(e) => {
                                io.event("store_error").properties.insert("error".into(), e.to_string());
                            }
                        }
                    }
                    SystemMessage::Deliver { signature, outcome } => self.deliver(io, &m.from, signature, outcome),
                    SystemMessage::Fetch { signatures } => {
                        let entries = signatures.into_iter().map(|s| fetch_entry(s, self.store().fetch(&s))).collect();
                        let _ = io.send(&m.from, &SystemMessage::Fetched { entries });
                    }
                    SystemMessage::ReleaseClaims { worker } if m.from == self.life.gmt => {
                        let signatures = self.store_mut().release_claims(&worker, io.now);
                        let _ = io.send(&m.from, &SystemMessage::ClaimsReleased { worker, signatures });
                    }
                    other => io.unexpected(&m.from, other.name()),
                },
            }
        }
        let now = io.now;
        self.store_mut().expire_leases(now);
        self.life.tick(io, timing);
        let events = self.store_mut().take_events();
        io.events.extend(events);
    }
}

#[derive(Debug, Clone)]
struct Unacked {
    outcome: Outcome,
    sent_at: Option<u64>,
    buffered: bool,
}

/// Cap on results a worker holds before it stops claiming.
const MAX_UNACKED: usize = 64;

#[derive(Debug)]
pub struct DwtEngine {
    life: Lifecycle,
    dst: Option<String>,
    procedures: ProcedureTable,
    queue: VecDeque<Demand>,
    claim_sent: Option<u64>,
    unacked: BTreeMap<DemandSignature, Unacked>,
    executed: u64,
}

impl DwtEngine {
    pub fn new(tier_id: &str, node_id: &str, gmt: &str, procedures: ProcedureTable) -> Self {
        DwtEngine {
            life: Lifecycle::new(tier_id, node_id, TierKind::Dwt, gmt),
            dst: None,
            procedures,
            queue: VecDeque::new(),
            claim_sent: None,
            unacked: BTreeMap::new(),
            executed: 0,
        }
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    /// Results computed but not yet acknowledged by the store.
    pub fn buffered(&self) -> usize {
        self.unacked.values().filter(|u| u.buffered).count()
    }

    pub fn is_registered(&self) -> bool {
        self.life.registered
    }

    fn execute(&mut self, io: &mut TierIo<'_>, d: &Demand, cache: &mut Warehouse<DemandSignature>) -> Outcome {
        self.executed += 1;
        let DemandPayload::Procedural { procedure, args, .. } = &d.payload else {
            return Outcome::error("invalid_demand", d.kind().name());
        };
        io.event("demand_executed").properties.extend([("sig".into(), d.signature.hex()), ("procedure".into(), procedure.clone())]);
        if let Some(v) = cache.lookup(&d.signature) {
            return Outcome::Value(v);
        }
        match self.procedures.get(procedure) {
            None => Outcome::error("unknown_procedure", procedure.clone()),
            Some(f) => match f(args) {
                Ok(v) => {
                    cache.commit_at(d.signature, v.clone(), io.now, Some(procedure.clone()));
                    Outcome::Value(v)
                }
                Err(detail) => Outcome::error("procedural_failure", detail),
            },
        }
    }

    fn flush(&mut self, io: &mut TierIo<'_>, dst: &str, timing: &Timing) {
        for (sig, u) in self.unacked.iter_mut() {
            if u.sent_at.is_some_and(|t| io.now - t < timing.reply_timeout) {
                continue;
            }
            let msg = SystemMessage::Deliver { signature: *sig, outcome: u.outcome.clone() };
            match io.send(dst, &msg) {
                Ok(()) => {
                    if u.buffered && u.sent_at.is_none() {
                        io.event("buffered_result_sent").properties.insert("sig".into(), sig.hex());
                    }
                    u.sent_at = Some(io.now);
                }
                Err(_) => {
                    if !u.buffered {
                        u.buffered = true;
                        io.event("result_buffered").properties.insert("sig".into(), sig.hex());
                    }
                    u.sent_at = None;
                }
            }
        }
    }

    pub(crate) fn step(&mut self, io: &mut TierIo<'_>, inbox: Vec<Incoming>, timing: &Timing, cache: &mut Warehouse<DemandSignature>) {
        for m in inbox {
            match m.body {
                Inbound::System(SystemMessage::RegistrationAck { dst, .. }) => {
                    self.life.acknowledged(io);
                    if dst.is_some() {
                        self.dst = dst;
                    }
                }
                Inbound::System(SystemMessage::Claimed { demand }) => {
                    self.claim_sent = None;
                    self.queue.extend(demand);
                }
                Inbound::System(SystemMessage::Delivered { signature }) => {
                    if self.unacked.remove(&signature).is_some_and(|u| u.buffered) {
                        io.event("buffered_result_delivered").properties.insert("sig".into(), signature.hex());
                    }
                }
                Inbound::System(SystemMessage::DstChanged { dst }) => {
                    self.dst = Some(dst);
                    self.claim_sent = None;
                    for u in self.unacked.values_mut() {
                        u.sent_at = None;
                    }
                }
                Inbound::System(other) => io.unexpected(&m.from, other.name()),
                Inbound::Demand(d) => io.unexpected(&m.from, d.kind().name()),
            }
        }
        self.life.tick(io, timing);
        if !self.life.registered {
            return;
        }
        let Some(dst) = self.dst.clone() else { return };
        if let Some(d) = self.queue.pop_front() {
            let outcome = self.execute(io, &d, cache);
            self.unacked.insert(d.signature, Unacked { outcome, sent_at: None, buffered: false });
        }
        self.flush(io, &dst, timing);
        let waiting = self.claim_sent.is_some_and(|t| io.now - t < timing.reply_timeout);
        if self.queue.is_empty() && !waiting && self.unacked.len() < MAX_UNACKED {
            let msg = SystemMessage::Claim { kind: DemandKind::Procedural, lease: timing.lease };
            self.claim_sent = io.send(&dst, &msg).ok().map(|_| io.now);
        }
    }
}

#[derive(Debug, Clone)]
struct Awaited {
    demand: Demand,
}

/// Deposits demands with a store and polls it for their results. Demands
/// the store has lost are deposited again.
#[derive(Debug, Default)]
pub struct StoreClient {
    awaited: BTreeMap<DemandSignature, Awaited>,
    results: BTreeMap<DemandSignature, Outcome>,
    last_progress: Option<u64>,
}

impl StoreClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn submit(&mut self, io: &mut TierIo<'_>, dst: Option<&str>, mut demand: Demand) -> DemandSignature {
        let sig = demand.signature;
        if self.results.contains_key(&sig) || self.awaited.contains_key(&sig) {
            return sig;
        }
        if let Some(dst) = dst {
            demand.destination_tier = dst.to_owned();
            let _ = io.send_demand(&demand);
        }
        self.awaited.insert(sig, Awaited { demand });
        self.last_progress.get_or_insert(io.now);
        sig
    }

    pub fn result(&self, sig: &DemandSignature) -> Option<&Outcome> {
        self.results.get(sig)
    }

    pub fn take(&mut self, sig: &DemandSignature) -> Option<Outcome> {
        self.results.remove(sig)
    }

    pub fn outstanding(&self) -> usize {
        self.awaited.len()
    }

    pub(crate) fn poll(&mut self, io: &mut TierIo<'_>, dst: Option<&str>) {
        if let (Some(dst), false) = (dst, self.awaited.is_empty()) {
            let signatures = self.awaited.keys().copied().collect();
            let _ = io.send(dst, &SystemMessage::Fetch { signatures });
        }
    }

    pub(crate) fn on_fetched(
        &mut self,
        io: &mut TierIo<'_>,
        dst: Option<&str>,
        entries: Vec<(DemandSignature, FetchState, Option<Outcome>)>,
    ) {
        self.last_progress = Some(io.now);
        for (sig, state, outcome) in entries {
            match (state, outcome) {
                (FetchState::Computed, Some(o)) => {
                    if self.awaited.remove(&sig).is_some() {
                        self.results.insert(sig, o);
                    }
                }
                (FetchState::NotFound, _) => {
                    if let (Some(a), Some(dst)) = (self.awaited.get_mut(&sig), dst) {
                        a.demand.destination_tier = dst.to_owned();
                        let _ = io.send_demand(&a.demand);
                        io.event("demand_redeposited").properties.insert("sig".into(), sig.hex());
                    }
                }
                _ => {}
            }
        }
        if self.awaited.is_empty() {
            self.last_progress = None;
        }
    }

    /// Sends every outstanding demand to a (new) store.
    pub(crate) fn redirect(&mut self, io: &mut TierIo<'_>, dst: &str) {
        for a in self.awaited.values_mut() {
            a.demand.destination_tier = dst.to_owned();
            let _ = io.send_demand(&a.demand);
        }
    }

    pub fn stalled(&self, now: u64, budget: u64) -> bool {
        !self.awaited.is_empty() && self.last_progress.is_some_and(|t| now.saturating_sub(t) > budget)
    }

    /// Abandons every outstanding demand, returning their signatures.
    pub fn abandon(&mut self) -> Vec<DemandSignature> {
        self.last_progress = None;
        std::mem::take(&mut self.awaited).into_keys().collect()
    }
}

#[derive(Debug)]
struct Job {
    requester: String,
    signature: DemandSignature,
    geer_id: GeerId,
    node: NodeId,
    context: Context,
    machine: Option<Machine>,
    waiting: Option<(DemandSignature, String)>,
}

#[derive(Debug)]
pub struct DgtEngine {
    life: Lifecycle,
    dst: Option<String>,
    geers: BTreeMap<GeerId, Arc<Geer>>,
    geer_requests: BTreeMap<GeerId, u64>,
    jobs: Vec<Job>,
    warehouse: Warehouse,
    store: StoreClient,
    config: EvalConfig,
    procedural_demands: u64,
}

fn error_outcome(e: &EvalError) -> Outcome {
    Outcome::error(e.kind(), e.to_string())
}

impl DgtEngine {
    pub fn new(tier_id: &str, node_id: &str, gmt: &str, config: EvalConfig) -> Self {
        DgtEngine {
            life: Lifecycle::new(tier_id, node_id, TierKind::Dgt, gmt),
            dst: None,
            geers: BTreeMap::new(),
            geer_requests: BTreeMap::new(),
            jobs: Vec::new(),
            warehouse: Warehouse::new(),
            store: StoreClient::new(),
            config,
            procedural_demands: 0,
        }
    }

    pub fn is_registered(&self) -> bool {
        self.life.registered
    }

    pub fn active_jobs(&self) -> usize {
        self.jobs.len()
    }

    pub fn procedural_demands(&self) -> u64 {
        self.procedural_demands
    }

    pub fn warehouse(&self) -> &Warehouse {
        &self.warehouse
    }

    fn request_geer(&mut self, io: &mut TierIo<'_>, id: &GeerId) {
        let d = Demand::resource(id.clone(), &self.life.gmt);
        if io.send_demand(&d).is_ok() {
            io.event("resource_demand").properties.insert("geer".into(), id.0.clone());
        }
        self.geer_requests.insert(id.clone(), io.now);
    }

    fn accept_program(&mut self, io: &mut TierIo<'_>, from: String, d: Demand) {
        let (DemandPayload::Intensional { node, context }, Some(geer_id)) = (d.payload, d.geer_id) else {
            io.unexpected(&from, "program demand without geer");
            return;
        };
        if !self.geers.contains_key(&geer_id) && !self.geer_requests.contains_key(&geer_id) {
            self.request_geer(io, &geer_id);
        }
        self.jobs.push(Job { requester: from, signature: d.signature, geer_id, node, context, machine: None, waiting: None });
    }

    /// Runs a job until it needs a result that is not yet in. Returns the
    /// final outcome once the job is finished.
    fn advance(&mut self, io: &mut TierIo<'_>, j: usize) -> Option<Outcome> {
        let job = &mut self.jobs[j];
        if job.machine.is_none() {
            let geer = self.geers.get(&job.geer_id)?.clone();
            if geer.node(job.node).is_none() {
                return Some(error_outcome(&EvalError::InvalidNode(job.node)));
            }
            job.machine = Some(Machine::new(geer, job.node, job.context.clone(), self.config));
        }
        loop {
            let job = &mut self.jobs[j];
            let machine = job.machine.as_mut().unwrap();
            if let Some((sig, name)) = &job.waiting {
                let outcome = self.store.result(sig)?.clone();
                machine.resume(EvalError::from_outcome(name, outcome));
                job.waiting = None;
            }
            match machine.run(&mut self.warehouse) {
                Step::Done(r) => return Some(r.map(Outcome::Value).unwrap_or_else(|e| error_outcome(&e))),
                Step::Call(req) => {
                    let name = req.name.clone();
                    let demand = Demand::procedural(&req.name, req.args, req.context, "");
                    self.procedural_demands += 1;
                    let sig = self.store.submit(io, self.dst.as_deref(), demand);
                    self.jobs[j].waiting = Some((sig, name));
                }
            }
        }
    }

    pub(crate) fn step(&mut self, io: &mut TierIo<'_>, inbox: Vec<Incoming>, timing: &Timing) {
        for m in inbox {
            match m.body {
                Inbound::Demand(d) if d.kind() == DemandKind::Intensional => self.accept_program(io, m.from, d),
                Inbound::Demand(d) => io.unexpected(&m.from, d.kind().name()),
                Inbound::System(SystemMessage::RegistrationAck { dst, .. }) => {
                    self.life.acknowledged(io);
                    if dst.is_some() {
                        self.dst = dst;
                    }
                }
                Inbound::System(SystemMessage::Resource { geer }) => match Geer::decode(&geer) {
                    Ok(g) => {
                        self.geer_requests.remove(&g.geer_id);
                        self.geers.insert(g.geer_id.clone(), Arc::new(g));
                    }
                    Err(e) => {
                        io.event("resource_rejected").properties.insert("error".into(), e.to_string());
                    }
                },
                Inbound::System(SystemMessage::Fetched { entries }) => {
                    let dst = self.dst.clone();
                    self.store.on_fetched(io, dst.as_deref(), entries);
                }
                Inbound::System(SystemMessage::DstChanged { dst }) => {
                    self.store.redirect(io, &dst);
                    self.dst = Some(dst);
                }
                Inbound::System(other) => io.unexpected(&m.from, other.name()),
            }
        }
        self.life.tick(io, timing);
        if !self.life.registered {
            return;
        }
        let stale: Vec<GeerId> =
            self.geer_requests.iter().filter(|(_, t)| io.now - **t >= timing.reply_timeout).map(|(g, _)| g.clone()).collect();
        for g in stale {
            self.request_geer(io, &g);
        }
        if self.store.stalled(io.now, timing.retry_budget) {
            self.store.abandon();
            io.event("store_unavailable");
            let err = error_outcome(&EvalError::Unavailable("demand store unreachable".into()));
            for job in std::mem::take(&mut self.jobs) {
                self.finish(io, job, err.clone());
            }
        }
        let mut j = 0;
        while j < self.jobs.len() {
            match self.advance(io, j) {
                Some(outcome) => {
                    let job = self.jobs.remove(j);
                    self.finish(io, job, outcome);
                }
                None => j += 1,
            }
        }
        let dst = self.dst.clone();
        self.store.poll(io, dst.as_deref());
    }

    fn finish(&mut self, io: &mut TierIo<'_>, job: Job, outcome: Outcome) {
        io.event("program_computed")
            .properties
            .extend([("sig".into(), job.signature.hex()), ("outcome".into(), outcome.to_string())]);
        let msg = SystemMessage::ProgramResult { signature: job.signature, outcome };
        let _ = io.send(&job.requester, &msg);
    }
}
