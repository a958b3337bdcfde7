//! The demand store: the shared rendezvous where generators deposit demands
//! and workers claim them and hand back results.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use super::demand::{Claim, Demand, DemandKind, DemandSignature, DemandState, Outcome};
use super::EductionError;
use crate::forensic::ForensicEvent;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreEntry {
    pub demand: Demand,
    pub value: Option<Outcome>,
    pub forensic: Vec<String>,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryOutcome {
    Accepted,
    Duplicate,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchResult {
    NotFound,
    Pending,
    InProcess,
    Computed(Outcome),
}

pub type ResultObserver = Box<dyn FnMut(&DemandSignature, &Outcome) + Send>;

/// Times are milliseconds on whatever clock the owner runs (wall clock in
/// real mode, ticks in simulation).
pub struct DemandStore {
    emitter: String,
    entries: HashMap<DemandSignature, StoreEntry>,
    pending: BTreeMap<u64, DemandSignature>,
    next_seq: u64,
    observers: Vec<ResultObserver>,
    events: Vec<ForensicEvent>,
    available: bool,
}

impl std::fmt::Debug for DemandStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DemandStore")
            .field("emitter", &self.emitter)
            .field("entries", &self.entries.len())
            .field("pending", &self.pending.len())
            .finish()
    }
}

impl DemandStore {
    pub fn new(emitter: impl Into<String>) -> Self {
        DemandStore {
            emitter: emitter.into(),
            entries: HashMap::new(),
            pending: BTreeMap::new(),
            next_seq: 0,
            observers: Vec::new(),
            events: Vec::new(),
            available: true,
        }
    }

    pub fn set_emitter(&mut self, emitter: impl Into<String>) {
        self.emitter = emitter.into();
    }

    /// Fault injection: an unavailable store fails every operation with
    /// `StoreUnavailable`.
    pub fn set_available(&mut self, available: bool) {
        self.available = available;
    }

    fn check_available(&self) -> Result<(), EductionError> {
        if self.available {
            Ok(())
        } else {
            Err(EductionError::StoreUnavailable)
        }
    }

    fn event(&mut self, name: &str, sig: &DemandSignature, now: u64) -> &mut ForensicEvent {
        let e = ForensicEvent::new(name, self.emitter.clone(), now * 1000).with("sig", sig.hex());
        self.events.push(e);
        self.events.last_mut().unwrap()
    }

    pub fn add_observer(&mut self, observer: ResultObserver) {
        self.observers.push(observer);
    }

    /// Drains forensic events recorded since the last call.
    pub fn take_events(&mut self) -> Vec<ForensicEvent> {
        std::mem::take(&mut self.events)
    }

    /// Idempotent: a signature already present (in any state) is left
    /// untouched and its signature returned.
    pub fn deposit(&mut self, demand: Demand, now: u64) -> Result<DemandSignature, EductionError> {
        self.check_available()?;
        if demand.state != DemandState::Pending {
            return Err(EductionError::InvalidDemand("only pending demands can be deposited".into()));
        }
        let sig = demand.signature;
        if self.entries.contains_key(&sig) {
            return Ok(sig);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let kind = demand.kind();
        self.entries.insert(sig, StoreEntry { demand, value: None, forensic: Vec::new(), seq });
        self.pending.insert(seq, sig);
        self.event("demand_deposited", &sig, now).properties.insert("kind".into(), kind.name().into());
        Ok(sig)
    }

    /// Atomically moves the oldest matching pending demand to in-process.
    pub fn claim(
        &mut self,
        kind_filter: Option<DemandKind>,
        worker: &str,
        lease_millis: u64,
        now: u64,
    ) -> Result<Option<Demand>, EductionError> {
        self.check_available()?;
        if lease_millis == 0 {
            return Err(EductionError::InvalidDemand("lease must be positive".into()));
        }
        let found = self
            .pending
            .iter()
            .find(|(_, sig)| kind_filter.is_none_or(|k| self.entries[*sig].demand.kind() == k))
            .map(|(seq, sig)| (*seq, *sig));
        let Some((seq, sig)) = found else { return Ok(None) };
        self.pending.remove(&seq);
        let entry = self.entries.get_mut(&sig).expect("pending entries exist");
        entry.demand.state = DemandState::InProcess;
        entry.demand.claim = Some(Claim { worker: worker.to_owned(), lease_deadline: now + lease_millis });
        let demand = entry.demand.clone();
        self.event("demand_claimed", &sig, now).properties.insert("worker".into(), worker.to_owned());
        Ok(Some(demand))
    }

    /// First delivery wins. Later deliveries of an equal outcome are
    /// duplicates; a different outcome is a conflict that leaves the stored
    /// result unchanged and leaves a forensic note.
    pub fn deliver(
        &mut self,
        sig: &DemandSignature,
        outcome: Outcome,
        worker: &str,
        now: u64,
    ) -> Result<DeliveryOutcome, EductionError> {
        self.check_available()?;
        let entry = self.entries.get_mut(sig).ok_or(EductionError::UnknownSignature(*sig))?;
        match &entry.value {
            Some(existing) if *existing == outcome => {
                self.event("delivery_duplicate", sig, now).properties.insert("worker".into(), worker.to_owned());
                Ok(DeliveryOutcome::Duplicate)
            }
            Some(existing) => {
                let note = format!("conflicting delivery from {worker}: kept {existing}, rejected {outcome}");
                entry.forensic.push(note);
                let e = self.event("delivery_conflict", sig, now);
                e.properties.insert("worker".into(), worker.to_owned());
                e.properties.insert("rejected".into(), outcome.to_string());
                Ok(DeliveryOutcome::Conflict)
            }
            None => {
                if entry.demand.state == DemandState::Pending {
                    self.pending.remove(&entry.seq);
                }
                entry.demand.state = DemandState::Computed;
                entry.demand.claim = None;
                entry.value = Some(outcome.clone());
                for obs in &mut self.observers {
                    obs(sig, &outcome);
                }
                self.event("demand_computed", sig, now).properties.insert("worker".into(), worker.to_owned());
                Ok(DeliveryOutcome::Accepted)
            }
        }
    }

    pub fn fetch(&self, sig: &DemandSignature) -> FetchResult {
        match self.entries.get(sig) {
            None => FetchResult::NotFound,
            Some(e) => match (e.demand.state, &e.value) {
                (DemandState::Computed, Some(v)) => FetchResult::Computed(v.clone()),
                (DemandState::InProcess, _) => FetchResult::InProcess,
                _ => FetchResult::Pending,
            },
        }
    }

    pub fn entry(&self, sig: &DemandSignature) -> Option<&StoreEntry> {
        self.entries.get(sig)
    }

    /// Reverts every in-process demand whose lease deadline has passed.
    pub fn expire_leases(&mut self, now: u64) -> Vec<DemandSignature> {
        self.revert_where(now, "lease_expired", |c| c.lease_deadline < now)
    }

    /// Reverts every claim held by `worker` (deallocation and healing).
    pub fn release_claims(&mut self, worker: &str, now: u64) -> Vec<DemandSignature> {
        self.revert_where(now, "claim_released", |c| c.worker == worker)
    }

    fn revert_where(&mut self, now: u64, event: &str, pred: impl Fn(&Claim) -> bool) -> Vec<DemandSignature> {
        let mut reverted: Vec<(u64, DemandSignature)> = self
            .entries
            .values()
            .filter(|e| e.demand.state == DemandState::InProcess && e.demand.claim.as_ref().is_some_and(&pred))
            .map(|e| (e.seq, e.demand.signature))
            .collect();
        reverted.sort();
        for (seq, sig) in &reverted {
            let entry = self.entries.get_mut(sig).unwrap();
            let worker = entry.demand.claim.take().map(|c| c.worker).unwrap_or_default();
            entry.demand.state = DemandState::Pending;
            self.pending.insert(*seq, *sig);
            self.event(event, sig, now).properties.insert("worker".into(), worker);
        }
        reverted.into_iter().map(|(_, s)| s).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_in(&self, state: DemandState) -> usize {
        self.entries.values().filter(|e| e.demand.state == state).count()
    }

    /// Entries in deposit order.
    pub fn entries(&self) -> Vec<&StoreEntry> {
        let mut all: Vec<&StoreEntry> = self.entries.values().collect();
        all.sort_by_key(|e| e.seq);
        all
    }

    /// One line per entry, sorted by signature:
    /// `<signature> <kind> <state> <value?>`.
    pub fn dump(&self) -> String {
        let mut lines: Vec<String> = self
            .entries
            .values()
            .map(|e| {
                let mut line = format!("{} {} {}", e.demand.signature, e.demand.kind().name(), e.demand.state.name());
                if let Some(v) = &e.value {
                    line.push(' ');
                    line.push_str(&v.to_string());
                }
                line
            })
            .collect();
        lines.sort();
        let mut out = lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }
}

/// Store shared between threads; every operation holds the lock for its
/// whole duration, which makes claim atomic.
#[derive(Clone, Debug)]
pub struct SharedStore(Arc<Mutex<DemandStore>>);

impl SharedStore {
    pub fn new(store: DemandStore) -> Self {
        SharedStore(Arc::new(Mutex::new(store)))
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut DemandStore) -> R) -> R {
        let mut guard = self.0.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eduction::Context;
    use crate::value::Value;

    fn proc_demand(n: i64) -> Demand {
        Demand::procedural("add", vec![Value::Int(n), Value::Int(1)], Context::new(), "T2")
    }

    fn int(v: i64) -> Outcome {
        Outcome::Value(Value::Int(v))
    }

    #[test]
    fn deposit_is_idempotent() {
        let mut s = DemandStore::new("T2");
        let d = proc_demand(1);
        assert_eq!(s.deposit(d.clone(), 0).unwrap(), d.signature);
        assert_eq!(s.deposit(d.clone(), 1).unwrap(), d.signature);
        assert_eq!(s.len(), 1);
        assert_eq!(s.fetch(&d.signature), FetchResult::Pending);
    }

    #[test]
    fn deposit_after_computed_leaves_value() {
        let mut s = DemandStore::new("T2");
        let d = proc_demand(1);
        s.deposit(d.clone(), 0).unwrap();
        s.claim(None, "w", 10, 0).unwrap().unwrap();
        s.deliver(&d.signature, int(2), "w", 1).unwrap();
        s.deposit(d.clone(), 2).unwrap();
        assert_eq!(s.fetch(&d.signature), FetchResult::Computed(int(2)));
        assert_eq!(s.count_in(DemandState::Pending), 0);
    }

    #[test]
    fn claim_is_fifo_and_filters_by_kind() {
        let mut s = DemandStore::new("T2");
        assert_eq!(s.claim(None, "w", 10, 0).unwrap(), None);
        let i = Demand::intensional(crate::lang::GeerId("00".repeat(16)), 1, Context::new(), "T2");
        let a = proc_demand(1);
        let b = proc_demand(2);
        s.deposit(i.clone(), 0).unwrap();
        s.deposit(a.clone(), 0).unwrap();
        s.deposit(b.clone(), 0).unwrap();
        let got = s.claim(Some(DemandKind::Procedural), "w", 10, 0).unwrap().unwrap();
        assert_eq!(got.signature, a.signature);
        assert_eq!(got.state, DemandState::InProcess);
        assert_eq!(got.claim.unwrap().lease_deadline, 10);
        let got = s.claim(Some(DemandKind::Procedural), "w", 10, 0).unwrap().unwrap();
        assert_eq!(got.signature, b.signature);
        assert_eq!(s.claim(Some(DemandKind::Procedural), "w", 10, 0).unwrap(), None);
        assert_eq!(s.fetch(&i.signature), FetchResult::Pending);
    }

    #[test]
    fn delivery_outcomes_and_single_notification() {
        let mut s = DemandStore::new("T2");
        let notified = Arc::new(Mutex::new(Vec::new()));
        let sink = notified.clone();
        s.add_observer(Box::new(move |sig, o| sink.lock().unwrap().push((*sig, o.clone()))));
        let d = proc_demand(4);
        s.deposit(d.clone(), 0).unwrap();
        s.claim(None, "w1", 10, 0).unwrap();
        assert_eq!(s.deliver(&d.signature, int(5), "w1", 1).unwrap(), DeliveryOutcome::Accepted);
        assert_eq!(s.deliver(&d.signature, int(5), "w2", 2).unwrap(), DeliveryOutcome::Duplicate);
        assert_eq!(s.deliver(&d.signature, int(6), "w3", 3).unwrap(), DeliveryOutcome::Conflict);
        assert_eq!(s.fetch(&d.signature), FetchResult::Computed(int(5)));
        assert_eq!(notified.lock().unwrap().len(), 1);
        assert_eq!(s.entry(&d.signature).unwrap().forensic.len(), 1);
        let names: Vec<_> = s.take_events().into_iter().map(|e| e.name).collect();
        assert!(names.contains(&"delivery_conflict".to_owned()));
    }

    #[test]
    fn unknown_signature_delivery() {
        let mut s = DemandStore::new("T2");
        let d = proc_demand(1);
        assert_eq!(s.deliver(&d.signature, int(1), "w", 0), Err(EductionError::UnknownSignature(d.signature)));
        assert_eq!(s.fetch(&d.signature), FetchResult::NotFound);
    }

    #[test]
    fn lease_expiry_reverts_and_allows_reclaim() {
        let mut s = DemandStore::new("T2");
        let d = proc_demand(1);
        s.deposit(d.clone(), 0).unwrap();
        s.claim(None, "w1", 5, 0).unwrap();
        assert!(s.expire_leases(5).is_empty(), "deadline not yet passed");
        assert_eq!(s.expire_leases(6), vec![d.signature]);
        assert_eq!(s.fetch(&d.signature), FetchResult::Pending);
        let again = s.claim(None, "w2", 5, 6).unwrap().unwrap();
        assert_eq!(again.claim.unwrap().worker, "w2");
        assert_eq!(s.deliver(&d.signature, int(2), "w2", 7).unwrap(), DeliveryOutcome::Accepted);
        assert_eq!(s.fetch(&d.signature), FetchResult::Computed(int(2)));
    }

    #[test]
    fn late_delivery_after_revert_is_accepted_once() {
        let mut s = DemandStore::new("T2");
        let d = proc_demand(1);
        s.deposit(d.clone(), 0).unwrap();
        s.claim(None, "w1", 1, 0).unwrap();
        s.expire_leases(5);
        assert_eq!(s.deliver(&d.signature, int(2), "w1", 6).unwrap(), DeliveryOutcome::Accepted);
        assert_eq!(s.claim(None, "w2", 5, 6).unwrap(), None, "no longer pending");
    }

    #[test]
    fn release_claims_of_worker() {
        let mut s = DemandStore::new("T2");
        let (a, b) = (proc_demand(1), proc_demand(2));
        s.deposit(a.clone(), 0).unwrap();
        s.deposit(b.clone(), 0).unwrap();
        s.claim(None, "w1", 100, 0).unwrap();
        s.claim(None, "w2", 100, 0).unwrap();
        assert_eq!(s.release_claims("w1", 1), vec![a.signature]);
        assert_eq!(s.fetch(&b.signature), FetchResult::InProcess);
    }

    #[test]
    fn unavailable_store_fails_operations() {
        let mut s = DemandStore::new("T2");
        s.set_available(false);
        assert_eq!(s.deposit(proc_demand(1), 0), Err(EductionError::StoreUnavailable));
        assert_eq!(s.claim(None, "w", 1, 0), Err(EductionError::StoreUnavailable));
    }

    #[test]
    fn dump_format() {
        let mut s = DemandStore::new("T2");
        let d = proc_demand(1);
        s.deposit(d.clone(), 0).unwrap();
        assert_eq!(s.dump(), format!("{} procedural pending\n", d.signature));
        s.claim(None, "w", 1, 0).unwrap();
        s.deliver(&d.signature, int(2), "w", 0).unwrap();
        assert_eq!(s.dump(), format!("{} procedural computed 2\n", d.signature));
    }

    #[test]
    fn racing_claims_hand_out_one_demand() {
        for _ in 0..50 {
            let shared = SharedStore::new(DemandStore::new("T2"));
            shared.with(|s| s.deposit(proc_demand(1), 0)).unwrap();
            let handles: Vec<_> = (0..4)
                .map(|i| {
                    let st = shared.clone();
                    std::thread::spawn(move || st.with(|s| s.claim(None, &format!("w{i}"), 10, 0)).unwrap().is_some())
                })
                .collect();
            let claimed = handles.into_iter().map(|h| h.join().unwrap()).filter(|&c| c).count();
            assert_eq!(claimed, 1);
        }
    }
}
