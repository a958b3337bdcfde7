//! Hand-written sequential model of the demand store, and the drivers that
//! compare it against the real one.

use std::collections::BTreeMap;
use std::thread;

use eductive::eduction::{
    Context, DeliveryOutcome, Demand, DemandSignature, DemandStore, FetchResult, Outcome, SharedStore,
};
use eductive::value::Value;

pub const LEASE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Deposit(usize),
    Claim(&'static str),
    Deliver(usize, i64, &'static str),
    Fetch(usize),
    Expire,
    Release(&'static str),
}

pub const ALPHABET: [Op; 10] = [
    Op::Deposit(0),
    Op::Deposit(1),
    Op::Claim("w1"),
    Op::Claim("w2"),
    Op::Deliver(0, 1, "w1"),
    Op::Deliver(0, 2, "w2"),
    Op::Deliver(1, 1, "w1"),
    Op::Fetch(0),
    Op::Expire,
    Op::Release("w1"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Res {
    Deposited(usize),
    Claimed(Option<usize>),
    Delivered(Option<DeliveryOutcome>),
    Fetched(&'static str, Option<i64>),
    Reverted(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum St {
    Pending,
    InProcess,
    Computed,
}

#[derive(Debug, Clone)]
pub struct Entry {
    seq: u64,
    st: St,
    holder: Option<(&'static str, u64)>,
    value: Option<i64>,
}

#[derive(Debug, Clone, Default)]
pub struct Model {
    entries: BTreeMap<usize, Entry>,
    next: u64,
}

impl Model {
    pub fn apply(&mut self, op: Op, now: u64) -> Res {
        match op {
            Op::Deposit(d) => {
                if !self.entries.contains_key(&d) {
                    self.entries.insert(d, Entry { seq: self.next, st: St::Pending, holder: None, value: None });
                    self.next += 1;
                }
                Res::Deposited(d)
            }
            Op::Claim(w) => {
                let oldest = self.entries.iter().filter(|(_, e)| e.st == St::Pending).min_by_key(|(_, e)| e.seq).map(|(d, _)| *d);
                if let Some(d) = oldest {
                    let e = self.entries.get_mut(&d).unwrap();
                    e.st = St::InProcess;
                    e.holder = Some((w, now + LEASE));
                }
                Res::Claimed(oldest)
            }
            Op::Deliver(d, v, _) => match self.entries.get_mut(&d) {
                None => Res::Delivered(None),
                Some(e) => Res::Delivered(Some(match e.value {
                    Some(x) if x == v => DeliveryOutcome::Duplicate,
                    Some(_) => DeliveryOutcome::Conflict,
                    None => {
                        e.value = Some(v);
                        e.st = St::Computed;
                        e.holder = None;
                        DeliveryOutcome::Accepted
                    }
                })),
            },
            Op::Fetch(d) => match self.entries.get(&d) {
                None => Res::Fetched("missing", None),
                Some(e) => match e.st {
                    St::Pending => Res::Fetched("pending", None),
                    St::InProcess => Res::Fetched("in_process", None),
                    St::Computed => Res::Fetched("computed", e.value),
                },
            },
            Op::Expire => self.revert(|(_, deadline)| deadline < now),
            Op::Release(w) => self.revert(|(holder, _)| holder == w),
        }
    }

    fn revert(&mut self, pred: impl Fn((&'static str, u64)) -> bool) -> Res {
        let mut hit: Vec<(u64, usize)> = self
            .entries
            .iter()
            .filter(|(_, e)| e.st == St::InProcess && e.holder.is_some_and(&pred))
            .map(|(d, e)| (e.seq, *d))
            .collect();
        hit.sort();
        for (_, d) in &hit {
            let e = self.entries.get_mut(d).unwrap();
            e.st = St::Pending;
            e.holder = None;
        }
        Res::Reverted(hit.into_iter().map(|(_, d)| d).collect())
    }
}

pub fn demand(d: usize) -> Demand {
    Demand::procedural("add", vec![Value::Int(d as i64), Value::Int(1)], Context::new(), "T2")
}

pub fn sigs() -> [DemandSignature; 2] {
    [demand(0).signature, demand(1).signature]
}

pub fn label(sig: &DemandSignature) -> usize {
    sigs().iter().position(|s| s == sig).expect("known signature")
}

pub fn apply(store: &mut DemandStore, op: Op, now: u64) -> Res {
    let s = sigs();
    let labels = |v: Vec<DemandSignature>| v.iter().map(label).collect();
    match op {
        Op::Deposit(d) => Res::Deposited(label(&store.deposit(demand(d), now).unwrap())),
        Op::Claim(w) => Res::Claimed(store.claim(None, w, LEASE, now).unwrap().map(|d| label(&d.signature))),
        Op::Deliver(d, v, w) => Res::Delivered(store.deliver(&s[d], Outcome::Value(Value::Int(v)), w, now).ok()),
        Op::Fetch(d) => fetched(store, d),
        Op::Expire => Res::Reverted(labels(store.expire_leases(now))),
        Op::Release(w) => Res::Reverted(labels(store.release_claims(w, now))),
    }
}

pub fn fetched(store: &DemandStore, d: usize) -> Res {
    match store.fetch(&sigs()[d]) {
        FetchResult::NotFound => Res::Fetched("missing", None),
        FetchResult::Pending => Res::Fetched("pending", None),
        FetchResult::InProcess => Res::Fetched("in_process", None),
        FetchResult::Computed(Outcome::Value(v)) => Res::Fetched("computed", v.as_int()),
        FetchResult::Computed(o) => panic!("unexpected outcome {o:?}"),
    }
}

pub fn observe(store: &DemandStore) -> Vec<Res> {
    (0..2).map(|d| fetched(store, d)).collect()
}

pub fn model_observe(m: &Model) -> Vec<Res> {
    (0..2).map(|d| m.clone().apply(Op::Fetch(d), 0)).collect()
}

pub fn sequences(max: usize) -> Vec<Vec<Op>> {
    let mut all = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max {
        let mut next = Vec::new();
        for seq in &frontier {
            for op in ALPHABET {
                let mut s: Vec<Op> = seq.clone();
                s.push(op);
                next.push(s);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

pub fn check_from(prefix: &[Op]) -> usize {
    let mut checked = 0;
    for seq in sequences(3) {
        let mut store = DemandStore::new("T2");
        let mut model = Model::default();
        for (now, op) in prefix.iter().chain(&seq).enumerate() {
            let now = now as u64 * 2;
            assert_eq!(apply(&mut store, *op, now), model.apply(*op, now), "{prefix:?} then {seq:?}");
        }
        assert_eq!(observe(&store), model_observe(&model), "{prefix:?} then {seq:?}");
        checked += 1;
    }
    checked
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn threaded(prefix: &[Op], ops: &[Op]) {
    const NOW: u64 = 10;
    let mut base = DemandStore::new("T2");
    let mut model = Model::default();
    for op in prefix {
        apply(&mut base, *op, NOW);
        model.apply(*op, NOW);
    }
    let shared = SharedStore::new(base);
    let handles: Vec<_> = ops
        .iter()
        .map(|op| {
            let (store, op) = (shared.clone(), *op);
            thread::spawn(move || store.with(|s| apply(s, op, NOW)))
        })
        .collect();
    let results: Vec<Res> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let final_state = shared.with(|s| observe(s));
    let linearizable = permutations(ops.len()).into_iter().any(|order| {
        let mut m = model.clone();
        let mut expect = vec![None; ops.len()];
        for i in order {
            expect[i] = Some(m.apply(ops[i], NOW));
        }
        expect.into_iter().map(Option::unwrap).collect::<Vec<_>>() == results && model_observe(&m) == final_state
    });
    assert!(linearizable, "{prefix:?} {ops:?} gave {results:?}");
}


/// Prefix and three concurrent operations per case.
pub fn linearization_cases() -> Vec<(Vec<Op>, Vec<Op>)> {
    let seeded = [Op::Deposit(0), Op::Deposit(1)];
    vec![
        (vec![], vec![Op::Deposit(0), Op::Deposit(0), Op::Claim("w1")]),
        (seeded.to_vec(), vec![Op::Claim("w1"), Op::Claim("w2"), Op::Claim("w1")]),
        (seeded.to_vec(), vec![Op::Deliver(0, 1, "w1"), Op::Deliver(0, 2, "w2"), Op::Fetch(0)]),
        (seeded.to_vec(), vec![Op::Claim("w1"), Op::Release("w1"), Op::Deliver(1, 1, "w1")]),
        (seeded.to_vec(), vec![Op::Claim("w2"), Op::Expire, Op::Fetch(0)]),
    ]
}
