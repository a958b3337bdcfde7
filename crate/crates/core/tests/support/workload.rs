//! Fault-injection workload: running-sum and counter demands at t 0..=12.

use eductive::eduction::{DemandSignature, DemandState};
use eductive::tiers::Instance;
use eductive::value::Value;

use super::*;

pub const KILL_POINTS: [u64; 9] = [0, 1, 2, 3, 5, 8, 13, 21, 34];

pub type Expected = Vec<(String, DemandSignature, Option<Value>)>;

pub fn submit_workload(inst: &mut Instance) -> Expected {
    let mut out = Vec::new();
    for (name, src) in [("running-sum", RUNNING_SUM), ("fby-counter", COUNTER)] {
        let g = compiled(src);
        for t in 0..=12 {
            let at = tags(&[("t", t)]);
            let sig = inst.submit_program(&g, None, context(&at)).unwrap();
            out.push((format!("{name}@{t}"), sig, oracle_value(src, &at).ok()));
        }
    }
    out
}

pub fn check(inst: &mut Instance, expected: &Expected, what: &str) {
    assert!(inst.run_until(30_000, |i| i.programs_outstanding() == 0), "{what}: programs outstanding");
    for (label, sig, want) in expected {
        let got = inst.program_result(sig).and_then(outcome_value);
        assert_eq!(&got, want, "{what}: {label}");
    }
    assert_eq!(inst.log().count("delivery_conflict"), 0, "{what}");
    let store = inst.store().expect("store is up");
    assert_eq!(store.count_in(DemandState::Computed), store.len(), "{what}");
}

pub fn no_fault_dump(seed: u64) -> String {
    let mut inst = desk(2, seed);
    let expected = submit_workload(&mut inst);
    check(&mut inst, &expected, "no fault");
    inst.store_dump().unwrap()
}

