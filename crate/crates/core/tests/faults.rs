mod support;

use support::workload::*;
use support::*;

#[test]
fn killing_any_worker_at_any_point_preserves_results() {
    let mut interrupted = 0;
    for worker in ["T4", "T5", "T6"] {
        for at in KILL_POINTS {
            let what = format!("{worker} killed at +{at}");
            let mut inst = desk(3, 5);
            let expected = submit_workload(&mut inst);
            inst.step_n(at);
            inst.kill(worker).unwrap();
            check(&mut inst, &expected, &what);
            let report = inst.healing_reports().iter().find(|r| r.failed == worker);
            assert!(report.is_some_and(|r| r.replacement.is_some()), "{what}");
            interrupted += inst.log().count("claim_released") + inst.log().count("lease_expired");
        }
    }
    assert!(interrupted > 0, "no kill point caught a worker mid-demand");
}

#[test]
fn killing_every_worker_in_turn() {
    let mut inst = desk(2, 9);
    let expected = submit_workload(&mut inst);
    inst.step_n(4);
    inst.kill("T4").unwrap();
    inst.step_n(40);
    inst.kill("T5").unwrap();
    check(&mut inst, &expected, "rolling kills");
    assert_eq!(inst.healing_reports().len(), 2);
}

#[test]
fn store_failure_is_healed_from_its_log() {
    let baseline = no_fault_dump(13);
    for at in KILL_POINTS {
        let what = format!("store killed at +{at}");
        let mut inst = desk(2, 13);
        let expected = submit_workload(&mut inst);
        inst.step_n(at);
        inst.kill("T2").unwrap();
        check(&mut inst, &expected, &what);
        let report = inst.healing_reports().iter().find(|r| r.failed == "T2").expect("store healed");
        assert!(report.replayed.is_some(), "{what}");
        assert_ne!(inst.gmt().dst(), Some("T2"));
        assert_eq!(inst.store_dump().unwrap(), baseline, "{what}");
    }
}

#[test]
fn store_restart_delivers_buffered_results() {
    let baseline = no_fault_dump(17);
    let mut inst = desk(2, 17);
    inst.set_auto_heal(false);
    let expected = submit_workload(&mut inst);
    assert!(inst.run_until(500, |i| i.status().store.is_some_and(|s| s.in_process >= 1)));
    inst.kill("T2").unwrap();
    inst.step_n(10);
    assert!(inst.log().count("result_buffered") >= 1);
    inst.restart("T2").unwrap();
    check(&mut inst, &expected, "store restart");
    assert_eq!(inst.log().count("wal_replayed"), 1);
    assert!(inst.log().count("buffered_result_delivered") >= 1);
    assert_eq!(inst.store_dump().unwrap(), baseline);
}

#[test]
fn lossy_links_do_not_change_results() {
    use eductive::transport::LinkFault;
    let mut inst = desk(2, 23);
    let expected = submit_workload(&mut inst);
    inst.set_link_fault("T4", "T2", LinkFault { drop_probability: 0.3, ..LinkFault::default() });
    inst.set_link_fault("T2", "T5", LinkFault { extra_delay_ticks: 3, ..LinkFault::default() });
    check(&mut inst, &expected, "lossy links");
}
