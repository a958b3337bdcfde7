mod support;

use std::path::Path;

use eductive::pipeline::{
    synthesize, ClassificationService, Configuration, Corpus, InstanceExecutor, LocalExecutor, Pipeline, Report,
    SynthSpec, TrainingSet,
};
use eductive::recovery::{decode_log, encode_log, replay, TxnEvent, WriteAheadLogger};
use support::centroid::NearestCentroid;
use support::*;

fn corpora() -> (tempfile::TempDir, Corpus, Corpus) {
    let dir = tempfile::tempdir().unwrap();
    let train = synthesize(&dir.path().join("train"), SynthSpec::default()).unwrap();
    let held = synthesize(&dir.path().join("held"), held_out_spec()).unwrap();
    (dir, train, held)
}

fn local(train: &Corpus, test: &Corpus) -> (Report, TrainingSet) {
    let mut p = Pipeline::new(Configuration::default(), LocalExecutor::new()).unwrap();
    p.train(train).unwrap();
    let r = p.classify(test).unwrap();
    (r, p.training_set().unwrap().clone())
}

type Ranking = Option<Vec<(i64, u64)>>;

fn bits(r: &Report) -> Vec<(String, Ranking)> {
    r.lines
        .iter()
        .map(|l| (l.name.clone(), l.result.as_ref().ok().map(|rs| rs.ranked.iter().map(|(s, d)| (*s, d.to_bits())).collect())))
        .collect()
}

fn samples(c: &Corpus) -> Vec<(i64, &Path)> {
    c.entries.iter().map(|e| (e.subject, e.path.as_path())).collect()
}

#[test]
fn distributed_report_equals_local() {
    let (_dir, train, held) = corpora();
    let (want, want_set) = local(&train, &held);
    let mut inst = pipeline_desk(2, 7);
    let mut p = Pipeline::new(Configuration::default(), InstanceExecutor::new(&mut inst)).unwrap();
    p.train(&train).unwrap();
    let got = p.classify(&held).unwrap();
    assert_eq!(p.training_set().unwrap(), &want_set);
    assert_eq!(got.to_string(), want.to_string());
    assert_eq!(bits(&got), bits(&want));
    assert_eq!(got.accuracy.to_bits(), want.accuracy.to_bits());
    drop(p);
    assert!(inst.log().count("stage_entered") >= 6);
}

#[test]
fn closed_set_accuracy_is_total() {
    let (_dir, train, _) = corpora();
    let (r, _) = local(&train, &train);
    assert_eq!(r.accuracy, 1.0, "{r}");
}

#[test]
fn held_out_accuracy_matches_the_oracle() {
    let (_dir, train, held) = corpora();
    let oracle = NearestCentroid::fit(&samples(&train));
    let (r, _) = local(&train, &held);
    for (line, entry) in r.lines.iter().zip(&held.entries) {
        assert_eq!(line.result.as_ref().unwrap().top(), Some(oracle.predict(&entry.path)), "{}", line.name);
    }
    assert_eq!(oracle.accuracy(&samples(&held)), HELD_OUT_ACCURACY);
    assert_eq!(r.accuracy, HELD_OUT_ACCURACY);
    assert!(r.accuracy >= HELD_OUT_FLOOR);
}

#[test]
fn worker_killed_mid_pipeline() {
    let (_dir, train, held) = corpora();
    let (want, _) = local(&train, &held);
    let mut inst = pipeline_desk(2, 7);
    let mut ticks = 0u64;
    let exec = InstanceExecutor::new(&mut inst).with_hook(move |i| {
        ticks += 1;
        if ticks == 40 {
            i.kill("T4").unwrap();
        }
    });
    let mut p = Pipeline::new(Configuration::default(), exec).unwrap();
    p.train(&train).unwrap();
    let got = p.classify(&held).unwrap();
    assert_eq!(got.to_string(), want.to_string());
    drop(p);
    assert!(inst.healing_reports().iter().any(|r| r.failed == "T4" && r.replacement.is_some()));
}

#[test]
fn crash_between_compute_and_commit() {
    let (_dir, train, held) = corpora();
    let mut p = Pipeline::new(Configuration::default(), LocalExecutor::new()).unwrap();
    p.train(&train).unwrap();
    let want = p.classify(&held).unwrap();
    let log = p.service().logger().bytes();
    let entries = decode_log(&log).unwrap().entries;
    let commits: Vec<usize> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.operation == "classify" && e.event == Some(TxnEvent::Commit))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(commits.len(), held.len());
    for (k, &at) in commits.iter().enumerate() {
        let prefix = encode_log(&entries[..at]);
        let (state, report) = replay::<ClassificationService>(&prefix, None).unwrap();
        assert_eq!(state.results.len(), k, "crash before commit {k}");
        assert!(!report.discarded.is_empty());
        assert_eq!(state.training.as_ref(), p.training_set());

        let mut again =
            Pipeline::with_logger(Configuration::default(), LocalExecutor::new(), WriteAheadLogger::resume_in_memory(&prefix).unwrap())
                .unwrap();
        again.install(state.training.as_ref().unwrap()).unwrap();
        let redone = again.classify(&held).unwrap();
        assert_eq!(bits(&redone), bits(&want));
        let (after, _) = replay::<ClassificationService>(&again.service().logger().bytes(), None).unwrap();
        assert_eq!(after.results, p.service().state().results);
    }
}
