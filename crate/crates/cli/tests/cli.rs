use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use eductive::lang::Geer;

const SECRET: &str = "cli-test-secret";

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn cmd() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_eductive"));
    c.env("EDUCTIVE_INSTANCE_SECRET", SECRET);
    c
}

fn run(args: &[&str]) -> Output {
    cmd().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn source(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const PROGRAMS: [(&str, &str, &str); 4] = [
    ("nat.lucid", "N where dimension t; N = 0 fby.t (N + 1); end", "N @ {t:5}"),
    ("fib.lucid", "fib where dimension t; fib = if #t <= 1 then #t else fib@t:(#t-1) + fib@t:(#t-2); end", "{t:15}"),
    ("sum.lucid", "S where dimension t; X = square(#t); S = X fby.t add(S, X @ t:(#t + 1)); end", "S @ {t:8}"),
    ("div.lucid", "X where dimension t; X = 10 / #t; end", "X @ {t:0}"),
];

#[test]
fn compile_writes_a_decodable_geer() {
    let dir = tempfile::tempdir().unwrap();
    let src = source(dir.path(), "nat.lucid", PROGRAMS[0].1);
    let o = run(&["compile", s(&src)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("nat.geer.json");
    assert_eq!(stdout(&o).trim(), s(&out));
    let g = Geer::decode(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(g, eductive::lang::compile(PROGRAMS[0].1).unwrap());

    let explicit = dir.path().join("x.json");
    assert_eq!(code(&run(&["compile", s(&src), s(&explicit)])), 0);
    assert_eq!(std::fs::read(&explicit).unwrap(), std::fs::read(&out).unwrap());
}

#[test]
fn compile_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let syntax = source(dir.path(), "a.lucid", "N where\n  dimension t;\n  N = 0 fby.t (N + );\nend\n");
    let o = run(&["compile", s(&syntax)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("a.lucid:3:"), "{}", stderr(&o));
    assert!(stderr(&o).contains("syntax error"));

    let semantic = source(dir.path(), "b.lucid", "N where\n  dimension t;\n\n  N = M + 1;\nend\n");
    let o = run(&["compile", s(&semantic)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("b.lucid:4:"), "{}", stderr(&o));
    assert!(stderr(&o).contains("`M`"));
    assert!(!dir.path().join("b.geer.json").exists());
}

#[test]
fn compile_io_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["compile", s(&dir.path().join("missing.lucid"))]);
    assert_eq!(code(&o), 2);
    let src = source(dir.path(), "nat.lucid", PROGRAMS[0].1);
    let o = run(&["compile", s(&src), s(&dir.path().join("no/such/dir/out.json"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

fn compiled(dir: &Path, name: &str, text: &str) -> PathBuf {
    let src = source(dir, name, text);
    assert_eq!(code(&run(&["compile", s(&src)])), 0);
    src.with_extension("geer.json")
}

#[test]
fn eval_local_and_instance_agree() {
    let dir = tempfile::tempdir().unwrap();
    let want = ["5", "610", "204", "error:divide_by_zero:division_by_zero"];
    for ((name, text, demand), want) in PROGRAMS.iter().zip(want) {
        let geer = compiled(dir.path(), name, text);
        let local = run(&["eval", s(&geer), demand, "--local"]);
        let inst = run(&["eval", s(&geer), demand, "--instance"]);
        assert_eq!(stdout(&local).trim(), want, "{name}");
        assert_eq!(stdout(&local), stdout(&inst), "{name}");
        let ok = !want.starts_with("error");
        assert_eq!(code(&local), if ok { 0 } else { 1 });
        assert_eq!(code(&inst), code(&local));
    }
    let default_mode = run(&["eval", s(&dir.path().join("nat.geer.json")), "N @ {t:3}"]);
    assert_eq!(stdout(&default_mode).trim(), "3");
}

#[test]
fn eval_accepts_source_and_rejects_bad_demands() {
    let dir = tempfile::tempdir().unwrap();
    let src = source(dir.path(), "nat.lucid", PROGRAMS[0].1);
    assert_eq!(stdout(&run(&["eval", s(&src), "N @ {t:4}"])).trim(), "4");
    for bad in ["N @ {q:1}", "M @ {t:1}", "N @ {t:x}", "1N @ {t:1}"] {
        let o = run(&["eval", s(&src), bad]);
        assert_eq!(code(&o), 1, "{bad}");
        assert!(stderr(&o).contains("invalid demand"), "{bad}: {}", stderr(&o));
        assert!(stdout(&o).is_empty());
    }
    let garbage = source(dir.path(), "g.geer.json", "{\"not\": \"a geer\"}");
    assert_eq!(code(&run(&["eval", s(&garbage), "{t:1}"])), 1);
    assert_eq!(code(&run(&["eval", s(&dir.path().join("none.geer.json")), "{t:1}"])), 2);
}

#[test]
fn sim_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.log"), dir.path().join("b.log"), dir.path().join("c.log"));
    let topo = data("topology.json");
    let scen = data("scenario.json");
    let first = run(&["sim", s(&topo), s(&scen), "--seed", "7", "-o", s(&a)]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let second = cmd()
        .env_remove("EDUCTIVE_INSTANCE_SECRET")
        .args(["sim", s(&topo), s(&scen), "--seed", "7", "-o", s(&b)])
        .output()
        .unwrap();
    assert_eq!(code(&second), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(stdout(&first), stdout(&second));
    assert!(stdout(&first).contains("naturals 6\nrunning-sum 204\nmul 42\n"), "{}", stdout(&first));
    assert!(stdout(&first).contains("rejected=20"));

    run(&["sim", s(&topo), s(&scen), "--seed", "8", "-o", s(&c)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn sim_reports_scenario_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.log");
    let o = run(&["sim", s(&data("topology.json")), s(&data("bad_scenario.json")), "--seed", "1", "-o", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown tier T42"), "{}", stderr(&o));
    assert!(out.exists());

    let o = run(&["sim", s(&data("topology.json")), s(&data("scenario.json"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--seed"));

    let o = run(&["sim", s(&data("scenario.json")), s(&data("scenario.json")), "--seed", "1", "-o", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("invalid topology"));
}

#[test]
fn sim_with_an_empty_scenario_boots_and_shuts_down() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("e.log");
    let o = run(&["sim", s(&data("topology.json")), s(&data("empty_scenario.json")), "--seed", "7", "-o", s(&log)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&log).unwrap();
    let names: Vec<&str> = text.lines().filter_map(|l| l.split_whitespace().find_map(|f| f.strip_prefix("name="))).collect();
    assert_eq!(names.iter().filter(|n| **n == "tier_live").count(), 4);
    assert!(names.contains(&"instance_booted"));
    assert_eq!(names.last(), Some(&"instance_shutdown"));
    assert!(text.lines().last().unwrap().contains("unfinished=0"));
}

#[test]
fn sim_store_kill_shows_worker_buffering() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("k.log");
    let o = run(&["sim", s(&data("store_restart.json")), s(&data("kill_store.json")), "--seed", "7", "-o", s(&log)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("running-sum 650\ncounter 64\n"), "{}", stdout(&o));
    let text = std::fs::read_to_string(&log).unwrap();
    let at = |name: &str| text.lines().position(|l| l.contains(&format!("name={name} "))).unwrap_or_else(|| panic!("no {name}"));
    assert!(at("tier_killed") < at("result_buffered"));
    assert!(at("result_buffered") < at("wal_replayed"));
    assert!(at("wal_replayed") < at("buffered_result_delivered"));
}

struct Node {
    child: Child,
    addr: String,
}

impl Drop for Node {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start_node(mut c: Command) -> Node {
    let mut child = c
        .args(["node", "start", "--listen", "127.0.0.1:0", "--seed", "3", "--topology", s(&data("node.json"))])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("{line:?}")).to_owned();
    Node { child, addr }
}

#[test]
fn operator_commands_against_a_running_node() {
    let dir = tempfile::tempdir().unwrap();
    let node = start_node(cmd());
    let at = ["--instance", node.addr.as_str()];
    let with = |args: &[&str]| run(&[args, &at[..]].concat());

    let status = with(&["instance", "status"]);
    assert_eq!(code(&status), 0, "{}", stderr(&status));
    assert!(stdout(&status).contains("tier T2 dst node1 live"), "{}", stdout(&status));

    let alloc = with(&["tier", "allocate", "--kind", "dwt", "--count", "2"]);
    assert_eq!(code(&alloc), 0, "{}", stderr(&alloc));
    assert_eq!(stdout(&alloc).split_whitespace().count(), 2);
    let new_tier = stdout(&alloc).split_whitespace().next().unwrap().to_owned();
    assert!(stdout(&with(&["instance", "status"])).contains(&format!("tier {new_tier} dwt")));

    let dealloc = with(&["tier", "deallocate", "--id", &new_tier]);
    assert_eq!(code(&dealloc), 0, "{}", stderr(&dealloc));
    assert!(!stdout(&with(&["instance", "status"])).contains(&format!("tier {new_tier} dwt node1 live")));
    let again = with(&["tier", "deallocate", "--id", "T99"]);
    assert_eq!(code(&again), 1);
    let bad_kind = with(&["tier", "allocate", "--kind", "gpu"]);
    assert_eq!(code(&bad_kind), 1);

    let geer = compiled(dir.path(), "sum.lucid", PROGRAMS[2].1);
    let remote = with(&["eval", s(&geer), "S @ {t:8}"]);
    assert_eq!(stdout(&remote), stdout(&run(&["eval", s(&geer), "S @ {t:8}", "--local"])));

    let dump = with(&["store", "dump"]);
    assert_eq!(code(&dump), 0);
    assert!(!stdout(&dump).is_empty());
    let export = with(&["instance", "export"]);
    assert!(stdout(&export).contains("tier_allocated"), "{}", stdout(&export));
    assert!(!stdout(&export).contains(SECRET));

    let wrong = cmd().env("EDUCTIVE_INSTANCE_SECRET", "wrong").args(["instance", "status"]).args(at).output().unwrap();
    assert_eq!(code(&wrong), 1);
    let none = cmd().env_remove("EDUCTIVE_INSTANCE_SECRET").args(["store", "dump"]).args(at).output().unwrap();
    assert_eq!(code(&none), 1);
    assert!(stderr(&none).contains("EDUCTIVE_INSTANCE_SECRET"));

    assert_eq!(code(&with(&["node", "stop"])), 0);
    let mut node = node;
    assert!(node.child.wait().unwrap().success());
}

#[test]
fn node_without_secret_generates_one() {
    let mut c = cmd();
    c.env_remove("EDUCTIVE_INSTANCE_SECRET");
    let mut node = start_node(c);
    let mut err = BufReader::new(node.child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let secret = line.trim().rsplit(' ').next().unwrap().to_owned();
    assert_eq!(secret.len(), 64, "{line}");
    let o = cmd()
        .env("EDUCTIVE_INSTANCE_SECRET", &secret)
        .args(["node", "stop", "--instance", &node.addr])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(node.child.wait().unwrap().success());
}

fn synth(dir: &Path, name: &str, seed: &str, per: &str, noise: &str) -> PathBuf {
    let p = dir.join(name);
    let o = run(&["pipeline", "synth", s(&p), "--seed", seed, "--per-subject", per, "--noise", noise]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    p
}

#[test]
fn pipeline_local_and_distributed_reports_match() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train", "1", "3", "0");
    let held = synth(dir.path(), "held", "2", "4", "0.05");
    let out = dir.path().join("report.txt");
    let local = run(&["pipeline", "run", s(&train), "--classify", s(&held), "--local"]);
    let dist = run(&["pipeline", "run", s(&train), "--classify", s(&held), "-o", s(&out)]);
    assert_eq!(code(&local), 0, "{}", stderr(&local));
    assert_eq!(code(&dist), 0, "{}", stderr(&dist));
    assert_eq!(stdout(&local), stdout(&dist));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), stdout(&dist));
    assert_eq!(stdout(&local).lines().filter(|l| l.contains(" top=")).count(), 16);
    assert!(stdout(&local).contains("accuracy=1 "), "{}", stdout(&local));

    let closed = run(&["pipeline", "run", s(&train), "--local"]);
    assert!(stdout(&closed).contains("accuracy=1 "));
}

#[test]
fn pipeline_fatal_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pipeline", "run", s(&dir.path().join("nothing")), "--local"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("CorpusError"), "{}", stderr(&o));

    let train = synth(dir.path(), "train", "1", "2", "0");
    let cfg = source(
        dir.path(),
        "cfg.json",
        r#"{"preprocessingMethod":1,"featureExtractionMethod":7,"classificationMethod":1,"currentSubject":0,"sampleFormat":1}"#,
    );
    let o = run(&["pipeline", "run", s(&train), "--config", s(&cfg), "--local"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("featureExtractionMethod"), "{}", stderr(&o));

    let cheb = source(
        dir.path(),
        "cheb.json",
        r#"{"preprocessingMethod":2,"featureExtractionMethod":1,"classificationMethod":2,"currentSubject":0,"sampleFormat":1}"#,
    );
    let o = run(&["pipeline", "run", s(&train), "--config", s(&cheb), "--local"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&run(&["pipeline", "run", s(&train), "--config", s(&dir.path().join("no.json"))])), 2);
}

#[test]
fn graph_of_a_program_matches_the_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let geer = compiled(dir.path(), "naturals.lucid", &std::fs::read_to_string(data("naturals.lucid")).unwrap());
    let out = dir.path().join("n.dot");
    assert_eq!(code(&run(&["graph", s(&geer), "--dot", s(&out)])), 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), std::fs::read_to_string(data("naturals.dot")).unwrap());
    assert_eq!(stdout(&run(&["graph", s(&geer)])), std::fs::read_to_string(&out).unwrap());
    let dot = std::fs::read_to_string(&out).unwrap();
    assert!(dot.contains("label=\"If\"") && dot.contains("label=\"<=\""), "fby expansion missing");
}

#[test]
fn graph_of_a_forensic_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.log");
    run(&["sim", s(&data("topology.json")), s(&data("scenario.json")), "--seed", "7", "-o", s(&log)]);
    let o = run(&["graph", s(&log)]);
    assert_eq!(code(&o), 0);
    let dot = stdout(&o);
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("[label=\"demand_computed\"]"), "{dot}");
    assert_eq!(stdout(&run(&["graph", s(&log)])), dot);

    let empty = source(dir.path(), "empty.log", "");
    let o = run(&["graph", s(&empty)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().filter(|l| l.contains("->") || l.contains("[label")).count(), 0);
    assert!(stdout(&o).starts_with("digraph"));

    for (name, text) in [("junk.log", "not a log line\n"), ("junk.json", "{\"nodes\": 3}")] {
        let p = source(dir.path(), name, text);
        assert_eq!(code(&run(&["graph", s(&p)])), 1, "{name}");
    }
    assert_eq!(code(&run(&["graph", s(&dir.path().join("absent.log"))])), 2);
}
