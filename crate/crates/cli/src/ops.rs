use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{anyhow, Context as _};
use eductive::autonomic::generate_secret;
use eductive::eduction::{eval_eductive, Context, EvalConfig, LocalServices, Outcome, ProcedureTable, Query};
use eductive::forensic::{ExportFormat, ForensicLog};
use eductive::lang::{compile as compile_source, Geer, NodeId};
use eductive::pipeline::{
    procedures as pipeline_procedures, synthesize, Configuration, Corpus, InstanceExecutor, LocalExecutor, Pipeline,
    Report, SynthSpec,
};
use eductive::tiers::{
    run_scenario, ControlReply, ControlRequest, Gateway, Instance, RemoteClient, Scenario, TierKind, Topology,
};

use crate::EvalArgs;

const SECRET_VAR: &str = "EDUCTIVE_INSTANCE_SECRET";

/// Exit status plus an optional message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: Option<anyhow::Error>,
}

type Res = Result<(), Failure>;

fn fail(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: Some(e.into()) }
}

fn quiet(code: u8) -> Failure {
    Failure { code, error: None }
}

fn io_fail(e: std::io::Error, what: &str, path: &Path) -> Failure {
    Failure { code: 2, error: Some(anyhow!("cannot {what} {}: {e}", path.display())) }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| io_fail(e, "read", path))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    String::from_utf8(read(path)?).map_err(|_| fail(anyhow!("{} is not UTF-8 text", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Res {
    std::fs::write(path, bytes).map_err(|e| io_fail(e, "write", path))
}

/// Secret from the environment, or a fresh one. Instances that other
/// commands can reach announce it on stderr.
fn bootstrap_secret(announce: bool) -> Vec<u8> {
    match std::env::var(SECRET_VAR) {
        Ok(s) if !s.is_empty() => s.into_bytes(),
        _ if !announce => generate_secret().into_bytes(),
        _ => {
            let s = generate_secret();
            eprintln!("{SECRET_VAR} not set; generated instance secret {s}");
            eprintln!("export {SECRET_VAR}={s} to reach this instance from other commands");
            s.into_bytes()
        }
    }
}

fn operator_secret() -> Result<Vec<u8>, Failure> {
    match std::env::var(SECRET_VAR) {
        Ok(s) if !s.is_empty() => Ok(s.into_bytes()),
        _ => Err(fail(anyhow!("{SECRET_VAR} must be set to the secret of the running instance"))),
    }
}

fn load_topology(path: Option<&Path>, dwts: usize) -> Result<Topology, Failure> {
    match path {
        None => Ok(Topology::desk(dwts)),
        Some(p) => serde_json::from_str(&read_text(p)?).with_context(|| format!("invalid topology {}", p.display())).map_err(fail),
    }
}

fn boot(topology: &Topology, seed: u64, pipeline: bool) -> Result<Instance, Failure> {
    let mut config = topology.config(seed);
    if pipeline {
        config.procedures.extend(&pipeline_procedures());
    }
    topology.boot(config, &bootstrap_secret(false)).context("instance failed to boot").map_err(fail)
}

pub fn compile(source: &Path, out: Option<PathBuf>) -> Res {
    let text = read_text(source)?;
    let geer = compile_source(&text).map_err(|e| {
        let at = e.line_in(&text).map_or(String::new(), |l| format!(":{l}"));
        fail(anyhow!("{}{at}: {e}", source.display()))
    })?;
    let out = out.unwrap_or_else(|| {
        let stem = source.file_stem().map_or("program".into(), |s| s.to_string_lossy().into_owned());
        source.with_file_name(format!("{stem}.geer.json"))
    });
    write(&out, &geer.encode())?;
    println!("{}", out.display());
    Ok(())
}

fn load_geer(path: &Path) -> Result<Geer, Failure> {
    let bytes = read(path)?;
    match Geer::decode(&bytes) {
        Ok(g) => Ok(g),
        Err(decode) => match std::str::from_utf8(&bytes).ok().filter(|t| !t.trim_start().starts_with('{')) {
            Some(text) => compile_source(text).map_err(|e| {
                let at = e.line_in(text).map_or(String::new(), |l| format!(":{l}"));
                fail(anyhow!("{}{at}: {e}", path.display()))
            }),
            None => Err(fail(anyhow!("{}: {decode}", path.display()))),
        },
    }
}

fn eval_local(geer: &Arc<Geer>, node: NodeId, ctx: &Context) -> Outcome {
    let mut services = LocalServices::new(ProcedureTable::standard());
    match eval_eductive(geer, node, ctx, &mut services, EvalConfig::default()).0 {
        Ok(v) => Outcome::Value(v),
        Err(e) => Outcome::error(e.kind(), e.to_string()),
    }
}

fn eval_in_process(geer: &Geer, node: NodeId, ctx: Context, a: &EvalArgs) -> Result<Outcome, Failure> {
    let topology = load_topology(a.topology.as_deref(), 2)?;
    let mut inst = boot(&topology, a.seed, false)?;
    let sig = inst.submit_program(geer, Some(node), ctx).map_err(fail)?;
    if inst.run_until(a.ticks, |i| i.program_result(&sig).is_some()) {
        Ok(inst.program_result(&sig).cloned().expect("result present"))
    } else {
        Ok(Outcome::error("unavailable", format!("no result after {} ticks", a.ticks)))
    }
}

fn connect(addr: &str) -> Result<RemoteClient, Failure> {
    RemoteClient::connect(addr, &operator_secret()?).with_context(|| format!("cannot reach instance at {addr}")).map_err(fail)
}

fn request(addr: &str, req: ControlRequest) -> Result<ControlReply, Failure> {
    match connect(addr)?.request(&req).with_context(|| format!("request to {addr} failed")).map_err(fail)? {
        ControlReply::Error(e) => Err(fail(anyhow!(e))),
        r => Ok(r),
    }
}

pub fn eval(a: EvalArgs) -> Res {
    let geer = Arc::new(load_geer(&a.geer)?);
    let query: Query = a.demand.parse().map_err(|e| fail(anyhow!("invalid demand: {e}")))?;
    let (node, ctx) = query.resolve(&geer).map_err(|e| fail(anyhow!("invalid demand: {e}")))?;
    let outcome = match a.instance.as_deref() {
        None => eval_local(&geer, node, &ctx),
        Some("") => eval_in_process(&geer, node, ctx, &a)?,
        Some(addr) => {
            let context = ctx.iter().map(|(d, t)| (d.to_owned(), t)).collect();
            match request(addr, ControlRequest::Eval { geer: geer.encode(), node: Some(node), context })? {
                ControlReply::Outcome(o) => o,
                other => return Err(fail(anyhow!("unexpected reply {other:?}"))),
            }
        }
    };
    println!("{outcome}");
    match outcome {
        Outcome::Value(_) => Ok(()),
        Outcome::Error { .. } => Err(quiet(1)),
    }
}

pub fn sim(topology: &Path, scenario: &Path, seed: u64, out: &Path, dump: bool) -> Res {
    let topo = load_topology(Some(topology), 0)?;
    let scenario: Scenario = serde_json::from_str(&read_text(scenario)?)
        .with_context(|| format!("invalid scenario {}", scenario.display()))
        .map_err(fail)?;
    match run_scenario(&topo, &scenario, seed, &bootstrap_secret(false)) {
        Ok(o) => {
            write(out, &o.export)?;
            for r in &o.results {
                match &r.outcome {
                    Some(v) => println!("{} {v}", r.label),
                    None => println!("{} pending", r.label),
                }
            }
            println!("gate accepted={} rejected={}", o.gate.accepted, o.gate.rejected);
            if dump {
                print!("{}", o.store_dump.unwrap_or_default());
            }
            Ok(())
        }
        Err(e) => {
            write(out, &e.export)?;
            Err(fail(e))
        }
    }
}

pub fn node_start(topology: Option<&Path>, seed: u64, listen: &str) -> Res {
    let topo = load_topology(topology, 2)?;
    let secret = bootstrap_secret(true);
    let mut config = topo.config(seed);
    config.procedures.extend(&pipeline_procedures());
    let inst = topo.boot(config, &secret).context("instance failed to boot").map_err(fail)?;
    let mut gateway = Gateway::bind(inst, &secret, listen).with_context(|| format!("cannot listen on {listen}")).map_err(fail)?;
    println!("listening on {}", gateway.local_addr());
    gateway.serve(&AtomicBool::new(false)).map_err(fail)?;
    println!("stopped at tick {}", gateway.instance().now());
    Ok(())
}

pub fn node_stop(addr: &str) -> Res {
    request(addr, ControlRequest::Shutdown)?;
    Ok(())
}

pub fn tier_allocate(addr: &str, kind: &str, count: usize, node: Option<String>) -> Res {
    let kind: TierKind = kind.parse().map_err(|e| fail(anyhow!("{e}")))?;
    match request(addr, ControlRequest::Allocate { kind, count, node })? {
        ControlReply::Allocated(ids) => {
            println!("{}", ids.join(" "));
            Ok(())
        }
        other => Err(fail(anyhow!("unexpected reply {other:?}"))),
    }
}

pub fn tier_deallocate(addr: &str, id: &str) -> Res {
    request(addr, ControlRequest::Deallocate { tier: id.to_owned() })?;
    println!("deallocated {id}");
    Ok(())
}

fn print_text(addr: &str, req: ControlRequest) -> Res {
    match request(addr, req)? {
        ControlReply::Text(t) => {
            print!("{t}");
            Ok(())
        }
        other => Err(fail(anyhow!("unexpected reply {other:?}"))),
    }
}

pub fn instance_status(addr: &str) -> Res {
    print_text(addr, ControlRequest::Status)
}

pub fn instance_export(addr: &str) -> Res {
    print_text(addr, ControlRequest::Export)
}

pub fn store_dump(addr: &str) -> Res {
    print_text(addr, ControlRequest::StoreDump)
}

pub struct PipelineRun {
    pub corpus: PathBuf,
    pub classify: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub local: bool,
    pub topology: Option<PathBuf>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn run_stages<E: eductive::pipeline::StageExecutor>(
    config: Configuration,
    exec: E,
    train: &Corpus,
    test: &Corpus,
) -> Result<Report, Failure> {
    let mut p = Pipeline::new(config, exec).map_err(fail)?;
    p.train(train).map_err(fail)?;
    p.classify(test).map_err(fail)
}

pub fn pipeline(r: PipelineRun) -> Res {
    let config = match &r.config {
        Some(p) => Configuration::from_json(&read_text(p)?).map_err(fail)?,
        None => Configuration::default(),
    };
    let scan = |dir: &Path| Corpus::scan(dir, config.sample_format).map_err(fail);
    let train = scan(&r.corpus)?;
    let test = match &r.classify {
        Some(dir) => scan(dir)?,
        None => train.clone(),
    };
    let report = if r.local {
        run_stages(config, LocalExecutor::new(), &train, &test)?
    } else {
        let topology = load_topology(r.topology.as_deref(), 2)?;
        let mut inst = boot(&topology, r.seed, true)?;
        run_stages(config, InstanceExecutor::new(&mut inst), &train, &test)?
    };
    let text = report.to_string();
    if let Some(out) = &r.out {
        write(out, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

pub fn synth(dir: &Path, seed: u64, per_subject: usize, noise: f64) -> Res {
    let spec = SynthSpec { seed, per_subject, noise, ..SynthSpec::default() };
    let corpus = synthesize(dir, spec).map_err(|e| io_fail(e, "write corpus", dir))?;
    println!("{} samples in {}", corpus.len(), dir.display());
    Ok(())
}

pub fn graph(input: &Path, dot: Option<&Path>) -> Res {
    let bytes = read(input)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| fail(anyhow!("{} is not UTF-8 text", input.display())))?;
    let rendered = if text.trim_start().starts_with('{') {
        Geer::decode(&bytes).map_err(|e| fail(anyhow!("{}: {e}", input.display())))?.to_dot()
    } else {
        let log = ForensicLog::parse(text).map_err(|e| fail(anyhow!("{}: not a forensic log: {e}", input.display())))?;
        String::from_utf8(log.export(ExportFormat::Dot)).expect("dot output is UTF-8")
    };
    match dot {
        Some(p) => write(p, rendered.as_bytes()),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}
