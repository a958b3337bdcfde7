//! Declarative boot (topology files) and scripted runs (scenario files) for
//! the simulated instance. Both are JSON.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::instance::{GateStats, Instance, InstanceConfig, InstanceStatus};
use super::{AllocationRequest, NodeDescriptor, TierError, TierKind};
use crate::eduction::{Context, DemandSignature, Outcome, Query};
use crate::forensic::ExportFormat;
use crate::lang::compile;
use crate::transport::{LinkFault, ProtocolConfig, ProtocolKind};
use crate::value::Value;

fn one() -> usize {
    1
}

fn default_gmt_node() -> String {
    "node0".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default)]
    pub capacity: BTreeMap<TierKind, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierSpec {
    pub kind: TierKind,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub node: Option<String>,
}

/// Optional overrides of the instance defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TimingSpec {
    pub heartbeat_interval: Option<u64>,
    pub heartbeat_timeout: Option<u64>,
    pub lease: Option<u64>,
    pub reply_timeout: Option<u64>,
    pub retry_budget: Option<u64>,
}

/// ```json
/// { "gmtNode": "node0",
///   "nodes": [ { "id": "node1", "capacity": { "dst": 1, "dgt": 1, "dwt": 2 } } ],
///   "tiers": [ { "kind": "dst" }, { "kind": "dgt" }, { "kind": "dwt", "count": 2 } ],
///   "latency": { "inProcess": 0, "tcpLoopback": 5 } }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Topology {
    #[serde(default = "default_gmt_node")]
    pub gmt_node: String,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub tiers: Vec<TierSpec>,
    #[serde(default)]
    pub timing: TimingSpec,
    /// Per-protocol latency in ticks.
    #[serde(default)]
    pub latency: BTreeMap<ProtocolKind, u64>,
    #[serde(default)]
    pub disabled_protocols: Vec<ProtocolKind>,
    #[serde(default)]
    pub auto_heal: Option<bool>,
}

impl Topology {
    /// One node hosting a DST, a DGT and `dwts` workers, all allocated.
    pub fn desk(dwts: usize) -> Topology {
        Topology {
            gmt_node: default_gmt_node(),
            nodes: vec![NodeSpec {
                id: "node1".into(),
                capacity: [(TierKind::Dst, 1), (TierKind::Dgt, 1), (TierKind::Dwt, dwts)].into(),
            }],
            tiers: vec![
                TierSpec { kind: TierKind::Dst, count: 1, node: None },
                TierSpec { kind: TierKind::Dgt, count: 1, node: None },
                TierSpec { kind: TierKind::Dwt, count: dwts, node: None },
            ],
            timing: TimingSpec::default(),
            latency: BTreeMap::new(),
            disabled_protocols: Vec::new(),
            auto_heal: None,
        }
    }

    pub fn config(&self, seed: u64) -> InstanceConfig {
        let mut c = InstanceConfig::new(seed);
        let t = &self.timing;
        c.heartbeat_interval = t.heartbeat_interval.unwrap_or(c.heartbeat_interval);
        c.heartbeat_timeout = t.heartbeat_timeout.unwrap_or(3 * c.heartbeat_interval);
        c.lease = t.lease.unwrap_or(c.lease);
        c.reply_timeout = t.reply_timeout.unwrap_or(c.reply_timeout);
        c.retry_budget = t.retry_budget.unwrap_or(c.retry_budget);
        c.auto_heal = self.auto_heal.unwrap_or(c.auto_heal);
        c
    }

    /// Boots an instance: registers every node, allocates every declared
    /// tier, and runs until all of them have registered.
    pub fn boot(&self, config: InstanceConfig, secret: &[u8]) -> Result<Instance, TierError> {
        let capacity = |id: &str| -> Vec<(TierKind, usize)> {
            self.nodes.iter().find(|n| n.id == id).map(|n| n.capacity.iter().map(|(k, v)| (*k, *v)).collect()).unwrap_or_default()
        };
        let mut inst = Instance::new(config, secret, NodeDescriptor::local(&self.gmt_node, &capacity(&self.gmt_node)))?;
        for (p, ticks) in &self.latency {
            let enabled = !self.disabled_protocols.contains(p);
            inst.network_mut().configure(*p, ProtocolConfig { latency_ticks: *ticks, enabled });
        }
        for p in &self.disabled_protocols {
            let mut c = inst.network_mut().protocol_config(*p);
            c.enabled = false;
            inst.network_mut().configure(*p, c);
        }
        if !self.latency.is_empty() || !self.disabled_protocols.is_empty() {
            inst.reselect_protocols();
        }
        for n in self.nodes.iter().filter(|n| n.id != self.gmt_node) {
            inst.register_node(NodeDescriptor::local(&n.id, &capacity(&n.id)))?;
        }
        let budget = 20 * inst.config().reply_timeout.max(1) + 100;
        for t in &self.tiers {
            let mut req = AllocationRequest::new(t.kind, t.count);
            if let Some(n) = &t.node {
                req = req.on(n);
            }
            inst.allocate(req)?;
            if !inst.wait_ready(budget) {
                return Err(TierError::InvalidRequest(format!("{} tiers did not register", t.kind)));
            }
        }
        let e = inst.event("instance_booted", "T1").with("tiers", inst.gmt().tiers().count());
        inst.record(e);
        inst.step();
        Ok(inst)
    }
}

fn default_settle() -> u64 {
    5000
}

fn default_drop() -> f64 {
    1.0
}

/// Scripted events. Every step may carry `"at": <tick>`; the instance runs
/// up to that tick before the step is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", rename_all_fields = "camelCase", deny_unknown_fields)]
pub enum ScenarioStep {
    Run {
        ticks: u64,
    },
    /// Runs until every submitted demand is answered.
    Await {
        #[serde(default = "default_settle")]
        max_ticks: u64,
    },
    Eval {
        source: String,
        #[serde(default)]
        query: Option<String>,
        #[serde(default)]
        label: Option<String>,
    },
    Call {
        procedure: String,
        #[serde(default)]
        args: Vec<serde_json::Value>,
        #[serde(default)]
        label: Option<String>,
    },
    KillTier {
        tier: String,
    },
    RestartTier {
        tier: String,
    },
    HealTier {
        tier: String,
    },
    Allocate {
        kind: TierKind,
        #[serde(default = "one")]
        count: usize,
        #[serde(default)]
        node: Option<String>,
    },
    Deallocate {
        tier: String,
    },
    AddNode {
        id: String,
        #[serde(default)]
        capacity: BTreeMap<TierKind, usize>,
    },
    DropLink {
        from: String,
        to: String,
        #[serde(default = "default_drop")]
        probability: f64,
    },
    DelayLink {
        from: String,
        to: String,
        ticks: u64,
    },
    RestoreLink {
        from: String,
        to: String,
    },
    SetLatency {
        protocol: ProtocolKind,
        ticks: u64,
    },
    DisableProtocol {
        protocol: ProtocolKind,
    },
    EnableProtocol {
        protocol: ProtocolKind,
    },
    /// Announces a pipeline stage boundary to the policy engine.
    Stage {
        stage: String,
        entered: bool,
    },
    ReselectProtocol,
    Inject {
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<u64>,
    #[serde(flatten)]
    pub step: ScenarioStep,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub steps: Vec<TimedStep>,
    /// Ticks allowed at the end for outstanding demands.
    #[serde(default = "default_settle")]
    pub settle_ticks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandResult {
    pub label: String,
    pub signature: DemandSignature,
    /// `None` if the demand was still outstanding at shutdown.
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub results: Vec<DemandResult>,
    pub export: Vec<u8>,
    pub status: InstanceStatus,
    pub gate: GateStats,
    pub store_dump: Option<String>,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("step {step}: {message}")]
pub struct ScenarioError {
    /// Index of the failing step; boot failures are reported as step 0.
    pub step: usize,
    pub message: String,
    /// Forensic export up to the failure.
    pub export: Vec<u8>,
}

fn json_value(v: &serde_json::Value) -> Result<Value, String> {
    match v {
        serde_json::Value::Bool(b) => Ok(Value::Bool(*b)),
        serde_json::Value::String(s) => Ok(Value::Text(s.clone())),
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) => Ok(Value::Int(i)),
            None => n.as_f64().map(Value::Float).ok_or_else(|| format!("unsupported number {n}")),
        },
        other => Err(format!("unsupported argument {other}")),
    }
}

enum Tracked {
    Program(DemandSignature),
    Procedure(DemandSignature),
}

struct Runner {
    inst: Instance,
    tracked: Vec<(String, Tracked)>,
}

impl Runner {
    fn outcome(&self, t: &Tracked) -> Option<Outcome> {
        match t {
            Tracked::Program(s) => self.inst.program_result(s).cloned(),
            Tracked::Procedure(s) => self.inst.procedure_result(s).cloned(),
        }
    }

    fn settled(&self) -> bool {
        self.tracked.iter().all(|(_, t)| self.outcome(t).is_some())
    }

    fn settle(&mut self, max_ticks: u64) -> bool {
        for _ in 0..max_ticks {
            if self.settled() {
                return true;
            }
            self.inst.step();
        }
        self.settled()
    }

    fn apply(&mut self, step: &ScenarioStep) -> Result<(), String> {
        let inst = &mut self.inst;
        let tier_err = |e: TierError| e.to_string();
        match step {
            ScenarioStep::Run { ticks } => inst.step_n(*ticks),
            ScenarioStep::Await { max_ticks } => {
                if !self.settle(*max_ticks) {
                    return Err(format!("demands still outstanding after {max_ticks} ticks"));
                }
            }
            ScenarioStep::Eval { source, query, label } => {
                let geer = compile(source).map_err(|e| e.to_string())?;
                let q: Query = match query {
                    Some(q) => q.parse().map_err(|e: crate::eduction::EductionError| e.to_string())?,
                    None => Query::entry(Context::new()),
                };
                let (node, ctx) = q.resolve(&geer).map_err(|e| e.to_string())?;
                let sig = inst.submit_program(&geer, Some(node), ctx).map_err(tier_err)?;
                let label = label.clone().unwrap_or_else(|| format!("eval {q}"));
                self.tracked.push((label, Tracked::Program(sig)));
            }
            ScenarioStep::Call { procedure, args, label } => {
                let args = args.iter().map(json_value).collect::<Result<Vec<_>, _>>()?;
                let label = label.clone().unwrap_or_else(|| {
                    let shown: Vec<String> = args.iter().map(Value::to_string).collect();
                    format!("call {procedure}({})", shown.join(", "))
                });
                let sig = inst.submit_procedure(procedure, args);
                self.tracked.push((label, Tracked::Procedure(sig)));
            }
            ScenarioStep::KillTier { tier } => inst.kill(tier).map_err(tier_err)?,
            ScenarioStep::RestartTier { tier } => inst.restart(tier).map_err(tier_err)?,
            ScenarioStep::HealTier { tier } => {
                if inst.gmt().tier(tier).is_none() {
                    return Err(TierError::UnknownTier(tier.clone()).to_string());
                }
                if let Some(e) = inst.heal(tier).error {
                    return Err(e.to_string());
                }
            }
            ScenarioStep::Allocate { kind, count, node } => {
                let mut req = AllocationRequest::new(*kind, *count);
                if let Some(n) = node {
                    req = req.on(n);
                }
                inst.allocate(req).map_err(tier_err)?;
            }
            ScenarioStep::Deallocate { tier } => inst.deallocate(tier, "scenario").map_err(tier_err)?,
            ScenarioStep::AddNode { id, capacity } => {
                let caps: Vec<(TierKind, usize)> = capacity.iter().map(|(k, v)| (*k, *v)).collect();
                inst.register_node(NodeDescriptor::local(id, &caps)).map_err(tier_err)?;
            }
            ScenarioStep::DropLink { from, to, probability } => {
                if !(0.0..=1.0).contains(probability) {
                    return Err(format!("drop probability {probability} is outside [0, 1]"));
                }
                inst.set_link_fault(from, to, LinkFault { extra_delay_ticks: 0, drop_probability: *probability });
            }
            ScenarioStep::DelayLink { from, to, ticks } => {
                inst.set_link_fault(from, to, LinkFault { extra_delay_ticks: *ticks, drop_probability: 0.0 });
            }
            ScenarioStep::RestoreLink { from, to } => inst.network_mut().clear_link_fault(from, to),
            ScenarioStep::SetLatency { protocol, ticks } => {
                let mut c = inst.network_mut().protocol_config(*protocol);
                c.latency_ticks = *ticks;
                inst.network_mut().configure(*protocol, c);
            }
            ScenarioStep::DisableProtocol { protocol } | ScenarioStep::EnableProtocol { protocol } => {
                let mut c = inst.network_mut().protocol_config(*protocol);
                c.enabled = matches!(step, ScenarioStep::EnableProtocol { .. });
                inst.network_mut().configure(*protocol, c);
            }
            ScenarioStep::Stage { stage, entered } => {
                let name = if *entered { "stage_entered" } else { "stage_exited" };
                let e = inst.event(name, "pipeline").with("stage", stage);
                inst.record(e);
                inst.step();
            }
            ScenarioStep::ReselectProtocol => inst.reselect_protocols(),
            ScenarioStep::Inject { count } => {
                inst.inject_adversarial(*count);
            }
        }
        Ok(())
    }

    fn fail(&self, step: usize, message: String) -> ScenarioError {
        ScenarioError { step, message, export: self.inst.export(ExportFormat::Lines) }
    }
}

/// Boots `topology`, applies the scenario, waits for outstanding demands
/// and shuts down. Same seed, same files: same export, byte for byte.
pub fn run_scenario(
    topology: &Topology,
    scenario: &Scenario,
    seed: u64,
    secret: &[u8],
) -> Result<ScenarioOutcome, ScenarioError> {
    let inst = topology
        .boot(topology.config(seed), secret)
        .map_err(|e| ScenarioError { step: 0, message: format!("boot failed: {e}"), export: Vec::new() })?;
    let mut r = Runner { inst, tracked: Vec::new() };
    for (i, ts) in scenario.steps.iter().enumerate() {
        if let Some(at) = ts.at {
            if at < r.inst.now() {
                return Err(r.fail(i + 1, format!("tick {at} is in the past (now {})", r.inst.now())));
            }
            r.inst.step_n(at - r.inst.now());
        }
        r.apply(&ts.step).map_err(|m| r.fail(i + 1, m))?;
    }
    r.settle(scenario.settle_ticks);
    let results = r
        .tracked
        .iter()
        .map(|(label, t)| DemandResult {
            label: label.clone(),
            signature: match t {
                Tracked::Program(s) | Tracked::Procedure(s) => *s,
            },
            outcome: r.outcome(t),
        })
        .collect::<Vec<_>>();
    let unfinished = results.iter().filter(|d| d.outcome.is_none()).count();
    r.inst.shutdown(unfinished);
    Ok(ScenarioOutcome {
        results,
        export: r.inst.export(ExportFormat::Lines),
        status: r.inst.status(),
        gate: r.inst.gate_stats(),
        store_dump: r.inst.store_dump(),
    })
}
