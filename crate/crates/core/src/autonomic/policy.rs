//! Fluents and mappings: a fluent is a condition-bounded state over the
//! event stream; a mapping names the actions to run when a fluent becomes
//! active.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::forensic::ForensicEvent;

pub const IN_CLASSIFICATION_STAGE: &str = "inClassificationStage";
pub const TIER_FAILURE: &str = "tierFailure";
pub const SYNC_CLASSIFICATION_CACHES: &str = "syncClassificationCaches";
pub const RESELECT_PROTOCOL: &str = "reselectProtocol";
pub const HEAL_FAILED_TIERS: &str = "healFailedTiers";

pub type Predicate = Arc<dyn Fn(&ForensicEvent) -> Result<bool, String> + Send + Sync>;

#[derive(Clone)]
pub enum Condition {
    /// Matches events with this name whose properties include every pair.
    Event { name: String, props: Vec<(String, String)> },
    AnyOf(Vec<Condition>),
    Custom(Predicate),
    Never,
}

impl fmt::Debug for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Event { name, props } => write!(f, "Event({name}, {props:?})"),
            Condition::AnyOf(cs) => f.debug_tuple("AnyOf").field(cs).finish(),
            Condition::Custom(_) => f.write_str("Custom"),
            Condition::Never => f.write_str("Never"),
        }
    }
}

impl Condition {
    pub fn event(name: &str) -> Condition {
        Condition::Event { name: name.to_owned(), props: Vec::new() }
    }

    pub fn event_with(name: &str, key: &str, value: &str) -> Condition {
        Condition::Event { name: name.to_owned(), props: vec![(key.to_owned(), value.to_owned())] }
    }

    pub fn matches(&self, e: &ForensicEvent) -> Result<bool, String> {
        match self {
            Condition::Event { name, props } => {
                Ok(e.name == *name && props.iter().all(|(k, v)| e.prop(k) == Some(v.as_str())))
            }
            Condition::AnyOf(cs) => {
                for c in cs {
                    if c.matches(e)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Condition::Custom(p) => p(e),
            Condition::Never => Ok(false),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fluent {
    pub name: String,
    pub entry: Condition,
    pub exit: Condition,
    pub active: bool,
    pub active_since: Option<u64>,
}

impl Fluent {
    pub fn new(name: &str, entry: Condition, exit: Condition) -> Fluent {
        Fluent { name: name.to_owned(), entry, exit, active: false, active_since: None }
    }
}

/// AS mappings run once, at the GMT; AE mappings run on every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    As,
    Ae,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyMapping {
    pub fluent: String,
    pub actions: Vec<String>,
    pub scope: Scope,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedAction {
    pub action: String,
    pub fluent: String,
    pub scope: Scope,
}

#[derive(Debug, Clone)]
pub struct PolicyEngine {
    emitter: String,
    fluents: Vec<Fluent>,
    mappings: Vec<PolicyMapping>,
    events: Vec<ForensicEvent>,
}

impl PolicyEngine {
    pub fn new(emitter: &str) -> Self {
        PolicyEngine { emitter: emitter.to_owned(), fluents: Vec::new(), mappings: Vec::new(), events: Vec::new() }
    }

    /// The runtime's policies: self-optimization on entering classification
    /// and self-healing on tier failure.
    pub fn standard(emitter: &str) -> Self {
        let mut p = PolicyEngine::new(emitter);
        p.add_fluent(Fluent::new(
            IN_CLASSIFICATION_STAGE,
            Condition::event_with("stage_entered", "stage", "classification"),
            Condition::event_with("stage_exited", "stage", "classification"),
        ));
        p.add_mapping(PolicyMapping {
            fluent: IN_CLASSIFICATION_STAGE.into(),
            actions: vec![SYNC_CLASSIFICATION_CACHES.into()],
            scope: Scope::As,
        });
        p.add_mapping(PolicyMapping {
            fluent: IN_CLASSIFICATION_STAGE.into(),
            actions: vec![RESELECT_PROTOCOL.into()],
            scope: Scope::Ae,
        });
        p.add_fluent(Fluent::new(
            TIER_FAILURE,
            Condition::AnyOf(vec![Condition::event("tier_failed"), Condition::event("tier_still_failed")]),
            Condition::event("heal_attempted"),
        ));
        p.add_mapping(PolicyMapping {
            fluent: TIER_FAILURE.into(),
            actions: vec![HEAL_FAILED_TIERS.into()],
            scope: Scope::As,
        });
        p
    }

    pub fn add_fluent(&mut self, f: Fluent) {
        self.fluents.push(f);
    }

    pub fn add_mapping(&mut self, m: PolicyMapping) {
        self.mappings.push(m);
    }

    pub fn fluent(&self, name: &str) -> Option<&Fluent> {
        self.fluents.iter().find(|f| f.name == name)
    }

    pub fn is_active(&self, name: &str) -> bool {
        self.fluent(name).is_some_and(|f| f.active)
    }

    pub fn take_events(&mut self) -> Vec<ForensicEvent> {
        std::mem::take(&mut self.events)
    }

    /// Feeds events in order. Each fluent activation contributes its
    /// mappings' actions, in mapping order, exactly once. A condition that
    /// fails leaves its fluent unchanged and is recorded.
    pub fn tick(&mut self, events: &[ForensicEvent], now: u64) -> Vec<PlannedAction> {
        let mut planned = Vec::new();
        for e in events {
            for i in 0..self.fluents.len() {
                let f = &self.fluents[i];
                let cond = if f.active { &f.exit } else { &f.entry };
                match cond.matches(e) {
                    Ok(false) => {}
                    Ok(true) if f.active => {
                        let f = &mut self.fluents[i];
                        f.active = false;
                        f.active_since = None;
                        self.events.push(
                            ForensicEvent::new("fluent_exited", &self.emitter, now).with("fluent", &f.name),
                        );
                    }
                    Ok(true) => {
                        let f = &mut self.fluents[i];
                        f.active = true;
                        f.active_since = Some(e.occurred_at);
                        let name = f.name.clone();
                        self.events.push(ForensicEvent::new("fluent_entered", &self.emitter, now).with("fluent", &name));
                        for m in self.mappings.iter().filter(|m| m.fluent == name) {
                            for a in &m.actions {
                                planned.push(PlannedAction { action: a.clone(), fluent: name.clone(), scope: m.scope });
                            }
                        }
                        // The same event may also satisfy the exit condition.
                        if matches!(self.fluents[i].exit.matches(e), Ok(true)) {
                            let f = &mut self.fluents[i];
                            f.active = false;
                            f.active_since = None;
                        }
                    }
                    Err(msg) => self.events.push(
                        ForensicEvent::new("policy_condition_failed", &self.emitter, now)
                            .with("fluent", &self.fluents[i].name)
                            .with("error", msg),
                    ),
                }
            }
        }
        planned
    }
}
