//! Self-forensics: context-annotated event records, the append-only log and
//! its two export formats (line records and a demand-lifecycle DOT graph).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eduction::Context;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForensicEvent {
    pub name: String,
    /// Id of the tier (or node, or component) that recorded the event.
    pub emitter: String,
    pub occurred_at: u64,
    pub duration_micros: Option<u64>,
    pub properties: BTreeMap<String, String>,
    pub context: Option<Context>,
}

impl ForensicEvent {
    pub fn new(name: impl Into<String>, emitter: impl Into<String>, occurred_at: u64) -> Self {
        ForensicEvent {
            name: name.into(),
            emitter: emitter.into(),
            occurred_at,
            duration_micros: None,
            properties: BTreeMap::new(),
            context: None,
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.properties.insert(key.into(), value.to_string());
        self
    }

    pub fn with_duration(mut self, micros: u64) -> Self {
        self.duration_micros = Some(micros);
        self
    }

    pub fn with_context(mut self, ctx: Context) -> Self {
        self.context = Some(ctx);
        self
    }

    pub fn prop(&self, key: &str) -> Option<&str> {
        self.properties.get(key).map(String::as_str)
    }

    /// Renders the event as one export line.
    pub fn to_line(&self) -> String {
        let mut line = format!("ts={} emitter={} name={} dur=", self.occurred_at, sanitize(&self.emitter), sanitize(&self.name));
        match self.duration_micros {
            Some(d) => write!(line, "{d}").unwrap(),
            None => line.push('-'),
        }
        for (k, v) in &self.properties {
            write!(line, " {}={}", sanitize(k), sanitize(v)).unwrap();
        }
        if let Some(ctx) = &self.context {
            let pairs: Vec<String> = ctx.iter().map(|(d, t)| format!("{d}:{t}")).collect();
            write!(line, " ctx={}", pairs.join(",")).unwrap();
        }
        line
    }

    /// Parses a line produced by [`ForensicEvent::to_line`].
    pub fn parse_line(line: &str) -> Result<ForensicEvent, String> {
        let mut fields = line.split(' ');
        let mut take = |key: &str| -> Result<String, String> {
            let field = fields.next().ok_or_else(|| format!("missing {key}"))?;
            field
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_owned)
                .ok_or_else(|| format!("expected {key}=..., found {field:?}"))
        };
        let occurred_at = take("ts")?.parse().map_err(|_| "bad ts".to_owned())?;
        let emitter = take("emitter")?;
        let name = take("name")?;
        let dur = take("dur")?;
        let duration_micros = match dur.as_str() {
            "-" => None,
            d => Some(d.parse().map_err(|_| "bad dur".to_owned())?),
        };
        let mut event = ForensicEvent::new(name, emitter, occurred_at);
        event.duration_micros = duration_micros;
        for field in fields {
            let (k, v) = field.split_once('=').ok_or_else(|| format!("bad field {field:?}"))?;
            if k == "ctx" {
                let mut ctx = Context::new();
                for pair in v.split(',').filter(|p| !p.is_empty()) {
                    let (d, t) = pair.split_once(':').ok_or("bad ctx")?;
                    ctx = ctx.with_tag(d, t.parse().map_err(|_| "bad ctx tag".to_owned())?);
                }
                event.context = Some(ctx);
            } else {
                event.properties.insert(k.to_owned(), v.to_owned());
            }
        }
        Ok(event)
    }
}

fn sanitize(s: &str) -> String {
    if s.is_empty() {
        return "_".to_owned();
    }
    s.chars()
        .map(|c| if c.is_whitespace() || c == '=' { '_' } else { c })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Lines,
    Dot,
}

/// Append-only event log. Emitters append in their own time order; export
/// merges all emitters by `(timestamp, emitter)`, keeping append order for
/// equal keys.
#[derive(Debug, Clone, Default)]
pub struct ForensicLog {
    events: Vec<ForensicEvent>,
}

impl ForensicLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, event: ForensicEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[ForensicEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn since(&self, position: usize) -> &[ForensicEvent] {
        &self.events[position.min(self.events.len())..]
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.name == name).count()
    }

    pub fn named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ForensicEvent> + 'a {
        self.events.iter().filter(move |e| e.name == name)
    }

    pub fn merged(&self) -> Vec<&ForensicEvent> {
        let mut merged: Vec<&ForensicEvent> = self.events.iter().collect();
        merged.sort_by(|a, b| (a.occurred_at, &a.emitter).cmp(&(b.occurred_at, &b.emitter)));
        merged
    }

    pub fn export(&self, format: ExportFormat) -> Vec<u8> {
        match format {
            ExportFormat::Lines => {
                let mut out = String::new();
                for e in self.merged() {
                    out.push_str(&e.to_line());
                    out.push('\n');
                }
                out.into_bytes()
            }
            ExportFormat::Dot => lifecycle_dot(self.merged().into_iter()).into_bytes(),
        }
    }

    pub fn parse(text: &str) -> Result<ForensicLog, String> {
        let mut log = ForensicLog::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            log.record(ForensicEvent::parse_line(line).map_err(|e| format!("line {}: {e}", i + 1))?);
        }
        Ok(log)
    }

    /// Reconstructs the state path of each demand from lifecycle events.
    pub fn demand_lifecycles(&self) -> BTreeMap<String, Vec<&'static str>> {
        let mut paths: BTreeMap<String, Vec<&'static str>> = BTreeMap::new();
        for e in self.merged() {
            let Some(sig) = e.prop("sig") else { continue };
            if let Some(state) = lifecycle_state(&e.name) {
                paths.entry(sig.to_owned()).or_default().push(state);
            }
        }
        paths
    }
}

fn lifecycle_state(event: &str) -> Option<&'static str> {
    match event {
        "demand_deposited" | "lease_expired" | "claim_released" => Some("pending"),
        "demand_claimed" => Some("inProcess"),
        "demand_computed" => Some("computed"),
        _ => None,
    }
}

fn lifecycle_dot<'a>(events: impl Iterator<Item = &'a ForensicEvent>) -> String {
    let mut edges: Vec<(String, &'static str, &'static str, String)> = Vec::new();
    let mut last: BTreeMap<String, &'static str> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for e in events {
        let Some(sig) = e.prop("sig") else { continue };
        let Some(state) = lifecycle_state(&e.name) else { continue };
        match last.insert(sig.to_owned(), state) {
            Some(prev) => edges.push((sig.to_owned(), prev, state, e.name.clone())),
            None => order.push(sig.to_owned()),
        }
    }
    let mut out = String::from("digraph forensic {\n");
    for sig in &order {
        writeln!(out, "  \"{sig}:pending\" [label=\"{}\\npending\"];", short(sig)).unwrap();
    }
    for (sig, from, to, label) in &edges {
        writeln!(out, "  \"{sig}:{from}\" -> \"{sig}:{to}\" [label=\"{label}\"];").unwrap();
    }
    out.push_str("}\n");
    out
}

fn short(sig: &str) -> &str {
    &sig[..sig.len().min(8)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trip() {
        let e = ForensicEvent::new("demand_claimed", "T4", 17_000)
            .with("sig", "ab12")
            .with("worker", "T4")
            .with_duration(12)
            .with_context(Context::new().with_tag("t", 3));
        let line = e.to_line();
        assert_eq!(line, "ts=17000 emitter=T4 name=demand_claimed dur=12 sig=ab12 worker=T4 ctx=t:3");
        assert_eq!(ForensicEvent::parse_line(&line).unwrap(), e);
    }

    #[test]
    fn record_then_export_contains_event_once() {
        let mut log = ForensicLog::new();
        log.record(ForensicEvent::new("node_registered", "T1", 5).with("node", "n1"));
        let text = String::from_utf8(log.export(ExportFormat::Lines)).unwrap();
        assert_eq!(text.matches("node_registered").count(), 1);
    }

    #[test]
    fn export_merges_by_timestamp_then_emitter() {
        let mut log = ForensicLog::new();
        log.record(ForensicEvent::new("b", "T2", 10));
        log.record(ForensicEvent::new("a", "T1", 10));
        log.record(ForensicEvent::new("c", "T9", 3));
        let names: Vec<_> = log.merged().iter().map(|e| e.name.clone()).collect();
        assert_eq!(names, ["c", "a", "b"]);
    }

    #[test]
    fn empty_log_exports_empty_digraph() {
        let log = ForensicLog::new();
        assert_eq!(String::from_utf8(log.export(ExportFormat::Dot)).unwrap(), "digraph forensic {\n}\n");
    }

    #[test]
    fn whitespace_in_values_is_sanitized() {
        let e = ForensicEvent::new("x", "T1", 0).with("detail", "two words");
        assert!(e.to_line().ends_with("detail=two_words"));
    }
}
