//! Deterministic network for simulation mode: frames travel through a
//! tick-ordered queue with configurable per-protocol latency and per-link
//! delay and loss. All randomness comes from the seeded generator.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::envelope::Envelope;
use super::select::{Probe, ProtocolKind};
use super::{frame_dropped, TransportError};
use crate::forensic::ForensicEvent;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig {
    pub latency_ticks: u64,
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinkFault {
    pub extra_delay_ticks: u64,
    pub drop_probability: f64,
}

#[derive(Debug, Default)]
struct SimEndpoint {
    up: bool,
    inbox: VecDeque<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
}

#[derive(Debug)]
pub struct SimNetwork {
    rng: ChaCha8Rng,
    protocols: BTreeMap<ProtocolKind, ProtocolConfig>,
    faults: BTreeMap<(String, String), LinkFault>,
    endpoints: BTreeMap<String, SimEndpoint>,
    in_flight: BTreeMap<(u64, u64), (String, Vec<u8>)>,
    seq: u64,
    events: Vec<ForensicEvent>,
    stats: NetStats,
}

pub const NET_EMITTER: &str = "net";

impl SimNetwork {
    pub fn new(seed: u64) -> Self {
        let protocols = ProtocolKind::ALL
            .into_iter()
            .map(|p| (p, ProtocolConfig { latency_ticks: 0, enabled: true }))
            .collect();
        SimNetwork {
            rng: ChaCha8Rng::seed_from_u64(seed),
            protocols,
            faults: BTreeMap::new(),
            endpoints: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            seq: 0,
            events: Vec::new(),
            stats: NetStats::default(),
        }
    }

    pub fn configure(&mut self, protocol: ProtocolKind, config: ProtocolConfig) {
        self.protocols.insert(protocol, config);
    }

    pub fn protocol_config(&self, protocol: ProtocolKind) -> ProtocolConfig {
        self.protocols[&protocol]
    }

    pub fn set_link_fault(&mut self, from: &str, to: &str, fault: LinkFault) {
        self.faults.insert((from.to_owned(), to.to_owned()), fault);
    }

    pub fn clear_link_fault(&mut self, from: &str, to: &str) {
        self.faults.remove(&(from.to_owned(), to.to_owned()));
    }

    pub fn open(&mut self, address: &str) {
        self.endpoints.entry(address.to_owned()).or_default().up = true;
    }

    /// A closed endpoint refuses sends; its queued inbox is discarded.
    pub fn close(&mut self, address: &str) {
        if let Some(e) = self.endpoints.get_mut(address) {
            e.up = false;
            e.inbox.clear();
        }
    }

    pub fn is_up(&self, address: &str) -> bool {
        self.endpoints.get(address).is_some_and(|e| e.up)
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn send(&mut self, protocol: ProtocolKind, env: &Envelope, now: u64) -> Result<(), TransportError> {
        let frame = env.encode_frame()?;
        let cfg = self.protocols[&protocol];
        if !cfg.enabled {
            return Err(TransportError::TransportDown(format!("{} disabled", protocol.name())));
        }
        self.route(&env.source, &env.destination, frame, cfg.latency_ticks, now)
    }

    /// Sends bytes that need not be a valid frame (fault injection).
    pub fn send_raw(&mut self, from: &str, to: &str, frame: Vec<u8>, now: u64) -> Result<(), TransportError> {
        self.route(from, to, frame, 0, now)
    }

    fn route(&mut self, from: &str, to: &str, frame: Vec<u8>, latency: u64, now: u64) -> Result<(), TransportError> {
        if !self.is_up(to) {
            return Err(TransportError::TransportDown(to.to_owned()));
        }
        self.stats.sent += 1;
        let fault = self.faults.get(&(from.to_owned(), to.to_owned())).copied().unwrap_or_default();
        if fault.drop_probability > 0.0 && self.rng.random::<f64>() < fault.drop_probability {
            self.stats.lost += 1;
            self.events.push(
                ForensicEvent::new("frame_lost", NET_EMITTER, now * 1000)
                    .with("from", from)
                    .with("to", to)
                    .with("reason", "link_drop"),
            );
            return Ok(());
        }
        // Every hop takes at least one tick.
        let at = now + 1 + latency + fault.extra_delay_ticks;
        self.seq += 1;
        self.in_flight.insert((at, self.seq), (to.to_owned(), frame));
        Ok(())
    }

    /// Moves every frame due by `now` into its destination inbox.
    pub fn deliver(&mut self, now: u64) {
        while let Some(entry) = self.in_flight.first_entry() {
            if entry.key().0 > now {
                break;
            }
            let (to, frame) = entry.remove();
            match self.endpoints.get_mut(&to) {
                Some(ep) if ep.up => {
                    ep.inbox.push_back(frame);
                    self.stats.delivered += 1;
                }
                _ => {
                    self.stats.lost += 1;
                    self.events.push(
                        ForensicEvent::new("frame_lost", NET_EMITTER, now * 1000)
                            .with("to", &to)
                            .with("reason", "endpoint_down"),
                    );
                }
            }
        }
    }

    /// Next well-formed envelope in `address`'s inbox.
    pub fn recv(&mut self, address: &str, now: u64) -> Option<Envelope> {
        loop {
            let frame = self.endpoints.get_mut(address)?.inbox.pop_front()?;
            match Envelope::decode_frame(&frame) {
                Ok(env) => return Some(env),
                Err(e) => self.events.push(frame_dropped(address, &e, now * 1000)),
            }
        }
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn take_events(&mut self) -> Vec<ForensicEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn probe(&self, protocol: ProtocolKind) -> SimProbe {
        SimProbe { protocol, config: self.protocols[&protocol] }
    }
}

/// Round trip computed from the configured latency (1 tick = 1 ms).
#[derive(Debug, Clone, Copy)]
pub struct SimProbe {
    protocol: ProtocolKind,
    config: ProtocolConfig,
}

impl Probe for SimProbe {
    fn protocol(&self) -> ProtocolKind {
        self.protocol
    }

    fn probe(&mut self) -> Result<u64, TransportError> {
        if self.config.enabled {
            Ok(2 * self.config.latency_ticks * 1000)
        } else {
            Err(TransportError::TransportDown(self.protocol.name().into()))
        }
    }
}
