//! Protocol benchmarking and selection.

use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::envelope::Envelope;
use super::inproc::InProcHub;
use super::tcp::{TcpClient, TcpEndpoint};
use super::TransportError;
use crate::eduction::Demand;

/// Declaration order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ProtocolKind {
    InProcess,
    TcpLoopback,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 2] = [ProtocolKind::InProcess, ProtocolKind::TcpLoopback];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::InProcess => "inProcess",
            ProtocolKind::TcpLoopback => "tcpLoopback",
        }
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inProcess" | "inproc" => Ok(ProtocolKind::InProcess),
            "tcpLoopback" | "tcp" => Ok(ProtocolKind::TcpLoopback),
            _ => Err(format!("unknown protocol {s}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyMeasurement {
    pub protocol: ProtocolKind,
    /// Median round trip over the successful probes.
    pub median_micros: Option<u64>,
    pub failures: u32,
    pub probes: u32,
}

/// One round trip over some protocol.
pub trait Probe {
    fn protocol(&self) -> ProtocolKind;
    fn probe(&mut self) -> Result<u64, TransportError>;
}

pub const MIN_PROBES: u32 = 3;

pub fn measure(probe: &mut dyn Probe, probes: u32) -> Result<LatencyMeasurement, TransportError> {
    if probes < MIN_PROBES {
        return Err(TransportError::TooFewProbes(probes));
    }
    let mut samples = Vec::new();
    let mut failures = 0;
    for _ in 0..probes {
        match probe.probe() {
            Ok(rtt) => samples.push(rtt),
            Err(_) => failures += 1,
        }
    }
    samples.sort_unstable();
    // Lower median: stays an observed sample, so scaling every latency by a
    // constant scales the median by the same constant.
    let median_micros = (!samples.is_empty()).then(|| samples[(samples.len() - 1) / 2]);
    Ok(LatencyMeasurement { protocol: probe.protocol(), median_micros, failures, probes })
}

/// Argmin by median among protocols without failures, ties broken by
/// protocol order. If every protocol had some failure, the one with the
/// fewest failures (then lowest median) is used; if all probes of every
/// protocol failed, nothing is available.
pub fn select_protocol(measurements: &[LatencyMeasurement]) -> Result<ProtocolKind, TransportError> {
    let usable = measurements.iter().filter(|m| m.median_micros.is_some());
    let clean = usable.clone().filter(|m| m.failures == 0).min_by_key(|m| (m.median_micros, m.protocol));
    clean
        .or_else(|| usable.min_by_key(|m| (m.failures, m.median_micros, m.protocol)))
        .map(|m| m.protocol)
        .ok_or(TransportError::AllProtocolsDown)
}

pub fn benchmark_and_select(
    candidates: &mut [&mut dyn Probe],
    probes: u32,
) -> Result<(Vec<LatencyMeasurement>, ProtocolKind), TransportError> {
    let measurements = candidates.iter_mut().map(|p| measure(*p, probes)).collect::<Result<Vec<_>, _>>()?;
    let chosen = select_protocol(&measurements)?;
    Ok((measurements, chosen))
}

fn ping(source: &str, destination: &str) -> Envelope {
    let mut rng = rand::rng();
    let d = Demand::system(b"ping".to_vec(), destination, &mut rng);
    Envelope::new(&d, source, Vec::new(), 0)
}

/// Round trips through an in-process echo endpoint.
#[derive(Debug)]
pub struct InProcProbe {
    hub: InProcHub,
    me: super::inproc::InProcEndpoint,
    echo: String,
    timeout: Duration,
}

impl InProcProbe {
    /// Starts an echo thread on `hub` and returns a probe aimed at it.
    pub fn start(hub: &InProcHub, timeout: Duration) -> InProcProbe {
        let echo = format!("echo-{}", rand::random::<u64>());
        let mut endpoint = hub.open(&echo);
        let replies = hub.clone();
        thread::spawn(move || {
            while let Ok(Some(env)) = endpoint.recv(Duration::from_secs(3600)) {
                let _ = replies.send(&env.source, &env);
            }
        });
        let me = hub.open(&format!("probe-{}", rand::random::<u64>()));
        InProcProbe { hub: hub.clone(), me, echo, timeout }
    }
}

impl Drop for InProcProbe {
    fn drop(&mut self) {
        self.hub.close(&self.echo);
    }
}

impl Probe for InProcProbe {
    fn protocol(&self) -> ProtocolKind {
        ProtocolKind::InProcess
    }

    fn probe(&mut self) -> Result<u64, TransportError> {
        let env = ping(self.me.address(), &self.echo);
        let start = Instant::now();
        self.hub.send(&self.echo, &env)?;
        match self.me.recv(self.timeout)? {
            Some(back) if back.signature == env.signature => Ok(start.elapsed().as_micros() as u64),
            _ => Err(TransportError::Timeout),
        }
    }
}

/// Round trips over a TCP loopback connection to an echo server.
#[derive(Debug)]
pub struct TcpProbe {
    addr: String,
    timeout: Duration,
}

impl TcpProbe {
    pub fn new(addr: &str, timeout: Duration) -> TcpProbe {
        TcpProbe { addr: addr.to_owned(), timeout }
    }

    /// Binds an echo server on an ephemeral loopback port and returns its
    /// address. The server lives as long as the process.
    pub fn spawn_echo_server() -> Result<String, TransportError> {
        let mut server = TcpEndpoint::bind("127.0.0.1:0")?;
        let addr = server.local_addr().to_string();
        thread::spawn(move || loop {
            match server.recv_request(Duration::from_secs(3600)) {
                Ok(Some((env, mut responder))) => {
                    let _ = responder.reply(&env);
                }
                Ok(None) => {}
                Err(_) => break,
            }
        });
        Ok(addr)
    }
}

impl Probe for TcpProbe {
    fn protocol(&self) -> ProtocolKind {
        ProtocolKind::TcpLoopback
    }

    fn probe(&mut self) -> Result<u64, TransportError> {
        let start = Instant::now();
        let mut c = TcpClient::connect(&self.addr, self.timeout)?;
        let env = ping("probe", "echo");
        let back = c.request(&env, self.timeout)?;
        if back.signature != env.signature {
            return Err(TransportError::Malformed("echo mismatch".into()));
        }
        Ok(start.elapsed().as_micros() as u64)
    }
}
