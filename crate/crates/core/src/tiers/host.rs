//! Real mode: an instance stepped against the wall clock (one tick per
//! millisecond) behind a TCP control gateway. Requests are system demands
//! from the operator's client and must carry the operator credential.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::instance::{Instance, CLIENT};
use super::{AllocationRequest, TierKind, OPERATOR};
use crate::autonomic::{issue_credential, verify_envelope, Directory, Verdict};
use crate::eduction::{Context, Demand, DemandPayload, DemandSignature, Outcome};
use crate::forensic::ExportFormat;
use crate::lang::{Geer, NodeId};
use crate::transport::{Envelope, Responder, TcpClient, TcpEndpoint, TransportError};
use crate::value::Value;

const GATEWAY: &str = "gateway";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlRequest {
    Status,
    Allocate { kind: TierKind, count: usize, node: Option<String> },
    Deallocate { tier: String },
    /// `geer` holds [`Geer::encode`] bytes.
    Eval { geer: Vec<u8>, node: Option<NodeId>, context: Vec<(String, i64)> },
    Call { procedure: String, args: Vec<Value> },
    StoreDump,
    Export,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlReply {
    Text(String),
    Allocated(Vec<String>),
    Outcome(Outcome),
    Done,
    Error(String),
}

fn encode<T: Serialize>(v: &T) -> Vec<u8> {
    bincode::serialize(v).expect("control messages serialize")
}

fn wrap(body: Vec<u8>, source: &str, destination: &str, token: Vec<u8>, rng: &mut ChaCha8Rng) -> Envelope {
    let d = Demand::system(body, destination, rng);
    Envelope::new(&d, source, token, crate::transport::wall_micros())
}

fn body_of(env: &Envelope) -> Result<Vec<u8>, String> {
    match env.demand().map_err(|e| e.to_string())?.payload {
        DemandPayload::System { body } => Ok(body),
        _ => Err("expected a system demand".into()),
    }
}

enum Waiting {
    Program(DemandSignature),
    Procedure(DemandSignature),
}

/// Serves control requests for one instance.
pub struct Gateway {
    instance: Instance,
    endpoint: TcpEndpoint,
    secret: Vec<u8>,
    rng: ChaCha8Rng,
    waiting: Vec<(Waiting, Instant, Responder)>,
    request_timeout: Duration,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("addr", &self.endpoint.local_addr()).finish()
    }
}

impl Gateway {
    pub fn bind(instance: Instance, secret: &[u8], addr: &str) -> Result<Gateway, TransportError> {
        let seed = instance.config().seed;
        Ok(Gateway {
            instance,
            endpoint: TcpEndpoint::bind(addr)?,
            secret: secret.to_vec(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6761_7465),
            waiting: Vec::new(),
            request_timeout: Duration::from_secs(30),
        })
    }

    pub fn local_addr(&self) -> String {
        self.endpoint.local_addr().to_string()
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    fn reply(&mut self, responder: &mut Responder, reply: &ControlReply) {
        let env = wrap(encode(reply), GATEWAY, CLIENT, Vec::new(), &mut self.rng);
        let _ = responder.reply(&env);
    }

    /// Steps the instance once per millisecond and serves requests in
    /// between, until a shutdown request arrives or `stop` is raised.
    pub fn serve(&mut self, stop: &AtomicBool) -> Result<(), TransportError> {
        let tick = Duration::from_millis(1);
        let mut next = Instant::now();
        loop {
            if stop.load(Ordering::SeqCst) {
                return Ok(());
            }
            let left = next.saturating_duration_since(Instant::now());
            if let Some((env, responder)) = self.endpoint.recv_request(left)? {
                if self.handle(env, responder) {
                    return Ok(());
                }
                continue;
            }
            self.instance.step();
            for e in self.endpoint.take_events() {
                self.instance.record(e);
            }
            self.answer_waiting();
            next += tick;
        }
    }

    fn answer_waiting(&mut self) {
        let mut i = 0;
        while i < self.waiting.len() {
            let outcome = match &self.waiting[i].0 {
                Waiting::Program(s) => self.instance.program_result(s).cloned(),
                Waiting::Procedure(s) => self.instance.procedure_result(s).cloned(),
            };
            let expired = self.waiting[i].1.elapsed() > self.request_timeout;
            if outcome.is_some() || expired {
                let (_, _, mut responder) = self.waiting.swap_remove(i);
                let reply = match outcome {
                    Some(o) => ControlReply::Outcome(o),
                    None => ControlReply::Error("timed out waiting for the result".into()),
                };
                self.reply(&mut responder, &reply);
            } else {
                i += 1;
            }
        }
    }

    /// Returns true on a shutdown request.
    fn handle(&mut self, env: Envelope, mut responder: Responder) -> bool {
        let directory: Directory = [(CLIENT.to_owned(), OPERATOR.to_owned())].into();
        if let Verdict::Reject(r) = verify_envelope(&env, &self.secret, &directory) {
            let e = self
                .instance
                .event("unauthenticated_message", GATEWAY)
                .with("reason", r.name())
                .with("source", &env.source);
            self.instance.record(e);
            self.reply(&mut responder, &ControlReply::Error(format!("rejected: {}", r.name())));
            return false;
        }
        let request = match body_of(&env).and_then(|b| bincode::deserialize(&b).map_err(|e| e.to_string())) {
            Ok(r) => r,
            Err(e) => {
                self.reply(&mut responder, &ControlReply::Error(format!("bad request: {e}")));
                return false;
            }
        };
        let inst = &mut self.instance;
        let reply = match request {
            ControlRequest::Shutdown => {
                self.reply(&mut responder, &ControlReply::Done);
                return true;
            }
            ControlRequest::Status => ControlReply::Text(inst.status().render()),
            ControlRequest::StoreDump => match inst.store_dump() {
                Some(d) => ControlReply::Text(d),
                None => ControlReply::Error("no live DST".into()),
            },
            ControlRequest::Export => {
                ControlReply::Text(String::from_utf8_lossy(&inst.export(ExportFormat::Lines)).into_owned())
            }
            ControlRequest::Allocate { kind, count, node } => {
                let mut req = AllocationRequest::new(kind, count);
                if let Some(n) = node {
                    req = req.on(&n);
                }
                match inst.allocate(req) {
                    Ok(ids) => ControlReply::Allocated(ids),
                    Err(e) => ControlReply::Error(e.to_string()),
                }
            }
            ControlRequest::Deallocate { tier } => match inst.deallocate(&tier, "operator") {
                Ok(()) => ControlReply::Done,
                Err(e) => ControlReply::Error(e.to_string()),
            },
            ControlRequest::Eval { geer, node, context } => {
                let submitted = Geer::decode(&geer).map_err(|e| e.to_string()).and_then(|g| {
                    let ctx = Context::from_pairs(context.iter().map(|(d, t)| (d.as_str(), *t)));
                    inst.submit_program(&g, node, ctx).map_err(|e| e.to_string())
                });
                match submitted {
                    Ok(sig) => {
                        self.waiting.push((Waiting::Program(sig), Instant::now(), responder));
                        return false;
                    }
                    Err(e) => ControlReply::Error(e),
                }
            }
            ControlRequest::Call { procedure, args } => {
                let sig = inst.submit_procedure(&procedure, args);
                self.waiting.push((Waiting::Procedure(sig), Instant::now(), responder));
                return false;
            }
        };
        self.reply(&mut responder, &reply);
        false
    }
}

/// A gateway running on its own thread.
#[derive(Debug)]
pub struct HostHandle {
    addr: String,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<(), TransportError>>>,
}

impl HostHandle {
    pub fn spawn(instance: Instance, secret: &[u8], addr: &str) -> Result<HostHandle, TransportError> {
        let mut gateway = Gateway::bind(instance, secret, addr)?;
        let addr = gateway.local_addr();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || gateway.serve(&flag));
        Ok(HostHandle { addr, stop, thread: Some(thread) })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn stop(mut self) -> Result<(), TransportError> {
        self.stop.store(true, Ordering::SeqCst);
        match self.thread.take().map(JoinHandle::join) {
            Some(Ok(r)) => r,
            Some(Err(_)) => Err(TransportError::TransportDown("gateway thread panicked".into())),
            None => Ok(()),
        }
    }
}

impl Drop for HostHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// The operator's side of the gateway.
pub struct RemoteClient {
    client: TcpClient,
    secret: Vec<u8>,
    rng: ChaCha8Rng,
    timeout: Duration,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient").field("secret", &"<redacted>").finish()
    }
}

impl RemoteClient {
    pub fn connect(addr: &str, secret: &[u8]) -> Result<RemoteClient, TransportError> {
        Ok(RemoteClient {
            client: TcpClient::connect(addr, Duration::from_secs(5))?,
            secret: secret.to_vec(),
            rng: ChaCha8Rng::from_os_rng(),
            timeout: Duration::from_secs(60),
        })
    }

    pub fn request(&mut self, request: &ControlRequest) -> Result<ControlReply, TransportError> {
        let cred = issue_credential(&self.secret, OPERATOR, crate::transport::wall_micros());
        let env = wrap(encode(request), CLIENT, GATEWAY, cred.encode(), &mut self.rng);
        let reply = self.client.request(&env, self.timeout)?;
        let body = body_of(&reply).map_err(TransportError::Malformed)?;
        bincode::deserialize(&body).map_err(|e| TransportError::Malformed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::compile;
    use crate::tiers::Topology;

    const SECRET: &[u8] = b"host secret";

    fn host() -> HostHandle {
        let t = Topology::desk(2);
        let inst = t.boot(t.config(3), SECRET).unwrap();
        HostHandle::spawn(inst, SECRET, "127.0.0.1:0").unwrap()
    }

    #[test]
    fn serves_operator_requests() {
        let h = host();
        let mut c = RemoteClient::connect(h.addr(), SECRET).unwrap();
        let ControlReply::Text(status) = c.request(&ControlRequest::Status).unwrap() else { panic!() };
        assert!(status.contains("tier T2 dst node1 live"), "{status}");
        let geer = compile("N where dimension t; N = 0 fby.t (N + 1); end").unwrap();
        let r = c
            .request(&ControlRequest::Eval { geer: geer.encode(), node: None, context: vec![("t".into(), 5)] })
            .unwrap();
        assert_eq!(r, ControlReply::Outcome(Outcome::Value(Value::Int(5))));
        let r = c.request(&ControlRequest::Call { procedure: "mul".into(), args: vec![Value::Int(6), Value::Int(7)] });
        assert_eq!(r.unwrap(), ControlReply::Outcome(Outcome::Value(Value::Int(42))));
        assert!(matches!(c.request(&ControlRequest::Deallocate { tier: "T9".into() }).unwrap(), ControlReply::Error(_)));
        assert_eq!(c.request(&ControlRequest::Deallocate { tier: "T5".into() }).unwrap(), ControlReply::Done);
        assert_eq!(c.request(&ControlRequest::Shutdown).unwrap(), ControlReply::Done);
        h.stop().unwrap();
    }

    #[test]
    fn wrong_secret_is_rejected() {
        let h = host();
        let mut c = RemoteClient::connect(h.addr(), b"guess").unwrap();
        assert_eq!(c.request(&ControlRequest::Status).unwrap(), ControlReply::Error("rejected: bad_mac".into()));
        h.stop().unwrap();
    }
}
