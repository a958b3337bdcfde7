use std::collections::HashMap;
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::envelope::Envelope;
use super::{frame_dropped, wall_micros, TransportError};
use crate::forensic::ForensicEvent;

/// In-process transport: one FIFO queue per address.
#[derive(Clone, Default, Debug)]
pub struct InProcHub {
    queues: Arc<Mutex<HashMap<String, Sender<Vec<u8>>>>>,
}

impl InProcHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&self, address: &str) -> InProcEndpoint {
        let (tx, rx) = channel();
        self.queues.lock().unwrap().insert(address.to_owned(), tx);
        InProcEndpoint { address: address.to_owned(), hub: self.clone(), rx, events: Vec::new() }
    }

    pub fn close(&self, address: &str) {
        self.queues.lock().unwrap().remove(address);
    }

    pub fn send(&self, to: &str, env: &Envelope) -> Result<(), TransportError> {
        let frame = env.encode_frame()?;
        self.send_raw(to, frame)
    }

    /// Hands raw bytes to an endpoint, bypassing encoding (fault injection).
    pub fn send_raw(&self, to: &str, frame: Vec<u8>) -> Result<(), TransportError> {
        let queues = self.queues.lock().unwrap();
        let tx = queues.get(to).ok_or_else(|| TransportError::TransportDown(to.to_owned()))?;
        tx.send(frame).map_err(|_| TransportError::TransportDown(to.to_owned()))
    }
}

#[derive(Debug)]
pub struct InProcEndpoint {
    address: String,
    hub: InProcHub,
    rx: Receiver<Vec<u8>>,
    events: Vec<ForensicEvent>,
}

impl InProcEndpoint {
    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn hub(&self) -> &InProcHub {
        &self.hub
    }

    /// Next well-formed envelope, or `None` once `timeout` passes. Malformed
    /// frames are dropped and recorded.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<Envelope>, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(frame) => match Envelope::decode_frame(&frame) {
                    Ok(env) => return Ok(Some(env)),
                    Err(e) => self.events.push(frame_dropped(&self.address, &e, wall_micros())),
                },
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => return Err(TransportError::TransportDown(self.address.clone())),
            }
        }
    }

    pub fn take_events(&mut self) -> Vec<ForensicEvent> {
        std::mem::take(&mut self.events)
    }
}

impl Drop for InProcEndpoint {
    fn drop(&mut self) {
        self.hub.close(&self.address);
    }
}
