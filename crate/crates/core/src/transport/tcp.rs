//! TCP loopback transport. Each connection carries a stream of frames; a
//! frame received on a connection can be answered on the same connection.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::envelope::{Envelope, MAX_FRAME};
use super::{frame_dropped, wall_micros, TransportError};
use crate::forensic::ForensicEvent;

fn down(addr: impl ToString) -> impl Fn(io::Error) -> TransportError {
    let addr = addr.to_string();
    move |e| TransportError::TransportDown(format!("{addr}: {e}"))
}

/// Reads one frame (prefix included). `Ok(None)` on clean end of stream.
pub fn read_frame(stream: &mut impl Read) -> Result<Option<Vec<u8>>, TransportError> {
    let mut len = [0u8; 4];
    match stream.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(TransportError::TransportDown(e.to_string())),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(TransportError::FrameTooLarge(n));
    }
    let mut frame = len.to_vec();
    frame.resize(4 + n, 0);
    stream.read_exact(&mut frame[4..]).map_err(|e| TransportError::Malformed(format!("short frame: {e}")))?;
    Ok(Some(frame))
}

pub fn write_envelope(stream: &mut impl Write, env: &Envelope) -> Result<(), TransportError> {
    let frame = env.encode_frame()?;
    stream.write_all(&frame).and_then(|_| stream.flush()).map_err(|e| TransportError::TransportDown(e.to_string()))
}

/// Writes back on the connection a request arrived on.
#[derive(Debug)]
pub struct Responder {
    stream: TcpStream,
}

impl Responder {
    pub fn reply(&mut self, env: &Envelope) -> Result<(), TransportError> {
        write_envelope(&mut self.stream, env)
    }
}

enum Incoming {
    Frame(Vec<u8>, TcpStream),
    Dropped(TransportError),
}

#[derive(Debug)]
pub struct TcpEndpoint {
    local: SocketAddr,
    rx: Receiver<Incoming>,
    closed: Arc<AtomicBool>,
    events: Vec<ForensicEvent>,
}

impl std::fmt::Debug for Incoming {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Incoming")
    }
}

impl TcpEndpoint {
    pub fn bind(addr: &str) -> Result<TcpEndpoint, TransportError> {
        let listener = TcpListener::bind(addr).map_err(down(addr))?;
        let local = listener.local_addr().map_err(down(addr))?;
        let (tx, rx) = channel();
        let closed = Arc::new(AtomicBool::new(false));
        let flag = closed.clone();
        thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let tx = tx.clone();
                thread::spawn(move || serve_connection(stream, tx));
            }
        });
        Ok(TcpEndpoint { local, rx, closed, events: Vec::new() })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    /// Next well-formed request together with a handle to answer it.
    pub fn recv_request(&mut self, timeout: Duration) -> Result<Option<(Envelope, Responder)>, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(Incoming::Frame(frame, stream)) => match Envelope::decode_frame(&frame) {
                    Ok(env) => return Ok(Some((env, Responder { stream }))),
                    Err(e) => {
                        self.events.push(frame_dropped(&self.local.to_string(), &e, wall_micros()));
                        let _ = stream.shutdown(Shutdown::Both);
                    }
                },
                Ok(Incoming::Dropped(e)) => self.events.push(frame_dropped(&self.local.to_string(), &e, wall_micros())),
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => return Err(TransportError::TransportDown(self.local.to_string())),
            }
        }
    }

    pub fn recv(&mut self, timeout: Duration) -> Result<Option<Envelope>, TransportError> {
        Ok(self.recv_request(timeout)?.map(|(e, _)| e))
    }

    pub fn take_events(&mut self) -> Vec<ForensicEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn close(&self) {
        if !self.closed.swap(true, Ordering::SeqCst) {
            // Wake the accept loop so it observes the flag.
            let _ = TcpStream::connect(self.local);
        }
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        self.close();
    }
}

fn serve_connection(mut stream: TcpStream, tx: Sender<Incoming>) {
    loop {
        match read_frame(&mut stream) {
            Ok(Some(frame)) => {
                let Ok(reply) = stream.try_clone() else { return };
                if tx.send(Incoming::Frame(frame, reply)).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                // A bad length prefix desynchronizes the stream; give up on it.
                let _ = tx.send(Incoming::Dropped(e));
                return;
            }
        }
    }
}

/// Client side of a connection.
#[derive(Debug)]
pub struct TcpClient {
    stream: TcpStream,
}

impl TcpClient {
    pub fn connect(addr: &str, timeout: Duration) -> Result<TcpClient, TransportError> {
        let sock: SocketAddr = addr.parse().map_err(|_| TransportError::TransportDown(format!("bad address {addr}")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout).map_err(down(addr))?;
        stream.set_nodelay(true).map_err(down(addr))?;
        Ok(TcpClient { stream })
    }

    pub fn send(&mut self, env: &Envelope) -> Result<(), TransportError> {
        write_envelope(&mut self.stream, env)
    }

    /// Sends `env` and waits for one reply frame.
    pub fn request(&mut self, env: &Envelope, timeout: Duration) -> Result<Envelope, TransportError> {
        self.send(env)?;
        self.stream.set_read_timeout(Some(timeout)).map_err(down("client"))?;
        match read_frame(&mut self.stream)? {
            Some(frame) => Envelope::decode_frame(&frame),
            None => Err(TransportError::TransportDown("connection closed before reply".into())),
        }
    }

    /// Writes raw bytes (fault injection).
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        self.stream.write_all(bytes).map_err(down("client"))
    }
}
