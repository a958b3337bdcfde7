//! Write-ahead log and recoverable services.
//!
//! File layout: the magic `EDWAL1`, then entries. Each entry is a u32
//! big-endian length followed by that many bytes:
//!
//! ```text
//! txn_id:u64  event:u8  lp(operation)  payload_len:u32 payload  checkpoint:u8  crc32:u32
//! ```
//!
//! `payload_len == u32::MAX` means "no payload"; event byte 0 marks a
//! checkpoint record. The CRC covers everything before it.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::txn::{TxnEvent, TxnState};
use super::RecoveryError;

pub type TxnId = u64;

pub const WAL_MAGIC: &[u8; 6] = b"EDWAL1";
const NO_PAYLOAD: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalEntry {
    pub txn_id: TxnId,
    /// `None` only for checkpoint records.
    pub event: Option<TxnEvent>,
    pub operation: String,
    pub payload: Option<Vec<u8>>,
    pub checkpoint: bool,
}

impl WalEntry {
    pub fn txn(txn_id: TxnId, event: TxnEvent, operation: &str, payload: Option<Vec<u8>>) -> WalEntry {
        WalEntry { txn_id, event: Some(event), operation: operation.to_owned(), payload, checkpoint: false }
    }

    pub fn checkpoint_marker() -> WalEntry {
        WalEntry { txn_id: 0, event: None, operation: String::new(), payload: None, checkpoint: true }
    }

    fn validate(&self) -> Result<(), String> {
        match self.event {
            None if !self.checkpoint => Err("non-checkpoint entry without event".into()),
            Some(e) if self.payload.is_some() && !e.carries_payload() => {
                Err(format!("{} entries carry no payload", e.name()))
            }
            Some(_) if self.txn_id == 0 => Err("transaction id 0 is reserved".into()),
            _ => Ok(()),
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let mut body = Vec::with_capacity(32 + self.operation.len());
        body.extend_from_slice(&self.txn_id.to_be_bytes());
        body.push(self.event.map_or(0, TxnEvent::byte));
        body.extend_from_slice(&(self.operation.len() as u32).to_be_bytes());
        body.extend_from_slice(self.operation.as_bytes());
        match &self.payload {
            Some(p) => {
                body.extend_from_slice(&(p.len() as u32).to_be_bytes());
                body.extend_from_slice(p);
            }
            None => body.extend_from_slice(&NO_PAYLOAD.to_be_bytes()),
        }
        body.push(u8::from(self.checkpoint));
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_be_bytes());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }

    fn decode_body(body: &[u8]) -> Option<WalEntry> {
        let (data, crc) = body.split_at(body.len().checked_sub(4)?);
        if crc32fast::hash(data) != u32::from_be_bytes(crc.try_into().ok()?) {
            return None;
        }
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = data.get(pos..pos + n)?;
            pos += n;
            Some(s)
        };
        let txn_id = u64::from_be_bytes(take(8)?.try_into().ok()?);
        let event_byte = take(1)?[0];
        let op_len = u32::from_be_bytes(take(4)?.try_into().ok()?) as usize;
        let operation = String::from_utf8(take(op_len)?.to_vec()).ok()?;
        let payload_len = u32::from_be_bytes(take(4)?.try_into().ok()?);
        let payload = if payload_len == NO_PAYLOAD { None } else { Some(take(payload_len as usize)?.to_vec()) };
        let checkpoint = match take(1)?[0] {
            0 => false,
            1 => true,
            _ => return None,
        };
        if pos != data.len() {
            return None;
        }
        let event = match event_byte {
            0 => None,
            b => Some(TxnEvent::from_byte(b)?),
        };
        let entry = WalEntry { txn_id, event, operation, payload, checkpoint };
        entry.validate().ok()?;
        Some(entry)
    }
}

/// Result of reading a log: the valid prefix, and where decoding stopped if
/// it did not reach the end cleanly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedLog {
    pub entries: Vec<WalEntry>,
    pub corrupt_at: Option<usize>,
}

pub fn encode_log(entries: &[WalEntry]) -> Vec<u8> {
    let mut out = WAL_MAGIC.to_vec();
    for e in entries {
        e.encode_into(&mut out);
    }
    out
}

pub fn decode_log(bytes: &[u8]) -> Result<DecodedLog, RecoveryError> {
    let rest = bytes
        .strip_prefix(WAL_MAGIC.as_slice())
        .ok_or_else(|| RecoveryError::Format("missing EDWAL1 magic".into()))?;
    let mut entries = Vec::new();
    let mut pos = 0;
    while pos < rest.len() {
        let entry = rest
            .get(pos..pos + 4)
            .map(|l| u32::from_be_bytes(l.try_into().unwrap()) as usize)
            .and_then(|len| rest.get(pos + 4..pos + 4 + len).map(|body| (len, body)))
            .and_then(|(len, body)| WalEntry::decode_body(body).map(|e| (len, e)));
        match entry {
            Some((len, e)) => {
                entries.push(e);
                pos += 4 + len;
            }
            None => return Ok(DecodedLog { corrupt_at: Some(entries.len()), entries }),
        }
    }
    Ok(DecodedLog { entries, corrupt_at: None })
}

#[derive(Debug)]
enum Sink {
    Memory(Vec<u8>),
    File { file: File, len: u64, durable: bool },
}

/// State that transactions mutate. `apply` runs once per committed
/// transaction, live and on replay, with the last payload the transaction
/// stashed at prepare or preliminary-complete.
pub trait Recoverable {
    fn apply(&mut self, operation: &str, payload: &[u8]) -> Result<(), String>;
}

#[derive(Debug)]
pub struct WriteAheadLogger {
    sink: Sink,
    entries: Vec<WalEntry>,
    states: BTreeMap<TxnId, TxnState>,
    operations: BTreeMap<TxnId, String>,
    next_id: TxnId,
    last_checkpoint: Option<u64>,
    fail_next_write: bool,
}

impl WriteAheadLogger {
    /// Simulation mode: the log lives in memory with the same ordering
    /// contract as a file.
    pub fn in_memory() -> Self {
        Self::with_sink(Sink::Memory(WAL_MAGIC.to_vec()))
    }

    fn with_sink(sink: Sink) -> Self {
        WriteAheadLogger {
            sink,
            entries: Vec::new(),
            states: BTreeMap::new(),
            operations: BTreeMap::new(),
            next_id: 1,
            last_checkpoint: None,
            fail_next_write: false,
        }
    }

    /// Creates (truncating) a log file. In durable mode every append is
    /// fsynced before it is acknowledged.
    pub fn create(path: &Path, durable: bool) -> Result<Self, RecoveryError> {
        let io = |e: std::io::Error| RecoveryError::LogWriteFailure(e.to_string());
        let mut file = OpenOptions::new().create(true).truncate(true).read(true).write(true).open(path).map_err(io)?;
        file.write_all(WAL_MAGIC).map_err(io)?;
        if durable {
            file.sync_data().map_err(io)?;
        }
        Ok(Self::with_sink(Sink::File { file, len: WAL_MAGIC.len() as u64, durable }))
    }

    /// Reopens an existing log and continues appending after its last valid
    /// entry, with transaction states rebuilt from it.
    pub fn open(path: &Path, durable: bool) -> Result<Self, RecoveryError> {
        let io = |e: std::io::Error| RecoveryError::LogWriteFailure(e.to_string());
        let mut file = OpenOptions::new().read(true).write(true).open(path).map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;
        let decoded = decode_log(&bytes)?;
        let valid = encode_log(&decoded.entries);
        file.set_len(valid.len() as u64).map_err(io)?;
        file.seek(SeekFrom::End(0)).map_err(io)?;
        let mut logger = Self::with_sink(Sink::File { file, len: valid.len() as u64, durable });
        for (pos, e) in decoded.entries.into_iter().enumerate() {
            logger.absorb(&e, pos as u64);
            logger.entries.push(e);
        }
        Ok(logger)
    }

    /// An in-memory log that continues after the valid prefix of `bytes`.
    pub fn resume_in_memory(bytes: &[u8]) -> Result<Self, RecoveryError> {
        let decoded = decode_log(bytes)?;
        let mut logger = Self::with_sink(Sink::Memory(encode_log(&decoded.entries)));
        for (pos, e) in decoded.entries.into_iter().enumerate() {
            logger.absorb(&e, pos as u64);
            logger.entries.push(e);
        }
        Ok(logger)
    }

    /// Rebuilds in-memory bookkeeping from an already-written entry.
    fn absorb(&mut self, e: &WalEntry, pos: u64) {
        match e.event {
            None => self.last_checkpoint = Some(pos),
            Some(ev) => {
                let next = TxnState::next(self.states.get(&e.txn_id).copied().filter(|s| ev != TxnEvent::Request || !s.is_final()), ev);
                if let Some(s) = next {
                    self.states.insert(e.txn_id, s);
                    self.operations.insert(e.txn_id, e.operation.clone());
                }
                if e.txn_id >= self.next_id {
                    self.next_id = e.txn_id.wrapping_add(1).max(1);
                }
            }
        }
    }

    /// Fault injection: the next append fails with `LogWriteFailure`.
    pub fn inject_write_failure(&mut self) {
        self.fail_next_write = true;
    }

    /// Forces the next allocated id (overflow tests).
    pub fn set_next_id(&mut self, id: TxnId) {
        self.next_id = id;
    }

    /// Appends one entry; nothing is recorded if the write fails.
    pub fn append(&mut self, entry: WalEntry) -> Result<u64, RecoveryError> {
        entry.validate().map_err(RecoveryError::Format)?;
        if std::mem::take(&mut self.fail_next_write) {
            return Err(RecoveryError::LogWriteFailure("injected write failure".into()));
        }
        let mut bytes = Vec::new();
        entry.encode_into(&mut bytes);
        match &mut self.sink {
            Sink::Memory(buf) => buf.extend_from_slice(&bytes),
            Sink::File { file, len, durable } => {
                let res = file.write_all(&bytes).and_then(|_| if *durable { file.sync_data() } else { Ok(()) });
                if let Err(e) = res {
                    let _ = file.set_len(*len);
                    let _ = file.seek(SeekFrom::Start(*len));
                    return Err(RecoveryError::LogWriteFailure(e.to_string()));
                }
                *len += bytes.len() as u64;
            }
        }
        self.entries.push(entry);
        Ok(self.entries.len() as u64 - 1)
    }

    /// Records a checkpoint and returns its position. Finished transactions
    /// before it no longer block id reuse.
    pub fn checkpoint(&mut self) -> Result<u64, RecoveryError> {
        let pos = self.append(WalEntry::checkpoint_marker())?;
        self.last_checkpoint = Some(pos);
        self.states.retain(|_, s| !s.is_final());
        let live: Vec<TxnId> = self.states.keys().copied().collect();
        self.operations.retain(|id, _| live.contains(id));
        Ok(pos)
    }

    pub fn last_checkpoint(&self) -> Option<u64> {
        self.last_checkpoint
    }

    /// Ids wrap from `u64::MAX` to 1. Reusing an id that is still live in
    /// the un-truncated log is a hard error.
    fn allocate_id(&mut self) -> Result<TxnId, RecoveryError> {
        let id = self.next_id;
        if self.states.contains_key(&id) {
            return Err(RecoveryError::TxnIdExhausted(id));
        }
        Ok(id)
    }

    /// Starts a transaction: logs `request` and returns its id.
    pub fn request(&mut self, operation: &str) -> Result<TxnId, RecoveryError> {
        let id = self.allocate_id()?;
        self.append(WalEntry::txn(id, TxnEvent::Request, operation, None))?;
        self.states.insert(id, TxnState::Requested);
        self.operations.insert(id, operation.to_owned());
        self.next_id = if id == u64::MAX { 1 } else { id + 1 };
        Ok(id)
    }

    /// Logs `event` for `txn`, then advances its state.
    pub fn advance(&mut self, txn: TxnId, event: TxnEvent, payload: Option<Vec<u8>>) -> Result<TxnState, RecoveryError> {
        if event == TxnEvent::Request {
            return Err(RecoveryError::IllegalTransition { state: self.states.get(&txn).copied(), event });
        }
        let current = *self.states.get(&txn).ok_or(RecoveryError::UnknownTxn(txn))?;
        let next = TxnState::next(Some(current), event)
            .ok_or(RecoveryError::IllegalTransition { state: Some(current), event })?;
        if payload.is_some() && !event.carries_payload() {
            return Err(RecoveryError::Format(format!("{} carries no payload", event.name())));
        }
        let op = self.operations[&txn].clone();
        self.append(WalEntry::txn(txn, event, &op, payload))?;
        self.states.insert(txn, next);
        Ok(next)
    }

    pub fn state(&self, txn: TxnId) -> Option<TxnState> {
        self.states.get(&txn).copied()
    }

    pub fn entries(&self) -> &[WalEntry] {
        &self.entries
    }

    /// The full log as it would appear on disk.
    pub fn bytes(&self) -> Vec<u8> {
        match &self.sink {
            Sink::Memory(buf) => buf.clone(),
            Sink::File { .. } => encode_log(&self.entries),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub applied: Vec<TxnId>,
    pub discarded: Vec<TxnId>,
    pub aborted: Vec<TxnId>,
    pub entries_read: usize,
    /// Index of the first entry that could not be used, if any.
    pub corrupt_at: Option<usize>,
}

#[derive(Debug, Default)]
struct Replaying {
    state: Option<TxnState>,
    payload: Option<Vec<u8>>,
}

/// Rebuilds state from a log.
///
/// Without a base image, every committed transaction in the log is applied
/// to `R::default()`. With a base image (taken at the last checkpoint), only
/// transactions committed after that checkpoint are applied. A commit at the
/// log tail counts even without its `end`. Replay stops at the first
/// undecodable or out-of-order entry and reports it.
pub fn replay<R: Recoverable + Default>(log: &[u8], base: Option<R>) -> Result<(R, ReplayReport), RecoveryError> {
    let decoded = decode_log(log)?;
    let from_checkpoint = base.is_some();
    let mut state = base.unwrap_or_default();
    let start = if from_checkpoint {
        decoded.entries.iter().rposition(|e| e.checkpoint).map_or(0, |p| p + 1)
    } else {
        0
    };
    let mut report = ReplayReport { corrupt_at: decoded.corrupt_at, ..ReplayReport::default() };
    let mut txns: BTreeMap<TxnId, Replaying> = BTreeMap::new();
    for (i, e) in decoded.entries.iter().enumerate() {
        let Some(event) = e.event else { continue };
        let slot = txns.entry(e.txn_id).or_default();
        if event == TxnEvent::Request && slot.state.is_some_and(TxnState::is_final) {
            *slot = Replaying::default();
        }
        let Some(next) = TxnState::next(slot.state, event) else {
            report.corrupt_at = Some(i);
            break;
        };
        slot.state = Some(next);
        if matches!(event, TxnEvent::Prepare | TxnEvent::PreliminaryComplete) && e.payload.is_some() {
            slot.payload = e.payload.clone();
        }
        report.entries_read = i + 1;
        if event == TxnEvent::Commit && i >= start {
            let payload = slot.payload.clone().unwrap_or_default();
            state
                .apply(&e.operation, &payload)
                .map_err(|detail| RecoveryError::Apply { txn: e.txn_id, detail })?;
            report.applied.push(e.txn_id);
        }
        if event == TxnEvent::Abort && i >= start {
            report.aborted.push(e.txn_id);
        }
    }
    if decoded.corrupt_at.is_none() && report.corrupt_at.is_none() {
        report.entries_read = decoded.entries.len();
    }
    report.discarded = txns
        .iter()
        .filter(|(_, t)| !matches!(t.state, Some(TxnState::Committed | TxnState::Ended | TxnState::Aborted)))
        .map(|(id, _)| *id)
        .collect();
    Ok((state, report))
}

/// A recoverable service: state `R` whose every change goes through a
/// logged transaction.
#[derive(Debug)]
pub struct RecoverableService<R> {
    logger: WriteAheadLogger,
    state: R,
}

impl<R: Recoverable> RecoverableService<R> {
    pub fn new(logger: WriteAheadLogger, state: R) -> Self {
        RecoverableService { logger, state }
    }

    pub fn state(&self) -> &R {
        &self.state
    }

    /// For state that is not recovered (leases, caches): changes made here
    /// are not logged.
    pub fn volatile_mut(&mut self) -> &mut R {
        &mut self.state
    }

    pub fn logger(&self) -> &WriteAheadLogger {
        &self.logger
    }

    pub fn logger_mut(&mut self) -> &mut WriteAheadLogger {
        &mut self.logger
    }

    pub fn into_parts(self) -> (WriteAheadLogger, R) {
        (self.logger, self.state)
    }

    /// request, begin, prepare (stashing the effect).
    pub fn prepare(&mut self, operation: &str, effect: Vec<u8>) -> Result<TxnId, RecoveryError> {
        let id = self.logger.request(operation)?;
        self.logger.advance(id, TxnEvent::Begin, None)?;
        self.logger.advance(id, TxnEvent::Prepare, Some(effect))?;
        Ok(id)
    }

    pub fn preliminary_complete(&mut self, txn: TxnId, effect: Vec<u8>) -> Result<(), RecoveryError> {
        self.logger.advance(txn, TxnEvent::PreliminaryComplete, Some(effect)).map(|_| ())
    }

    /// Logs the commit, then applies the stashed effect.
    pub fn commit(&mut self, txn: TxnId) -> Result<(), RecoveryError> {
        let effect = self
            .logger
            .entries()
            .iter()
            .rev()
            .find(|e| e.txn_id == txn && matches!(e.event, Some(TxnEvent::Prepare | TxnEvent::PreliminaryComplete)))
            .and_then(|e| e.payload.clone())
            .unwrap_or_default();
        let op = self.logger.operations.get(&txn).cloned().ok_or(RecoveryError::UnknownTxn(txn))?;
        self.logger.advance(txn, TxnEvent::Commit, None)?;
        self.state.apply(&op, &effect).map_err(|detail| RecoveryError::Apply { txn, detail })
    }

    pub fn end(&mut self, txn: TxnId) -> Result<(), RecoveryError> {
        self.logger.advance(txn, TxnEvent::End, None).map(|_| ())
    }

    pub fn abort(&mut self, txn: TxnId) -> Result<(), RecoveryError> {
        self.logger.advance(txn, TxnEvent::Abort, None).map(|_| ())
    }

    /// The whole lifecycle for one effect.
    pub fn execute(&mut self, operation: &str, effect: Vec<u8>) -> Result<TxnId, RecoveryError> {
        let id = self.prepare(operation, effect)?;
        self.commit(id)?;
        self.end(id)?;
        Ok(id)
    }
}
