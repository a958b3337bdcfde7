//! A five-transaction script over a string ledger, for crash sweeps.

use eductive::recovery::{decode_log, Recoverable, RecoverableService, TxnEvent, WriteAheadLogger};

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Ledger(pub Vec<String>);

impl Recoverable for Ledger {
    fn apply(&mut self, operation: &str, payload: &[u8]) -> Result<(), String> {
        match operation {
            "append" => self.0.push(String::from_utf8(payload.to_vec()).map_err(|e| e.to_string())?),
            "clear" => self.0.clear(),
            other => return Err(format!("unknown operation {other}")),
        }
        Ok(())
    }
}

/// Five transactions: plain, plain, aborted, revised at preliminary
/// completion, and a clear followed by its end.
pub fn script(svc: &mut RecoverableService<Ledger>) {
    svc.execute("append", b"alpha".to_vec()).unwrap();
    svc.execute("append", b"beta".to_vec()).unwrap();
    let t = svc.prepare("append", b"gamma".to_vec()).unwrap();
    svc.abort(t).unwrap();
    let t = svc.prepare("append", b"delta-draft".to_vec()).unwrap();
    svc.preliminary_complete(t, b"delta".to_vec()).unwrap();
    svc.commit(t).unwrap();
    svc.end(t).unwrap();
    let t = svc.prepare("append", b"epsilon".to_vec()).unwrap();
    svc.commit(t).unwrap();
    svc.end(t).unwrap();
}

pub fn full_log() -> (Vec<u8>, Ledger) {
    let mut svc = RecoverableService::new(WriteAheadLogger::in_memory(), Ledger::default());
    script(&mut svc);
    let (logger, state) = svc.into_parts();
    (logger.bytes(), state)
}

/// Effects of the commit entries among the first `n` entries, computed
/// from the entry list alone.
pub fn expected(bytes: &[u8], n: usize) -> Ledger {
    let entries = decode_log(bytes).unwrap().entries;
    let mut out = Ledger::default();
    for (i, e) in entries.iter().enumerate().take(n) {
        if e.event == Some(TxnEvent::Commit) {
            let payload = entries[..i]
                .iter()
                .rev()
                .find(|p| p.txn_id == e.txn_id && matches!(p.event, Some(TxnEvent::Prepare | TxnEvent::PreliminaryComplete)))
                .and_then(|p| p.payload.clone())
                .unwrap_or_default();
            out.apply(&e.operation, &payload).unwrap();
        }
    }
    out
}

pub fn encode_len(bytes: &[u8], entries: usize) -> usize {
    eductive::recovery::encode_log(&decode_log(bytes).unwrap().entries[..entries]).len()
}

