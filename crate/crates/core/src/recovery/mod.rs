//! Write-ahead logging, the transaction state machine and state images.

mod dump;
mod txn;
mod wal;

pub use dump::{dump_state, restore_state, DumpMode, PersistentImage, IMAGE_MAGIC};
pub use txn::{TxnEvent, TxnState};
pub use wal::{
    decode_log, encode_log, replay, DecodedLog, Recoverable, RecoverableService, ReplayReport, TxnId, WalEntry,
    WriteAheadLogger, WAL_MAGIC,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecoveryError {
    #[error("illegal transition: {event:?} from {state:?}")]
    IllegalTransition { state: Option<TxnState>, event: TxnEvent },
    #[error("log write failed: {0}")]
    LogWriteFailure(String),
    #[error("unknown transaction {0}")]
    UnknownTxn(TxnId),
    #[error("transaction id {0} is still live; cannot reuse it")]
    TxnIdExhausted(TxnId),
    #[error("corrupt log at entry {0}")]
    CorruptLog(usize),
    #[error("image integrity check failed")]
    IntegrityFailure,
    #[error("format error: {0}")]
    Format(String),
    #[error("applying transaction {txn} failed: {detail}")]
    Apply { txn: TxnId, detail: String },
}
