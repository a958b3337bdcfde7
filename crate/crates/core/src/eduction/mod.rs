//! Demands, the demand store, the value warehouse and the evaluator.

mod context;
mod demand;
mod eval;
mod procedures;
mod query;
mod store;
mod warehouse;

pub use context::Context;
pub use demand::{
    encode_payload, signature_of, Claim, Demand, DemandKind, DemandPayload, DemandSignature, DemandState, Outcome,
};
pub use eval::{
    apply_binary, apply_unary, eval_eductive, eval_program, EvalConfig, EvalError, EvalStats, LocalServices, Machine,
    ProcRequest, Services, Step, DEFAULT_DEPTH_LIMIT,
};
pub use procedures::{Procedure, ProcedureTable};
pub use query::Query;
pub use store::{DeliveryOutcome, DemandStore, FetchResult, ResultObserver, SharedStore, StoreEntry};
pub use warehouse::{CachedValue, Warehouse, WarehouseKey};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EductionError {
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("demand store unavailable")]
    StoreUnavailable,
    #[error("unknown signature {0}")]
    UnknownSignature(DemandSignature),
    #[error("invalid demand: {0}")]
    InvalidDemand(String),
}
