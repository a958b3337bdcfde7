//! Self-management: credentials and the message gate, fluent-driven
//! policies and classification cache synchronization.

mod cache_sync;
mod credential;
mod policy;

pub use cache_sync::{sync_classification_caches, SyncNode, SyncReport, CLASSIFY_TAG};
pub use credential::{generate_secret, issue_credential, verify_envelope, Credential, Directory, RejectReason, Verdict};
pub use policy::{
    Condition, Fluent, PlannedAction, PolicyEngine, PolicyMapping, Predicate, Scope, HEAL_FAILED_TIERS,
    IN_CLASSIFICATION_STAGE, RESELECT_PROTOCOL, SYNC_CLASSIFICATION_CACHES, TIER_FAILURE,
};
