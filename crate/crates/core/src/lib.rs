//! Demand-driven evaluation runtime for a small intensional language.

pub mod autonomic;
pub mod eduction;
pub mod forensic;
pub mod lang;
pub mod pipeline;
pub mod value;
pub mod recovery;
pub mod tiers;
pub mod transport;
