//! Simulator for an execute-order-validate permissioned ledger whose
//! validator can merge conflicting JSON writes through an operation-based
//! JSON CRDT instead of rejecting them.
//!
//! ```
//! use crdtsim_core::jsoncrdt::{JsonCrdt, JsonValue};
//!
//! let a = JsonValue::parse(r#"{"readings":["15"]}"#).unwrap();
//! let b = JsonValue::parse(r#"{"readings":["20"]}"#).unwrap();
//! let mut crdt = JsonCrdt::init_empty("device1", &a).unwrap();
//! crdt.merge_json(&a).unwrap();
//! crdt.merge_json(&b).unwrap();
//! assert_eq!(crdt.to_json().unwrap().to_string(), r#"{"readings":["15","20"]}"#);
//! ```

pub mod config;
pub mod jsoncrdt;
pub mod ledger;
pub mod txpipeline;
pub mod workload;

pub use config::{ConfigError, SimConfig};
pub use jsoncrdt::{CrdtError, JsonCrdt, JsonValue};
pub use ledger::{BlockLog, LedgerError, Snapshot, Version, VersionedValue, WorldState};
pub use txpipeline::{
    run_pipeline, Block, Chaincode, PipelineConfig, PipelineError, PipelineRun, Proposal,
    ReadWriteSet, RunReport, RunSummary, Transaction, TxValidity, ValidatedBlock, ValidationMode,
};
pub use workload::{gen_stream, initial_state, IotChaincode, WorkloadConfig};
