//! Execute-order-validate transaction lifecycle.
//!
//! Proposals are simulated against a world-state snapshot and endorsed,
//! the orderer batches the resulting transactions into blocks, and a peer
//! validates and commits every block. The validator runs in one of two
//! modes: plain MVCC, or CRDT merging of flagged writes followed by MVCC on
//! everything else.

mod chaincode;
mod orderer;
mod report;
mod sim;
mod types;
mod validate;

pub use chaincode::{
    endorse, simulate_proposal, Chaincode, ChaincodeError, ChaincodeStub, EndorsementPolicy,
    EndorsementRejection,
};
pub use orderer::{Orderer, OrdererConfig};
pub use report::{BlockRecord, RunReport, RunSummary, TxOutcome, TxRecord};
pub use sim::{
    run_pipeline, Peer, PipelineConfig, PipelineRun, Proposal, ServiceModel, SnapshotPolicy,
    TimingConfig,
};
pub use types::{
    Block, CutReason, ReadEntry, ReadWriteSet, Transaction, TxValidity, ValidatedBlock, WriteEntry,
};
pub use validate::{
    mvcc_validate, validate_endorsements_block, validate_merge_block, MergeStats, ValidationMode,
    Validator, VersionSource, WriteOverlay,
};

use thiserror::Error;

use crate::ledger::LedgerError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("duplicate key {0} in read-write set")]
    DuplicateKey(String),
    #[error("transaction {0} was already submitted")]
    DuplicateTransaction(String),
    #[error("orderer is shut down")]
    OrdererClosed,
    #[error("chaincode {chaincode} failed: {reason}")]
    ProposalFailure { chaincode: String, reason: String },
    #[error("endorsement policy needs 1 <= k <= n, got k={required}, n={known}")]
    InvalidPolicy { required: usize, known: usize },
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}
