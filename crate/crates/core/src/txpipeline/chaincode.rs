use std::collections::BTreeSet;
use std::time::Duration;

use thiserror::Error;

use super::{PipelineError, ReadWriteSet, Transaction};
use crate::ledger::Snapshot;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("chaincode error: {0}")]
pub struct ChaincodeError(pub String);

/// Smart contract simulated by endorsing peers. Implementations must be
/// deterministic in `(args, snapshot)`.
pub trait Chaincode: Send + Sync {
    fn name(&self) -> &str;

    fn invoke(&self, args: &[String], stub: &mut ChaincodeStub<'_>) -> Result<(), ChaincodeError>;
}

/// State access handed to a chaincode during simulation. Reads come from a
/// frozen snapshot and are recorded; writes only go to the read-write set.
pub struct ChaincodeStub<'a> {
    snapshot: &'a Snapshot,
    rwset: ReadWriteSet,
}

impl<'a> ChaincodeStub<'a> {
    fn new(snapshot: &'a Snapshot) -> Self {
        ChaincodeStub {
            snapshot,
            rwset: ReadWriteSet::default(),
        }
    }

    pub fn get_state(&mut self, key: &str) -> Option<Vec<u8>> {
        let entry = self.snapshot.get_state(key);
        if !self.rwset.reads.iter().any(|r| r.key == key) {
            self.rwset
                .add_read(key, entry.map(|e| e.version))
                .expect("checked for duplicates above");
        }
        entry.map(|e| e.value.clone())
    }

    pub fn put_state(&mut self, key: &str, value: Vec<u8>) {
        self.put(key, value, false);
    }

    /// Flags the written value for merging instead of MVCC validation.
    pub fn put_crdt(&mut self, key: &str, value: Vec<u8>) {
        self.put(key, value, true);
    }

    fn put(&mut self, key: &str, value: Vec<u8>, is_crdt: bool) {
        self.rwset.writes.retain(|w| w.key != key);
        self.rwset
            .add_write(key, value, is_crdt)
            .expect("previous write for key removed");
    }
}

pub fn simulate_proposal(
    chaincode: &dyn Chaincode,
    args: &[String],
    snapshot: &Snapshot,
) -> Result<ReadWriteSet, PipelineError> {
    let mut stub = ChaincodeStub::new(snapshot);
    chaincode
        .invoke(args, &mut stub)
        .map_err(|e| PipelineError::ProposalFailure {
            chaincode: chaincode.name().to_string(),
            reason: e.0,
        })?;
    Ok(stub.rwset)
}

/// `k` of the known organizations must endorse a proposal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementPolicy {
    required: usize,
    known_orgs: BTreeSet<String>,
}

impl EndorsementPolicy {
    pub fn new(required: usize, known_orgs: BTreeSet<String>) -> Result<Self, PipelineError> {
        if required == 0 || required > known_orgs.len() {
            return Err(PipelineError::InvalidPolicy {
                required,
                known: known_orgs.len(),
            });
        }
        Ok(EndorsementPolicy {
            required,
            known_orgs,
        })
    }

    /// Policy over organizations named `org1..=orgN`.
    pub fn k_of_n(required: usize, n: usize) -> Result<Self, PipelineError> {
        Self::new(required, (1..=n).map(|i| format!("org{i}")).collect())
    }

    pub fn required(&self) -> usize {
        self.required
    }

    pub fn known_orgs(&self) -> &BTreeSet<String> {
        &self.known_orgs
    }

    pub fn is_satisfied_by(&self, endorsements: &BTreeSet<String>) -> bool {
        endorsements
            .iter()
            .filter(|org| self.known_orgs.contains(*org))
            .count()
            >= self.required
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("only {got} of the required {required} organizations endorsed the proposal")]
pub struct EndorsementRejection {
    pub got: usize,
    pub required: usize,
}

/// Client-side assembly of a transaction once enough organizations have
/// endorsed the read-write set. Unknown organizations do not count.
pub fn endorse(
    tx_id: &str,
    rwset: ReadWriteSet,
    policy: &EndorsementPolicy,
    responding_orgs: &BTreeSet<String>,
    submit_time: Duration,
) -> Result<Transaction, EndorsementRejection> {
    let endorsements: BTreeSet<String> = responding_orgs
        .iter()
        .filter(|org| policy.known_orgs.contains(*org))
        .cloned()
        .collect();
    if endorsements.len() < policy.required {
        return Err(EndorsementRejection {
            got: endorsements.len(),
            required: policy.required,
        });
    }
    Ok(Transaction {
        tx_id: tx_id.to_string(),
        rwset,
        endorsements,
        submit_time,
    })
}
