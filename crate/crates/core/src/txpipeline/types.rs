use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::ledger::Version;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadEntry {
    pub key: String,
    /// `None` is the nil version recorded for a key that was absent.
    pub version: Option<Version>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteEntry {
    pub key: String,
    #[serde(with = "bytes_b64")]
    pub value: Vec<u8>,
    pub is_crdt: bool,
}

/// Keys read during simulation (with versions) and key-values to write.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadWriteSet {
    pub reads: Vec<ReadEntry>,
    pub writes: Vec<WriteEntry>,
}

impl ReadWriteSet {
    pub fn add_read(&mut self, key: &str, version: Option<Version>) -> Result<(), PipelineError> {
        if self.reads.iter().any(|r| r.key == key) {
            return Err(PipelineError::DuplicateKey(key.to_string()));
        }
        self.reads.push(ReadEntry {
            key: key.to_string(),
            version,
        });
        Ok(())
    }

    pub fn add_write(&mut self, key: &str, value: Vec<u8>, is_crdt: bool) -> Result<(), PipelineError> {
        if self.writes.iter().any(|w| w.key == key) {
            return Err(PipelineError::DuplicateKey(key.to_string()));
        }
        self.writes.push(WriteEntry {
            key: key.to_string(),
            value,
            is_crdt,
        });
        Ok(())
    }

    pub fn is_read_only(&self) -> bool {
        self.writes.is_empty()
    }

    /// Every write is CRDT-flagged (and there is at least one).
    pub fn is_crdt_only(&self) -> bool {
        !self.writes.is_empty() && self.writes.iter().all(|w| w.is_crdt)
    }

    pub fn has_crdt_writes(&self) -> bool {
        self.writes.iter().any(|w| w.is_crdt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    pub rwset: ReadWriteSet,
    pub endorsements: BTreeSet<String>,
    pub submit_time: Duration,
}

impl Transaction {
    /// Size used by the orderer's byte limit.
    pub fn encoded_len(&self) -> usize {
        serde_json::to_vec(self).map(|v| v.len()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutReason {
    Count,
    Bytes,
    Timeout,
    Genesis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub transactions: Vec<Transaction>,
    pub cut_reason: CutReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxValidity {
    Valid,
    EndorsementFailure,
    MvccConflict,
    DecodeFailure,
    StructuralConflict,
}

impl TxValidity {
    pub fn is_valid(self) -> bool {
        self == TxValidity::Valid
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TxValidity::Valid => "valid",
            TxValidity::EndorsementFailure => "endorsement_failure",
            TxValidity::MvccConflict => "mvcc_conflict",
            TxValidity::DecodeFailure => "decode_failure",
            TxValidity::StructuralConflict => "structural_conflict",
        }
    }
}

/// A block after validation, with one flag per transaction. CRDT write
/// values have already been replaced by their merged form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedBlock {
    pub block: Block,
    pub validity: Vec<TxValidity>,
}

impl ValidatedBlock {
    pub fn valid_count(&self) -> usize {
        self.validity.iter().filter(|v| v.is_valid()).count()
    }

    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("block serialization cannot fail")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

mod bytes_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}
