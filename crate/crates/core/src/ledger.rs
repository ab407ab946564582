//! Versioned world state and the append-only block log.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::txpipeline::ValidatedBlock;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("block height {got} does not extend a log of length {expected}")]
    OrderingViolation { expected: u64, got: u64 },
    #[error("version of {key} would move backwards from {current} to {proposed}")]
    VersionRegression {
        key: String,
        current: Version,
        proposed: Version,
    },
    #[error("block log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt block log record {index}: {reason}")]
    Corrupt { index: usize, reason: String },
}

/// Position of the transaction that last wrote a key.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
pub struct Version {
    pub block_height: u64,
    pub tx_index: u32,
}

impl Version {
    pub fn new(block_height: u64, tx_index: u32) -> Self {
        Version {
            block_height,
            tx_index,
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.block_height, self.tx_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedValue {
    pub value: Vec<u8>,
    pub version: Version,
}

type Entries = BTreeMap<String, VersionedValue>;

/// Frozen read-only view of the world state. Cheap to clone and share.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    entries: Arc<Entries>,
}

impl Snapshot {
    pub fn get_state(&self, key: &str) -> Option<&VersionedValue> {
        self.entries.get(key)
    }

    pub fn version(&self, key: &str) -> Option<Version> {
        self.entries.get(key).map(|v| v.version)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Live world state. Writes copy the underlying map only while a snapshot
/// still references it.
#[derive(Debug, Clone, Default)]
pub struct WorldState {
    entries: Arc<Entries>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_state(&self, key: &str) -> Option<&VersionedValue> {
        self.entries.get(key)
    }

    pub fn version(&self, key: &str) -> Option<Version> {
        self.entries.get(key).map(|v| v.version)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            entries: Arc::clone(&self.entries),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &VersionedValue)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn put(&mut self, key: &str, value: Vec<u8>, version: Version) -> Result<(), LedgerError> {
        if let Some(current) = self.version(key) {
            if version <= current {
                return Err(LedgerError::VersionRegression {
                    key: key.to_string(),
                    current,
                    proposed: version,
                });
            }
        }
        Arc::make_mut(&mut self.entries).insert(key.to_string(), VersionedValue { value, version });
        Ok(())
    }

    /// Applies the writes of every valid transaction in block order and
    /// appends the whole block, valid and invalid transactions alike, to
    /// the log.
    pub fn commit_block(
        &mut self,
        log: &mut BlockLog,
        block: ValidatedBlock,
    ) -> Result<CommitReport, LedgerError> {
        let height = block.block.height;
        if height != log.len() as u64 {
            return Err(LedgerError::OrderingViolation {
                expected: log.len() as u64,
                got: height,
            });
        }
        let report = self.apply_block(&block)?;
        log.append(block)?;
        Ok(report)
    }

    fn apply_block(&mut self, block: &ValidatedBlock) -> Result<CommitReport, LedgerError> {
        let height = block.block.height;
        let mut report = CommitReport {
            height,
            valid: 0,
            invalid: 0,
        };
        for (index, (tx, validity)) in block
            .block
            .transactions
            .iter()
            .zip(&block.validity)
            .enumerate()
        {
            if !validity.is_valid() {
                report.invalid += 1;
                continue;
            }
            report.valid += 1;
            let version = Version::new(height, index as u32);
            for write in &tx.rwset.writes {
                self.put(&write.key, write.value.clone(), version)?;
            }
        }
        Ok(report)
    }

    /// Rebuilds the state by replaying committed blocks from genesis.
    pub fn replay<'a, I>(blocks: I) -> Result<WorldState, LedgerError>
    where
        I: IntoIterator<Item = &'a ValidatedBlock>,
    {
        let mut ws = WorldState::new();
        for (expected, block) in blocks.into_iter().enumerate() {
            if block.block.height != expected as u64 {
                return Err(LedgerError::OrderingViolation {
                    expected: expected as u64,
                    got: block.block.height,
                });
            }
            ws.apply_block(block)?;
        }
        Ok(ws)
    }

    /// Deterministic binary encoding: entries in key order, each as
    /// length-prefixed key, length-prefixed value, height and index.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (key, entry) in self.entries.iter() {
            out.extend_from_slice(&(key.len() as u32).to_be_bytes());
            out.extend_from_slice(key.as_bytes());
            out.extend_from_slice(&(entry.value.len() as u32).to_be_bytes());
            out.extend_from_slice(&entry.value);
            out.extend_from_slice(&entry.version.block_height.to_be_bytes());
            out.extend_from_slice(&entry.version.tx_index.to_be_bytes());
        }
        out
    }

    /// Hex SHA-256 of [`canonical_bytes`](Self::canonical_bytes).
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommitReport {
    pub height: u64,
    pub valid: usize,
    pub invalid: usize,
}

/// Append-only list of committed blocks, optionally mirrored to a file.
#[derive(Debug, Default)]
pub struct BlockLog {
    blocks: Vec<ValidatedBlock>,
    sink: Option<BufWriter<File>>,
}

impl BlockLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates (or truncates) `path` and writes every appended block to it.
    pub fn persistent(path: &Path) -> Result<Self, LedgerError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        Ok(BlockLog {
            blocks: Vec::new(),
            sink: Some(BufWriter::new(file)),
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[ValidatedBlock] {
        &self.blocks
    }

    pub fn get(&self, height: u64) -> Option<&ValidatedBlock> {
        self.blocks.get(height as usize)
    }

    fn append(&mut self, block: ValidatedBlock) -> Result<(), LedgerError> {
        if let Some(sink) = self.sink.as_mut() {
            write_record(sink, &block)?;
            sink.flush()?;
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Reads every record of a block-log file.
    pub fn read_file(path: &Path) -> Result<Vec<ValidatedBlock>, LedgerError> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut blocks = Vec::new();
        loop {
            let mut len = [0u8; 4];
            match reader.read_exact(&mut len) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let mut record = vec![0u8; u32::from_be_bytes(len) as usize];
            reader
                .read_exact(&mut record)
                .map_err(|e| LedgerError::Corrupt {
                    index: blocks.len(),
                    reason: e.to_string(),
                })?;
            let block = ValidatedBlock::decode(&record).map_err(|e| LedgerError::Corrupt {
                index: blocks.len(),
                reason: e.to_string(),
            })?;
            blocks.push(block);
        }
        Ok(blocks)
    }
}

fn write_record(sink: &mut impl Write, block: &ValidatedBlock) -> io::Result<()> {
    let encoded = block.encode();
    sink.write_all(&(encoded.len() as u32).to_be_bytes())?;
    sink.write_all(&encoded)
}
