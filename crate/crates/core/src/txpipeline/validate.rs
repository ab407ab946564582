use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Block, EndorsementPolicy, Transaction, TxValidity, ValidatedBlock};
use crate::jsoncrdt::{CrdtError, JsonCrdt, JsonValue, MergeOptions};
use crate::ledger::{Snapshot, Version, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    /// Every transaction goes through MVCC validation.
    Fabric,
    /// CRDT-flagged writes are merged; only the rest is MVCC-validated.
    #[default]
    Crdt,
}

impl std::str::FromStr for ValidationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fabric" => Ok(ValidationMode::Fabric),
            "crdt" => Ok(ValidationMode::Crdt),
            other => Err(format!("unknown mode {other:?}; expected fabric or crdt")),
        }
    }
}

impl std::fmt::Display for ValidationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ValidationMode::Fabric => "fabric",
            ValidationMode::Crdt => "crdt",
        })
    }
}

/// Read access to committed key versions.
pub trait VersionSource {
    fn current_version(&self, key: &str) -> Option<Version>;
}

impl VersionSource for WorldState {
    fn current_version(&self, key: &str) -> Option<Version> {
        self.version(key)
    }
}

impl VersionSource for Snapshot {
    fn current_version(&self, key: &str) -> Option<Version> {
        self.version(key)
    }
}

/// Versions written by earlier valid transactions of the block being
/// validated.
pub type WriteOverlay = HashMap<String, Version>;

/// A transaction is valid iff every read version still matches the
/// committed version, as overlaid with writes of preceding valid
/// transactions in the same block. A nil read only matches an absent key.
pub fn mvcc_validate(
    tx: &Transaction,
    state: &impl VersionSource,
    overlay: &WriteOverlay,
) -> TxValidity {
    mvcc_check(tx, state, overlay, &HashSet::new())
}

fn mvcc_check(
    tx: &Transaction,
    state: &impl VersionSource,
    overlay: &WriteOverlay,
    exempt: &HashSet<&str>,
) -> TxValidity {
    let stale = tx
        .rwset
        .reads
        .iter()
        .filter(|r| !exempt.contains(r.key.as_str()))
        .any(|r| {
            let current = overlay
                .get(&r.key)
                .copied()
                .or_else(|| state.current_version(&r.key));
            current != r.version
        });
    if stale {
        TxValidity::MvccConflict
    } else {
        TxValidity::Valid
    }
}

pub fn validate_endorsements_block(block: &Block, policy: &EndorsementPolicy) -> Vec<bool> {
    block
        .transactions
        .iter()
        .map(|tx| policy.is_satisfied_by(&tx.endorsements))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeStats {
    /// Distinct keys that received a CRDT merge.
    pub crdt_keys: usize,
    /// CRDT write values merged.
    pub merged_values: usize,
    /// Insert operations generated across all merges.
    pub ops_generated: usize,
    /// Wall-clock time spent inside validation.
    pub elapsed: Duration,
}

/// Validates a block and, in CRDT mode, merges CRDT writes per key.
///
/// `endorsed[i]` is the endorsement-policy result for transaction `i`;
/// transactions that failed it take no part in merging or MVCC.
pub fn validate_merge_block(
    mut block: Block,
    endorsed: &[bool],
    state: &impl VersionSource,
    mode: ValidationMode,
    options: MergeOptions,
) -> (ValidatedBlock, MergeStats) {
    assert_eq!(endorsed.len(), block.transactions.len());
    let started = Instant::now();
    let mut stats = MergeStats::default();

    let mut merge_failures: Vec<Option<TxValidity>> = vec![None; block.transactions.len()];
    let mut crdts: BTreeMap<String, JsonCrdt> = BTreeMap::new();
    if mode == ValidationMode::Crdt {
        for (i, tx) in block.transactions.iter().enumerate() {
            if !endorsed[i] || !tx.rwset.has_crdt_writes() {
                continue;
            }
            match merge_transaction(tx, &mut crdts, options) {
                Ok(ops) => {
                    stats.ops_generated += ops;
                    stats.merged_values += tx.rwset.writes.iter().filter(|w| w.is_crdt).count();
                }
                Err(e) => {
                    warn!("transaction {} excluded from merge: {e}", tx.tx_id);
                    merge_failures[i] = Some(match e {
                        CrdtError::StructuralConflict { .. } => TxValidity::StructuralConflict,
                        _ => TxValidity::DecodeFailure,
                    });
                }
            }
        }
    }

    let mut overlay = WriteOverlay::new();
    let validity: Vec<TxValidity> = block
        .transactions
        .iter()
        .enumerate()
        .map(|(i, tx)| {
            let outcome = if !endorsed[i] {
                TxValidity::EndorsementFailure
            } else if let Some(failure) = merge_failures[i] {
                failure
            } else {
                match mode {
                    ValidationMode::Fabric => mvcc_check(tx, state, &overlay, &HashSet::new()),
                    ValidationMode::Crdt if tx.rwset.is_crdt_only() => TxValidity::Valid,
                    ValidationMode::Crdt => {
                        let exempt: HashSet<&str> = tx
                            .rwset
                            .writes
                            .iter()
                            .filter(|w| w.is_crdt)
                            .map(|w| w.key.as_str())
                            .collect();
                        mvcc_check(tx, state, &overlay, &exempt)
                    }
                }
            };
            if outcome.is_valid() {
                let version = Version::new(block.height, i as u32);
                for w in &tx.rwset.writes {
                    overlay.insert(w.key.clone(), version);
                }
            }
            outcome
        })
        .collect();

    if mode == ValidationMode::Crdt && !crdts.is_empty() {
        stats.crdt_keys = crdts.len();
        let merged: HashMap<&str, Vec<u8>> = crdts
            .iter()
            .map(|(key, crdt)| {
                let doc = crdt
                    .to_json()
                    .expect("locally generated operations never wait on dependencies");
                (key.as_str(), doc.to_canonical_bytes())
            })
            .collect();
        for tx in &mut block.transactions {
            for w in tx.rwset.writes.iter_mut().filter(|w| w.is_crdt) {
                if let Some(bytes) = merged.get(w.key.as_str()) {
                    w.value = bytes.clone();
                }
            }
        }
    }

    stats.elapsed = started.elapsed();
    (ValidatedBlock { block, validity }, stats)
}

/// Decodes and checks every CRDT write of `tx` before merging any of them,
/// so a rejected transaction contributes nothing.
fn merge_transaction(
    tx: &Transaction,
    crdts: &mut BTreeMap<String, JsonCrdt>,
    options: MergeOptions,
) -> Result<usize, CrdtError> {
    let docs = tx
        .rwset
        .writes
        .iter()
        .filter(|w| w.is_crdt)
        .map(|w| Ok((w.key.as_str(), JsonValue::from_bytes(&w.value)?)))
        .collect::<Result<Vec<_>, CrdtError>>()?;

    for (key, doc) in &docs {
        match crdts.get(*key) {
            Some(crdt) => crdt.check_mergeable(doc)?,
            None => JsonCrdt::init_with_options(key, doc, options)?.check_mergeable(doc)?,
        }
    }

    let mut ops = 0;
    for (key, doc) in &docs {
        if !crdts.contains_key(*key) {
            crdts.insert(key.to_string(), JsonCrdt::init_with_options(key, doc, options)?);
        }
        let crdt = crdts.get_mut(*key).expect("inserted above");
        ops += crdt.merge_json(doc)?;
    }
    Ok(ops)
}

/// Endorsement check followed by [`validate_merge_block`].
#[derive(Debug, Clone)]
pub struct Validator {
    pub mode: ValidationMode,
    pub policy: EndorsementPolicy,
    pub merge_options: MergeOptions,
}

impl Validator {
    pub fn validate(&self, block: Block, state: &impl VersionSource) -> (ValidatedBlock, MergeStats) {
        let endorsed = validate_endorsements_block(&block, &self.policy);
        validate_merge_block(block, &endorsed, state, self.mode, self.merge_options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txpipeline::{CutReason, ReadWriteSet};
    use std::collections::BTreeSet;

    fn tx(id: &str, reads: &[(&str, Option<Version>)], writes: &[(&str, &str, bool)]) -> Transaction {
        let mut rwset = ReadWriteSet::default();
        for (k, v) in reads {
            rwset.add_read(k, *v).unwrap();
        }
        for (k, v, crdt) in writes {
            rwset.add_write(k, v.as_bytes().to_vec(), *crdt).unwrap();
        }
        Transaction {
            tx_id: id.into(),
            rwset,
            endorsements: BTreeSet::from(["org1".to_string(), "org2".to_string()]),
            submit_time: Duration::ZERO,
        }
    }

    fn block(txs: Vec<Transaction>) -> Block {
        Block {
            height: 1,
            transactions: txs,
            cut_reason: CutReason::Count,
        }
    }

    fn v(h: u64, i: u32) -> Option<Version> {
        Some(Version::new(h, i))
    }

    #[test]
    fn nil_read_matches_only_absent_keys() {
        let mut ws = WorldState::new();
        let t = tx("t", &[("k", None)], &[("k", "v", false)]);
        assert_eq!(mvcc_validate(&t, &ws, &WriteOverlay::new()), TxValidity::Valid);
        ws.put("k", vec![], Version::new(0, 0)).unwrap();
        assert_eq!(mvcc_validate(&t, &ws, &WriteOverlay::new()), TxValidity::MvccConflict);
    }

    #[test]
    fn overlay_takes_precedence_over_committed_version() {
        let mut ws = WorldState::new();
        ws.put("k", vec![], Version::new(0, 0)).unwrap();
        let t = tx("t", &[("k", v(0, 0))], &[("k", "v", false)]);
        let mut overlay = WriteOverlay::new();
        assert!(mvcc_validate(&t, &ws, &overlay).is_valid());
        overlay.insert("k".into(), Version::new(1, 0));
        assert_eq!(mvcc_validate(&t, &ws, &overlay), TxValidity::MvccConflict);
    }

    #[test]
    fn endorsement_flags_per_transaction() {
        let policy = EndorsementPolicy::k_of_n(2, 3).unwrap();
        let mut weak = tx("weak", &[], &[("k", "v", false)]);
        weak.endorsements = BTreeSet::from(["org1".to_string()]);
        let b = block(vec![tx("a", &[], &[("k", "v", false)]), weak, tx("c", &[], &[("j", "v", false)])]);
        assert_eq!(validate_endorsements_block(&b, &policy), vec![true, false, true]);
    }

    #[test]
    fn crdt_mode_merges_and_unifies_values() {
        let ws = WorldState::new();
        let b = block(vec![
            tx("a", &[("d", v(0, 0))], &[("d", r#"{"r":[{"t":"15"}]}"#, true)]),
            tx("b", &[("d", v(0, 0))], &[("d", r#"{"r":[{"t":"20"}]}"#, true)]),
        ]);
        let (validated, stats) =
            validate_merge_block(b, &[true, true], &ws, ValidationMode::Crdt, MergeOptions::default());
        assert_eq!(validated.validity, vec![TxValidity::Valid; 2]);
        let expected = br#"{"r":[{"t":"15"},{"t":"20"}]}"#;
        for t in &validated.block.transactions {
            assert_eq!(t.rwset.writes[0].value, expected);
        }
        assert_eq!(stats.crdt_keys, 1);
        assert_eq!(stats.merged_values, 2);
        assert_eq!(stats.ops_generated, 2);
    }

    #[test]
    fn fabric_mode_ignores_crdt_flags() {
        let ws = WorldState::new();
        let b = block(vec![
            tx("a", &[("d", None)], &[("d", r#"{"r":["1"]}"#, true)]),
            tx("b", &[("d", None)], &[("d", r#"{"r":["2"]}"#, true)]),
        ]);
        let (validated, stats) =
            validate_merge_block(b, &[true, true], &ws, ValidationMode::Fabric, MergeOptions::default());
        assert_eq!(validated.validity, vec![TxValidity::Valid, TxValidity::MvccConflict]);
        assert_eq!(validated.block.transactions[1].rwset.writes[0].value, br#"{"r":["2"]}"#);
        assert_eq!(stats.ops_generated, 0);
    }

    #[test]
    fn decode_failure_invalidates_only_that_transaction() {
        let ws = WorldState::new();
        let b = block(vec![
            tx("a", &[], &[("d", r#"{"r":["1"]}"#, true)]),
            tx("bad", &[], &[("d", "not json", true)]),
            tx("num", &[], &[("d", r#"{"r":[1]}"#, true)]),
            tx("c", &[], &[("d", r#"{"r":["3"]}"#, true)]),
        ]);
        let (validated, _) =
            validate_merge_block(b, &[true; 4], &ws, ValidationMode::Crdt, MergeOptions::default());
        assert_eq!(
            validated.validity,
            vec![
                TxValidity::Valid,
                TxValidity::DecodeFailure,
                TxValidity::DecodeFailure,
                TxValidity::Valid
            ]
        );
        assert_eq!(validated.block.transactions[0].rwset.writes[0].value, br#"{"r":["1","3"]}"#);
    }

    #[test]
    fn structural_conflict_invalidates_transaction_atomically() {
        let ws = WorldState::new();
        let b = block(vec![
            tx("a", &[], &[("d", r#"{"r":"leaf"}"#, true)]),
            tx("b", &[], &[("e", r#"{"x":["kept?"]}"#, true), ("d", r#"{"r":["list"]}"#, true)]),
        ]);
        let (validated, _) =
            validate_merge_block(b, &[true, true], &ws, ValidationMode::Crdt, MergeOptions::default());
        assert_eq!(validated.validity, vec![TxValidity::Valid, TxValidity::StructuralConflict]);
        // Nothing of the rejected transaction was merged, including key e.
        assert_eq!(validated.block.transactions[1].rwset.writes[0].value, br#"{"x":["kept?"]}"#);
    }

    #[test]
    fn unendorsed_transaction_is_not_merged() {
        let ws = WorldState::new();
        let b = block(vec![
            tx("a", &[], &[("d", r#"{"r":["1"]}"#, true)]),
            tx("b", &[], &[("d", r#"{"r":["2"]}"#, true)]),
        ]);
        let (validated, _) =
            validate_merge_block(b, &[true, false], &ws, ValidationMode::Crdt, MergeOptions::default());
        assert_eq!(validated.validity, vec![TxValidity::Valid, TxValidity::EndorsementFailure]);
        assert_eq!(validated.block.transactions[0].rwset.writes[0].value, br#"{"r":["1"]}"#);
    }

    #[test]
    fn mixed_transaction_checks_only_non_crdt_reads() {
        let mut ws = WorldState::new();
        ws.put("acct", vec![], Version::new(0, 0)).unwrap();
        ws.put("doc", vec![], Version::new(0, 0)).unwrap();
        let b = block(vec![
            tx("w", &[], &[("acct", "x", false)]),
            // Stale on acct; its CRDT write still feeds the merge.
            tx(
                "mixed",
                &[("acct", v(0, 0)), ("doc", v(0, 0))],
                &[("acct", "y", false), ("doc", r#"{"l":["m"]}"#, true)],
            ),
            // Stale read on doc is exempt because doc is written as CRDT.
            tx(
                "fresh",
                &[("doc", v(0, 0))],
                &[("other", "z", false), ("doc", r#"{"l":["f"]}"#, true)],
            ),
        ]);
        let (validated, _) =
            validate_merge_block(b, &[true; 3], &ws, ValidationMode::Crdt, MergeOptions::default());
        assert_eq!(
            validated.validity,
            vec![TxValidity::Valid, TxValidity::MvccConflict, TxValidity::Valid]
        );
        assert_eq!(validated.block.transactions[2].rwset.writes[1].value, br#"{"l":["m","f"]}"#);
    }
}
