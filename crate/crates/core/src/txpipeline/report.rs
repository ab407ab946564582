use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CutReason, TxValidity, ValidationMode};

/// What finally happened to one proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxOutcome {
    Committed(TxValidity),
    /// Too few organizations endorsed; never submitted for ordering.
    EndorsementRejected,
    /// Nothing to write; never submitted for ordering.
    ReadOnly,
    ProposalFailed,
    DuplicateRejected,
}

impl TxOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            TxOutcome::Committed(v) => v.as_str(),
            TxOutcome::EndorsementRejected => "endorsement_rejected",
            TxOutcome::ReadOnly => "read_only",
            TxOutcome::ProposalFailed => "proposal_failed",
            TxOutcome::DuplicateRejected => "duplicate_rejected",
        }
    }

    pub fn is_success(self) -> bool {
        self == TxOutcome::Committed(TxValidity::Valid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxRecord {
    pub tx_id: String,
    pub client_id: u32,
    pub submit_time: Duration,
    pub commit_time: Option<Duration>,
    pub block_height: Option<u64>,
    pub outcome: Option<TxOutcome>,
}

impl TxRecord {
    pub fn latency(&self) -> Option<Duration> {
        self.commit_time.map(|c| c.saturating_sub(self.submit_time))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRecord {
    pub height: u64,
    pub tx_count: usize,
    pub valid: usize,
    pub invalid: usize,
    pub cut_reason: CutReason,
    pub cut_time: Duration,
    pub commit_start: Duration,
    pub commit_end: Duration,
    /// Measured wall time of validation, not simulated time.
    pub merge_time: Duration,
    pub ops_generated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub total: usize,
    pub success: usize,
    /// Ordered but flagged invalid at validation.
    pub failure: usize,
    pub endorsement_rejections: usize,
    /// Read-only, failed or duplicate proposals.
    pub other: usize,
    pub throughput_tps: f64,
    pub avg_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub mode: ValidationMode,
    pub txs: Vec<TxRecord>,
    pub blocks: Vec<BlockRecord>,
    pub final_digest: String,
}

#[derive(Serialize)]
struct TxRow<'a> {
    tx_id: &'a str,
    client_id: u32,
    submit_time_s: f64,
    commit_time_s: Option<f64>,
    validity: &'a str,
    block_height: Option<u64>,
    latency_ms: Option<f64>,
}

#[derive(Serialize)]
struct BlockRow {
    height: u64,
    tx_count: usize,
    valid: usize,
    invalid: usize,
    cut_reason: CutReason,
    cut_time_s: f64,
    commit_start_s: f64,
    commit_end_s: f64,
    merge_time_ms: f64,
    ops_generated: usize,
}

impl RunReport {
    pub fn summary(&self) -> RunSummary {
        let mut s = RunSummary {
            total: self.txs.len(),
            success: 0,
            failure: 0,
            endorsement_rejections: 0,
            other: 0,
            throughput_tps: 0.0,
            avg_latency_ms: 0.0,
        };
        let mut latency_sum = 0.0;
        for tx in &self.txs {
            match tx.outcome {
                Some(o) if o.is_success() => {
                    s.success += 1;
                    latency_sum += tx.latency().unwrap_or_default().as_secs_f64() * 1000.0;
                }
                Some(TxOutcome::Committed(_)) => s.failure += 1,
                Some(TxOutcome::EndorsementRejected) => s.endorsement_rejections += 1,
                _ => s.other += 1,
            }
        }
        if s.success > 0 {
            s.avg_latency_ms = latency_sum / s.success as f64;
        }
        let first = self.txs.iter().map(|t| t.submit_time).min();
        let last = self.txs.iter().filter_map(|t| t.commit_time).max();
        if let (Some(first), Some(last)) = (first, last) {
            let span = last.saturating_sub(first).as_secs_f64();
            if span > 0.0 {
                s.throughput_tps = s.success as f64 / span;
            }
        }
        s
    }

    /// One row per proposal, in proposal order.
    pub fn write_tx_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for tx in &self.txs {
            w.serialize(TxRow {
                tx_id: &tx.tx_id,
                client_id: tx.client_id,
                submit_time_s: tx.submit_time.as_secs_f64(),
                commit_time_s: tx.commit_time.map(|t| t.as_secs_f64()),
                validity: tx.outcome.map_or("pending", TxOutcome::as_str),
                block_height: tx.block_height,
                latency_ms: tx.latency().map(|l| l.as_secs_f64() * 1000.0),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_blocks_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for b in &self.blocks {
            w.serialize(BlockRow {
                height: b.height,
                tx_count: b.tx_count,
                valid: b.valid,
                invalid: b.invalid,
                cut_reason: b.cut_reason,
                cut_time_s: b.cut_time.as_secs_f64(),
                commit_start_s: b.commit_start.as_secs_f64(),
                commit_end_s: b.commit_end.as_secs_f64(),
                merge_time_ms: b.merge_time.as_secs_f64() * 1000.0,
                ops_generated: b.ops_generated,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.serialize(self.summary())?;
        w.flush()?;
        Ok(())
    }
}
