use std::collections::{HashSet, VecDeque};
use std::time::Duration;

use super::{Block, CutReason, PipelineError, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrdererConfig {
    pub max_tx_count: usize,
    pub max_bytes: usize,
    pub timeout: Duration,
}

impl Default for OrdererConfig {
    fn default() -> Self {
        OrdererConfig {
            max_tx_count: 25,
            max_bytes: 128 * 1024 * 1024,
            timeout: Duration::from_secs(2),
        }
    }
}

#[derive(Debug)]
struct Queued {
    tx: Transaction,
    size: usize,
    arrival: Duration,
}

/// Single total-order queue that batches transactions into blocks.
#[derive(Debug)]
pub struct Orderer {
    config: OrdererConfig,
    queue: VecDeque<Queued>,
    queued_bytes: usize,
    seen: HashSet<String>,
    next_height: u64,
    closed: bool,
}

impl Orderer {
    pub fn new(config: OrdererConfig, first_height: u64) -> Self {
        Orderer {
            config,
            queue: VecDeque::new(),
            queued_bytes: 0,
            seen: HashSet::new(),
            next_height: first_height,
            closed: false,
        }
    }

    pub fn config(&self) -> &OrdererConfig {
        &self.config
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn queued_bytes(&self) -> usize {
        self.queued_bytes
    }

    pub fn oldest_arrival(&self) -> Option<Duration> {
        self.queue.front().map(|q| q.arrival)
    }

    pub fn next_height(&self) -> u64 {
        self.next_height
    }

    /// Stops accepting transactions. Already-queued ones still drain.
    pub fn shutdown(&mut self) {
        self.closed = true;
    }

    pub fn submit(&mut self, tx: Transaction, arrival: Duration) -> Result<(), PipelineError> {
        if self.closed {
            return Err(PipelineError::OrdererClosed);
        }
        if !self.seen.insert(tx.tx_id.clone()) {
            return Err(PipelineError::DuplicateTransaction(tx.tx_id));
        }
        let size = tx.encoded_len();
        self.queued_bytes += size;
        self.queue.push_back(Queued { tx, size, arrival });
        Ok(())
    }

    /// Emits a block once the count or byte threshold is reached, or the
    /// oldest queued transaction has waited at least the timeout.
    pub fn cut_block(&mut self, now: Duration) -> Option<Block> {
        let oldest = self.oldest_arrival()?;
        let triggered = self.queue.len() >= self.config.max_tx_count
            || self.queued_bytes >= self.config.max_bytes
            || now.saturating_sub(oldest) >= self.config.timeout;
        if !triggered {
            return None;
        }

        let mut taken = 0;
        let mut bytes = 0;
        let mut byte_limited = false;
        for q in &self.queue {
            if taken == self.config.max_tx_count {
                break;
            }
            // A single oversized transaction still gets its own block.
            if taken > 0 && bytes + q.size > self.config.max_bytes {
                byte_limited = true;
                break;
            }
            taken += 1;
            bytes += q.size;
        }
        if taken == 1 && bytes >= self.config.max_bytes {
            byte_limited = true;
        }
        let cut_reason = if taken == self.config.max_tx_count {
            CutReason::Count
        } else if byte_limited || bytes >= self.config.max_bytes {
            CutReason::Bytes
        } else {
            CutReason::Timeout
        };

        let transactions: Vec<Transaction> = self
            .queue
            .drain(..taken)
            .map(|q| {
                self.queued_bytes -= q.size;
                q.tx
            })
            .collect();
        let block = Block {
            height: self.next_height,
            transactions,
            cut_reason,
        };
        self.next_height += 1;
        Some(block)
    }
}
