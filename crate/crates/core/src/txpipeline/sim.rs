use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::report::{BlockRecord, RunReport, TxOutcome, TxRecord};
use super::{
    endorse, simulate_proposal, Block, Chaincode, CutReason, EndorsementPolicy, MergeStats,
    Orderer, OrdererConfig, PipelineError, ReadWriteSet, Transaction, ValidatedBlock,
    ValidationMode, Validator,
};
use crate::jsoncrdt::MergeOptions;
use crate::ledger::{BlockLog, CommitReport, Snapshot, WorldState};

/// Which world state an endorser simulates against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotPolicy {
    /// The state committed at the proposal's submit time.
    Fresh,
    /// The state right after genesis, for every proposal.
    #[default]
    Batch,
}

impl std::str::FromStr for SnapshotPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fresh" => Ok(SnapshotPolicy::Fresh),
            "batch" => Ok(SnapshotPolicy::Batch),
            other => Err(format!("unknown snapshot policy {other:?}; expected fresh or batch")),
        }
    }
}

/// How long the peer takes to validate and commit a block on the
/// simulated clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ServiceModel {
    /// `block_overhead + per_tx * txs + per_merge_op * ops`.
    #[default]
    Fixed,
    /// Measured validation wall time plus the fixed per-block and per-tx terms.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub endorse_latency_ms: f64,
    pub ordering_latency_ms: f64,
    pub service: ServiceModel,
    pub block_overhead_ms: f64,
    pub per_tx_ms: f64,
    pub per_merge_op_ms: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            endorse_latency_ms: 10.0,
            ordering_latency_ms: 0.0,
            service: ServiceModel::Fixed,
            block_overhead_ms: 2.0,
            per_tx_ms: 0.5,
            per_merge_op_ms: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: ValidationMode,
    pub max_tx_count: usize,
    pub max_bytes: usize,
    pub block_timeout_ms: u64,
    pub endorsement_k: usize,
    pub endorsement_n: usize,
    pub snapshot_policy: SnapshotPolicy,
    pub dedup_list_leaves: bool,
    pub timing: TimingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: ValidationMode::Crdt,
            max_tx_count: 25,
            max_bytes: 128 * 1024 * 1024,
            block_timeout_ms: 2000,
            endorsement_k: 2,
            endorsement_n: 3,
            snapshot_policy: SnapshotPolicy::Batch,
            dedup_list_leaves: false,
            timing: TimingConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.max_tx_count == 0 {
            return Err(PipelineError::InvalidConfig("max_tx_count must be positive".into()));
        }
        if self.max_bytes == 0 {
            return Err(PipelineError::InvalidConfig("max_bytes must be positive".into()));
        }
        let t = &self.timing;
        let times = [
            t.endorse_latency_ms,
            t.ordering_latency_ms,
            t.block_overhead_ms,
            t.per_tx_ms,
            t.per_merge_op_ms,
        ];
        if times.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PipelineError::InvalidConfig("timing values must be non-negative".into()));
        }
        self.policy().map(|_| ())
    }

    pub fn policy(&self) -> Result<EndorsementPolicy, PipelineError> {
        EndorsementPolicy::k_of_n(self.endorsement_k, self.endorsement_n)
    }

    pub fn orderer_config(&self) -> OrdererConfig {
        OrdererConfig {
            max_tx_count: self.max_tx_count,
            max_bytes: self.max_bytes,
            timeout: Duration::from_millis(self.block_timeout_ms),
        }
    }

    pub fn validator(&self) -> Result<Validator, PipelineError> {
        Ok(Validator {
            mode: self.mode,
            policy: self.policy()?,
            merge_options: MergeOptions {
                dedup_list_leaves: self.dedup_list_leaves,
            },
        })
    }
}

/// A client request to invoke the chaincode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub client_id: u32,
    pub submit_time: Duration,
    pub args: Vec<String>,
    /// Organizations that answer the endorsement request; all known
    /// organizations when `None`.
    pub responders: Option<BTreeSet<String>>,
}

/// A committing peer: world state, block log and validator.
#[derive(Debug)]
pub struct Peer {
    ws: WorldState,
    log: BlockLog,
    validator: Validator,
}

impl Peer {
    pub fn new(validator: Validator, log: BlockLog) -> Self {
        Peer {
            ws: WorldState::new(),
            log,
            validator,
        }
    }

    pub fn world_state(&self) -> &WorldState {
        &self.ws
    }

    pub fn log(&self) -> &BlockLog {
        &self.log
    }

    pub fn validator(&self) -> &Validator {
        &self.validator
    }

    pub fn snapshot(&self) -> Snapshot {
        self.ws.snapshot()
    }

    pub fn validate(&self, block: Block) -> (ValidatedBlock, MergeStats) {
        self.validator.validate(block, &self.ws)
    }

    pub fn commit(&mut self, block: ValidatedBlock) -> Result<CommitReport, PipelineError> {
        Ok(self.ws.commit_block(&mut self.log, block)?)
    }

    /// Validates and commits one ordered block.
    pub fn process_block(&mut self, block: Block) -> Result<(CommitReport, MergeStats), PipelineError> {
        let (validated, stats) = self.validate(block);
        let report = self.commit(validated)?;
        Ok((report, stats))
    }
}

/// The genesis block writes the initial key-values in one transaction.
pub fn genesis_block(entries: &[(String, Vec<u8>)], policy: &EndorsementPolicy) -> Block {
    let mut rwset = ReadWriteSet::default();
    for (key, value) in entries {
        rwset.writes.retain(|w| w.key != *key);
        rwset
            .add_write(key, value.clone(), false)
            .expect("earlier write for key removed");
    }
    Block {
        height: 0,
        transactions: vec![Transaction {
            tx_id: "genesis".into(),
            rwset,
            endorsements: policy.known_orgs().clone(),
            submit_time: Duration::ZERO,
        }],
        cut_reason: CutReason::Genesis,
    }
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct PipelineRun {
    pub report: RunReport,
    pub peer: Peer,
    /// Blocks in the order the orderer emitted them, before validation,
    /// starting with genesis.
    pub ordered_blocks: Vec<Block>,
}

enum Event {
    CommitDone,
    Deliver(Block),
    Arrive(Transaction),
    Timeout,
    Propose(usize),
}

impl Event {
    // Commits at time t are visible to proposals submitted at t.
    fn rank(&self) -> u8 {
        match self {
            Event::CommitDone => 0,
            Event::Deliver(_) => 1,
            Event::Arrive(_) => 2,
            Event::Timeout => 3,
            Event::Propose(_) => 4,
        }
    }
}

struct Scheduled {
    time: Duration,
    rank: u8,
    seq: u64,
    event: Event,
}

impl Scheduled {
    fn key(&self) -> (Duration, u8, u64) {
        (self.time, self.rank, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Default)]
struct Agenda {
    heap: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
}

impl Agenda {
    fn push(&mut self, time: Duration, event: Event) {
        self.seq += 1;
        self.heap.push(Reverse(Scheduled {
            time,
            rank: event.rank(),
            seq: self.seq,
            event,
        }));
    }

    fn pop(&mut self) -> Option<(Duration, Event)> {
        self.heap.pop().map(|Reverse(s)| (s.time, s.event))
    }
}

fn ms(v: f64) -> Duration {
    Duration::from_secs_f64(v / 1000.0)
}

struct InFlight {
    validated: ValidatedBlock,
    stats: MergeStats,
    cut_time: Duration,
    start: Duration,
}

struct Driver<'a> {
    config: &'a PipelineConfig,
    chaincode: &'a dyn Chaincode,
    proposals: &'a [Proposal],
    policy: EndorsementPolicy,
    agenda: Agenda,
    orderer: Orderer,
    peer: Peer,
    batch_snapshot: Snapshot,
    peer_queue: VecDeque<(Block, Duration)>,
    in_flight: Option<InFlight>,
    records: Vec<TxRecord>,
    record_index: HashMap<String, usize>,
    client_counters: HashMap<u32, u64>,
    blocks: Vec<BlockRecord>,
    ordered: Vec<Block>,
}

impl Driver<'_> {
    fn propose(&mut self, now: Duration, index: usize) {
        let proposal = &self.proposals[index];
        let counter = self.client_counters.entry(proposal.client_id).or_insert(0);
        *counter += 1;
        let tx_id = format!("client{}-{:06}", proposal.client_id, counter);
        let record = self.records.len();
        self.records.push(TxRecord {
            tx_id: tx_id.clone(),
            client_id: proposal.client_id,
            submit_time: proposal.submit_time,
            commit_time: None,
            block_height: None,
            outcome: None,
        });

        let snapshot = match self.config.snapshot_policy {
            SnapshotPolicy::Batch => self.batch_snapshot.clone(),
            SnapshotPolicy::Fresh => self.peer.snapshot(),
        };
        let rwset = match simulate_proposal(self.chaincode, &proposal.args, &snapshot) {
            Ok(rwset) => rwset,
            Err(e) => {
                log::debug!("{tx_id}: {e}");
                self.records[record].outcome = Some(TxOutcome::ProposalFailed);
                return;
            }
        };
        if rwset.is_read_only() {
            self.records[record].outcome = Some(TxOutcome::ReadOnly);
            return;
        }
        let responders = proposal
            .responders
            .clone()
            .unwrap_or_else(|| self.policy.known_orgs().clone());
        match endorse(&tx_id, rwset, &self.policy, &responders, proposal.submit_time) {
            Ok(tx) => {
                self.record_index.insert(tx_id, record);
                let arrival = now + ms(self.config.timing.endorse_latency_ms);
                self.agenda.push(arrival, Event::Arrive(tx));
            }
            Err(_) => self.records[record].outcome = Some(TxOutcome::EndorsementRejected),
        }
    }

    fn arrive(&mut self, now: Duration, tx: Transaction) {
        let was_empty = self.orderer.queue_len() == 0;
        let tx_id = tx.tx_id.clone();
        if let Err(e) = self.orderer.submit(tx, now) {
            log::debug!("{tx_id}: {e}");
            if let Some(&i) = self.record_index.get(&tx_id) {
                self.records[i].outcome = Some(TxOutcome::DuplicateRejected);
            }
            return;
        }
        let cut = self.cut_blocks(now);
        if was_empty && !cut {
            self.schedule_timeout();
        }
    }

    /// Cuts every block that is due; returns whether any was cut.
    fn cut_blocks(&mut self, now: Duration) -> bool {
        let mut cut = false;
        while let Some(block) = self.orderer.cut_block(now) {
            cut = true;
            self.ordered.push(block.clone());
            let delivery = now + ms(self.config.timing.ordering_latency_ms);
            self.agenda.push(delivery, Event::Deliver(block));
        }
        if cut {
            self.schedule_timeout();
        }
        cut
    }

    fn schedule_timeout(&mut self) {
        if let Some(oldest) = self.orderer.oldest_arrival() {
            let timeout = self.orderer.config().timeout;
            self.agenda.push(oldest + timeout, Event::Timeout);
        }
    }

    fn deliver(&mut self, now: Duration, block: Block) {
        self.peer_queue.push_back((block, now));
        if self.in_flight.is_none() {
            self.start_next(now);
        }
    }

    fn start_next(&mut self, now: Duration) {
        let Some((block, cut_time)) = self.peer_queue.pop_front() else {
            return;
        };
        let n = block.transactions.len() as f64;
        let (validated, stats) = self.peer.validate(block);
        let t = &self.config.timing;
        let service = match t.service {
            ServiceModel::Fixed => {
                ms(t.block_overhead_ms + t.per_tx_ms * n + t.per_merge_op_ms * stats.ops_generated as f64)
            }
            ServiceModel::Measured => stats.elapsed + ms(t.block_overhead_ms + t.per_tx_ms * n),
        };
        self.in_flight = Some(InFlight {
            validated,
            stats,
            cut_time,
            start: now,
        });
        self.agenda.push(now + service, Event::CommitDone);
    }

    fn commit_done(&mut self, now: Duration) -> Result<(), PipelineError> {
        let InFlight {
            validated,
            stats,
            cut_time,
            start,
        } = self.in_flight.take().expect("commit without a block in flight");
        let height = validated.block.height;
        for (tx, validity) in validated.block.transactions.iter().zip(&validated.validity) {
            if let Some(&i) = self.record_index.get(&tx.tx_id) {
                let record = &mut self.records[i];
                record.commit_time = Some(now);
                record.block_height = Some(height);
                record.outcome = Some(TxOutcome::Committed(*validity));
            }
        }
        let cut_reason = validated.block.cut_reason;
        let report = self.peer.commit(validated)?;
        self.blocks.push(BlockRecord {
            height,
            tx_count: report.valid + report.invalid,
            valid: report.valid,
            invalid: report.invalid,
            cut_reason,
            cut_time,
            commit_start: start,
            commit_end: now,
            merge_time: stats.elapsed,
            ops_generated: stats.ops_generated,
        });
        self.start_next(now);
        Ok(())
    }
}

/// Drives every proposal through endorse, order, validate and commit on a
/// simulated clock until all queues are empty.
///
/// `genesis` is committed as block 0 before the first proposal.
pub fn run_pipeline(
    config: &PipelineConfig,
    chaincode: &dyn Chaincode,
    genesis: &[(String, Vec<u8>)],
    proposals: &[Proposal],
    log: BlockLog,
) -> Result<PipelineRun, PipelineError> {
    config.validate()?;
    let policy = config.policy()?;
    let mut peer = Peer::new(config.validator()?, log);

    let genesis = genesis_block(genesis, &policy);
    let mut ordered = vec![genesis.clone()];
    peer.process_block(genesis)?;
    let batch_snapshot = peer.snapshot();

    let mut driver = Driver {
        config,
        chaincode,
        proposals,
        policy,
        agenda: Agenda::default(),
        orderer: Orderer::new(config.orderer_config(), 1),
        peer,
        batch_snapshot,
        peer_queue: VecDeque::new(),
        in_flight: None,
        records: Vec::with_capacity(proposals.len()),
        record_index: HashMap::new(),
        client_counters: HashMap::new(),
        blocks: Vec::new(),
        ordered: Vec::new(),
    };
    for (i, p) in proposals.iter().enumerate() {
        driver.agenda.push(p.submit_time, Event::Propose(i));
    }

    while let Some((now, event)) = driver.agenda.pop() {
        match event {
            Event::Propose(i) => driver.propose(now, i),
            Event::Arrive(tx) => driver.arrive(now, tx),
            Event::Timeout => {
                driver.cut_blocks(now);
            }
            Event::Deliver(block) => driver.deliver(now, block),
            Event::CommitDone => driver.commit_done(now)?,
        }
    }
    driver.orderer.shutdown();
    debug_assert_eq!(driver.orderer.queue_len(), 0);

    ordered.append(&mut driver.ordered);
    let report = RunReport {
        mode: config.mode,
        txs: driver.records,
        blocks: driver.blocks,
        final_digest: driver.peer.world_state().digest(),
    };
    Ok(PipelineRun {
        report,
        peer: driver.peer,
        ordered_blocks: ordered,
    })
}
