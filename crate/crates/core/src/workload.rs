//! IoT sensor workload: the temperature-reading chaincode and seeded
//! proposal streams with a tunable share of conflicting traffic.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Duration;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsoncrdt::JsonValue;
use crate::txpipeline::{Chaincode, ChaincodeError, ChaincodeStub, Proposal};

/// Number of simulated clients submitting proposals round-robin.
pub const CLIENTS: u32 = 4;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error("stream csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub total_txs: usize,
    pub arrival_rate_tps: f64,
    pub n_read_keys: usize,
    pub n_write_keys: usize,
    /// Reading lists per submitted reading. The written document also
    /// carries the device id, so 1 gives two top-level keys.
    pub json_keys: usize,
    pub json_depth: usize,
    pub conflict_pct: f64,
    pub crdt_writes: bool,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            total_txs: 1000,
            arrival_rate_tps: 300.0,
            n_read_keys: 1,
            n_write_keys: 1,
            json_keys: 1,
            json_depth: 1,
            conflict_pct: 100.0,
            crdt_writes: true,
            seed: 42,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let fail = |m: &str| Err(WorkloadError::Invalid(m.to_string()));
        if self.total_txs == 0 {
            return fail("total_txs must be positive");
        }
        if !(self.arrival_rate_tps.is_finite() && self.arrival_rate_tps > 0.0) {
            return fail("arrival_rate_tps must be positive");
        }
        if self.n_write_keys == 0 {
            return fail("n_write_keys must be positive");
        }
        if self.json_keys == 0 || self.json_depth == 0 {
            return fail("json_keys and json_depth must be at least 1");
        }
        if !(0.0..=100.0).contains(&self.conflict_pct) {
            return fail("conflict_pct must be within [0, 100]");
        }
        Ok(())
    }

    /// Number of proposals aimed at the shared hot keys.
    pub fn hot_count(&self) -> usize {
        ((self.total_txs as f64 * self.conflict_pct / 100.0).round() as usize).min(self.total_txs)
    }
}

pub fn hot_key(j: usize) -> String {
    format!("device-hot-{j}")
}

pub fn unique_key(i: usize, j: usize) -> String {
    format!("device-{i:06}-{j}")
}

/// Random sensor reading with `keys` room entries. Each room holds a list
/// whose single map nests `depth - 2` further reading lists before the
/// text temperature, so depth 3 yields `room -> [ {reading -> [ {value} ]} ]`.
pub fn gen_iot_json<R: Rng + ?Sized>(keys: usize, depth: usize, rng: &mut R) -> JsonValue {
    let mut rooms = BTreeMap::new();
    for k in 1..=keys {
        let temp = rng.gen_range(0..=40u32).to_string();
        let mut inner = JsonValue::Map(BTreeMap::from([(
            "temperatureValue".to_string(),
            JsonValue::Str(temp),
        )]));
        for _ in 0..depth.saturating_sub(2) {
            inner = JsonValue::Map(BTreeMap::from([(
                "temperatureReading".to_string(),
                JsonValue::List(vec![inner]),
            )]));
        }
        rooms.insert(format!("temperatureRoom{k}"), JsonValue::List(vec![inner]));
    }
    JsonValue::Map(rooms)
}

/// Reads the device documents, appends the reading to each written one
/// and stores it back.
///
/// Arguments: comma-separated read keys, comma-separated write keys, and
/// the reading as JSON.
#[derive(Debug, Clone, Copy, Default)]
pub struct IotChaincode {
    pub crdt_writes: bool,
}

fn split_keys(arg: &str) -> Vec<&str> {
    arg.split(',').filter(|k| !k.is_empty()).collect()
}

fn device_doc(key: &str) -> JsonValue {
    JsonValue::Map(BTreeMap::from([("deviceID".to_string(), JsonValue::str(key))]))
}

/// Appends list entries of `reading` to `doc`; other entries overwrite.
fn add_reading(doc: &mut BTreeMap<String, JsonValue>, reading: &BTreeMap<String, JsonValue>) {
    for (k, v) in reading {
        match (doc.get_mut(k), v) {
            (Some(JsonValue::List(existing)), JsonValue::List(new)) => existing.extend(new.iter().cloned()),
            _ => {
                doc.insert(k.clone(), v.clone());
            }
        }
    }
}

impl Chaincode for IotChaincode {
    fn name(&self) -> &str {
        "iot"
    }

    fn invoke(&self, args: &[String], stub: &mut ChaincodeStub<'_>) -> Result<(), ChaincodeError> {
        let [reads, writes, reading] = args else {
            return Err(ChaincodeError(format!("expected 3 arguments, got {}", args.len())));
        };
        let reading = JsonValue::parse(reading).map_err(|e| ChaincodeError(e.to_string()))?;
        let reading = reading
            .as_map()
            .ok_or_else(|| ChaincodeError("reading must be a JSON object".into()))?;

        let mut current = BTreeMap::new();
        for key in split_keys(reads) {
            if let Some(bytes) = stub.get_state(key) {
                current.insert(key, bytes);
            }
        }
        for key in split_keys(writes) {
            let mut doc = match current.get(key) {
                Some(bytes) => JsonValue::from_bytes(bytes).map_err(|e| ChaincodeError(e.to_string()))?,
                None => device_doc(key),
            };
            let JsonValue::Map(map) = &mut doc else {
                return Err(ChaincodeError(format!("stored value of {key} is not an object")));
            };
            add_reading(map, reading);
            let bytes = doc.to_canonical_bytes();
            if self.crdt_writes {
                stub.put_crdt(key, bytes);
            } else {
                stub.put_state(key, bytes);
            }
        }
        Ok(())
    }
}

/// Moves an asset to a new owner: reads the asset at `args[0]` and writes
/// `{"owner": args[1], "transfers": [args[1]]}` as a CRDT value. Nothing stops two
/// concurrent transfers of the same asset from both committing.
#[derive(Debug, Clone, Copy, Default)]
pub struct AssetTransferChaincode;

impl Chaincode for AssetTransferChaincode {
    fn name(&self) -> &str {
        "asset-transfer"
    }

    fn invoke(&self, args: &[String], stub: &mut ChaincodeStub<'_>) -> Result<(), ChaincodeError> {
        let [asset, new_owner] = args else {
            return Err(ChaincodeError("expected asset and new owner".into()));
        };
        if stub.get_state(asset).is_none() {
            return Err(ChaincodeError(format!("asset {asset} does not exist")));
        }
        let doc = JsonValue::Map(BTreeMap::from([
            ("owner".to_string(), JsonValue::str(new_owner)),
            ("transfers".to_string(), JsonValue::List(vec![JsonValue::str(new_owner)])),
        ]));
        stub.put_crdt(asset, doc.to_canonical_bytes());
        Ok(())
    }
}

/// Seeded proposal stream; proposal `i` is submitted at `i / rate` by
/// client `i % 4`. Exactly [`WorkloadConfig::hot_count`] proposals target
/// the hot keys, the rest keys of their own.
pub fn gen_stream(config: &WorkloadConfig) -> Result<Vec<Proposal>, WorkloadError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut hot = vec![false; config.total_txs];
    for i in index::sample(&mut rng, config.total_txs, config.hot_count()) {
        hot[i] = true;
    }

    let proposals = (0..config.total_txs)
        .map(|i| {
            let key = |j| if hot[i] { hot_key(j) } else { unique_key(i, j) };
            let reads: Vec<String> = (0..config.n_read_keys).map(key).collect();
            let writes: Vec<String> = (0..config.n_write_keys).map(key).collect();
            let reading = gen_iot_json(config.json_keys, config.json_depth, &mut rng);
            Proposal {
                client_id: i as u32 % CLIENTS,
                submit_time: Duration::from_secs_f64(i as f64 / config.arrival_rate_tps),
                args: vec![reads.join(","), writes.join(","), reading.to_canonical_string()],
                responders: None,
            }
        })
        .collect();
    Ok(proposals)
}

/// Every key the stream reads or writes, each holding a bare device
/// document, for the genesis block.
pub fn initial_state(proposals: &[Proposal]) -> Vec<(String, Vec<u8>)> {
    let mut keys = BTreeMap::new();
    for p in proposals {
        for arg in p.args.iter().take(2) {
            for key in split_keys(arg) {
                keys.entry(key.to_string())
                    .or_insert_with(|| device_doc(key).to_canonical_bytes());
            }
        }
    }
    keys.into_iter().collect()
}

#[derive(Serialize, Deserialize)]
struct StreamRow {
    client_id: u32,
    submit_time_ns: u64,
    read_keys: String,
    write_keys: String,
    reading: String,
}

pub fn write_stream_csv<W: Write>(proposals: &[Proposal], out: W) -> Result<(), WorkloadError> {
    let mut w = csv::Writer::from_writer(out);
    for p in proposals {
        let arg = |i: usize| p.args.get(i).cloned().unwrap_or_default();
        w.serialize(StreamRow {
            client_id: p.client_id,
            submit_time_ns: p.submit_time.as_nanos() as u64,
            read_keys: arg(0),
            write_keys: arg(1),
            reading: arg(2),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_stream_csv<R: Read>(input: R) -> Result<Vec<Proposal>, WorkloadError> {
    csv::Reader::from_reader(input)
        .deserialize::<StreamRow>()
        .map(|row| {
            let row = row?;
            Ok(Proposal {
                client_id: row.client_id,
                submit_time: Duration::from_nanos(row.submit_time_ns),
                args: vec![row.read_keys, row.write_keys, row.reading],
                responders: None,
            })
        })
        .collect()
}
