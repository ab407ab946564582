//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any failed.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use crdtsim_bench::{run_experiment, ExperimentSpec};
use crdtsim_core::jsoncrdt::{JsonCrdt, JsonValue};
use crdtsim_core::ledger::{BlockLog, Version, WorldState};
use crdtsim_core::txpipeline::{
    Block, CutReason, EndorsementPolicy, Peer, PipelineConfig, Proposal, ReadWriteSet,
    SnapshotPolicy, Transaction, TxValidity, ValidationMode, Validator,
};
use crdtsim_core::workload::{gen_stream, initial_state, AssetTransferChaincode, IotChaincode, WorkloadConfig};
use crdtsim_core::run_pipeline;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn orgs(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn tx(id: &str, rwset: ReadWriteSet, endorsed: bool) -> Transaction {
    Transaction {
        tx_id: id.to_string(),
        rwset,
        endorsements: if endorsed { orgs(&["org1", "org2"]) } else { orgs(&["org1"]) },
        submit_time: Duration::ZERO,
    }
}

fn validator(mode: ValidationMode) -> Validator {
    Validator {
        mode,
        policy: EndorsementPolicy::k_of_n(2, 3).unwrap(),
        merge_options: Default::default(),
    }
}

fn block(height: u64, transactions: Vec<Transaction>) -> Block {
    Block {
        height,
        transactions,
        cut_reason: CutReason::Count,
    }
}

fn golden_merge() -> Outcome {
    let t1 = r#"{"tempReadings":[{"temperature":"15"}]}"#;
    let t2 = r#"{"tempReadings":[{"temperature":"20"}]}"#;
    let expected = JsonValue::parse(r#"{"tempReadings":[{"temperature":"15"},{"temperature":"20"}]}"#).unwrap();

    let d1 = JsonValue::parse(t1).unwrap();
    let mut crdt = JsonCrdt::init_empty("Device1", &d1).unwrap();
    crdt.merge_json(&d1).unwrap();
    crdt.merge_json(&JsonValue::parse(t2).unwrap()).unwrap();
    ensure!(crdt.to_json().unwrap() == expected, "direct merge gave {}", crdt.to_json().unwrap());

    let txs = [t1, t2]
        .iter()
        .enumerate()
        .map(|(i, doc)| {
            let mut rwset = ReadWriteSet::default();
            rwset.add_write("Device1", doc.as_bytes().to_vec(), true).unwrap();
            tx(&format!("T{}", i + 1), rwset, true)
        })
        .collect();
    let (validated, _) = validator(ValidationMode::Crdt).validate(block(1, txs), &WorldState::new());
    let w1 = &validated.block.transactions[0].rwset.writes[0].value;
    let w2 = &validated.block.transactions[1].rwset.writes[0].value;
    ensure!(validated.validity == [TxValidity::Valid; 2], "validity {:?}", validated.validity);
    ensure!(w1 == w2, "write sets differ");
    ensure!(JsonValue::from_bytes(w1).unwrap() == expected, "block merge gave {}", String::from_utf8_lossy(w1));
    Ok(format!("both write sets = {}", String::from_utf8_lossy(w1)))
}

fn hot_run(mode: ValidationMode) -> crdtsim_core::PipelineRun {
    let workload = WorkloadConfig::default();
    let stream = gen_stream(&workload).unwrap();
    let config = PipelineConfig {
        mode,
        max_tx_count: 25,
        snapshot_policy: SnapshotPolicy::Batch,
        ..PipelineConfig::default()
    };
    run_pipeline(&config, &IotChaincode { crdt_writes: true }, &initial_state(&stream), &stream, BlockLog::new())
        .unwrap()
}

fn no_failure() -> Outcome {
    let run = hot_run(ValidationMode::Crdt);
    let s = run.report.summary();
    ensure!(s.total == 1000, "total {}", s.total);
    ensure!(s.success == 1000 && s.failure == 0, "{} valid, {} invalid", s.success, s.failure);
    let again = hot_run(ValidationMode::Crdt);
    ensure!(again.report.final_digest == run.report.final_digest, "rerun digest differs");
    Ok(format!("1000 valid, 0 invalid in {} blocks", run.report.blocks.len()))
}

/// Re-derives validity block by block with a plain version map.
fn naive_mvcc(blocks: &[Block]) -> Vec<Vec<bool>> {
    let mut versions: HashMap<String, (u64, u32)> = HashMap::new();
    let mut out = Vec::new();
    for b in blocks {
        let mut flags = Vec::new();
        for (i, t) in b.transactions.iter().enumerate() {
            let ok = t
                .rwset
                .reads
                .iter()
                .all(|r| versions.get(&r.key).copied() == r.version.map(|v| (v.block_height, v.tx_index)));
            if ok {
                for w in &t.rwset.writes {
                    versions.insert(w.key.clone(), (b.height, i as u32));
                }
            }
            flags.push(ok);
        }
        out.push(flags);
    }
    out
}

fn fabric_contrast() -> Outcome {
    let run = hot_run(ValidationMode::Fabric);
    let s = run.report.summary();
    ensure!(s.success == 1 && s.failure == 999, "{} valid, {} invalid", s.success, s.failure);
    let first = &run.peer.log().blocks()[1];
    ensure!(first.validity[0] == TxValidity::Valid, "first tx of first block not valid");
    let mvcc = run
        .peer
        .log()
        .blocks()
        .iter()
        .flat_map(|b| &b.validity)
        .filter(|v| **v == TxValidity::MvccConflict)
        .count();
    ensure!(mvcc == 999, "{mvcc} MVCC conflicts");

    let oracle = naive_mvcc(&run.ordered_blocks);
    for (b, expected) in run.peer.log().blocks().iter().zip(&oracle) {
        let got: Vec<bool> = b.validity.iter().map(|v| v.is_valid()).collect();
        ensure!(&got == expected, "block {} disagrees with oracle", b.block.height);
    }
    Ok("1 valid (first tx of block 1), 999 MVCC conflicts, oracle agrees".into())
}

fn worked_example() -> Outcome {
    let (vn1, vn2, vn3) = (Version::new(1, 0), Version::new(2, 0), Version::new(3, 0));
    let mut ws = WorldState::new();
    ws.put("K1", b"VL1".to_vec(), vn1).unwrap();
    ws.put("K2", b"VL2".to_vec(), vn2).unwrap();
    ws.put("K3", b"VL3".to_vec(), vn3).unwrap();

    let mk = |id: &str, reads: &[(&str, Version)], writes: &[(&str, &str)]| {
        let mut rwset = ReadWriteSet::default();
        for (k, v) in reads {
            rwset.add_read(k, Some(*v)).unwrap();
        }
        for (k, v) in writes {
            rwset.add_write(k, v.as_bytes().to_vec(), false).unwrap();
        }
        tx(id, rwset, true)
    };
    let txs = vec![
        mk("T1", &[("K2", vn2)], &[("K2", "VL1")]),
        mk("T2", &[("K1", vn1), ("K2", vn2)], &[("K3", "VL3")]),
        mk("T3", &[("K2", vn2)], &[("K3", "VL1")]),
        // Reads K3 at VN2 while the state holds K3 at VN3. The narrative
        // calls T4 valid, but the read-version rule it states marks T4
        // invalid; this test follows the rule.
        mk("T4", &[("K3", vn2)], &[("K2", "VL1")]),
        mk("T5", &[], &[("K3", "VL2")]),
    ];
    let (validated, _) = validator(ValidationMode::Fabric).validate(block(4, txs), &ws);
    let got: Vec<bool> = validated.validity.iter().map(|v| v.is_valid()).collect();
    ensure!(got == [true, false, false, false, true], "validity {:?}", validated.validity);
    Ok("T1 valid, T2 invalid, T3 invalid, T4 invalid (stale K3 read; narrative says valid), T5 valid".into())
}

fn convergence() -> Outcome {
    let pcts = [0.0, 25.0, 50.0, 75.0, 100.0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100u64 {
        let workload = WorkloadConfig {
            total_txs: rng.gen_range(20..80),
            conflict_pct: pcts[case as usize % pcts.len()],
            n_read_keys: rng.gen_range(1..=3),
            n_write_keys: rng.gen_range(1..=3),
            json_keys: rng.gen_range(1..=3),
            json_depth: rng.gen_range(1..=3),
            seed: case,
            ..WorkloadConfig::default()
        };
        let config = PipelineConfig {
            mode: if rng.gen_bool(0.5) { ValidationMode::Crdt } else { ValidationMode::Fabric },
            max_tx_count: rng.gen_range(1..30),
            ..PipelineConfig::default()
        };
        let stream = gen_stream(&workload).unwrap();
        let chaincode = IotChaincode {
            crdt_writes: rng.gen_bool(0.8),
        };
        let run = run_pipeline(&config, &chaincode, &initial_state(&stream), &stream, BlockLog::new()).unwrap();

        let mut replicas: Vec<Peer> = (0..2)
            .map(|_| Peer::new(config.validator().unwrap(), BlockLog::new()))
            .collect();
        for peer in &mut replicas {
            for b in run.ordered_blocks.clone() {
                peer.process_block(b).unwrap();
            }
        }
        let a = replicas[0].world_state().canonical_bytes();
        let b = replicas[1].world_state().canonical_bytes();
        ensure!(a == b, "case {case}: replicas diverge");
        ensure!(a == run.peer.world_state().canonical_bytes(), "case {case}: replica differs from live peer");
    }
    Ok("100 workloads, replicas byte-identical".into())
}

fn no_update_loss() -> Outcome {
    let keys = ["Device1", "Device2"];
    let case = prop::collection::vec((common::doc(), 0..keys.len(), any::<bool>()), 1..=5);
    let mut runner = TestRunner::new(Config {
        cases: 500,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&case, |txs| {
            let mut ws = WorldState::new();
            for k in keys {
                ws.put(k, b"{}".to_vec(), Version::new(7, 0)).unwrap();
            }
            let block_txs = txs
                .iter()
                .enumerate()
                .map(|(i, (doc, k, endorsed))| {
                    let mut rwset = ReadWriteSet::default();
                    // A stale read must not matter for CRDT-only transactions.
                    rwset.add_read(keys[*k], Some(Version::new(0, 0))).unwrap();
                    rwset.add_write(keys[*k], doc.to_canonical_bytes(), true).unwrap();
                    tx(&format!("t{i}"), rwset, *endorsed)
                })
                .collect();
            let (validated, _) = validator(ValidationMode::Crdt).validate(block(8, block_txs), &ws);
            for (i, (_, k, endorsed)) in txs.iter().enumerate() {
                let expected_validity = if *endorsed { TxValidity::Valid } else { TxValidity::EndorsementFailure };
                prop_assert_eq!(validated.validity[i], expected_validity);
                if !*endorsed {
                    continue;
                }
                let oracle = common::union_oracle(
                    txs.iter().filter(|(_, k2, e)| *e && k2 == k).map(|(d, _, _)| d),
                );
                let written = JsonValue::from_bytes(&validated.block.transactions[i].rwset.writes[0].value).unwrap();
                prop_assert_eq!(written, oracle);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("500 blocks match the union oracle".into())
}

fn permutation() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&(common::doc(), common::doc()), |(d1, d2)| {
            let merge = |docs: [&JsonValue; 2]| {
                let mut c = JsonCrdt::init_empty("k", docs[0]).unwrap();
                for d in docs {
                    c.merge_json(d).unwrap();
                }
                c.to_json().unwrap()
            };
            let forward = common::leaf_multiset(&merge([&d1, &d2]));
            let backward = common::leaf_multiset(&merge([&d2, &d1]));
            prop_assert_eq!(forward, backward);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("1000 pairs with equal leaf multisets".into())
}

fn conflict_trend() -> Outcome {
    let spec = ExperimentSpec::named("conflict_pct").unwrap();
    let report = run_experiment(&spec).map_err(|e| e.to_string())?;
    let fabric: Vec<usize> = report.series(ValidationMode::Fabric).map(|p| p.failure_count).collect();
    let crdt: Vec<usize> = report.series(ValidationMode::Crdt).map(|p| p.failure_count).collect();
    ensure!(report.points.iter().all(|p| p.error.is_none()), "a sweep point failed");
    ensure!(fabric.windows(2).all(|w| w[0] <= w[1]), "fabric failures {fabric:?}");
    ensure!(crdt.iter().all(|&f| f == 0), "crdt failures {crdt:?}");
    Ok(format!("fabric failures {fabric:?}, crdt failures {crdt:?}"))
}

fn complexity_trend() -> Outcome {
    let mut spec = ExperimentSpec::named("json_complexity").unwrap();
    spec.modes = vec![ValidationMode::Crdt];
    spec.repetitions = 5;
    let report = run_experiment(&spec).map_err(|e| e.to_string())?;
    let times: Vec<f64> = report.series(ValidationMode::Crdt).map(|p| p.merge_time_ms).collect();
    ensure!(times.len() == 3, "expected 3 points");
    for w in times.windows(2) {
        let within_noise = w[1] >= w[0] * 0.9;
        ensure!(within_noise, "median block merge ms {times:?}");
    }
    Ok(format!("median block merge ms 1-1/3-3/5-5 = {:.4}/{:.4}/{:.4}", times[0], times[1], times[2]))
}

fn double_spend() -> Outcome {
    let genesis = vec![("asset1".to_string(), br#"{"owner":"alice"}"#.to_vec())];
    let proposals: Vec<Proposal> = ["bob", "carol", "dave", "erin", "frank"]
        .iter()
        .enumerate()
        .map(|(i, owner)| Proposal {
            client_id: i as u32,
            submit_time: Duration::from_millis(i as u64),
            args: vec!["asset1".into(), owner.to_string()],
            responders: None,
        })
        .collect();
    let mut committed = BTreeMap::new();
    for mode in [ValidationMode::Crdt, ValidationMode::Fabric] {
        let config = PipelineConfig {
            mode,
            ..PipelineConfig::default()
        };
        let run = run_pipeline(&config, &AssetTransferChaincode, &genesis, &proposals, BlockLog::new()).unwrap();
        committed.insert(mode.to_string(), run.report.summary().success);
    }
    ensure!(committed["crdt"] == 5, "crdt committed {}", committed["crdt"]);
    ensure!(committed["fabric"] <= 1, "fabric committed {}", committed["fabric"]);
    Ok(format!("crdt commits {} of 5, fabric commits {}", committed["crdt"], committed["fabric"]))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("golden merge", Duration::from_secs(1), golden_merge),
        ("no failure in crdt mode", Duration::from_secs(30), no_failure),
        ("fabric mode contrast", Duration::from_secs(30), fabric_contrast),
        ("five-transaction MVCC example", Duration::from_secs(1), worked_example),
        ("convergence", Duration::from_secs(120), convergence),
        ("no update loss", Duration::from_secs(60), no_update_loss),
        ("merge order permutation", Duration::from_secs(60), permutation),
        ("conflict percentage trend", Duration::from_secs(120), conflict_trend),
        ("JSON complexity trend", Duration::from_secs(180), complexity_trend),
        ("double spend", Duration::from_secs(1), double_spend),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();

    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > *limit => Err(format!("took {elapsed:.2?}, limit {limit:?} ({detail})")),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
