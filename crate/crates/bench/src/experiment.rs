use std::path::Path;
use std::time::Duration;

use crdtsim_core::ledger::BlockLog;
use crdtsim_core::txpipeline::{PipelineConfig, RunReport, ValidationMode};
use crdtsim_core::workload::{gen_stream, initial_state, IotChaincode, WorkloadConfig};
use crdtsim_core::run_pipeline;
use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Parameter varied across the points of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Maximum transactions per block.
    BlockSize,
    /// Read keys and write keys per transaction (same count for both).
    RwKeys,
    /// `n` sets both the number of reading lists and their depth.
    JsonComplexity,
    ArrivalRate,
    ConflictPct,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::BlockSize => "block_size",
            SweepParam::RwKeys => "rw_keys",
            SweepParam::JsonComplexity => "json_complexity",
            SweepParam::ArrivalRate => "arrival_rate",
            SweepParam::ConflictPct => "conflict_pct",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            SweepParam::BlockSize,
            SweepParam::RwKeys,
            SweepParam::JsonComplexity,
            SweepParam::ArrivalRate,
            SweepParam::ConflictPct,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
    }

    /// Applies sweep value `v` to the configs.
    pub fn apply(self, v: f64, pipeline: &mut PipelineConfig, workload: &mut WorkloadConfig) {
        let n = v.round().max(0.0) as usize;
        match self {
            SweepParam::BlockSize => pipeline.max_tx_count = n,
            SweepParam::RwKeys => {
                workload.n_read_keys = n;
                workload.n_write_keys = n;
            }
            SweepParam::JsonComplexity => {
                workload.json_keys = n;
                workload.json_depth = n;
            }
            SweepParam::ArrivalRate => workload.arrival_rate_tps = v,
            SweepParam::ConflictPct => workload.conflict_pct = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub workload: WorkloadConfig,
    pub sweep: Sweep,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default = "both_modes")]
    pub modes: Vec<ValidationMode>,
    /// Block size used in fabric mode unless the sweep sets it.
    #[serde(default)]
    pub fabric_block_size: Option<usize>,
}

fn one() -> usize {
    1
}

fn both_modes() -> Vec<ValidationMode> {
    vec![ValidationMode::Fabric, ValidationMode::Crdt]
}

pub const EXPERIMENTS: [&str; 5] = [
    "block_size",
    "rw_keys",
    "json_complexity",
    "arrival_rate",
    "conflict_pct",
];

impl ExperimentSpec {
    /// Built-in experiment with desk-scale defaults: 1000 transactions per
    /// point, 300 tps, one read and one write key, all conflicting.
    pub fn named(name: &str) -> Option<Self> {
        let (param, values): (SweepParam, Vec<f64>) = match name {
            "block_size" => (
                SweepParam::BlockSize,
                vec![25.0, 50.0, 100.0, 200.0, 400.0, 600.0, 800.0, 1000.0],
            ),
            "rw_keys" => (SweepParam::RwKeys, vec![1.0, 3.0, 5.0]),
            "json_complexity" => (SweepParam::JsonComplexity, vec![1.0, 3.0, 5.0]),
            "arrival_rate" => (SweepParam::ArrivalRate, vec![100.0, 200.0, 300.0, 400.0, 500.0]),
            "conflict_pct" => (
                SweepParam::ConflictPct,
                vec![0.0, 20.0, 40.0, 60.0, 80.0, 100.0],
            ),
            _ => return None,
        };
        Some(ExperimentSpec {
            name: name.to_string(),
            pipeline: PipelineConfig::default(),
            workload: WorkloadConfig::default(),
            sweep: Sweep { param, values },
            repetitions: 1,
            modes: both_modes(),
            fabric_block_size: (param != SweepParam::BlockSize).then_some(400),
        })
    }

    /// A built-in name or a TOML file describing the experiment.
    pub fn resolve(name_or_path: &str) -> Result<Self, BenchError> {
        if let Some(spec) = Self::named(name_or_path) {
            return Ok(spec);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(BenchError::UnknownExperiment(name_or_path.to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        let spec: ExperimentSpec = toml::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.sweep.values.is_empty() {
            return Err(BenchError::InvalidSpec("sweep has no values".into()));
        }
        if self.repetitions == 0 {
            return Err(BenchError::InvalidSpec("repetitions must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(BenchError::InvalidSpec("no validation modes selected".into()));
        }
        Ok(())
    }

    /// Multiplies the transactions per point, keeping at least one.
    pub fn scaled(mut self, scale: f64) -> Self {
        let scaled = (self.workload.total_txs as f64 * scale).round();
        self.workload.total_txs = scaled.max(1.0) as usize;
        self
    }

    /// Pipeline and workload configs for one point.
    pub fn point_configs(&self, mode: ValidationMode, value: f64) -> (PipelineConfig, WorkloadConfig) {
        let mut pipeline = PipelineConfig {
            mode,
            ..self.pipeline.clone()
        };
        if mode == ValidationMode::Fabric {
            if let Some(size) = self.fabric_block_size {
                pipeline.max_tx_count = size;
            }
        }
        let mut workload = self.workload.clone();
        self.sweep.param.apply(value, &mut pipeline, &mut workload);
        (pipeline, workload)
    }
}

/// Aggregated metrics of one sweep value in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub mode: ValidationMode,
    pub value: f64,
    pub total: usize,
    pub success_count: usize,
    pub failure_count: usize,
    pub endorsement_rejections: usize,
    pub other_count: usize,
    pub throughput_tps: f64,
    pub avg_latency_ms: f64,
    /// Median over repetitions of the median per-block validation time.
    pub merge_time_ms: f64,
    pub error: Option<String>,
}

impl PointMetrics {
    fn failed(mode: ValidationMode, value: f64, total: usize, error: String) -> Self {
        PointMetrics {
            mode,
            value,
            total,
            success_count: 0,
            failure_count: 0,
            endorsement_rejections: 0,
            other_count: 0,
            throughput_tps: 0.0,
            avg_latency_ms: 0.0,
            merge_time_ms: 0.0,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub param: SweepParam,
    pub modes: Vec<ValidationMode>,
    pub points: Vec<PointMetrics>,
}

impl MetricsReport {
    pub fn point(&self, mode: ValidationMode, value: f64) -> Option<&PointMetrics> {
        self.points.iter().find(|p| p.mode == mode && p.value == value)
    }

    pub fn series(&self, mode: ValidationMode) -> impl Iterator<Item = &PointMetrics> {
        self.points.iter().filter(move |p| p.mode == mode)
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

/// Median wall time of validating one block, in milliseconds.
pub fn median_block_merge_ms(report: &RunReport) -> f64 {
    let mut times: Vec<f64> = report
        .blocks
        .iter()
        .map(|b| b.merge_time.as_secs_f64() * 1000.0)
        .collect();
    median(&mut times)
}

/// One pipeline run on a fresh ledger.
pub fn run_point(pipeline: &PipelineConfig, workload: &WorkloadConfig) -> Result<RunReport, BenchError> {
    let stream = gen_stream(workload)?;
    let chaincode = IotChaincode {
        crdt_writes: workload.crdt_writes,
    };
    let run = run_pipeline(pipeline, &chaincode, &initial_state(&stream), &stream, BlockLog::new())?;
    Ok(run.report)
}

fn measure(spec: &ExperimentSpec, mode: ValidationMode, value: f64) -> Result<PointMetrics, BenchError> {
    let (pipeline, workload) = spec.point_configs(mode, value);
    let mut first: Option<PointMetrics> = None;
    let (mut tps, mut latency, mut merge) = (Vec::new(), Vec::new(), Vec::new());
    for rep in 0..spec.repetitions {
        let report = run_point(&pipeline, &workload)?;
        let s = report.summary();
        tps.push(s.throughput_tps);
        latency.push(s.avg_latency_ms);
        merge.push(median_block_merge_ms(&report));
        let counts = (s.success, s.failure, s.endorsement_rejections, s.other);
        match &first {
            None => {
                first = Some(PointMetrics {
                    mode,
                    value,
                    total: s.total,
                    success_count: s.success,
                    failure_count: s.failure,
                    endorsement_rejections: s.endorsement_rejections,
                    other_count: s.other,
                    throughput_tps: 0.0,
                    avg_latency_ms: 0.0,
                    merge_time_ms: 0.0,
                    error: None,
                })
            }
            Some(p) => {
                let seen = (p.success_count, p.failure_count, p.endorsement_rejections, p.other_count);
                if seen != counts {
                    return Err(BenchError::Nondeterministic(format!(
                        "repetition {rep} counted {counts:?}, first run {seen:?}"
                    )));
                }
            }
        }
    }
    let mut point = first.expect("at least one repetition");
    point.throughput_tps = median(&mut tps);
    point.avg_latency_ms = median(&mut latency);
    point.merge_time_ms = median(&mut merge);
    Ok(point)
}

/// Runs every sweep value in every mode. A failing point is kept in the
/// report with its error; the remaining points still run.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<MetricsReport, BenchError> {
    spec.validate()?;
    let mut points = Vec::new();
    for &mode in &spec.modes {
        for &value in &spec.sweep.values {
            let started = std::time::Instant::now();
            let point = measure(spec, mode, value).unwrap_or_else(|e| {
                log::warn!("{} {mode} {}={value}: {e}", spec.name, spec.sweep.param.as_str());
                PointMetrics::failed(mode, value, spec.workload.total_txs, e.to_string())
            });
            log::info!(
                "{} {mode} {}={value}: {} ok, {} failed ({:?})",
                spec.name,
                spec.sweep.param.as_str(),
                point.success_count,
                point.failure_count,
                Duration::from_millis(started.elapsed().as_millis() as u64),
            );
            points.push(point);
        }
    }
    Ok(MetricsReport {
        experiment: spec.name.clone(),
        param: spec.sweep.param,
        modes: spec.modes.clone(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str, values: Vec<f64>, total: usize) -> ExperimentSpec {
        let mut spec = ExperimentSpec::named(name).unwrap();
        spec.sweep.values = values;
        spec.workload.total_txs = total;
        spec
    }

    #[test]
    fn named_experiments_resolve() {
        for name in EXPERIMENTS {
            let spec = ExperimentSpec::resolve(name).unwrap();
            assert_eq!(spec.sweep.param.as_str(), name);
            spec.validate().unwrap();
        }
        assert!(matches!(
            ExperimentSpec::resolve("no-such-experiment"),
            Err(BenchError::UnknownExperiment(_))
        ));
    }

    #[test]
    fn block_size_sweep_crdt_commits_everything() {
        let spec = small("block_size", vec![25.0, 100.0, 400.0], 300);
        let report = run_experiment(&spec).unwrap();
        for p in report.series(ValidationMode::Crdt) {
            assert_eq!(p.success_count, 300, "block size {}", p.value);
        }
        for p in report.series(ValidationMode::Fabric) {
            assert!(p.success_count < 300, "block size {}", p.value);
        }
        for p in &report.points {
            assert_eq!(
                p.success_count + p.failure_count + p.endorsement_rejections + p.other_count,
                p.total
            );
        }
    }

    #[test]
    fn counts_repeat_under_fixed_seed() {
        let mut spec = small("conflict_pct", vec![40.0], 200);
        spec.repetitions = 3;
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            assert_eq!(x.success_count, y.success_count);
            assert_eq!(x.failure_count, y.failure_count);
            assert!(x.error.is_none());
        }
    }

    #[test]
    fn bad_point_is_recorded_not_fatal() {
        let spec = small("block_size", vec![0.0, 25.0], 50);
        let report = run_experiment(&spec).unwrap();
        let bad = report.point(ValidationMode::Crdt, 0.0).unwrap();
        assert!(bad.error.as_deref().unwrap().contains("max_tx_count"));
        assert_eq!(report.point(ValidationMode::Crdt, 25.0).unwrap().success_count, 50);
    }

    #[test]
    fn scale_multiplies_transactions() {
        let spec = ExperimentSpec::named("rw_keys").unwrap().scaled(0.1);
        assert_eq!(spec.workload.total_txs, 100);
        assert_eq!(ExperimentSpec::named("rw_keys").unwrap().scaled(0.0).workload.total_txs, 1);
    }

    #[test]
    fn spec_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(
            &path,
            r#"
            name = "custom"
            repetitions = 2
            modes = ["crdt"]

            [sweep]
            param = "rw_keys"
            values = [1, 2]

            [workload]
            total_txs = 20
            "#,
        )
        .unwrap();
        let spec = ExperimentSpec::resolve(path.to_str().unwrap()).unwrap();
        assert_eq!(spec.modes, vec![ValidationMode::Crdt]);
        assert_eq!(spec.sweep.values, vec![1.0, 2.0]);
        assert_eq!(spec.workload.total_txs, 20);
        assert_eq!(spec.pipeline.max_tx_count, 25);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut []), 0.0);
    }
}
