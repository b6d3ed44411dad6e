use std::collections::HashSet;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::agent::{evaluate, train, EpochMetrics, Mode, SampleSet, TrainedAgent, METRICS_HEADER};
use crate::environment::{load_dataset, FingerprintSample, GridWorld};
use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::rng::SeededRng;

pub const REPORT_HEADER: &str = "mode,seed,checkpoint_epoch,mean_reward,mean_distance_m,start_distance_m,end_distance_m";

pub const EPOCH_DEFINITION: &str = "one pass over the training samples";

const DATA_STREAM: u64 = 100;
const TEST_STREAM: u64 = 101;
const EVAL_STREAM: u64 = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub mode: Mode,
    pub seed: u64,
    pub checkpoint_epoch: usize,
    pub mean_reward: f64,
    pub mean_distance_m: f64,
    pub start_distance_m: f64,
    pub end_distance_m: f64,
}

impl ReportRow {
    pub fn improvement(&self) -> f64 {
        self.start_distance_m - self.end_distance_m
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.mode,
            self.seed,
            self.checkpoint_epoch,
            self.mean_reward,
            self.mean_distance_m,
            self.start_distance_m,
            self.end_distance_m
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
        if header != REPORT_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{REPORT_HEADER}`"),
            });
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let err = |m: String| Error::Parse { line, message: m };
            if rec.len() != 7 {
                return Err(err(format!("expected 7 fields, found {}", rec.len())));
            }
            let f = |i: usize| -> Result<f64> {
                let v: f64 = rec[i].parse().map_err(|_| err(format!("`{}` is not a number", &rec[i])))?;
                if v.is_nan() {
                    return Err(err("NaN in report".into()));
                }
                Ok(v)
            };
            rows.push(ReportRow {
                mode: rec[0].parse().map_err(|e: Error| err(e.to_string()))?,
                seed: rec[1].parse().map_err(|_| err(format!("bad seed `{}`", &rec[1])))?,
                checkpoint_epoch: rec[2].parse().map_err(|_| err(format!("bad epoch `{}`", &rec[2])))?,
                mean_reward: f(3)?,
                mean_distance_m: f(4)?,
                start_distance_m: f(5)?,
                end_distance_m: f(6)?,
            });
        }
        Ok(Self { rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes)
    }
}

/// Train/test split fingerprints for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitInfo {
    pub seed: u64,
    pub train_sha256: String,
    pub test_sha256: String,
    /// Bundles whose content appears in both splits.
    pub overlap: usize,
}

fn sample_digest(s: &FingerprintSample) -> [u8; 32] {
    let mut h = Sha256::new();
    match s.label {
        Some(c) => {
            h.update([1u8]);
            h.update((c.row as u64).to_le_bytes());
            h.update((c.col as u64).to_le_bytes());
        }
        None => h.update([0u8]),
    }
    for r in &s.readings {
        h.update((r.len() as u64).to_le_bytes());
        for v in r {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().into()
}

fn set_digest(digests: &[[u8; 32]]) -> String {
    let mut sorted = digests.to_vec();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for d in &sorted {
        h.update(d);
    }
    hex::encode(h.finalize())
}

pub fn split_info(seed: u64, train: &[FingerprintSample], test: &[FingerprintSample]) -> SplitInfo {
    let a: Vec<[u8; 32]> = train.iter().map(sample_digest).collect();
    let b: Vec<[u8; 32]> = test.iter().map(sample_digest).collect();
    let seen: HashSet<&[u8; 32]> = a.iter().collect();
    SplitInfo {
        seed,
        train_sha256: set_digest(&a),
        test_sha256: set_digest(&b),
        overlap: b.iter().filter(|d| seen.contains(d)).count(),
    }
}

/// Training and test bundles for one seed.
pub fn load_splits(config: &ExperimentConfig, world: &GridWorld, seed: u64) -> Result<(Vec<FingerprintSample>, Vec<FingerprintSample>)> {
    let rng = SeededRng::new(seed);
    match &config.dataset {
        None => Ok((
            world.generate_dataset(config.labeled_per_cell, config.unlabeled, &mut rng.fork(DATA_STREAM))?,
            world.generate_dataset(config.test_per_cell, 0, &mut rng.fork(TEST_STREAM))?,
        )),
        Some(path) => {
            let all = load_dataset(path)?;
            match &config.test_dataset {
                Some(t) => Ok((all, load_dataset(t)?)),
                None => Ok(hold_out(all, config.test_per_cell)),
            }
        }
    }
}

/// Moves the last `per_cell` labeled bundles of every cell to the test split.
fn hold_out(all: Vec<FingerprintSample>, per_cell: usize) -> (Vec<FingerprintSample>, Vec<FingerprintSample>) {
    let mut remaining = std::collections::HashMap::new();
    for s in &all {
        if let Some(c) = s.label {
            *remaining.entry(c).or_insert(0usize) += 1;
        }
    }
    let mut taken = std::collections::HashMap::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in all.into_iter().rev() {
        match s.label {
            Some(c) if *taken.get(&c).unwrap_or(&0) < per_cell && remaining[&c] > per_cell => {
                *taken.entry(c).or_insert(0) += 1;
                test.push(s);
            }
            _ => train.push(s),
        }
    }
    train.reverse();
    test.reverse();
    (train, test)
}

/// Result of one (seed, mode) cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub mode: Mode,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub metrics: Vec<EpochMetrics>,
    pub agent: TrainedAgent,
}

/// Trains one mode on one seed and evaluates it on the test split at every
/// checkpoint. Every checkpoint evaluation uses the same start cells.
pub fn run_cell(config: &ExperimentConfig, seed: u64, mode: Mode) -> Result<(CellResult, SplitInfo)> {
    config.validate()?;
    let world = config.world()?;
    let featurizer = Featurizer::new(config.feature_config(&world))?;
    let (train_set, test_set) = load_splits(config, &world, seed)?;
    let info = split_info(seed, &train_set, &test_set);
    let noiseless_synthetic = config.dataset.is_none() && config.noise_sigma == 0.0;
    if info.overlap > 0 && !noiseless_synthetic {
        return Err(Error::invalid(format!(
            "{} test bundles also appear in the training split",
            info.overlap
        )));
    }
    let rng = SeededRng::new(seed);
    let samples = SampleSet::new(&train_set);
    let mut rows = Vec::new();
    let tc = config.train_config(mode);
    let outcome = train(&world, &featurizer, &samples, &tc, &rng, |m, agent| {
        if config.checkpoints.contains(&m.epoch) {
            let s = evaluate(&world, &featurizer, agent, &test_set, &mut rng.fork(EVAL_STREAM))?;
            rows.push(ReportRow {
                mode,
                seed,
                checkpoint_epoch: m.epoch,
                mean_reward: s.mean_reward,
                mean_distance_m: s.mean_distance_m,
                start_distance_m: s.start_distance_m,
                end_distance_m: s.end_distance_m,
            });
        }
        Ok(())
    })?;
    Ok((
        CellResult {
            mode,
            seed,
            rows,
            metrics: outcome.metrics,
            agent: outcome.agent,
        },
        info,
    ))
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub mode: Mode,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ComparisonOutcome {
    pub report: ComparisonReport,
    pub cells: Vec<CellResult>,
    pub splits: Vec<SplitInfo>,
    pub failures: Vec<CellFailure>,
}

/// Runs every (seed, mode) cell on a pool of `config.threads` workers. A
/// failing cell is logged and left out; the others still run.
pub fn run_comparison(config: &ExperimentConfig) -> Result<ComparisonOutcome> {
    use rayon::prelude::*;

    config.validate()?;
    let jobs: Vec<(u64, Mode)> = config
        .seeds
        .iter()
        .flat_map(|&s| config.modes.iter().map(move |&m| (s, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<(CellResult, SplitInfo)>> =
        pool.install(|| jobs.par_iter().map(|&(seed, mode)| run_cell(config, seed, mode)).collect());

    let mut cells = Vec::new();
    let mut splits: Vec<SplitInfo> = Vec::new();
    let mut failures = Vec::new();
    for ((seed, mode), r) in jobs.iter().zip(results) {
        match r {
            Ok((cell, info)) => {
                if !splits.iter().any(|s| s.seed == info.seed) {
                    splits.push(info);
                }
                cells.push(cell);
            }
            Err(e) => {
                log::error!("{mode} seed {seed} failed: {e}");
                failures.push(CellFailure {
                    mode: *mode,
                    seed: *seed,
                    message: e.to_string(),
                });
            }
        }
    }
    let mut rows: Vec<ReportRow> = cells.iter().flat_map(|c| c.rows.iter().cloned()).collect();
    rows.sort_by(|a, b| (a.mode, a.seed, a.checkpoint_epoch).cmp(&(b.mode, b.seed, b.checkpoint_epoch)));
    Ok(ComparisonOutcome {
        report: ComparisonReport { rows },
        cells,
        splits,
        failures,
    })
}

pub fn manifest(config: &ExperimentConfig, splits: &[SplitInfo]) -> String {
    let mut s = format!("version = {}\n", env!("CARGO_PKG_VERSION"));
    s.push_str(&format!("epoch_definition = {EPOCH_DEFINITION}\n"));
    s.push_str(&config.to_text());
    s.push_str(&format!("threads = {}\n", config.threads));
    for sp in splits {
        s.push_str(&format!("split.{}.train_sha256 = {}\n", sp.seed, sp.train_sha256));
        s.push_str(&format!("split.{}.test_sha256 = {}\n", sp.seed, sp.test_sha256));
        s.push_str(&format!("split.{}.overlap = {}\n", sp.seed, sp.overlap));
    }
    s
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in metrics {
        s.push_str(&m.csv_row());
        s.push('\n');
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.csv`, `manifest.txt` and one metrics CSV per cell.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, outcome: &ComparisonOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("report.csv"), &outcome.report.to_csv())?;
    write(&dir.join("manifest.txt"), &manifest(config, &outcome.splits))?;
    for c in &outcome.cells {
        write(
            &dir.join(format!("metrics_{}_{}.csv", c.mode, c.seed)),
            &metrics_csv(&c.metrics),
        )?;
    }
    Ok(())
}
