//! Seeded multi-run sweeps and their aggregate statistics.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use canal_core::engine::{run_episode, Mode, Outcome, RunMetrics, ScenarioConfig};
use canal_core::EpisodeLog;

use crate::export::{export_episode, ExportFormat};

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario_path: PathBuf,
    /// Runs per mode, at least 1.
    pub runs: usize,
    pub seed_base: u64,
    pub modes: Vec<Mode>,
    pub out_dir: Option<PathBuf>,
    /// Also export every episode as a table.
    pub export: Option<ExportFormat>,
    /// Episodes executed concurrently.
    pub jobs: usize,
}

impl ExperimentSpec {
    pub fn new(scenario_path: impl Into<PathBuf>, runs: usize, seed_base: u64, modes: Vec<Mode>) -> Self {
        Self {
            scenario_path: scenario_path.into(),
            runs,
            seed_base,
            modes,
            out_dir: None,
            export: None,
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.runs < 1 {
            return Err("runs must be at least 1".into());
        }
        if self.modes.is_empty() {
            return Err("at least one mode is required".into());
        }
        if self.jobs < 1 {
            return Err("jobs must be at least 1".into());
        }
        Ok(())
    }

    pub fn seed_of(&self, run: usize) -> u64 {
        self.seed_base.wrapping_add(run as u64)
    }
}

/// One row of metrics.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub mode: String,
    pub run: usize,
    pub seed: u64,
    pub outcome: String,
    pub violations: usize,
    pub time_s: f64,
    pub total_distance_m: f64,
    pub plan_ms_mean: f64,
    pub plan_calls: usize,
    pub scenario_hash: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub mode: Mode,
    pub run: usize,
    pub seed: u64,
    pub result: Result<RunMetrics, String>,
}

impl RunRecord {
    pub fn row(&self) -> MetricsRow {
        match &self.result {
            Ok(m) => MetricsRow {
                mode: self.mode.name().into(),
                run: self.run,
                seed: self.seed,
                outcome: m.outcome.name().into(),
                violations: m.rule_violation_events,
                time_s: m.time_to_completion_s,
                total_distance_m: m.total_distance_m,
                plan_ms_mean: m.mean_plan_ms(),
                plan_calls: m.plan_call_ms.len(),
                scenario_hash: m.scenario_hash.clone(),
                error: String::new(),
            },
            Err(e) => MetricsRow {
                mode: self.mode.name().into(),
                run: self.run,
                seed: self.seed,
                outcome: "error".into(),
                violations: 0,
                time_s: f64::NAN,
                total_distance_m: f64::NAN,
                plan_ms_mean: f64::NAN,
                plan_calls: 0,
                scenario_hash: String::new(),
                error: e.clone(),
            },
        }
    }
}

/// Statistics of one mode. Counts cover completed runs only; `errors`
/// counts runs that could not be executed. Time and distance means are
/// over successful runs, planning statistics over every plan call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub mode: Mode,
    pub completed: usize,
    pub success: usize,
    pub deadlock: usize,
    pub collision: usize,
    pub errors: usize,
    pub total_violations: usize,
    pub violations_in_successful_runs: usize,
    pub mean_time_s: Option<f64>,
    pub mean_total_distance_m: Option<f64>,
    pub plan_ms_mean: Option<f64>,
    pub plan_ms_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs_per_mode: usize,
    pub seed_base: u64,
    /// Set when an error stopped the batch early.
    pub aborted: bool,
    pub modes: Vec<ModeAggregate>,
}

impl AggregateReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeAggregate> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

pub fn aggregate(spec: &ExperimentSpec, records: &[RunRecord], aborted: bool) -> AggregateReport {
    let modes = spec
        .modes
        .iter()
        .map(|&mode| {
            let recs: Vec<&RunRecord> = records.iter().filter(|r| r.mode == mode).collect();
            let done: Vec<&RunMetrics> = recs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
            let count = |o: Outcome| done.iter().filter(|m| m.outcome == o).count();
            let ok: Vec<&&RunMetrics> = done.iter().filter(|m| m.outcome == Outcome::Success).collect();
            let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
            let times: Vec<f64> = ok.iter().map(|m| m.time_to_completion_s).collect();
            let dists: Vec<f64> = ok.iter().map(|m| m.total_distance_m).collect();
            let plans: Vec<f64> = done.iter().flat_map(|m| m.plan_call_ms.iter().copied()).collect();
            let plan_mean = mean(&plans);
            let plan_std =
                plan_mean.map(|mu| (plans.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / plans.len() as f64).sqrt());
            ModeAggregate {
                mode,
                completed: done.len(),
                success: count(Outcome::Success),
                deadlock: count(Outcome::Deadlock),
                collision: count(Outcome::Collision),
                errors: recs.len() - done.len(),
                total_violations: done.iter().map(|m| m.rule_violation_events).sum(),
                violations_in_successful_runs: ok.iter().map(|m| m.rule_violation_events).sum(),
                mean_time_s: mean(&times),
                mean_total_distance_m: mean(&dists),
                plan_ms_mean: plan_mean,
                plan_ms_std: plan_std,
            }
        })
        .collect();
    AggregateReport {
        runs_per_mode: spec.runs,
        seed_base: spec.seed_base,
        aborted,
        modes,
    }
}

#[derive(Debug)]
pub struct BatchOutcome {
    pub records: Vec<RunRecord>,
    pub report: AggregateReport,
}

impl BatchOutcome {
    pub fn any_error(&self) -> bool {
        self.report.aborted || self.records.iter().any(|r| r.result.is_err())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchError + '_ {
    move |source| BatchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn episode_stem(mode: Mode, run: usize) -> String {
    format!("{}_{run:04}", mode.name())
}

fn write_episode(
    dir: &Path,
    spec: &ExperimentSpec,
    mode: Mode,
    run: usize,
    log: &EpisodeLog,
) -> Result<(), BatchError> {
    let stem = episode_stem(mode, run);
    let path = dir.join(format!("{stem}.jsonl"));
    let f = File::create(&path).map_err(io_err(&path))?;
    log.write_jsonl(BufWriter::new(f)).map_err(io_err(&path))?;
    if let Some(fmt) = spec.export {
        let path = dir.join(format!("{stem}.{}", fmt.extension()));
        export_episode(log, fmt, &path).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Writes metrics.csv and aggregate.json into `dir`.
pub fn write_results(dir: &Path, records: &[RunRecord], report: &AggregateReport) -> Result<(), BatchError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| BatchError::Io {
        path: path.clone(),
        source: e.into(),
    })?;
    for r in records {
        w.serialize(r.row()).map_err(|e| BatchError::Io {
            path: path.clone(),
            source: e.into(),
        })?;
    }
    w.flush().map_err(io_err(&path))?;
    let path = dir.join("aggregate.json");
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

/// Runs every (mode, run) pair. Run `i` of every mode uses seed
/// `seed_base + i`. The first failing run stops the sweep; completed
/// results are still aggregated and written.
pub fn run_batch(scenario: &ScenarioConfig, spec: &ExperimentSpec) -> Result<BatchOutcome, BatchError> {
    spec.validate().map_err(BatchError::Spec)?;
    let episodes_dir = spec.out_dir.as_ref().map(|d| d.join("episodes"));
    if let Some(d) = &episodes_dir {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let jobs: Vec<(Mode, usize)> = spec
        .modes
        .iter()
        .flat_map(|&m| (0..spec.runs).map(move |i| (m, i)))
        .collect();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<(usize, RunRecord)>> = Mutex::new(Vec::new());
    let io_failure: Mutex<Option<BatchError>> = Mutex::new(None);

    let worker = || loop {
        if abort.load(Ordering::SeqCst) {
            return;
        }
        let j = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(mode, run)) = jobs.get(j) else { return };
        let mut sc = scenario.clone();
        sc.mode = mode;
        let seed = spec.seed_of(run);
        let result = match run_episode(&sc, seed) {
            Ok((metrics, log)) => {
                if let Some(d) = &episodes_dir {
                    if let Err(e) = write_episode(d, spec, mode, run, &log) {
                        io_failure.lock().unwrap().get_or_insert(e);
                        abort.store(true, Ordering::SeqCst);
                    }
                }
                Ok(metrics)
            }
            Err(e) => {
                abort.store(true, Ordering::SeqCst);
                Err(e.to_string())
            }
        };
        results.lock().unwrap().push((
            j,
            RunRecord {
                mode,
                run,
                seed,
                result,
            },
        ));
    };
    std::thread::scope(|s| {
        for _ in 0..spec.jobs.min(jobs.len()) {
            s.spawn(worker);
        }
    });

    let mut records = results.into_inner().unwrap();
    records.sort_by_key(|(j, _)| *j);
    let records: Vec<RunRecord> = records.into_iter().map(|(_, r)| r).collect();
    let aborted = abort.load(Ordering::SeqCst);
    let report = aggregate(spec, &records, aborted);
    if let Some(d) = &spec.out_dir {
        write_results(d, &records, &report)?;
    }
    if let Some(e) = io_failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(BatchOutcome { records, report })
}
