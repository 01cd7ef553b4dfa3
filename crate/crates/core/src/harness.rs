//! Multi-seed experiment runner: trials, aggregation and result files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{train, AgentConfig, Algorithm, TrainMetrics};
use crate::assembly::AssemblySpec;
use crate::env::{DurationMode, EnvConfig, UnwantedSpec};
use crate::error::HarnessError;
use crate::oracle::{
    convention_report, count_linear_extensions, duration_report, enumerate_sequences,
    preferred_optimum, DurationReport, AIRPLANE_REFERENCE, DEFAULT_CEILING,
};

/// Episodes at the end of a trial whose mean is the trial's final duration.
pub const FINAL_WINDOW: usize = 500;

pub const FINAL_METRIC_NOTE: &str = "final_mean_tu is the mean over trials of each trial's \
mean deterministic-equivalent duration across its last 500 episodes (truncated episodes \
excluded); late_unwanted_fraction counts unwanted episodes in the second half of training";

pub const RAINBOW_NOTE: &str = "rainbow variant: double Q-learning targets, dueling heads, \
proportional prioritized replay and 3-step returns with epsilon-greedy exploration; \
distributional value heads and noisy layers are not implemented";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `builtin:airplane` or a path to a spec JSON file.
    pub spec: String,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub episodes: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub smoothing_window: usize,
    /// Upper bound on concurrently running trials; `None` uses every core.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            spec: "builtin:airplane".into(),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            episodes: 10_000,
            trials: 20,
            base_seed: 0,
            output_dir: None,
            smoothing_window: 100,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config. A relative spec path is resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        if !config.spec.starts_with("builtin:") && Path::new(&config.spec).is_relative() {
            if let Some(dir) = path.parent() {
                config.spec = dir.join(&config.spec).to_string_lossy().into_owned();
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        if self.episodes == 0 {
            return Err(HarnessError::Config("episodes must be at least 1".into()));
        }
        if self.smoothing_window == 0 {
            return Err(HarnessError::Config("smoothing_window must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        self.agent.validate()?;
        Ok(())
    }
}

/// Seed of trial `index`: word 0 of stream `index` of a generator keyed by `base_seed`.
pub fn derive_seed(base_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub index: usize,
    pub seed: u64,
    /// `None` when every episode in the final window was truncated.
    pub final_tu: Option<f64>,
    pub final_experienced_tu: Option<f64>,
    pub total_unwanted: u64,
    pub late_unwanted_fraction: f64,
    pub truncated_episodes: usize,
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub index: usize,
    pub metrics: TrainMetrics,
    pub summary: TrialSummary,
}

impl TrialResult {
    pub fn new(index: usize, metrics: TrainMetrics) -> Self {
        let summary = summarize_trial(index, &metrics);
        TrialResult {
            index,
            metrics,
            summary,
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Sample (n − 1) standard deviation; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

pub fn summarize_trial(index: usize, metrics: &TrainMetrics) -> TrialSummary {
    let n = metrics.episodes.len();
    let tail = &metrics.episodes[n.saturating_sub(FINAL_WINDOW)..];
    let det: Vec<f64> = tail.iter().filter_map(|e| e.deterministic_equivalent).collect();
    let exp: Vec<f64> = tail.iter().filter_map(|e| e.duration).collect();
    let late = &metrics.episodes[n / 2..];
    let late_unwanted = late.iter().filter(|e| e.unwanted).count();
    TrialSummary {
        index,
        seed: metrics.seed,
        final_tu: mean(&det),
        final_experienced_tu: mean(&exp),
        total_unwanted: metrics.total_unwanted(),
        late_unwanted_fraction: if late.is_empty() {
            0.0
        } else {
            late_unwanted as f64 / late.len() as f64
        },
        truncated_episodes: metrics.episodes.iter().filter(|e| e.truncated).count(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub mean_duration: Option<f64>,
    pub std_duration: Option<f64>,
    pub mean_deterministic_equivalent: Option<f64>,
    pub std_deterministic_equivalent: Option<f64>,
    pub mean_cum_unwanted: f64,
    pub std_cum_unwanted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub algorithm: Algorithm,
    pub masking: bool,
    pub trials: usize,
    pub trials_with_final: usize,
    pub final_mean_tu: Option<f64>,
    pub final_std_tu: Option<f64>,
    pub final_experienced_mean_tu: Option<f64>,
    pub total_unwanted_mean: f64,
    pub total_unwanted_std: f64,
    pub late_unwanted_fraction_mean: f64,
    pub truncated_episodes_mean: f64,
    pub per_trial: Vec<TrialSummary>,
    #[serde(skip)]
    pub curves: Vec<CurveRow>,
}

/// Trailing moving average over up to `window` present values.
pub fn smooth(series: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let window = window.max(1);
    (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let vals: Vec<f64> = series[lo..=i].iter().flatten().copied().collect();
            mean(&vals)
        })
        .collect()
}

/// Cross-trial statistics. Trials are ordered by index first, so the result
/// does not depend on the order of `trials`.
pub fn aggregate(trials: &[TrialResult], window: usize) -> Result<AggregateResult, HarnessError> {
    let first = trials.first().ok_or(HarnessError::NoTrials)?;
    let mut ordered: Vec<&TrialResult> = trials.iter().collect();
    ordered.sort_by_key(|t| t.index);
    let episodes = ordered
        .iter()
        .map(|t| t.metrics.episodes.len())
        .min()
        .unwrap_or(0);

    let finals: Vec<f64> = ordered.iter().filter_map(|t| t.summary.final_tu).collect();
    let experienced: Vec<f64> = ordered
        .iter()
        .filter_map(|t| t.summary.final_experienced_tu)
        .collect();
    let unwanted: Vec<f64> = ordered
        .iter()
        .map(|t| t.summary.total_unwanted as f64)
        .collect();
    let late: Vec<f64> = ordered
        .iter()
        .map(|t| t.summary.late_unwanted_fraction)
        .collect();
    let truncated: Vec<f64> = ordered
        .iter()
        .map(|t| t.summary.truncated_episodes as f64)
        .collect();

    let column = |f: &dyn Fn(&crate::agents::EpisodeMetrics) -> Option<f64>| {
        let mut means = Vec::with_capacity(episodes);
        let mut stds = Vec::with_capacity(episodes);
        for ep in 0..episodes {
            let vals: Vec<f64> = ordered
                .iter()
                .filter_map(|t| f(&t.metrics.episodes[ep]))
                .collect();
            means.push(mean(&vals));
            stds.push((!vals.is_empty()).then(|| sample_std(&vals)));
        }
        (smooth(&means, window), smooth(&stds, window))
    };
    let (dur_m, dur_s) = column(&|e| e.duration);
    let (det_m, det_s) = column(&|e| e.deterministic_equivalent);
    let (cum_m, cum_s) = column(&|e| Some(e.cumulative_unwanted as f64));
    let curves = (0..episodes)
        .map(|i| CurveRow {
            episode: i + 1,
            mean_duration: dur_m[i],
            std_duration: dur_s[i],
            mean_deterministic_equivalent: det_m[i],
            std_deterministic_equivalent: det_s[i],
            mean_cum_unwanted: cum_m[i].unwrap_or(0.0),
            std_cum_unwanted: cum_s[i].unwrap_or(0.0),
        })
        .collect();

    Ok(AggregateResult {
        algorithm: first.metrics.algorithm,
        masking: first.metrics.masking,
        trials: ordered.len(),
        trials_with_final: finals.len(),
        final_mean_tu: mean(&finals),
        final_std_tu: (!finals.is_empty()).then(|| sample_std(&finals)),
        final_experienced_mean_tu: mean(&experienced),
        total_unwanted_mean: mean(&unwanted).unwrap_or(0.0),
        total_unwanted_std: sample_std(&unwanted),
        late_unwanted_fraction_mean: mean(&late).unwrap_or(0.0),
        truncated_episodes_mean: mean(&truncated).unwrap_or(0.0),
        per_trial: ordered.iter().map(|t| t.summary.clone()).collect(),
        curves,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub pickup_costs_change: bool,
    /// Best duration over sequences the unwanted rules allow.
    pub min_allowed_tu: f64,
    pub min_unconstrained_tu: f64,
    pub allowed_sequences: usize,
    pub total_sequences: usize,
}

pub fn oracle_summary(
    spec: &AssemblySpec,
    pickup_costs_change: bool,
    unwanted: &UnwantedSpec,
) -> Result<OracleSummary, HarnessError> {
    let records = enumerate_sequences(spec, pickup_costs_change, DEFAULT_CEILING)?;
    let min_unconstrained_tu = records
        .iter()
        .map(|r| r.duration)
        .fold(f64::INFINITY, f64::min);
    Ok(OracleSummary {
        pickup_costs_change,
        min_allowed_tu: preferred_optimum(&records, unwanted)?,
        min_unconstrained_tu,
        allowed_sequences: records
            .iter()
            .filter(|r| !unwanted.is_unwanted(&r.sequence))
            .count(),
        total_sequences: records.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConventionFlags {
    pub pickup_costs_change: bool,
    pub masking: bool,
    pub setting: DurationMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub final_mean_tu: Option<f64>,
    pub final_std_tu: Option<f64>,
    pub final_experienced_mean_tu: Option<f64>,
    pub total_unwanted_mean: f64,
    pub total_unwanted_std: f64,
    pub late_unwanted_fraction_mean: f64,
    pub truncated_episodes_mean: f64,
    pub trials: usize,
    pub trials_with_final: usize,
    pub oracle_min: Option<f64>,
    pub oracle_min_unconstrained: Option<f64>,
    pub convention_flags: ConventionFlags,
    pub notes: Vec<String>,
    pub per_trial: Vec<TrialSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub episodes: usize,
    pub base_seed: u64,
    pub smoothing_window: usize,
    pub final_metric: String,
    pub oracle: Option<OracleSummary>,
    pub algorithms: Vec<AlgorithmSummary>,
}

impl RunSummary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub aggregate: AggregateResult,
    pub summary: RunSummary,
    pub trials: Vec<TrialResult>,
}

/// Runs every trial, aggregates, and writes result files when the config
/// names an output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    config.validate()?;
    let spec = Arc::new(AssemblySpec::from_source(&config.spec)?);
    config
        .env
        .validate(&spec)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    // Enumeration is skipped for specs too large to enumerate.
    let oracle = oracle_summary(&spec, config.env.pickup_costs_change, &config.env.unwanted).ok();

    let run_trial = |index: usize| -> Result<TrialResult, HarnessError> {
        let seed = derive_seed(config.base_seed, index);
        let metrics = train(
            Arc::clone(&spec),
            &config.env,
            &config.agent,
            config.episodes,
            seed,
        )?;
        Ok(TrialResult::new(index, metrics))
    };
    let run_all = || -> Result<Vec<TrialResult>, HarnessError> {
        (0..config.trials).into_par_iter().map(run_trial).collect()
    };
    let trials = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(run_all)?,
        None => run_all()?,
    };

    let aggregate = aggregate(&trials, config.smoothing_window)?;
    let summary = RunSummary {
        episodes: config.episodes,
        base_seed: config.base_seed,
        smoothing_window: config.smoothing_window,
        final_metric: FINAL_METRIC_NOTE.into(),
        oracle: oracle.clone(),
        algorithms: vec![algorithm_summary(&aggregate, config, oracle.as_ref())],
    };
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &trials, &aggregate, &summary)?;
    }
    Ok(ExperimentOutcome {
        aggregate,
        summary,
        trials,
    })
}

fn algorithm_summary(
    agg: &AggregateResult,
    config: &ExperimentConfig,
    oracle: Option<&OracleSummary>,
) -> AlgorithmSummary {
    let mut notes = Vec::new();
    if agg.algorithm == Algorithm::Rainbow {
        notes.push(RAINBOW_NOTE.to_string());
    }
    if config.env.mode == DurationMode::Stochastic {
        notes.push(
            "durations are sampled; final_mean_tu uses the deterministic-equivalent duration of each sequence"
                .into(),
        );
    }
    AlgorithmSummary {
        algorithm: agg.algorithm,
        final_mean_tu: agg.final_mean_tu,
        final_std_tu: agg.final_std_tu,
        final_experienced_mean_tu: agg.final_experienced_mean_tu,
        total_unwanted_mean: agg.total_unwanted_mean,
        total_unwanted_std: agg.total_unwanted_std,
        late_unwanted_fraction_mean: agg.late_unwanted_fraction_mean,
        truncated_episodes_mean: agg.truncated_episodes_mean,
        trials: agg.trials,
        trials_with_final: agg.trials_with_final,
        oracle_min: oracle.map(|o| o.min_allowed_tu),
        oracle_min_unconstrained: oracle.map(|o| o.min_unconstrained_tu),
        convention_flags: ConventionFlags {
            pickup_costs_change: config.env.pickup_costs_change,
            masking: agg.masking,
            setting: config.env.mode,
        },
        notes,
        per_trial: agg.per_trial.clone(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub const TRIAL_HEADER: [&str; 8] = [
    "episode",
    "duration_tu",
    "deterministic_equivalent_tu",
    "reward",
    "unwanted",
    "cumulative_unwanted",
    "epsilon",
    "truncated",
];

pub fn write_trial_csv(path: &Path, metrics: &TrainMetrics) -> Result<(), HarnessError> {
    let rows = metrics
        .episodes
        .iter()
        .enumerate()
        .map(|(i, e)| {
            vec![
                (i + 1).to_string(),
                opt(e.duration),
                opt(e.deterministic_equivalent),
                e.reward.to_string(),
                (e.unwanted as u8).to_string(),
                e.cumulative_unwanted.to_string(),
                e.epsilon.to_string(),
                (e.truncated as u8).to_string(),
            ]
        })
        .collect();
    write_csv(path, &TRIAL_HEADER, rows)
}

pub fn write_aggregate_csv(path: &Path, agg: &AggregateResult) -> Result<(), HarnessError> {
    let rows = agg
        .curves
        .iter()
        .map(|c| {
            vec![
                c.episode.to_string(),
                opt(c.mean_duration),
                opt(c.std_duration),
                c.mean_cum_unwanted.to_string(),
                c.std_cum_unwanted.to_string(),
                opt(c.mean_deterministic_equivalent),
                opt(c.std_deterministic_equivalent),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "episode",
            "mean_duration",
            "std_duration",
            "mean_cum_unwanted",
            "std_cum_unwanted",
            "mean_deterministic_equivalent",
            "std_deterministic_equivalent",
        ],
        rows,
    )
}

pub fn trial_file_name(index: usize) -> String {
    format!("trial_{index:03}.csv")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub fn write_outputs(
    dir: &Path,
    trials: &[TrialResult],
    agg: &AggregateResult,
    summary: &RunSummary,
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for t in trials {
        write_trial_csv(&dir.join(trial_file_name(t.index)), &t.metrics)?;
    }
    write_aggregate_csv(&dir.join("aggregate.csv"), agg)?;
    write_json(&dir.join("summary.json"), summary)
}

/// One row per algorithm per run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub algorithm: Algorithm,
    pub setting: DurationMode,
    pub masking: bool,
    pub final_mean_tu: Option<f64>,
    pub final_std_tu: Option<f64>,
    pub total_unwanted_mean: f64,
    pub total_unwanted_std: f64,
    pub late_unwanted_fraction_mean: f64,
    pub oracle_min: Option<f64>,
}

/// Merges the `summary.json` of several runs into `comparison.csv` and
/// `comparison.json` under `out`.
pub fn compare(runs: &[PathBuf], out: &Path) -> Result<Vec<ComparisonRow>, HarnessError> {
    if runs.is_empty() {
        return Err(HarnessError::NoTrials);
    }
    let mut rows = Vec::new();
    for run in runs {
        let summary = RunSummary::load(run.join("summary.json"))?;
        let name = run
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| run.to_string_lossy().into_owned());
        for a in summary.algorithms {
            rows.push(ComparisonRow {
                run: name.clone(),
                algorithm: a.algorithm,
                setting: a.convention_flags.setting,
                masking: a.convention_flags.masking,
                final_mean_tu: a.final_mean_tu,
                final_std_tu: a.final_std_tu,
                total_unwanted_mean: a.total_unwanted_mean,
                total_unwanted_std: a.total_unwanted_std,
                late_unwanted_fraction_mean: a.late_unwanted_fraction_mean,
                oracle_min: a.oracle_min,
            });
        }
    }
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let setting = |m: DurationMode| match m {
        DurationMode::Deterministic => "deterministic",
        DurationMode::Stochastic => "stochastic",
    };
    let csv_rows = rows
        .iter()
        .map(|r| {
            vec![
                r.run.clone(),
                r.algorithm.to_string(),
                setting(r.setting).to_string(),
                (r.masking as u8).to_string(),
                opt(r.final_mean_tu),
                opt(r.final_std_tu),
                r.total_unwanted_mean.to_string(),
                r.total_unwanted_std.to_string(),
                r.late_unwanted_fraction_mean.to_string(),
                opt(r.oracle_min),
            ]
        })
        .collect();
    write_csv(
        &out.join("comparison.csv"),
        &[
            "run",
            "algorithm",
            "setting",
            "masking",
            "final_mean_tu",
            "final_std_tu",
            "total_unwanted_mean",
            "total_unwanted_std",
            "late_unwanted_fraction_mean",
            "oracle_min",
        ],
        csv_rows,
    )?;
    let by_run: BTreeMap<&str, Vec<&ComparisonRow>> =
        rows.iter().fold(BTreeMap::new(), |mut m, r| {
            m.entry(r.run.as_str()).or_default().push(r);
            m
        });
    write_json(&out.join("comparison.json"), &by_run)?;
    Ok(rows)
}

/// `stats.json` of the `enumerate` command.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnumerationStats {
    pub count: usize,
    /// Independent count of precedence-respecting orders.
    pub linear_extensions: Option<u128>,
    pub report: DurationReport,
}

/// Enumerates every feasible sequence under each requested pickup convention
/// and, with `out`, writes `sequences.csv`, `histogram.csv` and `stats.json`.
pub fn run_enumeration(
    spec: &AssemblySpec,
    pickup_conventions: &[bool],
    bin_width: f64,
    ceiling: u64,
    out: Option<&Path>,
) -> Result<EnumerationStats, HarnessError> {
    let mut reports = Vec::new();
    let mut sequence_rows = Vec::new();
    let mut histogram_rows = Vec::new();
    for &pickup in pickup_conventions {
        let (report, records) =
            convention_report(spec, pickup, bin_width, ceiling, &AIRPLANE_REFERENCE)?;
        let label = if pickup { "on" } else { "off" };
        for r in &records {
            sequence_rows.push(vec![
                label.to_string(),
                r.sequence_string(),
                r.duration.to_string(),
                r.tool_changes.to_string(),
            ]);
        }
        for b in &report.stats.histogram {
            histogram_rows.push(vec![
                label.to_string(),
                b.low.to_string(),
                b.high.to_string(),
                b.count.to_string(),
            ]);
        }
        reports.push(report);
    }
    let stats = EnumerationStats {
        count: reports.first().map_or(0, |r| r.stats.count),
        linear_extensions: count_linear_extensions(spec),
        report: duration_report(reports, AIRPLANE_REFERENCE),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        write_csv(
            &dir.join("sequences.csv"),
            &["pickup_costs_change", "sequence", "duration_tu", "tool_changes"],
            sequence_rows,
        )?;
        write_csv(
            &dir.join("histogram.csv"),
            &["pickup_costs_change", "low_tu", "high_tu", "count"],
            histogram_rows,
        )?;
        write_json(&dir.join("stats.json"), &stats)?;
    }
    Ok(stats)
}
