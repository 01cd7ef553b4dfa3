//! Exhaustive ground truth: every precedence-valid sequence with its exact
//! deterministic duration, the duration distribution and the optimal set.

use serde::Serialize;

use crate::assembly::{AssemblySpec, TaskId, TaskSet};
use crate::env::UnwantedSpec;
use crate::error::OracleError;

pub const DEFAULT_CEILING: u64 = 10_000_000;

/// Published statistics for the airplane case: min, max, mean (t.u.).
pub const AIRPLANE_REFERENCE: ReferenceStats = ReferenceStats {
    count: 3360,
    min: 64.0,
    max: 82.0,
    mean: 73.2,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReferenceStats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub sequence: Vec<TaskId>,
    pub duration: f64,
    pub tool_changes: usize,
}

impl SequenceRecord {
    /// One-based task numbers joined by `-`, e.g. `1-4-5-8-2-3-6-7`.
    pub fn sequence_string(&self) -> String {
        self.sequence
            .iter()
            .map(|t| t.number().to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistributionStats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Depth-first enumeration of linear extensions, ascending task order at
/// every branch.
pub fn enumerate_sequences(
    spec: &AssemblySpec,
    pickup_costs_change: bool,
    ceiling: u64,
) -> Result<Vec<SequenceRecord>, OracleError> {
    struct Walk<'a> {
        spec: &'a AssemblySpec,
        pickup: bool,
        ceiling: u64,
        prefix: Vec<TaskId>,
        out: Vec<SequenceRecord>,
    }

    impl Walk<'_> {
        fn visit(
            &mut self,
            done: TaskSet,
            tool: Option<crate::assembly::ToolId>,
            elapsed: f64,
            changes: usize,
        ) -> Result<(), OracleError> {
            if done == self.spec.all_tasks() {
                if self.out.len() as u64 >= self.ceiling {
                    return Err(OracleError::CeilingExceeded {
                        ceiling: self.ceiling,
                    });
                }
                self.out.push(SequenceRecord {
                    sequence: self.prefix.clone(),
                    duration: elapsed,
                    tool_changes: changes,
                });
                return Ok(());
            }
            for task in self.spec.legal_tasks(done).iter() {
                let d = self
                    .spec
                    .task_duration(task, done, tool, self.pickup)
                    .expect("legal by construction");
                let change = self.spec.needs_tool_change(task, tool, self.pickup) as usize;
                self.prefix.push(task);
                self.visit(
                    done.with(task),
                    Some(self.spec.tool(task)),
                    elapsed + d,
                    changes + change,
                )?;
                self.prefix.pop();
            }
            Ok(())
        }
    }

    let mut walk = Walk {
        spec,
        pickup: pickup_costs_change,
        ceiling,
        prefix: Vec::with_capacity(spec.num_tasks()),
        out: Vec::new(),
    };
    walk.visit(TaskSet::EMPTY, None, 0.0, 0)?;
    Ok(walk.out)
}

/// Number of linear extensions, by dynamic programming over done-sets.
/// Independent of [`enumerate_sequences`].
pub fn count_linear_extensions(spec: &AssemblySpec) -> Option<u128> {
    let n = spec.num_tasks();
    if n > 24 {
        return None;
    }
    let preds: Vec<u64> = spec.tasks().map(|t| spec.predecessors(t).bits()).collect();
    let mut ways = vec![0u128; 1 << n];
    ways[0] = 1;
    for done in 0..(1usize << n) {
        if ways[done] == 0 {
            continue;
        }
        for (i, &p) in preds.iter().enumerate() {
            if done & (1 << i) == 0 && (p as usize) & !done == 0 {
                ways[done | (1 << i)] += ways[done];
            }
        }
    }
    Some(ways[(1 << n) - 1])
}

pub fn distribution_stats(
    records: &[SequenceRecord],
    bin_width: f64,
) -> Result<DistributionStats, OracleError> {
    if records.is_empty() {
        return Err(OracleError::Empty);
    }
    let count = records.len();
    let min = records.iter().map(|r| r.duration).fold(f64::INFINITY, f64::min);
    let max = records
        .iter()
        .map(|r| r.duration)
        .fold(f64::NEG_INFINITY, f64::max);
    let mean = records.iter().map(|r| r.duration).sum::<f64>() / count as f64;

    let start = (min / bin_width).floor() * bin_width;
    let bins = ((max - start) / bin_width).floor() as usize + 1;
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            low: start + i as f64 * bin_width,
            high: start + (i + 1) as f64 * bin_width,
            count: 0,
        })
        .collect();
    for r in records {
        let i = (((r.duration - start) / bin_width).floor() as usize).min(bins - 1);
        histogram[i].count += 1;
    }
    Ok(DistributionStats {
        count,
        min,
        max,
        mean,
        histogram,
    })
}

/// All records at the minimum duration (within 1e-9), lexicographically sorted.
pub fn optimal_sequences(records: &[SequenceRecord]) -> Result<Vec<SequenceRecord>, OracleError> {
    let best = records
        .iter()
        .map(|r| r.duration)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(OracleError::Empty);
    }
    let mut optimal: Vec<SequenceRecord> = records
        .iter()
        .filter(|r| r.duration <= best + 1e-9)
        .cloned()
        .collect();
    optimal.sort_by(|a, b| a.sequence.cmp(&b.sequence));
    Ok(optimal)
}

/// Best duration among sequences the user-preference rules allow. This is the
/// target an agent can reach without collecting the −1 penalty.
pub fn preferred_optimum(
    records: &[SequenceRecord],
    unwanted: &UnwantedSpec,
) -> Result<f64, OracleError> {
    let best = records
        .iter()
        .filter(|r| !unwanted.is_unwanted(&r.sequence))
        .map(|r| r.duration)
        .fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        Ok(best)
    } else {
        Err(OracleError::Empty)
    }
}

/// Stats for one pickup convention plus its agreement with the reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConventionReport {
    pub pickup_costs_change: bool,
    pub stats: DistributionStats,
    pub optimal_count: usize,
    pub optimal_sequences: Vec<String>,
    pub matches_reference: ReferenceMatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReferenceMatch {
    pub count: bool,
    pub min: bool,
    pub max: bool,
    pub mean: bool,
}

impl ReferenceMatch {
    /// Durations are compared at the reference's one-decimal precision.
    pub fn compare(stats: &DistributionStats, reference: &ReferenceStats) -> Self {
        let close = |a: f64, b: f64| (a - b).abs() < 0.05 + 1e-9;
        ReferenceMatch {
            count: stats.count == reference.count,
            min: close(stats.min, reference.min),
            max: close(stats.max, reference.max),
            mean: close(stats.mean, reference.mean),
        }
    }

    pub fn all(&self) -> bool {
        self.count && self.min && self.max && self.mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DurationReport {
    pub reference: ReferenceStats,
    pub conventions: Vec<ConventionReport>,
    /// Human-readable verdict on which convention, if any, reproduces the reference.
    pub discrepancy: String,
}

pub fn convention_report(
    spec: &AssemblySpec,
    pickup_costs_change: bool,
    bin_width: f64,
    ceiling: u64,
    reference: &ReferenceStats,
) -> Result<(ConventionReport, Vec<SequenceRecord>), OracleError> {
    let records = enumerate_sequences(spec, pickup_costs_change, ceiling)?;
    let stats = distribution_stats(&records, bin_width)?;
    let optimal = optimal_sequences(&records)?;
    let report = ConventionReport {
        pickup_costs_change,
        matches_reference: ReferenceMatch::compare(&stats, reference),
        stats,
        optimal_count: optimal.len(),
        optimal_sequences: optimal.iter().map(SequenceRecord::sequence_string).collect(),
    };
    Ok((report, records))
}

pub fn duration_report(
    conventions: Vec<ConventionReport>,
    reference: ReferenceStats,
) -> DurationReport {
    let mut notes = Vec::new();
    for c in &conventions {
        let label = if c.pickup_costs_change {
            "first pickup costs a tool change"
        } else {
            "first pickup is free"
        };
        let m = &c.matches_reference;
        if m.all() {
            notes.push(format!("{label}: matches reference"));
        } else {
            notes.push(format!(
                "{label}: count {} vs {}, min {:.2} vs {:.1}, max {:.2} vs {:.1}, mean {:.3} vs {:.1}",
                c.stats.count,
                reference.count,
                c.stats.min,
                reference.min,
                c.stats.max,
                reference.max,
                c.stats.mean,
                reference.mean
            ));
        }
    }
    let verdict = if conventions.iter().any(|c| c.matches_reference.all()) {
        "reference reproduced"
    } else {
        "reference durations not reproduced under either pickup convention"
    };
    DurationReport {
        reference,
        conventions,
        discrepancy: format!("{verdict}; {}", notes.join("; ")),
    }
}
