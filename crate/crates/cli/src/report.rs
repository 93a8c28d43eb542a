use std::collections::BTreeMap;
use std::path::Path;

use biccos_core::{BatchLog, Mode, SearchStats, Status, VerdictReport};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Outcome of one (instance, mode) run. `time_s` is the only
/// non-deterministic field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub instance: String,
    pub mode: Mode,
    /// Mode actually used after resolving `auto`.
    pub resolved_mode: Option<Mode>,
    pub seed: u64,
    /// Absent when the run failed; see `error`.
    pub status: Option<Status>,
    /// Lower bound on the objective; `null` when infinite or unavailable.
    pub bound: Option<f64>,
    pub time_s: f64,
    pub domains_visited: usize,
    pub cuts_generated: usize,
    pub num_unstable: usize,
    pub iterations: usize,
    pub strengthen_attempts: usize,
    pub strengthen_successes: usize,
    pub final_pool_size: usize,
    pub timed_out: bool,
    pub witness: Option<Vec<f64>>,
    pub error: Option<String>,
}

impl RunReport {
    pub fn from_search(
        instance: &str,
        mode: Mode,
        seed: u64,
        verdict: &VerdictReport,
        stats: &SearchStats,
    ) -> Self {
        RunReport {
            instance: instance.to_string(),
            mode,
            resolved_mode: stats.mode,
            seed,
            status: Some(verdict.status),
            bound: verdict.bound.is_finite().then_some(verdict.bound),
            time_s: stats.wall_time,
            domains_visited: stats.domains_visited,
            cuts_generated: stats.cuts_generated,
            num_unstable: stats.num_unstable,
            iterations: stats.iterations,
            strengthen_attempts: stats.strengthen_attempts,
            strengthen_successes: stats.strengthen_successes,
            final_pool_size: stats.final_pool_size,
            timed_out: stats.timed_out,
            witness: verdict.witness.clone(),
            error: None,
        }
    }

    pub fn failed(instance: &str, mode: Mode, seed: u64, error: String) -> Self {
        RunReport {
            instance: instance.to_string(),
            mode,
            resolved_mode: None,
            seed,
            status: None,
            bound: None,
            time_s: 0.0,
            domains_visited: 0,
            cuts_generated: 0,
            num_unstable: 0,
            iterations: 0,
            strengthen_attempts: 0,
            strengthen_successes: 0,
            final_pool_size: 0,
            timed_out: false,
            witness: None,
            error: Some(error),
        }
    }
}

/// Per-mode summary over the rows of a suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: Mode,
    pub instances: usize,
    /// Rows proved UNSAT.
    pub verified_count: usize,
    pub falsified_count: usize,
    pub unknown_count: usize,
    pub error_count: usize,
    /// Mean `time_s` over rows without an error.
    pub mean_time: f64,
    /// Median `domains_visited` over rows without an error.
    pub median_domains: f64,
    pub total_cuts: usize,
}

impl Aggregate {
    pub fn of(mode: Mode, rows: &[&RunReport]) -> Self {
        let ok: Vec<&&RunReport> = rows.iter().filter(|r| r.error.is_none()).collect();
        let count = |s: Status| ok.iter().filter(|r| r.status == Some(s)).count();
        let mean_time = if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|r| r.time_s).sum::<f64>() / ok.len() as f64
        };
        let mut domains: Vec<usize> = ok.iter().map(|r| r.domains_visited).collect();
        domains.sort_unstable();
        Aggregate {
            mode,
            instances: rows.len(),
            verified_count: count(Status::Unsat),
            falsified_count: count(Status::Falsified),
            unknown_count: count(Status::Unknown),
            error_count: rows.len() - ok.len(),
            mean_time,
            median_domains: median(&domains),
            total_cuts: ok.iter().map(|r| r.cuts_generated).sum(),
        }
    }
}

pub fn median(sorted: &[usize]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2] as f64,
        n => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
    }
}

/// Head-to-head counts of `mode` against `baseline` over instances both ran without error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: Mode,
    pub mode: Mode,
    pub paired: usize,
    pub fewer_domains: usize,
    pub equal_domains: usize,
    pub more_domains: usize,
    pub baseline_verified: usize,
    pub mode_verified: usize,
    pub baseline_cuts: usize,
    pub mode_cuts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub modes: Vec<Mode>,
    pub rows: Vec<RunReport>,
    pub aggregates: Vec<Aggregate>,
    pub comparisons: Vec<Comparison>,
}

impl SuiteReport {
    /// Builds the aggregates and the comparisons of every mode against the first.
    pub fn new(modes: Vec<Mode>, rows: Vec<RunReport>) -> Self {
        let aggregates = modes
            .iter()
            .map(|&m| Aggregate::of(m, &rows.iter().filter(|r| r.mode == m).collect::<Vec<_>>()))
            .collect();
        let mut comparisons = Vec::new();
        if let Some((&baseline, rest)) = modes.split_first() {
            let by_instance = |m: Mode| -> BTreeMap<&str, &RunReport> {
                rows.iter()
                    .filter(|r| r.mode == m && r.error.is_none())
                    .map(|r| (r.instance.as_str(), r))
                    .collect()
            };
            let base = by_instance(baseline);
            for &mode in rest {
                let other = by_instance(mode);
                let pairs: Vec<(&RunReport, &RunReport)> = base
                    .iter()
                    .filter_map(|(k, b)| other.get(k).map(|o| (*b, *o)))
                    .collect();
                let verified = |r: &RunReport| r.status == Some(Status::Unsat);
                comparisons.push(Comparison {
                    baseline,
                    mode,
                    paired: pairs.len(),
                    fewer_domains: pairs
                        .iter()
                        .filter(|(b, o)| o.domains_visited < b.domains_visited)
                        .count(),
                    equal_domains: pairs
                        .iter()
                        .filter(|(b, o)| o.domains_visited == b.domains_visited)
                        .count(),
                    more_domains: pairs
                        .iter()
                        .filter(|(b, o)| o.domains_visited > b.domains_visited)
                        .count(),
                    baseline_verified: pairs.iter().filter(|(b, _)| verified(b)).count(),
                    mode_verified: pairs.iter().filter(|(_, o)| verified(o)).count(),
                    baseline_cuts: pairs.iter().map(|(b, _)| b.cuts_generated).sum(),
                    mode_cuts: pairs.iter().map(|(_, o)| o.cuts_generated).sum(),
                });
            }
        }
        SuiteReport {
            modes,
            rows,
            aggregates,
            comparisons,
        }
    }
}

/// Writes pretty JSON to `path`, or to standard output when `path` is `None`.
pub fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Write {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// One JSON object per line.
pub fn write_stream(path: &Path, batches: &[BatchLog]) -> CliResult<()> {
    let mut text = String::new();
    for b in batches {
        text.push_str(&serde_json::to_string(b)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}
