//! Run metrics and per-step diagnostics.
//!
//! `metrics.csv` contains only deterministic quantities so that re-running a
//! command with the same configuration and seed reproduces it byte for byte.
//! Wall-clock timings live in the JSON-lines diagnostics and the report.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub episode: usize,
    /// "filtered" or "unfiltered".
    pub arm: String,
    pub steps: usize,
    pub violations: usize,
    pub filtered_steps: usize,
    pub filter_rate: f64,
    pub infeasibilities: usize,
    pub infeasibility_rate: f64,
    /// Negative mean distance to the goal over the episode.
    pub return_proxy: f64,
    pub mean_solver_iterations: f64,
    pub terminal_generation: u32,
    pub terminal_radius: f64,
}

pub const METRICS_HEADER: &str = "seed,episode,arm,steps,violations,filtered_steps,filter_rate,\
infeasibilities,infeasibility_rate,return_proxy,mean_solver_iterations,terminal_generation,\
terminal_radius";

impl EpisodeMetrics {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.episode,
            self.arm,
            self.steps,
            self.violations,
            self.filtered_steps,
            self.filter_rate,
            self.infeasibilities,
            self.infeasibility_rate,
            self.return_proxy,
            self.mean_solver_iterations,
            self.terminal_generation,
            self.terminal_radius
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(CoreError::Serialization(format!(
                "metrics row has {} fields, expected 13",
                f.len()
            )));
        }
        let parse_err = |what: &str| CoreError::Serialization(format!("bad {what} in metrics row"));
        Ok(Self {
            seed: f[0].parse().map_err(|_| parse_err("seed"))?,
            episode: f[1].parse().map_err(|_| parse_err("episode"))?,
            arm: f[2].to_string(),
            steps: f[3].parse().map_err(|_| parse_err("steps"))?,
            violations: f[4].parse().map_err(|_| parse_err("violations"))?,
            filtered_steps: f[5].parse().map_err(|_| parse_err("filtered_steps"))?,
            filter_rate: f[6].parse().map_err(|_| parse_err("filter_rate"))?,
            infeasibilities: f[7].parse().map_err(|_| parse_err("infeasibilities"))?,
            infeasibility_rate: f[8].parse().map_err(|_| parse_err("infeasibility_rate"))?,
            return_proxy: f[9].parse().map_err(|_| parse_err("return_proxy"))?,
            mean_solver_iterations: f[10]
                .parse()
                .map_err(|_| parse_err("mean_solver_iterations"))?,
            terminal_generation: f[11].parse().map_err(|_| parse_err("terminal_generation"))?,
            terminal_radius: f[12].parse().map_err(|_| parse_err("terminal_radius"))?,
        })
    }
}

/// Write the metrics file in a canonical order (seed, episode, arm).
pub fn write_metrics_csv(path: &Path, rows: &[EpisodeMetrics]) -> Result<()> {
    let mut sorted: Vec<&EpisodeMetrics> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.seed, a.episode, &a.arm)
            .partial_cmp(&(b.seed, b.episode, &b.arm))
            .unwrap()
    });
    let mut out = String::with_capacity(rows.len() * 96 + 128);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in sorted {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != METRICS_HEADER {
                return Err(CoreError::Serialization("unexpected metrics header".into()));
            }
            continue;
        }
        if !line.is_empty() {
            rows.push(EpisodeMetrics::parse_csv_row(line)?);
        }
    }
    Ok(rows)
}

/// One control step of the filtered arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub episode: usize,
    pub t: usize,
    pub feasible: bool,
    pub status: String,
    pub objective: f64,
    pub slack_state: f64,
    pub slack_certainty: f64,
    pub slack_terminal: f64,
    pub solver_iterations: usize,
    pub wall_time_ms: f64,
    /// ‖applied − requested‖₂.
    pub applied_delta: f64,
    pub source: String,
}

pub fn append_diagnostics_jsonl(path: &Path, lines: &[StepDiagnostics]) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut buf = String::new();
    for l in lines {
        buf.push_str(
            &serde_json::to_string(l).map_err(|e| CoreError::Serialization(e.to_string()))?,
        );
        buf.push('\n');
    }
    file.write_all(buf.as_bytes())
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn read_diagnostics_jsonl(path: &Path) -> Result<Vec<StepDiagnostics>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CoreError::Serialization(e.to_string())))
        .collect()
}

/// Cross-seed aggregation in the style of the safe-exploration summary
/// table: per-seed averages first, then min/max across seeds.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunReport {
    pub seeds: usize,
    pub total_steps: usize,
    pub total_infeasibilities: usize,
    pub infeasibility_rate: f64,
    pub min_filter_rate: f64,
    pub max_filter_rate: f64,
    pub min_violations: usize,
    pub max_violations: usize,
    pub mean_solve_time_ms: f64,
    pub min_solve_time_ms: f64,
    pub max_solve_time_ms: f64,
    pub filtered_total_violations: usize,
    pub unfiltered_total_violations: usize,
}

pub fn aggregate_report(
    metrics: &[EpisodeMetrics],
    diagnostics: &[StepDiagnostics],
) -> Result<RunReport> {
    let filtered: Vec<&EpisodeMetrics> =
        metrics.iter().filter(|m| m.arm == "filtered").collect();
    if filtered.is_empty() {
        return Err(CoreError::InvalidInput("no filtered-arm metrics".into()));
    }
    let mut seeds: Vec<u64> = filtered.iter().map(|m| m.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    let mut min_fr = f64::INFINITY;
    let mut max_fr = f64::NEG_INFINITY;
    let mut min_viol = usize::MAX;
    let mut max_viol = 0usize;
    for &seed in &seeds {
        let rows: Vec<&&EpisodeMetrics> =
            filtered.iter().filter(|m| m.seed == seed).collect();
        let fr = rows.iter().map(|m| m.filter_rate).sum::<f64>() / rows.len() as f64;
        let viol: usize = rows.iter().map(|m| m.violations).sum();
        min_fr = min_fr.min(fr);
        max_fr = max_fr.max(fr);
        min_viol = min_viol.min(viol);
        max_viol = max_viol.max(viol);
    }
    let total_steps: usize = filtered.iter().map(|m| m.steps).sum();
    let total_inf: usize = filtered.iter().map(|m| m.infeasibilities).sum();
    let filtered_viol: usize = filtered.iter().map(|m| m.violations).sum();
    let unfiltered_viol: usize = metrics
        .iter()
        .filter(|m| m.arm == "unfiltered")
        .map(|m| m.violations)
        .sum();

    let (mut mean_t, mut min_t, mut max_t) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    if diagnostics.is_empty() {
        min_t = 0.0;
        max_t = 0.0;
    } else {
        for d in diagnostics {
            mean_t += d.wall_time_ms;
            min_t = min_t.min(d.wall_time_ms);
            max_t = max_t.max(d.wall_time_ms);
        }
        mean_t /= diagnostics.len() as f64;
    }

    Ok(RunReport {
        seeds: seeds.len(),
        total_steps,
        total_infeasibilities: total_inf,
        infeasibility_rate: if total_steps > 0 {
            total_inf as f64 / total_steps as f64
        } else {
            0.0
        },
        min_filter_rate: min_fr,
        max_filter_rate: max_fr,
        min_violations: min_viol,
        max_violations: max_viol,
        mean_solve_time_ms: mean_t,
        min_solve_time_ms: min_t,
        max_solve_time_ms: max_t,
        filtered_total_violations: filtered_viol,
        unfiltered_total_violations: unfiltered_viol,
    })
}

impl RunReport {
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nseeds,{}\ntotal_steps,{}\ntotal_infeasibilities,{}\n\
infeasibility_rate,{}\nmin_filter_rate,{}\nmax_filter_rate,{}\nmin_violations,{}\n\
max_violations,{}\nmean_solve_time_ms,{}\nmin_solve_time_ms,{}\nmax_solve_time_ms,{}\n\
filtered_total_violations,{}\nunfiltered_total_violations,{}\n",
            self.seeds,
            self.total_steps,
            self.total_infeasibilities,
            self.infeasibility_rate,
            self.min_filter_rate,
            self.max_filter_rate,
            self.min_violations,
            self.max_violations,
            self.mean_solve_time_ms,
            self.min_solve_time_ms,
            self.max_solve_time_ms,
            self.filtered_total_violations,
            self.unfiltered_total_violations
        )
    }
}
