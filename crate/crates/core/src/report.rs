//! Pipeline report types and their file formats.
//!
//! `report.json` holds everything that is a function of the configuration
//! and seed and nothing else, so two runs can be compared byte for byte.
//! Wall-clock data lives in `timings.json` and in the `millis` column of
//! `regions.csv`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::checker::MuSearchOutcome;
use crate::config::PipelineConfig;
use crate::perception::NeuronManifest;
use crate::training::TrainingReport;
use crate::verifier::{AggregateStatus, RegionReport, VerdictStatus};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerSummary {
    /// `train`, `weights` or `constant`.
    pub source: String,
    /// SHA-256 of the controller's weight file text.
    pub sha256: String,
    pub widths: Vec<usize>,
    pub relu_count: usize,
    pub training: Option<TrainingReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbstractionSummary {
    pub cells: usize,
    pub traversable: usize,
    pub eta: f64,
    pub sink_is_unsafe: bool,
    pub initial_cells: Vec<usize>,
    /// Unsafe cells for an invariant, target cells for a reach spec.
    pub goal_cells: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RegionSummary {
    pub total: usize,
    pub proved: usize,
    pub violated: usize,
    pub unknown: usize,
}

impl RegionSummary {
    pub fn of(regions: &[RegionReport]) -> Self {
        let count = |s| regions.iter().filter(|r| r.verdict.status == s).count();
        Self {
            total: regions.len(),
            proved: count(VerdictStatus::Proved),
            violated: count(VerdictStatus::Violated),
            unknown: count(VerdictStatus::Unknown),
        }
    }

    pub fn proved_fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.proved as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub trajectories: usize,
    pub steps: usize,
    /// Initial working points rejected because no state maps to them.
    pub rejected_starts: usize,
    pub completed: usize,
    pub geometry_terminated: usize,
    pub non_finite: usize,
    /// Trajectories that met the goal box: the unsafe box for an invariant,
    /// the target box for a reach spec.
    pub goal_hits: usize,
    /// Trajectories that left the partitioned working box.
    pub left_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub status: AggregateStatus,
    pub exit_code: i32,
    pub mu_max: Option<f64>,
    pub perception: NeuronManifest,
    pub controller: ControllerSummary,
    pub abstraction: AbstractionSummary,
    pub mu_search: MuSearchOutcome,
    pub region_summary: Option<RegionSummary>,
    pub regions: Vec<RegionReport>,
    pub monte_carlo: Option<MonteCarloReport>,
    pub notes: Vec<String>,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Timings {
    pub stages: Vec<StageTiming>,
    pub total_millis: f64,
    pub controller_from_cache: bool,
    /// Region id and verification time, in report order.
    pub regions: Vec<(usize, f64)>,
    pub mu_steps: Vec<(f64, f64)>,
}

impl Timings {
    pub fn stage(&self, name: &str) -> Option<f64> {
        self.stages.iter().find(|s| s.stage == name).map(|s| s.millis)
    }
}

#[derive(Serialize)]
struct RegionRow<'a> {
    region_id: usize,
    center: String,
    verdict: &'a str,
    splits: usize,
    millis: String,
}

fn status_str(s: VerdictStatus) -> &'static str {
    match s {
        VerdictStatus::Proved => "PROVED",
        VerdictStatus::Violated => "VIOLATED",
        VerdictStatus::Unknown => "UNKNOWN",
    }
}

/// Per-region CSV: `region_id,center,verdict,splits,millis`, center
/// coordinates joined by `;`.
pub fn write_regions_csv<W: Write>(out: W, regions: &[RegionReport]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["region_id", "center", "verdict", "splits", "millis"])?;
    for r in regions {
        let center: Vec<String> = r.center.iter().map(|c| c.to_string()).collect();
        w.serialize(RegionRow {
            region_id: r.region_id,
            center: center.join(";"),
            verdict: status_str(r.verdict.status),
            splits: r.verdict.splits,
            millis: format!("{:.3}", r.verdict.millis),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// One row per checked `μ`: `mu,holds,states,transitions,monotone`.
pub fn write_mu_csv<W: Write>(out: W, outcome: &MuSearchOutcome) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mu", "holds", "states", "transitions", "monotone_with_previous"])?;
    for s in &outcome.steps {
        let mono = s.monotone_with_previous.map_or(String::new(), |m| m.to_string());
        w.write_record([
            s.mu.to_string(),
            s.result.holds().to_string(),
            s.states.to_string(),
            s.transitions.to_string(),
            mono,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Short human-readable summary.
pub fn summary_text(report: &PipelineReport) -> String {
    let mut s = String::new();
    let mut line = |t: String| {
        s.push_str(&t);
        s.push('\n');
    };
    line(format!("status: {}", report.status.as_str()));
    line(format!(
        "mu_max: {}",
        report.mu_max.map_or("none".to_string(), |m| m.to_string())
    ));
    for step in &report.mu_search.steps {
        line(format!(
            "  mu {:>5}: {} ({} states, {} transitions)",
            step.mu,
            if step.result.holds() { "holds" } else { "fails" },
            step.states,
            step.transitions
        ));
    }
    line(format!(
        "pass set is a prefix: {}; transitions monotone in mu: {}",
        report.mu_search.pass_set_is_prefix, report.mu_search.monotone
    ));
    if let Some(r) = &report.region_summary {
        line(format!(
            "regions: {} total, {} proved, {} violated, {} unknown",
            r.total, r.proved, r.violated, r.unknown
        ));
    }
    if let Some(mc) = &report.monte_carlo {
        line(format!(
            "monte carlo: {} trajectories of {} steps, {} goal hits, {} stopped by geometry",
            mc.trajectories, mc.steps, mc.goal_hits, mc.geometry_terminated
        ));
    }
    for n in &report.notes {
        line(format!("note: {n}"));
    }
    s
}

/// Writes `report.json`, `summary.txt`, `regions.csv`, `mu_search.csv` and
/// `timings.json` into `dir`.
pub fn emit_report(dir: &Path, report: &PipelineReport, timings: &Timings) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    std::fs::write(dir.join("summary.txt"), summary_text(report))?;

    let mut regions = report.regions.clone();
    for (r, (id, ms)) in regions.iter_mut().zip(&timings.regions) {
        debug_assert_eq!(r.region_id, *id);
        r.verdict.millis = *ms;
    }
    let f = std::fs::File::create(dir.join("regions.csv"))?;
    write_regions_csv(std::io::BufWriter::new(f), &regions).map_err(std::io::Error::other)?;
    let f = std::fs::File::create(dir.join("mu_search.csv"))?;
    write_mu_csv(std::io::BufWriter::new(f), &report.mu_search).map_err(std::io::Error::other)?;

    let mut t = serde_json::to_string_pretty(timings).map_err(std::io::Error::other)?;
    t.push('\n');
    std::fs::write(dir.join("timings.json"), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::Verdict;

    fn region(id: usize, status: VerdictStatus, millis: f64) -> RegionReport {
        RegionReport {
            region_id: id,
            center: vec![0.5, 1.5, 2.5],
            verdict: Verdict {
                status,
                witness: None,
                witness_input: None,
                witness_excess: None,
                bound_gap: None,
                splits: 3,
                millis,
            },
        }
    }

    #[test]
    fn empty_region_list_is_header_only() {
        let mut buf = Vec::new();
        write_regions_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "region_id,center,verdict,splits,millis\n");
    }

    #[test]
    fn one_row_per_region() {
        let regions: Vec<_> = (0..100).map(|i| region(i, VerdictStatus::Proved, 1.0)).collect();
        let mut buf = Vec::new();
        write_regions_csv(&mut buf, &regions).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert_eq!(text.lines().nth(1).unwrap(), "0,0.5;1.5;2.5,PROVED,3,1.000");
    }

    #[test]
    fn summary_counts() {
        let r = [
            region(0, VerdictStatus::Proved, 0.0),
            region(1, VerdictStatus::Unknown, 0.0),
            region(2, VerdictStatus::Violated, 0.0),
        ];
        let s = RegionSummary::of(&r);
        assert_eq!((s.total, s.proved, s.violated, s.unknown), (3, 1, 1, 1));
        assert!((s.proved_fraction() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(RegionSummary::of(&[]).proved_fraction(), 1.0);
    }
}
