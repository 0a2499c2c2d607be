//! Machine-readable experiment outputs.
//!
//! `summary.csv` holds one row per sweep point and estimator with the core
//! column set (estimate, interval, spread, trajectory statistics) plus
//! experiment-specific extras appended on the right. `runs.csv` holds the
//! per-run estimates. Both are byte-identical across reruns of the same
//! config and seed: wall-clock timings and timestamps live only in
//! `manifest.json`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use crate::config::ExperimentConfig;
use exitlab::estimators::EstimatorReport;

pub const BASE_COLUMNS: [&str; 11] = [
    "sweep",
    "estimator",
    "estimate",
    "ci_low",
    "ci_high",
    "sample_std",
    "relative_error",
    "mean_tau",
    "mean_steps",
    "non_exit_fraction",
    "total_steps",
];

/// Render a float with full round-trip precision (shortest representation).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "NA".to_string())
}

/// Tabular summary with the mandatory column prefix and experiment-specific
/// extra columns.
#[derive(Debug, Clone)]
pub struct SummaryTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl SummaryTable {
    pub fn new(extra_columns: &[&str]) -> Self {
        let mut columns: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
        columns.extend(extra_columns.iter().map(|s| s.to_string()));
        SummaryTable {
            columns,
            rows: Vec::new(),
        }
    }

    /// Append one estimator report as a row; `extras` must match the extra
    /// columns of the table.
    pub fn push_report(
        &mut self,
        sweep: &str,
        estimator: &str,
        report: &EstimatorReport,
        extras: &[String],
    ) {
        let mut row = vec![
            sweep.to_string(),
            estimator.to_string(),
            fmt_f64(report.summary.mean),
            fmt_f64(report.summary.ci_low),
            fmt_f64(report.summary.ci_high),
            fmt_f64(report.summary.sample_std),
            fmt_opt(report.summary.relative_error),
            fmt_f64(report.mean_tau),
            fmt_f64(report.mean_steps),
            fmt_f64(report.non_exit_fraction),
            report.total_steps.to_string(),
        ];
        row.extend_from_slice(extras);
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Append a free-form row (used by the solver check tables); the caller
    /// supplies every column.
    pub fn push_raw(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Look up a cell by sweep key, estimator label and column name.
    pub fn cell(&self, sweep: &str, estimator: &str, column: &str) -> Option<&str> {
        let col = self.columns.iter().position(|c| c == column)?;
        self.rows
            .iter()
            .find(|r| r[0] == sweep && r[1] == estimator)
            .map(|r| r[col].as_str())
    }

    pub fn cell_f64(&self, sweep: &str, estimator: &str, column: &str) -> Option<f64> {
        self.cell(sweep, estimator, column)?.parse().ok()
    }
}

/// Per-run estimates, one row per `(sweep, estimator, run)`.
#[derive(Debug, Clone, Default)]
pub struct RunsTable {
    pub rows: Vec<(String, String, usize, f64)>,
}

impl RunsTable {
    pub fn push_report(&mut self, sweep: &str, estimator: &str, report: &EstimatorReport) {
        for (i, est) in report.per_run_estimates.iter().enumerate() {
            self.rows
                .push((sweep.to_string(), estimator.to_string(), i, *est));
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sweep,estimator,run_index,estimate\n");
        for (sweep, estimator, run, est) in &self.rows {
            let _ = writeln!(out, "{sweep},{estimator},{run},{}", fmt_f64(*est));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingEntry {
    pub label: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticEntry {
    pub label: String,
    pub value: f64,
}

/// Run metadata: config echo, seed, version, free-form notes, wall-clock
/// timings and scalar diagnostics. The only file allowed to differ between
/// byte-identical reruns.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub preset: Option<String>,
    pub version: String,
    pub seed: u64,
    pub workers: Option<usize>,
    pub created_unix_seconds: u64,
    pub total_wall_seconds: f64,
    pub notes: Vec<String>,
    pub timings: Vec<TimingEntry>,
    pub diagnostics: Vec<DiagnosticEntry>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, preset: Option<&str>) -> Self {
        Manifest {
            experiment: config.experiment.as_str().to_string(),
            preset: preset.map(|s| s.to_string()),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            workers: None,
            created_unix_seconds: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            total_wall_seconds: 0.0,
            notes: Vec::new(),
            timings: Vec::new(),
            diagnostics: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn timing(&mut self, label: impl Into<String>, elapsed: Duration) {
        self.timings.push(TimingEntry {
            label: label.into(),
            seconds: elapsed.as_secs_f64(),
        });
    }

    pub fn diagnostic(&mut self, label: impl Into<String>, value: f64) {
        self.diagnostics.push(DiagnosticEntry {
            label: label.into(),
            value,
        });
    }

    pub fn timing_seconds(&self, label: &str) -> Option<f64> {
        self.timings
            .iter()
            .find(|t| t.label == label)
            .map(|t| t.seconds)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization")
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: SummaryTable,
    pub runs: RunsTable,
    pub manifest: Manifest,
    pub plot_svg: String,
    /// Additional named artifacts, e.g. exported solver fields.
    pub extra_files: Vec<(String, String)>,
}

impl ExperimentOutput {
    /// Write `summary.csv`, `runs.csv`, `manifest.json`, `plot.svg` and any
    /// extra artifacts into the directory (created if missing).
    pub fn write_to(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.csv"), self.summary.to_csv())?;
        std::fs::write(dir.join("runs.csv"), self.runs.to_csv())?;
        std::fs::write(dir.join("manifest.json"), self.manifest.to_json())?;
        std::fs::write(dir.join("plot.svg"), &self.plot_svg)?;
        for (name, content) in &self.extra_files {
            std::fs::write(dir.join(name), content)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 10.0, 1.0 / 3.0, 1e-12, 123456.789, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn summary_table_lookup() {
        let mut t = SummaryTable::new(&["extra"]);
        t.push_raw(vec![
            "0".into(),
            "mc".into(),
            "10".into(),
            "9".into(),
            "11".into(),
            "1".into(),
            "0.1".into(),
            "10".into(),
            "10000".into(),
            "0".into(),
            "12345".into(),
            "7".into(),
        ]);
        assert_eq!(t.cell_f64("0", "mc", "estimate"), Some(10.0));
        assert_eq!(t.cell_f64("0", "mc", "extra"), Some(7.0));
        assert_eq!(t.cell("1", "mc", "estimate"), None);
        let csv = t.to_csv();
        assert!(csv.starts_with("sweep,estimator,estimate"));
        assert!(csv.lines().count() == 2);
    }
}
