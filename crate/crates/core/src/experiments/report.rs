use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::config::ExperimentConfig;
use super::fit::SlopeFit;

pub const SCHEMA_VERSION: u32 = 1;

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Grid coordinate (`n`, `h` or `D`).
    pub value: f64,
    /// The experiment's primary statistic (see `ExperimentReport::metric`).
    pub metric: f64,
    pub stderr: f64,
    pub aux: BTreeMap<String, f64>,
}

/// A named pass/fail judgement with the numbers behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub fit: SlopeFit,
    pub band: Option<(f64, f64)>,
    pub within_band: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    /// Name of the grid coordinate, e.g. `n`.
    pub grid: String,
    /// Name of the primary statistic, e.g. `mse`.
    pub metric: String,
    pub rows: Vec<ReportRow>,
    pub slope: Option<SlopeSummary>,
    pub checks: Vec<Check>,
    pub diagnostics: Vec<String>,
    pub passed: bool,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub wall_time_secs: f64,
}

impl ExperimentReport {
    pub(crate) fn new(experiment: &str, grid: &str, metric: &str, config: &ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.to_string(),
            grid: grid.to_string(),
            metric: metric.to_string(),
            rows: Vec::new(),
            slope: None,
            checks: Vec::new(),
            diagnostics: Vec::new(),
            passed: false,
            config: config.clone(),
            seed: config.seed,
            wall_time_secs: 0.0,
        }
    }

    pub(crate) fn check(&mut self, name: &str, value: f64, limit: String, passed: bool) {
        self.checks.push(Check {
            name: name.to_string(),
            value,
            limit,
            passed,
        });
    }

    pub(crate) fn finish(&mut self) {
        let slope_ok = self
            .slope
            .as_ref()
            .and_then(|s| s.within_band)
            .unwrap_or(true);
        self.passed = slope_ok && self.checks.iter().all(|c| c.passed);
    }

    /// Auxiliary column names, in the order they appear in the CSV.
    pub fn aux_columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = Vec::new();
        for row in &self.rows {
            for k in row.aux.keys() {
                if !cols.contains(k) {
                    cols.push(k.clone());
                }
            }
        }
        cols
    }

    /// Header `value,<metric>,stderr,<aux…>` then one row per grid point.
    /// Missing auxiliary values are left empty. Timing is not included, so
    /// the bytes depend only on the configuration.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let aux = self.aux_columns();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["value".to_string(), self.metric.clone(), "stderr".to_string()];
        header.extend(aux.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                format!("{:?}", row.value),
                format!("{:?}", row.metric),
                format!("{:?}", row.stderr),
            ];
            rec.extend(
                aux.iter()
                    .map(|k| row.aux.get(k).map(|v| format!("{v:?}")).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Writes `<dir>/<experiment>.csv` and `<dir>/<experiment>.json`.
    pub fn write_to(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{}.csv", self.experiment));
        let json = dir.join(format!("{}.json", self.experiment));
        self.write_csv(&csv)?;
        self.write_json(&json)?;
        Ok((csv, json))
    }

    /// Plain-text table for the terminal.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:>10} {:>14} {:>12}\n",
            self.grid, self.metric, "stderr"
        );
        for r in &self.rows {
            s += &format!("{:>10} {:>14.6e} {:>12.3e}\n", fmt_grid(r.value), r.metric, r.stderr);
        }
        if let Some(sl) = &self.slope {
            s += &format!(
                "slope {:.4} ± {:.4}",
                sl.fit.slope, sl.fit.half_width
            );
            if let Some((lo, hi)) = sl.band {
                s += &format!(" (band [{lo:.3}, {hi:.3}])");
            }
            s.push('\n');
        }
        for c in &self.checks {
            s += &format!(
                "{} {} = {:.4e} ({})\n",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                c.value,
                c.limit
            );
        }
        for d in &self.diagnostics {
            s += &format!("  {d}\n");
        }
        s
    }
}

fn fmt_grid(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
