//! Machine-readable report plus CSV tables and PNG plots.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{plot, sweep_csv, GridErrorMap, Metrics, SweepRow};
use crate::error::{Error, Result};
use crate::trainer::TrainHistory;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One trained run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    /// File-name-safe identifier, e.g. `abrnet_seed0`.
    pub label: String,
    pub method: String,
    pub seed: u64,
    pub target: Metrics,
    pub source_test: Option<Metrics>,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub schema_version: u32,
    pub runs: Vec<RunSummary>,
    pub grids: Vec<(String, GridErrorMap)>,
    pub sweep: Option<Vec<SweepRow>>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            runs: Vec::new(),
            grids: Vec::new(),
            sweep: None,
        }
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: self.schema_version,
                expected: REPORT_SCHEMA_VERSION,
            });
        }
        let safe = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c));
        for name in self.runs.iter().map(|r| &r.label).chain(self.grids.iter().map(|g| &g.0)) {
            if !safe(name) {
                return Err(Error::parse(path, format!("label {name:?} is not file-name safe")));
            }
        }
        for (name, g) in &self.grids {
            if g.cells.len() != g.columns * g.rows {
                return Err(Error::parse(path, format!("grid {name} has {} cells", g.cells.len())));
            }
        }
        for r in &self.runs {
            let m = [r.target.mse, r.target.mae];
            if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::parse(path, format!("run {} has invalid metrics", r.label)));
            }
        }
        Ok(())
    }
}

impl Default for EvalReport {
    fn default() -> Self {
        Self::new()
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, per-run history CSVs and loss plots, grid CSVs and
/// heatmaps, and the sweep table and plot. Returns every written path.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    report.validate(dir)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let json = serde_json::to_string_pretty(report).map_err(|e| Error::parse(dir, e.to_string()))?;
    let path = dir.join("report.json");
    write(&path, &json)?;
    written.push(path);

    let mut table = String::from("label,method,seed,target_mse,target_mae,source_test_mse,source_test_mae\n");
    for run in &report.runs {
        let (sm, sa) = run
            .source_test
            .map(|m| (m.mse.to_string(), m.mae.to_string()))
            .unwrap_or_default();
        table.push_str(&format!(
            "{},{},{},{},{},{sm},{sa}\n",
            run.label, run.method, run.seed, run.target.mse, run.target.mae
        ));
        let path = dir.join(format!("history_{}.csv", run.label));
        write(&path, &run.history.to_csv())?;
        written.push(path);
        let path = dir.join(format!("loss_{}.png", run.label));
        plot::plot_loss_curves(&run.history, &path)?;
        written.push(path);
    }
    let path = dir.join("metrics.csv");
    write(&path, &table)?;
    written.push(path);

    for (name, map) in &report.grids {
        let path = dir.join(format!("grid_{name}.csv"));
        write(&path, &map.to_csv())?;
        written.push(path);
        let path = dir.join(format!("grid_{name}.png"));
        plot::plot_grid_map(map, &path)?;
        written.push(path);
    }
    if let Some(rows) = &report.sweep {
        let path = dir.join("lambda_sweep.csv");
        write(&path, &sweep_csv(rows))?;
        written.push(path);
        let path = dir.join("lambda_sweep.png");
        plot::plot_lambda_sweep(rows, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Reads and validates a `report.json`.
pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: EvalReport = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    report.validate(path)?;
    Ok(report)
}
