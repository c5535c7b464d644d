use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::controller::ControllerKind;
use crate::error::{Error, Result};
use crate::harness::config::ScenarioConfig;
use crate::harness::report::{CompareReport, PolygonEntry, PolygonFile, RunFile, POLYGON_FILE, SUMMARY_FILE};
use crate::harness::run::{write_csv, ScenarioResult};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Report(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn controller_label(cfg: &ScenarioConfig) -> String {
    match cfg.controller.kind {
        ControllerKind::CpMpc => format!("cp_mpc/{}", cfg.controller.mode.label()),
        ControllerKind::QpBaseline => "qp_baseline".to_string(),
    }
}

/// Writes the trajectory CSV and `summary.json`; returns their paths.
pub fn write_run(dir: &Path, cfg: &ScenarioConfig, result: &ScenarioResult) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let csv = dir.join(&cfg.output.csv);
    write_csv(&result.records, create(&csv)?)?;
    let summary = dir.join(SUMMARY_FILE);
    write_json(
        &summary,
        &RunFile {
            scenario: cfg.scenario.clone(),
            seed: cfg.seed,
            controller: controller_label(cfg),
            summary: result.summary.clone(),
        },
    )?;
    Ok((csv, summary))
}

pub fn write_polygons(dir: &Path, scenario: &str, polygons: Vec<PolygonEntry>) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(POLYGON_FILE);
    write_json(
        &path,
        &PolygonFile {
            scenario: scenario.to_string(),
            polygons,
        },
    )?;
    Ok(path)
}

pub fn write_compare(dir: &Path, report: &CompareReport) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let csv = dir.join("compare.csv");
    report.write_csv(create(&csv)?)?;
    let json = dir.join("compare.json");
    write_json(&json, report)?;
    Ok((csv, json))
}
