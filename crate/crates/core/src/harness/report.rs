use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::run::{fmt_sig9, RunSummary};
use crate::harness::sweep::DisturbancePolygon;

pub const SUMMARY_FILE: &str = "summary.json";
pub const POLYGON_FILE: &str = "dp.json";

/// Contents of `summary.json` written next to a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub scenario: String,
    pub seed: u64,
    pub controller: String,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonEntry {
    pub mode: String,
    pub average_ns: f64,
    pub area_ns2: f64,
    pub polygon: DisturbancePolygon,
}

/// Contents of `dp.json` written by a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonFile {
    pub scenario: String,
    pub polygons: Vec<PolygonEntry>,
}

/// One run as seen by the comparison: its scenario key and named metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub scenario: String,
    pub metrics: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn new(label: impl Into<String>, scenario: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            scenario: scenario.into(),
            metrics: BTreeMap::new(),
        }
    }

    /// CP and CP-offset RMS in centimetres.
    pub fn add_summary(&mut self, s: &RunSummary) {
        self.metrics.insert("xi_rms_x_cm".into(), 100.0 * s.cp_rms_x_m);
        self.metrics.insert("xi_rms_y_cm".into(), 100.0 * s.cp_rms_y_m);
        self.metrics.insert("b_rms_x_cm".into(), 100.0 * s.cp_offset_rms_x_m);
        self.metrics.insert("b_rms_y_cm".into(), 100.0 * s.cp_offset_rms_y_m);
    }

    pub fn add_polygon(&mut self, e: &PolygonEntry) {
        self.metrics.insert(format!("dp_average_ns.{}", e.mode), e.average_ns);
        self.metrics.insert(format!("dp_area_ns2.{}", e.mode), e.area_ns2);
    }

    /// Reads `summary.json` and, when present, `dp.json` from a run directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let label = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let summary_path = dir.join(SUMMARY_FILE);
        let dp_path = dir.join(POLYGON_FILE);
        let mut scenario: Option<String> = None;
        let mut rec = RunRecord::new(label, "");
        if summary_path.exists() {
            let f: RunFile = read_json(&summary_path)?;
            rec.add_summary(&f.summary);
            scenario = Some(f.scenario);
        }
        if dp_path.exists() {
            let f: PolygonFile = read_json(&dp_path)?;
            if let Some(s) = &scenario {
                if *s != f.scenario {
                    return Err(Error::Report(format!(
                        "{}: summary scenario `{s}` differs from sweep scenario `{}`",
                        dir.display(),
                        f.scenario
                    )));
                }
            }
            for e in &f.polygons {
                rec.add_polygon(e);
            }
            scenario = Some(f.scenario);
        }
        rec.scenario = scenario.ok_or_else(|| {
            Error::Report(format!(
                "{}: neither {SUMMARY_FILE} nor {POLYGON_FILE} found",
                dir.display()
            ))
        })?;
        Ok(rec)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub metric: String,
    pub base: String,
    pub other: String,
    pub base_value: f64,
    pub other_value: f64,
    /// `100 (other - base) / base`; zero for equal values, absent when the
    /// base is zero and the other is not.
    pub delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub scenario: String,
    pub runs: Vec<RunRecord>,
    pub deltas: Vec<Delta>,
}

pub fn percent_delta(base: f64, other: f64) -> Option<f64> {
    if base == other {
        Some(0.0)
    } else if base == 0.0 {
        None
    } else {
        Some(100.0 * (other - base) / base)
    }
}

/// Pairwise percentage deltas over the metrics shared by all runs.
pub fn compare_report(runs: &[RunRecord]) -> Result<CompareReport> {
    if runs.len() < 2 {
        return Err(Error::Report("comparison needs at least two runs".into()));
    }
    let scenario = runs[0].scenario.clone();
    if let Some(r) = runs.iter().find(|r| r.scenario != scenario) {
        return Err(Error::Report(format!(
            "mismatched scenario keys: `{}` has `{}`, `{}` has `{}`",
            runs[0].label, scenario, r.label, r.scenario
        )));
    }
    let keys: Vec<&String> = runs[0].metrics.keys().collect();
    if let Some(r) = runs.iter().find(|r| r.metrics.keys().collect::<Vec<_>>() != keys) {
        return Err(Error::Report(format!(
            "mismatched metric sets between `{}` and `{}`",
            runs[0].label, r.label
        )));
    }
    let mut deltas = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            for k in &keys {
                let (a, b) = (runs[i].metrics[*k], runs[j].metrics[*k]);
                deltas.push(Delta {
                    metric: (*k).clone(),
                    base: runs[i].label.clone(),
                    other: runs[j].label.clone(),
                    base_value: a,
                    other_value: b,
                    delta_pct: percent_delta(a, b),
                });
            }
        }
    }
    Ok(CompareReport {
        scenario,
        runs: runs.to_vec(),
        deltas,
    })
}

impl CompareReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "metric,base,other,base_value,other_value,delta_pct")?;
        for d in &self.deltas {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                d.metric,
                d.base,
                d.other,
                fmt_sig9(d.base_value),
                fmt_sig9(d.other_value),
                d.delta_pct.map(fmt_sig9).unwrap_or_default()
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: &str, scenario: &str, v: f64) -> RunRecord {
        let mut r = RunRecord::new(label, scenario);
        r.metrics.insert("xi_rms_x_cm".into(), v);
        r.metrics.insert("xi_rms_y_cm".into(), 2.0 * v);
        r
    }

    #[test]
    fn identical_runs_give_zero_deltas() {
        let rep = compare_report(&[record("a", "s", 0.4), record("b", "s", 0.4)]).unwrap();
        assert_eq!(rep.deltas.len(), 2);
        assert!(rep.deltas.iter().all(|d| d.delta_pct == Some(0.0)));
    }

    #[test]
    fn deltas_recompute_from_values() {
        let rep = compare_report(&[record("a", "s", 0.4), record("b", "s", 0.5), record("c", "s", 0.1)]).unwrap();
        assert_eq!(rep.deltas.len(), 6);
        for d in &rep.deltas {
            let expect = 100.0 * (d.other_value - d.base_value) / d.base_value;
            assert!((d.delta_pct.unwrap() - expect).abs() <= 1e-9);
        }
    }

    #[test]
    fn mismatched_scenarios_are_rejected() {
        let err = compare_report(&[record("a", "s", 0.4), record("b", "t", 0.4)]).unwrap_err();
        assert!(matches!(err, Error::Report(m) if m.contains("mismatched scenario")));
        assert!(compare_report(&[record("a", "s", 0.4)]).is_err());
    }

    #[test]
    fn zero_base_has_no_percentage() {
        assert_eq!(percent_delta(0.0, 0.0), Some(0.0));
        assert_eq!(percent_delta(0.0, 1.0), None);
        assert_eq!(percent_delta(2.0, 3.0), Some(50.0));
    }
}
