//! Benchmark report files: one JSON report plus CSV tables (per-bin
//! calibration, per-stratum accuracy, per-k curves) for external plotting.
//!
//! Reports carry no wall-clock timestamp unless one is injected, so runs
//! with scripted backends and fixed seeds are byte-for-byte reproducible.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CalibrationReport, SetMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopKPoint {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumStats {
    pub accuracy: f64,
    pub count: usize,
}

/// An item the pipeline could not evaluate; recorded, never fatal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub id: String,
    pub final_answer: String,
    pub gold: String,
    pub correct: bool,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqReport {
    pub dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requested_n: Option<usize>,
    pub seed: u64,
    pub total_items: usize,
    pub evaluated: usize,
    pub errored: usize,
    pub overall_accuracy: f64,
    pub top_k: Vec<TopKPoint>,
    pub strata: BTreeMap<String, BTreeMap<String, StratumStats>>,
    pub calibration: CalibrationReport,
    pub records: Vec<RecordSummary>,
    pub errors: Vec<ItemFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
}

impl McqReport {
    /// Writes `report.json`, `calibration.csv`, `topk.csv`, `strata.csv`.
    pub fn write_files(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(dir.join("report.json"), self)?;

        let mut calibration = csv::Writer::from_path(dir.join("calibration.csv"))?;
        calibration.write_record(["bin_lo", "bin_hi", "mean_confidence", "accuracy", "count"])?;
        for bin in &self.calibration.bins {
            calibration.write_record([
                format_float(bin.lo),
                format_float(bin.hi),
                format_float(bin.mean_confidence),
                format_float(bin.accuracy),
                bin.count.to_string(),
            ])?;
        }
        calibration.flush()?;

        write_topk_csv(dir.join("topk.csv"), &self.top_k)?;

        let mut strata = csv::Writer::from_path(dir.join("strata.csv"))?;
        strata.write_record(["key", "value", "accuracy", "count"])?;
        for (key, groups) in &self.strata {
            for (value, stats) in groups {
                strata.write_record([
                    key.clone(),
                    value.clone(),
                    format_float(stats.accuracy),
                    stats.count.to_string(),
                ])?;
            }
        }
        strata.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub id: String,
    #[serde(flatten)]
    pub metrics: SetMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdxReport {
    pub dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requested_n: Option<usize>,
    pub seed: u64,
    pub total_cases: usize,
    pub evaluated: usize,
    pub errored: usize,
    pub judge: String,
    pub judge_fallbacks: usize,
    pub headline_k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub top_k: Vec<TopKPoint>,
    pub per_case: Vec<CaseSummary>,
    pub errors: Vec<ItemFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
}

impl DdxReport {
    /// Writes `report.json`, `topk.csv`, `cases.csv`.
    pub fn write_files(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(dir.join("report.json"), self)?;
        write_topk_csv(dir.join("topk.csv"), &self.top_k)?;

        let mut cases = csv::Writer::from_path(dir.join("cases.csv"))?;
        cases.write_record(["id", "precision", "recall", "f1"])?;
        for case in &self.per_case {
            cases.write_record([
                case.id.clone(),
                format_float(case.metrics.precision),
                format_float(case.metrics.recall),
                format_float(case.metrics.f1),
            ])?;
        }
        cases.flush()?;
        Ok(())
    }
}

fn write_json<T: Serialize>(path: std::path::PathBuf, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
}

fn write_topk_csv(path: std::path::PathBuf, points: &[TopKPoint]) -> io::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["k", "accuracy"])?;
    for point in points {
        writer.write_record([point.k.to_string(), format_float(point.accuracy)])?;
    }
    writer.flush()?;
    Ok(())
}

/// Shortest-roundtrip float formatting, same as the JSON report.
fn format_float(value: f64) -> String {
    let mut buffer = ryu_format(value);
    if buffer.ends_with(".0") {
        buffer.truncate(buffer.len() - 2);
    }
    buffer
}

fn ryu_format(value: f64) -> String {
    // serde_json's float formatting, reused so CSV and JSON agree.
    serde_json::to_string(&value).unwrap_or_else(|_| value.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::CalibrationBin;

    fn sample_report() -> McqReport {
        McqReport {
            dataset: "fixture.jsonl".to_string(),
            requested_n: Some(2),
            seed: 5,
            total_items: 2,
            evaluated: 2,
            errored: 0,
            overall_accuracy: 0.5,
            top_k: vec![
                TopKPoint { k: 1, accuracy: 0.5 },
                TopKPoint { k: 2, accuracy: 1.0 },
            ],
            strata: BTreeMap::from([(
                "task_type".to_string(),
                BTreeMap::from([(
                    "treatment".to_string(),
                    StratumStats {
                        accuracy: 0.5,
                        count: 2,
                    },
                )]),
            )]),
            calibration: CalibrationReport {
                bins: vec![CalibrationBin {
                    lo: 0.9,
                    hi: 1.0,
                    mean_confidence: 0.95,
                    accuracy: 0.5,
                    count: 2,
                }],
                ece: 0.45,
            },
            records: vec![],
            errors: vec![],
            generated_at: None,
        }
    }

    #[test]
    fn mcq_report_files_are_written_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_report();
        report.write_files(dir.path()).unwrap();

        let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert!(json.contains("\"overall_accuracy\": 0.5"));
        assert!(!json.contains("generated_at"));

        let first = std::fs::read(dir.path().join("report.json")).unwrap();
        report.write_files(dir.path()).unwrap();
        let second = std::fs::read(dir.path().join("report.json")).unwrap();
        assert_eq!(first, second);

        let topk = std::fs::read_to_string(dir.path().join("topk.csv")).unwrap();
        assert!(topk.contains("k,accuracy"));
        assert!(topk.contains("1,0.5"));
        assert!(topk.contains("2,1"));

        let strata = std::fs::read_to_string(dir.path().join("strata.csv")).unwrap();
        assert!(strata.contains("task_type,treatment,0.5,2"));

        let calibration = std::fs::read_to_string(dir.path().join("calibration.csv")).unwrap();
        assert!(calibration.contains("0.9,1,0.95,0.5,2"));
    }

    #[test]
    fn report_round_trips_through_json() {
        let report = sample_report();
        let text = serde_json::to_string(&report).unwrap();
        let back: McqReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }
}
