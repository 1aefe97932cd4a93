use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub variant: String,
    pub task: usize,
    /// Perturbation kind, or `none`.
    pub perturbation: String,
    pub magnitude: f64,
    pub seed: u64,
    pub episodes: usize,
    pub success_rate: f64,
    /// Mean first tick at which the task was solved, over successful
    /// episodes only.
    pub mean_steps_to_success: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const REPORT_HEADER: &str = "variant,task,perturbation,magnitude,seed,episodes,success_rate,mean_steps_to_success";

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let steps = r.mean_steps_to_success.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.variant, r.task, r.perturbation, r.magnitude, r.seed, r.episodes, r.success_rate, steps
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::InvalidArgument("report CSV header mismatch".into()));
        }
        let bad = |line: &str| Error::InvalidArgument(format!("malformed report row {line:?}"));
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(line));
            }
            rows.push(EvalRow {
                variant: f[0].to_string(),
                task: f[1].parse().map_err(|_| bad(line))?,
                perturbation: f[2].to_string(),
                magnitude: f[3].parse().map_err(|_| bad(line))?,
                seed: f[4].parse().map_err(|_| bad(line))?,
                episodes: f[5].parse().map_err(|_| bad(line))?,
                success_rate: f[6].parse().map_err(|_| bad(line))?,
                mean_steps_to_success: if f[7].is_empty() {
                    None
                } else {
                    Some(f[7].parse().map_err(|_| bad(line))?)
                },
            });
        }
        Ok(EvalReport { rows })
    }
}

pub fn emit_report(report: &EvalReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvalReport {
        EvalReport {
            rows: vec![
                EvalRow {
                    variant: "full".into(),
                    task: 0,
                    perturbation: "none".into(),
                    magnitude: 0.0,
                    seed: 7,
                    episodes: 3,
                    success_rate: 2.0 / 3.0,
                    mean_steps_to_success: Some(41.5),
                },
                EvalRow {
                    variant: "horizon_M=2".into(),
                    task: 1,
                    perturbation: "noise".into(),
                    magnitude: 0.05,
                    seed: 7,
                    episodes: 3,
                    success_rate: 0.0,
                    mean_steps_to_success: None,
                },
            ],
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(EvalReport::default().to_csv(), format!("{REPORT_HEADER}\n"));
    }

    #[test]
    fn csv_round_trips() {
        let r = sample();
        assert_eq!(EvalReport::from_csv(&r.to_csv()).unwrap(), r);
    }

    #[test]
    fn emission_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        emit_report(&sample(), &a).unwrap();
        emit_report(&sample(), &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}
