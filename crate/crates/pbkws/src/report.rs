//! Evaluation report JSON.

use std::fs;
use std::path::Path;

use pbkws_core::metrics::{EvalReport, OutcomeCounts};
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub method: String,
    pub checkpoint: String,
    pub n_wake: u64,
    pub n_non_wake: u64,
    pub n_fr: u64,
    pub n_fa: u64,
    pub n_confused: u64,
    pub far: f64,
    pub frr: f64,
    pub score: f64,
}

impl From<&EvalReport> for ReportFile {
    fn from(r: &EvalReport) -> Self {
        Self {
            method: r.method.clone(),
            checkpoint: r.checkpoint.clone(),
            n_wake: r.counts.n_wake,
            n_non_wake: r.counts.n_non_wake,
            n_fr: r.counts.n_fr,
            n_fa: r.counts.n_fa,
            n_confused: r.counts.n_confused,
            far: r.far,
            frr: r.frr,
            score: r.score,
        }
    }
}

impl From<ReportFile> for EvalReport {
    fn from(f: ReportFile) -> Self {
        EvalReport {
            method: f.method,
            checkpoint: f.checkpoint,
            counts: OutcomeCounts {
                n_wake: f.n_wake,
                n_non_wake: f.n_non_wake,
                n_fr: f.n_fr,
                n_fa: f.n_fa,
                n_confused: f.n_confused,
            },
            far: f.far,
            frr: f.frr,
            score: f.score,
        }
    }
}

pub fn render_report(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(&ReportFile::from(report)).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, render_report(report)).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ReportFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    Ok(file.into())
}
