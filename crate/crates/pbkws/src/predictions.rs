//! Per-utterance predictions as TSV: a header, then
//! `utt_id<TAB>predicted_label<TAB>top_score` per line.

use std::fs;
use std::path::Path;

use pbkws_core::label::Label;

use crate::error::Error;

pub const HEADER: &str = "utt_id\tpredicted_label\ttop_score";

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub utt_id: String,
    pub label: Label,
    pub top_score: f64,
}

pub fn render_predictions(rows: &[PredictionRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\n", r.utt_id, r.label, r.top_score));
    }
    out
}

pub fn write_predictions(rows: &[PredictionRow], path: &Path) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, render_predictions(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: String| Error::Predictions {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line == HEADER {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(i + 1, format!("expected 3 columns, got {}", cols.len())));
        }
        let id: i64 = cols[1].parse().map_err(|_| bad(i + 1, format!("bad label {:?}", cols[1])))?;
        let label = Label::new(id).map_err(|e| bad(i + 1, e.to_string()))?;
        let top_score = cols[2].parse().map_err(|_| bad(i + 1, format!("bad score {:?}", cols[2])))?;
        rows.push(PredictionRow {
            utt_id: cols[0].to_string(),
            label,
            top_score,
        });
    }
    Ok(rows)
}
