//! JSON Lines manifests: one `{"utt_id", "speaker", "label", "features"}`
//! object per line, unknown keys rejected. Feature paths are relative to the
//! manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pbkws_core::dataset::{Manifest, Role, Split, Utterance};
use pbkws_core::features::FeatureSequence;
use pbkws_core::label::Label;
use pbkws_core::synth::SyntheticCorpus;
use pbkws_core::trainer::Sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Error;
use crate::formats::features::{probe_dim, read_features, write_features};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: invalid label {value} (expected -1..=9)")]
    InvalidLabel { line: usize, value: i64 },
    #[error("line {line}: duplicate utt_id {utt_id:?}")]
    DuplicateUttId { line: usize, utt_id: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    utt_id: String,
    speaker: String,
    label: i64,
    features: String,
}

pub fn parse_manifest(text: &str) -> Result<Vec<Utterance>, ManifestError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(raw).map_err(|e| ManifestError::MalformedRecord {
            line,
            message: e.to_string(),
        })?;
        if rec.utt_id.is_empty() {
            return Err(ManifestError::MalformedRecord {
                line,
                message: "empty utt_id".into(),
            });
        }
        let label = Label::new(rec.label).map_err(|_| ManifestError::InvalidLabel { line, value: rec.label })?;
        if !seen.insert(rec.utt_id.clone()) {
            return Err(ManifestError::DuplicateUttId { line, utt_id: rec.utt_id });
        }
        out.push(Utterance {
            utt_id: rec.utt_id,
            speaker_id: rec.speaker,
            label,
            feature_path: rec.features,
            role: None,
        });
    }
    Ok(out)
}

/// Reads a manifest in file order.
pub fn load_manifest(path: &Path) -> Result<Manifest, Error> {
    load_manifest_as(path, None, None)
}

/// Reads a manifest and tags it (and every record) with a role and split.
pub fn load_manifest_as(path: &Path, role: Option<Role>, split: Option<Split>) -> Result<Manifest, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = parse_manifest(&text).map_err(|source| Error::Manifest {
        path: path.to_path_buf(),
        source,
    })?;
    for r in &mut records {
        r.role = role;
    }
    let mut m = Manifest::new(records, role, split)?;
    if let Some(first) = m.records().first() {
        m.feature_dim = Some(probe_dim(&feature_path(path, first))?);
    }
    Ok(m)
}

pub fn render_manifest(manifest: &Manifest) -> String {
    let mut out = String::new();
    for r in manifest.records() {
        let rec = Record {
            utt_id: r.utt_id.clone(),
            speaker: r.speaker_id.clone(),
            label: r.label.class_id(),
            features: r.feature_path.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(render_manifest(manifest).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Absolute location of a record's feature file.
pub fn feature_path(manifest_path: &Path, utt: &Utterance) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&utt.feature_path)
}

/// Loads every feature file of a manifest, in record order.
pub fn load_features(manifest_path: &Path, manifest: &Manifest) -> Result<Vec<FeatureSequence>, Error> {
    let feats = manifest
        .records()
        .par_iter()
        .map(|r| read_features(&feature_path(manifest_path, r)))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(first) = feats.first() {
        let dim = first.dim();
        if let Some(bad) = feats.iter().find(|f| f.dim() != dim) {
            return Err(pbkws_core::dataset::DatasetError::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            }
            .into());
        }
    }
    Ok(feats)
}

pub fn to_samples(manifest: &Manifest, features: Vec<FeatureSequence>) -> Vec<Sample> {
    manifest
        .records()
        .iter()
        .zip(features)
        .map(|(r, f)| Sample {
            speaker_id: r.speaker_id.clone(),
            label: r.label,
            features: f,
        })
        .collect()
}

/// Writes a generated corpus as `<dir>/<name>.jsonl` plus its feature files.
pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path, name: &str) -> Result<PathBuf, Error> {
    corpus
        .manifest
        .records()
        .par_iter()
        .zip(&corpus.features)
        .try_for_each(|(r, f)| write_features(f, &dir.join(&r.feature_path)))?;
    let path = dir.join(format!("{name}.jsonl"));
    write_manifest(&corpus.manifest, &path)?;
    Ok(path)
}
