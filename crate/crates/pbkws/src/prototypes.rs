//! Prototype file: pretty JSON with the source digests and one vector per
//! class id, keys ordered `-1, 0, ..., 9`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pbkws_core::classify::{EmbeddingMode, PrototypeSet};
use pbkws_core::label::Label;
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeFile {
    /// Digest of the encoder checkpoint the prototypes were built with.
    pub checkpoint: String,
    /// Digest of the enrollment manifest and its features.
    pub enrollment: String,
    pub embedding_mode: EmbeddingMode,
    pub prototypes: BTreeMap<i64, Vec<f64>>,
}

impl PrototypeFile {
    pub fn new(set: &PrototypeSet, checkpoint: String, enrollment: String, embedding_mode: EmbeddingMode) -> Self {
        Self {
            checkpoint,
            enrollment,
            embedding_mode,
            prototypes: set.iter().map(|(l, v)| (l.class_id(), v.to_vec())).collect(),
        }
    }

    pub fn to_set(&self) -> Result<PrototypeSet, Error> {
        let vectors = Label::all()
            .map(|l| self.prototypes.get(&l.class_id()).cloned())
            .collect::<Option<Vec<_>>>();
        let vectors = match vectors {
            Some(v) if self.prototypes.len() == v.len() => v,
            _ => {
                let missing = Label::all()
                    .filter(|l| !self.prototypes.contains_key(&l.class_id()))
                    .collect();
                return Err(pbkws_core::classify::ClassifyError::MissingClass(missing).into());
            }
        };
        Ok(PrototypeSet::from_vectors(vectors)?)
    }

    pub fn render(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("prototype file serializes");
        s.push('\n');
        s
    }
}

pub fn write_prototypes(file: &PrototypeFile, path: &Path) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, file.render()).map_err(|e| Error::io(path, e))
}

pub fn read_prototypes(path: &Path) -> Result<PrototypeFile, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
