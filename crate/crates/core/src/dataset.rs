//! Manifests of labeled utterances and the pure operations on them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::label::{Label, NUM_CLASSES};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("duplicate utt_id {0:?}")]
    DuplicateUttId(String),
    #[error("utt_id must be non-empty")]
    EmptyUttId,
    #[error("feature dimension mismatch: {expected} vs {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class {label} has {count} utterance(s), at least 2 are needed to split")]
    ClassTooSmall { label: Label, count: usize },
    #[error("train fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error("unknown {kind} {value:?}")]
    UnknownTag { kind: &'static str, value: String },
}

/// Which population a dataset is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Role {
    /// Typical (non-dysarthric) speakers.
    Control,
    /// Multiple dysarthric speakers, excluding the target.
    Uncontrol,
    TargetEnroll,
    TargetEval,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Control => "control",
            Role::Uncontrol => "uncontrol",
            Role::TargetEnroll => "target_enroll",
            Role::TargetEval => "target_eval",
        }
    }

    /// Dysarthric roles get severity-scaled noise and drift in the generator.
    pub fn is_dysarthric(self) -> bool {
        !matches!(self, Role::Control)
    }
}

impl FromStr for Role {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "control" => Ok(Role::Control),
            "uncontrol" => Ok(Role::Uncontrol),
            "target_enroll" => Ok(Role::TargetEnroll),
            "target_eval" => Ok(Role::TargetEval),
            _ => Err(DatasetError::UnknownTag {
                kind: "role",
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(DatasetError::UnknownTag {
                kind: "split",
                value: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub label: Label,
    /// Path of the feature file, relative to the manifest's directory.
    pub feature_path: String,
    /// Population this record came from; survives merging.
    pub role: Option<Role>,
}

/// An ordered list of utterances with unique ids.
///
/// `role` and `split` describe the manifest as a whole and are `None` for
/// merged manifests whose parts disagree. `feature_dim` is known when the
/// manifest was generated in memory or its features were probed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<Utterance>,
    pub role: Option<Role>,
    pub split: Option<Split>,
    pub feature_dim: Option<usize>,
}

impl Manifest {
    pub fn new(
        records: Vec<Utterance>,
        role: Option<Role>,
        split: Option<Split>,
    ) -> Result<Self, DatasetError> {
        check_unique(&records)?;
        Ok(Self {
            records,
            role,
            split,
            feature_dim: None,
        })
    }

    pub fn with_feature_dim(mut self, dim: usize) -> Self {
        self.feature_dim = Some(dim);
        self
    }

    pub fn records(&self) -> &[Utterance] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.speaker_id.as_str()).collect()
    }

    /// Utterance count per class, in class index order.
    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for r in &self.records {
            h[r.label.index()] += 1;
        }
        h
    }
}

fn check_unique(records: &[Utterance]) -> Result<(), DatasetError> {
    let mut seen = BTreeSet::new();
    for r in records {
        if r.utt_id.is_empty() {
            return Err(DatasetError::EmptyUttId);
        }
        if !seen.insert(r.utt_id.as_str()) {
            return Err(DatasetError::DuplicateUttId(r.utt_id.clone()));
        }
    }
    Ok(())
}

/// Concatenates manifests in order. Records keep their own role tag.
pub fn merge_datasets(parts: &[Manifest]) -> Result<Manifest, DatasetError> {
    let mut dim = None;
    for p in parts {
        match (dim, p.feature_dim) {
            (Some(a), Some(b)) if a != b => {
                return Err(DatasetError::DimensionMismatch {
                    expected: a,
                    got: b,
                })
            }
            (None, d) => dim = d,
            _ => {}
        }
    }
    let records: Vec<Utterance> = parts
        .iter()
        .flat_map(|p| {
            p.records.iter().cloned().map(move |mut r| {
                r.role = r.role.or(p.role);
                r
            })
        })
        .collect();
    let role = common(parts.iter().map(|p| p.role));
    let split = common(parts.iter().map(|p| p.split));
    let mut merged = Manifest::new(records, role, split)?;
    merged.feature_dim = dim;
    Ok(merged)
}

fn common<T: PartialEq + Copy>(mut tags: impl Iterator<Item = Option<T>>) -> Option<T> {
    let first = tags.next()??;
    tags.all(|t| t == Some(first)).then_some(first)
}

/// Stratified, seeded split of enrollment speech into train and valid parts.
///
/// A class with `n` utterances puts `ceil(train_fraction * n)` of them in
/// train, capped at `n - 1` so valid keeps at least one. Both outputs keep the
/// input's record order.
pub fn split_enrollment(
    enroll: &Manifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(Manifest, Manifest), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, r) in enroll.records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    let mut rng = rng_for(seed, "split_enrollment");
    let mut in_train = alloc::vec![false; enroll.len()];
    for (&label, idx) in &by_class {
        let n = idx.len();
        if n < 2 {
            return Err(DatasetError::ClassTooSmall { label, count: n });
        }
        let take = (libm::ceil(train_fraction * n as f64) as usize).min(n - 1);
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..take] {
            in_train[i] = true;
        }
    }
    let pick = |want: bool| -> Vec<Utterance> {
        enroll
            .records
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| t == want)
            .map(|(r, _)| r.clone())
            .collect()
    };
    let mut train = Manifest::new(pick(true), enroll.role, Some(Split::Train))?;
    let mut valid = Manifest::new(pick(false), enroll.role, Some(Split::Valid))?;
    train.feature_dim = enroll.feature_dim;
    valid.feature_dim = enroll.feature_dim;
    Ok((train, valid))
}
