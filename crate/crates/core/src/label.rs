use core::fmt;

use thiserror::Error;

/// Number of classes: ten keywords plus the non-keyword class.
pub const NUM_CLASSES: usize = 11;

/// Number of keyword classes.
pub const NUM_KEYWORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("class id {0} is outside {{-1, 0..9}}")]
pub struct InvalidLabel(pub i64);

/// A keyword class (0..=9) or the non-keyword class (-1).
///
/// The dense index maps keywords to themselves and the non-keyword class to
/// 10, so index order is also the tie-break order used by every classifier:
/// lowest keyword id first, non-keyword last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "i64", into = "i64"))]
pub struct Label(i8);

impl Label {
    pub const NON_KEYWORD: Label = Label(-1);

    pub fn new(class_id: i64) -> Result<Self, InvalidLabel> {
        if (-1..=9).contains(&class_id) {
            Ok(Label(class_id as i8))
        } else {
            Err(InvalidLabel(class_id))
        }
    }

    pub fn keyword(id: u8) -> Result<Self, InvalidLabel> {
        Self::new(i64::from(id))
    }

    pub fn class_id(self) -> i64 {
        i64::from(self.0)
    }

    pub fn is_keyword(self) -> bool {
        self.0 >= 0
    }

    /// Dense index in `0..NUM_CLASSES`.
    pub fn index(self) -> usize {
        if self.0 < 0 {
            NUM_KEYWORDS
        } else {
            self.0 as usize
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            i if i < NUM_KEYWORDS => Some(Label(i as i8)),
            NUM_KEYWORDS => Some(Self::NON_KEYWORD),
            _ => None,
        }
    }

    /// All eleven labels in index (tie-break) order.
    pub fn all() -> impl Iterator<Item = Label> {
        (0..NUM_CLASSES).map(|i| Label::from_index(i).unwrap())
    }
}

impl TryFrom<i64> for Label {
    type Error = InvalidLabel;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Label::new(value)
    }
}

impl From<Label> for i64 {
    fn from(label: Label) -> i64 {
        label.class_id()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index of the first maximum, scanning in class index order.
pub(crate) fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
