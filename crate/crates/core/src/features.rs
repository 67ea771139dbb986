use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("feature sequence has zero frames")]
    ZeroFrames,
    #[error("feature dimension must be at least 1")]
    ZeroDim,
    #[error("expected {expected} values for a {frames}x{dim} matrix, got {got}")]
    ShapeMismatch {
        frames: usize,
        dim: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at frame {frame}, column {column}")]
    NonFiniteValue { frame: usize, column: usize },
}

/// Per-frame content features of one utterance, `frames x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<Self, FeatureError> {
        if frames == 0 {
            return Err(FeatureError::ZeroFrames);
        }
        if dim == 0 {
            return Err(FeatureError::ZeroDim);
        }
        let expected = frames * dim;
        if data.len() != expected {
            return Err(FeatureError::ShapeMismatch {
                frames,
                dim,
                expected,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFiniteValue {
                frame: pos / dim,
                column: pos % dim,
            });
        }
        Ok(Self { frames, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, FeatureError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.is_empty() {
            return Err(FeatureError::ZeroFrames);
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(FeatureError::ShapeMismatch {
                    frames: rows.len(),
                    dim,
                    expected: rows.len() * dim,
                    got: data.len() + row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert_eq!(FeatureSequence::new(0, 4, vec![]), Err(FeatureError::ZeroFrames));
        assert!(matches!(
            FeatureSequence::new(2, 2, vec![1.0; 3]),
            Err(FeatureError::ShapeMismatch { .. })
        ));
        assert_eq!(
            FeatureSequence::new(2, 2, vec![0.0, 1.0, f32::NAN, 2.0]),
            Err(FeatureError::NonFiniteValue { frame: 1, column: 0 })
        );
        assert!(FeatureSequence::new(1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn rows_are_row_major() {
        let f = FeatureSequence::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(f.row(1), &[3.0, 4.0]);
        assert_eq!(f.rows().count(), 2);
    }
}
