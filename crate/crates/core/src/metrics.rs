//! False-acceptance / false-rejection scoring.

use thiserror::Error;

use crate::label::Label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {predictions} predictions but {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("evaluation set has no {0} samples")]
    EmptyStratum(&'static str),
    #[error("inconsistent counts: {0}")]
    InvalidCounts(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OutcomeCounts {
    /// Samples whose gold label is a keyword.
    pub n_wake: u64,
    /// Samples whose gold label is the non-keyword class.
    pub n_non_wake: u64,
    /// Keyword samples not predicted as their own keyword.
    pub n_fr: u64,
    /// Non-keyword samples predicted as any keyword.
    pub n_fa: u64,
    /// Keyword samples predicted as a different keyword (a subset of `n_fr`).
    pub n_confused: u64,
}

pub fn tally_outcomes(predictions: &[Label], gold: &[Label]) -> Result<OutcomeCounts, MetricsError> {
    if predictions.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let mut c = OutcomeCounts::default();
    for (&p, &g) in predictions.iter().zip(gold) {
        if g.is_keyword() {
            c.n_wake += 1;
            if p != g {
                c.n_fr += 1;
                if p.is_keyword() {
                    c.n_confused += 1;
                }
            }
        } else {
            c.n_non_wake += 1;
            if p.is_keyword() {
                c.n_fa += 1;
            }
        }
    }
    Ok(c)
}

/// FRR, FAR and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub far: f64,
    pub frr: f64,
    pub score: f64,
}

pub fn compute_score(counts: &OutcomeCounts) -> Result<Rates, MetricsError> {
    if counts.n_wake == 0 {
        return Err(MetricsError::EmptyStratum("keyword"));
    }
    if counts.n_non_wake == 0 {
        return Err(MetricsError::EmptyStratum("non-keyword"));
    }
    if counts.n_fr > counts.n_wake || counts.n_confused > counts.n_fr {
        return Err(MetricsError::InvalidCounts("n_fr"));
    }
    if counts.n_fa > counts.n_non_wake {
        return Err(MetricsError::InvalidCounts("n_fa"));
    }
    let frr = counts.n_fr as f64 / counts.n_wake as f64;
    let far = counts.n_fa as f64 / counts.n_non_wake as f64;
    // The sum is formed over a common denominator and rounded once, so it is
    // the correctly rounded value of FRR + FAR (0.025 + 0.05 gives 0.075).
    let num = u128::from(counts.n_fr) * u128::from(counts.n_non_wake)
        + u128::from(counts.n_fa) * u128::from(counts.n_wake);
    let den = u128::from(counts.n_wake) * u128::from(counts.n_non_wake);
    let score = num as f64 / den as f64;
    Ok(Rates { far, frr, score })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: alloc::string::String,
    pub checkpoint: alloc::string::String,
    pub counts: OutcomeCounts,
    pub far: f64,
    pub frr: f64,
    pub score: f64,
}

impl EvalReport {
    pub fn new(
        method: impl Into<alloc::string::String>,
        checkpoint: impl Into<alloc::string::String>,
        counts: OutcomeCounts,
    ) -> Result<Self, MetricsError> {
        let Rates { far, frr, score } = compute_score(&counts)?;
        Ok(Self {
            method: method.into(),
            checkpoint: checkpoint.into(),
            counts,
            far,
            frr,
            score,
        })
    }
}
