//! CTC token inventory, the log-space CTC loss, and greedy best-path decoding.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::label::{Label, NUM_KEYWORDS};

/// Size of the model's CTC dictionary.
pub const NUM_TOKENS: usize = 15;

pub const BLANK: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const PAD: usize = 3;
const FIRST_KEYWORD: usize = 4;
pub const NON_KEYWORD_TOKEN: usize = FIRST_KEYWORD + NUM_KEYWORDS;

/// Token index for a class label: keywords 0..9 map to 4..13, non-keyword to 14.
pub fn token_for(label: Label) -> usize {
    if label.is_keyword() {
        FIRST_KEYWORD + label.class_id() as usize
    } else {
        NON_KEYWORD_TOKEN
    }
}

/// Inverse of [`token_for`]; `None` for blank and the special tokens.
pub fn label_for(token: usize) -> Option<Label> {
    match token {
        t if (FIRST_KEYWORD..NON_KEYWORD_TOKEN).contains(&t) => Label::keyword((t - FIRST_KEYWORD) as u8).ok(),
        NON_KEYWORD_TOKEN => Some(Label::NON_KEYWORD),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CtcError {
    #[error("target of length {target_len} needs at least {required} frames, got {frames}")]
    TargetTooLong {
        target_len: usize,
        required: usize,
        frames: usize,
    },
    #[error("target has zero probability under the given logits")]
    NonFiniteLoss,
    #[error("logits contain NaN or +inf")]
    NonFiniteLogits,
    #[error("target token {0} is blank or outside the inventory")]
    InvalidTarget(usize),
    #[error("logit buffer length {len} is not a multiple of inventory size {inventory}")]
    Shape { len: usize, inventory: usize },
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

/// Row-wise log-softmax. `-inf` logits are allowed as long as each row has a
/// finite entry.
fn log_softmax_rows(logits: &[f64], inventory: usize) -> Result<Vec<f64>, CtcError> {
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.chunks_exact(inventory).zip(out.chunks_exact_mut(inventory)) {
        if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(CtcError::NonFiniteLogits);
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(CtcError::NonFiniteLoss);
        }
        let lse = m + libm::log(row.iter().map(|v| libm::exp(v - m)).sum::<f64>());
        for (oi, v) in o.iter_mut().zip(row) {
            *oi = v - lse;
        }
    }
    Ok(out)
}

/// Negative log-likelihood of `target` under per-frame softmax of `logits`
/// (`frames x inventory`, row-major, blank at index 0), summed over all
/// blank-augmented alignments. Returns the loss and its gradient with
/// respect to the logits.
pub fn ctc_loss(logits: &[f64], inventory: usize, target: &[usize]) -> Result<(f64, Vec<f64>), CtcError> {
    if inventory == 0 || !logits.len().is_multiple_of(inventory) || logits.is_empty() {
        return Err(CtcError::Shape {
            len: logits.len(),
            inventory,
        });
    }
    if let Some(&bad) = target.iter().find(|&&k| k == BLANK || k >= inventory) {
        return Err(CtcError::InvalidTarget(bad));
    }
    let frames = logits.len() / inventory;
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    let required = target.len() + repeats;
    if frames < required {
        return Err(CtcError::TargetTooLong {
            target_len: target.len(),
            required,
            frames,
        });
    }

    let logp = log_softmax_rows(logits, inventory)?;
    let lp = |t: usize, k: usize| logp[t * inventory + k];

    // Extended target: blank, l1, blank, l2, ..., blank.
    let mut ext = vec![BLANK; 2 * target.len() + 1];
    for (i, &k) in target.iter().enumerate() {
        ext[2 * i + 1] = k;
    }
    let s_len = ext.len();
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let ninf = f64::NEG_INFINITY;
    // alpha includes the emission at t; beta covers frames after t only.
    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + lp(t, ext[s]) };
        }
    }
    let last = &alpha[(frames - 1) * s_len..];
    let mut log_p = last[s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, last[s_len - 2]);
    }
    if !log_p.is_finite() {
        return Err(CtcError::NonFiniteLoss);
    }

    let mut beta = vec![ninf; frames * s_len];
    beta[(frames - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(frames - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[(t + 1) * s_len + s2] + lp(t + 1, ext[s2]);
            let mut b = next(s);
            if s + 1 < s_len {
                b = log_add(b, next(s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, next(s + 2));
            }
            beta[t * s_len + s] = b;
        }
    }

    let mut grad = vec![0.0; logits.len()];
    let mut occupancy = vec![ninf; inventory];
    for t in 0..frames {
        occupancy.iter_mut().for_each(|v| *v = ninf);
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            occupancy[ext[s]] = log_add(occupancy[ext[s]], v);
        }
        for k in 0..inventory {
            let y = libm::exp(lp(t, k));
            let post = if occupancy[k] == ninf {
                0.0
            } else {
                libm::exp(occupancy[k] - log_p)
            };
            grad[t * inventory + k] = y - post;
        }
    }
    Ok((-log_p, grad))
}

/// Greedy best-path decode: per-frame argmax (lowest index on ties), collapse
/// repeats, drop blank and the special tokens.
pub fn greedy_decode(logits: &[f64], inventory: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in logits.chunks_exact(inventory) {
        let best = crate::label::argmax_first(row);
        if prev != Some(best) && !matches!(best, BLANK | SOS | EOS | PAD) {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

/// Class decision from a greedy decode: the first keyword token, else the
/// non-keyword class.
pub fn decode_label(logits: &[f64], inventory: usize) -> Label {
    greedy_decode(logits, inventory)
        .into_iter()
        .filter_map(label_for)
        .find(|l| l.is_keyword())
        .unwrap_or(Label::NON_KEYWORD)
}
