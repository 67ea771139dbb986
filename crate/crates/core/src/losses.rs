//! Cross-entropy, supervised contrastive and CTC training objectives.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::ctc::{self, CtcError, NUM_TOKENS};
use crate::encoder::{utterance_embedding, EncoderOutput, Upstream};
use crate::label::{Label, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LossError {
    #[error("logits contain non-finite values")]
    NonFiniteLogits,
    #[error("embedding {0} has zero or non-finite norm")]
    ZeroEmbedding(usize),
    #[error("contrastive loss needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("{embeddings} embeddings but {labels} labels")]
    LengthMismatch { embeddings: usize, labels: usize },
    #[error("temperature must be positive and finite")]
    InvalidTemperature,
    #[error("unknown loss setting {0:?}")]
    UnknownSetting(alloc::string::String),
    #[error(transparent)]
    Ctc(#[from] CtcError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SclConfig {
    pub temperature: f64,
}

impl Default for SclConfig {
    fn default() -> Self {
        Self { temperature: 0.07 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BaseLoss {
    Ce,
    Ctc,
}

/// Base loss, optionally plus the contrastive term at weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "alloc::string::String", into = "alloc::string::String"))]
pub struct LossSetting {
    pub base: BaseLoss,
    pub add_scl: bool,
}

impl LossSetting {
    pub const CE: LossSetting = LossSetting {
        base: BaseLoss::Ce,
        add_scl: false,
    };
    pub const CTC: LossSetting = LossSetting {
        base: BaseLoss::Ctc,
        add_scl: false,
    };
    pub const CE_SCL: LossSetting = LossSetting {
        base: BaseLoss::Ce,
        add_scl: true,
    };
    pub const CTC_SCL: LossSetting = LossSetting {
        base: BaseLoss::Ctc,
        add_scl: true,
    };

    pub fn as_str(self) -> &'static str {
        match (self.base, self.add_scl) {
            (BaseLoss::Ce, false) => "ce",
            (BaseLoss::Ctc, false) => "ctc",
            (BaseLoss::Ce, true) => "ce+scl",
            (BaseLoss::Ctc, true) => "ctc+scl",
        }
    }
}

impl FromStr for LossSetting {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ce" => Ok(Self::CE),
            "ctc" => Ok(Self::CTC),
            "ce+scl" => Ok(Self::CE_SCL),
            "ctc+scl" => Ok(Self::CTC_SCL),
            _ => Err(LossError::UnknownSetting(s.into())),
        }
    }
}

impl TryFrom<alloc::string::String> for LossSetting {
    type Error = LossError;

    fn try_from(s: alloc::string::String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LossSetting> for alloc::string::String {
    fn from(s: LossSetting) -> Self {
        s.as_str().into()
    }
}

impl fmt::Display for LossSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Softmax cross-entropy over the eleven classes.
pub fn ce_loss(logits: &[f64; NUM_CLASSES], label: Label) -> Result<(f64, [f64; NUM_CLASSES]), LossError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFiniteLogits);
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; NUM_CLASSES];
    let mut z = 0.0;
    for (pi, &l) in p.iter_mut().zip(logits) {
        *pi = libm::exp(l - m);
        z += *pi;
    }
    let y = label.index();
    let loss = (m + libm::log(z)) - logits[y];
    for pi in &mut p {
        *pi /= z;
    }
    p[y] -= 1.0;
    Ok((loss.max(0.0), p))
}

/// Supervised contrastive loss over L2-normalized embeddings.
///
/// Each anchor `i` with at least one same-label partner contributes
/// `-1/|P(i)| * sum_p log(exp(s_ip) / sum_{a != i} exp(s_ia))` with
/// `s_ij = <x_i/|x_i|, x_j/|x_j|> / temperature`; anchors without a partner
/// contribute zero. The loss is the sum over anchors. Gradients are with
/// respect to the raw (unnormalized) embeddings.
pub fn scl_loss<E: AsRef<[f64]>>(
    embeddings: &[E],
    labels: &[Label],
    cfg: &SclConfig,
) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    let n = embeddings.len();
    if n != labels.len() {
        return Err(LossError::LengthMismatch {
            embeddings: n,
            labels: labels.len(),
        });
    }
    if n < 2 {
        return Err(LossError::BatchTooSmall(n));
    }
    if !(cfg.temperature > 0.0 && cfg.temperature.is_finite()) {
        return Err(LossError::InvalidTemperature);
    }
    let tau = cfg.temperature;

    let mut unit: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    for (i, e) in embeddings.iter().enumerate() {
        let e = e.as_ref();
        let norm = libm::sqrt(e.iter().map(|v| v * v).sum::<f64>());
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(LossError::ZeroEmbedding(i));
        }
        norms.push(norm);
        unit.push(e.iter().map(|v| v / norm).collect());
    }
    let dim = unit[0].len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // Gradient of the loss with respect to the similarity logits s_ij.
    let mut g_sim = vec![0.0; n * n];
    let mut loss = 0.0;
    let mut row = vec![0.0; n];
    for i in 0..n {
        let n_pos = (0..n).filter(|&j| j != i && labels[j] == labels[i]).count();
        if n_pos == 0 {
            continue;
        }
        let mut m = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i {
                row[j] = dot(&unit[i], &unit[j]) / tau;
                m = m.max(row[j]);
            }
        }
        let z: f64 = (0..n).filter(|&j| j != i).map(|j| libm::exp(row[j] - m)).sum();
        let lse = m + libm::log(z);
        let inv_pos = 1.0 / n_pos as f64;
        for j in 0..n {
            if j == i {
                continue;
            }
            let positive = labels[j] == labels[i];
            if positive {
                loss -= inv_pos * (row[j] - lse);
            }
            g_sim[i * n + j] = libm::exp(row[j] - lse) - if positive { inv_pos } else { 0.0 };
        }
    }

    let mut grads = vec![vec![0.0; dim]; n];
    let mut g_unit = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let g = g_sim[i * n + j] / tau;
            if g == 0.0 {
                continue;
            }
            for d in 0..dim {
                g_unit[i][d] += g * unit[j][d];
                g_unit[j][d] += g * unit[i][d];
            }
        }
    }
    for i in 0..n {
        let radial = dot(&unit[i], &g_unit[i]);
        for d in 0..dim {
            grads[i][d] = (g_unit[i][d] - unit[i][d] * radial) / norms[i];
        }
    }
    Ok((loss, grads))
}

/// Loss value split into its components.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossValue {
    pub total: f64,
    pub base: f64,
    pub scl: f64,
    /// Base loss of each batch item.
    pub base_items: Vec<f64>,
}

/// Base loss summed over the batch, plus the contrastive loss on the batch's
/// first-frame embeddings when `setting.add_scl`. Returns one upstream
/// gradient per batch item.
pub fn combined_loss(
    setting: LossSetting,
    scl: &SclConfig,
    outputs: &[EncoderOutput],
    labels: &[Label],
) -> Result<(LossValue, Vec<Upstream>), LossError> {
    if outputs.len() != labels.len() {
        return Err(LossError::LengthMismatch {
            embeddings: outputs.len(),
            labels: labels.len(),
        });
    }
    let mut value = LossValue::default();
    let mut upstream = Vec::with_capacity(outputs.len());
    for (out, &label) in outputs.iter().zip(labels) {
        let up = match setting.base {
            BaseLoss::Ce => {
                let (l, g) = ce_loss(&out.ce_logits, label)?;
                value.base += l;
                value.base_items.push(l);
                Upstream {
                    ce_logits: Some(g),
                    ..Default::default()
                }
            }
            BaseLoss::Ctc => {
                let (l, g) = ctc::ctc_loss(&out.ctc_logits, NUM_TOKENS, &[ctc::token_for(label)])?;
                value.base += l;
                value.base_items.push(l);
                Upstream {
                    ctc_logits: Some(g),
                    ..Default::default()
                }
            }
        };
        upstream.push(up);
    }
    if setting.add_scl {
        let firsts: Vec<&[f64]> = outputs.iter().map(utterance_embedding).collect();
        let (l, grads) = scl_loss(&firsts, labels, scl)?;
        value.scl = l;
        for ((up, g), out) in upstream.iter_mut().zip(grads).zip(outputs) {
            let mut emb = vec![0.0; out.embeddings.len()];
            emb[..g.len()].copy_from_slice(&g);
            up.embeddings = Some(emb);
        }
    }
    value.total = value.base + value.scl;
    Ok((value, upstream))
}
