//! Frame-wise two-layer ReLU encoder with a CE head on the first-frame
//! embedding and a per-frame CTC token head.
//!
//! Parameters live in one flat `f64` buffer laid out as
//! `W1, b1, W2, b2, Wce, bce, Wctc, bctc`; matrices are row-major with one row
//! per output unit. Gradients use the same layout.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::ctc::NUM_TOKENS;
use crate::features::FeatureSequence;
use crate::label::NUM_CLASSES;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncoderError {
    #[error("encoder dimensions must all be at least 1, got {0:?}")]
    InvalidDims(Dims),
    #[error("input dimension {got} does not match encoder input {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("upstream gradient has wrong shape for {0}")]
    UpstreamShape(&'static str),
    #[error("parameter buffer has {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("unknown stage {0:?}")]
    UnknownStage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dims {
    pub d_in: usize,
    pub hidden: usize,
    pub d_emb: usize,
}

impl Dims {
    pub fn new(d_in: usize, hidden: usize, d_emb: usize) -> Result<Self, EncoderError> {
        let dims = Dims { d_in, hidden, d_emb };
        if d_in == 0 || hidden == 0 || d_emb == 0 {
            return Err(EncoderError::InvalidDims(dims));
        }
        Ok(dims)
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut next = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Layout {
            w1: next(self.hidden * self.d_in),
            b1: next(self.hidden),
            w2: next(self.d_emb * self.hidden),
            b2: next(self.d_emb),
            wce: next(NUM_CLASSES * self.d_emb),
            bce: next(NUM_CLASSES),
            wctc: next(NUM_TOKENS * self.d_emb),
            bctc: next(NUM_TOKENS),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().bctc.end
    }
}

struct Layout {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    wce: Range<usize>,
    bce: Range<usize>,
    wctc: Range<usize>,
    bctc: Range<usize>,
}

/// Encoder weights, or a gradient with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    dims: Dims,
    values: Vec<f64>,
}

macro_rules! block {
    ($get:ident, $get_mut:ident) => {
        pub fn $get(&self) -> &[f64] {
            &self.values[self.dims.layout().$get]
        }

        pub fn $get_mut(&mut self) -> &mut [f64] {
            let r = self.dims.layout().$get;
            &mut self.values[r]
        }
    };
}

impl EncoderParams {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.param_count()],
        }
    }

    pub fn from_values(dims: Dims, values: Vec<f64>) -> Result<Self, EncoderError> {
        let expected = dims.param_count();
        if values.len() != expected {
            return Err(EncoderError::ShapeMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    block!(w1, w1_mut);
    block!(b1, b1_mut);
    block!(w2, w2_mut);
    block!(b2, b2_mut);
    block!(wce, wce_mut);
    block!(bce, bce_mut);
    block!(wctc, wctc_mut);
    block!(bctc, bctc_mut);

    /// Rounds every value to the nearest `f32`, the checkpoint precision.
    pub fn quantize(&mut self) {
        for v in &mut self.values {
            *v = f64::from(*v as f32);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += other`, element-wise.
    pub fn accumulate(&mut self, other: &EncoderParams) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

/// Weights drawn from `N(0, 1/fan_in)`, biases zero. Values are rounded to
/// `f32` so a fresh encoder survives checkpointing bit-exactly.
pub fn init_encoder(
    d_in: usize,
    hidden: usize,
    d_emb: usize,
    seed: u64,
) -> Result<EncoderParams, EncoderError> {
    let dims = Dims::new(d_in, hidden, d_emb)?;
    let mut params = EncoderParams::zeros(dims);
    let mut rng = rng_for(seed, "init_encoder");
    let mut fill = |block: &mut [f64], fan_in: usize| {
        let normal = Normal::new(0.0, libm::sqrt(1.0 / fan_in as f64)).unwrap();
        for w in block {
            *w = normal.sample(&mut rng);
        }
    };
    fill(params.w1_mut(), d_in);
    fill(params.w2_mut(), hidden);
    fill(params.wce_mut(), d_emb);
    fill(params.wctc_mut(), d_emb);
    params.quantize();
    Ok(params)
}

/// `out = W x + b` for a row-major `W` with `out.len()` rows.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        *o = b[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W^T g` for a row-major `W` with `g.len()` rows.
fn affine_transpose_acc(w: &[f64], g: &[f64], out: &mut [f64]) {
    let n = out.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *o += wij * gi;
        }
    }
}

/// `dW += g x^T`, `db += g`.
fn outer_acc(dw: &mut [f64], db: &mut [f64], g: &[f64], x: &[f64]) {
    let n = x.len();
    for (i, &gi) in g.iter().enumerate() {
        db[i] += gi;
        if gi == 0.0 {
            continue;
        }
        for (d, &xj) in dw[i * n..(i + 1) * n].iter_mut().zip(x) {
            *d += gi * xj;
        }
    }
}

/// Outputs of one forward pass, plus the hidden pre-activations backward needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub frames: usize,
    pub d_emb: usize,
    /// `frames x d_emb` per-frame embeddings.
    pub embeddings: Vec<f64>,
    pub ce_logits: [f64; NUM_CLASSES],
    /// `frames x NUM_TOKENS` CTC logits.
    pub ctc_logits: Vec<f64>,
    hidden_pre: Vec<f64>,
}

impl EncoderOutput {
    pub fn embedding(&self, t: usize) -> &[f64] {
        &self.embeddings[t * self.d_emb..(t + 1) * self.d_emb]
    }

    pub fn ctc_row(&self, t: usize) -> &[f64] {
        &self.ctc_logits[t * NUM_TOKENS..(t + 1) * NUM_TOKENS]
    }
}

pub fn forward(params: &EncoderParams, feats: &FeatureSequence) -> Result<EncoderOutput, EncoderError> {
    let Dims { d_in, hidden, d_emb } = params.dims;
    if feats.dim() != d_in {
        return Err(EncoderError::DimMismatch {
            expected: d_in,
            got: feats.dim(),
        });
    }
    let frames = feats.frames();
    let mut hidden_pre = vec![0.0; frames * hidden];
    let mut embeddings = vec![0.0; frames * d_emb];
    let mut ctc_logits = vec![0.0; frames * NUM_TOKENS];
    let mut x = vec![0.0; d_in];
    let mut h = vec![0.0; hidden];
    for t in 0..frames {
        for (xi, &f) in x.iter_mut().zip(feats.row(t)) {
            *xi = f64::from(f);
        }
        let z = &mut hidden_pre[t * hidden..(t + 1) * hidden];
        affine(params.w1(), params.b1(), &x, z);
        for (hi, &zi) in h.iter_mut().zip(z.iter()) {
            *hi = zi.max(0.0);
        }
        let e = &mut embeddings[t * d_emb..(t + 1) * d_emb];
        affine(params.w2(), params.b2(), &h, e);
        affine(
            params.wctc(),
            params.bctc(),
            e,
            &mut ctc_logits[t * NUM_TOKENS..(t + 1) * NUM_TOKENS],
        );
    }
    let mut ce_logits = [0.0; NUM_CLASSES];
    affine(params.wce(), params.bce(), &embeddings[..d_emb], &mut ce_logits);
    Ok(EncoderOutput {
        frames,
        d_emb,
        embeddings,
        ce_logits,
        ctc_logits,
        hidden_pre,
    })
}

/// The utterance-level embedding: the first frame's embedding row.
pub fn utterance_embedding(output: &EncoderOutput) -> &[f64] {
    output.embedding(0)
}

/// Gradients of some scalar with respect to the encoder outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Upstream {
    /// `frames x d_emb`, applied directly to the per-frame embeddings.
    pub embeddings: Option<Vec<f64>>,
    pub ce_logits: Option<[f64; NUM_CLASSES]>,
    /// `frames x NUM_TOKENS`.
    pub ctc_logits: Option<Vec<f64>>,
}

impl Upstream {
    /// Gradient only on the first-frame embedding.
    pub fn first_embedding(frames: usize, grad: &[f64]) -> Self {
        let mut emb = vec![0.0; frames * grad.len()];
        emb[..grad.len()].copy_from_slice(grad);
        Upstream {
            embeddings: Some(emb),
            ..Default::default()
        }
    }
}

pub fn backward(
    params: &EncoderParams,
    feats: &FeatureSequence,
    upstream: &Upstream,
) -> Result<EncoderParams, EncoderError> {
    let out = forward(params, feats)?;
    backward_from(params, feats, &out, upstream)
}

/// Backward pass reusing a forward pass computed on the same inputs.
pub fn backward_from(
    params: &EncoderParams,
    feats: &FeatureSequence,
    out: &EncoderOutput,
    upstream: &Upstream,
) -> Result<EncoderParams, EncoderError> {
    let Dims { d_in, hidden, d_emb } = params.dims;
    if feats.dim() != d_in {
        return Err(EncoderError::DimMismatch {
            expected: d_in,
            got: feats.dim(),
        });
    }
    let frames = out.frames;
    if upstream
        .embeddings
        .as_ref()
        .is_some_and(|g| g.len() != frames * d_emb)
    {
        return Err(EncoderError::UpstreamShape("embeddings"));
    }
    if upstream
        .ctc_logits
        .as_ref()
        .is_some_and(|g| g.len() != frames * NUM_TOKENS)
    {
        return Err(EncoderError::UpstreamShape("ctc_logits"));
    }

    let layout = params.dims.layout();
    let mut grad = EncoderParams::zeros(params.dims);
    let g = &mut grad.values;

    let mut de = vec![0.0; frames * d_emb];
    if let Some(ue) = &upstream.embeddings {
        de.copy_from_slice(ue);
    }
    if let Some(dce) = &upstream.ce_logits {
        let (gw, gb) = split_pair(g, &layout.wce, &layout.bce);
        outer_acc(gw, gb, dce, out.embedding(0));
        affine_transpose_acc(params.wce(), dce, &mut de[..d_emb]);
    }
    if let Some(dctc) = &upstream.ctc_logits {
        for t in 0..frames {
            let gt = &dctc[t * NUM_TOKENS..(t + 1) * NUM_TOKENS];
            let (gw, gb) = split_pair(g, &layout.wctc, &layout.bctc);
            outer_acc(gw, gb, gt, out.embedding(t));
            affine_transpose_acc(params.wctc(), gt, &mut de[t * d_emb..(t + 1) * d_emb]);
        }
    }

    let mut h = vec![0.0; hidden];
    let mut dz = vec![0.0; hidden];
    let mut x = vec![0.0; d_in];
    for t in 0..frames {
        let det = &de[t * d_emb..(t + 1) * d_emb];
        let z = &out.hidden_pre[t * hidden..(t + 1) * hidden];
        for (hi, &zi) in h.iter_mut().zip(z) {
            *hi = zi.max(0.0);
        }
        let (gw, gb) = split_pair(g, &layout.w2, &layout.b2);
        outer_acc(gw, gb, det, &h);
        dz.iter_mut().for_each(|v| *v = 0.0);
        affine_transpose_acc(params.w2(), det, &mut dz);
        for (d, &zi) in dz.iter_mut().zip(z) {
            if zi <= 0.0 {
                *d = 0.0;
            }
        }
        for (xi, &f) in x.iter_mut().zip(feats.row(t)) {
            *xi = f64::from(f);
        }
        let (gw, gb) = split_pair(g, &layout.w1, &layout.b1);
        outer_acc(gw, gb, &dz, &x);
    }
    Ok(grad)
}

/// Disjoint mutable views of a weight block and the bias block after it.
fn split_pair<'a>(g: &'a mut [f64], w: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = g.split_at_mut(w.end);
    (&mut head[w.clone()], &mut tail[..b.len()])
}

/// Training stage that produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Pretrain,
    /// Speaker-independent control model.
    Sic,
    /// Speaker-independent dysarthria model.
    Sid,
    /// Speaker-dependent dysarthria model.
    Sdd,
}

impl Stage {
    pub fn tag(self) -> u8 {
        match self {
            Stage::Pretrain => 0,
            Stage::Sic => 1,
            Stage::Sid => 2,
            Stage::Sdd => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Stage::Pretrain),
            1 => Some(Stage::Sic),
            2 => Some(Stage::Sid),
            3 => Some(Stage::Sdd),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Sic => "SIC",
            Stage::Sid => "SID",
            Stage::Sdd => "SDD",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "SIC" | "sic" => Ok(Stage::Sic),
            "SID" | "sid" => Ok(Stage::Sid),
            "SDD" | "sdd" => Ok(Stage::Sdd),
            _ => Err(EncoderError::UnknownStage(s.into())),
        }
    }
}

/// Encoder parameters plus provenance.
///
/// `generation` counts training stages since initialization, so a chain of
/// checkpoints is strictly ordered without relying on wall-clock time.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCheckpoint {
    pub params: EncoderParams,
    pub stage: Stage,
    pub seed: u64,
    pub config_digest: u64,
    pub generation: u32,
}

impl EncoderCheckpoint {
    /// A fresh, untrained checkpoint.
    pub fn pretrain(params: EncoderParams, seed: u64) -> Self {
        let mut params = params;
        params.quantize();
        Self {
            params,
            stage: Stage::Pretrain,
            seed,
            config_digest: 0,
            generation: 0,
        }
    }

    pub fn dims(&self) -> Dims {
        self.params.dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(frames: usize, dim: usize, seed: u64) -> FeatureSequence {
        let mut rng = rng_for(seed, "test_feats");
        let n = Normal::new(0.0f32, 1.0).unwrap();
        FeatureSequence::new(frames, dim, (0..frames * dim).map(|_| n.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_encoder(4, 8, 3, 7).unwrap();
        let b = init_encoder(4, 8, 3, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.b1().iter().chain(a.b2()).chain(a.bce()).chain(a.bctc()).all(|&v| v == 0.0));
        assert_ne!(a, init_encoder(4, 8, 3, 8).unwrap());
        assert!(matches!(init_encoder(0, 8, 3, 7), Err(EncoderError::InvalidDims(_))));
    }

    #[test]
    fn init_variance_matches_fan_in() {
        let d_in = 10;
        let p = init_encoder(d_in, 10_000, 1, 11).unwrap();
        let w = p.w1();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let target = 1.0 / d_in as f64;
        assert!((var - target).abs() / target < 0.05, "var {var}");
    }

    #[test]
    fn zero_weights_give_constant_embedding() {
        let dims = Dims::new(3, 4, 2).unwrap();
        let mut p = EncoderParams::zeros(dims);
        p.b2_mut().copy_from_slice(&[0.5, -1.5]);
        let out = forward(&p, &feats(3, 3, 1)).unwrap();
        for t in 0..3 {
            assert_eq!(out.embedding(t), &[0.5, -1.5]);
        }
    }

    #[test]
    fn single_frame_gives_single_row_and_dim_mismatch_is_reported() {
        let p = init_encoder(3, 4, 2, 0).unwrap();
        let out = forward(&p, &feats(1, 3, 2)).unwrap();
        assert_eq!(out.embeddings.len(), 2);
        assert_eq!(out.ctc_logits.len(), NUM_TOKENS);
        assert_eq!(
            forward(&p, &feats(1, 4, 2)),
            Err(EncoderError::DimMismatch { expected: 3, got: 4 })
        );
    }

    #[test]
    fn forward_is_deterministic() {
        let p = init_encoder(5, 6, 3, 9).unwrap();
        let f = feats(4, 5, 3);
        assert_eq!(forward(&p, &f).unwrap(), forward(&p, &f).unwrap());
    }

    #[test]
    fn utterance_embedding_ignores_later_frames() {
        let p = init_encoder(3, 5, 2, 4).unwrap();
        let f = feats(4, 3, 5);
        let rows: Vec<Vec<f32>> = f.rows().map(|r| r.to_vec()).collect();
        let permuted = FeatureSequence::from_rows(&[rows[0].clone(), rows[3].clone(), rows[1].clone(), rows[2].clone()]).unwrap();
        let a = forward(&p, &f).unwrap();
        let b = forward(&p, &permuted).unwrap();
        assert_eq!(utterance_embedding(&a), utterance_embedding(&b));
        assert_eq!(a.ce_logits, b.ce_logits);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = init_encoder(3, 5, 2, 4).unwrap();
        let f = feats(3, 3, 6);
        let up = Upstream {
            embeddings: Some(vec![0.0; 6]),
            ce_logits: Some([0.0; NUM_CLASSES]),
            ctc_logits: Some(vec![0.0; 3 * NUM_TOKENS]),
        };
        let g = backward(&p, &f, &up).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ctc_head_gradient_is_local_to_its_frame() {
        let p = init_encoder(3, 5, 2, 4).unwrap();
        let f = feats(3, 3, 6);
        let out = forward(&p, &f).unwrap();
        let mut dctc = vec![0.0; 3 * NUM_TOKENS];
        dctc[NUM_TOKENS + 4] = 1.0;
        let up = Upstream {
            ctc_logits: Some(dctc),
            ..Default::default()
        };
        let g = backward_from(&p, &f, &out, &up).unwrap();
        let row = &g.wctc()[4 * 2..5 * 2];
        assert_eq!(row, out.embedding(1));
        assert_eq!(g.bctc()[4], 1.0);
        assert_eq!(g.wctc().iter().filter(|v| **v != 0.0).count(), 2);
    }
}
