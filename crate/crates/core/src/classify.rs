//! Prototype construction and the three classification methods: prototype
//! cosine matching (PB-C), nearest enrollment neighbours (KNN-C), and direct
//! model prediction from the CE or CTC head.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::ctc::{self, NUM_TOKENS};
use crate::encoder::{forward, EncoderError, EncoderOutput, EncoderParams};
use crate::features::FeatureSequence;
use crate::label::{argmax_first, Label, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("enrollment has no utterances for class(es) {}", join_labels(.0))]
    MissingClass(Vec<Label>),
    #[error("prototype for class {0} is the zero vector")]
    ZeroPrototype(Label),
    #[error("cosine similarity of a zero or non-finite vector")]
    ZeroVector,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("enrollment set is empty")]
    EmptyEnrollment,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("unknown {0}")]
    Unknown(&'static str),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

fn join_labels(labels: &[Label]) -> alloc::string::String {
    let parts: Vec<alloc::string::String> = labels.iter().map(|l| alloc::format!("{l}")).collect();
    parts.join(", ")
}

/// How an utterance-level vector is read off the per-frame embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EmbeddingMode {
    /// Row 0 only.
    #[default]
    FirstFrame,
    /// Mean over all frames.
    MeanFrames,
}

impl EmbeddingMode {
    pub fn extract(self, out: &EncoderOutput) -> Vec<f64> {
        match self {
            EmbeddingMode::FirstFrame => out.embedding(0).to_vec(),
            EmbeddingMode::MeanFrames => {
                let mut v = vec![0.0; out.d_emb];
                for t in 0..out.frames {
                    for (a, b) in v.iter_mut().zip(out.embedding(t)) {
                        *a += b;
                    }
                }
                v.iter_mut().for_each(|a| *a /= out.frames as f64);
                v
            }
        }
    }
}

/// Embeds one utterance with the given encoder.
pub fn embed(params: &EncoderParams, feats: &FeatureSequence, mode: EmbeddingMode) -> Result<Vec<f64>, ClassifyError> {
    Ok(mode.extract(&forward(params, feats)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Pbc,
    Knn,
    ModelCe,
    ModelCtc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pbc => "pbc",
            Method::Knn => "knn",
            Method::ModelCe => "model-ce",
            Method::ModelCtc => "model-ctc",
        }
    }
}

impl FromStr for Method {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pbc" => Ok(Method::Pbc),
            "knn" => Ok(Method::Knn),
            "model-ce" => Ok(Method::ModelCe),
            "model-ctc" => Ok(Method::ModelCtc),
            _ => Err(ClassifyError::Unknown("method")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A classification decision with per-class scores in class index order.
///
/// Scores are cosine similarities (PB-C), the best similarity per class
/// (KNN-C, `-inf` for classes absent from the enrollment), CE logits, or
/// per-class maximum frame logits of the CTC head.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub scores: [f64; NUM_CLASSES],
    pub method: Method,
}

impl Prediction {
    pub fn top_score(&self) -> f64 {
        self.scores[self.label.index()]
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, ClassifyError> {
    if a.len() != b.len() {
        return Err(ClassifyError::LengthMismatch(a.len(), b.len()));
    }
    let na = libm::sqrt(a.iter().map(|v| v * v).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|v| v * v).sum::<f64>());
    if !(na > 0.0 && na.is_finite() && nb > 0.0 && nb.is_finite()) {
        return Err(ClassifyError::ZeroVector);
    }
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// One unnormalized mean embedding per class, indexed by `Label::index`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    prototypes: Vec<Vec<f64>>,
}

impl PrototypeSet {
    /// Builds a set from eleven vectors in class index order.
    pub fn from_vectors(prototypes: Vec<Vec<f64>>) -> Result<Self, ClassifyError> {
        if prototypes.len() != NUM_CLASSES {
            let present = prototypes.len();
            return Err(ClassifyError::MissingClass(Label::all().skip(present).collect()));
        }
        for (i, p) in prototypes.iter().enumerate() {
            if p.len() != prototypes[0].len() {
                return Err(ClassifyError::LengthMismatch(prototypes[0].len(), p.len()));
            }
            if p.iter().any(|v| !v.is_finite()) || p.iter().all(|&v| v == 0.0) {
                return Err(ClassifyError::ZeroPrototype(Label::from_index(i).unwrap()));
            }
        }
        Ok(Self { prototypes })
    }

    pub fn get(&self, label: Label) -> &[f64] {
        &self.prototypes[label.index()]
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Label, &[f64])> {
        Label::all().zip(self.prototypes.iter().map(Vec::as_slice))
    }
}

/// Averages already-computed enrollment embeddings per class.
pub fn prototypes_from_embeddings<E: AsRef<[f64]>>(items: &[(Label, E)]) -> Result<PrototypeSet, ClassifyError> {
    let dim = items.first().map_or(0, |(_, e)| e.as_ref().len());
    let mut sums = vec![vec![0.0; dim]; NUM_CLASSES];
    let mut counts = [0usize; NUM_CLASSES];
    for (label, e) in items {
        let e = e.as_ref();
        if e.len() != dim {
            return Err(ClassifyError::LengthMismatch(dim, e.len()));
        }
        let i = label.index();
        counts[i] += 1;
        for (s, v) in sums[i].iter_mut().zip(e) {
            *s += v;
        }
    }
    let missing: Vec<Label> = Label::all().filter(|l| counts[l.index()] == 0).collect();
    if !missing.is_empty() {
        return Err(ClassifyError::MissingClass(missing));
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        let n = c as f64;
        s.iter_mut().for_each(|v| *v /= n);
    }
    PrototypeSet::from_vectors(sums)
}

/// Class prototypes as the mean utterance embedding of each class's
/// enrollment speech.
pub fn build_prototypes(
    enroll: &[(Label, &FeatureSequence)],
    params: &EncoderParams,
    mode: EmbeddingMode,
) -> Result<PrototypeSet, ClassifyError> {
    let embedded = enroll
        .iter()
        .map(|&(l, f)| Ok((l, embed(params, f, mode)?)))
        .collect::<Result<Vec<_>, ClassifyError>>()?;
    prototypes_from_embeddings(&embedded)
}

/// Cosine match of a test embedding against every prototype; ties go to the
/// lowest class index.
pub fn pbc_from_embedding(embedding: &[f64], protos: &PrototypeSet) -> Result<Prediction, ClassifyError> {
    let mut scores = [0.0; NUM_CLASSES];
    for (s, (_, p)) in scores.iter_mut().zip(protos.iter()) {
        *s = cosine_similarity(embedding, p)?;
    }
    Ok(Prediction {
        label: Label::from_index(argmax_first(&scores)).unwrap(),
        scores,
        method: Method::Pbc,
    })
}

pub fn pbc_classify(
    test: &FeatureSequence,
    params: &EncoderParams,
    protos: &PrototypeSet,
    mode: EmbeddingMode,
) -> Result<Prediction, ClassifyError> {
    pbc_from_embedding(&embed(params, test, mode)?, protos)
}

/// Majority vote among the `k` most similar enrollment embeddings.
///
/// Neighbours are ranked by similarity, then class index, then enrollment
/// order. A tied vote goes to the label whose best neighbour ranks highest.
pub fn knn_from_embedding<E: AsRef<[f64]>>(
    embedding: &[f64],
    enroll: &[(Label, E)],
    k: usize,
) -> Result<Prediction, ClassifyError> {
    if enroll.is_empty() {
        return Err(ClassifyError::EmptyEnrollment);
    }
    if k == 0 {
        return Err(ClassifyError::InvalidK);
    }
    let mut ranked = Vec::with_capacity(enroll.len());
    let mut scores = [f64::NEG_INFINITY; NUM_CLASSES];
    for (pos, (label, e)) in enroll.iter().enumerate() {
        let sim = cosine_similarity(embedding, e.as_ref())?;
        let i = label.index();
        scores[i] = scores[i].max(sim);
        ranked.push((sim, i, pos));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let top = &ranked[..k.min(ranked.len())];
    let mut votes = [0usize; NUM_CLASSES];
    for &(_, i, _) in top {
        votes[i] += 1;
    }
    let most = votes.iter().copied().max().unwrap_or(0);
    // The first ranked neighbour whose label has the most votes.
    let winner = top.iter().find(|&&(_, i, _)| votes[i] == most).unwrap().1;
    Ok(Prediction {
        label: Label::from_index(winner).unwrap(),
        scores,
        method: Method::Knn,
    })
}

pub fn knn_classify(
    test: &FeatureSequence,
    params: &EncoderParams,
    enroll: &[(Label, &FeatureSequence)],
    k: usize,
    mode: EmbeddingMode,
) -> Result<Prediction, ClassifyError> {
    if enroll.is_empty() {
        return Err(ClassifyError::EmptyEnrollment);
    }
    let embedded = enroll
        .iter()
        .map(|&(l, f)| Ok((l, embed(params, f, mode)?)))
        .collect::<Result<Vec<_>, ClassifyError>>()?;
    knn_from_embedding(&embed(params, test, mode)?, &embedded, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Head {
    Ce,
    Ctc,
}

pub fn predict_from_output(out: &EncoderOutput, head: Head) -> Prediction {
    match head {
        Head::Ce => Prediction {
            label: Label::from_index(argmax_first(&out.ce_logits)).unwrap(),
            scores: out.ce_logits,
            method: Method::ModelCe,
        },
        Head::Ctc => {
            let mut scores = [f64::NEG_INFINITY; NUM_CLASSES];
            for t in 0..out.frames {
                for l in Label::all() {
                    let s = &mut scores[l.index()];
                    *s = s.max(out.ctc_row(t)[ctc::token_for(l)]);
                }
            }
            Prediction {
                label: ctc::decode_label(&out.ctc_logits, NUM_TOKENS),
                scores,
                method: Method::ModelCtc,
            }
        }
    }
}

/// Classifies directly from the encoder's CE head or greedy CTC decode.
pub fn model_predict(test: &FeatureSequence, params: &EncoderParams, head: Head) -> Result<Prediction, ClassifyError> {
    Ok(predict_from_output(&forward(params, test)?, head))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Dims, EncoderParams};

    fn l(c: i64) -> Label {
        Label::new(c).unwrap()
    }

    /// Eleven distinct prototypes, with class 0 = e0 and class -1 = e1.
    fn protos() -> PrototypeSet {
        let mut v = vec![vec![0.0; 12]; NUM_CLASSES];
        v[0][0] = 1.0;
        v[10][1] = 1.0;
        for (i, p) in v.iter_mut().enumerate().take(10).skip(1) {
            p[i + 2] = 1.0;
        }
        PrototypeSet::from_vectors(v).unwrap()
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(ClassifyError::ZeroVector));
    }

    #[test]
    fn pbc_picks_nearest_direction() {
        let mut x = vec![0.0; 12];
        x[0] = 0.9;
        x[1] = 0.1;
        let p = pbc_from_embedding(&x, &protos()).unwrap();
        assert_eq!(p.label, l(0));
        // cos to e0 = 0.9/sqrt(0.82), to e1 = 0.1/sqrt(0.82).
        assert!((p.scores[0] - 0.9 / libm::sqrt(0.82)).abs() < 1e-12);
        assert!((p.scores[10] - 0.1 / libm::sqrt(0.82)).abs() < 1e-12);
    }

    #[test]
    fn pbc_self_match_and_tie_break() {
        let ps = protos();
        for (label, v) in ps.iter() {
            assert_eq!(pbc_from_embedding(v, &ps).unwrap().label, label);
        }
        let mut x = vec![0.0; 12];
        x[4] = 1.0; // class 2
        x[7] = 1.0; // class 5
        assert_eq!(pbc_from_embedding(&x, &ps).unwrap().label, l(2));
        let mut y = vec![0.0; 12];
        y[1] = 1.0; // non-keyword
        y[11] = 1.0; // class 9
        assert_eq!(pbc_from_embedding(&y, &ps).unwrap().label, l(9));
    }

    #[test]
    fn prototypes_average_and_report_missing() {
        let items = vec![(l(3), vec![1.0, 0.0]), (l(3), vec![0.0, 1.0])];
        match prototypes_from_embeddings(&items) {
            Err(ClassifyError::MissingClass(m)) => assert_eq!(m.len(), 10),
            other => panic!("{other:?}"),
        }
        let mut all: Vec<(Label, Vec<f64>)> = Label::all().map(|lb| (lb, vec![1.0, 1.0])).collect();
        all.extend(items);
        all.retain(|(lb, v)| *lb != l(3) || v != &vec![1.0, 1.0]);
        let ps = prototypes_from_embeddings(&all).unwrap();
        assert_eq!(ps.get(l(3)), &[0.5, 0.5]);
        let without7: Vec<_> = all.iter().filter(|(lb, _)| *lb != l(7)).cloned().collect();
        assert_eq!(
            prototypes_from_embeddings(&without7),
            Err(ClassifyError::MissingClass(vec![l(7)]))
        );
    }

    #[test]
    fn zero_prototype_is_rejected() {
        let all: Vec<(Label, Vec<f64>)> = Label::all()
            .map(|lb| (lb, if lb == l(4) { vec![0.0, 0.0] } else { vec![1.0, 0.0] }))
            .collect();
        assert_eq!(prototypes_from_embeddings(&all), Err(ClassifyError::ZeroPrototype(l(4))));
    }

    #[test]
    fn knn_majority_and_exact_match() {
        let enroll = vec![
            (l(1), vec![1.0, 0.0]),
            (l(1), vec![0.9, 0.2]),
            (l(2), vec![0.95, 0.05]),
            (l(3), vec![0.0, 1.0]),
        ];
        let x = [1.0, 0.02];
        assert_eq!(knn_from_embedding(&x, &enroll, 1).unwrap().label, l(1));
        assert_eq!(knn_from_embedding(&x, &enroll, 3).unwrap().label, l(1));
        assert_eq!(knn_from_embedding(&[0.0, 1.0], &enroll, 1).unwrap().label, l(3));
        // Vote tie {1, 2} at k=2: the best-ranked neighbour's label wins.
        assert_eq!(knn_from_embedding(&[0.95, 0.05], &enroll, 2).unwrap().label, l(2));
        let empty: Vec<(Label, Vec<f64>)> = vec![];
        assert_eq!(knn_from_embedding(&x, &empty, 1), Err(ClassifyError::EmptyEnrollment));
        assert_eq!(knn_from_embedding(&x, &enroll, 0), Err(ClassifyError::InvalidK));
    }

    #[test]
    fn model_predict_ce_argmax() {
        let dims = Dims::new(2, 2, 2).unwrap();
        let mut p = EncoderParams::zeros(dims);
        p.bce_mut()[4] = 1.0;
        let f = FeatureSequence::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(model_predict(&f, &p, Head::Ce).unwrap().label, l(4));
        // Blank wins every frame -> empty decode -> non-keyword.
        p.bctc_mut()[0] = 1.0;
        assert_eq!(model_predict(&f, &p, Head::Ctc).unwrap().label, Label::NON_KEYWORD);
    }

    #[test]
    fn mean_frames_mode_averages_rows() {
        let dims = Dims::new(1, 1, 1).unwrap();
        let mut p = EncoderParams::zeros(dims);
        p.w1_mut()[0] = 1.0;
        p.w2_mut()[0] = 1.0;
        let f = FeatureSequence::new(2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(embed(&p, &f, EmbeddingMode::MeanFrames).unwrap(), vec![2.0]);
        assert_eq!(embed(&p, &f, EmbeddingMode::FirstFrame).unwrap(), vec![1.0]);
    }
}
