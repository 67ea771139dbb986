//! Deterministic synthetic corpora standing in for control, dysarthric,
//! target-speaker and synthesized-keyword speech.
//!
//! Frame 0 of every utterance carries the class signal; later frames are
//! jittered copies of it. The feature vector is split into a signal band
//! (class centroids live here) and a nuisance band that carries speaker
//! offsets and per-utterance variation but no class information for control
//! speech. Dysarthric roles scale the noise of both bands by
//! `1 + severity`, add a per-speaker idiosyncratic centroid drift, and carry
//! a class cue in the nuisance band that all dysarthric speakers share. An encoder trained on control speech learns
//! to ignore that band; one trained on dysarthric speech learns to use it.
//!
//! All randomness is keyed by `(seed, label)` through [`crate::seed`]:
//! centroids by the seed alone, speaker traits by speaker id (so a target
//! speaker looks the same in enrollment and evaluation), utterances by role,
//! speaker, class and index.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::dataset::{Manifest, Role, Utterance};
use crate::features::FeatureSequence;
use crate::label::{Label, NUM_CLASSES};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid corpus config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CorpusConfig {
    pub feature_dim: usize,
    /// Inclusive `(min, max)` frame count.
    pub frames_range: (usize, usize),
    #[cfg_attr(feature = "serde", serde(default = "default_n_classes"))]
    pub n_classes: usize,
    /// Typical distance between two class centroids.
    pub class_separation: f64,
    pub speaker_offset_scale: f64,
    pub dysarthria_severity: f64,
    pub samples_per_class: usize,
    pub seed: u64,
    /// Within-class standard deviation of the signal band for control speech.
    #[cfg_attr(feature = "serde", serde(default = "default_noise_scale"))]
    pub noise_scale: f64,
    /// Per-utterance standard deviation of the nuisance band (before the
    /// severity factor).
    #[cfg_attr(feature = "serde", serde(default = "default_nuisance_scale"))]
    pub nuisance_scale: f64,
    /// Class cue shared by all dysarthric speakers, placed in the nuisance band;
    /// a multiple of the separation, independent of severity.
    #[cfg_attr(feature = "serde", serde(default = "default_common_drift"))]
    pub common_drift: f64,
    /// Per-speaker dysarthric centroid drift, as a multiple of the separation at severity 1.
    #[cfg_attr(feature = "serde", serde(default = "default_speaker_drift"))]
    pub speaker_drift: f64,
    /// Standard deviation of frames 1.. around frame 0.
    #[cfg_attr(feature = "serde", serde(default = "default_frame_jitter"))]
    pub frame_jitter: f64,
}

#[cfg(feature = "serde")]
fn default_n_classes() -> usize {
    NUM_CLASSES
}
#[cfg(feature = "serde")]
fn default_noise_scale() -> f64 {
    CorpusConfig::default().noise_scale
}
#[cfg(feature = "serde")]
fn default_nuisance_scale() -> f64 {
    CorpusConfig::default().nuisance_scale
}
#[cfg(feature = "serde")]
fn default_common_drift() -> f64 {
    CorpusConfig::default().common_drift
}
#[cfg(feature = "serde")]
fn default_speaker_drift() -> f64 {
    CorpusConfig::default().speaker_drift
}
#[cfg(feature = "serde")]
fn default_frame_jitter() -> f64 {
    CorpusConfig::default().frame_jitter
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            frames_range: (3, 6),
            n_classes: NUM_CLASSES,
            class_separation: 5.0,
            speaker_offset_scale: 2.0,
            dysarthria_severity: 1.0,
            samples_per_class: 12,
            seed: 0,
            noise_scale: 0.5,
            nuisance_scale: 1.75,
            common_drift: 4.0,
            speaker_drift: 0.8,
            frame_jitter: 0.1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = SynthError::InvalidConfig;
        if self.feature_dim < 2 {
            return Err(bad("feature_dim must be at least 2"));
        }
        if self.frames_range.0 < 1 || self.frames_range.0 > self.frames_range.1 {
            return Err(bad("frames_range must satisfy 1 <= min <= max"));
        }
        if self.n_classes != NUM_CLASSES {
            return Err(bad("n_classes must be 11"));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(bad("class_separation must be positive"));
        }
        if self.samples_per_class < 1 {
            return Err(bad("samples_per_class must be at least 1"));
        }
        let nonneg = [
            self.speaker_offset_scale,
            self.dysarthria_severity,
            self.noise_scale,
            self.nuisance_scale,
            self.common_drift,
            self.speaker_drift,
            self.frame_jitter,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(bad("scales must be finite and non-negative"));
        }
        Ok(())
    }

    /// Width of the class-carrying band; the remaining dimensions are nuisance.
    pub fn signal_dims(&self) -> usize {
        self.feature_dim.div_ceil(2)
    }
}

/// A generated manifest with its feature matrices, aligned by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub manifest: Manifest,
    pub features: Vec<FeatureSequence>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// `NUM_CLASSES` random vectors of width `s` with pairwise distance about `scale`.
fn codebook(cfg: &CorpusConfig, label: &str, s: usize, scale: f64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(cfg.seed, label);
    (0..NUM_CLASSES)
        .map(|_| {
            let v = normal_vec(&mut rng, s, 1.0);
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
            v.iter().map(|x| x / norm * scale / core::f64::consts::SQRT_2).collect()
        })
        .collect()
}

struct SpeakerTraits {
    offset: Vec<f64>,
    drift: Vec<Vec<f64>>,
}

fn speaker_traits(cfg: &CorpusConfig, speaker: &str, severity: f64) -> SpeakerTraits {
    let mut rng = rng_for(cfg.seed, &format!("speaker/{speaker}"));
    let d = cfg.feature_dim;
    let s = cfg.signal_dims();
    let mut offset = normal_vec(&mut rng, d, cfg.speaker_offset_scale);
    // Speaker identity lives mostly in the nuisance band.
    for v in &mut offset[..s] {
        *v *= 0.2;
    }
    let scale = severity * cfg.speaker_drift * cfg.class_separation / libm::sqrt(s as f64);
    let drift = (0..NUM_CLASSES).map(|_| normal_vec(&mut rng, s, scale)).collect();
    SpeakerTraits { offset, drift }
}

struct Generator<'a> {
    cfg: &'a CorpusConfig,
    centroids: Vec<Vec<f64>>,
    common: Vec<Vec<f64>>,
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a CorpusConfig) -> Self {
        Self {
            cfg,
            centroids: codebook(cfg, "centroids", cfg.signal_dims(), cfg.class_separation),
            common: codebook(
                cfg,
                "dysarthric_cue",
                cfg.feature_dim - cfg.signal_dims(),
                cfg.class_separation * cfg.common_drift,
            ),
        }
    }

    fn utterance(
        &self,
        rng: &mut ChaCha8Rng,
        label: Label,
        traits: &SpeakerTraits,
        severity: f64,
        common_weight: f64,
        noise_scale: f64,
    ) -> FeatureSequence {
        let cfg = self.cfg;
        let (d, s) = (cfg.feature_dim, cfg.signal_dims());
        let c = label.index();
        let mut frame0 = Vec::with_capacity(d);
        for j in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            let v = if j < s {
                self.centroids[c][j] + traits.drift[c][j] + traits.offset[j] + noise_scale * (1.0 + severity) * z
            } else {
                traits.offset[j] + common_weight * self.common[c][j - s] + cfg.nuisance_scale * (1.0 + severity) * z
            };
            frame0.push(v);
        }
        let frames = rng.random_range(cfg.frames_range.0..=cfg.frames_range.1);
        let mut data = Vec::with_capacity(frames * d);
        data.extend(frame0.iter().map(|&v| v as f32));
        for _ in 1..frames {
            for &v in &frame0 {
                let z: f64 = StandardNormal.sample(rng);
                data.push((v + cfg.frame_jitter * z) as f32);
            }
        }
        FeatureSequence::new(frames, d, data).expect("generator produces finite features")
    }
}

fn class_tag(label: Label) -> String {
    if label.is_keyword() {
        format!("k{}", label.class_id())
    } else {
        "nk".into()
    }
}

/// Generates `samples_per_class` utterances for every (speaker, class) pair,
/// ordered by speaker, then class index, then sample.
pub fn generate_corpus(cfg: &CorpusConfig, role: Role, speaker_ids: &[String]) -> Result<SyntheticCorpus, SynthError> {
    cfg.validate()?;
    if speaker_ids.is_empty() {
        return Err(SynthError::InvalidConfig("speaker list is empty"));
    }
    let gen = Generator::new(cfg);
    let severity = if role.is_dysarthric() { cfg.dysarthria_severity } else { 0.0 };
    // The shared cue marks dysarthric speech as such and does not grow with
    // severity, so more severity only ever removes information.
    let cue = if role.is_dysarthric() { 1.0 } else { 0.0 };
    let mut records = Vec::new();
    let mut features = Vec::new();
    for speaker in speaker_ids {
        let traits = speaker_traits(cfg, speaker, severity);
        for label in Label::all() {
            for i in 0..cfg.samples_per_class {
                let utt_id = format!("{}-{}-{}-{}", role.as_str(), speaker, class_tag(label), i);
                let mut rng = rng_for(cfg.seed, &format!("utt/{utt_id}"));
                features.push(gen.utterance(&mut rng, label, &traits, severity, cue, cfg.noise_scale));
                records.push(Utterance {
                    feature_path: format!("feats/{utt_id}.pkws"),
                    utt_id,
                    speaker_id: speaker.clone(),
                    label,
                    role: Some(role),
                });
            }
        }
    }
    let manifest = Manifest::new(records, Some(role), None)
        .map_err(|_| SynthError::InvalidConfig("speaker ids must be distinct"))?
        .with_feature_dim(cfg.feature_dim);
    Ok(SyntheticCorpus { manifest, features })
}

/// Number of synthetic voices keyword samples are spread over.
pub const TTS_SPEAKERS: usize = 4;

/// Keyword-only samples from clean synthetic voices (speakers `tts-0..`),
/// `n_per_keyword` per keyword. Tagged with the control role.
pub fn generate_augment_keywords(cfg: &CorpusConfig, n_per_keyword: usize) -> Result<SyntheticCorpus, SynthError> {
    cfg.validate()?;
    if n_per_keyword < 1 {
        return Err(SynthError::InvalidConfig("n_per_keyword must be at least 1"));
    }
    let gen = Generator::new(cfg);
    let traits: Vec<SpeakerTraits> = (0..TTS_SPEAKERS)
        .map(|v| speaker_traits(cfg, &format!("tts-{v}"), 0.0))
        .collect();
    let mut records = Vec::new();
    let mut features = Vec::new();
    for label in Label::all().filter(|l| l.is_keyword()) {
        for i in 0..n_per_keyword {
            let voice = i % TTS_SPEAKERS;
            let speaker = format!("tts-{voice}");
            let utt_id = format!("tts-{}-{}", class_tag(label), i);
            let mut rng = rng_for(cfg.seed, &format!("utt/{utt_id}"));
            features.push(gen.utterance(&mut rng, label, &traits[voice], 0.0, 0.0, 0.5 * cfg.noise_scale));
            records.push(Utterance {
                feature_path: format!("feats/{utt_id}.pkws"),
                utt_id,
                speaker_id: speaker,
                label,
                role: Some(Role::Control),
            });
        }
    }
    let manifest = Manifest::new(records, Some(Role::Control), None)
        .expect("tts utterance ids are unique")
        .with_feature_dim(cfg.feature_dim);
    Ok(SyntheticCorpus { manifest, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::merge_datasets;

    fn speakers(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| String::from(*s)).collect()
    }

    #[test]
    fn counts_and_balance() {
        let cfg = CorpusConfig {
            samples_per_class: 3,
            ..Default::default()
        };
        let c = generate_corpus(&cfg, Role::Control, &speakers(&["a", "b"])).unwrap();
        assert_eq!(c.manifest.len(), 66);
        assert_eq!(c.features.len(), 66);
        assert_eq!(c.manifest.class_histogram(), [6; NUM_CLASSES]);
        for f in &c.features {
            assert!((3..=6).contains(&f.frames()));
            assert_eq!(f.dim(), 32);
        }
    }

    #[test]
    fn same_config_is_bitwise_identical() {
        let cfg = CorpusConfig::default();
        let a = generate_corpus(&cfg, Role::Uncontrol, &speakers(&["x"])).unwrap();
        let b = generate_corpus(&cfg, Role::Uncontrol, &speakers(&["x"])).unwrap();
        assert_eq!(a, b);
        let other = CorpusConfig { seed: 1, ..cfg };
        assert_ne!(a.features, generate_corpus(&other, Role::Uncontrol, &speakers(&["x"])).unwrap().features);
    }

    #[test]
    fn later_frames_jitter_frame_zero() {
        let cfg = CorpusConfig::default();
        let c = generate_corpus(&cfg, Role::Control, &speakers(&["a"])).unwrap();
        let f = &c.features[0];
        for t in 1..f.frames() {
            for (a, b) in f.row(0).iter().zip(f.row(t)) {
                assert!((a - b).abs() < 1.0);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let s = speakers(&["a"]);
        let bad = [
            CorpusConfig { feature_dim: 1, ..Default::default() },
            CorpusConfig { frames_range: (4, 3), ..Default::default() },
            CorpusConfig { frames_range: (0, 3), ..Default::default() },
            CorpusConfig { class_separation: 0.0, ..Default::default() },
            CorpusConfig { n_classes: 10, ..Default::default() },
            CorpusConfig { samples_per_class: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(generate_corpus(&cfg, Role::Control, &s).is_err(), "{cfg:?}");
        }
        assert!(generate_corpus(&CorpusConfig::default(), Role::Control, &[]).is_err());
    }

    #[test]
    fn augment_is_keyword_only_and_additive() {
        let cfg = CorpusConfig::default();
        let aug = generate_augment_keywords(&cfg, 5).unwrap();
        assert_eq!(aug.manifest.len(), 50);
        assert!(aug.manifest.records().iter().all(|r| r.label.is_keyword() && r.speaker_id.starts_with("tts-")));
        assert_eq!(aug, generate_augment_keywords(&cfg, 5).unwrap());

        let dc = generate_corpus(&cfg, Role::Control, &speakers(&["dc0"])).unwrap();
        let merged = merge_datasets(&[dc.manifest.clone(), aug.manifest]).unwrap();
        let before = dc.manifest.class_histogram();
        let after = merged.class_histogram();
        for i in 0..10 {
            assert_eq!(after[i], before[i] + 5);
        }
        assert_eq!(after[10], before[10]);
        assert!(generate_augment_keywords(&cfg, 0).is_err());
    }

    #[test]
    fn target_speaker_traits_are_shared_across_roles() {
        let cfg = CorpusConfig { noise_scale: 0.0, nuisance_scale: 0.0, frame_jitter: 0.0, ..Default::default() };
        let s = speakers(&["t0"]);
        let a = generate_corpus(&cfg, Role::TargetEnroll, &s).unwrap();
        let b = generate_corpus(&cfg, Role::TargetEval, &s).unwrap();
        assert_eq!(a.features[0].row(0), b.features[0].row(0));
        assert_ne!(a.manifest.records()[0].utt_id, b.manifest.records()[0].utt_id);
    }
}
