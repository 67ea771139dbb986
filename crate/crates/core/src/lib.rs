//! Prototype-based few-shot keyword spotting.
//!
//! This crate holds the numerical half of the toolkit: the frame-wise content
//! encoder with analytic gradients, the CE / supervised-contrastive / CTC
//! losses, the staged trainer, prototype and nearest-neighbour classification,
//! and the FAR + FRR metric. It is `no_std` and only needs `alloc`; file
//! formats, the pipeline driver and the CLI live in the `pbkws` crate.

#![no_std]

extern crate alloc;

pub mod classify;
pub mod ctc;
pub mod dataset;
pub mod encoder;
pub mod features;
pub mod label;
pub mod losses;
pub mod metrics;
pub mod seed;
pub mod synth;
pub mod trainer;

pub use classify::{EmbeddingMode, Method, Prediction, PrototypeSet};
pub use dataset::{Manifest, Role, Split, Utterance};
pub use encoder::{Dims, EncoderCheckpoint, EncoderOutput, EncoderParams, Stage};
pub use features::FeatureSequence;
pub use label::Label;
pub use losses::{LossSetting, SclConfig};
pub use metrics::{EvalReport, OutcomeCounts};
pub use trainer::{Optimizer, TrainConfig};
