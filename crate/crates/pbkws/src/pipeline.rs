//! End-to-end run: synthetic corpora, three-stage fine-tuning, enrollment,
//! classification and scoring, all derived from one seed.
//!
//! Output layout under the chosen directory:
//!
//! ```text
//! data/{control,uncontrol,enroll,eval[,augment]}.jsonl, data/feats/*.pkws
//! checkpoints/{init,sic,sid,sdd}.ckpt
//! history/{sic,sid,sdd}.csv
//! prototypes/{init,sic,sid,sdd}.json
//! predictions/<model>-<method>.tsv
//! reports/<model>-<method>.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pbkws_core::classify::{
    embed, knn_from_embedding, pbc_from_embedding, predict_from_output, prototypes_from_embeddings,
    EmbeddingMode, Head, Prediction, PrototypeSet,
};
use pbkws_core::dataset::{merge_datasets, split_enrollment, Manifest, Role};
use pbkws_core::encoder::{forward, init_encoder, EncoderCheckpoint, EncoderParams};
use pbkws_core::features::FeatureSequence;
use pbkws_core::label::Label;
use pbkws_core::losses::BaseLoss;
use pbkws_core::metrics::{tally_outcomes, EvalReport};
use pbkws_core::seed::derive_seed;
use pbkws_core::synth::{generate_augment_keywords, generate_corpus, CorpusConfig, SyntheticCorpus};
use pbkws_core::trainer::{run_three_stage, EpochRecord, Sample, StagePlan, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::formats::checkpoint::{checkpoint_digest, save_checkpoint};
use crate::formats::features::encode_features;
use crate::manifest::{render_manifest, to_samples, write_corpus};
use crate::predictions::{write_predictions, PredictionRow};
use crate::prototypes::{write_prototypes, PrototypeFile};
use crate::report::write_report;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Corpus shape; its `seed` is replaced by one derived from the run seed.
    pub corpus: CorpusConfig,
    pub control_speakers: usize,
    pub uncontrol_speakers: usize,
    pub enroll_per_class: usize,
    pub eval_per_class: usize,
    /// Synthesized keywords per keyword; when non-zero, stage 2 trains on
    /// control + uncontrol + synthesized data.
    pub augment_per_keyword: usize,
    /// Fraction of the enrollment speech used for stage-3 training.
    pub enroll_train_fraction: f64,
    pub hidden: usize,
    pub d_emb: usize,
    /// Stage 1, 2, 3 settings; their `seed` fields are derived from the run seed.
    pub stages: [TrainConfig; 3],
    pub knn_k: usize,
    pub embedding_mode: EmbeddingMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let stage = TrainConfig::default();
        Self {
            corpus: CorpusConfig::default(),
            control_speakers: 8,
            uncontrol_speakers: 8,
            enroll_per_class: 6,
            eval_per_class: 18,
            augment_per_keyword: 0,
            enroll_train_fraction: 0.8,
            hidden: 32,
            d_emb: 16,
            stages: [stage.clone(), stage.clone(), stage],
            knn_k: 1,
            embedding_mode: EmbeddingMode::FirstFrame,
        }
    }
}

pub fn load_pipeline_config(path: &Path) -> Result<PipelineConfig, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Reports keyed by `<model>-<method>`, e.g. `sdd-pbc`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub reports: BTreeMap<String, EvalReport>,
    pub checkpoints: BTreeMap<String, PathBuf>,
}

impl PipelineSummary {
    pub fn score(&self, key: &str) -> f64 {
        self.reports[key].score
    }

    pub fn to_json(&self) -> serde_json::Value {
        let scores: BTreeMap<&str, f64> = self.reports.iter().map(|(k, r)| (k.as_str(), r.score)).collect();
        serde_json::json!({ "command": "pipeline", "scores": scores })
    }
}

fn speakers(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn corpus_samples(c: &SyntheticCorpus) -> Vec<Sample> {
    to_samples(&c.manifest, c.features.clone())
}

/// Hex SHA-256 over a manifest's text and its encoded features.
pub fn enrollment_digest(manifest: &Manifest, features: &[FeatureSequence]) -> String {
    let mut h = Sha256::new();
    h.update(render_manifest(manifest).as_bytes());
    for f in features {
        h.update(encode_features(f));
    }
    hex::encode(h.finalize())
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = String::from("epoch,mean_loss,lr_last_step\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.mean_loss, r.lr_last_step));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Embeds utterances in parallel; output order follows input order.
pub fn embed_all(params: &EncoderParams, feats: &[FeatureSequence], mode: EmbeddingMode) -> Result<Vec<Vec<f64>>, Error> {
    Ok(feats
        .par_iter()
        .map(|f| embed(params, f, mode))
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn classify_pbc(
    params: &EncoderParams,
    protos: &PrototypeSet,
    test: &[FeatureSequence],
    mode: EmbeddingMode,
) -> Result<Vec<Prediction>, Error> {
    let emb = embed_all(params, test, mode)?;
    Ok(emb
        .par_iter()
        .map(|e| pbc_from_embedding(e, protos))
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn classify_knn(
    params: &EncoderParams,
    enroll: &[(Label, Vec<f64>)],
    test: &[FeatureSequence],
    k: usize,
    mode: EmbeddingMode,
) -> Result<Vec<Prediction>, Error> {
    let emb = embed_all(params, test, mode)?;
    Ok(emb
        .par_iter()
        .map(|e| knn_from_embedding(e, enroll, k))
        .collect::<Result<Vec<_>, _>>()?)
}

pub fn classify_model(params: &EncoderParams, test: &[FeatureSequence], head: Head) -> Result<Vec<Prediction>, Error> {
    Ok(test
        .par_iter()
        .map(|f| forward(params, f).map(|o| predict_from_output(&o, head)))
        .collect::<Result<Vec<_>, _>>()?)
}

fn head_for(config: &TrainConfig) -> Head {
    match config.loss_setting.base {
        BaseLoss::Ce => Head::Ce,
        BaseLoss::Ctc => Head::Ctc,
    }
}

struct EvalSet<'a> {
    manifest: &'a Manifest,
    features: &'a [FeatureSequence],
    out: &'a Path,
}

impl EvalSet<'_> {
    fn score(&self, key: &str, ckpt_digest: &str, preds: &[Prediction]) -> Result<EvalReport, Error> {
        let rows: Vec<PredictionRow> = self
            .manifest
            .records()
            .iter()
            .zip(preds)
            .map(|(r, p)| PredictionRow {
                utt_id: r.utt_id.clone(),
                label: p.label,
                top_score: p.top_score(),
            })
            .collect();
        write_predictions(&rows, &self.out.join("predictions").join(format!("{key}.tsv")))?;
        let labels: Vec<Label> = preds.iter().map(|p| p.label).collect();
        let gold: Vec<Label> = self.manifest.records().iter().map(|r| r.label).collect();
        let report = EvalReport::new(key, ckpt_digest, tally_outcomes(&labels, &gold)?)?;
        write_report(&report, &self.out.join("reports").join(format!("{key}.json")))?;
        Ok(report)
    }
}

/// Runs the whole workflow with `threads` workers (0 = rayon default).
pub fn run_pipeline(config: &PipelineConfig, seed: u64, out: &Path, threads: usize) -> Result<PipelineSummary, Error> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    pool.install(|| run_pipeline_inner(config, seed, out))
}

fn run_pipeline_inner(config: &PipelineConfig, seed: u64, out: &Path) -> Result<PipelineSummary, Error> {
    let data_dir = out.join("data");
    let corpus = CorpusConfig {
        seed: derive_seed(seed, "corpus"),
        ..config.corpus.clone()
    };
    let with_count = |n: usize| CorpusConfig {
        samples_per_class: n,
        ..corpus.clone()
    };

    let control = generate_corpus(&corpus, Role::Control, &speakers("dc", config.control_speakers))?;
    let uncontrol = generate_corpus(&corpus, Role::Uncontrol, &speakers("duc", config.uncontrol_speakers))?;
    let target = speakers("t", 1);
    let enroll = generate_corpus(&with_count(config.enroll_per_class), Role::TargetEnroll, &target)?;
    let eval = generate_corpus(&with_count(config.eval_per_class), Role::TargetEval, &target)?;
    write_corpus(&control, &data_dir, "control")?;
    write_corpus(&uncontrol, &data_dir, "uncontrol")?;
    write_corpus(&enroll, &data_dir, "enroll")?;
    write_corpus(&eval, &data_dir, "eval")?;

    let mut stage2 = corpus_samples(&uncontrol);
    if config.augment_per_keyword > 0 {
        let augment = generate_augment_keywords(&corpus, config.augment_per_keyword)?;
        write_corpus(&augment, &data_dir, "augment")?;
        // Merged training set: control + uncontrol + synthesized keywords.
        let parts = [&control, &uncontrol, &augment];
        let merged = merge_datasets(&parts.map(|c| c.manifest.clone()))?;
        let features = parts.iter().flat_map(|c| c.features.iter().cloned()).collect();
        stage2 = to_samples(&merged, features);
    }

    let (enroll_train, _) = split_enrollment(&enroll.manifest, config.enroll_train_fraction, derive_seed(seed, "split"))?;
    let train_ids: std::collections::HashSet<&str> =
        enroll_train.records().iter().map(|r| r.utt_id.as_str()).collect();
    let stage3: Vec<Sample> = corpus_samples(&enroll)
        .into_iter()
        .zip(enroll.manifest.records())
        .filter(|(_, r)| train_ids.contains(r.utt_id.as_str()))
        .map(|(s, _)| s)
        .collect();

    let mut configs = config.stages.clone();
    for (i, c) in configs.iter_mut().enumerate() {
        c.seed = derive_seed(seed, &format!("stage{}", i + 1));
    }
    let plan = StagePlan {
        stage1: corpus_samples(&control),
        stage2,
        stage3,
        configs: configs.clone(),
    };
    let init_seed = derive_seed(seed, "init");
    let init = EncoderCheckpoint::pretrain(
        init_encoder(corpus.feature_dim, config.hidden, config.d_emb, init_seed)?,
        init_seed,
    );
    let stages = run_three_stage(&plan, &init)?;

    let ckpt_dir = out.join("checkpoints");
    let models: [(&str, &EncoderCheckpoint); 4] = [
        ("init", &init),
        ("sic", &stages.sic.checkpoint),
        ("sid", &stages.sid.checkpoint),
        ("sdd", &stages.sdd.checkpoint),
    ];
    let mut checkpoints = BTreeMap::new();
    for (name, ckpt) in models {
        let path = ckpt_dir.join(format!("{name}.ckpt"));
        save_checkpoint(ckpt, &path)?;
        checkpoints.insert(name.to_string(), path);
    }
    for (name, outcome) in [("sic", &stages.sic), ("sid", &stages.sid), ("sdd", &stages.sdd)] {
        write_history(&outcome.history, &out.join("history").join(format!("{name}.csv")))?;
    }

    let eval_set = EvalSet {
        manifest: &eval.manifest,
        features: &eval.features,
        out,
    };
    let enroll_digest = enrollment_digest(&enroll.manifest, &enroll.features);
    let enroll_labels: Vec<Label> = enroll.manifest.records().iter().map(|r| r.label).collect();
    let mode = config.embedding_mode;
    let mut reports = BTreeMap::new();
    for (name, ckpt) in models {
        let digest = checkpoint_digest(ckpt);
        let params = &ckpt.params;
        let enroll_emb: Vec<(Label, Vec<f64>)> = enroll_labels
            .iter()
            .copied()
            .zip(embed_all(params, &enroll.features, mode)?)
            .collect();
        let protos = prototypes_from_embeddings(&enroll_emb)?;
        write_prototypes(
            &PrototypeFile::new(&protos, digest.clone(), enroll_digest.clone(), mode),
            &out.join("prototypes").join(format!("{name}.json")),
        )?;

        let key = format!("{name}-pbc");
        let preds = classify_pbc(params, &protos, eval_set.features, mode)?;
        reports.insert(key.clone(), eval_set.score(&key, &digest, &preds)?);

        if name == "sdd" {
            let key = format!("{name}-knn");
            let preds = classify_knn(params, &enroll_emb, eval_set.features, config.knn_k, mode)?;
            reports.insert(key.clone(), eval_set.score(&key, &digest, &preds)?);
        }
        let stage_index = match name {
            "sid" => Some(1),
            "sdd" => Some(2),
            _ => None,
        };
        if let Some(i) = stage_index {
            let key = format!("{name}-model");
            let preds = classify_model(params, eval_set.features, head_for(&configs[i]))?;
            reports.insert(key.clone(), eval_set.score(&key, &digest, &preds)?);
        }
    }
    Ok(PipelineSummary { reports, checkpoints })
}
