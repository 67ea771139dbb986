//! Command-line front end. Every subcommand prints one JSON summary line on
//! stdout; diagnostics go to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pbkws_core::classify::{prototypes_from_embeddings, EmbeddingMode, Head, Prediction};
use pbkws_core::dataset::Role;
use pbkws_core::encoder::{init_encoder, EncoderCheckpoint, Stage};
use pbkws_core::label::Label;
use pbkws_core::losses::LossSetting;
use pbkws_core::metrics::{tally_outcomes, EvalReport, MetricsError};
use pbkws_core::seed::derive_seed;
use pbkws_core::synth::{generate_augment_keywords, generate_corpus, CorpusConfig};
use pbkws_core::trainer::{train_stage, TrainConfig};
use serde_json::json;

use crate::error::Error;
use crate::formats::checkpoint::{checkpoint_digest, load_checkpoint, save_checkpoint};
use crate::manifest::{load_features, load_manifest, to_samples, write_corpus};
use crate::pipeline::{
    classify_knn, classify_model, classify_pbc, embed_all, enrollment_digest, load_pipeline_config, run_pipeline,
    write_history,
};
use crate::predictions::{read_predictions, write_predictions, PredictionRow};
use crate::prototypes::{read_prototypes, write_prototypes, PrototypeFile};
use crate::report::write_report;

/// Seed used when --seed is not given.
pub const DEFAULT_SEED: u64 = 7;

/// Prototype-based few-shot keyword spotting.
///
/// All randomness derives from --seed: each consumer uses the first eight
/// bytes of SHA-256(label || 0x00 || seed) with a fixed label ("corpus",
/// "init", "train", "stage1".."stage3", "split").
#[derive(Debug, Parser)]
#[command(name = "pbkws", version)]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Shared {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Directory all outputs are written under.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for feature loading and classification (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoleArg {
    Control,
    Uncontrol,
    TargetEnroll,
    TargetEval,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Control => Role::Control,
            RoleArg::Uncontrol => Role::Uncontrol,
            RoleArg::TargetEnroll => Role::TargetEnroll,
            RoleArg::TargetEval => Role::TargetEval,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Ce,
    Ctc,
    #[value(name = "ce+scl")]
    CeScl,
    #[value(name = "ctc+scl")]
    CtcScl,
}

impl From<LossArg> for LossSetting {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Ce => LossSetting::CE,
            LossArg::Ctc => LossSetting::CTC,
            LossArg::CeScl => LossSetting::CE_SCL,
            LossArg::CtcScl => LossSetting::CTC_SCL,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StageArg {
    Sic,
    Sid,
    Sdd,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Sic => Stage::Sic,
            StageArg::Sid => Stage::Sid,
            StageArg::Sdd => Stage::Sdd,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Pbc,
    Knn,
    Model,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeadArg {
    Ce,
    Ctc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    FirstFrame,
    MeanFrames,
}

impl From<ModeArg> for EmbeddingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::FirstFrame => EmbeddingMode::FirstFrame,
            ModeArg::MeanFrames => EmbeddingMode::MeanFrames,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (manifest + feature files).
    GenData {
        /// Corpus config JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "control")]
        role: RoleArg,
        /// Comma-separated speaker ids.
        #[arg(long, value_delimiter = ',', default_value = "s0")]
        speakers: Vec<String>,
        /// Generate N synthesized samples per keyword instead of a speaker corpus.
        #[arg(long)]
        augment: Option<usize>,
        /// Manifest file stem (default: the role name, or "augment").
        #[arg(long)]
        name: Option<String>,
    },
    /// Fine-tune an encoder on one manifest.
    Train {
        /// Starting checkpoint; a fresh encoder is initialized when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Training config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        /// Stage tag for the output checkpoint (default: the stage after --init's).
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 16)]
        emb: usize,
    },
    /// Build class prototypes from enrollment speech.
    Enroll {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long, value_enum, default_value = "first-frame")]
        mode: ModeArg,
    },
    /// Classify every utterance of a manifest.
    Classify {
        #[arg(long)]
        ckpt: PathBuf,
        /// Manifest of utterances to classify.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Prototype file (pbc).
        #[arg(long)]
        protos: Option<PathBuf>,
        /// Enrollment manifest (knn).
        #[arg(long)]
        enroll: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Output head (model).
        #[arg(long, value_enum, default_value = "ce")]
        head: HeadArg,
        #[arg(long, value_enum, default_value = "first-frame")]
        mode: ModeArg,
    },
    /// Score predictions against gold labels.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Method tag recorded in the report.
        #[arg(long, default_value = "predictions")]
        method: String,
        /// Checkpoint whose digest is recorded in the report.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Three-stage fine-tuning, enrollment, classification and scoring on synthetic data.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print checkpoint metadata.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn require_out(shared: &Shared) -> Result<&Path, Error> {
    shared
        .out
        .as_deref()
        .ok_or_else(|| Error::Usage("--out is required for this subcommand".into()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn rows(manifest: &pbkws_core::dataset::Manifest, preds: &[Prediction]) -> Vec<PredictionRow> {
    manifest
        .records()
        .iter()
        .zip(preds)
        .map(|(r, p)| PredictionRow {
            utt_id: r.utt_id.clone(),
            label: p.label,
            top_score: p.top_score(),
        })
        .collect()
}

fn next_stage(stage: Stage) -> Stage {
    match stage {
        Stage::Pretrain => Stage::Sic,
        Stage::Sic => Stage::Sid,
        Stage::Sid | Stage::Sdd => Stage::Sdd,
    }
}

/// Executes a parsed command and returns its summary.
pub fn execute(cli: &Cli) -> Result<serde_json::Value, Error> {
    let shared = &cli.shared;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(shared.threads)
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    pool.install(|| execute_inner(cli))
}

fn execute_inner(cli: &Cli) -> Result<serde_json::Value, Error> {
    let shared = &cli.shared;
    match &cli.command {
        Command::GenData {
            config,
            role,
            speakers,
            augment,
            name,
        } => {
            let out = require_out(shared)?;
            let mut cfg: CorpusConfig = match config {
                Some(p) => read_json(p)?,
                None => CorpusConfig::default(),
            };
            cfg.seed = derive_seed(shared.seed, "corpus");
            let (corpus, default_name) = match augment {
                Some(n) => (generate_augment_keywords(&cfg, *n)?, "augment"),
                None => {
                    let role = Role::from(*role);
                    (generate_corpus(&cfg, role, speakers)?, role.as_str())
                }
            };
            let path = write_corpus(&corpus, out, name.as_deref().unwrap_or(default_name))?;
            Ok(json!({
                "command": "gen-data",
                "manifest": path,
                "records": corpus.manifest.len(),
            }))
        }
        Command::Train {
            init,
            data,
            config,
            loss,
            stage,
            hidden,
            emb,
        } => {
            let out = require_out(shared)?;
            let manifest = load_manifest(data)?;
            let feats = load_features(data, &manifest)?;
            let d_in = feats.first().map(|f| f.dim()).ok_or(pbkws_core::trainer::TrainError::EmptyDataset)?;
            let mut cfg: TrainConfig = match config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            cfg.seed = derive_seed(shared.seed, "train");
            if let Some(l) = loss {
                cfg.loss_setting = (*l).into();
            }
            let start = match init {
                Some(p) => load_checkpoint(p)?,
                None => {
                    let s = derive_seed(shared.seed, "init");
                    EncoderCheckpoint::pretrain(init_encoder(d_in, *hidden, *emb, s)?, s)
                }
            };
            let stage = stage.map(Stage::from).unwrap_or_else(|| next_stage(start.stage));
            let outcome = train_stage(&start, &to_samples(&manifest, feats), &cfg, stage)?;
            let ckpt_path = out.join("model.ckpt");
            save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
            write_history(&outcome.history, &out.join("history.csv"))?;
            Ok(json!({
                "command": "train",
                "checkpoint": ckpt_path,
                "stage": stage.as_str(),
                "epochs": outcome.history.len(),
                "best_epoch": outcome.best_epoch,
                "best_loss": outcome.history[outcome.best_epoch - 1].mean_loss,
            }))
        }
        Command::Enroll { ckpt, enroll, mode } => {
            let out = require_out(shared)?;
            let model = load_checkpoint(ckpt)?;
            let manifest = load_manifest(enroll)?;
            let feats = load_features(enroll, &manifest)?;
            let mode = EmbeddingMode::from(*mode);
            let labels = manifest.records().iter().map(|r| r.label);
            let emb: Vec<(Label, Vec<f64>)> = labels.zip(embed_all(&model.params, &feats, mode)?).collect();
            let set = prototypes_from_embeddings(&emb)?;
            let file = PrototypeFile::new(&set, checkpoint_digest(&model), enrollment_digest(&manifest, &feats), mode);
            let path = out.join("prototypes.json");
            write_prototypes(&file, &path)?;
            Ok(json!({ "command": "enroll", "prototypes": path, "enrollment_utterances": manifest.len() }))
        }
        Command::Classify {
            ckpt,
            data,
            method,
            protos,
            enroll,
            k,
            head,
            mode,
        } => {
            let out = require_out(shared)?;
            let model = load_checkpoint(ckpt)?;
            let manifest = load_manifest(data)?;
            let feats = load_features(data, &manifest)?;
            let mode = EmbeddingMode::from(*mode);
            let preds = match method {
                MethodArg::Pbc => {
                    let p = protos
                        .as_ref()
                        .ok_or_else(|| Error::Usage("--protos is required for --method pbc".into()))?;
                    let set = read_prototypes(p)?.to_set()?;
                    classify_pbc(&model.params, &set, &feats, mode)?
                }
                MethodArg::Knn => {
                    let e = enroll
                        .as_ref()
                        .ok_or_else(|| Error::Usage("--enroll is required for --method knn".into()))?;
                    let em = load_manifest(e)?;
                    let ef = load_features(e, &em)?;
                    let labels = em.records().iter().map(|r| r.label);
                    let emb: Vec<(Label, Vec<f64>)> = labels.zip(embed_all(&model.params, &ef, mode)?).collect();
                    classify_knn(&model.params, &emb, &feats, *k, mode)?
                }
                MethodArg::Model => {
                    let head = match head {
                        HeadArg::Ce => Head::Ce,
                        HeadArg::Ctc => Head::Ctc,
                    };
                    classify_model(&model.params, &feats, head)?
                }
            };
            let path = out.join("predictions.tsv");
            write_predictions(&rows(&manifest, &preds), &path)?;
            Ok(json!({ "command": "classify", "predictions": path, "utterances": preds.len() }))
        }
        Command::Evaluate {
            pred,
            gold,
            method,
            ckpt,
        } => {
            let out = require_out(shared)?;
            let preds = read_predictions(pred)?;
            let text = std::fs::read_to_string(gold).map_err(|e| Error::io(gold, e))?;
            let gold_records = crate::manifest::parse_manifest(&text).map_err(|source| Error::Manifest {
                path: gold.clone(),
                source,
            })?;
            if preds.len() != gold_records.len() {
                return Err(MetricsError::LengthMismatch {
                    predictions: preds.len(),
                    gold: gold_records.len(),
                }
                .into());
            }
            for (i, (p, g)) in preds.iter().zip(&gold_records).enumerate() {
                if p.utt_id != g.utt_id {
                    return Err(Error::UttIdMismatch {
                        index: i,
                        predicted: p.utt_id.clone(),
                        gold: g.utt_id.clone(),
                    });
                }
            }
            let labels: Vec<Label> = preds.iter().map(|p| p.label).collect();
            let gold_labels: Vec<Label> = gold_records.iter().map(|r| r.label).collect();
            let digest = match ckpt {
                Some(p) => checkpoint_digest(&load_checkpoint(p)?),
                None => String::new(),
            };
            let report = EvalReport::new(method.clone(), digest, tally_outcomes(&labels, &gold_labels)?)?;
            let path = out.join("report.json");
            write_report(&report, &path)?;
            Ok(json!({
                "command": "evaluate",
                "report": path,
                "far": report.far,
                "frr": report.frr,
                "score": report.score,
            }))
        }
        Command::Pipeline { config } => {
            let out = require_out(shared)?;
            let cfg = match config {
                Some(p) => load_pipeline_config(p)?,
                None => Default::default(),
            };
            let summary = run_pipeline(&cfg, shared.seed, out, shared.threads)?;
            Ok(summary.to_json())
        }
        Command::Inspect { ckpt } => {
            let c = load_checkpoint(ckpt)?;
            let d = c.dims();
            Ok(json!({
                "command": "inspect",
                "stage": c.stage.as_str(),
                "d_in": d.d_in,
                "hidden": d.hidden,
                "d_emb": d.d_emb,
                "parameters": d.param_count(),
                "seed": c.seed,
                "config_digest": format!("{:016x}", c.config_digest),
                "generation": c.generation,
                "digest": checkpoint_digest(&c),
            }))
        }
    }
}

/// Parses `argv` (including the program name), runs it, and returns the
/// process exit code: 0 success, 1 usage, 2 data error, 3 numeric failure.
pub fn run_cli<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            let _ = writeln!(stdout, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
