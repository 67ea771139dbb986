//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{brute_force_ctc, brute_force_scl, max_rel_err, normals, numeric_grad, random_features, random_label, rng};
use pbkws_core::classify::{build_prototypes, knn_classify, pbc_classify, EmbeddingMode};
use pbkws_core::ctc::{ctc_loss, CtcError};
use pbkws_core::encoder::{backward, forward, init_encoder, Dims, EncoderCheckpoint, EncoderParams, Stage, Upstream};
use pbkws_core::features::FeatureSequence;
use pbkws_core::label::{Label, NUM_CLASSES};
use pbkws_core::losses::{ce_loss, combined_loss, scl_loss, LossSetting, SclConfig};
use pbkws_core::metrics::{compute_score, OutcomeCounts};
use pbkws_core::trainer::{train_stage, Sample, TrainConfig};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const INSTANCES: u64 = 60;

/// Random encoder whose hidden pre-activations avoid the ReLU kink.
fn smooth_encoder(seed: u64) -> (EncoderParams, FeatureSequence) {
    let mut r = rng(seed);
    loop {
        let frames = r.random_range(1..=5);
        let d_in = r.random_range(1..=8);
        let dims = Dims::new(d_in, r.random_range(1..=6), r.random_range(1..=4)).unwrap();
        let values = normals(&mut r, dims.param_count()).iter().map(|v| 0.5 * v).collect();
        let params = EncoderParams::from_values(dims, values).unwrap();
        let feats = random_features(&mut r, frames, d_in);
        let smooth = feats.rows().all(|row| {
            (0..dims.hidden).all(|h| {
                let w = &params.w1()[h * d_in..(h + 1) * d_in];
                let z = params.b1()[h] + w.iter().zip(row).map(|(a, b)| a * f64::from(*b)).sum::<f64>();
                z.abs() > 1e-3
            })
        });
        if smooth {
            return (params, feats);
        }
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name, err: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(err);
    };
    for seed in 0..INSTANCES {
        let mut r = rng(seed);

        let logits = normals(&mut r, NUM_CLASSES);
        let label = random_label(&mut r);
        let arr = |x: &[f64]| -> [f64; NUM_CLASSES] { x.try_into().unwrap() };
        let (_, g) = ce_loss(&arr(&logits), label).unwrap();
        note("ce", max_rel_err(&g, &numeric_grad(&logits, H, |x| ce_loss(&arr(x), label).unwrap().0)));

        for (name, tau) in [("scl@0.07", 0.07), ("scl@1", 1.0)] {
            let n = r.random_range(2..=6);
            let d = r.random_range(2..=5);
            let labels: Vec<Label> = (0..n).map(|_| Label::from_index(r.random_range(0..3)).unwrap()).collect();
            let flat = normals(&mut r, n * d);
            let cfg = SclConfig { temperature: tau };
            let split = |x: &[f64]| -> Vec<Vec<f64>> { x.chunks(d).map(<[f64]>::to_vec).collect() };
            let (_, g) = scl_loss(&split(&flat), &labels, &cfg).unwrap();
            let num = numeric_grad(&flat, H, |x| scl_loss(&split(x), &labels, &cfg).unwrap().0);
            note(name, max_rel_err(&g.concat(), &num));
        }

        let inventory = r.random_range(2..=5);
        let target: Vec<usize> = (0..r.random_range(1..=2)).map(|_| r.random_range(1..inventory)).collect();
        let frames = r.random_range(3..=5);
        let logits = normals(&mut r, frames * inventory);
        let (_, g) = ctc_loss(&logits, inventory, &target).unwrap();
        note("ctc", max_rel_err(&g, &numeric_grad(&logits, H, |x| ctc_loss(x, inventory, &target).unwrap().0)));

        // Full backward: every output head fed a random upstream gradient.
        let (params, feats) = smooth_encoder(seed);
        let out = forward(&params, &feats).unwrap();
        let up = Upstream {
            embeddings: Some(normals(&mut r, out.embeddings.len())),
            ce_logits: Some(normals(&mut r, NUM_CLASSES).try_into().unwrap()),
            ctc_logits: Some(normals(&mut r, out.ctc_logits.len())),
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let dims = params.dims();
        let g = backward(&params, &feats, &up).unwrap();
        let num = numeric_grad(params.values(), H, |x| {
            let o = forward(&EncoderParams::from_values(dims, x.to_vec()).unwrap(), &feats).unwrap();
            dot(&o.embeddings, up.embeddings.as_ref().unwrap())
                + dot(&o.ce_logits, up.ce_logits.as_ref().unwrap())
                + dot(&o.ctc_logits, up.ctc_logits.as_ref().unwrap())
        });
        note("encoder", max_rel_err(g.values(), &num));

        // Training objective through the encoder on a small batch.
        let setting = [LossSetting::CE_SCL, LossSetting::CTC_SCL][seed as usize % 2];
        let n = r.random_range(2..=6);
        let batch: Vec<FeatureSequence> = (0..n)
            .map(|_| {
                let t = r.random_range(1..=5);
                random_features(&mut r, t, dims.d_in)
            })
            .collect();
        let labels: Vec<Label> = (0..n).map(|_| Label::from_index(r.random_range(0..3)).unwrap()).collect();
        let scl = SclConfig { temperature: 0.5 };
        let objective = |p: &EncoderParams| {
            let outs: Vec<_> = batch.iter().map(|f| forward(p, f).unwrap()).collect();
            combined_loss(setting, &scl, &outs, &labels).unwrap()
        };
        let (_, ups) = objective(&params);
        let mut g = EncoderParams::zeros(dims);
        for (f, u) in batch.iter().zip(&ups) {
            g.accumulate(&backward(&params, f, u).unwrap());
        }
        let num = numeric_grad(params.values(), H, |x| objective(&EncoderParams::from_values(dims, x.to_vec()).unwrap()).0.total);
        // ReLU kinks from the extra batch members can make a draw non-smooth;
        // such draws are skipped rather than loosening the tolerance.
        let smooth = batch.iter().all(|f| {
            f.rows().all(|row| {
                (0..dims.hidden).all(|h| {
                    let w = &params.w1()[h * dims.d_in..(h + 1) * dims.d_in];
                    (params.b1()[h] + w.iter().zip(row).map(|(a, b)| a * f64::from(*b)).sum::<f64>()).abs() > 1e-3
                })
            })
        });
        if smooth {
            note("objective", max_rel_err(g.values(), &num));
        }
    }
    let elapsed = start.elapsed();
    let max = worst.values().copied().fold(0.0, f64::max);
    check(max < GRAD_TOL, || format!("max relative error {max:.3e} ({worst:?})"))?;
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("{INSTANCES} instances per check, max rel err {max:.2e}, {elapsed:.2?}"))
}

fn ctc_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(42);
    let mut worst: f64 = 0.0;
    for frames in 1..=6 {
        for inventory in 2..=5usize {
            let mut targets = vec![vec![]];
            for a in 1..inventory {
                targets.push(vec![a]);
                targets.extend((1..inventory).map(|b| vec![a, b]));
            }
            for _ in 0..100 {
                let logits: Vec<f64> = normals(&mut r, frames * inventory).iter().map(|v| 2.0 * v).collect();
                let all = brute_force_ctc(&logits, inventory);
                for target in &targets {
                    let p = all.get(target).copied().unwrap_or(0.0);
                    match ctc_loss(&logits, inventory, target) {
                        Ok((loss, _)) => worst = worst.max((loss + p.ln()).abs()),
                        Err(CtcError::TargetTooLong { .. }) if p == 0.0 => {}
                        Err(e) => return Err(format!("T={frames} V={inventory} {target:?}: {e}")),
                    }
                }
            }
        }
    }
    check(worst < 1e-6, || format!("max abs error {worst:.3e}"))?;
    for inventory in 2..=5 {
        let (loss, _) = ctc_loss(&vec![0.0; inventory], inventory, &[1]).unwrap();
        let err = (loss - (inventory as f64).ln()).abs();
        check(err < 1e-9, || format!("T=1 V={inventory}: off by {err:.3e}"))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("max abs error {worst:.2e}, {elapsed:.2?}"))
}

fn scl_oracle() -> Outcome {
    let mut r = rng(7);
    let cfg = SclConfig::default();
    let mut worst: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..=8);
        let d = r.random_range(1..=6);
        let labels: Vec<Label> = (0..n).map(|_| Label::from_index(r.random_range(0..4)).unwrap()).collect();
        let emb: Vec<Vec<f64>> = (0..n).map(|_| normals(&mut r, d)).collect();
        let (loss, _) = scl_loss(&emb, &labels, &cfg).unwrap();
        worst = worst.max((loss - brute_force_scl(&emb, &labels, cfg.temperature)).abs());
        let scaled: Vec<Vec<f64>> = emb
            .iter()
            .map(|e| {
                let c = r.random_range(0.01..100.0);
                e.iter().map(|v| c * v).collect()
            })
            .collect();
        worst_scale = worst_scale.max((scl_loss(&scaled, &labels, &cfg).unwrap().0 - loss).abs());
    }
    check(worst < 1e-9, || format!("brute-force mismatch {worst:.3e}"))?;
    check(worst_scale < 1e-9, || format!("rescaling changed loss by {worst_scale:.3e}"))?;
    let pair = vec![vec![0.3, -1.2, 0.5], vec![2.0, 0.1, -0.4]];
    let same = [Label::keyword(4).unwrap(); 2];
    let (two, _) = scl_loss(&pair, &same, &cfg).unwrap();
    check(two.abs() < 1e-12, || format!("two-sample same-label loss {two}"))?;
    Ok(format!("max error {worst:.2e}, rescale drift {worst_scale:.2e}"))
}

fn pbc_knn_equivalence() -> Outcome {
    let mut r = rng(99);
    let params = init_encoder(8, 16, 6, 3).unwrap();
    let enroll: Vec<(Label, FeatureSequence)> = Label::all()
        .map(|l| {
            let t = r.random_range(1..=5);
            (l, random_features(&mut r, t, 8))
        })
        .collect();
    let pairs: Vec<(Label, &FeatureSequence)> = enroll.iter().map(|(l, f)| (*l, f)).collect();
    let mode = EmbeddingMode::FirstFrame;
    let protos = build_prototypes(&pairs, &params, mode).unwrap();
    let mut agree = 0;
    for _ in 0..1000 {
        let t = r.random_range(1..=5);
        let test = random_features(&mut r, t, 8);
        let a = pbc_classify(&test, &params, &protos, mode).unwrap().label;
        let b = knn_classify(&test, &params, &pairs, 1, mode).unwrap().label;
        agree += usize::from(a == b);
    }
    check(agree == 1000, || format!("{agree}/1000 agree"))?;
    Ok("1000/1000 agree".into())
}

fn metric_arithmetic() -> Outcome {
    let counts = |n_fr, n_fa| OutcomeCounts {
        n_wake: 80,
        n_non_wake: 20,
        n_fr,
        n_fa,
        n_confused: 0,
    };
    let example = compute_score(&counts(2, 1)).unwrap();
    check(example.score == 0.075, || format!("score {}", example.score))?;
    check(example.frr == 0.025 && example.far == 0.05, || format!("{example:?}"))?;
    let perfect = compute_score(&counts(0, 0)).unwrap().score;
    check(perfect == 0.0, || format!("perfect {perfect}"))?;
    let worst = compute_score(&counts(80, 20)).unwrap().score;
    check(worst == 2.0, || format!("worst {worst}"))?;
    Ok("0.075 / 0 / 2".into())
}

fn pipeline(out: &Path, threads: u32) -> Result<(serde_json::Value, Duration), String> {
    let start = Instant::now();
    let run = Command::new(env!("CARGO_BIN_EXE_pbkws"))
        .args(["pipeline", "--out", out.to_str().unwrap(), "--threads", &threads.to_string()])
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if !run.status.success() {
        return Err(String::from_utf8_lossy(&run.stderr).into_owned());
    }
    let summary = serde_json::from_slice(&run.stdout).map_err(|e| e.to_string())?;
    Ok((summary, elapsed))
}

fn trend_reproduction(dir: &Path) -> Outcome {
    let (summary, elapsed) = pipeline(&dir.join("trend"), 1)?;
    let score = |k: &str| summary["scores"][k].as_f64().ok_or_else(|| format!("missing score {k}"));
    let (init, sic, sid, sid_model, sdd) = (
        score("init-pbc")?,
        score("sic-pbc")?,
        score("sid-pbc")?,
        score("sid-model")?,
        score("sdd-pbc")?,
    );
    let detail = format!("init {init:.4} sic {sic:.4} sid {sid:.4} sid-model {sid_model:.4} sdd {sdd:.4}, {elapsed:.2?}");
    check(sic > sid, || format!("SIC not worse than SID: {detail}"))?;
    check(sdd <= sid_model, || format!("SDD+PB-C above SID model: {detail}"))?;
    check(sdd <= 0.05, || format!("SDD+PB-C above 0.05: {detail}"))?;
    check(init >= 0.5, || format!("untrained baseline below 0.5: {detail}"))?;
    within(elapsed, Duration::from_secs(300))?;
    Ok(detail)
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism(dir: &Path) -> Outcome {
    let runs = [("a", 1), ("b", 1), ("c", 4)];
    let mut outputs = Vec::new();
    for (name, threads) in runs {
        let out = dir.join(name);
        let (summary, _) = pipeline(&out, threads)?;
        outputs.push((summary, tree(&out)));
    }
    let (ref_summary, ref_tree) = &outputs[0];
    for kind in [".ckpt", "prototypes", "report"] {
        check(ref_tree.keys().any(|k| k.contains(kind)), || format!("no {kind} files written"))?;
    }
    for ((summary, files), (name, threads)) in outputs.iter().zip(runs).skip(1) {
        check(summary == ref_summary, || format!("run {name} (--threads {threads}) printed a different summary"))?;
        check(files.keys().eq(ref_tree.keys()), || format!("run {name} wrote a different file set"))?;
        if let Some(k) = files.keys().find(|k| files[*k] != ref_tree[*k]) {
            return Err(format!("run {name} (--threads {threads}) differs in {k}"));
        }
    }
    Ok(format!("{} files identical across --threads 1, 1, 4", ref_tree.len()))
}

fn early_stopping() -> Outcome {
    let mut r = rng(5);
    let data: Vec<Sample> = (0..24)
        .map(|i| Sample {
            speaker_id: format!("dc{}", i % 3),
            label: random_label(&mut r),
            features: random_features(&mut r, 3, 6),
        })
        .collect();
    let init = EncoderCheckpoint::pretrain(init_encoder(6, 8, 4, 1).unwrap(), 1);
    let cfg = TrainConfig {
        peak_lr: 0.0,
        patience_epochs: 10,
        max_epochs: 100,
        batch_size: 8,
        ..Default::default()
    };
    let out = train_stage(&init, &data, &cfg, Stage::Sic).map_err(|e| e.to_string())?;
    check(out.history.len() == 11, || format!("{} epochs", out.history.len()))?;
    check(out.checkpoint.params == init.params, || "parameters changed".into())?;
    Ok("11 epochs, parameters unchanged".into())
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let criteria: [Criterion; 8] = [
        ("gradient suite", Box::new(gradient_suite)),
        ("CTC oracle", Box::new(ctc_oracle)),
        ("SCL oracle", Box::new(scl_oracle)),
        ("PB-C/KNN equivalence", Box::new(pbc_knn_equivalence)),
        ("metric arithmetic", Box::new(metric_arithmetic)),
        ("trend reproduction", Box::new(|| trend_reproduction(dir.path()))),
        ("determinism", Box::new(|| determinism(dir.path()))),
        ("early stopping", Box::new(early_stopping)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
