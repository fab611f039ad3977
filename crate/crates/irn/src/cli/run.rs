//! The training-oriented subcommands: single runs, checkpoint evaluation,
//! and cross-validated protocols.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::checkpoint::load_checkpoint;
use crate::model::Variant;
use crate::report::{FoldResult, ReportBundle, TimingSidecar};
use crate::skeleton::folds::{make_folds, FoldSplit, Protocol};
use crate::skeleton::windows::prepare_samples;
use crate::skeleton::InteractionSample;
use crate::train::{
    evaluate, fit, fuse_from_checkpoints, pretrain_and_fuse, resume_train, TrainConfig,
    TrainHistory, BEST_CHECKPOINT, LAST_CHECKPOINT,
};

use super::config::Settings;
use super::{class_names, data_path, load_dataset, out_path, CrossvalArgs, EvalArgs, TrainArgs};

/// File name of the materialized run configuration inside an output
/// directory; its contents are exactly [`Settings::to_toml`].
pub const RESOLVED_CONFIG: &str = "config.toml";

/// Fold assignment provenance written next to cross-validation reports.
pub const FOLDS_FILE: &str = "folds.json";

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Materializes the resolved configuration into `out`. An existing run with
/// a *different* configuration is refused unless `force` is set, so output
/// directories are never silently mixed between runs.
pub fn write_provenance(out: &Path, settings: &Settings, force: bool) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(RESOLVED_CONFIG);
    let text = settings.to_toml();
    if path.exists() {
        let existing = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        if existing != text && !force {
            return Err(Error::Config(format!(
                "{} already holds a run with fingerprint {}, but this run has \
                 fingerprint {}; pass --force to replace it",
                out.display(),
                sha256_hex(existing.as_bytes()),
                settings.fingerprint(),
            )));
        }
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// How a single training run should be started.
#[derive(Debug, Default, Clone)]
pub struct TrainPlan {
    pub resume: bool,
    pub pretrain: bool,
    pub inter_ckpt: Option<std::path::PathBuf>,
    pub intra_ckpt: Option<std::path::PathBuf>,
}

fn is_fused(cfg: &TrainConfig) -> bool {
    matches!(cfg.model.variant, Variant::Fused | Variant::FcFused)
}

/// Runs one training job under `out` according to the plan, returning its
/// epoch history. Checkpoints and the history file land in `out`.
pub fn run_training(
    samples: &[InteractionSample],
    cfg: &TrainConfig,
    out: &Path,
    plan: &TrainPlan,
) -> Result<TrainHistory> {
    if plan.resume {
        let (_, history) = resume_train(&out.join(LAST_CHECKPOINT), samples, cfg, Some(out))?;
        return Ok(history);
    }
    if !is_fused(cfg) {
        if plan.pretrain || plan.inter_ckpt.is_some() || plan.intra_ckpt.is_some() {
            return Err(Error::Config(format!(
                "--pretrain, --inter-ckpt and --intra-ckpt only apply to fused \
                 variants, not {}",
                cfg.model.variant.name()
            )));
        }
        let (_, history) = fit(samples, cfg, Some(out))?;
        return Ok(history);
    }
    match (&plan.inter_ckpt, &plan.intra_ckpt) {
        (Some(inter), Some(intra)) => {
            let outcome = fuse_from_checkpoints(inter, intra, samples, cfg, Some(out))?;
            Ok(outcome.history)
        }
        (Some(_), None) | (None, Some(_)) => Err(Error::Config(
            "--inter-ckpt and --intra-ckpt must be given together".into(),
        )),
        (None, None) => {
            if cfg.random_init_fusion || plan.pretrain {
                let outcome = pretrain_and_fuse(samples, cfg, Some(out))?;
                Ok(outcome.history)
            } else {
                Err(Error::Config(format!(
                    "variant {} needs its two streams initialized: pass \
                     --pretrain, --random-init, or --inter-ckpt/--intra-ckpt",
                    cfg.model.variant.name()
                )))
            }
        }
    }
}

fn print_history_tail(history: &TrainHistory, out: &Path) {
    if let Some(last) = history.rows.last() {
        let val = match last.val_acc {
            Some(v) => format!("{v:.4}"),
            None => "-".to_string(),
        };
        println!(
            "epoch {}: loss {:.6}, train acc {:.4}, val acc {val}",
            last.epoch, last.loss, last.train_acc
        );
    }
    println!(
        "checkpoints: {} (every epoch), {} (best selection metric)",
        out.join(LAST_CHECKPOINT).display(),
        out.join(BEST_CHECKPOINT).display()
    );
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (manifest, seqs) = load_dataset(&args.data)?;
    let settings = Settings::from_flags(&args.settings, manifest.classes)?;
    let model = &settings.train.model;
    let samples = prepare_samples(&seqs, model.t, settings.dilation, model.lstm)?;

    let out = out_path(&args.out);
    write_provenance(&out, &settings, args.force)?;

    let plan = TrainPlan {
        resume: args.resume,
        pretrain: args.pretrain,
        inter_ckpt: args.inter_ckpt.as_deref().map(data_path),
        intra_ckpt: args.intra_ckpt.as_deref().map(data_path),
    };
    let started = Instant::now();
    let history = run_training(&samples, &settings.train, &out, &plan)?;
    let timing = TimingSidecar {
        total_seconds: started.elapsed().as_secs_f64(),
        fold_seconds: Vec::new(),
    };
    timing.write_to(&out)?;

    println!(
        "trained {} on {} samples ({} classes) for {} epochs",
        model.variant.name(),
        samples.len(),
        model.classes,
        history.rows.len(),
    );
    print_history_tail(&history, &out);
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&data_path(&args.checkpoint))?;
    let model = ckpt.build_model()?;
    let (manifest, seqs) = load_dataset(&args.data)?;
    if manifest.classes > model.config.classes {
        return Err(Error::Data(format!(
            "dataset has {} classes but the checkpoint's model only scores {}",
            manifest.classes, model.config.classes
        )));
    }
    let samples = prepare_samples(&seqs, model.config.t, args.dilation, model.config.lstm)?;

    let started = Instant::now();
    let ev = evaluate(&model, &samples)?;
    let elapsed = started.elapsed().as_secs_f64();

    let fold = FoldResult::from_predictions(0, model.config.classes, &ev.labels, &ev.preds)?;
    let bundle = ReportBundle::from_folds(
        manifest.dataset.clone(),
        "holdout",
        model.config.fingerprint(),
        ckpt.meta.rng_seed,
        model.config.classes,
        class_names(&manifest),
        vec![fold],
    )?;
    print!("{}", bundle.summary_text());
    if let Some(dir) = &args.out {
        let dir = out_path(dir);
        bundle.write_to(&dir)?;
        TimingSidecar {
            total_seconds: elapsed,
            fold_seconds: vec![elapsed],
        }
        .write_to(&dir)?;
        println!("report written to {}", dir.display());
    }
    Ok(())
}

/// Reads an explicit fold assignment: a JSON array of arrays of group keys
/// (participant-pair ids, or sequence ids when no pair id exists), each
/// inner array naming one fold's test side.
fn load_split_file(path: &Path) -> Result<Protocol> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let test_groups: Vec<Vec<String>> = serde_json::from_str(&text).map_err(|e| {
        Error::Data(format!(
            "{}: expected a JSON array of arrays of group keys: {e}",
            path.display()
        ))
    })?;
    if test_groups.is_empty() {
        return Err(Error::Data(format!(
            "{}: the split file lists no folds",
            path.display()
        )));
    }
    Ok(Protocol::ExplicitKFold { test_groups })
}

/// Gathers the samples whose sequence ids appear in `ids`. Sample order
/// follows the id list, so explicit split files fully determine it.
fn gather<'a>(
    ids: &[String],
    by_id: &HashMap<&str, &'a InteractionSample>,
) -> Result<Vec<InteractionSample>> {
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|s| (*s).clone())
                .ok_or_else(|| Error::Data(format!("fold references unknown sequence id {id:?}")))
        })
        .collect()
}

pub fn cmd_crossval(args: &CrossvalArgs) -> Result<()> {
    let (manifest, seqs) = load_dataset(&args.data)?;
    let settings = Settings::from_flags(&args.settings, manifest.classes)?;
    let model = &settings.train.model;

    let protocol = match &args.split_file {
        Some(path) => load_split_file(&data_path(path))?,
        None => settings.fold_protocol()?,
    };
    let split = make_folds(&seqs, &protocol, settings.train.seed)?;

    let samples = prepare_samples(&seqs, model.t, settings.dilation, model.lstm)?;
    // prepare_samples yields exactly one sample per sequence, in order.
    let by_id: HashMap<&str, &InteractionSample> = seqs
        .iter()
        .map(|s| s.id.as_str())
        .zip(samples.iter())
        .collect();

    let out = out_path(&args.out);
    write_provenance(&out, &settings, args.force)?;
    write_split(&out, &split)?;

    let plan = TrainPlan {
        pretrain: args.pretrain,
        ..TrainPlan::default()
    };
    let started = Instant::now();
    let mut fold_results = Vec::with_capacity(split.folds.len());
    let mut fold_seconds = Vec::with_capacity(split.folds.len());
    for (k, fold) in split.folds.iter().enumerate() {
        let fold_started = Instant::now();
        let train_samples = gather(&fold.train, &by_id)?;
        let test_samples = gather(&fold.test, &by_id)?;
        let fold_out = out.join(format!("fold{k}"));
        run_training(&train_samples, &settings.train, &fold_out, &plan)?;
        let best = load_checkpoint(&fold_out.join(BEST_CHECKPOINT))?.build_model()?;
        let ev = evaluate(&best, &test_samples)?;
        let result = FoldResult::from_predictions(k, model.classes, &ev.labels, &ev.preds)?;
        println!(
            "fold {k}: accuracy {:.4} on {} test samples",
            result.accuracy, result.test_size
        );
        fold_results.push(result);
        fold_seconds.push(fold_started.elapsed().as_secs_f64());
    }

    let bundle = ReportBundle::from_folds(
        manifest.dataset.clone(),
        split.protocol.clone(),
        settings.fingerprint(),
        settings.train.seed,
        model.classes,
        class_names(&manifest),
        fold_results,
    )?;
    bundle.write_to(&out)?;
    TimingSidecar {
        total_seconds: started.elapsed().as_secs_f64(),
        fold_seconds,
    }
    .write_to(&out)?;
    print!("{}", bundle.summary_text());
    println!("report written to {}", out.display());
    Ok(())
}

/// Records which sequences landed on each side of every fold.
pub fn write_split(out: &Path, split: &FoldSplit) -> Result<()> {
    let path = out.join(FOLDS_FILE);
    let mut text = serde_json::to_string_pretty(split).expect("fold split serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
