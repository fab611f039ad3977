//! Grouped k-fold cross-validation with deterministic report files.
//!
//! Splits a corpus into folds (sequences sharing a participant-pair id
//! never straddle a boundary), trains one model per fold, scores each
//! fold's held-out side, and emits the report bundle: JSON, per-fold CSV,
//! confusion-matrix CSV and an aligned text grid. Wall-clock timings go to
//! a separate sidecar so reports from identical runs are byte-identical.
//!
//! Run with: `cargo run --release --example crossval_report`

use irn::model::{ModelConfig, Variant};
use irn::report::{FoldResult, ReportBundle, TimingSidecar};
use irn::skeleton::folds::{make_folds, Protocol};
use irn::skeleton::synthetic::{synth_corpus, Archetype};
use irn::skeleton::windows::prepare_samples;
use irn::train::{evaluate, fit, TrainConfig};
use std::collections::HashMap;
use std::time::Instant;

fn main() -> irn::Result<()> {
    let seqs = synth_corpus(120, 0.05, 7);
    let samples = prepare_samples(&seqs, 4, 5, false)?;
    let by_id: HashMap<&str, usize> = seqs
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();

    let split = make_folds(&seqs, &Protocol::KFold { k: 4 }, 7)?;
    println!("protocol {}: {} folds", split.protocol, split.folds.len());

    let mut mc = ModelConfig::new(Variant::Inter, Archetype::ALL.len(), 4, 3, 15);
    mc.g_widths = vec![32, 16];
    mc.f_widths = vec![16, 8];
    mc.dropout = 0.0;
    mc.one_hot_ids = true;
    let mut cfg = TrainConfig::new(mc);
    cfg.lr = 1e-2;
    cfg.init_std = 0.09;
    cfg.batch_size = 16;
    cfg.epochs = 30;
    cfg.seed = 7;
    cfg.val_fraction = 0.0;

    let started = Instant::now();
    let mut folds = Vec::new();
    let mut fold_seconds = Vec::new();
    for (k, fold) in split.folds.iter().enumerate() {
        let fold_started = Instant::now();
        let pick = |ids: &[String]| -> Vec<_> {
            ids.iter().map(|id| samples[by_id[id.as_str()]].clone()).collect()
        };
        let (model, _) = fit(&pick(&fold.train), &cfg, None)?;
        let ev = evaluate(&model, &pick(&fold.test))?;
        println!("fold {k}: accuracy {:.3} on {} test samples", ev.accuracy, ev.labels.len());
        folds.push(FoldResult::from_predictions(
            k,
            cfg.model.classes,
            &ev.labels,
            &ev.preds,
        )?);
        fold_seconds.push(fold_started.elapsed().as_secs_f64());
    }

    let names: Vec<String> = Archetype::ALL.iter().map(|a| a.name().to_string()).collect();
    let bundle = ReportBundle::from_folds(
        "synthetic",
        split.protocol.clone(),
        cfg.model.fingerprint(),
        cfg.seed,
        cfg.model.classes,
        Some(names),
        folds,
    )?;

    let dir = std::env::temp_dir().join("irn_crossval_report");
    bundle.write_to(&dir)?;
    TimingSidecar {
        total_seconds: started.elapsed().as_secs_f64(),
        fold_seconds,
    }
    .write_to(&dir)?;

    print!("\n{}", bundle.summary_text());
    println!("\nreport files written to {}", dir.display());
    Ok(())
}
