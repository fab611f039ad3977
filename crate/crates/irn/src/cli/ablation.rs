//! The standard experiment grid: every named model configuration trained
//! and scored under one shared fold split, emitted as a single table.
//!
//! Rows run independently — a failing row is recorded in the table and the
//! remaining rows still run. The score-averaging row trains nothing itself:
//! it combines the per-fold checkpoints of the `inter` and `intra` rows.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::checkpoint::load_checkpoint;
use crate::model::{score_average, IrnModel, Variant};
use crate::report::TimingSidecar;
use crate::skeleton::folds::FoldSplit;
use crate::skeleton::windows::prepare_samples;
use crate::skeleton::{InteractionSample, SkeletonSequence};
use crate::train::{evaluate, BEST_CHECKPOINT};

use super::config::Settings;
use super::run::{run_training, write_provenance, write_split, TrainPlan};
use super::{load_dataset, out_path, AblationArgs};

/// One named configuration of the experiment grid.
#[derive(Debug)]
pub struct Row {
    /// Stable machine name used by `--rows` and for output directories.
    pub slug: &'static str,
    /// Display name used in the emitted table.
    pub label: &'static str,
    /// Slugs whose per-fold checkpoints this row combines instead of
    /// training its own model.
    pub combines: &'static [&'static str],
    /// Whether the row's training runs the pretrain-then-fuse procedure.
    pub pretrain: bool,
    configure: fn(&mut Settings),
}

fn base(s: &mut Settings, variant: Variant, use_h: bool, lstm: bool) {
    s.train.model.variant = variant;
    s.train.model.use_h = use_h;
    s.train.model.lstm = lstm;
    s.train.random_init_fusion = false;
}

/// Every row of the grid, in table order. Combining rows come after the
/// rows they consume.
pub const ROWS: &[Row] = &[
    Row {
        slug: "inter-baseline",
        label: "$IRN_{inter}$ (Baseline)",
        combines: &[],
        pretrain: false,
        configure: |s| base(s, Variant::Inter, false, false),
    },
    Row {
        slug: "inter",
        label: "$IRN^{'}_{inter}$ (Self-Augmented Input)",
        combines: &[],
        pretrain: false,
        configure: |s| base(s, Variant::Inter, true, false),
    },
    Row {
        slug: "lstm-inter",
        label: "LSTM-$IRN^{'}_{inter}$",
        combines: &[],
        pretrain: false,
        configure: |s| base(s, Variant::Inter, true, true),
    },
    Row {
        slug: "intra-baseline",
        label: "$IRN_{intra}$ (Baseline)",
        combines: &[],
        pretrain: false,
        configure: |s| base(s, Variant::Intra, false, false),
    },
    Row {
        slug: "intra",
        label: "$IRN^{'}_{intra}$ (Self-Augmented Input)",
        combines: &[],
        pretrain: false,
        configure: |s| base(s, Variant::Intra, true, false),
    },
    Row {
        slug: "lstm-intra",
        label: "LSTM-$IRN^{'}_{intra}$",
        combines: &[],
        pretrain: false,
        configure: |s| base(s, Variant::Intra, true, true),
    },
    Row {
        slug: "naive",
        label: "Naive-$IRN^{'}_{inter+intra}$",
        combines: &[],
        pretrain: false,
        configure: |s| base(s, Variant::Naive, true, false),
    },
    Row {
        slug: "score-avg",
        label: "Averaging scores",
        combines: &["inter", "intra"],
        pretrain: false,
        configure: |_| {},
    },
    Row {
        slug: "random-fused",
        label: "Random-$IRN^{'}_{inter+intra}$",
        combines: &[],
        pretrain: false,
        configure: |s| {
            base(s, Variant::Fused, true, false);
            s.train.random_init_fusion = true;
        },
    },
    Row {
        slug: "fused",
        label: "$IRN^{'}_{inter+intra}$",
        combines: &[],
        pretrain: true,
        configure: |s| base(s, Variant::Fused, true, false),
    },
    Row {
        slug: "fc1",
        label: "$IRN^{'fc1}_{inter+intra}$",
        combines: &[],
        pretrain: true,
        configure: |s| {
            base(s, Variant::FcFused, true, false);
            s.train.model.fuse_at = 1;
        },
    },
    Row {
        slug: "fc2",
        label: "$IRN^{'fc2}_{inter+intra}$",
        combines: &[],
        pretrain: true,
        configure: |s| {
            base(s, Variant::FcFused, true, false);
            s.train.model.fuse_at = 2;
        },
    },
    Row {
        slug: "fc3",
        label: "$IRN^{'fc3}_{inter+intra}$",
        combines: &[],
        pretrain: true,
        configure: |s| {
            base(s, Variant::FcFused, true, false);
            s.train.model.fuse_at = 3;
        },
    },
    Row {
        slug: "lstm-fc1",
        label: "LSTM-$IRN^{'fc1}_{inter+intra}$",
        combines: &[],
        pretrain: true,
        configure: |s| {
            base(s, Variant::FcFused, true, true);
            s.train.model.fuse_at = 1;
        },
    },
];

fn row_by_slug(slug: &str) -> Option<&'static Row> {
    ROWS.iter().find(|r| r.slug == slug)
}

/// Resolves `--rows` into registry order and checks combining rows have
/// their sources selected.
fn select_rows(requested: Option<&[String]>) -> Result<Vec<&'static Row>> {
    let selected: Vec<&'static Row> = match requested {
        None => ROWS.iter().collect(),
        Some(slugs) => {
            let mut unknown: Vec<&str> = slugs
                .iter()
                .map(String::as_str)
                .filter(|s| row_by_slug(s).is_none())
                .collect();
            if !unknown.is_empty() {
                unknown.sort_unstable();
                let valid: Vec<&str> = ROWS.iter().map(|r| r.slug).collect();
                return Err(Error::Config(format!(
                    "unknown ablation rows: {}; valid rows: {}",
                    unknown.join(", "),
                    valid.join(", ")
                )));
            }
            ROWS.iter()
                .filter(|r| slugs.iter().any(|s| s == r.slug))
                .collect()
        }
    };
    for row in &selected {
        for dep in row.combines {
            if !selected.iter().any(|r| r.slug == *dep) {
                return Err(Error::Config(format!(
                    "row {} combines the checkpoints of row {dep}; select {dep} as well",
                    row.slug
                )));
            }
        }
    }
    Ok(selected)
}

/// One row's outcome in the emitted table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowOutcome {
    pub slug: String,
    pub label: String,
    pub fold_accuracies: Vec<f64>,
    /// Unweighted mean over folds; absent when the row failed.
    pub mean_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// The full emitted table plus the identifiers needed to reproduce it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset: String,
    pub protocol: String,
    /// Fingerprint of the shared base configuration.
    pub fingerprint: String,
    pub seed: u64,
    pub rows: Vec<RowOutcome>,
}

impl AblationTable {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let mut out = String::from("row,label,mean_accuracy,status\n");
        for r in &self.rows {
            let (mean, status) = match (&r.mean_accuracy, &r.error) {
                (Some(m), _) => (format!("{m}"), "ok".to_string()),
                (None, Some(e)) => (String::new(), format!("failed: {e}")),
                (None, None) => (String::new(), "failed".to_string()),
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.slug,
                quote(&r.label),
                mean,
                quote(&status)
            ));
        }
        out
    }

    pub fn text_table(&self) -> String {
        let label_w = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max("experiment".len());
        let mut out = format!(
            "dataset: {}  protocol: {}  seed: {}\n{:<label_w$}  {:>8}  folds\n",
            self.dataset, self.protocol, self.seed, "experiment", "mean acc"
        );
        for r in &self.rows {
            match (&r.mean_accuracy, &r.error) {
                (Some(m), _) => {
                    let folds: Vec<String> =
                        r.fold_accuracies.iter().map(|a| format!("{a:.4}")).collect();
                    out.push_str(&format!(
                        "{:<label_w$}  {:>8.4}  {}\n",
                        r.label,
                        m,
                        folds.join(" ")
                    ));
                }
                (None, e) => {
                    out.push_str(&format!(
                        "{:<label_w$}  {:>8}  {}\n",
                        r.label,
                        "-",
                        e.as_deref().unwrap_or("failed")
                    ));
                }
            }
        }
        out
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("ablation.json", self.to_json()),
            ("ablation.csv", self.to_csv()),
            ("ablation.txt", self.text_table()),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// The windowed samples a row trains on: rows with a recurrent head need
/// the overlapping-window form, everything else the single central window.
struct SampleSets {
    central: Vec<InteractionSample>,
    sequential: Option<Vec<InteractionSample>>,
}

impl SampleSets {
    fn for_row(&self, lstm: bool) -> Result<&[InteractionSample]> {
        if lstm {
            self.sequential
                .as_deref()
                .ok_or_else(|| Error::Data("overlapping windows were not prepared".into()))
        } else {
            Ok(&self.central)
        }
    }
}

fn gather(
    ids: &[String],
    seqs: &[SkeletonSequence],
    samples: &[InteractionSample],
) -> Result<Vec<InteractionSample>> {
    let by_id: HashMap<&str, &InteractionSample> = seqs
        .iter()
        .map(|s| s.id.as_str())
        .zip(samples.iter())
        .collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|s| (*s).clone())
                .ok_or_else(|| Error::Data(format!("fold references unknown sequence id {id:?}")))
        })
        .collect()
}

/// Trains one row across every fold and scores each fold's best checkpoint
/// on its test side.
fn run_trained_row(
    row: &Row,
    settings: &Settings,
    seqs: &[SkeletonSequence],
    sets: &SampleSets,
    split: &FoldSplit,
    out: &Path,
    force: bool,
) -> Result<Vec<f64>> {
    let mut row_settings = settings.clone();
    (row.configure)(&mut row_settings);
    row_settings.train.validate()?;
    let samples = sets.for_row(row_settings.train.model.lstm)?;
    write_provenance(out, &row_settings, force)?;
    let plan = TrainPlan {
        pretrain: row.pretrain,
        ..TrainPlan::default()
    };
    let mut accs = Vec::with_capacity(split.folds.len());
    for (k, fold) in split.folds.iter().enumerate() {
        let train_samples = gather(&fold.train, seqs, samples)?;
        let test_samples = gather(&fold.test, seqs, samples)?;
        let fold_out = out.join(format!("fold{k}"));
        run_training(&train_samples, &row_settings.train, &fold_out, &plan)?;
        let best = load_checkpoint(&fold_out.join(BEST_CHECKPOINT))?.build_model()?;
        let ev = evaluate(&best, &test_samples)?;
        accs.push(ev.accuracy);
    }
    Ok(accs)
}

/// Scores a combining row: per fold, averages the class scores of the
/// source rows' best checkpoints on the shared test side.
fn run_combining_row(
    row: &Row,
    seqs: &[SkeletonSequence],
    sets: &SampleSets,
    split: &FoldSplit,
    rows_dir: &Path,
    outcomes: &[RowOutcome],
) -> Result<Vec<f64>> {
    for dep in row.combines {
        let source = outcomes
            .iter()
            .find(|o| o.slug == *dep)
            .ok_or_else(|| Error::Config(format!("row {dep} did not run")))?;
        if source.error.is_some() {
            return Err(Error::Config(format!(
                "source row {dep} failed; nothing to combine"
            )));
        }
    }
    let mut accs = Vec::with_capacity(split.folds.len());
    for (k, fold) in split.folds.iter().enumerate() {
        let models: Vec<IrnModel> = row
            .combines
            .iter()
            .map(|dep| {
                load_checkpoint(&rows_dir.join(dep).join(format!("fold{k}")).join(BEST_CHECKPOINT))?
                    .build_model()
            })
            .collect::<Result<_>>()?;
        let lstm = models.iter().any(|m| m.config.lstm);
        let test_samples = gather(&fold.test, seqs, sets.for_row(lstm)?)?;
        if test_samples.is_empty() {
            return Err(Error::Data(format!("fold {k} has no test samples")));
        }
        let mut correct = 0usize;
        for sample in &test_samples {
            let scores = combined_scores(&models, sample)?;
            if argmax(&scores) == sample.label {
                correct += 1;
            }
        }
        accs.push(correct as f64 / test_samples.len() as f64);
    }
    Ok(accs)
}

/// Uniform mean of every model's class probabilities; for two models this
/// equals [`score_average`].
fn combined_scores(models: &[IrnModel], sample: &InteractionSample) -> Result<Vec<f64>> {
    if let [a, b] = models {
        return score_average(&a.eval_logits(sample)?, &b.eval_logits(sample)?);
    }
    let classes = models
        .first()
        .ok_or_else(|| Error::Config("no source models to combine".into()))?
        .config
        .classes;
    let mut scores = vec![0.0; classes];
    for model in models {
        let probs = crate::autodiff::softmax(&model.eval_logits(sample)?);
        if probs.len() != classes {
            return Err(Error::Data(format!(
                "combined models score {} vs {classes} classes",
                probs.len()
            )));
        }
        for (s, p) in scores.iter_mut().zip(&probs) {
            *s += p;
        }
    }
    let n = models.len() as f64;
    for s in &mut scores {
        *s /= n;
    }
    Ok(scores)
}

pub fn cmd_ablation(args: &AblationArgs) -> Result<()> {
    let (manifest, seqs) = load_dataset(&args.data)?;
    let settings = Settings::from_flags(&args.settings, manifest.classes)?;
    let selected = select_rows(args.rows.as_deref())?;

    let protocol = settings.fold_protocol()?;
    let split = crate::skeleton::folds::make_folds(&seqs, &protocol, settings.train.seed)?;

    let model = &settings.train.model;
    let needs_sequential = selected.iter().any(|row| {
        let mut probe = settings.clone();
        (row.configure)(&mut probe);
        probe.train.model.lstm
    });
    let sets = SampleSets {
        central: prepare_samples(&seqs, model.t, settings.dilation, false)?,
        sequential: if needs_sequential {
            Some(prepare_samples(&seqs, model.t, settings.dilation, true)?)
        } else {
            None
        },
    };

    let out = out_path(&args.out);
    write_provenance(&out, &settings, args.force)?;
    write_split(&out, &split)?;
    let rows_dir = out.join("rows");

    let started = Instant::now();
    let mut outcomes: Vec<RowOutcome> = Vec::with_capacity(selected.len());
    let mut fold_seconds = Vec::with_capacity(selected.len());
    for row in &selected {
        let row_started = Instant::now();
        println!("running row {} ({})", row.slug, row.label);
        let result = if row.combines.is_empty() {
            run_trained_row(
                row,
                &settings,
                &seqs,
                &sets,
                &split,
                &rows_dir.join(row.slug),
                args.force,
            )
        } else {
            run_combining_row(row, &seqs, &sets, &split, &rows_dir, &outcomes)
        };
        let outcome = match result {
            Ok(accs) => {
                let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                println!("  mean accuracy {mean:.4}");
                RowOutcome {
                    slug: row.slug.to_string(),
                    label: row.label.to_string(),
                    fold_accuracies: accs,
                    mean_accuracy: Some(mean),
                    error: None,
                }
            }
            Err(e) => {
                eprintln!("  row {} failed: {e}", row.slug);
                RowOutcome {
                    slug: row.slug.to_string(),
                    label: row.label.to_string(),
                    fold_accuracies: Vec::new(),
                    mean_accuracy: None,
                    error: Some(e.to_string()),
                }
            }
        };
        outcomes.push(outcome);
        fold_seconds.push(row_started.elapsed().as_secs_f64());
    }

    let table = AblationTable {
        dataset: manifest.dataset.clone(),
        protocol: split.protocol.clone(),
        fingerprint: settings.fingerprint(),
        seed: settings.train.seed,
        rows: outcomes,
    };
    table.write_to(&out)?;
    TimingSidecar {
        total_seconds: started.elapsed().as_secs_f64(),
        fold_seconds,
    }
    .write_to(&out)?;
    print!("{}", table.text_table());
    println!("table written to {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::SettingsFlags;

    #[test]
    fn the_grid_lists_every_standard_row_once() {
        assert_eq!(ROWS.len(), 14);
        let mut slugs: Vec<&str> = ROWS.iter().map(|r| r.slug).collect();
        slugs.sort_unstable();
        slugs.dedup();
        assert_eq!(slugs.len(), 14, "slugs must be unique");
        let mut labels: Vec<&str> = ROWS.iter().map(|r| r.label).collect();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 14, "labels must be unique");
        assert!(row_by_slug("score-avg").unwrap().combines == ["inter", "intra"]);
    }

    #[test]
    fn every_trained_row_yields_a_valid_configuration() {
        let flags = SettingsFlags {
            frames: Some(4),
            g_widths: Some(vec![8, 6]),
            f_widths: Some(vec![6, 5, 4]),
            epochs: Some(1),
            ..Default::default()
        };
        let settings = Settings::resolve(None, &flags, 3).unwrap();
        for row in ROWS {
            if !row.combines.is_empty() {
                continue;
            }
            let mut s = settings.clone();
            (row.configure)(&mut s);
            s.train
                .validate()
                .unwrap_or_else(|e| panic!("row {} invalid: {e}", row.slug));
        }
        let mut s = settings.clone();
        (row_by_slug("naive").unwrap().configure)(&mut s);
        assert_eq!(s.train.model.variant, Variant::Naive);
        let mut s = settings.clone();
        (row_by_slug("random-fused").unwrap().configure)(&mut s);
        assert!(s.train.random_init_fusion);
        let mut s = settings;
        (row_by_slug("fc3").unwrap().configure)(&mut s);
        assert_eq!(s.train.model.fuse_at, 3);
        assert!(row_by_slug("fc3").unwrap().pretrain);
    }

    #[test]
    fn selection_rejects_unknown_rows_and_broken_dependencies() {
        let err = select_rows(Some(&["inter".into(), "bogus".into()])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "{msg}");
        assert!(msg.contains("inter-baseline"), "lists valid slugs: {msg}");

        let err = select_rows(Some(&["score-avg".into(), "inter".into()])).unwrap_err();
        assert!(err.to_string().contains("intra"), "{err}");

        let ok = select_rows(Some(&["intra".into(), "score-avg".into(), "inter".into()])).unwrap();
        let order: Vec<&str> = ok.iter().map(|r| r.slug).collect();
        assert_eq!(
            order,
            ["inter", "intra", "score-avg"],
            "registry order keeps sources before combiners"
        );

        assert_eq!(select_rows(None).unwrap().len(), ROWS.len());
    }

    #[test]
    fn table_renders_success_and_failure_rows() {
        let table = AblationTable {
            dataset: "synthetic".into(),
            protocol: "kfold-2".into(),
            fingerprint: "f".repeat(64),
            seed: 7,
            rows: vec![
                RowOutcome {
                    slug: "inter".into(),
                    label: "$IRN^{'}_{inter}$ (Self-Augmented Input)".into(),
                    fold_accuracies: vec![0.75, 0.5],
                    mean_accuracy: Some(0.625),
                    error: None,
                },
                RowOutcome {
                    slug: "fc3".into(),
                    label: "$IRN^{'fc3}_{inter+intra}$".into(),
                    fold_accuracies: vec![],
                    mean_accuracy: None,
                    error: Some("config error: fuse layer 3 of 2".into()),
                },
            ],
        };
        let csv = table.to_csv();
        assert!(csv.starts_with("row,label,mean_accuracy,status\n"));
        assert!(csv.contains("inter,\"$IRN^{'}_{inter}$ (Self-Augmented Input)\",0.625,\"ok\""));
        assert!(csv.contains("fc3,"));
        assert!(csv.contains("failed: config error"));
        let txt = table.text_table();
        assert!(txt.contains("0.6250"));
        assert!(txt.contains("fuse layer 3 of 2"));
        let parsed: AblationTable = serde_json::from_str(&table.to_json()).unwrap();
        assert_eq!(parsed.rows.len(), 2);
        assert_eq!(parsed.rows[1].mean_accuracy, None);
    }
}
