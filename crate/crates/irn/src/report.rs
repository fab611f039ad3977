//! Evaluation reporting: confusion matrices, per-fold aggregation, and
//! deterministic on-disk report bundles.
//!
//! Wall-clock measurements are deliberately kept in a separate sidecar file
//! so that two runs with the same configuration fingerprint produce
//! byte-identical report files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts of (true class, predicted class) occurrences. Rows index the
/// true class, columns the prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    /// Tallies parallel truth/prediction slices.
    pub fn from_pairs(classes: usize, labels: &[usize], preds: &[usize]) -> Result<Self> {
        if labels.len() != preds.len() {
            return Err(Error::Data(format!(
                "{} labels but {} predictions",
                labels.len(),
                preds.len()
            )));
        }
        let mut m = ConfusionMatrix::new(classes);
        for (&t, &p) in labels.iter().zip(preds) {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(Error::Data(format!(
                "class pair ({truth}, {pred}) outside the {} known classes",
                self.classes
            )));
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    /// Element-wise accumulation, used to pool folds.
    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Data(format!(
                "cannot pool a {}-class matrix into a {}-class one",
                other.classes, self.classes
            )));
        }
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, oc) in row.iter_mut().zip(orow) {
                *c += oc;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    /// Overall accuracy (trace over total); absent when nothing was tallied.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        if total == 0 {
            None
        } else {
            Some(self.trace() as f64 / total as f64)
        }
    }

    /// Per-class recall; a class that never occurs as a true label has no
    /// defined value and yields `None` rather than zero.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    None
                } else {
                    Some(row[i] as f64 / n as f64)
                }
            })
            .collect()
    }

    /// Comma-separated counts, one row of true-class tallies per line,
    /// with a header naming the predicted classes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true_class");
        for c in 0..self.classes {
            out.push_str(&format!(",pred_{c}"));
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&i.to_string());
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text rendering with per-class accuracy in the margin.
    pub fn text_grid(&self, class_names: Option<&[String]>) -> String {
        let name = |i: usize| -> String {
            match class_names {
                Some(names) if i < names.len() => names[i].clone(),
                _ => format!("class {i}"),
            }
        };
        let header = "true \\ pred";
        let label_w = (0..self.classes)
            .map(|i| name(i).len())
            .max()
            .unwrap_or(0)
            .max(header.len());
        let cell_w = self
            .counts
            .iter()
            .flatten()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(4);
        let mut out = String::new();
        out.push_str(&format!("{header:label_w$}  "));
        for i in 0..self.classes {
            out.push_str(&format!("{:>cell_w$} ", i));
        }
        out.push_str("  recall\n");
        let recalls = self.per_class_accuracy();
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:label_w$}  ", name(i)));
            for c in row {
                out.push_str(&format!("{:>cell_w$} ", c));
            }
            match recalls[i] {
                Some(r) => out.push_str(&format!("  {:.4}\n", r)),
                None => out.push_str("       -\n"),
            }
        }
        out
    }
}

/// Outcome of evaluating one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    pub test_size: usize,
    pub confusion: ConfusionMatrix,
}

impl FoldResult {
    pub fn from_predictions(
        fold: usize,
        classes: usize,
        labels: &[usize],
        preds: &[usize],
    ) -> Result<Self> {
        let confusion = ConfusionMatrix::from_pairs(classes, labels, preds)?;
        let accuracy = confusion.accuracy().ok_or_else(|| {
            Error::Data(format!("fold {fold} has no test samples"))
        })?;
        Ok(FoldResult {
            fold,
            accuracy,
            test_size: labels.len(),
            confusion,
        })
    }
}

/// Everything a finished evaluation run reports. Contains no wall-clock
/// data: see [`TimingSidecar`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub dataset: String,
    pub protocol: String,
    /// Configuration fingerprint of the run that produced these numbers.
    pub fingerprint: String,
    pub seed: u64,
    pub classes: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class_names: Option<Vec<String>>,
    pub folds: Vec<FoldResult>,
    /// Unweighted mean of the per-fold accuracies.
    pub mean_accuracy: f64,
    /// Fold confusions pooled element-wise.
    pub pooled: ConfusionMatrix,
    pub per_class_accuracy: Vec<Option<f64>>,
}

impl ReportBundle {
    pub fn from_folds(
        dataset: impl Into<String>,
        protocol: impl Into<String>,
        fingerprint: impl Into<String>,
        seed: u64,
        classes: usize,
        class_names: Option<Vec<String>>,
        folds: Vec<FoldResult>,
    ) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Data("report needs at least one fold".into()));
        }
        let mut pooled = ConfusionMatrix::new(classes);
        for f in &folds {
            if f.confusion.total() == 0 {
                return Err(Error::Data(format!("fold {} has no test samples", f.fold)));
            }
            pooled.add(&f.confusion)?;
        }
        let mean_accuracy =
            folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64;
        let per_class_accuracy = pooled.per_class_accuracy();
        Ok(ReportBundle {
            dataset: dataset.into(),
            protocol: protocol.into(),
            fingerprint: fingerprint.into(),
            seed,
            classes,
            class_names,
            folds,
            mean_accuracy,
            pooled,
            per_class_accuracy,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("malformed report JSON: {e}")))
    }

    /// Per-fold accuracies as plot-ready CSV (one bar per fold).
    pub fn folds_csv(&self) -> String {
        let mut out = String::from("fold,accuracy,test_size\n");
        for f in &self.folds {
            out.push_str(&format!("{},{},{}\n", f.fold, f.accuracy, f.test_size));
        }
        out.push_str(&format!("mean,{},\n", self.mean_accuracy));
        out
    }

    /// Human-oriented summary with the pooled confusion grid.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "dataset: {}\nprotocol: {}\nfingerprint: {}\nseed: {}\n\n",
            self.dataset, self.protocol, self.fingerprint, self.seed
        ));
        for f in &self.folds {
            out.push_str(&format!(
                "fold {:>2}: accuracy {:.4} over {} samples\n",
                f.fold, f.accuracy, f.test_size
            ));
        }
        out.push_str(&format!(
            "\nmean accuracy over {} folds: {:.4}\n",
            self.folds.len(),
            self.mean_accuracy
        ));
        if let Some(pooled_acc) = self.pooled.accuracy() {
            out.push_str(&format!("pooled accuracy: {:.4}\n", pooled_acc));
        }
        out.push_str("\npooled confusion:\n");
        out.push_str(&self.pooled.text_grid(self.class_names.as_deref()));
        out
    }

    /// Writes `report.json`, `report.txt`, `folds.csv` and `confusion.csv`
    /// into `dir`. Output depends only on the bundle contents, so equal
    /// bundles produce byte-identical files.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write("report.json", self.to_json())?;
        write("report.txt", self.summary_text())?;
        write("folds.csv", self.folds_csv())?;
        write("confusion.csv", self.pooled.to_csv())?;
        Ok(())
    }
}

/// Wall-clock measurements, stored apart from the deterministic report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TimingSidecar {
    pub total_seconds: f64,
    pub fold_seconds: Vec<f64>,
}

impl TimingSidecar {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("timing.json");
        let mut text = serde_json::to_string_pretty(self).expect("timing serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
