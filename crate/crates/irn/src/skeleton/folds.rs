//! Evaluation split construction: grouped k-fold cross-validation and the
//! id-list protocols (cross-subject, cross-view, cross-setup).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;

/// How sequences are divided into train/test folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Protocol {
    /// Seeded k-fold over sequences, keeping each participant-pair group
    /// intact (sequences without a pair id form singleton groups).
    KFold { k: usize },
    /// K-fold with a caller-supplied assignment: each entry lists the group
    /// keys (pair ids, or sequence ids when no pair id exists) forming one
    /// fold's test set.
    ExplicitKFold { test_groups: Vec<Vec<String>> },
    /// One split: sequences whose subject id is listed train, the rest test.
    CrossSubject { train_subjects: Vec<u32> },
    /// One split by recording camera id.
    CrossView { train_cameras: Vec<u32> },
    /// One split by recording setup id.
    CrossSetup { train_setups: Vec<u32> },
}

impl Protocol {
    pub fn tag(&self) -> String {
        match self {
            Protocol::KFold { k } => format!("kfold-{k}"),
            Protocol::ExplicitKFold { test_groups } => {
                format!("explicit-kfold-{}", test_groups.len())
            }
            Protocol::CrossSubject { .. } => "cross-subject".into(),
            Protocol::CrossView { .. } => "cross-view".into(),
            Protocol::CrossSetup { .. } => "cross-setup".into(),
        }
    }
}

/// One fold: disjoint train/test sequence-id lists covering the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub protocol: String,
    pub folds: Vec<FoldAssignment>,
}

impl FoldSplit {
    /// Checks the partition invariants against a sequence list.
    pub fn validate(&self, seqs: &[SkeletonSequence]) -> Result<()> {
        for (i, fold) in self.folds.iter().enumerate() {
            if fold.train.is_empty() || fold.test.is_empty() {
                return Err(Error::Config(format!(
                    "fold {i} has an empty train or test side"
                )));
            }
            let mut ids: Vec<&String> = fold.train.iter().chain(&fold.test).collect();
            ids.sort();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config(format!("fold {i} assigns an id twice")));
            }
            if ids.len() != seqs.len() {
                return Err(Error::Config(format!(
                    "fold {i} covers {} of {} sequences",
                    ids.len(),
                    seqs.len()
                )));
            }
        }
        Ok(())
    }
}

/// Builds the fold assignment for a corpus under the chosen protocol.
/// `seed` only affects `Protocol::KFold`.
pub fn make_folds(
    seqs: &[SkeletonSequence],
    protocol: &Protocol,
    seed: u64,
) -> Result<FoldSplit> {
    if seqs.is_empty() {
        return Err(Error::Data("cannot build folds from zero sequences".into()));
    }
    let folds = match protocol {
        Protocol::KFold { k } => kfold(seqs, *k, seed)?,
        Protocol::ExplicitKFold { test_groups } => explicit_kfold(seqs, test_groups)?,
        Protocol::CrossSubject { train_subjects } => {
            vec![split_by_id(seqs, "subject", train_subjects, |s| s.subject)?]
        }
        Protocol::CrossView { train_cameras } => {
            vec![split_by_id(seqs, "camera", train_cameras, |s| s.camera)?]
        }
        Protocol::CrossSetup { train_setups } => {
            vec![split_by_id(seqs, "setup", train_setups, |s| s.setup)?]
        }
    };
    let split = FoldSplit {
        protocol: protocol.tag(),
        folds,
    };
    split.validate(seqs)?;
    Ok(split)
}

/// Group map in deterministic (sorted-key) order: group key → sequence ids.
fn groups_of(seqs: &[SkeletonSequence]) -> BTreeMap<String, Vec<String>> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in seqs {
        groups
            .entry(s.fold_group().to_string())
            .or_default()
            .push(s.id.clone());
    }
    groups
}

fn kfold(seqs: &[SkeletonSequence], k: usize, seed: u64) -> Result<Vec<FoldAssignment>> {
    let groups = groups_of(seqs);
    if k < 2 || k > groups.len() {
        return Err(Error::Config(format!(
            "k={k} folds need between 2 and {} (number of groups)",
            groups.len()
        )));
    }
    let mut keys: Vec<&String> = groups.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);
    // Greedy balance: each group lands in the currently smallest fold, so
    // fold sizes differ by at most one group.
    let mut fold_ids: Vec<Vec<String>> = vec![Vec::new(); k];
    for key in keys {
        let smallest = (0..k).min_by_key(|&i| fold_ids[i].len()).unwrap();
        fold_ids[smallest].extend(groups[key].iter().cloned());
    }
    Ok(assemble(fold_ids))
}

fn explicit_kfold(
    seqs: &[SkeletonSequence],
    test_groups: &[Vec<String>],
) -> Result<Vec<FoldAssignment>> {
    let groups = groups_of(seqs);
    let mut fold_of_group: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, fold) in test_groups.iter().enumerate() {
        for key in fold {
            if !groups.contains_key(key) {
                return Err(Error::Config(format!(
                    "split file names unknown group {key:?}"
                )));
            }
            if fold_of_group.insert(key, i).is_some() {
                return Err(Error::Config(format!(
                    "split file assigns group {key:?} to more than one fold"
                )));
            }
        }
    }
    for key in groups.keys() {
        if !fold_of_group.contains_key(key.as_str()) {
            return Err(Error::Config(format!(
                "split file misses group {key:?}"
            )));
        }
    }
    let mut fold_ids: Vec<Vec<String>> = vec![Vec::new(); test_groups.len()];
    for (key, ids) in &groups {
        fold_ids[fold_of_group[key.as_str()]].extend(ids.iter().cloned());
    }
    Ok(assemble(fold_ids))
}

fn assemble(fold_ids: Vec<Vec<String>>) -> Vec<FoldAssignment> {
    let k = fold_ids.len();
    (0..k)
        .map(|i| {
            let mut test = fold_ids[i].clone();
            let mut train: Vec<String> = (0..k)
                .filter(|&j| j != i)
                .flat_map(|j| fold_ids[j].iter().cloned())
                .collect();
            test.sort();
            train.sort();
            FoldAssignment { train, test }
        })
        .collect()
}

fn split_by_id(
    seqs: &[SkeletonSequence],
    field: &str,
    train_ids: &[u32],
    get: impl Fn(&SkeletonSequence) -> Option<u32>,
) -> Result<FoldAssignment> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in seqs {
        let id = get(s).ok_or_else(|| {
            Error::Config(format!(
                "sequence {} has no {field} id, required by this protocol",
                s.id
            ))
        })?;
        if train_ids.contains(&id) {
            train.push(s.id.clone());
        } else {
            test.push(s.id.clone());
        }
    }
    train.sort();
    test.sort();
    Ok(FoldAssignment { train, test })
}
