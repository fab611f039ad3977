//! Canonical on-disk interchange format.
//!
//! Every loader (native two-person files, per-frame pose streams, the
//! synthetic generator) funnels into one JSON record per sequence plus a
//! `manifest.json` listing the corpus, so downstream commands only ever
//! read one format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Frame, PersonFrame, SkeletonSequence};

pub const SCHEMA_VERSION: u32 = 1;

/// One sequence, serialized. Coordinates are nested
/// `[person][frame][joint][coord]` and validity `[person][frame][joint]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub schema_version: u32,
    pub id: String,
    pub d: usize,
    pub n_joints: usize,
    pub fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    pub persons: Vec<Vec<Vec<Vec<f64>>>>,
    pub valid: Vec<Vec<Vec<bool>>>,
}

impl CanonicalRecord {
    pub fn from_sequence(seq: &SkeletonSequence) -> Self {
        let person = |p: usize| -> Vec<Vec<Vec<f64>>> {
            seq.frames
                .iter()
                .map(|f| {
                    (0..seq.n_joints)
                        .map(|j| f.persons[p].joint(j, seq.d).to_vec())
                        .collect()
                })
                .collect()
        };
        let valid = |p: usize| -> Vec<Vec<bool>> {
            seq.frames.iter().map(|f| f.persons[p].valid.clone()).collect()
        };
        CanonicalRecord {
            schema_version: SCHEMA_VERSION,
            id: seq.id.clone(),
            d: seq.d,
            n_joints: seq.n_joints,
            fps: seq.fps,
            label: seq.label,
            subject: seq.subject,
            camera: seq.camera,
            setup: seq.setup,
            pair_id: seq.pair_id.clone(),
            persons: vec![person(0), person(1)],
            valid: vec![valid(0), valid(1)],
        }
    }

    pub fn into_sequence(self) -> Result<SkeletonSequence> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "record {}: schema version {} unsupported (expected {})",
                self.id, self.schema_version, SCHEMA_VERSION
            )));
        }
        if self.persons.len() != 2 || self.valid.len() != 2 {
            return Err(Error::Data(format!(
                "record {}: expected exactly 2 persons, found {}",
                self.id,
                self.persons.len()
            )));
        }
        let n_frames = self.persons[0].len();
        if self.persons[1].len() != n_frames
            || self.valid[0].len() != n_frames
            || self.valid[1].len() != n_frames
        {
            return Err(Error::Data(format!(
                "record {}: person/validity frame counts disagree",
                self.id
            )));
        }
        let mut frames = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let persons = [0usize, 1].map(|p| {
                let joints = &self.persons[p][t];
                let coords: Vec<f64> = joints.iter().flatten().copied().collect();
                PersonFrame::new(coords, self.valid[p][t].clone())
            });
            for (p, joints) in [&self.persons[0][t], &self.persons[1][t]].iter().enumerate() {
                for (j, c) in joints.iter().enumerate() {
                    if c.len() != self.d {
                        return Err(Error::Data(format!(
                            "record {}: frame {t} person {p} joint {j} has {} coords, expected {}",
                            self.id,
                            c.len(),
                            self.d
                        )));
                    }
                }
            }
            frames.push(Frame { persons });
        }
        let seq = SkeletonSequence {
            id: self.id,
            d: self.d,
            n_joints: self.n_joints,
            fps: self.fps,
            label: self.label,
            subject: self.subject,
            camera: self.camera,
            setup: self.setup,
            pair_id: self.pair_id,
            frames,
        };
        seq.validate()?;
        Ok(seq)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup: Option<u32>,
    pub frames: usize,
}

/// Corpus index written alongside the records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub dataset: String,
    /// Number of distinct class labels (max label + 1).
    pub classes: usize,
    pub records: Vec<ManifestEntry>,
}

fn record_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

/// Writes one JSON record per sequence plus `manifest.json` under `dir`.
pub fn write_canonical(dir: &Path, seqs: &[SkeletonSequence], dataset: &str) -> Result<Manifest> {
    if seqs.is_empty() {
        return Err(Error::Data("no sequences to write".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(seqs.len());
    for seq in seqs {
        seq.validate()?;
        let file = record_file_name(&seq.id);
        if records.iter().any(|r: &ManifestEntry| r.file == file) {
            return Err(Error::Data(format!(
                "duplicate record file name {file} (sequence id {})",
                seq.id
            )));
        }
        let record = CanonicalRecord::from_sequence(seq);
        let path = dir.join(&file);
        let json = serde_json::to_string(&record)
            .map_err(|e| Error::Data(format!("serializing {}: {e}", seq.id)))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        records.push(ManifestEntry {
            file,
            id: seq.id.clone(),
            label: seq.label,
            pair_id: seq.pair_id.clone(),
            subject: seq.subject,
            camera: seq.camera,
            setup: seq.setup,
            frames: seq.frames.len(),
        });
    }
    let classes = seqs
        .iter()
        .filter_map(|s| s.label)
        .max()
        .map_or(0, |m| m + 1);
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        dataset: dataset.to_string(),
        classes,
        records,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("serializing manifest: {e}")))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn read_json<T: for<'a> Deserialize<'a>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Loads a directory produced by [`write_canonical`].
pub fn load_canonical_dir(dir: &Path) -> Result<(Manifest, Vec<SkeletonSequence>)> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Data(format!(
            "{}: schema version {} unsupported (expected {})",
            manifest_path.display(),
            manifest.schema_version,
            SCHEMA_VERSION
        )));
    }
    let mut seqs = Vec::with_capacity(manifest.records.len());
    for entry in &manifest.records {
        let path: PathBuf = dir.join(&entry.file);
        let record: CanonicalRecord = read_json(&path)?;
        if record.id != entry.id {
            return Err(Error::Data(format!(
                "{}: record id {:?} does not match manifest id {:?}",
                path.display(),
                record.id,
                entry.id
            )));
        }
        seqs.push(record.into_sequence()?);
    }
    Ok((manifest, seqs))
}
