//! Loader for NTU-style `.skeleton` text files.
//!
//! File layout (whitespace-separated, one logical record per line):
//!
//! ```text
//! <frame count>
//! per frame:  <body count>
//!             per body: <info line (bodyID first)>
//!                       <joint count>
//!                       per joint: x y z ... trackingState
//! ```
//!
//! Joint lines carry 3D coordinates in the first three columns and the
//! tracking state in the last (0 = untracked → invalid). File names follow
//! `SsssCcccPpppRrrrAaaa.skeleton`, encoding setup, camera, performer,
//! replication and action; the action id (1-based) yields the 0-based label.
//!
//! The first two distinct body ids to appear own the two person slots;
//! frames missing one of them get a missing slot, and any further body ids
//! are ignored with a warning. Sequences load with the native joint count
//! (25); subsample with [`NTU_TO_SBU15`] to reach the canonical skeleton.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::skeleton::{Frame, LoadReport, PersonFrame, SkeletonSequence};

/// Source indices of the canonical 15 joints within the 25-joint skeleton
/// (head, neck, torso, then left/right arm and leg chains).
pub const NTU_TO_SBU15: [usize; 15] = [3, 2, 1, 4, 5, 7, 8, 9, 11, 12, 13, 15, 16, 17, 19];

const NTU_FPS: f64 = 30.0;

/// Loads one `.skeleton` file, or every `*.skeleton` file under a directory
/// (sorted by name). In directory mode files whose names don't carry the
/// metadata pattern are skipped with a warning.
pub fn load_ntu(path: &Path) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    if path.is_file() {
        report.sequences.push(load_file(path, &mut report.warnings)?);
        return Ok(report);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "skeleton"))
        .collect();
    files.sort();
    if files.is_empty() {
        report
            .warnings
            .push(format!("no .skeleton files under {}", path.display()));
        return Ok(report);
    }
    for file in files {
        if parse_name(&file).is_none() {
            report.warnings.push(format!(
                "skipping {}: name does not match SsssCcccPpppRrrrAaaa",
                file.display()
            ));
            continue;
        }
        report.sequences.push(load_file(&file, &mut report.warnings)?);
    }
    Ok(report)
}

struct NameMeta {
    setup: u32,
    camera: u32,
    subject: u32,
    replication: u32,
    action: u32,
}

fn parse_name(path: &Path) -> Option<NameMeta> {
    let stem = path.file_stem()?.to_str()?;
    let b = stem.as_bytes();
    if b.len() != 20 || b[0] != b'S' || b[4] != b'C' || b[8] != b'P' || b[12] != b'R' || b[16] != b'A'
    {
        return None;
    }
    let num = |range: std::ops::Range<usize>| stem[range].parse::<u32>().ok();
    Some(NameMeta {
        setup: num(1..4)?,
        camera: num(5..8)?,
        subject: num(9..12)?,
        replication: num(13..16)?,
        action: num(17..20)?,
    })
}

struct LineCursor<'a> {
    file: String,
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> LineCursor<'a> {
    fn err(&self, msg: String) -> Error {
        Error::Parse {
            file: self.file.clone(),
            line: self.pos, // pos already advanced past the offending line
            msg,
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        while self.pos < self.lines.len() {
            let line = self.lines[self.pos].trim();
            self.pos += 1;
            if !line.is_empty() {
                return Ok(line);
            }
        }
        Err(Error::Parse {
            file: self.file.clone(),
            line: self.lines.len(),
            msg: "unexpected end of file".into(),
        })
    }

    fn next_count(&mut self, what: &str) -> Result<usize> {
        let line = self.next_line()?;
        line.split_whitespace()
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| self.err(format!("expected {what} count, found {line:?}")))
    }

    fn next_values(&mut self, min: usize, what: &str) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| self.err(format!("bad number in {what}: {e}")))?;
        if values.len() < min {
            return Err(self.err(format!(
                "{what} needs at least {min} values, found {}",
                values.len()
            )));
        }
        Ok(values)
    }
}

fn load_file(path: &Path, warnings: &mut Vec<String>) -> Result<SkeletonSequence> {
    let meta = parse_name(path).ok_or_else(|| {
        Error::Config(format!(
            "{}: file name must follow SsssCcccPpppRrrrAaaa.skeleton",
            path.display()
        ))
    })?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = LineCursor {
        file: path.display().to_string(),
        lines: text.lines().collect(),
        pos: 0,
    };

    let n_frames = cursor.next_count("frame")?;
    if n_frames == 0 {
        return Err(Error::Data(format!("{}: zero frames", path.display())));
    }
    let mut n_joints: Option<usize> = None;
    // Raw per-frame body observations in file order: bodyID → joints.
    let mut raw: Vec<BTreeMap<i64, (Vec<f64>, Vec<bool>)>> = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let n_bodies = cursor.next_count("body")?;
        let mut frame_bodies = BTreeMap::new();
        for _ in 0..n_bodies {
            let info = cursor.next_values(1, "body info")?;
            let body_id = info[0] as i64;
            let joints = cursor.next_count("joint")?;
            match n_joints {
                None => n_joints = Some(joints),
                Some(n) if n != joints => {
                    return Err(cursor.err(format!(
                        "joint count changed from {n} to {joints} mid-file"
                    )));
                }
                _ => {}
            }
            let mut coords = Vec::with_capacity(joints * 3);
            let mut valid = Vec::with_capacity(joints);
            for _ in 0..joints {
                let v = cursor.next_values(4, "joint row")?;
                coords.extend_from_slice(&v[..3]);
                valid.push(*v.last().unwrap() != 0.0);
            }
            frame_bodies.insert(body_id, (coords, valid));
        }
        raw.push(frame_bodies);
    }
    let n_joints = n_joints.ok_or_else(|| {
        Error::Data(format!("{}: no body ever appears", path.display()))
    })?;

    // The first two distinct ids own the person slots.
    let mut track_ids: Vec<i64> = Vec::new();
    let mut ignored = false;
    for frame in &raw {
        for &id in frame.keys() {
            if !track_ids.contains(&id) {
                if track_ids.len() < 2 {
                    track_ids.push(id);
                } else {
                    ignored = true;
                }
            }
        }
    }
    if ignored {
        warnings.push(format!(
            "{}: more than two body ids; extras ignored",
            path.display()
        ));
    }

    let frames: Vec<Frame> = raw
        .into_iter()
        .map(|mut frame_bodies| Frame {
            persons: std::array::from_fn(|slot| {
                track_ids
                    .get(slot)
                    .and_then(|id| frame_bodies.remove(id))
                    .map(|(coords, valid)| PersonFrame::new(coords, valid))
                    .unwrap_or_else(|| PersonFrame::missing(n_joints, 3))
            }),
        })
        .collect();

    let seq = SkeletonSequence {
        id: path
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned(),
        d: 3,
        n_joints,
        fps: NTU_FPS,
        label: Some((meta.action - 1) as usize),
        subject: Some(meta.subject),
        camera: Some(meta.camera),
        setup: Some(meta.setup),
        pair_id: Some(format!(
            "S{:03}P{:03}R{:03}A{:03}",
            meta.setup, meta.subject, meta.replication, meta.action
        )),
        frames,
    };
    seq.validate()?;
    Ok(seq)
}
