//! Loader for the SBU two-person interaction distribution.
//!
//! Expected layout under the root:
//!
//! ```text
//! <root>/sXXsYY/<category 01..08>/<run 001, 002, ...>/skeleton_pos.txt
//! ```
//!
//! Each line of `skeleton_pos.txt` is one frame: a frame counter followed by
//! 90 comma-separated reals — 2 persons × 15 joints × (x, y, z), person 1
//! first, joints in the canonical 15-joint order. Coordinates are used as
//! shipped (the distribution normalizes them already). The `sXXsYY` folder
//! names the participant pair and becomes the fold-grouping key; the
//! category folder (1-based) yields the 0-based class label.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::skeleton::{Frame, LoadReport, PersonFrame, SkeletonSequence};

const SBU_JOINTS: usize = 15;
const SBU_CLASSES: usize = 8;
const VALUES_PER_LINE: usize = 1 + 2 * SBU_JOINTS * 3;
const SBU_FPS: f64 = 15.0;

/// Loads every sequence under an SBU-style root. Missing or extra files are
/// reported as warnings; malformed coordinate lines fail the load.
pub fn load_sbu(root: &Path) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut pair_dirs = sorted_dirs(root)?;
    pair_dirs.retain(|p| is_pair_dir(p));
    if pair_dirs.is_empty() {
        report
            .warnings
            .push(format!("no participant-pair directories under {}", root.display()));
        return Ok(report);
    }
    for pair_dir in pair_dirs {
        let pair_id = dir_name(&pair_dir);
        for cat_dir in sorted_dirs(&pair_dir)? {
            let cat_name = dir_name(&cat_dir);
            let Some(label) = parse_category(&cat_name) else {
                report.warnings.push(format!(
                    "skipping {}: category folder name is not 01..{SBU_CLASSES:02}",
                    cat_dir.display()
                ));
                continue;
            };
            for run_dir in sorted_dirs(&cat_dir)? {
                let file = run_dir.join("skeleton_pos.txt");
                if !file.is_file() {
                    report.warnings.push(format!(
                        "no skeleton_pos.txt in {}",
                        run_dir.display()
                    ));
                    continue;
                }
                let id = format!("{pair_id}/{cat_name}/{}", dir_name(&run_dir));
                let seq = load_sequence(&file, &id, &pair_id, label)?;
                report.sequences.push(seq);
            }
        }
    }
    if report.sequences.is_empty() {
        report
            .warnings
            .push(format!("no sequences found under {}", root.display()));
    }
    Ok(report)
}

fn load_sequence(file: &Path, id: &str, pair_id: &str, label: usize) -> Result<SkeletonSequence> {
    let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                file: file.display().to_string(),
                line: lineno + 1,
                msg: format!("bad number: {e}"),
            })?;
        if values.len() != VALUES_PER_LINE {
            return Err(Error::Parse {
                file: file.display().to_string(),
                line: lineno + 1,
                msg: format!(
                    "expected {VALUES_PER_LINE} comma-separated values (frame counter + 2×{SBU_JOINTS}×3), found {}",
                    values.len()
                ),
            });
        }
        let coords = &values[1..];
        let persons = std::array::from_fn(|p| {
            let start = p * SBU_JOINTS * 3;
            PersonFrame::new(
                coords[start..start + SBU_JOINTS * 3].to_vec(),
                vec![true; SBU_JOINTS],
            )
        });
        frames.push(Frame { persons });
    }
    if frames.is_empty() {
        return Err(Error::Data(format!("{}: no frames", file.display())));
    }
    let seq = SkeletonSequence {
        id: id.to_string(),
        d: 3,
        n_joints: SBU_JOINTS,
        fps: SBU_FPS,
        label: Some(label),
        subject: None,
        camera: None,
        setup: None,
        pair_id: Some(pair_id.to_string()),
        frames,
    };
    seq.validate()?;
    Ok(seq)
}

/// `sXXsYY` → participant pair; anything else is ignored (READMEs, etc.).
fn is_pair_dir(p: &Path) -> bool {
    let name = dir_name(p);
    let b = name.as_bytes();
    b.len() == 6
        && b[0] == b's'
        && b[3] == b's'
        && b[1].is_ascii_digit()
        && b[2].is_ascii_digit()
        && b[4].is_ascii_digit()
        && b[5].is_ascii_digit()
}

fn parse_category(name: &str) -> Option<usize> {
    let n: usize = name.parse().ok()?;
    (1..=SBU_CLASSES).contains(&n).then(|| n - 1)
}

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn dir_name(p: &Path) -> String {
    p.file_name().unwrap_or_default().to_string_lossy().into_owned()
}
