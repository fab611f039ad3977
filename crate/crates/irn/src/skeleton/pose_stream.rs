//! Ingestion of per-frame pose-estimator output and frame-to-frame body
//! identity assignment.
//!
//! Input is a directory of JSON files, one per frame (processed in
//! lexicographic order), each of the form
//! `{"poses": [[x, y, confidence, x, y, confidence, ...], ...]}` — zero or
//! more candidate 2D poses as flat (x, y, confidence) triples. A confidence
//! of 0 marks the joint unobserved: its coordinates are forced to (0, 0)
//! and its validity flag cleared.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::skeleton::{Frame, PersonFrame, SkeletonSequence};

/// One candidate pose in one frame (not yet assigned to a person).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePose {
    /// Joint-major (x, y) pairs.
    pub coords: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Per-frame candidates, before identity assignment.
#[derive(Debug, Clone)]
pub struct PoseCandidates {
    pub n_joints: usize,
    pub fps: f64,
    pub frames: Vec<Vec<CandidatePose>>,
}

#[derive(Deserialize)]
struct FrameRecord {
    poses: Vec<Vec<f64>>,
}

/// Reads every `*.json` frame record under `dir`, sorted by file name.
pub fn load_pose_stream(dir: &Path, fps: f64) -> Result<PoseCandidates> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no per-frame .json records under {}",
            dir.display()
        )));
    }
    let mut n_joints: Option<usize> = None;
    let mut frames = Vec::with_capacity(files.len());
    for file in &files {
        let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
        let record: FrameRecord = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: file.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let mut candidates = Vec::with_capacity(record.poses.len());
        for (i, pose) in record.poses.iter().enumerate() {
            if pose.len() % 3 != 0 || pose.is_empty() {
                return Err(Error::Parse {
                    file: file.display().to_string(),
                    line: 1,
                    msg: format!(
                        "pose {i} has {} values, expected a multiple of 3 (x, y, confidence)",
                        pose.len()
                    ),
                });
            }
            let joints = pose.len() / 3;
            match n_joints {
                None => n_joints = Some(joints),
                Some(n) if n != joints => {
                    return Err(Error::Parse {
                        file: file.display().to_string(),
                        line: 1,
                        msg: format!("pose {i} has {joints} joints, earlier frames had {n}"),
                    });
                }
                _ => {}
            }
            let mut coords = Vec::with_capacity(joints * 2);
            let mut valid = Vec::with_capacity(joints);
            for triple in pose.chunks_exact(3) {
                let observed = triple[2] != 0.0;
                if observed {
                    coords.extend_from_slice(&triple[..2]);
                } else {
                    coords.extend_from_slice(&[0.0, 0.0]);
                }
                valid.push(observed);
            }
            candidates.push(CandidatePose { coords, valid });
        }
        frames.push(candidates);
    }
    let n_joints = n_joints.ok_or_else(|| {
        Error::Data(format!(
            "{}: no frame contains any pose",
            dir.display()
        ))
    })?;
    Ok(PoseCandidates {
        n_joints,
        fps,
        frames,
    })
}

/// One persistent person identity: the last known position of every joint.
struct Track {
    coords: Vec<f64>,
    /// Whether each joint has ever been observed.
    seen: Vec<bool>,
}

impl Track {
    fn from_candidate(c: &CandidatePose) -> Self {
        Track {
            coords: c.coords.clone(),
            seen: c.valid.clone(),
        }
    }

    /// Mean Euclidean distance over joints valid in the candidate and
    /// previously seen on the track; infinite when they share none.
    fn cost(&self, c: &CandidatePose) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for j in 0..self.seen.len() {
            if self.seen[j] && c.valid[j] {
                let dx = self.coords[2 * j] - c.coords[2 * j];
                let dy = self.coords[2 * j + 1] - c.coords[2 * j + 1];
                total += (dx * dx + dy * dy).sqrt();
                n += 1;
            }
        }
        if n == 0 {
            f64::INFINITY
        } else {
            total / n as f64
        }
    }

    fn absorb(&mut self, c: &CandidatePose) {
        for j in 0..self.seen.len() {
            if c.valid[j] {
                self.coords[2 * j..2 * j + 2].copy_from_slice(&c.coords[2 * j..2 * j + 2]);
                self.seen[j] = true;
            }
        }
    }

    /// The carried-forward (or carried-back) placeholder when this identity
    /// was not observed: last known coordinates, all flags false.
    fn placeholder(&self) -> PersonFrame {
        PersonFrame::new(self.coords.clone(), vec![false; self.seen.len()])
    }
}

/// Resolves per-frame candidates into exactly two persistent person slots.
///
/// Identities seed at the first frame holding at least two candidates (the
/// two with the most observed joints, earliest-first on ties). From there
/// each frame is matched greedily by ascending track–candidate cost; an
/// unmatched track carries its last pose forward with validity false, and
/// surplus candidates are dropped. Frames before the seed receive the seed
/// poses carried back, also flagged invalid.
pub fn assign_bodies(
    candidates: &PoseCandidates,
    id: &str,
    label: Option<usize>,
) -> Result<SkeletonSequence> {
    let n = candidates.n_joints;
    let seed = candidates
        .frames
        .iter()
        .position(|f| f.len() >= 2)
        .ok_or_else(|| {
            Error::Data(format!(
                "{id}: no frame has two candidate poses; cannot form an interaction"
            ))
        })?;

    let seed_frame = &candidates.frames[seed];
    let mut order: Vec<usize> = (0..seed_frame.len()).collect();
    order.sort_by_key(|&i| {
        let observed = seed_frame[i].valid.iter().filter(|&&v| v).count();
        (std::cmp::Reverse(observed), i)
    });
    let mut tracks = [
        Track::from_candidate(&seed_frame[order[0]]),
        Track::from_candidate(&seed_frame[order[1]]),
    ];

    let mut frames: Vec<Frame> = Vec::with_capacity(candidates.frames.len());
    for _ in 0..seed {
        frames.push(Frame {
            persons: [tracks[0].placeholder(), tracks[1].placeholder()],
        });
    }
    for cand_frame in &candidates.frames[seed..] {
        let mut assigned: [Option<usize>; 2] = [None, None];
        let mut taken = vec![false; cand_frame.len()];
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for slot in 0..2 {
                if assigned[slot].is_some() {
                    continue;
                }
                for (ci, cand) in cand_frame.iter().enumerate() {
                    if taken[ci] {
                        continue;
                    }
                    let cost = tracks[slot].cost(cand);
                    if cost.is_finite() && best.map_or(true, |(b, _, _)| cost < b) {
                        best = Some((cost, slot, ci));
                    }
                }
            }
            let Some((_, slot, ci)) = best else { break };
            assigned[slot] = Some(ci);
            taken[ci] = true;
        }
        let persons = std::array::from_fn(|slot| match assigned[slot] {
            Some(ci) => {
                let cand = &cand_frame[ci];
                tracks[slot].absorb(cand);
                PersonFrame::new(cand.coords.clone(), cand.valid.clone())
            }
            None => tracks[slot].placeholder(),
        });
        frames.push(Frame { persons });
    }

    let seq = SkeletonSequence {
        id: id.to_string(),
        d: 2,
        n_joints: n,
        fps: candidates.fps,
        label,
        subject: None,
        camera: None,
        setup: None,
        pair_id: None,
        frames,
    };
    seq.validate()?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(points: &[(f64, f64, f64)]) -> Vec<f64> {
        points.iter().flat_map(|&(x, y, c)| [x, y, c]).collect()
    }

    fn candidates_from(frames: Vec<Vec<Vec<f64>>>) -> PoseCandidates {
        let tmp = tempfile::tempdir().unwrap();
        for (i, poses) in frames.iter().enumerate() {
            let record = serde_json::json!({ "poses": poses });
            fs::write(
                tmp.path().join(format!("frame_{i:04}.json")),
                serde_json::to_string(&record).unwrap(),
            )
            .unwrap();
        }
        load_pose_stream(tmp.path(), 30.0).unwrap()
    }

    #[test]
    fn zero_confidence_joints_are_invalid_with_zeroed_coords() {
        let cands = candidates_from(vec![vec![
            pose(&[(1.0, 2.0, 0.9), (3.0, 4.0, 0.0)]),
            pose(&[(5.0, 6.0, 0.8), (7.0, 8.0, 0.7)]),
        ]]);
        assert_eq!(cands.n_joints, 2);
        let c = &cands.frames[0][0];
        assert_eq!(c.coords, vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(c.valid, vec![true, false]);
        assert_eq!(cands.frames[0].len(), 2);
    }

    #[test]
    fn empty_directory_and_ragged_poses_are_errors() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(load_pose_stream(tmp.path(), 30.0).is_err());
        fs::write(tmp.path().join("f0.json"), r#"{"poses": [[1.0, 2.0]]}"#).unwrap();
        let err = load_pose_stream(tmp.path(), 30.0).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn shuffled_candidate_order_never_swaps_separated_people() {
        // Person A around (0, 0), person B around (10, 10); the JSON order
        // alternates every frame.
        let a = |j: f64| pose(&[(0.0 + j, 0.0, 1.0), (1.0 + j, 1.0, 1.0)]);
        let b = |j: f64| pose(&[(10.0 + j, 10.0, 1.0), (11.0 + j, 11.0, 1.0)]);
        let frames: Vec<Vec<Vec<f64>>> = (0..20)
            .map(|f| {
                let jitter = (f as f64 * 0.7).sin() * 0.05;
                if f % 2 == 0 {
                    vec![a(jitter), b(jitter)]
                } else {
                    vec![b(jitter), a(jitter)]
                }
            })
            .collect();
        let seq = assign_bodies(&candidates_from(frames), "shuffled", None).unwrap();
        for frame in &seq.frames {
            assert!(frame.persons[0].joint(0, 2)[0] < 5.0, "track 0 stays on A");
            assert!(frame.persons[1].joint(0, 2)[0] > 5.0, "track 1 stays on B");
        }
    }

    #[test]
    fn distant_third_candidate_is_discarded() {
        let frames: Vec<Vec<Vec<f64>>> = (0..10)
            .map(|_| {
                vec![
                    pose(&[(0.0, 0.0, 1.0)]),
                    pose(&[(5.0, 5.0, 1.0)]),
                    pose(&[(100.0, 100.0, 1.0)]),
                ]
            })
            .collect();
        let seq = assign_bodies(&candidates_from(frames), "three", None).unwrap();
        for frame in &seq.frames {
            let xs: Vec<f64> = frame.persons.iter().map(|p| p.joint(0, 2)[0]).collect();
            assert!(xs.iter().all(|&x| x < 50.0), "passerby leaked in: {xs:?}");
        }
    }

    #[test]
    fn unmatched_track_carries_forward_with_validity_false() {
        let mut frames: Vec<Vec<Vec<f64>>> = (0..6)
            .map(|_| vec![pose(&[(0.0, 0.0, 1.0)]), pose(&[(5.0, 5.0, 1.0)])])
            .collect();
        frames[3] = vec![pose(&[(0.0, 0.0, 1.0)])]; // person B occluded
        let seq = assign_bodies(&candidates_from(frames), "occlusion", None).unwrap();
        let b3 = &seq.frames[3].persons[1];
        assert_eq!(b3.joint(0, 2), &[5.0, 5.0], "carried forward");
        assert!(!b3.valid[0]);
        assert!(seq.frames[4].persons[1].valid[0]);
    }

    #[test]
    fn frames_before_the_seed_are_carried_back_invalid() {
        let frames = vec![
            vec![pose(&[(0.0, 0.0, 1.0)])], // only one candidate
            vec![pose(&[(0.0, 0.0, 1.0)]), pose(&[(5.0, 5.0, 1.0)])],
            vec![pose(&[(0.0, 0.0, 1.0)]), pose(&[(5.0, 5.0, 1.0)])],
        ];
        let seq = assign_bodies(&candidates_from(frames), "lateseed", None).unwrap();
        assert_eq!(seq.frames.len(), 3);
        assert!(!seq.frames[0].persons[0].valid[0]);
        assert!(!seq.frames[0].persons[1].valid[0]);
        assert!(seq.frames[1].persons[0].valid[0]);
    }

    #[test]
    fn never_two_candidates_is_a_data_error() {
        let frames = vec![vec![pose(&[(0.0, 0.0, 1.0)])]; 5];
        let err = assign_bodies(&candidates_from(frames), "solo", None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn crossing_trajectories_keep_identities() {
        // A walks x: 0→10 at y=0; B walks x: 10→0 at y=0.6. They pass at
        // the midpoint but the y offset plus track memory keeps them apart.
        let n = 101;
        let frames: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|f| {
                let u = f as f64 / (n - 1) as f64;
                let ax = 10.0 * u;
                let bx = 10.0 * (1.0 - u);
                vec![
                    pose(&[(ax, 0.0, 1.0), (ax + 0.3, 0.1, 1.0)]),
                    pose(&[(bx, 0.6, 1.0), (bx + 0.3, 0.7, 1.0)]),
                ]
            })
            .collect();
        let seq = assign_bodies(&candidates_from(frames), "crossing", None).unwrap();
        let mut correct = 0;
        for (f, frame) in seq.frames.iter().enumerate() {
            let u = f as f64 / (n - 1) as f64;
            let ax = 10.0 * u;
            if (frame.persons[0].joint(0, 2)[0] - ax).abs() < 1e-9
                && frame.persons[0].joint(0, 2)[1].abs() < 1e-9
            {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / n as f64;
        assert!(accuracy >= 0.95, "assignment accuracy {accuracy}");
    }
}
