//! Skeleton sequence ingestion and preparation: native dataset loaders,
//! per-frame pose-stream tracking, a canonical JSON interchange, joint
//! subsampling, temporal windowing, synthetic interaction generation and
//! evaluation fold construction.

pub mod canonical;
pub mod folds;
pub mod ntu;
pub mod pose_stream;
pub mod sbu;
pub mod synthetic;
pub mod windows;

pub use canonical::{load_canonical_dir, write_canonical, CanonicalRecord, Manifest, ManifestEntry};
pub use folds::{make_folds, FoldAssignment, FoldSplit, Protocol};
pub use ntu::{load_ntu, NTU_TO_SBU15};
pub use pose_stream::{assign_bodies, load_pose_stream, CandidatePose, PoseCandidates};
pub use sbu::load_sbu;
pub use synthetic::{synth_corpus, synthesize_sample, Archetype};
pub use windows::{
    build_joint_objects, sample_from_sequence, subsample_joints, window_central,
    window_overlapping,
};

use crate::error::{Error, Result};

/// Names of the 15 retained joints, in canonical order. Native 15-joint data
/// already follows this order; denser skeletons are subsampled onto it.
pub const JOINT_NAMES_15: [&str; 15] = [
    "head",
    "neck",
    "torso",
    "left_shoulder",
    "left_elbow",
    "left_hand",
    "right_shoulder",
    "right_elbow",
    "right_hand",
    "left_hip",
    "left_knee",
    "left_foot",
    "right_hip",
    "right_knee",
    "right_foot",
];

/// Body-part tag per canonical joint: 0 = trunk, 1 = left arm,
/// 2 = right arm, 3 = left leg, 4 = right leg.
pub const BODY_PART_OF_15: [usize; 15] = [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4];

pub const BODY_PART_COUNT: usize = 5;

/// One person's joints in one frame. `coords` is joint-major
/// (joint 0's d values, joint 1's d values, ...); `valid[j]` is false when
/// joint j was not observed (occluded, zero-confidence, carried forward).
#[derive(Debug, Clone, PartialEq)]
pub struct PersonFrame {
    pub coords: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PersonFrame {
    pub fn new(coords: Vec<f64>, valid: Vec<bool>) -> Self {
        PersonFrame { coords, valid }
    }

    /// A slot with no observation at all.
    pub fn missing(n_joints: usize, d: usize) -> Self {
        PersonFrame {
            coords: vec![0.0; n_joints * d],
            valid: vec![false; n_joints],
        }
    }

    pub fn joint(&self, j: usize, d: usize) -> &[f64] {
        &self.coords[j * d..(j + 1) * d]
    }

    pub fn is_missing(&self) -> bool {
        self.valid.iter().all(|v| !v)
    }
}

/// One time step: always exactly two person slots (either may be missing).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub persons: [PersonFrame; 2],
}

/// A full recorded interaction: per-frame coordinates for two people plus
/// the metadata the evaluation protocols key on.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    /// Coordinate dimensionality, 2 or 3.
    pub d: usize,
    pub n_joints: usize,
    pub fps: f64,
    pub label: Option<usize>,
    pub subject: Option<u32>,
    pub camera: Option<u32>,
    pub setup: Option<u32>,
    /// Grouping key for fold construction (e.g. a participant-pair id);
    /// sequences sharing it never straddle a train/test boundary.
    pub pair_id: Option<String>,
    pub frames: Vec<Frame>,
}

impl SkeletonSequence {
    /// Checks the structural invariants: constant joint count and
    /// dimensionality across frames and persons.
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.d) {
            return Err(Error::Data(format!(
                "sequence {}: dimensionality {} not in {{2, 3}}",
                self.id, self.d
            )));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            for (p, person) in frame.persons.iter().enumerate() {
                if person.coords.len() != self.n_joints * self.d
                    || person.valid.len() != self.n_joints
                {
                    return Err(Error::Data(format!(
                        "sequence {}: frame {t} person {p} has {} coords / {} flags, expected {} joints × {} dims",
                        self.id,
                        person.coords.len(),
                        person.valid.len(),
                        self.n_joints,
                        self.d
                    )));
                }
            }
        }
        Ok(())
    }

    /// Grouping key used by k-fold assignment: the participant pair when
    /// known, otherwise the sequence itself.
    pub fn fold_group(&self) -> &str {
        self.pair_id.as_deref().unwrap_or(&self.id)
    }
}

/// One joint treated as an object: its coordinates across a T-frame window
/// (frame-major: frame 0's d values first) plus its identity tags.
#[derive(Debug, Clone, PartialEq)]
pub struct JointObject {
    pub coords: Vec<f64>,
    pub joint_id: usize,
    pub body_part_id: usize,
}

impl JointObject {
    /// Coordinates at window frame `t`.
    pub fn frame(&self, t: usize, d: usize) -> &[f64] {
        &self.coords[t * d..(t + 1) * d]
    }
}

/// All retained joints of one person over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonJointSet {
    pub joints: Vec<JointObject>,
    /// Window length in frames.
    pub t: usize,
    pub d: usize,
}

impl PersonJointSet {
    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.joints.len()];
        for j in &self.joints {
            if j.coords.len() != self.t * self.d {
                return Err(Error::Data(format!(
                    "joint {} has {} coords, expected {}·{}",
                    j.joint_id,
                    j.coords.len(),
                    self.t,
                    self.d
                )));
            }
            if j.joint_id >= self.joints.len() || seen[j.joint_id] {
                return Err(Error::Data(format!(
                    "joint ids must be distinct and cover 0..{}, saw {} twice or out of range",
                    self.joints.len(),
                    j.joint_id
                )));
            }
            seen[j.joint_id] = true;
            if j.body_part_id >= BODY_PART_COUNT {
                return Err(Error::Data(format!(
                    "body part id {} out of range",
                    j.body_part_id
                )));
            }
        }
        Ok(())
    }
}

/// The unit of training and evaluation: two joint sets (plus the per-window
/// pairs when sequential mode is on) and the class label.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSample {
    pub p1: PersonJointSet,
    pub p2: PersonJointSet,
    /// Overlapping windows in temporal order; empty unless built for a
    /// sequential (recurrent-head) model. When non-empty, `p1`/`p2` mirror
    /// the first window.
    pub windows: Vec<(PersonJointSet, PersonJointSet)>,
    pub label: usize,
    /// Originating sequence id plus window offsets, for reports.
    pub source: String,
}

impl InteractionSample {
    /// Exchanges which person is P1 vs P2, consistently across all windows.
    pub fn swapped(&self) -> InteractionSample {
        InteractionSample {
            p1: self.p2.clone(),
            p2: self.p1.clone(),
            windows: self
                .windows
                .iter()
                .map(|(a, b)| (b.clone(), a.clone()))
                .collect(),
            label: self.label,
            source: self.source.clone(),
        }
    }
}

/// Loader output: parsed sequences plus non-fatal observations (empty
/// directories, skipped padding bodies, ...).
#[derive(Debug, Default)]
pub struct LoadReport {
    pub sequences: Vec<SkeletonSequence>,
    pub warnings: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_part_map_covers_five_parts() {
        assert_eq!(BODY_PART_OF_15.len(), 15);
        for part in 0..BODY_PART_COUNT {
            assert_eq!(
                BODY_PART_OF_15.iter().filter(|&&p| p == part).count(),
                3,
                "part {part} should tag exactly 3 joints"
            );
        }
        assert!(BODY_PART_OF_15.iter().all(|&p| p < BODY_PART_COUNT));
    }

    #[test]
    fn person_frame_missing_is_all_invalid() {
        let p = PersonFrame::missing(15, 3);
        assert!(p.is_missing());
        assert_eq!(p.coords.len(), 45);
        let q = PersonFrame::new(vec![0.0; 4], vec![false, true]);
        assert!(!q.is_missing());
    }

    #[test]
    fn sequence_validation_catches_ragged_frames() {
        let good = PersonFrame::missing(2, 3);
        let bad = PersonFrame::missing(3, 3);
        let seq = SkeletonSequence {
            id: "s".into(),
            d: 3,
            n_joints: 2,
            fps: 15.0,
            label: Some(0),
            subject: None,
            camera: None,
            setup: None,
            pair_id: None,
            frames: vec![Frame {
                persons: [good, bad],
            }],
        };
        assert!(seq.validate().is_err());
    }

    #[test]
    fn swapped_sample_exchanges_persons_everywhere() {
        let set = |tag: f64| PersonJointSet {
            joints: vec![JointObject {
                coords: vec![tag; 2],
                joint_id: 0,
                body_part_id: 0,
            }],
            t: 1,
            d: 2,
        };
        let sample = InteractionSample {
            p1: set(1.0),
            p2: set(2.0),
            windows: vec![(set(1.0), set(2.0)), (set(3.0), set(4.0))],
            label: 7,
            source: "x".into(),
        };
        let s = sample.swapped();
        assert_eq!(s.p1, set(2.0));
        assert_eq!(s.p2, set(1.0));
        assert_eq!(s.windows[1], (set(4.0), set(3.0)));
        assert_eq!(s.label, 7);
        assert_eq!(s.swapped(), sample);
    }
}
