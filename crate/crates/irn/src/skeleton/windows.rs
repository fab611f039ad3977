//! Joint subsampling, temporal windowing and assembly of per-window joint
//! objects.

use crate::error::{Error, Result};
use crate::skeleton::{
    Frame, InteractionSample, JointObject, PersonFrame, PersonJointSet, SkeletonSequence,
    BODY_PART_OF_15,
};

/// Keeps only the joints listed in `map` (source indices, in target order)
/// and relabels them 0..map.len().
pub fn subsample_joints(seq: &SkeletonSequence, map: &[usize]) -> Result<SkeletonSequence> {
    if let Some(&bad) = map.iter().find(|&&m| m >= seq.n_joints) {
        return Err(Error::Config(format!(
            "joint map entry {bad} out of range for {}-joint sequence {}",
            seq.n_joints, seq.id
        )));
    }
    let d = seq.d;
    let frames = seq
        .frames
        .iter()
        .map(|frame| Frame {
            persons: std::array::from_fn(|p| {
                let src = &frame.persons[p];
                let mut coords = Vec::with_capacity(map.len() * d);
                let mut valid = Vec::with_capacity(map.len());
                for &m in map {
                    coords.extend_from_slice(src.joint(m, d));
                    valid.push(src.valid[m]);
                }
                PersonFrame::new(coords, valid)
            }),
        })
        .collect();
    Ok(SkeletonSequence {
        n_joints: map.len(),
        frames,
        ..seq.clone()
    })
}

/// T frame indices centered in a sequence of `len` frames, spaced by
/// `dilation`. Sequences shorter than the span are anchored at 0 and padded
/// by repeating the final frame.
pub fn window_central(len: usize, t: usize, dilation: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::Data("cannot window an empty sequence".into()));
    }
    if t < 2 || dilation == 0 {
        return Err(Error::Config(format!(
            "central window needs T ≥ 2 and dilation ≥ 1, got T={t}, dilation={dilation}"
        )));
    }
    let span = (t - 1) * dilation + 1;
    let start = if len >= span { (len - span) / 2 } else { 0 };
    Ok((0..t)
        .map(|i| (start + i * dilation).min(len - 1))
        .collect())
}

/// Overlapping T-frame windows advancing by T/2: all full windows starting
/// at 0, T/2, T, ..., plus one trailing padded window whenever the last full
/// window stops short of the end (or the sequence is shorter than T).
pub fn window_overlapping(len: usize, t: usize) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::Data("cannot window an empty sequence".into()));
    }
    if t < 2 || t % 2 != 0 {
        return Err(Error::Config(format!(
            "overlapping windows need an even T ≥ 2, got {t}"
        )));
    }
    let step = t / 2;
    let mut windows = Vec::new();
    let mut offset = 0;
    while offset + t <= len {
        windows.push((offset..offset + t).collect());
        offset += step;
    }
    let covered_to = windows.last().map(|w: &Vec<usize>| w[t - 1] + 1).unwrap_or(0);
    if covered_to < len {
        let start = if windows.is_empty() { 0 } else { covered_to - step };
        windows.push((0..t).map(|i| (start + i).min(len - 1)).collect());
    }
    Ok(windows)
}

/// Linear-interpolation gap policy over one joint's window series: invalid
/// frames are filled between the nearest valid neighbours, the ends hold the
/// nearest valid value, and a joint with no valid frame at all stays zero.
fn fill_gaps(series: &mut [f64], valid: &[bool], d: usize) {
    let t = valid.len();
    let valid_idx: Vec<usize> = (0..t).filter(|&i| valid[i]).collect();
    if valid_idx.is_empty() {
        for v in series.iter_mut() {
            *v = 0.0;
        }
        return;
    }
    for i in 0..t {
        if valid[i] {
            continue;
        }
        let next = valid_idx.iter().copied().find(|&v| v > i);
        let prev = valid_idx.iter().copied().rev().find(|&v| v < i);
        let filled: Vec<f64> = match (prev, next) {
            (Some(p), Some(n)) => {
                let alpha = (i - p) as f64 / (n - p) as f64;
                (0..d)
                    .map(|k| series[p * d + k] * (1.0 - alpha) + series[n * d + k] * alpha)
                    .collect()
            }
            (Some(p), None) => series[p * d..(p + 1) * d].to_vec(),
            (None, Some(n)) => series[n * d..(n + 1) * d].to_vec(),
            (None, None) => unreachable!(),
        };
        series[i * d..(i + 1) * d].copy_from_slice(&filled);
    }
}

/// Extracts one person's joints over `window` as frame-major joint objects,
/// applying the gap policy to invalid frames.
pub fn build_joint_objects(
    seq: &SkeletonSequence,
    window: &[usize],
    person: usize,
    body_parts: &[usize],
) -> Result<PersonJointSet> {
    if person >= 2 {
        return Err(Error::Config(format!("person index {person} not in 0..2")));
    }
    if body_parts.len() != seq.n_joints {
        return Err(Error::Config(format!(
            "body-part map has {} entries for {} joints",
            body_parts.len(),
            seq.n_joints
        )));
    }
    if let Some(&bad) = window.iter().find(|&&f| f >= seq.frames.len()) {
        return Err(Error::Data(format!(
            "window frame {bad} out of range for {}-frame sequence {}",
            seq.frames.len(),
            seq.id
        )));
    }
    let (t, d) = (window.len(), seq.d);
    let all_missing = window
        .iter()
        .all(|&f| seq.frames[f].persons[person].is_missing());
    if all_missing {
        return Err(Error::Data(format!(
            "sequence {}: person {person} has no valid joint in the window",
            seq.id
        )));
    }
    let mut joints = Vec::with_capacity(seq.n_joints);
    for j in 0..seq.n_joints {
        let mut coords = Vec::with_capacity(t * d);
        let mut valid = Vec::with_capacity(t);
        for &f in window {
            let pf = &seq.frames[f].persons[person];
            coords.extend_from_slice(pf.joint(j, d));
            valid.push(pf.valid[j]);
        }
        fill_gaps(&mut coords, &valid, d);
        joints.push(JointObject {
            coords,
            joint_id: j,
            body_part_id: body_parts[j],
        });
    }
    Ok(PersonJointSet { joints, t, d })
}

/// Builds the training/eval unit for one sequence: a central dilated window,
/// plus the full list of overlapping windows when `sequential` is set.
pub fn sample_from_sequence(
    seq: &SkeletonSequence,
    t: usize,
    dilation: usize,
    sequential: bool,
    body_parts: &[usize],
) -> Result<InteractionSample> {
    let label = seq.label.ok_or_else(|| {
        Error::Data(format!("sequence {} has no class label", seq.id))
    })?;
    let len = seq.frames.len();
    if sequential {
        let offsets = window_overlapping(len, t)?;
        let mut windows = Vec::with_capacity(offsets.len());
        for w in &offsets {
            windows.push((
                build_joint_objects(seq, w, 0, body_parts)?,
                build_joint_objects(seq, w, 1, body_parts)?,
            ));
        }
        let starts: Vec<String> = offsets.iter().map(|w| w[0].to_string()).collect();
        let (p1, p2) = windows[0].clone();
        Ok(InteractionSample {
            p1,
            p2,
            windows,
            label,
            source: format!("{}@[{}]", seq.id, starts.join(",")),
        })
    } else {
        let window = window_central(len, t, dilation)?;
        let source = format!("{}@{}", seq.id, window[0]);
        Ok(InteractionSample {
            p1: build_joint_objects(seq, &window, 0, body_parts)?,
            p2: build_joint_objects(seq, &window, 1, body_parts)?,
            windows: Vec::new(),
            label,
            source,
        })
    }
}

/// The canonical body-part map for a given joint count; only the 15-joint
/// canonical skeleton has one.
pub fn default_body_parts(n_joints: usize) -> Result<&'static [usize]> {
    if n_joints == BODY_PART_OF_15.len() {
        Ok(&BODY_PART_OF_15)
    } else {
        Err(Error::Config(format!(
            "no body-part map for {n_joints} joints; subsample to 15 first"
        )))
    }
}

/// The standard ingestion pipeline from stored sequences to training/eval
/// units: 25-joint skeletons are subsampled to the canonical 15, then each
/// sequence is windowed (one central dilated window, or all overlapping
/// windows when `sequential` is set). Output order follows input order.
pub fn prepare_samples(
    seqs: &[SkeletonSequence],
    t: usize,
    dilation: usize,
    sequential: bool,
) -> Result<Vec<InteractionSample>> {
    let mut samples = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let reduced;
        let seq = if seq.n_joints == 25 {
            reduced = subsample_joints(seq, &crate::skeleton::ntu::NTU_TO_SBU15)?;
            &reduced
        } else {
            seq
        };
        let parts = default_body_parts(seq.n_joints)?;
        samples.push(sample_from_sequence(seq, t, dilation, sequential, parts)?);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::synthetic::{synthesize_sample, Archetype};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_sequence(n_frames: usize, n_joints: usize) -> SkeletonSequence {
        // Joint j of person p at frame f sits at (f, j, p): every coordinate
        // encodes its own indices, so read-back checks are exact.
        let frames = (0..n_frames)
            .map(|f| Frame {
                persons: std::array::from_fn(|p| {
                    let mut coords = Vec::new();
                    for j in 0..n_joints {
                        coords.extend_from_slice(&[f as f64, j as f64, p as f64]);
                    }
                    PersonFrame::new(coords, vec![true; n_joints])
                }),
            })
            .collect();
        SkeletonSequence {
            id: "tiny".into(),
            d: 3,
            n_joints,
            fps: 15.0,
            label: Some(1),
            subject: None,
            camera: None,
            setup: None,
            pair_id: None,
            frames,
        }
    }

    #[test]
    fn central_window_arithmetic_matches_worked_examples() {
        assert_eq!(window_central(10, 8, 1).unwrap(), vec![1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(window_central(8, 8, 1).unwrap(), (0..8).collect::<Vec<_>>());
        assert_eq!(
            window_central(6, 8, 1).unwrap(),
            vec![0, 1, 2, 3, 4, 5, 5, 5]
        );
        // Dilation widens the span: T=4, dilation=2 spans 7 frames.
        assert_eq!(window_central(11, 4, 2).unwrap(), vec![2, 4, 6, 8]);
        assert!(window_central(0, 8, 1).is_err());
        assert!(window_central(5, 1, 1).is_err());
    }

    #[test]
    fn overlapping_window_offsets_match_worked_examples() {
        let w = window_overlapping(16, 8).unwrap();
        let starts: Vec<usize> = w.iter().map(|x| x[0]).collect();
        assert_eq!(starts, vec![0, 4, 8]);

        let w = window_overlapping(8, 8).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0], (0..8).collect::<Vec<_>>());

        let w = window_overlapping(100, 32).unwrap();
        let starts: Vec<usize> = w.iter().map(|x| x[0]).collect();
        assert_eq!(starts, vec![0, 16, 32, 48, 64, 80]);
        // The trailing window pads by repeating the last frame.
        let last = w.last().unwrap();
        assert_eq!(last[19], 99);
        assert_eq!(last[20], 99);
        assert_eq!(last[31], 99);

        // Shorter than T: one fully padded window.
        let w = window_overlapping(3, 8).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0], vec![0, 1, 2, 2, 2, 2, 2, 2]);

        assert!(window_overlapping(10, 7).is_err());
        assert!(window_overlapping(0, 8).is_err());
    }

    #[test]
    fn overlapping_windows_cover_every_frame() {
        for len in 1..130usize {
            for t in [2usize, 4, 8, 32] {
                let windows = window_overlapping(len, t).unwrap();
                let mut covered = vec![false; len];
                for w in &windows {
                    for &f in w {
                        covered[f] = true;
                    }
                }
                assert!(
                    covered.iter().all(|&c| c),
                    "len={len} T={t} leaves a frame uncovered"
                );
            }
        }
    }

    #[test]
    fn joint_objects_read_back_source_coordinates() {
        let seq = tiny_sequence(12, 4);
        let window = window_central(12, 6, 1).unwrap();
        let parts = [0, 1, 2, 3];
        for person in 0..2 {
            let set = build_joint_objects(&seq, &window, person, &parts).unwrap();
            set.validate().unwrap();
            assert_eq!(set.n_joints(), 4);
            assert_eq!(set.t, 6);
            for (j, joint) in set.joints.iter().enumerate() {
                assert_eq!(joint.joint_id, j);
                assert_eq!(joint.body_part_id, parts[j]);
                for (i, &f) in window.iter().enumerate() {
                    assert_eq!(
                        joint.frame(i, 3),
                        &[f as f64, j as f64, person as f64],
                        "person {person} joint {j} frame {f}"
                    );
                }
            }
        }
    }

    #[test]
    fn gap_policy_interpolates_holds_ends_and_zeroes_never_valid() {
        let mut seq = tiny_sequence(5, 2);
        // Joint 0 of person 0: valid only at frames 1 and 4; joint 1 never
        // valid.
        for (f, frame) in seq.frames.iter_mut().enumerate() {
            let p = &mut frame.persons[0];
            p.valid[0] = f == 1 || f == 4;
            p.valid[1] = false;
        }
        let window: Vec<usize> = (0..5).collect();
        let set = build_joint_objects(&seq, &window, 0, &[0, 1]).unwrap();
        let j0 = &set.joints[0];
        // Frame 0 holds the first valid frame (1); frames 2 and 3
        // interpolate linearly between frames 1 and 4 on the first axis
        // (values 1.0 → 4.0).
        assert_eq!(j0.frame(0, 3), &[1.0, 0.0, 0.0]);
        assert_eq!(j0.frame(1, 3), &[1.0, 0.0, 0.0]);
        assert_eq!(j0.frame(2, 3), &[2.0, 0.0, 0.0]);
        assert_eq!(j0.frame(3, 3), &[3.0, 0.0, 0.0]);
        assert_eq!(j0.frame(4, 3), &[4.0, 0.0, 0.0]);
        // Never-valid joint is zero-filled.
        assert!(set.joints[1].coords.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn person_missing_in_every_window_frame_is_a_data_error() {
        let mut seq = tiny_sequence(4, 2);
        for frame in &mut seq.frames {
            frame.persons[1] = PersonFrame::missing(2, 3);
        }
        let window: Vec<usize> = (0..4).collect();
        assert!(build_joint_objects(&seq, &window, 0, &[0, 1]).is_ok());
        let err = build_joint_objects(&seq, &window, 1, &[0, 1]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn subsampling_selects_source_joints_verbatim() {
        let seq = tiny_sequence(3, 5);
        let map = [4, 0, 2];
        let sub = subsample_joints(&seq, &map).unwrap();
        assert_eq!(sub.n_joints, 3);
        sub.validate().unwrap();
        for (f, frame) in sub.frames.iter().enumerate() {
            for p in 0..2 {
                for (new_j, &src_j) in map.iter().enumerate() {
                    assert_eq!(
                        frame.persons[p].joint(new_j, 3),
                        &[f as f64, src_j as f64, p as f64]
                    );
                }
            }
        }
        // Identity map leaves the sequence unchanged.
        let same = subsample_joints(&seq, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(same.frames, seq.frames);
        // Out-of-range source index is a config error.
        assert!(subsample_joints(&seq, &[0, 7]).is_err());
    }

    #[test]
    fn sequential_samples_keep_windows_in_temporal_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = synthesize_sample(Archetype::Approach, &mut rng, 0.0);
        let sample = sample_from_sequence(&seq, 8, 1, true, &BODY_PART_OF_15).unwrap();
        assert!(!sample.windows.is_empty());
        assert_eq!(sample.p1, sample.windows[0].0);
        assert_eq!(sample.label, 0);
        // Consecutive windows advance by T/2: compare first-frame x of the
        // torso joint; approach decreases inter-person distance over time.
        let sample_flat = sample_from_sequence(&seq, 8, 1, false, &BODY_PART_OF_15).unwrap();
        assert!(sample_flat.windows.is_empty());
        assert_eq!(sample_flat.p1.t, 8);
    }

    #[test]
    fn unlabeled_sequence_cannot_become_a_sample() {
        let mut seq = tiny_sequence(8, 15);
        seq.label = None;
        assert!(sample_from_sequence(&seq, 4, 1, false, &BODY_PART_OF_15).is_err());
    }
}
