//! Enumeration of joint–joint relationship pairs and their structured
//! pairwise features.
//!
//! Two joint sets can be related three ways:
//! * **inter** — every joint of one person against every joint of the
//!   other, in both directions (N² pairs each way);
//! * **intra** — all unordered joint pairs within one person
//!   (N(N−1)/2 pairs);
//! * **naive** — the union of all of the above pooled as a single
//!   undifferentiated group.
//!
//! Each pair can optionally carry the structured feature
//! `h = D ⌢ M`: per-frame Euclidean distances between the two joints (T
//! values) followed by cross-frame "motion" distances from the first
//! joint at frame t to the second at frame t+1 (T−1 values, directional).

use crate::error::{Error, Result};
use crate::skeleton::{JointObject, PersonJointSet};

/// Which relationship group a pair belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairKind {
    /// Person 1 joint first, person 2 joint second.
    InterForward,
    /// Person 2 joint first, person 1 joint second.
    InterBackward,
    IntraP1,
    IntraP2,
}

impl PairKind {
    pub const ALL: [PairKind; 4] = [
        PairKind::InterForward,
        PairKind::InterBackward,
        PairKind::IntraP1,
        PairKind::IntraP2,
    ];
}

/// One ordered joint pair feeding the relation module.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationPair {
    pub a: JointObject,
    pub b: JointObject,
    pub kind: PairKind,
}

/// A set of enumerated pairs, kept in deterministic enumeration order.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub pairs: Vec<RelationPair>,
    t: usize,
    d: usize,
}

impl PairBatch {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn count_of(&self, kind: PairKind) -> usize {
        self.pairs.iter().filter(|p| p.kind == kind).count()
    }

    pub fn of_kind(&self, kind: PairKind) -> impl Iterator<Item = &RelationPair> {
        self.pairs.iter().filter(move |p| p.kind == kind)
    }

    /// Assembles the input rows for every pair, in order, as one flat
    /// row-major matrix.
    pub fn rows(&self, use_h: bool) -> Result<InputRows> {
        self.rows_encoded(use_h, IdEncoding::Raw)
    }

    /// Assembles the input rows for pairs of one kind only.
    pub fn rows_of_kind(&self, kind: PairKind, use_h: bool) -> Result<InputRows> {
        self.rows_of_kind_encoded(kind, use_h, IdEncoding::Raw)
    }

    pub fn rows_encoded(&self, use_h: bool, enc: IdEncoding) -> Result<InputRows> {
        assemble_rows(self.pairs.iter(), self.t, self.d, use_h, enc)
    }

    pub fn rows_of_kind_encoded(
        &self,
        kind: PairKind,
        use_h: bool,
        enc: IdEncoding,
    ) -> Result<InputRows> {
        assemble_rows(self.of_kind(kind), self.t, self.d, use_h, enc)
    }

    /// Concatenates batches that describe the same window geometry.
    pub fn merge(mut self, other: PairBatch) -> Result<PairBatch> {
        if self.t != other.t || self.d != other.d {
            return Err(Error::Data(format!(
                "cannot merge pair batches with t/d {}×{} vs {}×{}",
                self.t, self.d, other.t, other.d
            )));
        }
        self.pairs.extend(other.pairs);
        Ok(self)
    }
}

/// A dense row-major matrix of assembled relation inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRows {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

/// How joint and body-part identities are embedded into the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdEncoding {
    /// The ids appear as two raw reals per joint (the default).
    Raw,
    /// One-hot over joint id (`n_joints` slots) followed by one-hot over
    /// body part ([`crate::skeleton::BODY_PART_COUNT`] slots).
    OneHot { n_joints: usize },
}

impl IdEncoding {
    fn width(&self) -> usize {
        match self {
            IdEncoding::Raw => 2,
            IdEncoding::OneHot { n_joints } => n_joints + crate::skeleton::BODY_PART_COUNT,
        }
    }

    fn encode(&self, joint: &JointObject, row: &mut Vec<f64>) -> Result<()> {
        match *self {
            IdEncoding::Raw => {
                row.push(joint.joint_id as f64);
                row.push(joint.body_part_id as f64);
            }
            IdEncoding::OneHot { n_joints } => {
                if joint.joint_id >= n_joints {
                    return Err(Error::Data(format!(
                        "joint id {} out of range for one-hot width {n_joints}",
                        joint.joint_id
                    )));
                }
                let base = row.len();
                row.resize(base + n_joints + crate::skeleton::BODY_PART_COUNT, 0.0);
                row[base + joint.joint_id] = 1.0;
                row[base + n_joints + joint.body_part_id] = 1.0;
            }
        }
        Ok(())
    }
}

/// Length of one assembled row for window length `t`, dimensionality `d`.
pub fn row_len(t: usize, d: usize, use_h: bool) -> usize {
    row_len_encoded(t, d, use_h, IdEncoding::Raw)
}

/// Row length under an explicit id encoding.
pub fn row_len_encoded(t: usize, d: usize, use_h: bool, enc: IdEncoding) -> usize {
    2 * (t * d + enc.width()) + if use_h { 2 * t - 1 } else { 0 }
}

fn check_compatible(p1: &PersonJointSet, p2: &PersonJointSet) -> Result<()> {
    if p1.n_joints() != p2.n_joints() || p1.t != p2.t || p1.d != p2.d {
        return Err(Error::Data(format!(
            "joint sets disagree: {} joints {}×{} vs {} joints {}×{}",
            p1.n_joints(),
            p1.t,
            p1.d,
            p2.n_joints(),
            p2.t,
            p2.d
        )));
    }
    Ok(())
}

/// Indices of `set.joints` sorted by joint id, so enumeration order is
/// stable regardless of storage order.
fn id_order(set: &PersonJointSet) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..set.joints.len()).collect();
    idx.sort_by_key(|&i| set.joints[i].joint_id);
    idx
}

/// All inter-person pairs, both directions, (i, k) lexicographic by joint id.
pub fn inter_pairs(p1: &PersonJointSet, p2: &PersonJointSet) -> Result<PairBatch> {
    check_compatible(p1, p2)?;
    let (o1, o2) = (id_order(p1), id_order(p2));
    let n = p1.n_joints();
    let mut pairs = Vec::with_capacity(2 * n * n);
    for &i in &o1 {
        for &k in &o2 {
            pairs.push(RelationPair {
                a: p1.joints[i].clone(),
                b: p2.joints[k].clone(),
                kind: PairKind::InterForward,
            });
        }
    }
    for &i in &o2 {
        for &k in &o1 {
            pairs.push(RelationPair {
                a: p2.joints[i].clone(),
                b: p1.joints[k].clone(),
                kind: PairKind::InterBackward,
            });
        }
    }
    Ok(PairBatch {
        pairs,
        t: p1.t,
        d: p1.d,
    })
}

/// All unordered within-person pairs, `a.joint_id < b.joint_id`,
/// lexicographic. `kind` must be one of the intra kinds.
pub fn intra_pairs(p: &PersonJointSet, kind: PairKind) -> Result<PairBatch> {
    if !matches!(kind, PairKind::IntraP1 | PairKind::IntraP2) {
        return Err(Error::Data(format!(
            "intra enumeration requires an intra kind, got {kind:?}"
        )));
    }
    let n = p.n_joints();
    if n < 2 {
        return Err(Error::Data(format!(
            "within-person pairing needs at least 2 joints, found {n}"
        )));
    }
    let order = id_order(p);
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for k in i + 1..n {
            pairs.push(RelationPair {
                a: p.joints[order[i]].clone(),
                b: p.joints[order[k]].clone(),
                kind,
            });
        }
    }
    Ok(PairBatch { pairs, t: p.t, d: p.d })
}

/// The union of both inter directions and both persons' intra pairs,
/// pooled downstream as one undifferentiated group.
pub fn naive_pairs(p1: &PersonJointSet, p2: &PersonJointSet) -> Result<PairBatch> {
    inter_pairs(p1, p2)?
        .merge(intra_pairs(p1, PairKind::IntraP1)?)?
        .merge(intra_pairs(p2, PairKind::IntraP2)?)
}

fn check_same_geometry(a: &JointObject, b: &JointObject, d: usize) -> Result<usize> {
    if a.coords.len() != b.coords.len() || d == 0 || a.coords.len() % d != 0 {
        return Err(Error::Data(format!(
            "joint trajectories disagree: {} vs {} coords (d={d})",
            a.coords.len(),
            b.coords.len()
        )));
    }
    Ok(a.coords.len() / d)
}

/// Per-frame Euclidean distance between two joint trajectories: T values.
pub fn distance_vector(a: &JointObject, b: &JointObject, d: usize) -> Result<Vec<f64>> {
    let t = check_same_geometry(a, b, d)?;
    Ok((0..t)
        .map(|f| euclid(a.frame(f, d), b.frame(f, d)))
        .collect())
}

/// Cross-frame distance from `a` at frame t to `b` at frame t+1: T−1
/// values. Directional — swapping the arguments changes the result.
pub fn motion_vector(a: &JointObject, b: &JointObject, d: usize) -> Result<Vec<f64>> {
    let t = check_same_geometry(a, b, d)?;
    if t < 2 {
        return Err(Error::Data(format!(
            "motion features need at least 2 frames, found {t}"
        )));
    }
    Ok((0..t - 1)
        .map(|f| euclid(a.frame(f, d), b.frame(f + 1, d)))
        .collect())
}

/// The structured pairwise feature `h = D ⌢ M`: 2T−1 values.
pub fn pairwise_feature_h(a: &JointObject, b: &JointObject, d: usize) -> Result<Vec<f64>> {
    let mut h = distance_vector(a, b, d)?;
    h.extend(motion_vector(a, b, d)?);
    Ok(h)
}

/// One input row for the relation module:
/// `a.coords ⌢ [a.joint_id, a.body_part_id] ⌢ b.coords ⌢ [b.joint_id,
/// b.body_part_id] ⌢ (h if use_h)`. Ids are encoded as raw reals.
pub fn assemble_relation_input(pair: &RelationPair, d: usize, use_h: bool) -> Result<Vec<f64>> {
    assemble_relation_input_encoded(pair, d, use_h, IdEncoding::Raw)
}

/// [`assemble_relation_input`] with an explicit id encoding.
pub fn assemble_relation_input_encoded(
    pair: &RelationPair,
    d: usize,
    use_h: bool,
    enc: IdEncoding,
) -> Result<Vec<f64>> {
    let t = check_same_geometry(&pair.a, &pair.b, d)?;
    let mut row = Vec::with_capacity(row_len_encoded(t, d, use_h, enc));
    for joint in [&pair.a, &pair.b] {
        row.extend_from_slice(&joint.coords);
        enc.encode(joint, &mut row)?;
    }
    if use_h {
        row.extend(pairwise_feature_h(&pair.a, &pair.b, d)?);
    }
    Ok(row)
}

fn assemble_rows<'a>(
    pairs: impl Iterator<Item = &'a RelationPair>,
    t: usize,
    d: usize,
    use_h: bool,
    enc: IdEncoding,
) -> Result<InputRows> {
    let cols = row_len_encoded(t, d, use_h, enc);
    let mut data = Vec::new();
    let mut rows = 0;
    for pair in pairs {
        let row = assemble_relation_input_encoded(pair, d, use_h, enc)?;
        if row.len() != cols {
            return Err(Error::Data(format!(
                "assembled row has {} values, expected {cols}",
                row.len()
            )));
        }
        data.extend(row);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data("no pairs to assemble".into()));
    }
    Ok(InputRows { data, rows, cols })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
