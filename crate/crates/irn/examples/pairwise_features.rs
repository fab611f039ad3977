//! Joint-pair enumeration and the structured pair feature.
//!
//! Treats each skeleton joint as an object carrying its coordinates over a
//! temporal window plus identity tags, then shows the three pairing
//! strategies and the distance/motion vector appended to each pair's
//! network input row.
//!
//! Run with: `cargo run --example pairwise_features`

use irn::pairing::{
    inter_pairs, intra_pairs, naive_pairs, pairwise_feature_h, row_len, IdEncoding, PairKind,
};
use irn::skeleton::{JointObject, PersonJointSet};

/// A deterministic toy skeleton: joint j sits at (j + offset, offset, ·)
/// and drifts along z at a per-person speed, so the two people move
/// differently.
fn person(n_joints: usize, t: usize, offset: f64, speed: f64) -> PersonJointSet {
    let d = 3;
    let joints = (0..n_joints)
        .map(|j| JointObject {
            coords: (0..t)
                .flat_map(|frame| [j as f64 + offset, offset, frame as f64 * speed])
                .collect(),
            joint_id: j,
            body_part_id: j % 5,
        })
        .collect();
    PersonJointSet { joints, t, d }
}

fn main() -> irn::Result<()> {
    let (n, t) = (5, 4);
    let p1 = person(n, t, 0.0, 0.1);
    let p2 = person(n, t, 2.0, 0.6);

    // Between-person pairs run in both directions so the relation network
    // sees each joint both as subject and as object.
    let inter = inter_pairs(&p1, &p2)?;
    println!(
        "inter: {} + {} = {} ordered cross-person pairs (2·N²)",
        inter.count_of(PairKind::InterForward),
        inter.count_of(PairKind::InterBackward),
        inter.count_of(PairKind::InterForward) + inter.count_of(PairKind::InterBackward),
    );

    // Within-person pairs are unordered: N(N−1)/2 per person.
    let intra1 = intra_pairs(&p1, PairKind::IntraP1)?;
    println!(
        "intra: {} unordered same-person pairs per person (N(N−1)/2)",
        intra1.count_of(PairKind::IntraP1)
    );

    // The naive merge relates every joint of the union to every other.
    let naive = naive_pairs(&p1, &p2)?;
    let naive_total: usize = PairKind::ALL.iter().map(|&k| naive.count_of(k)).collect::<Vec<_>>().iter().sum();
    println!("naive: {naive_total} pairs over the union (2N² + N(N−1))\n");

    // Each pair becomes one input row: both joints' windowed coordinates
    // and ids, optionally followed by the structured feature h = D ⌢ M.
    println!(
        "row length at T={t}, d=3: {} plain, {} with h appended",
        row_len(t, 3, false),
        row_len(t, 3, true)
    );

    let h = pairwise_feature_h(&p1.joints[0], &p2.joints[3], 3)?;
    let (dist, motion) = h.split_at(t);
    println!("\npair (p1 joint 0, p2 joint 3):");
    println!("  per-frame distances D: {dist:?}");
    println!("  cross-frame motion  M: {motion:?}");
    println!("  (M compares frame t of one joint with frame t+1 of the other,");
    println!("   so it is directional: h(a,b) ≠ h(b,a) in general)");

    let h_rev = pairwise_feature_h(&p2.joints[3], &p1.joints[0], 3)?;
    println!(
        "  reversed motion      : {:?}",
        &h_rev[t..]
    );

    // Identity tags can widen into indicator vectors, which keeps every
    // input column on a comparable scale.
    let rows = inter.rows_encoded(true, IdEncoding::OneHot { n_joints: n })?;
    println!(
        "\nindicator-encoded rows: {} × {} (joint and body-part ids one-hot)",
        rows.rows, rows.cols
    );
    Ok(())
}
