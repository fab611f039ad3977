//! Ingesting raw pose-estimator output and tracking two people through it.
//!
//! Writes a small per-frame JSON stream to a temporary directory — two
//! people walking past each other, with the detector occasionally dropping
//! one of them or emitting a spurious third pose — then loads it and
//! resolves the candidates into two persistent person slots by greedy
//! frame-to-frame matching.
//!
//! Run with: `cargo run --example pose_tracking`

use irn::skeleton::pose_stream::{assign_bodies, load_pose_stream};
use std::fs;

/// A flat (x, y, confidence) pose: 15 joints clustered around (cx, cy).
fn pose(cx: f64, cy: f64, confidence: f64) -> Vec<f64> {
    (0..15)
        .flat_map(|j| {
            let spread = 0.1 * (j as f64 % 5.0);
            [cx + spread, cy - spread, confidence]
        })
        .collect()
}

fn main() -> irn::Result<()> {
    let dir = std::env::temp_dir().join("irn_pose_stream_demo");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).map_err(|e| irn::Error::io(&dir, e))?;

    // Person A walks right, person B walks left; they cross at frame 5.
    for frame in 0..10 {
        let fx = frame as f64;
        let a = pose(fx * 0.5, 1.0, 0.9);
        let b = pose(5.0 - fx * 0.5, 1.2, 0.9);
        let mut poses = vec![a, b];
        if frame == 3 {
            poses.remove(1); // detector loses person B for one frame
        }
        if frame == 7 {
            poses.push(pose(20.0, 20.0, 0.3)); // spurious far-away detection
        }
        let record = serde_json::json!({ "poses": poses });
        let path = dir.join(format!("frame_{frame:03}.json"));
        fs::write(&path, record.to_string()).map_err(|e| irn::Error::io(&path, e))?;
    }

    let candidates = load_pose_stream(&dir, 15.0)?;
    println!(
        "loaded {} frames of {}-joint candidates; detections per frame: {:?}",
        candidates.frames.len(),
        candidates.n_joints,
        candidates.frames.iter().map(Vec::len).collect::<Vec<_>>()
    );

    let seq = assign_bodies(&candidates, "walkby_demo", Some(0))?;
    println!("\ntracked sequence {} ({} joints, {} fps):", seq.id, seq.n_joints, seq.fps);
    println!("frame  person0 x  person1 x  note");
    for (i, frame) in seq.frames.iter().enumerate() {
        let x0 = frame.persons[0].coords[0];
        let x1 = frame.persons[1].coords[0];
        let note = if frame.persons[1].valid.iter().all(|v| !v) {
            "person1 carried forward (dropped detection)"
        } else {
            ""
        };
        println!("{i:>5}  {x0:>9.2}  {x1:>9.2}  {note}");
    }
    println!(
        "\nidentities stay consistent through the crossing: person0 ends at x={:.2}, person1 at x={:.2}",
        seq.frames.last().unwrap().persons[0].coords[0],
        seq.frames.last().unwrap().persons[1].coords[0],
    );

    let _ = fs::remove_dir_all(&dir);
    Ok(())
}
