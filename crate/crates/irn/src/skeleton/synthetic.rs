//! Synthetic two-person interactions with known structure, used for
//! desk-scale learnability and pipeline verification.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::skeleton::{Frame, PersonFrame, SkeletonSequence};

/// The four generated interaction classes. Labels are the enum order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Archetype {
    /// Inter-person distance closes from far to near.
    Approach,
    /// Inter-person distance opens from near to far.
    Depart,
    /// Distance holds while one arm extends rapidly toward the other person
    /// and retracts.
    Strike,
    /// Both people's hands travel to the midpoint and hold there.
    Clasp,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::Approach,
        Archetype::Depart,
        Archetype::Strike,
        Archetype::Clasp,
    ];

    pub fn label(self) -> usize {
        match self {
            Archetype::Approach => 0,
            Archetype::Depart => 1,
            Archetype::Strike => 2,
            Archetype::Clasp => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Approach => "approach",
            Archetype::Depart => "depart",
            Archetype::Strike => "strike",
            Archetype::Clasp => "clasp",
        }
    }
}

impl std::str::FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown archetype {s:?}; expected one of approach, depart, strike, clasp"
                ))
            })
    }
}

/// Upright 15-joint rest pose (metres): x is the facing axis, y is up,
/// z is lateral. Mirrored through x and z for the person facing back.
const BASE_POSE: [[f64; 3]; 15] = [
    [0.00, 1.60, 0.00],  // head
    [0.00, 1.45, 0.00],  // neck
    [0.00, 1.10, 0.00],  // torso
    [0.00, 1.42, 0.22],  // left shoulder
    [0.05, 1.15, 0.28],  // left elbow
    [0.25, 0.95, 0.25],  // left hand
    [0.00, 1.42, -0.22], // right shoulder
    [0.05, 1.15, -0.28], // right elbow
    [0.25, 0.95, -0.25], // right hand
    [0.00, 0.85, 0.12],  // left hip
    [0.00, 0.45, 0.14],  // left knee
    [0.00, 0.05, 0.14],  // left foot
    [0.00, 0.85, -0.12], // right hip
    [0.00, 0.45, -0.14], // right knee
    [0.00, 0.05, -0.14], // right foot
];

const TORSO: usize = 2;
const RIGHT_ELBOW: usize = 7;
const RIGHT_HAND: usize = 8;
const LEFT_HAND: usize = 5;

/// Triangular profile peaking at the middle of the sequence: 0 → 1 → 0.
fn triangle(u: f64) -> f64 {
    1.0 - (2.0 * u - 1.0).abs()
}

/// Saturating ramp reaching 1 at 40% of the sequence, then holding.
fn ramp_hold(u: f64) -> f64 {
    (u / 0.4).min(1.0)
}

/// Generates one labelled two-person sequence. Both skeletons share a rigid
/// rest pose; the archetype drives the relative root trajectory (and arm
/// motion for strike/clasp); independent Gaussian jitter of scale `noise`
/// is added to every coordinate. The class signal lives entirely in the
/// inter-person geometry, so it is recoverable from relational features by
/// construction.
pub fn synthesize_sample(
    archetype: Archetype,
    rng: &mut impl Rng,
    noise: f64,
) -> SkeletonSequence {
    let n_frames = rng.gen_range(20..=28);
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let u = f as f64 / (n_frames - 1) as f64;
        let dist = match archetype {
            Archetype::Approach => 2.2 - 1.5 * u,
            Archetype::Depart => 0.7 + 1.5 * u,
            Archetype::Strike => 1.1,
            Archetype::Clasp => 1.0,
        };
        let persons = std::array::from_fn(|p| {
            // Person 0 stands at −dist/2 facing +x; person 1 mirrored.
            let orient = if p == 0 { 1.0 } else { -1.0 };
            let root_x = -orient * dist / 2.0;
            let mut coords = Vec::with_capacity(15 * 3);
            for (j, base) in BASE_POSE.iter().enumerate() {
                let mut world = [
                    root_x + orient * base[0],
                    base[1],
                    orient * base[2],
                ];
                match archetype {
                    Archetype::Strike if p == 0 && j == RIGHT_HAND => {
                        world[0] += orient * 0.55 * triangle(u);
                    }
                    Archetype::Strike if p == 0 && j == RIGHT_ELBOW => {
                        world[0] += orient * 0.28 * triangle(u);
                    }
                    Archetype::Clasp if j == LEFT_HAND || j == RIGHT_HAND => {
                        // Each hand travels to a meeting point just on its
                        // side of the midline, then holds.
                        let a = ramp_hold(u);
                        let target = [orient * -0.03, 1.15, world[2].signum() * 0.12];
                        for k in 0..3 {
                            world[k] += a * (target[k] - world[k]);
                        }
                    }
                    _ => {}
                }
                for w in world {
                    let jitter: f64 = rng.sample(StandardNormal);
                    coords.push(w + noise * jitter);
                }
            }
            PersonFrame::new(coords, vec![true; 15])
        });
        frames.push(Frame { persons });
    }
    SkeletonSequence {
        id: format!("synth-{}", archetype.name()),
        d: 3,
        n_joints: 15,
        fps: 15.0,
        label: Some(archetype.label()),
        subject: None,
        camera: None,
        setup: None,
        pair_id: None,
        frames,
    }
}

/// A balanced corpus of `n` sequences cycling through the archetypes, fully
/// determined by `seed`.
pub fn synth_corpus(n: usize, noise: f64, seed: u64) -> Vec<SkeletonSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let archetype = Archetype::ALL[i % Archetype::ALL.len()];
            let mut seq = synthesize_sample(archetype, &mut rng, noise);
            seq.id = format!("synth-{i:05}-{}", archetype.name());
            seq
        })
        .collect()
}

/// Mean per-frame change of the torso-to-torso distance; negative for
/// closing trajectories, positive for opening ones.
pub fn mean_root_distance_delta(seq: &SkeletonSequence) -> f64 {
    let dist = |frame: &Frame| {
        let a = frame.persons[0].joint(TORSO, seq.d);
        let b = frame.persons[1].joint(TORSO, seq.d);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let deltas: Vec<f64> = seq
        .frames
        .windows(2)
        .map(|w| dist(&w[1]) - dist(&w[0]))
        .collect();
    deltas.iter().sum::<f64>() / deltas.len() as f64
}
