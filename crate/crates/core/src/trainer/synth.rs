//! Deterministic synthetic two-person interactions on the 15-joint layout.
//!
//! Every sample places the pair at `midpoint ± 1 m` along a horizontal axis
//! within 45° of the camera's, with either person on the left. Headings and
//! scales are random per person and both share a common drift. Approach and
//! depart split the displacement randomly between the two, so only the change
//! of their separation identifies the class.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::skeleton::{InteractionSample, SkeletonSequence};
use crate::{Error, Result};

pub const SYNTH_JOINTS: usize = 15;

/// Rest pose in body coordinates `(lateral, height, forward)`, metres.
const TEMPLATE: [[f64; 3]; SYNTH_JOINTS] = [
    [0.0, 1.70, 0.0],
    [0.0, 1.50, 0.0],
    [0.0, 1.10, 0.0],
    [-0.20, 1.45, 0.0],
    [-0.25, 1.20, 0.0],
    [-0.27, 0.95, 0.0],
    [0.20, 1.45, 0.0],
    [0.25, 1.20, 0.0],
    [0.27, 0.95, 0.0],
    [-0.10, 0.95, 0.0],
    [-0.10, 0.50, 0.0],
    [-0.10, 0.05, 0.0],
    [0.10, 0.95, 0.0],
    [0.10, 0.50, 0.0],
    [0.10, 0.05, 0.0],
];

const TORSO: usize = 2;
const R_SHOULDER: usize = 6;
const R_ELBOW: usize = 7;
const R_HAND: usize = 8;
const R_HIP: usize = 12;
const R_KNEE: usize = 13;
const R_FOOT: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthClass {
    Approach,
    Depart,
    RightHandShake,
    RightLegKick,
}

impl SynthClass {
    pub const ALL: [SynthClass; 4] = [
        SynthClass::Approach,
        SynthClass::Depart,
        SynthClass::RightHandShake,
        SynthClass::RightLegKick,
    ];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Result<Self> {
        Self::ALL
            .get(label)
            .copied()
            .ok_or_else(|| Error::Config(format!("synthetic class {label} does not exist (0..=3)")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthClass::Approach => "approach",
            SynthClass::Depart => "depart",
            SynthClass::RightHandShake => "right_hand_shake",
            SynthClass::RightLegKick => "right_leg_kick",
        }
    }
}

impl fmt::Display for SynthClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown synthetic class `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub class: SynthClass,
    pub frames: usize,
    /// Total change of separation for approach/depart, metres.
    pub amplitude: f64,
    /// Standard deviation of per-coordinate jitter, metres.
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(class: SynthClass, frames: usize, seed: u64) -> Self {
        Self {
            class,
            frames,
            amplitude: 0.8,
            noise: 0.01,
            seed,
        }
    }
}

type V3 = [f64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn lerp(a: V3, b: V3, t: f64) -> V3 {
    add(a, scale(sub(b, a), t))
}

fn unit(a: V3) -> V3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    scale(a, 1.0 / n)
}

/// Static placement of one person.
struct Body {
    root: V3,
    yaw: f64,
    size: f64,
}

impl Body {
    fn world(&self, local: V3) -> V3 {
        let (s, c) = self.yaw.sin_cos();
        let forward = [c, 0.0, s];
        let right = [-s, 0.0, c];
        let l = scale(local, self.size);
        add(self.root, add(scale(right, l[0]), add([0.0, l[1], 0.0], scale(forward, l[2]))))
    }

    fn rest(&self) -> Vec<V3> {
        TEMPLATE.iter().map(|&j| self.world(j)).collect()
    }
}

/// Moves a two-joint limb from rest toward `target`, by `reach ∈ [0, 1]`.
fn extend(pose: &mut [V3], base: usize, mid: usize, tip: usize, target: V3, length: f64, reach: f64) {
    let dir = unit(sub(target, pose[base]));
    let tip_to = add(pose[base], scale(dir, length));
    let mid_to = add(pose[base], scale(dir, length * 0.5));
    pose[tip] = lerp(pose[tip], tip_to, reach);
    pose[mid] = lerp(pose[mid], mid_to, reach);
}

/// Pure function of the spec.
pub fn synth_generate(spec: &SynthSpec) -> Result<InteractionSample> {
    if spec.frames == 0 {
        return Err(Error::Config("synthetic sample needs at least one frame".into()));
    }
    if spec.class == SynthClass::Depart {
        let forward = synth_generate(&SynthSpec {
            class: SynthClass::Approach,
            ..spec.clone()
        })?;
        let reverse = |s: &SkeletonSequence| {
            let coords = (0..s.frames()).rev().flat_map(|t| s.frame(t).to_vec()).collect();
            SkeletonSequence::new(s.frames(), s.joints(), coords, 0)
        };
        let id = format!("synth-{}-{}", spec.class, spec.seed);
        return InteractionSample::new(reverse(&forward.person_a)?, reverse(&forward.person_b)?, spec.class.label(), id);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // view within ±45° of the camera axis; either person may stand on the left
    let side = if rng.gen::<bool>() { 0.0 } else { PI };
    let axis_angle = side + rng.gen_range(-PI / 4.0..PI / 4.0);
    let axis = [axis_angle.cos(), 0.0, axis_angle.sin()];
    let midpoint = [rng.gen_range(-0.5..0.5), 0.0, rng.gen_range(-0.5..0.5)];
    let drift_angle = rng.gen_range(0.0..2.0 * PI);
    let drift = scale([drift_angle.cos(), 0.0, drift_angle.sin()], rng.gen::<f64>() * spec.amplitude);
    let mut bodies = [-1.0, 1.0].map(|side| Body {
        root: add(midpoint, scale(axis, side)),
        yaw: 0.0,
        size: 1.0,
    });
    for b in &mut bodies {
        b.yaw = rng.gen_range(0.0..2.0 * PI);
        b.size = rng.gen_range(0.9..1.1);
    }
    let share = rng.gen_range(0.0..1.0);
    let cycles = rng.gen_range(1.0..2.5);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let jitter = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let frames = spec.frames;
    let mut coords = [Vec::with_capacity(frames * 45), Vec::with_capacity(frames * 45)];
    for t in 0..frames {
        let u = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
        let reach = 0.5 * (1.0 - (2.0 * PI * cycles * u + phase).cos());
        let mut poses: Vec<Vec<V3>> = bodies
            .iter()
            .map(|b| {
                let mut p = b.rest();
                let shift = scale(drift, u);
                for j in &mut p {
                    *j = add(*j, shift);
                }
                p
            })
            .collect();
        match spec.class {
            SynthClass::Approach => {
                // the two displacements along the axis sum to the amplitude
                let step = scale(axis, spec.amplitude * u);
                for j in &mut poses[0] {
                    *j = add(*j, scale(step, share));
                }
                for j in &mut poses[1] {
                    *j = sub(*j, scale(step, 1.0 - share));
                }
            }
            SynthClass::RightHandShake => {
                let meet = add(add(midpoint, scale(drift, u)), [0.0, 1.1, 0.0]);
                for (p, b) in poses.iter_mut().zip(&bodies) {
                    extend(p, R_SHOULDER, R_ELBOW, R_HAND, meet, 0.6 * b.size, reach);
                }
            }
            SynthClass::RightLegKick => {
                let target = poses[1][TORSO];
                extend(&mut poses[0], R_HIP, R_KNEE, R_FOOT, target, 0.9 * bodies[0].size, reach);
            }
            SynthClass::Depart => unreachable!("handled above"),
        }
        for (out, pose) in coords.iter_mut().zip(&poses) {
            for j in pose {
                for &v in j {
                    let n = if spec.noise > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
                    out.push(v + n);
                }
            }
        }
    }
    let [a, b] = coords;
    InteractionSample::new(
        SkeletonSequence::new(frames, SYNTH_JOINTS, a, 0)?,
        SkeletonSequence::new(frames, SYNTH_JOINTS, b, 1)?,
        spec.class.label(),
        format!("synth-{}-{}", spec.class, spec.seed),
    )
}

/// `count` samples with labels cycling through the first `classes` classes.
pub fn synth_dataset(count: usize, classes: usize, frames: usize, seed: u64) -> Result<Vec<InteractionSample>> {
    if classes == 0 || classes > SynthClass::ALL.len() {
        return Err(Error::Config(format!("synthetic class count must be 1..=4, got {classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let spec = SynthSpec::new(SynthClass::ALL[i % classes], frames, rng.gen());
            synth_generate(&spec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid(s: &SkeletonSequence, t: usize) -> V3 {
        let mut c = [0.0; 3];
        for j in 0..s.joints() {
            c = add(c, s.joint(t, j));
        }
        scale(c, 1.0 / s.joints() as f64)
    }

    fn separation(s: &InteractionSample, t: usize) -> f64 {
        let d = sub(centroid(&s.person_a, t), centroid(&s.person_b, t));
        (d[0] * d[0] + d[2] * d[2]).sqrt()
    }

    #[test]
    fn approach_closes_distance() {
        for seed in 0..10 {
            let s = synth_generate(&SynthSpec::new(SynthClass::Approach, 32, seed)).unwrap();
            assert!(separation(&s, 31) < separation(&s, 0));
            assert!((separation(&s, 0) - separation(&s, 31) - 0.8).abs() < 0.1);
        }
    }

    #[test]
    fn depart_is_reversed_approach() {
        let a = synth_generate(&SynthSpec::new(SynthClass::Approach, 20, 7)).unwrap();
        let d = synth_generate(&SynthSpec::new(SynthClass::Depart, 20, 7)).unwrap();
        for t in 0..20 {
            assert_eq!(d.person_a.frame(t), a.person_a.frame(19 - t));
            assert_eq!(d.person_b.frame(t), a.person_b.frame(19 - t));
        }
        assert_eq!(d.label, 1);
    }

    #[test]
    fn deterministic_per_seed() {
        for class in SynthClass::ALL {
            let spec = SynthSpec::new(class, 16, 3);
            assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
        }
        let a = synth_generate(&SynthSpec::new(SynthClass::RightLegKick, 16, 3)).unwrap();
        let b = synth_generate(&SynthSpec::new(SynthClass::RightLegKick, 16, 4)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn kick_moves_only_person_a_leg() {
        let mut spec = SynthSpec::new(SynthClass::RightLegKick, 40, 1);
        spec.noise = 0.0;
        spec.amplitude = 1e-9;
        let s = synth_generate(&spec).unwrap();
        let travel = |p: &SkeletonSequence, j: usize| {
            (0..40).map(|t| {
                let d = sub(p.joint(t, j), p.joint(0, j));
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            }).fold(0.0, f64::max)
        };
        assert!(travel(&s.person_a, R_FOOT) > 0.3);
        assert!(travel(&s.person_b, R_FOOT) < 1e-6);
        assert!(travel(&s.person_a, R_HAND) < 1e-6);
    }

    #[test]
    fn dataset_is_balanced() {
        let data = synth_dataset(40, 4, 8, 1).unwrap();
        let mut counts = [0; 4];
        for s in &data {
            counts[s.label] += 1;
        }
        assert_eq!(counts, [10; 4]);
        assert!(synth_dataset(4, 5, 8, 1).is_err());
        assert!("wave".parse::<SynthClass>().is_err());
        assert_eq!("depart".parse::<SynthClass>().unwrap(), SynthClass::Depart);
    }
}
