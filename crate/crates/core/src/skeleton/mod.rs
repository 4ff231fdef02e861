//! Skeleton sequences, dataset parsers and body-part partitions.

mod canonical;
mod ntu;
mod parts;
mod sbu;

pub use canonical::{read_canonical, write_canonical, CANONICAL_MAGIC};
pub(crate) use canonical::Reader;
pub use ntu::{ntu_label_from_name, parse_ntu, NtuBody, NtuRecording, NTU_JOINTS};
pub use parts::{builtin_part_map, BodyPartMap, PART_NAMES};
pub use sbu::{parse_sbu, sbu_label_from_path, SBU_JOINTS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Frame count every sample is padded to by default.
pub const DEFAULT_FRAMES: usize = 256;

/// One person's joint trajectory, `frames × joints × 3`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: usize,
    joints: usize,
    coords: Vec<f64>,
    pub person_index: usize,
}

impl SkeletonSequence {
    pub fn new(frames: usize, joints: usize, coords: Vec<f64>, person_index: usize) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::Config(format!(
                "skeleton sequence needs at least one frame and joint, got {frames}×{joints}"
            )));
        }
        if coords.len() != frames * joints * 3 {
            return Err(Error::Config(format!(
                "expected {} coordinates for {frames}×{joints}×3, got {}",
                frames * joints * 3,
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("skeleton coordinates must be finite".into()));
        }
        Ok(Self {
            frames,
            joints,
            coords,
            person_index,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.joints * 3;
        &self.coords[t * n..(t + 1) * n]
    }

    pub fn joint(&self, t: usize, j: usize) -> [f64; 3] {
        let i = (t * self.joints + j) * 3;
        [self.coords[i], self.coords[i + 1], self.coords[i + 2]]
    }

    /// Adds the same offset to every joint of every frame.
    pub fn translated(&self, offset: [f64; 3]) -> Self {
        let mut out = self.clone();
        for (i, v) in out.coords.iter_mut().enumerate() {
            *v += offset[i % 3];
        }
        out
    }

    /// Mean joint position in the first frame.
    pub fn first_frame_mean(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for j in 0..self.joints {
            let p = self.joint(0, j);
            for x in 0..3 {
                acc[x] += p[x];
            }
        }
        acc.map(|v| v / self.joints as f64)
    }

    /// Translated so that [`Self::first_frame_mean`] is the origin.
    pub fn centered(&self) -> Self {
        self.translated(self.first_frame_mean().map(|v| -v))
    }

    pub fn with_person_index(mut self, person_index: usize) -> Self {
        self.person_index = person_index;
        self
    }
}

/// A labeled pair of skeleton sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSample {
    pub person_a: SkeletonSequence,
    pub person_b: SkeletonSequence,
    pub label: usize,
    pub source_id: String,
}

impl InteractionSample {
    pub fn new(person_a: SkeletonSequence, person_b: SkeletonSequence, label: usize, source_id: impl Into<String>) -> Result<Self> {
        if person_a.frames != person_b.frames || person_a.joints != person_b.joints {
            return Err(Error::Config(format!(
                "persons disagree on shape: {}×{} vs {}×{}",
                person_a.frames, person_a.joints, person_b.frames, person_b.joints
            )));
        }
        Ok(Self {
            person_a: person_a.with_person_index(0),
            person_b: person_b.with_person_index(1),
            label,
            source_id: source_id.into(),
        })
    }

    pub fn frames(&self) -> usize {
        self.person_a.frames
    }

    pub fn joints(&self) -> usize {
        self.person_a.joints
    }

    /// Cyclically pads (or truncates) both persons to `target` frames.
    pub fn padded(&self, target: usize) -> Result<Self> {
        Ok(Self {
            person_a: pad_repeat(&self.person_a, target)?,
            person_b: pad_repeat(&self.person_b, target)?,
            label: self.label,
            source_id: self.source_id.clone(),
        })
    }

    /// Same persons in swapped roles.
    pub fn swapped(&self) -> Self {
        Self {
            person_a: self.person_b.clone().with_person_index(0),
            person_b: self.person_a.clone().with_person_index(1),
            label: self.label,
            source_id: self.source_id.clone(),
        }
    }

    /// Each person translated so that its own first-frame joint mean is the
    /// origin.
    pub fn centered(&self) -> Self {
        Self {
            person_a: self.person_a.centered(),
            person_b: self.person_b.centered(),
            label: self.label,
            source_id: self.source_id.clone(),
        }
    }

    pub fn with_noise(&self, sigma_m: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            person_a: add_joint_noise(&self.person_a, sigma_m, seed)?,
            person_b: add_joint_noise(&self.person_b, sigma_m, seed ^ 0x9e37_79b9_7f4a_7c15)?,
            label: self.label,
            source_id: self.source_id.clone(),
        })
    }
}

/// Output frame `t` is input frame `t mod T`; longer inputs are truncated.
pub fn pad_repeat(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    if target == 0 {
        return Err(Error::Config("pad target must be at least one frame".into()));
    }
    let per_frame = seq.joints * 3;
    let mut coords = Vec::with_capacity(target * per_frame);
    for t in 0..target {
        coords.extend_from_slice(seq.frame(t % seq.frames));
    }
    Ok(SkeletonSequence {
        frames: target,
        joints: seq.joints,
        coords,
        person_index: seq.person_index,
    })
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation `sigma_m` to
/// every coordinate.
pub fn add_joint_noise(seq: &SkeletonSequence, sigma_m: f64, seed: u64) -> Result<SkeletonSequence> {
    if !(sigma_m >= 0.0) || !sigma_m.is_finite() {
        return Err(Error::Config(format!("noise sigma must be non-negative, got {sigma_m}")));
    }
    if sigma_m == 0.0 {
        return Ok(seq.clone());
    }
    let normal = Normal::new(0.0, sigma_m).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = seq.clone();
    for v in &mut out.coords {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}
