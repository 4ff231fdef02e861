//! Semantic partition: skeleton sequence → body-part-time token sequence.
//!
//! Each body part is cut out of the skeleton, its joint axis is resized to
//! `P` by linear interpolation, and a `P×P` temporal convolution projects it to
//! `L` tokens of width `D`. Tokens are then laid out time-major: token
//! `t·B + p` is part `p` at step `t`.

use serde::{Deserialize, Serialize};

use crate::skeleton::{BodyPartMap, SkeletonSequence};
use crate::tensor::{conv_output_len, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpmConfig {
    /// Joint-axis size every part is resized to, `P`.
    pub patch: usize,
    pub stride: usize,
    pub padding: usize,
    /// Padded frame count, `T`.
    pub frames: usize,
    /// One projection per body part instead of a single shared one.
    pub per_part_projection: bool,
}

impl Default for SpmConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            stride: 10,
            padding: 2,
            frames: 256,
            per_part_projection: false,
        }
    }
}

impl SpmConfig {
    /// Temporal steps per part, `L = ceil((T + 2·padding − P + 1) / stride)`.
    pub fn steps(&self) -> Result<usize> {
        conv_output_len(self.frames, self.patch, self.stride, self.padding).ok_or_else(|| {
            Error::Config(format!(
                "T={}, P={}, stride={}, padding={} leaves no temporal steps",
                self.frames, self.patch, self.stride, self.padding
            ))
        })
    }

    /// Tokens per person, `M = B·L`.
    pub fn tokens(&self, parts: usize) -> Result<usize> {
        Ok(parts * self.steps()?)
    }
}

/// Token sequence for one person with its time-major layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BptSequence {
    /// `M×D`.
    pub tokens: Var,
    pub parts: usize,
    pub steps: usize,
}

impl BptSequence {
    pub fn len(&self) -> usize {
        self.parts * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token_index(&self, step: usize, part: usize) -> usize {
        step * self.parts + part
    }
}

/// Row permutation taking `B` stacked part blocks of `L` rows (part-major)
/// to time-major order.
pub fn time_major_order(parts: usize, steps: usize) -> Vec<usize> {
    (0..steps)
        .flat_map(|t| (0..parts).map(move |p| p * steps + t))
        .collect()
}

/// Splits a sequence into `B` tensors of shape `T×J_p×3`, joints in map order.
pub fn partition(seq: &SkeletonSequence, map: &BodyPartMap) -> Result<Vec<Tensor>> {
    let joints = seq.joints();
    map.iter()
        .map(|(name, idx)| {
            if let Some(&bad) = idx.iter().find(|&&j| j >= joints) {
                return Err(Error::Config(format!(
                    "part {name} references joint {bad} but the sequence has {joints}"
                )));
            }
            let mut data = Vec::with_capacity(seq.frames() * idx.len() * 3);
            for t in 0..seq.frames() {
                for &j in idx {
                    data.extend_from_slice(&seq.joint(t, j));
                }
            }
            Ok(Tensor::new(vec![seq.frames(), idx.len(), 3], data)?)
        })
        .collect()
}

/// Projection weights bound on a tape: one `(kernel D×P×P×3, bias D)` pair,
/// or one per part.
#[derive(Debug, Clone)]
pub struct ProjectionVars {
    pub kernels: Vec<Var>,
    pub biases: Vec<Var>,
}

impl ProjectionVars {
    fn for_part(&self, p: usize) -> (Var, Var) {
        if self.kernels.len() == 1 {
            (self.kernels[0], self.biases[0])
        } else {
            (self.kernels[p], self.biases[p])
        }
    }
}

pub fn spm_forward(
    tape: &mut Tape,
    seq: &SkeletonSequence,
    map: &BodyPartMap,
    cfg: &SpmConfig,
    proj: &ProjectionVars,
) -> Result<BptSequence> {
    if seq.frames() != cfg.frames {
        return Err(Error::Config(format!(
            "sequence has {} frames, projection expects {} (pad first)",
            seq.frames(),
            cfg.frames
        )));
    }
    if proj.kernels.len() != 1 && proj.kernels.len() != map.len() {
        return Err(Error::Config(format!(
            "{} projections for {} parts",
            proj.kernels.len(),
            map.len()
        )));
    }
    let steps = cfg.steps()?;
    let mut per_part = Vec::with_capacity(map.len());
    for (p, part) in partition(seq, map)?.into_iter().enumerate() {
        let x = tape.constant(part);
        let resized = tape.resize(x, cfg.patch)?;
        let (kernel, bias) = proj.for_part(p);
        let emb = tape.conv2d(resized, kernel, bias, cfg.stride, cfg.padding)?;
        debug_assert_eq!(tape.shape(emb)[0], steps);
        per_part.push(emb);
    }
    let stacked = tape.concat_rows(&per_part)?;
    let tokens = tape.gather_rows(stacked, &time_major_order(map.len(), steps))?;
    Ok(BptSequence {
        tokens,
        parts: map.len(),
        steps,
    })
}

/// Adds a learnable `M×D` positional encoding.
pub fn add_positional(tape: &mut Tape, bpt: BptSequence, posenc: Var) -> Result<BptSequence> {
    let tokens = tape.add(bpt.tokens, posenc)?;
    Ok(BptSequence { tokens, ..bpt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::builtin_part_map;

    fn ramp(frames: usize, joints: usize) -> SkeletonSequence {
        let coords = (0..frames * joints * 3).map(|v| (v as f64 * 0.37).sin()).collect();
        SkeletonSequence::new(frames, joints, coords, 0).unwrap()
    }

    #[test]
    fn partition_shapes_and_selection() {
        let map = builtin_part_map(15).unwrap();
        let seq = ramp(4, 15);
        let parts = partition(&seq, &map).unwrap();
        assert_eq!(parts.len(), 5);
        assert!(parts.iter().all(|p| p.shape() == [4, 3, 3]));
        assert_eq!(&parts[0].data()[..3], &seq.joint(0, 3));

        let single = partition(&ramp(1, 15), &map).unwrap();
        assert!(single.iter().all(|p| p.shape()[0] == 1));

        // permuting joints within one part permutes only that part's joint axis
        let mut lists: Vec<(String, Vec<usize>)> = map.iter().map(|(n, j)| (n.to_string(), j.to_vec())).collect();
        lists[1].1 = vec![8, 6, 7];
        let permuted = BodyPartMap::new(lists).unwrap();
        let other = partition(&seq, &permuted).unwrap();
        for p in [0, 2, 3, 4] {
            assert_eq!(other[p], parts[p]);
        }
        assert_eq!(&other[1].data()[..3], &parts[1].data()[6..9]);
    }

    #[test]
    fn partition_rejects_out_of_range() {
        let map = builtin_part_map(25).unwrap();
        assert!(partition(&ramp(2, 15), &map).is_err());
    }

    #[test]
    fn default_geometry_gives_125_tokens() {
        let cfg = SpmConfig::default();
        assert_eq!(cfg.steps().unwrap(), 25);
        assert_eq!(cfg.tokens(5).unwrap(), 125);
    }

    #[test]
    fn layout_round_trip() {
        let order = time_major_order(5, 3);
        // token t·B + p must come from row p·L + t of the part-major stack
        for t in 0..3 {
            for p in 0..5 {
                assert_eq!(order[t * 5 + p], p * 3 + t);
            }
        }
    }

    #[test]
    fn zero_input_zero_bias_is_zero() {
        let map = builtin_part_map(15).unwrap();
        let cfg = SpmConfig {
            patch: 4,
            stride: 4,
            padding: 0,
            frames: 8,
            per_part_projection: false,
        };
        let seq = SkeletonSequence::new(8, 15, vec![0.0; 8 * 45], 0).unwrap();
        let mut tape = Tape::new();
        let k = tape.constant(Tensor::full(&[6, 4, 4, 3], 0.3));
        let b = tape.constant(Tensor::zeros(&[6]));
        let proj = ProjectionVars {
            kernels: vec![k],
            biases: vec![b],
        };
        let bpt = spm_forward(&mut tape, &seq, &map, &cfg, &proj).unwrap();
        assert_eq!(bpt.len(), 10);
        assert_eq!(tape.shape(bpt.tokens), &[10, 6]);
        assert!(tape.value(bpt.tokens).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unpadded_sequence_rejected() {
        let map = builtin_part_map(15).unwrap();
        let mut tape = Tape::new();
        let k = tape.constant(Tensor::zeros(&[2, 16, 16, 3]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let proj = ProjectionVars {
            kernels: vec![k],
            biases: vec![b],
        };
        assert!(spm_forward(&mut tape, &ramp(100, 15), &map, &SpmConfig::default(), &proj).is_err());
    }

    #[test]
    fn positional_encoding_is_added() {
        let mut tape = Tape::new();
        let zeros = tape.constant(Tensor::zeros(&[2, 3]));
        let pe = tape.constant(Tensor::full(&[2, 3], 0.5));
        let bpt = BptSequence {
            tokens: zeros,
            parts: 1,
            steps: 2,
        };
        let out = add_positional(&mut tape, bpt, pe).unwrap();
        assert_eq!(tape.value(out.tokens), tape.value(pe));
        let zpe = tape.constant(Tensor::zeros(&[2, 3]));
        let same = add_positional(&mut tape, out, zpe).unwrap();
        assert_eq!(tape.value(same.tokens), tape.value(out.tokens));
    }
}
