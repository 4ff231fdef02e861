//! Distance-based sparse interaction graph.
//!
//! Per-part joint centroids are averaged over the same temporal windows the
//! projection convolution sees, laid out time-major, and compared across the
//! two persons. Each token is linked to its `k` nearest counterpart tokens.

use serde::{Deserialize, Serialize};

use crate::skeleton::{BodyPartMap, InteractionSample, Reader, SkeletonSequence};
use crate::spm::{time_major_order, SpmConfig};
use crate::tensor::{conv_output_len, Tensor};
use crate::{Error, Result};

pub const SIDECAR_MAGIC: &[u8; 4] = b"IGFD";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceGraphConfig {
    pub k: usize,
    /// Temporal steps, equal to the projection's `L`.
    pub steps: usize,
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl DistanceGraphConfig {
    /// Windows aligned with the projection convolution of `spm`.
    pub fn aligned(spm: &SpmConfig, k: usize) -> Result<Self> {
        Ok(Self {
            k,
            steps: spm.steps()?,
            window: spm.patch,
            stride: spm.stride,
            padding: spm.padding,
        })
    }
}

/// Both directions of one sample's distance matrices and binary graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraphs {
    pub dist_mn: Tensor,
    pub dist_nm: Tensor,
    pub dsig: Dsig,
}

/// Binary graphs only, as cached in the sidecar file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dsig {
    pub k: usize,
    pub mn: Tensor,
    pub nm: Tensor,
}

impl Dsig {
    pub fn tokens(&self) -> usize {
        self.mn.shape()[0]
    }

    /// Graphs for the sample with persons swapped.
    pub fn swapped(&self) -> Self {
        Self {
            k: self.k,
            mn: self.nm.clone(),
            nm: self.mn.clone(),
        }
    }

    /// All-zero graphs of the same size.
    pub fn zeroed(&self) -> Self {
        let m = self.tokens();
        Self {
            k: self.k,
            mn: Tensor::zeros(&[m, m]),
            nm: Tensor::zeros(&[m, m]),
        }
    }
}

/// Mean position of each part's joints, one `T×3` tensor per part.
pub fn part_centroids(seq: &SkeletonSequence, map: &BodyPartMap) -> Result<Vec<Tensor>> {
    map.iter()
        .map(|(name, joints)| {
            if joints.is_empty() {
                return Err(Error::Config(format!("part {name} has no joints")));
            }
            if let Some(&bad) = joints.iter().find(|&&j| j >= seq.joints()) {
                return Err(Error::Config(format!("part {name} references missing joint {bad}")));
            }
            let n = joints.len() as f64;
            let mut data = Vec::with_capacity(seq.frames() * 3);
            for t in 0..seq.frames() {
                let mut c = [0.0; 3];
                for &j in joints {
                    let p = seq.joint(t, j);
                    for i in 0..3 {
                        c[i] += p[i];
                    }
                }
                data.extend(c.iter().map(|v| v / n));
            }
            Ok(Tensor::new(vec![seq.frames(), 3], data)?)
        })
        .collect()
}

/// Averages a `T×3` trajectory over the convolution windows, counting only
/// frames inside `0..T`.
pub fn downsample(centroids: &Tensor, cfg: &DistanceGraphConfig) -> Result<Tensor> {
    let frames = centroids.shape()[0];
    let steps = conv_output_len(frames, cfg.window, cfg.stride, cfg.padding);
    if steps != Some(cfg.steps) {
        return Err(Error::Config(format!(
            "{frames} frames give {steps:?} windows, graph expects {}",
            cfg.steps
        )));
    }
    let mut data = Vec::with_capacity(cfg.steps * 3);
    for t in 0..cfg.steps {
        let start = (t * cfg.stride).saturating_sub(cfg.padding);
        let end = (t * cfg.stride + cfg.window).saturating_sub(cfg.padding).min(frames);
        if start >= end {
            return Err(Error::Config(format!("window {t} covers only padding")));
        }
        let mut acc = [0.0; 3];
        for f in start..end {
            for i in 0..3 {
                acc[i] += centroids.at2(f, i);
            }
        }
        let n = (end - start) as f64;
        data.extend(acc.iter().map(|v| v / n));
    }
    Ok(Tensor::new(vec![cfg.steps, 3], data)?)
}

/// Windowed part centroids of one person, `M×3` time-major.
pub fn token_centroids(seq: &SkeletonSequence, map: &BodyPartMap, cfg: &DistanceGraphConfig) -> Result<Tensor> {
    let mut stacked = Vec::with_capacity(map.len() * cfg.steps * 3);
    for c in part_centroids(seq, map)? {
        stacked.extend_from_slice(downsample(&c, cfg)?.data());
    }
    let mut data = Vec::with_capacity(stacked.len());
    for row in time_major_order(map.len(), cfg.steps) {
        data.extend_from_slice(&stacked[row * 3..row * 3 + 3]);
    }
    Ok(Tensor::new(vec![map.len() * cfg.steps, 3], data)?)
}

/// `A[a][b] = ‖x_a − y_b‖₂` for row sets `x` and `y` of width 3.
pub fn pairwise_distance(x: &Tensor, y: &Tensor) -> Tensor {
    let (m, n) = (x.shape()[0], y.shape()[0]);
    let mut data = Vec::with_capacity(m * n);
    for a in 0..m {
        let xa = x.row(a);
        for b in 0..n {
            let yb = y.row(b);
            let sq: f64 = xa.iter().zip(yb).map(|(p, q)| (p - q) * (p - q)).sum();
            data.push(sq.sqrt());
        }
    }
    Tensor::new(vec![m, n], data).expect("shape matches data")
}

/// Marks every entry no larger than its row's `k`-th smallest value.
pub fn knn_threshold(dist: &Tensor, k: usize) -> Result<Tensor> {
    let (m, n) = dist.rows_cols();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} outside 1..={n}")));
    }
    let mut out = Vec::with_capacity(m * n);
    let mut sorted = vec![0.0; n];
    for a in 0..m {
        let row = dist.row(a);
        sorted.copy_from_slice(row);
        sorted.sort_by(f64::total_cmp);
        let kth = sorted[k - 1];
        out.extend(row.iter().map(|&v| if v <= kth { 1.0 } else { 0.0 }));
    }
    Ok(Tensor::new(vec![m, n], out)?)
}

pub fn build_graphs(sample: &InteractionSample, map: &BodyPartMap, cfg: &DistanceGraphConfig) -> Result<InteractionGraphs> {
    let m = token_centroids(&sample.person_a, map, cfg)?;
    let n = token_centroids(&sample.person_b, map, cfg)?;
    let dist_mn = pairwise_distance(&m, &n);
    let dist_nm = pairwise_distance(&n, &m);
    let dsig = Dsig {
        k: cfg.k,
        mn: knn_threshold(&dist_mn, cfg.k)?,
        nm: knn_threshold(&dist_nm, cfg.k)?,
    };
    Ok(InteractionGraphs { dist_mn, dist_nm, dsig })
}

fn pack_bits(t: &Tensor, out: &mut Vec<u8>) {
    for chunk in t.data().chunks(8) {
        let mut byte = 0u8;
        for (i, &v) in chunk.iter().enumerate() {
            if v != 0.0 {
                byte |= 1 << i;
            }
        }
        out.push(byte);
    }
}

fn unpack_bits(bytes: &[u8], m: usize) -> Result<Tensor> {
    let data = (0..m * m).map(|i| f64::from((bytes[i / 8] >> (i % 8)) & 1)).collect();
    Ok(Tensor::new(vec![m, m], data)?)
}

/// Sidecar layout, little-endian: `"IGFD"`, M: u32, k: u32, then the two
/// `M×M` graphs row-major, one bit per entry, least significant bit first,
/// each padded to a whole byte.
pub fn write_sidecar(dsig: &Dsig) -> Vec<u8> {
    let m = dsig.tokens();
    let mut out = Vec::with_capacity(12 + 2 * (m * m).div_ceil(8));
    out.extend_from_slice(SIDECAR_MAGIC);
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(dsig.k as u32).to_le_bytes());
    pack_bits(&dsig.mn, &mut out);
    pack_bits(&dsig.nm, &mut out);
    out
}

pub fn read_sidecar(bytes: &[u8]) -> Result<Dsig> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(SIDECAR_MAGIC)?;
    let m = r.u32()? as usize;
    let k = r.u32()? as usize;
    if m == 0 || k == 0 || k > m {
        return Err(Error::Format(format!("sidecar header M={m}, k={k} is inconsistent")));
    }
    let len = (m * m).div_ceil(8);
    let mn = unpack_bits(r.take(len)?, m)?;
    let nm = unpack_bits(r.take(len)?, m)?;
    r.finish()?;
    Ok(Dsig { k, mn, nm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::builtin_part_map;
    use proptest::prelude::*;

    fn cfg(frames: usize, k: usize) -> DistanceGraphConfig {
        let spm = SpmConfig {
            patch: 4,
            stride: 3,
            padding: 1,
            frames,
            per_part_projection: false,
        };
        DistanceGraphConfig::aligned(&spm, k).unwrap()
    }

    fn seq_from(values: Vec<f64>, frames: usize) -> SkeletonSequence {
        SkeletonSequence::new(frames, values.len() / frames / 3, values, 0).unwrap()
    }

    #[test]
    fn centroid_examples() {
        let map = BodyPartMap::new(vec![("a".into(), vec![0, 1]), ("b".into(), vec![2])]).unwrap();
        let seq = seq_from(vec![1.0, 0.0, 0.0, 3.0, 0.0, 0.0, 7.0, 8.0, 9.0], 1);
        let c = part_centroids(&seq, &map).unwrap();
        assert_eq!(c[0].data(), &[2.0, 0.0, 0.0]);
        assert_eq!(c[1].data(), &[7.0, 8.0, 9.0]);
        let moved = part_centroids(&seq.translated([1.0, 2.0, 3.0]), &map).unwrap();
        assert_eq!(moved[0].data(), &[3.0, 2.0, 3.0]);
    }

    #[test]
    fn downsample_examples() {
        let c = cfg(10, 1);
        let constant = Tensor::full(&[10, 3], 0.25);
        let d = downsample(&constant, &c).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.25));

        let whole = DistanceGraphConfig {
            k: 1,
            steps: 1,
            window: 4,
            stride: 1,
            padding: 0,
        };
        let ramp = Tensor::new(vec![4, 3], (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(downsample(&ramp, &whole).unwrap().data(), &[4.5, 5.5, 6.5]);

        assert!(downsample(&Tensor::zeros(&[11, 3]), &c).is_err());
    }

    #[test]
    fn downsample_matches_window_enumeration() {
        let c = cfg(10, 1);
        let ramp = Tensor::new(vec![10, 3], (0..30).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let d = downsample(&ramp, &c).unwrap();
        for t in 0..c.steps {
            let mut frames = Vec::new();
            for w in 0..c.window {
                let padded = t * c.stride + w;
                if padded >= c.padding && padded - c.padding < 10 {
                    frames.push(padded - c.padding);
                }
            }
            for i in 0..3 {
                let mean = frames.iter().map(|&f| ramp.at2(f, i)).sum::<f64>() / frames.len() as f64;
                assert!((d.at2(t, i) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distance_examples() {
        let a = Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0, 4.0, 0.0]]).unwrap();
        assert_eq!(pairwise_distance(&a, &b).data(), &[5.0]);

        let x = Tensor::new(vec![10, 3], (0..30).map(|v| ((v * 7 % 11) as f64).sin()).collect()).unwrap();
        let y = Tensor::new(vec![10, 3], (0..30).map(|v| ((v * 5 % 13) as f64).cos()).collect()).unwrap();
        let d = pairwise_distance(&x, &y);
        for a in 0..10 {
            for b in 0..10 {
                let mut s = 0.0;
                for i in 0..3 {
                    s += (x.at2(a, i) - y.at2(b, i)).powi(2);
                }
                assert!((d.at2(a, b) - s.sqrt()).abs() < 1e-12);
            }
        }
        let same = pairwise_distance(&x, &x);
        assert!((0..10).all(|a| same.at2(a, a) == 0.0));
    }

    #[test]
    fn threshold_examples() {
        let row = Tensor::from_rows(&[vec![0.5, 0.2, 0.9]]).unwrap();
        assert_eq!(knn_threshold(&row, 2).unwrap().data(), &[1.0, 1.0, 0.0]);
        assert_eq!(knn_threshold(&row, 3).unwrap().data(), &[1.0; 3]);
        let tied = Tensor::from_rows(&[vec![0.1, 0.3, 0.3, 0.7]]).unwrap();
        assert_eq!(knn_threshold(&tied, 2).unwrap().data(), &[1.0, 1.0, 1.0, 0.0]);
        assert!(knn_threshold(&row, 0).is_err());
        assert!(knn_threshold(&row, 4).is_err());
    }

    fn random_sample(frames: usize, seed: u64) -> InteractionSample {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut person = || {
            let v = (0..frames * 45).map(|_| rng.gen_range(-1.0..1.0)).collect();
            seq_from(v, frames)
        };
        let (a, b) = (person(), person());
        InteractionSample::new(a, b, 0, "r").unwrap()
    }

    #[test]
    fn identical_persons_k1_contains_identity() {
        let s = random_sample(10, 3);
        let same = InteractionSample::new(s.person_a.clone(), s.person_a.clone(), 0, "x").unwrap();
        let g = build_graphs(&same, &builtin_part_map(15).unwrap(), &cfg(10, 1)).unwrap();
        let m = g.dsig.tokens();
        assert!((0..m).all(|a| g.dsig.mn.at2(a, a) == 1.0 && g.dsig.nm.at2(a, a) == 1.0));
    }

    #[test]
    fn direction_asymmetry() {
        // two single-joint parts, one step: m at x = 0, 1 and n at x = 2, 5
        let map = BodyPartMap::new(vec![("a".into(), vec![0]), ("b".into(), vec![1])]).unwrap();
        let one = DistanceGraphConfig {
            k: 1,
            steps: 1,
            window: 1,
            stride: 1,
            padding: 0,
        };
        let pa = seq_from(vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 1);
        let pb = seq_from(vec![2.0, 0.0, 0.0, 5.0, 0.0, 0.0], 1);
        let g = build_graphs(&InteractionSample::new(pa, pb, 0, "x").unwrap(), &map, &one).unwrap();
        // both m tokens are nearest to n token 0; only n token 0 points back to m token 1
        assert_eq!(g.dsig.mn.data(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(g.dsig.nm.data(), &[0.0, 1.0, 0.0, 1.0]);
        // column-wise k-NN of A_mn would give [1, 1, 0, 0]
        assert_ne!(g.dsig.nm.data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn sidecar_round_trip_and_corruption() {
        let s = random_sample(10, 5);
        let g = build_graphs(&s, &builtin_part_map(15).unwrap(), &cfg(10, 4)).unwrap();
        let bytes = write_sidecar(&g.dsig);
        assert_eq!(read_sidecar(&bytes).unwrap(), g.dsig);
        assert!(read_sidecar(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_sidecar(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(read_sidecar(&extra).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rigid_translation_of_both_persons(seed in 0u64..1000, dx in -5.0f64..5.0, dy in -5.0f64..5.0, dz in -5.0f64..5.0) {
            let map = builtin_part_map(15).unwrap();
            let c = cfg(10, 3);
            let s = random_sample(10, seed);
            let moved = InteractionSample::new(
                s.person_a.translated([dx, dy, dz]),
                s.person_b.translated([dx, dy, dz]),
                0,
                "m",
            ).unwrap();
            let g = build_graphs(&s, &map, &c).unwrap();
            let h = build_graphs(&moved, &map, &c).unwrap();
            prop_assert!(g.dist_mn.max_abs_diff(&h.dist_mn) < 1e-9);
            prop_assert_eq!(g.dsig, h.dsig);
        }

        #[test]
        fn row_sums_and_transpose(seed in 0u64..1000, k in 1usize..15) {
            let map = builtin_part_map(15).unwrap();
            let c = cfg(10, k);
            let g = build_graphs(&random_sample(10, seed), &map, &c).unwrap();
            let m = g.dsig.tokens();
            for a in 0..m {
                for b in 0..m {
                    prop_assert_eq!(g.dist_mn.at2(a, b), g.dist_nm.at2(b, a));
                }
                for graph in [&g.dsig.mn, &g.dsig.nm] {
                    let ones = graph.row(a).iter().filter(|&&v| v == 1.0).count();
                    prop_assert!(ones >= k);
                }
                let mut row = g.dist_mn.row(a).to_vec();
                row.sort_by(f64::total_cmp);
                if row.windows(2).all(|w| w[0] < w[1]) {
                    prop_assert_eq!(g.dsig.mn.row(a).iter().filter(|&&v| v == 1.0).count(), k);
                }
            }
        }
    }
}
