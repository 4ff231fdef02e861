//! Canonical per-sample interchange file.
//!
//! Layout, little-endian:
//! `"IGF1"`, J: u32, T: u32, label: u32, id length: u32, id bytes (UTF-8),
//! then person A and person B as `T×J×3` blocks of f64.

use super::{InteractionSample, SkeletonSequence};
use crate::{Error, Result};

pub const CANONICAL_MAGIC: &[u8; 4] = b"IGF1";

pub fn write_canonical(sample: &InteractionSample) -> Vec<u8> {
    let id = sample.source_id.as_bytes();
    let n = sample.person_a.coords().len();
    let mut out = Vec::with_capacity(20 + id.len() + 16 * n);
    out.extend_from_slice(CANONICAL_MAGIC);
    for v in [sample.joints(), sample.frames(), sample.label, id.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(id);
    for c in sample.person_a.coords().iter().chain(sample.person_b.coords()) {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("unexpected end of data at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn read_canonical(bytes: &[u8]) -> Result<InteractionSample> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(CANONICAL_MAGIC)?;
    let joints = r.u32()? as usize;
    let frames = r.u32()? as usize;
    let label = r.u32()? as usize;
    let id_len = r.u32()? as usize;
    let source_id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|e| Error::Format(format!("source id is not UTF-8: {e}")))?
        .to_string();
    let n = frames
        .checked_mul(joints)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::Format("size overflow".into()))?;
    let a = r.f64s(n)?;
    let b = r.f64s(n)?;
    r.finish()?;
    InteractionSample::new(
        SkeletonSequence::new(frames, joints, a, 0)?,
        SkeletonSequence::new(frames, joints, b, 1)?,
        label,
        source_id,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(frames: usize, joints: usize, coords: Vec<f64>, label: usize, id: &str) -> InteractionSample {
        let b: Vec<f64> = coords.iter().map(|v| -v * 0.5).collect();
        InteractionSample::new(
            SkeletonSequence::new(frames, joints, coords, 0).unwrap(),
            SkeletonSequence::new(frames, joints, b, 1).unwrap(),
            label,
            id,
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            frames in 1usize..6,
            joints in 1usize..5,
            seed in proptest::collection::vec(-1e3f64..1e3, 90),
            label in 0usize..100,
            id in "[a-zA-Z0-9_./]{0,20}",
        ) {
            let coords: Vec<f64> = (0..frames * joints * 3).map(|i| seed[i % seed.len()] * (1.0 + i as f64 * 1e-7)).collect();
            let s = sample(frames, joints, coords, label, &id);
            let bytes = write_canonical(&s);
            let back = read_canonical(&bytes).unwrap();
            prop_assert_eq!(&back, &s);
            for (x, y) in back.person_a.coords().iter().zip(s.person_a.coords()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupt_inputs() {
        let s = sample(2, 1, vec![1.0; 6], 0, "a");
        let bytes = write_canonical(&s);
        assert!(read_canonical(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_canonical(&bad), Err(Error::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(read_canonical(&long).is_err());
    }
}
