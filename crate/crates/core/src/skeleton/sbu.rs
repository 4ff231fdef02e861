//! Reader for SBU Kinect interaction `skeleton_pos.txt` rows.
//!
//! Each row is a frame index followed by 90 values: person 1's 15 joints × 3,
//! then person 2's. Fields may be separated by commas and/or whitespace.

use std::path::Path;

use super::{InteractionSample, SkeletonSequence};
use crate::{Error, Result};

pub const SBU_JOINTS: usize = 15;
const ROW_FIELDS: usize = 1 + 2 * SBU_JOINTS * 3;

pub fn parse_sbu(bytes: &[u8], label: usize, source_id: impl Into<String>) -> Result<InteractionSample> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(1, format!("not UTF-8 text: {e}")))?;
    let per_person = SBU_JOINTS * 3;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut frames = 0;
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != ROW_FIELDS {
            return Err(Error::parse(i + 1, format!("row has {} fields, expected {ROW_FIELDS}", fields.len())));
        }
        let values = fields[1..]
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(i + 1, format!("non-numeric token `{f}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        a.extend_from_slice(&values[..per_person]);
        b.extend_from_slice(&values[per_person..]);
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::parse(1, "file contains no frames"));
    }
    InteractionSample::new(
        SkeletonSequence::new(frames, SBU_JOINTS, a, 0)?,
        SkeletonSequence::new(frames, SBU_JOINTS, b, 1)?,
        label,
        source_id,
    )
}

/// SBU stores clips as `<pair>/<class 01..08>/<take>/skeleton_pos.txt`; the
/// nearest ancestor directory named `01`..`08` gives the 0-based label.
pub fn sbu_label_from_path(path: &Path) -> Result<usize> {
    path.ancestors()
        .skip(1)
        .filter_map(|p| p.file_name()?.to_str())
        .find_map(|name| match name.parse::<usize>() {
            Ok(c @ 1..=8) if name.len() == 2 => Some(c - 1),
            _ => None,
        })
        .ok_or_else(|| Error::Config(format!("no class directory (01..08) above {}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(index: usize, first: [f64; 3]) -> String {
        let mut vals = vec![0.25; 90];
        vals[..3].copy_from_slice(&first);
        vals[45] = 0.75;
        let body: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
        format!("{index},{}\n", body.join(","))
    }

    #[test]
    fn single_row() {
        let s = parse_sbu(row(1, [0.5, 0.5, 1.0]).as_bytes(), 2, "clip").unwrap();
        assert_eq!(s.frames(), 1);
        assert_eq!(s.joints(), 15);
        assert_eq!(s.person_a.joint(0, 0), [0.5, 0.5, 1.0]);
        assert_eq!(s.person_b.joint(0, 0), [0.75, 0.25, 0.25]);
        assert_eq!(s.label, 2);
    }

    #[test]
    fn two_rows_whitespace() {
        let text = row(1, [0.1, 0.2, 0.3]) + &row(2, [0.4, 0.5, 0.6]).replace(',', " ");
        let s = parse_sbu(text.as_bytes(), 0, "clip").unwrap();
        assert_eq!(s.frames(), 2);
        assert_eq!(s.person_a.joint(1, 0), [0.4, 0.5, 0.6]);
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_sbu(b"", 0, "x"), Err(Error::Parse { .. })));
        assert!(matches!(parse_sbu(b"1,2,3\n", 0, "x"), Err(Error::Parse { line: 1, .. })));
        let bad = row(1, [0.0; 3]).replacen("0.25", "abc", 1);
        assert!(matches!(parse_sbu(bad.as_bytes(), 0, "x"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn label_from_path() {
        let p = Path::new("/data/s01s02/03/001/skeleton_pos.txt");
        assert_eq!(sbu_label_from_path(p).unwrap(), 2);
        assert!(sbu_label_from_path(Path::new("/data/x/skeleton_pos.txt")).is_err());
    }
}
