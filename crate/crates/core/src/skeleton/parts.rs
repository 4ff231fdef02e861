use std::collections::BTreeSet;

use crate::{Error, Result};

/// Fixed part order used by the built-in maps and the partition config file.
pub const PART_NAMES: [&str; 5] = ["left_arm", "right_arm", "left_leg", "right_leg", "torso"];

/// Ordered partition of joint indices into named body parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyPartMap {
    parts: Vec<(String, Vec<usize>)>,
    joints: usize,
}

impl BodyPartMap {
    /// Validates that `parts` is a partition of `0..J` (disjoint and exhaustive).
    pub fn new(parts: Vec<(String, Vec<usize>)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Config("part map has no parts".into()));
        }
        let mut seen = BTreeSet::new();
        for (name, joints) in &parts {
            if joints.is_empty() {
                return Err(Error::Config(format!("part {name} is empty")));
            }
            for &j in joints {
                if !seen.insert(j) {
                    return Err(Error::Config(format!("joint {j} is assigned to more than one part")));
                }
            }
        }
        let joints = seen.len();
        if seen.iter().next_back() != Some(&(joints - 1)) {
            return Err(Error::Config(format!(
                "part map does not cover joints 0..{joints} contiguously"
            )));
        }
        Ok(Self { parts, joints })
    }

    /// Parses `<part-name>: i, j, k` lines. Exactly five parts in the fixed
    /// order of [`PART_NAMES`]; `#` starts a comment.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut parts = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, list) = line
                .split_once(':')
                .ok_or_else(|| Error::parse(lineno + 1, "expected `<part-name>: i, j, ...`"))?;
            let name = name.trim().to_ascii_lowercase().replace([' ', '-'], "_");
            let expected = PART_NAMES.get(parts.len()).ok_or_else(|| Error::parse(lineno + 1, "more than five parts"))?;
            if name != *expected {
                return Err(Error::parse(lineno + 1, format!("expected part `{expected}`, found `{name}`")));
            }
            let idx = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| Error::parse(lineno + 1, format!("bad joint index `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            parts.push((name, idx));
        }
        if parts.len() != PART_NAMES.len() {
            return Err(Error::Config(format!("partition config lists {} parts, expected 5", parts.len())));
        }
        Self::new(parts)
    }

    pub fn to_config(&self) -> String {
        self.parts
            .iter()
            .map(|(name, idx)| {
                let list: Vec<String> = idx.iter().map(usize::to_string).collect();
                format!("{name}: {}\n", list.join(", "))
            })
            .collect()
    }

    /// Number of parts, `B`.
    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Number of joints covered, `J`.
    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn part(&self, p: usize) -> &[usize] {
        &self.parts[p].1
    }

    pub fn name(&self, p: usize) -> &str {
        &self.parts[p].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.parts.iter().map(|(n, j)| (n.as_str(), j.as_slice()))
    }
}

/// Default map for the Kinect v2 (25 joints) and SBU (15 joints) orderings.
pub fn builtin_part_map(joints: usize) -> Result<BodyPartMap> {
    let lists: [Vec<usize>; 5] = match joints {
        25 => [
            vec![4, 5, 6, 7, 21, 22],
            vec![8, 9, 10, 11, 23, 24],
            vec![12, 13, 14, 15],
            vec![16, 17, 18, 19],
            vec![0, 1, 2, 3, 20],
        ],
        15 => [
            vec![3, 4, 5],
            vec![6, 7, 8],
            vec![9, 10, 11],
            vec![12, 13, 14],
            vec![0, 1, 2],
        ],
        _ => {
            return Err(Error::Config(format!(
                "no built-in part map for {joints} joints; supply a partition config"
            )))
        }
    };
    BodyPartMap::new(PART_NAMES.iter().map(|n| n.to_string()).zip(lists).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_maps_are_partitions() {
        let m = builtin_part_map(25).unwrap();
        let sizes: Vec<usize> = m.iter().map(|(_, j)| j.len()).collect();
        assert_eq!(sizes, vec![6, 6, 4, 4, 5]);
        let union: BTreeSet<usize> = m.iter().flat_map(|(_, j)| j.iter().copied()).collect();
        assert_eq!(union, (0..25).collect());
        assert_eq!(m.name(4), "torso");

        let m = builtin_part_map(15).unwrap();
        assert!(m.iter().all(|(_, j)| j.len() == 3));
        assert_eq!(m.joints(), 15);
        assert!(builtin_part_map(18).is_err());
    }

    #[test]
    fn overlap_and_gaps_rejected() {
        let overlap = vec![("a".to_string(), vec![0, 1]), ("b".to_string(), vec![1, 2])];
        assert!(BodyPartMap::new(overlap).is_err());
        let gap = vec![("a".to_string(), vec![0]), ("b".to_string(), vec![2])];
        assert!(BodyPartMap::new(gap).is_err());
    }

    #[test]
    fn config_round_trip() {
        let m = builtin_part_map(15).unwrap();
        let text = m.to_config();
        assert_eq!(BodyPartMap::parse_config(&text).unwrap(), m);
        let custom = "# sbu\nLeft arm: 3,4,5\nright-arm: 6,7,8\nleft_leg: 9,10,11\nright_leg: 12,13,14\ntorso: 0,1,2\n";
        assert_eq!(BodyPartMap::parse_config(custom).unwrap(), m);
    }

    #[test]
    fn config_errors() {
        let wrong_order = "right_arm: 0\nleft_arm: 1\nleft_leg: 2\nright_leg: 3\ntorso: 4\n";
        assert!(matches!(BodyPartMap::parse_config(wrong_order), Err(Error::Parse { line: 1, .. })));
        let overlapping = "left_arm: 0,1\nright_arm: 1\nleft_leg: 2\nright_leg: 3\ntorso: 4\n";
        assert!(matches!(BodyPartMap::parse_config(overlapping), Err(Error::Config(_))));
        let bad = "left_arm: x\n";
        assert!(matches!(BodyPartMap::parse_config(bad), Err(Error::Parse { line: 1, .. })));
    }
}
