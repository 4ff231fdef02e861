//! Reader for the public NTU RGB+D `.skeleton` text layout.
//!
//! ```text
//! <frame count>
//! per frame:  <body count>
//!   per body: <body id> + 9 metadata values
//!             <joint count = 25>
//!             25 × (x y z + 9 more values)
//! ```

use std::cmp::Ordering;

use super::{InteractionSample, SkeletonSequence};
use crate::{Error, Result};

pub const NTU_JOINTS: usize = 25;
const BODY_FIELDS: usize = 10;
const JOINT_FIELDS: usize = 12;

/// NTU action ids (1-based) that involve two people, in label order.
const INTERACTION_ACTIONS: [u32; 26] = [
    50, 51, 52, 53, 54, 55, 56, 57, 58, 59, 60, 106, 107, 108, 109, 110, 111, 112, 113, 114, 115, 116, 117, 118, 119, 120,
];

#[derive(Debug, Clone, PartialEq)]
pub struct NtuBody {
    pub id: String,
    /// Number of frames the body appears in.
    pub presence: usize,
    /// Full-length trajectory; frames where the body is absent are zero.
    pub sequence: SkeletonSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NtuRecording {
    pub frames: usize,
    /// Bodies in order of first appearance.
    pub bodies: Vec<NtuBody>,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_fields(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        loop {
            let Some((i, line)) = self.inner.next() else {
                return Err(Error::parse(self.last + 1, format!("truncated file: expected {what}")));
            };
            self.last = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !fields.is_empty() {
                return Ok((i + 1, fields));
            }
        }
    }

    fn next_count(&mut self, what: &str) -> Result<(usize, usize)> {
        let (line, fields) = self.next_fields(what)?;
        if fields.len() != 1 {
            return Err(Error::parse(line, format!("expected a single {what}")));
        }
        let n = fields[0]
            .parse::<usize>()
            .map_err(|_| Error::parse(line, format!("non-numeric {what} `{}`", fields[0])))?;
        Ok((line, n))
    }
}

fn parse_f64(line: usize, tok: &str) -> Result<f64> {
    let v = tok
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("non-numeric token `{tok}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u128>(), b.parse::<u128>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

pub fn parse_ntu(bytes: &[u8]) -> Result<NtuRecording> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(1, format!("not UTF-8 text: {e}")))?;
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (line, frames) = lines.next_count("frame count")?;
    if frames == 0 {
        return Err(Error::parse(line, "file declares zero frames"));
    }
    // per body: id, per-frame joint coordinates
    let mut tracks: Vec<(String, Vec<Option<Vec<f64>>>)> = Vec::new();
    for t in 0..frames {
        let (_, bodies) = lines.next_count("body count")?;
        for _ in 0..bodies {
            let (line, meta) = lines.next_fields("body metadata")?;
            if meta.len() != BODY_FIELDS {
                return Err(Error::parse(line, format!("body metadata has {} values, expected {BODY_FIELDS}", meta.len())));
            }
            for tok in &meta[1..] {
                parse_f64(line, tok)?;
            }
            let id = meta[0].to_string();
            let (line, joints) = lines.next_count("joint count")?;
            if joints != NTU_JOINTS {
                return Err(Error::parse(line, format!("joint count {joints}, expected {NTU_JOINTS}")));
            }
            let mut coords = Vec::with_capacity(NTU_JOINTS * 3);
            for _ in 0..NTU_JOINTS {
                let (line, fields) = lines.next_fields("joint line")?;
                if fields.len() != JOINT_FIELDS {
                    return Err(Error::parse(line, format!("joint line has {} values, expected {JOINT_FIELDS}", fields.len())));
                }
                let values = fields.iter().map(|f| parse_f64(line, f)).collect::<Result<Vec<_>>>()?;
                coords.extend_from_slice(&values[..3]);
            }
            let track = match tracks.iter().position(|(tid, _)| *tid == id) {
                Some(i) => &mut tracks[i].1,
                None => {
                    tracks.push((id, vec![None; frames]));
                    &mut tracks.last_mut().expect("just pushed").1
                }
            };
            if track[t].is_some() {
                return Err(Error::parse(line, "body id repeated within one frame"));
            }
            track[t] = Some(coords);
        }
    }
    let bodies = tracks
        .into_iter()
        .map(|(id, track)| {
            let presence = track.iter().filter(|f| f.is_some()).count();
            let coords = track
                .into_iter()
                .flat_map(|f| f.unwrap_or_else(|| vec![0.0; NTU_JOINTS * 3]))
                .collect();
            Ok(NtuBody {
                id,
                presence,
                sequence: SkeletonSequence::new(frames, NTU_JOINTS, coords, 0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if bodies.is_empty() {
        return Err(Error::parse(lines.last, "no bodies in any frame"));
    }
    Ok(NtuRecording { frames, bodies })
}

impl NtuRecording {
    /// Indices of the two bodies with the longest presence, ties broken by
    /// the smaller body id, returned in that ranking order.
    pub fn select_pair(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.bodies.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (&self.bodies[a], &self.bodies[b]);
            y.presence.cmp(&x.presence).then_with(|| compare_ids(&x.id, &y.id))
        });
        order.truncate(2);
        order
    }

    /// Builds a two-person sample. A recording with a single body duplicates it.
    pub fn into_sample(self, label: usize, source_id: impl Into<String>) -> Result<InteractionSample> {
        let source_id = source_id.into();
        let pair = self.select_pair();
        let a = self.bodies[pair[0]].sequence.clone();
        let b = match pair.get(1) {
            Some(&i) => self.bodies[i].sequence.clone(),
            None => {
                log::warn!("{source_id}: only one body present, duplicating it as the second person");
                a.clone()
            }
        };
        InteractionSample::new(a, b, label, source_id)
    }
}

/// Label index of an NTU file name such as `S001C001P001R001A050.skeleton`,
/// counted over the two-person action classes.
pub fn ntu_label_from_name(name: &str) -> Result<usize> {
    let pos = name
        .rfind('A')
        .filter(|&p| name[p + 1..].len() >= 3 && name[p + 1..p + 4].bytes().all(|b| b.is_ascii_digit()))
        .ok_or_else(|| Error::Config(format!("no action id (Axxx) in file name `{name}`")))?;
    let action: u32 = name[pos + 1..pos + 4].parse().expect("three ascii digits");
    INTERACTION_ACTIONS
        .iter()
        .position(|&a| a == action)
        .ok_or_else(|| Error::Config(format!("action A{action:03} in `{name}` is not a two-person class")))
}
