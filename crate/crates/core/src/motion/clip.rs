use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Root channels at the front of every pose vector: yaw velocity, x/z
/// velocity (character-local), height.
pub const ROOT_DIMS: usize = 4;

pub fn pose_dim(joints: usize) -> usize {
    ROOT_DIMS + 6 * joints
}

/// Body regions, each tokenized by its own codec. The declaration order is the
/// per-timestep interleaving order used in token streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyPart {
    Upper,
    Hands,
    Lower,
}

impl BodyPart {
    pub const ALL: [BodyPart; 3] = [BodyPart::Upper, BodyPart::Hands, BodyPart::Lower];

    pub fn tag(self) -> u8 {
        match self {
            BodyPart::Upper => 0,
            BodyPart::Hands => 1,
            BodyPart::Lower => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn index(self) -> usize {
        self.tag() as usize
    }
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BodyPart::Upper => "upper",
            BodyPart::Hands => "hands",
            BodyPart::Lower => "lower",
        })
    }
}

impl std::str::FromStr for BodyPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(BodyPart::Upper),
            "hands" => Ok(BodyPart::Hands),
            "lower" => Ok(BodyPart::Lower),
            other => Err(Error::Config(format!("unknown body part '{other}'"))),
        }
    }
}

/// Joint counts per region. Joints are numbered upper, then lower, then hands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub upper: usize,
    pub lower: usize,
    pub hands: usize,
}

impl Default for Skeleton {
    fn default() -> Self {
        Skeleton { upper: 10, lower: 2, hands: 4 }
    }
}

impl Skeleton {
    pub fn joints(&self) -> usize {
        self.upper + self.lower + self.hands
    }

    /// Partition used when only the joint count is known (e.g. loading a file).
    pub fn for_joint_count(joints: usize) -> Self {
        if joints == 16 {
            return Self::default();
        }
        let lower = (joints / 8).max(1).min(joints);
        let hands = (joints / 4).max(1).min(joints - lower);
        Skeleton { upper: joints - lower - hands, lower, hands }
    }

    pub fn masks(&self) -> PartMasks {
        PartMasks {
            upper: (0..self.upper).collect(),
            lower: (self.upper..self.upper + self.lower).collect(),
            hands: (self.upper + self.lower..self.joints()).collect(),
        }
    }

    pub fn joint_range(&self, part: BodyPart) -> Range<usize> {
        match part {
            BodyPart::Upper => 0..self.upper,
            BodyPart::Lower => self.upper..self.upper + self.lower,
            BodyPart::Hands => self.upper + self.lower..self.joints(),
        }
    }

    /// Pose-vector channels owned by a part's codec. Root channels belong to
    /// the lower body so they are decoded exactly once.
    pub fn part_channels(&self, part: BodyPart) -> Vec<usize> {
        let joints = self.joint_range(part);
        let mut ch = Vec::new();
        if part == BodyPart::Lower {
            ch.extend(0..ROOT_DIMS);
        }
        for j in joints {
            ch.extend(ROOT_DIMS + 6 * j..ROOT_DIMS + 6 * (j + 1));
        }
        ch
    }

    /// Parent joint for forward kinematics (`None` = attached to the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        if *self == Skeleton::default() {
            // spine, chest, neck, head, l_shoulder, l_elbow, l_wrist,
            // r_shoulder, r_elbow, r_wrist, l_hip, r_hip, 2 fingers per hand.
            return vec![
                None,
                Some(0),
                Some(1),
                Some(2),
                Some(1),
                Some(4),
                Some(5),
                Some(1),
                Some(7),
                Some(8),
                None,
                None,
                Some(6),
                Some(6),
                Some(9),
                Some(9),
            ];
        }
        let mut p = Vec::with_capacity(self.joints());
        for j in 0..self.upper {
            p.push(if j == 0 { None } else { Some(j - 1) });
        }
        p.extend(std::iter::repeat_n(None, self.lower));
        let tip = self.upper.checked_sub(1);
        p.extend(std::iter::repeat_n(tip, self.hands));
        p
    }

    /// Rest offset of each joint from its parent.
    pub fn offsets(&self) -> Vec<[f64; 3]> {
        let parents = self.parents();
        (0..self.joints())
            .map(|j| {
                let lat = match j % 3 {
                    0 => 0.0,
                    1 => 0.08,
                    _ => -0.08,
                };
                if self.joint_range(BodyPart::Lower).contains(&j) {
                    [if j % 2 == 0 { 0.1 } else { -0.1 }, -0.1, 0.0]
                } else if parents[j].is_none() {
                    [0.0, 0.1, 0.0]
                } else {
                    [lat, 0.12, 0.02]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartMasks {
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
    pub hands: Vec<usize>,
}

impl PartMasks {
    /// Disjoint and covering `0..joints`.
    pub fn is_partition(&self, joints: usize) -> bool {
        let mut seen = vec![false; joints];
        for &j in self.upper.iter().chain(&self.lower).chain(&self.hands) {
            if j >= joints || seen[j] {
                return false;
            }
            seen[j] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Borrowed view over one pose vector.
#[derive(Debug, Clone, Copy)]
pub struct PoseVector<'a>(pub &'a [f32]);

impl<'a> PoseVector<'a> {
    pub fn root_yaw_velocity(&self) -> f32 {
        self.0[0]
    }

    pub fn root_xz_velocity(&self) -> [f32; 2] {
        [self.0[1], self.0[2]]
    }

    pub fn root_height(&self) -> f32 {
        self.0[3]
    }

    pub fn joint_rot6d(&self, joint: usize) -> &'a [f32] {
        &self.0[ROOT_DIMS + 6 * joint..ROOT_DIMS + 6 * (joint + 1)]
    }
}

/// Fixed-rate pose sequence, stored row-major (`frames x pose_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub skeleton: Skeleton,
    pub frame_rate: f32,
    data: Vec<f32>,
}

impl MotionClip {
    pub fn new(skeleton: Skeleton, frame_rate: f32, data: Vec<f32>) -> Result<Self> {
        let dim = pose_dim(skeleton.joints());
        if !(frame_rate > 0.0) {
            return Err(Error::Data(format!("frame rate must be positive, got {frame_rate}")));
        }
        if data.len() % dim != 0 {
            return Err(Error::Shape(format!("{} values is not a whole number of {dim}-d poses", data.len())));
        }
        Ok(MotionClip { skeleton, frame_rate, data })
    }

    pub fn empty(skeleton: Skeleton, frame_rate: f32) -> Self {
        MotionClip { skeleton, frame_rate, data: Vec::new() }
    }

    pub fn joints(&self) -> usize {
        self.skeleton.joints()
    }

    pub fn dim(&self) -> usize {
        pose_dim(self.joints())
    }

    pub fn frame_count(&self) -> usize {
        self.data.len() / self.dim()
    }

    pub fn duration(&self) -> f64 {
        self.frame_count() as f64 / self.frame_rate as f64
    }

    pub fn frame(&self, i: usize) -> PoseVector<'_> {
        let d = self.dim();
        PoseVector(&self.data[i * d..(i + 1) * d])
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn masks(&self) -> PartMasks {
        self.skeleton.masks()
    }

    /// Frames `range`, clamped to the clip.
    pub fn slice(&self, range: Range<usize>) -> MotionClip {
        let d = self.dim();
        let end = range.end.min(self.frame_count());
        let start = range.start.min(end);
        MotionClip { skeleton: self.skeleton, frame_rate: self.frame_rate, data: self.data[start * d..end * d].to_vec() }
    }

    /// Extracts one part's channels as f64, `frames x channels`.
    pub fn part_features(&self, part: BodyPart) -> (Vec<f64>, usize) {
        let ch = self.skeleton.part_channels(part);
        let mut out = Vec::with_capacity(self.frame_count() * ch.len());
        for f in 0..self.frame_count() {
            let pose = self.frame(f).0;
            out.extend(ch.iter().map(|&c| pose[c] as f64));
        }
        (out, ch.len())
    }

    /// Inverse of [`part_features`] for all three parts at once.
    pub fn from_parts(skeleton: Skeleton, frame_rate: f32, frames: usize, parts: [&[f64]; 3]) -> Result<Self> {
        let dim = pose_dim(skeleton.joints());
        let mut data = vec![0.0f32; frames * dim];
        for part in BodyPart::ALL {
            let ch = skeleton.part_channels(part);
            let src = parts[part.index()];
            if src.len() != frames * ch.len() {
                return Err(Error::Shape(format!(
                    "{part} features have {} values, expected {}",
                    src.len(),
                    frames * ch.len()
                )));
            }
            for f in 0..frames {
                for (k, &c) in ch.iter().enumerate() {
                    data[f * dim + c] = src[f * ch.len() + k] as f32;
                }
            }
        }
        MotionClip::new(skeleton, frame_rate, data)
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_masks_partition_joints() {
        let s = Skeleton::default();
        assert_eq!(s.joints(), 16);
        assert!(s.masks().is_partition(16));
        for j in 1..40 {
            let s = Skeleton::for_joint_count(j);
            assert_eq!(s.joints(), j);
            assert!(s.masks().is_partition(j), "{j}");
        }
    }

    #[test]
    fn part_channels_cover_pose_once() {
        let s = Skeleton::default();
        let mut all: Vec<usize> = BodyPart::ALL.iter().flat_map(|&p| s.part_channels(p)).collect();
        all.sort_unstable();
        assert_eq!(all, (0..pose_dim(16)).collect::<Vec<_>>());
        assert_eq!(s.part_channels(BodyPart::Upper).len(), 60);
        assert_eq!(s.part_channels(BodyPart::Lower).len(), 16);
        assert_eq!(s.part_channels(BodyPart::Hands).len(), 24);
    }

    #[test]
    fn parts_round_trip() {
        let s = Skeleton::default();
        let data: Vec<f32> = (0..3 * pose_dim(16)).map(|i| i as f32 * 0.25).collect();
        let clip = MotionClip::new(s, 30.0, data).unwrap();
        let parts: Vec<Vec<f64>> = BodyPart::ALL.iter().map(|&p| clip.part_features(p).0).collect();
        let back = MotionClip::from_parts(s, 30.0, 3, [&parts[0], &parts[1], &parts[2]]).unwrap();
        assert_eq!(back, clip);
    }
}
