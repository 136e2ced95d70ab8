//! Gesture beat extraction and beat constancy.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{joint_rotations, relative_angle, BodyPart, MotionClip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatExtraction {
    /// Width of the Gaussian smoothing window, frames.
    pub smoothing_frames: usize,
    /// A minimum must sit this far below the peak speed within
    /// `prominence_radius` frames on both sides, relative to the clip's mean speed.
    pub min_prominence: f64,
    pub prominence_radius: usize,
    /// Joints to measure; `None` means the upper body.
    pub joints: Option<Range<usize>>,
}

impl Default for BeatExtraction {
    fn default() -> Self {
        BeatExtraction { smoothing_frames: 5, min_prominence: 0.2, prominence_radius: 6, joints: None }
    }
}

/// Summed angular speed (rad/s) of the chosen joints between consecutive frames.
pub fn angular_speed(clip: &MotionClip, joints: Range<usize>) -> Result<Vec<f64>> {
    let frames = clip.frame_count();
    if frames < 2 {
        return Ok(Vec::new());
    }
    let fps = clip.frame_rate as f64;
    let mut prev = joint_rotations(clip, 0)?;
    let mut out = Vec::with_capacity(frames - 1);
    for f in 1..frames {
        let cur = joint_rotations(clip, f)?;
        out.push(joints.clone().map(|j| relative_angle(&prev[j], &cur[j])).sum::<f64>() * fps);
        prev = cur;
    }
    Ok(out)
}

/// Gaussian smoothing over `width` taps (sigma = width / 4), renormalized at the edges.
pub fn gaussian_smooth(x: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return x.to_vec();
    }
    let half = (width / 2) as isize;
    let sigma = width as f64 / 4.0;
    let taps: Vec<f64> = (-half..=half).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (t, k) in taps.iter().zip(-half..=half) {
                let j = i + k;
                if (0..n).contains(&j) {
                    acc += t * x[j as usize];
                    norm += t;
                }
            }
            acc / norm
        })
        .collect()
}

/// Times (s) of prominent local minima of smoothed angular speed.
pub fn extract_gesture_beats(clip: &MotionClip, cfg: &BeatExtraction) -> Result<Vec<f64>> {
    let joints = cfg.joints.clone().unwrap_or_else(|| clip.skeleton.joint_range(BodyPart::Upper));
    if joints.end > clip.joints() {
        return Err(Error::Shape(format!("joint range {joints:?} exceeds {} joints", clip.joints())));
    }
    let raw = angular_speed(clip, joints)?;
    let speed = gaussian_smooth(&raw, cfg.smoothing_frames);
    let n = speed.len();
    if n < 3 {
        return Ok(Vec::new());
    }
    let mean = speed.iter().sum::<f64>() / n as f64;
    let need = cfg.min_prominence * mean;
    let fps = clip.frame_rate as f64;
    let mut beats = Vec::new();
    for i in 1..n - 1 {
        if !(speed[i] < speed[i - 1] && speed[i] <= speed[i + 1]) {
            continue;
        }
        let r = cfg.prominence_radius;
        let left = speed[i.saturating_sub(r)..i].iter().cloned().fold(f64::MIN, f64::max);
        let right = speed[i + 1..(i + 1 + r).min(n)].iter().cloned().fold(f64::MIN, f64::max);
        if left.min(right) - speed[i] >= need && mean > 0.0 {
            // smoothing drags asymmetric dips sideways; snap back to the raw minimum
            let h = cfg.smoothing_frames / 2;
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(n);
            let k = (lo..hi).fold(lo, |best, j| if raw[j] < raw[best] { j } else { best });
            let t = (k as f64 + 0.5) / fps;
            if beats.last() != Some(&t) {
                beats.push(t);
            }
        }
    }
    Ok(beats)
}

/// Mean over gesture beats of `exp(-d² / 2σ²)`, d = distance to the nearest audio beat.
pub fn beat_constancy(gesture: &[f64], audio: &[f64], sigma: f64) -> Result<f64> {
    if gesture.is_empty() || audio.is_empty() {
        return Err(Error::Data("beat constancy is undefined for an empty beat set".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let total: f64 = gesture
        .iter()
        .map(|g| {
            let d = audio.iter().map(|a| (g - a).abs()).fold(f64::INFINITY, f64::min);
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / gesture.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_beats_score_one() {
        assert_eq!(beat_constancy(&[0.5, 1.0, 2.2], &[0.5, 1.0, 2.2], 0.1).unwrap(), 1.0);
    }

    #[test]
    fn single_offset_beat() {
        let bc = beat_constancy(&[1.1], &[1.0, 3.0], 0.1).unwrap();
        assert!((bc - (-0.5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn extra_audio_beats_do_not_matter() {
        let a = beat_constancy(&[1.0, 2.05], &[1.0, 2.0], 0.1).unwrap();
        let b = beat_constancy(&[1.0, 2.05], &[1.0, 2.0, 5.0, 7.0], 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_sets_are_errors() {
        assert!(beat_constancy(&[], &[1.0], 0.1).is_err());
        assert!(beat_constancy(&[1.0], &[], 0.1).is_err());
    }

    #[test]
    fn smoothing_preserves_constants() {
        let s = gaussian_smooth(&[2.0; 9], 5);
        assert!(s.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }
}
