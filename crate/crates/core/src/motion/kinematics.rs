use nalgebra::{Matrix3, Vector3};

use super::clip::MotionClip;
use super::rotation::matrix_from_rot6d;
use crate::error::Result;

/// Local joint rotations of one frame.
pub fn joint_rotations(clip: &MotionClip, frame: usize) -> Result<Vec<Matrix3<f64>>> {
    let pose = clip.frame(frame);
    (0..clip.joints())
        .map(|j| {
            let v: Vec<f64> = pose.joint_rot6d(j).iter().map(|&x| x as f64).collect();
            matrix_from_rot6d(&v)
        })
        .collect()
}

/// Joint positions with the root pinned at the origin (translation and
/// heading zeroed), `frames x joints x 3`.
pub fn joint_positions(clip: &MotionClip) -> Result<Vec<f64>> {
    let parents = clip.skeleton.parents();
    let offsets = clip.skeleton.offsets();
    let joints = clip.joints();
    let mut out = Vec::with_capacity(clip.frame_count() * joints * 3);
    for f in 0..clip.frame_count() {
        let local = joint_rotations(clip, f)?;
        let mut global: Vec<Matrix3<f64>> = Vec::with_capacity(joints);
        let mut pos: Vec<Vector3<f64>> = Vec::with_capacity(joints);
        for j in 0..joints {
            let off = Vector3::from(offsets[j]);
            let (prot, ppos) = match parents[j] {
                Some(p) => (global[p], pos[p]),
                None => (Matrix3::identity(), Vector3::zeros()),
            };
            pos.push(ppos + prot * off);
            global.push(prot * local[j]);
        }
        for p in pos {
            out.extend_from_slice(&[p.x, p.y, p.z]);
        }
    }
    Ok(out)
}
