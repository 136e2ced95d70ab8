//! Pose representation, rotation math, synthetic data and motion files.

mod clip;
mod io;
mod kinematics;
mod rotation;
mod synth;

pub use clip::{pose_dim, BodyPart, MotionClip, PartMasks, PoseVector, Skeleton, ROOT_DIMS};
pub use io::{
    decode_motion, encode_motion, motion_io_load, motion_io_save, read_manifest, write_manifest, ManifestRecord,
    MOTION_MAGIC, MOTION_VERSION,
};
pub(crate) use io::write_atomic;
pub use kinematics::{joint_positions, joint_rotations};
pub use rotation::{axis_angle, is_rotation, matrix_from_rot6d, relative_angle, rot6d_from_matrix, Rot6d, DEGENERACY_TOL};
pub use synth::{style_band, synth_generate, PairedSample, SynthConfig, BEAT_GAP};
