//! Motion files and dataset manifests.
//!
//! Motion file layout (little-endian):
//!
//! ```text
//! "MECM" | u32 version=1 | u32 J | u32 frame_count | f32 frame_rate | frame_count * (4+6J) f32
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::clip::{pose_dim, MotionClip, Skeleton};
use crate::error::{Error, Result};

pub const MOTION_MAGIC: &[u8; 4] = b"MECM";
pub const MOTION_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_motion(clip: &MotionClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + clip.data().len() * 4);
    out.extend_from_slice(MOTION_MAGIC);
    out.extend_from_slice(&MOTION_VERSION.to_le_bytes());
    out.extend_from_slice(&(clip.joints() as u32).to_le_bytes());
    out.extend_from_slice(&(clip.frame_count() as u32).to_le_bytes());
    out.extend_from_slice(&clip.frame_rate.to_le_bytes());
    for v in clip.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_motion(bytes: &[u8]) -> Result<MotionClip> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    if &bytes[0..4] != MOTION_MAGIC {
        return Err(Error::format(0, "bad magic, expected MECM"));
    }
    let version = LittleEndian::read_u32(&bytes[4..8]);
    if version != MOTION_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let joints = LittleEndian::read_u32(&bytes[8..12]) as usize;
    let frames = LittleEndian::read_u32(&bytes[12..16]) as usize;
    let frame_rate = LittleEndian::read_f32(&bytes[16..20]);
    if !(frame_rate > 0.0) {
        return Err(Error::format(16, format!("frame rate {frame_rate} must be positive")));
    }
    let dim = pose_dim(joints);
    let frame_bytes = dim * 4;
    let need = HEADER_LEN + frames * frame_bytes;
    if bytes.len() < need {
        let whole = (bytes.len() - HEADER_LEN) / frame_bytes;
        let offset = (HEADER_LEN + whole * frame_bytes) as u64;
        return Err(Error::format(offset, format!("truncated in frame {whole} of {frames}")));
    }
    if bytes.len() > need {
        return Err(Error::format(need as u64, "trailing bytes after last frame"));
    }
    let mut data = vec![0.0f32; frames * dim];
    LittleEndian::read_f32_into(&bytes[HEADER_LEN..need], &mut data);
    MotionClip::new(Skeleton::for_joint_count(joints), frame_rate, data)
}

pub fn motion_io_save(path: &Path, clip: &MotionClip) -> Result<()> {
    write_atomic(path, &encode_motion(clip))
}

pub fn motion_io_load(path: &Path) -> Result<MotionClip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_motion(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// One line of a dataset manifest (JSON Lines).
///
/// ```text
/// {"id":"sample_00000","motion_path":"motion/sample_00000.mecm","audio_path":"audio/sample_00000.wav","beat_times":[0.41,1.2],"style_id":0}
/// ```
///
/// Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub motion_path: PathBuf,
    pub audio_path: PathBuf,
    pub beat_times: Vec<f64>,
    pub style_id: usize,
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::Data(e.to_string()))?;
        buf.write_all(b"\n").expect("vec write");
    }
    write_atomic(path, &buf)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if rec.motion_path.is_relative() {
            rec.motion_path = base.join(&rec.motion_path);
        }
        if rec.audio_path.is_relative() {
            rec.audio_path = base.join(&rec.audio_path);
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(frames: usize) -> MotionClip {
        let s = Skeleton::default();
        let data = (0..frames * pose_dim(16)).map(|i| (i as f32).sin() * 1e3).collect();
        MotionClip::new(s, 30.0, data).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mecm");
        let c = clip(5);
        motion_io_save(&p, &c).unwrap();
        let back = motion_io_load(&p).unwrap();
        assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), c.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back.frame_rate, 30.0);
    }

    #[test]
    fn empty_clip_round_trips() {
        let bytes = encode_motion(&MotionClip::empty(Skeleton::default(), 30.0));
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(decode_motion(&bytes).unwrap().frame_count(), 0);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_motion(&clip(3));
        let frame = pose_dim(16) * 4;
        let cut = &bytes[..HEADER_LEN + frame + 10];
        match decode_motion(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, (HEADER_LEN + frame) as u64),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(matches!(decode_motion(&bytes[..7]), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_motion(&clip(1));
        bytes[0] = b'X';
        assert!(matches!(decode_motion(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut bytes = encode_motion(&clip(1));
        bytes[4] = 9;
        assert!(matches!(decode_motion(&bytes), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let rec = ManifestRecord {
            id: "a".into(),
            motion_path: "motion/a.mecm".into(),
            audio_path: "audio/a.wav".into(),
            beat_times: vec![0.5, 1.25],
            style_id: 1,
        };
        write_manifest(&p, &[rec.clone()]).unwrap();
        let back = read_manifest(&p).unwrap();
        assert_eq!(back[0].motion_path, dir.path().join("motion/a.mecm"));
        assert_eq!(back[0].beat_times, rec.beat_times);
    }
}
