use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::{windows_to_channels, RvqCodec, DOWNSAMPLE};
use crate::error::{Error, Result};
use crate::motion::{BodyPart, MotionClip, Skeleton};

/// One codec per body part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartCodecs {
    pub upper: RvqCodec,
    pub hands: RvqCodec,
    pub lower: RvqCodec,
}

impl PartCodecs {
    pub fn new(upper: RvqCodec, hands: RvqCodec, lower: RvqCodec) -> Result<Self> {
        for (want, c) in [(BodyPart::Upper, &upper), (BodyPart::Hands, &hands), (BodyPart::Lower, &lower)] {
            if c.part != want {
                return Err(Error::Config(format!("codec for {} supplied in the {want} slot", c.part)));
            }
        }
        if upper.codebook_size() != hands.codebook_size() || upper.codebook_size() != lower.codebook_size() {
            return Err(Error::Config("part codecs must share one codebook size".into()));
        }
        Ok(PartCodecs { upper, hands, lower })
    }

    pub fn get(&self, part: BodyPart) -> &RvqCodec {
        match part {
            BodyPart::Upper => &self.upper,
            BodyPart::Hands => &self.hands,
            BodyPart::Lower => &self.lower,
        }
    }

    pub fn codebook_size(&self) -> usize {
        self.upper.codebook_size()
    }

    /// Loads `upper.mecq`, `hands.mecq` and `lower.mecq` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let load = |p: BodyPart| RvqCodec::load(&dir.join(format!("{p}.mecq")));
        Self::new(load(BodyPart::Upper)?, load(BodyPart::Hands)?, load(BodyPart::Lower)?)
    }
}

/// Base-layer codes for the three parts; `padded_frames` > 0 when the clip
/// was extended by repeating its last frame.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MotionTokens {
    pub upper: Vec<u32>,
    pub hands: Vec<u32>,
    pub lower: Vec<u32>,
    pub padded_frames: usize,
}

impl MotionTokens {
    pub fn get(&self, part: BodyPart) -> &[u32] {
        match part {
            BodyPart::Upper => &self.upper,
            BodyPart::Hands => &self.hands,
            BodyPart::Lower => &self.lower,
        }
    }

    pub fn get_mut(&mut self, part: BodyPart) -> &mut Vec<u32> {
        match part {
            BodyPart::Upper => &mut self.upper,
            BodyPart::Hands => &mut self.hands,
            BodyPart::Lower => &mut self.lower,
        }
    }

    /// Timesteps (tokens per part).
    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }
}

/// Encodes one part's features (`frames x ch`, frames divisible by 4) to base-layer codes.
pub fn encode_part(codec: &RvqCodec, features: &[f64], frames: usize) -> Result<Vec<u32>> {
    if frames == 0 {
        return Ok(Vec::new());
    }
    let x = windows_to_channels(&[features.to_vec()], codec.in_dim, frames);
    let rows = codec.encode_latents(&x, 1, frames)?;
    let enc = codec.quantize(&rows, 0)?;
    Ok(enc.codes.into_iter().next().unwrap_or_default())
}

pub fn tokenize_motion(clip: &MotionClip, codecs: &PartCodecs) -> Result<MotionTokens> {
    if clip.has_nan() {
        return Err(Error::Numeric("motion clip contains non-finite values".into()));
    }
    let frames = clip.frame_count();
    let padded = (DOWNSAMPLE - frames % DOWNSAMPLE) % DOWNSAMPLE;
    let mut out = MotionTokens { padded_frames: if frames == 0 { 0 } else { padded }, ..Default::default() };
    if frames == 0 {
        return Ok(out);
    }
    for part in BodyPart::ALL {
        let codec = codecs.get(part);
        let (mut feat, ch) = clip.part_features(part);
        if ch != codec.in_dim {
            return Err(Error::Shape(format!("{part} codec expects {} channels, clip has {ch}", codec.in_dim)));
        }
        let last = feat[(frames - 1) * ch..].to_vec();
        for _ in 0..padded {
            feat.extend_from_slice(&last);
        }
        *out.get_mut(part) = encode_part(codec, &feat, frames + padded)?;
    }
    Ok(out)
}

/// Decodes base-layer codes for all parts into a full-body clip of `4 * len` frames.
pub fn detokenize_motion(tokens: &MotionTokens, codecs: &PartCodecs, skeleton: Skeleton, frame_rate: f32) -> Result<MotionClip> {
    let n = tokens.len();
    if tokens.hands.len() != n || tokens.lower.len() != n {
        return Err(Error::Shape("part token streams differ in length".into()));
    }
    let mut parts = Vec::with_capacity(3);
    for part in BodyPart::ALL {
        let codec = codecs.get(part);
        if codec.in_dim != skeleton.part_channels(part).len() {
            return Err(Error::Shape(format!("{part} codec does not match the skeleton")));
        }
        parts.push(if n == 0 { Vec::new() } else { codec.codec_decode(&[tokens.get(part)])? });
    }
    MotionClip::from_parts(skeleton, frame_rate, DOWNSAMPLE * n, [&parts[0], &parts[1], &parts[2]])
}
