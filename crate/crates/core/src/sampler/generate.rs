use serde::{Deserialize, Serialize};

use super::{sample_logits, SamplerConfig, SamplerState};
use crate::audio::{tokenize_audio, UnitCodebook, Waveform, FRAMES_PER_SECOND};
use crate::error::{Error, Result};
use crate::lm::SeqModel;
use crate::motion::{pose_dim, MotionClip, Skeleton};
use crate::rvq::{detokenize_motion, tokenize_motion, PartCodecs, MotionTokens, DOWNSAMPLE};
use crate::train::{build_prompt, deinterleave, interleave, part_at, ExamplePrompt, WINDOW_STEPS, WINDOW_UNITS};

/// Timesteps carried over from the previous window.
pub const OVERLAP_STEPS: usize = 3;
/// New timesteps per window after the first.
pub const LONG_STRIDE_STEPS: usize = WINDOW_STEPS - OVERLAP_STEPS;
/// Audio units spanned by the overlap (0.4 s).
pub const OVERLAP_UNITS: usize = WINDOW_UNITS * OVERLAP_STEPS / WINDOW_STEPS;
/// Audio units between window starts (3.6 s).
pub const LONG_STRIDE_UNITS: usize = WINDOW_UNITS - OVERLAP_UNITS;

/// One generated window: 90 interleaved motion ids, prefill included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub tokens: Vec<u32>,
    pub prompt_len: usize,
    /// Example tokens dropped to fit the context.
    pub truncated: usize,
}

/// Fills the assistant segment to 30 timesteps after `seed_codes`.
pub fn generate_segment(
    model: &SeqModel,
    audio_units: &[u32],
    example: &ExamplePrompt,
    seed_codes: &[u32],
    state: &mut SamplerState,
    cfg: &SamplerConfig,
) -> Result<Segment> {
    let total = 3 * WINDOW_STEPS;
    if audio_units.len() != WINDOW_UNITS {
        return Err(Error::Data(format!("segment needs {WINDOW_UNITS} audio units, got {}", audio_units.len())));
    }
    if seed_codes.len() % 3 != 0 || seed_codes.len() >= total {
        return Err(Error::Contract(format!("{} seed tokens is not a partial run of triplets", seed_codes.len())));
    }
    let layout = &model.vocab;
    for (i, &t) in seed_codes.iter().enumerate() {
        layout.motion_code(part_at(i), t)?;
    }
    let prompt = build_prompt(layout, example, audio_units, seed_codes, false, model.config.context, total - seed_codes.len())?;
    let (mut kv, mut logits) = model.prefill(&prompt.tokens)?;
    let mut tokens = seed_codes.to_vec();
    for i in seed_codes.len()..total {
        let tok = sample_logits(&logits, state, cfg, layout, part_at(i))?;
        tokens.push(tok);
        if i + 1 < total {
            logits = model.step(&mut kv, tok)?;
        }
    }
    Ok(Segment { tokens, prompt_len: prompt.tokens.len(), truncated: prompt.truncated })
}

/// Interleaved ids for one timestep, from tokenizing a 4-frame hold of `pose`.
pub fn initial_pose_codes(model: &SeqModel, codecs: &PartCodecs, skeleton: Skeleton, frame_rate: f32, pose: &[f32]) -> Result<Vec<u32>> {
    if pose.len() != pose_dim(skeleton.joints()) {
        return Err(Error::Shape(format!("pose has {} values, skeleton needs {}", pose.len(), pose_dim(skeleton.joints()))));
    }
    let hold: Vec<f32> = pose.iter().copied().cycle().take(DOWNSAMPLE * pose.len()).collect();
    let clip = MotionClip::new(skeleton, frame_rate, hold)?;
    interleave(&model.vocab, &tokenize_motion(&clip, codecs)?)
}

/// Debug record for one long-form window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: usize,
    pub audio_start: usize,
    pub prefill: Vec<u32>,
    pub tokens: Vec<u32>,
    pub truncated: usize,
}

#[derive(Debug, Clone)]
pub struct LongGeneration {
    pub clip: MotionClip,
    pub tokens: MotionTokens,
    pub windows: Vec<WindowRecord>,
    /// Audio shorter than one window was padded with silence.
    pub padded_audio: bool,
}

/// Number of windows for `units` audio units. A tail of up to one overlap
/// span is left uncovered and filled by holding the last frame.
pub fn window_count(units: usize) -> usize {
    1 + units.saturating_sub(WINDOW_UNITS + OVERLAP_UNITS).div_ceil(LONG_STRIDE_UNITS)
}

/// Window-by-window generation over audio of any length. Each window after
/// the first is prefilled with the previous window's last three timesteps and
/// its audio is advanced by 3.6 s so those codes line up with their audio.
#[allow(clippy::too_many_arguments)]
pub fn generate_long(
    model: &SeqModel,
    codecs: &PartCodecs,
    units: &UnitCodebook,
    wave: &Waveform,
    example: &ExamplePrompt,
    initial_pose: Option<&[f32]>,
    skeleton: Skeleton,
    frame_rate: f32,
    cfg: &SamplerConfig,
) -> Result<LongGeneration> {
    cfg.validate()?;
    let duration = wave.duration();
    let padded_audio = duration * (FRAMES_PER_SECOND as f64) < WINDOW_UNITS as f64;
    let available = ((duration * FRAMES_PER_SECOND as f64).floor() as usize).max(WINDOW_UNITS);
    let windows = window_count(available);
    let needed = WINDOW_UNITS + LONG_STRIDE_UNITS * (windows - 1);
    let padded = wave.window(0.0, needed as f64 / FRAMES_PER_SECOND as f64 + 0.05);
    let mut audio = tokenize_audio(&padded, units)?;
    if audio.is_empty() {
        return Err(Error::Data("audio produced no units".into()));
    }
    let last = *audio.last().expect("nonempty");
    audio.resize(needed.max(audio.len()), last);

    let mut state = SamplerState::from_example(&model.vocab, example, cfg.seed)?;
    let mut prefill = match initial_pose {
        Some(p) => initial_pose_codes(model, codecs, skeleton, frame_rate, p)?,
        None => Vec::new(),
    };
    let mut stream: Vec<u32> = Vec::new();
    let mut records = Vec::with_capacity(windows);
    for k in 0..windows {
        let a0 = k * LONG_STRIDE_UNITS;
        let seg = generate_segment(model, &audio[a0..a0 + WINDOW_UNITS], example, &prefill, &mut state, cfg)?;
        let keep = if k == 0 { 0 } else { 3 * OVERLAP_STEPS };
        stream.extend_from_slice(&seg.tokens[keep..]);
        records.push(WindowRecord { index: k, audio_start: a0, prefill: prefill.clone(), tokens: seg.tokens.clone(), truncated: seg.truncated });
        prefill = seg.tokens[seg.tokens.len() - 3 * OVERLAP_STEPS..].to_vec();
    }
    let tokens = deinterleave(&model.vocab, &stream)?;
    let full = detokenize_motion(&tokens, codecs, skeleton, frame_rate)?;
    let frames = (duration * frame_rate as f64).round() as usize;
    let clip = if frames <= full.frame_count() {
        full.slice(0..frames)
    } else {
        let dim = full.dim();
        let mut data = full.data().to_vec();
        let last = data[data.len() - dim..].to_vec();
        for _ in full.frame_count()..frames {
            data.extend_from_slice(&last);
        }
        MotionClip::new(skeleton, frame_rate, data)?
    };
    if clip.has_nan() {
        return Err(Error::Numeric("generated motion contains non-finite values".into()));
    }
    Ok(LongGeneration { clip, tokens, windows: records, padded_audio })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_arithmetic() {
        assert_eq!(LONG_STRIDE_UNITS, 180);
        assert_eq!(LONG_STRIDE_STEPS, 27);
        assert_eq!(window_count(200), 1);
        assert_eq!(window_count(400), 2);
        assert_eq!(window_count(401), 3);
        assert_eq!(window_count(580), 3);
    }
}
