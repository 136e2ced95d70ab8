//! Example prompts and the chat-style token template.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{Special, VocabLayout};
use crate::motion::BodyPart;
use crate::rvq::MotionTokens;

/// Motion timesteps per 4 s training window.
pub const WINDOW_STEPS: usize = 30;
/// Audio units per 4 s training window.
pub const WINDOW_UNITS: usize = 200;

/// Per-part example codes after dedup, drop and shuffle.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExamplePrompt {
    /// Codes in prompt order, indexed by `BodyPart::index`.
    pub tokens: [Vec<u32>; 3],
    /// Unique codes before dropping, per part.
    pub source: [BTreeSet<u32>; 3],
    pub drop_rate: f64,
}

/// Dedup (first occurrence order), independent per-token drop, then shuffle.
pub fn dedup_drop_shuffle<R: Rng>(codes: &[u32], drop_rate: f64, rng: &mut R) -> (Vec<u32>, BTreeSet<u32>) {
    let mut seen = BTreeSet::new();
    let unique: Vec<u32> = codes.iter().copied().filter(|c| seen.insert(*c)).collect();
    let mut kept: Vec<u32> = unique.into_iter().filter(|_| !rng.random_bool(drop_rate.clamp(0.0, 1.0))).collect();
    kept.shuffle(rng);
    (kept, seen)
}

impl ExamplePrompt {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn build(codes: &MotionTokens, drop_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&drop_rate) {
            return Err(Error::Config(format!("drop rate {drop_rate} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = ExamplePrompt { drop_rate, ..Default::default() };
        for part in BodyPart::ALL {
            let (kept, src) = dedup_drop_shuffle(codes.get(part), drop_rate, &mut rng);
            out.tokens[part.index()] = kept;
            out.source[part.index()] = src;
        }
        Ok(out)
    }

    /// Inference-time example: optional dedup, original order, nothing dropped.
    pub fn from_codes(codes: &MotionTokens, dedup: bool) -> Self {
        let mut out = ExamplePrompt::default();
        for part in BodyPart::ALL {
            let c = codes.get(part);
            let mut seen = BTreeSet::new();
            out.tokens[part.index()] = if dedup { c.iter().copied().filter(|x| seen.insert(*x)).collect() } else { c.to_vec() };
            out.source[part.index()] = c.iter().copied().collect();
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Source codes mapped to vocabulary ids (all parts).
    pub fn source_ids(&self, layout: &VocabLayout) -> Result<BTreeSet<u32>> {
        let mut out = BTreeSet::new();
        for part in BodyPart::ALL {
            for &c in &self.source[part.index()] {
                out.insert(layout.motion_token(part, c)?);
            }
        }
        Ok(out)
    }

    /// Ids of the tokens that actually appear in the prompt, per part.
    pub fn prompt_ids(&self, layout: &VocabLayout, part: BodyPart) -> Result<BTreeSet<u32>> {
        self.tokens[part.index()].iter().map(|&c| layout.motion_token(part, c)).collect()
    }
}

/// A serialized prompt and where the assistant's motion tokens begin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub tokens: Vec<u32>,
    /// Index of the first motion token after `[ASSIST_BEGIN]`.
    pub motion_start: usize,
    /// Example tokens dropped to fit the context.
    pub truncated: usize,
}

/// Part generated at motion offset `i` (upper, hands, lower, repeating).
pub fn part_at(i: usize) -> BodyPart {
    BodyPart::ALL[i % 3]
}

/// Interleaves per-part codes into `(upper, hands, lower)` triplets of vocab ids.
pub fn interleave(layout: &VocabLayout, codes: &MotionTokens) -> Result<Vec<u32>> {
    let n = codes.len();
    if codes.hands.len() != n || codes.lower.len() != n {
        return Err(Error::Shape("part code streams differ in length".into()));
    }
    let mut out = Vec::with_capacity(3 * n);
    for t in 0..n {
        for part in BodyPart::ALL {
            out.push(layout.motion_token(part, codes.get(part)[t])?);
        }
    }
    Ok(out)
}

/// Splits interleaved motion ids back into per-part codes.
pub fn deinterleave(layout: &VocabLayout, ids: &[u32]) -> Result<MotionTokens> {
    if ids.len() % 3 != 0 {
        return Err(Error::Shape(format!("{} motion ids is not a whole number of triplets", ids.len())));
    }
    let mut out = MotionTokens::default();
    for (i, &id) in ids.iter().enumerate() {
        let part = part_at(i);
        out.get_mut(part).push(layout.motion_code(part, id)?);
    }
    Ok(out)
}

/// `[BOS][SYS_BEGIN]{upper}{hands}{lower}[SYS_END][USER_BEGIN]{audio}[USER_END][ASSIST_BEGIN]{motion}`,
/// followed by `[ASSIST_END]` when `close` is set. Example tokens are dropped
/// oldest-first until `reserve` further tokens fit in `context`.
pub fn build_prompt(
    layout: &VocabLayout,
    example: &ExamplePrompt,
    audio_units: &[u32],
    motion: &[u32],
    close: bool,
    context: usize,
    reserve: usize,
) -> Result<Prompt> {
    let sp = |s| layout.special(s);
    let fixed = 6 + audio_units.len() + motion.len() + close as usize + reserve;
    if fixed > context {
        return Err(Error::Contract(format!("prompt needs {fixed} tokens without examples, context is {context}")));
    }
    let mut ex = Vec::with_capacity(example.len());
    for part in BodyPart::ALL {
        for &c in &example.tokens[part.index()] {
            ex.push(layout.motion_token(part, c)?);
        }
    }
    let truncated = (fixed + ex.len()).saturating_sub(context);
    let mut tokens = Vec::with_capacity(context);
    tokens.push(sp(Special::Bos)?);
    tokens.push(sp(Special::SysBegin)?);
    tokens.extend_from_slice(&ex[truncated..]);
    tokens.push(sp(Special::SysEnd)?);
    tokens.push(sp(Special::UserBegin)?);
    for &u in audio_units {
        tokens.push(layout.audio_token(u)?);
    }
    tokens.push(sp(Special::UserEnd)?);
    tokens.push(sp(Special::AssistBegin)?);
    let motion_start = tokens.len();
    tokens.extend_from_slice(motion);
    if close {
        tokens.push(sp(Special::AssistEnd)?);
    }
    Ok(Prompt { tokens, motion_start, truncated })
}
