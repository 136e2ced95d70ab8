use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::BodyPart;

pub const TEXT_VOCAB: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Special {
    Bos,
    Eos,
    SysBegin,
    SysEnd,
    UserBegin,
    UserEnd,
    AssistBegin,
    AssistEnd,
    Pad,
}

impl Special {
    pub const ALL: [Special; 9] = [
        Special::Bos,
        Special::Eos,
        Special::SysBegin,
        Special::SysEnd,
        Special::UserBegin,
        Special::UserEnd,
        Special::AssistBegin,
        Special::AssistEnd,
        Special::Pad,
    ];

    fn offset(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("listed")
    }
}

/// Token id layout: text bytes, audio units, upper, hands and lower codes,
/// then the special tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VocabLayout {
    pub text: usize,
    pub audio: usize,
    /// Codes per motion part.
    pub motion: usize,
    pub specials: bool,
}

impl VocabLayout {
    /// The base language model's byte vocabulary.
    pub fn text_only() -> Self {
        VocabLayout { text: TEXT_VOCAB, audio: 0, motion: 0, specials: false }
    }

    pub fn extended(audio: usize, motion: usize) -> Self {
        VocabLayout { text: TEXT_VOCAB, audio, motion, specials: true }
    }

    pub fn size(&self) -> usize {
        self.text + self.audio + 3 * self.motion + if self.specials { Special::ALL.len() } else { 0 }
    }

    pub fn text_range(&self) -> Range<usize> {
        0..self.text
    }

    pub fn audio_range(&self) -> Range<usize> {
        self.text..self.text + self.audio
    }

    pub fn motion_range(&self, part: BodyPart) -> Range<usize> {
        let start = self.text + self.audio + part.index() * self.motion;
        start..start + self.motion
    }

    /// All three motion ranges, which are contiguous.
    pub fn all_motion_range(&self) -> Range<usize> {
        let start = self.text + self.audio;
        start..start + 3 * self.motion
    }

    pub fn special_range(&self) -> Range<usize> {
        let start = self.text + self.audio + 3 * self.motion;
        start..self.size()
    }

    pub fn special(&self, s: Special) -> Result<u32> {
        if !self.specials {
            return Err(Error::Layout("layout has no special tokens".into()));
        }
        Ok((self.special_range().start + s.offset()) as u32)
    }

    pub fn audio_token(&self, unit: u32) -> Result<u32> {
        if unit as usize >= self.audio {
            return Err(Error::Vocab { token: unit, vocab: self.audio });
        }
        Ok((self.text + unit as usize) as u32)
    }

    pub fn motion_token(&self, part: BodyPart, code: u32) -> Result<u32> {
        if code as usize >= self.motion {
            return Err(Error::InvalidCode { code: code as usize, size: self.motion });
        }
        Ok((self.motion_range(part).start + code as usize) as u32)
    }

    /// Inverse of [`motion_token`] for the given part.
    pub fn motion_code(&self, part: BodyPart, token: u32) -> Result<u32> {
        let r = self.motion_range(part);
        if !r.contains(&(token as usize)) {
            return Err(Error::Vocab { token, vocab: self.size() });
        }
        Ok((token as usize - r.start) as u32)
    }

    pub fn part_of(&self, token: u32) -> Option<BodyPart> {
        BodyPart::ALL.into_iter().find(|&p| self.motion_range(p).contains(&(token as usize)))
    }

    /// Named ranges in id order.
    pub fn ranges(&self) -> Vec<(&'static str, Range<usize>)> {
        vec![
            ("text", self.text_range()),
            ("audio", self.audio_range()),
            ("upper", self.motion_range(BodyPart::Upper)),
            ("hands", self.motion_range(BodyPart::Hands)),
            ("lower", self.motion_range(BodyPart::Lower)),
            ("special", self.special_range()),
        ]
    }

    /// Whether `self` keeps every id of `base` at the same meaning.
    pub fn extends(&self, base: &VocabLayout) -> bool {
        if self == base {
            return true;
        }
        base.text == self.text && base.audio == 0 && base.motion == 0 && !base.specials
    }
}

/// Rejects overlapping ranges.
pub fn check_disjoint(ranges: &[Range<usize>]) -> Result<()> {
    for (i, a) in ranges.iter().enumerate() {
        for b in &ranges[i + 1..] {
            if a.start < b.end && b.start < a.end {
                return Err(Error::Layout(format!("ranges {a:?} and {b:?} overlap")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_partition_the_vocab() {
        let v = VocabLayout::extended(100, 128);
        let mut next = 0;
        for (_, r) in v.ranges() {
            assert_eq!(r.start, next);
            next = r.end;
        }
        assert_eq!(next, v.size());
        assert_eq!(v.size(), 256 + 100 + 384 + 9);
        check_disjoint(&v.ranges().into_iter().map(|(_, r)| r).collect::<Vec<_>>()).unwrap();
    }

    #[test]
    fn token_round_trip() {
        let v = VocabLayout::extended(10, 8);
        for p in BodyPart::ALL {
            let t = v.motion_token(p, 5).unwrap();
            assert_eq!(v.part_of(t), Some(p));
            assert_eq!(v.motion_code(p, t).unwrap(), 5);
        }
        assert!(v.motion_token(BodyPart::Upper, 8).is_err());
        assert!(v.audio_token(10).is_err());
        assert!(VocabLayout::text_only().special(Special::Bos).is_err());
    }

    #[test]
    fn overlap_rejected() {
        assert!(matches!(check_disjoint(&[0..10, 5..12]), Err(Error::Layout(_))));
    }
}
