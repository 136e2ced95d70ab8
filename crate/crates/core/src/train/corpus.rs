//! Deterministic English-like text for pretraining the base model.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DETS: &[&str] = &["the", "a", "every", "one", "that", "this", "some", "no"];
const ADJS: &[&str] = &[
    "quiet", "bright", "small", "old", "green", "heavy", "quick", "gentle", "strange", "warm", "cold", "tall",
    "narrow", "young", "clever", "tired", "distant", "early", "silver", "broken",
];
const NOUNS: &[&str] = &[
    "river", "teacher", "garden", "window", "dog", "city", "letter", "mountain", "friend", "storm", "engine", "story",
    "child", "market", "bridge", "forest", "song", "kitchen", "doctor", "island", "painter", "road", "machine", "house",
];
const VERBS: &[&str] = &[
    "watched", "found", "carried", "opened", "followed", "painted", "crossed", "remembered", "built", "heard",
    "visited", "answered", "moved", "lifted", "described", "noticed",
];
const INTRANS: &[&str] = &["slept", "waited", "laughed", "arrived", "vanished", "rested", "sang", "listened", "returned"];
const ADVS: &[&str] = &["slowly", "again", "today", "quietly", "at last", "without a word", "before dawn", "in the rain"];
const PREPS: &[&str] = &["near", "behind", "under", "across", "beside", "toward", "inside"];
const CONJ: &[&str] = &["and", "but", "because", "while", "so"];

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("nonempty")
}

fn noun_phrase<R: Rng>(rng: &mut R) -> String {
    if rng.random_bool(0.5) {
        format!("{} {} {}", pick(rng, DETS), pick(rng, ADJS), pick(rng, NOUNS))
    } else {
        format!("{} {}", pick(rng, DETS), pick(rng, NOUNS))
    }
}

fn clause<R: Rng>(rng: &mut R) -> String {
    let subject = noun_phrase(rng);
    let mut s = match rng.random_range(0..3) {
        0 => format!("{subject} {} {}", pick(rng, VERBS), noun_phrase(rng)),
        1 => format!("{subject} {}", pick(rng, INTRANS)),
        _ => format!("{subject} {} {} {}", pick(rng, INTRANS), pick(rng, PREPS), noun_phrase(rng)),
    };
    if rng.random_bool(0.3) {
        s.push(' ');
        s.push_str(pick(rng, ADVS));
    }
    s
}

fn sentence<R: Rng>(rng: &mut R) -> String {
    let mut s = clause(rng);
    if rng.random_bool(0.35) {
        s = format!("{s} {} {}", pick(rng, CONJ), clause(rng));
    }
    let mut c = s.chars();
    let first = c.next().map(|f| f.to_ascii_uppercase()).unwrap_or(' ');
    let end = if rng.random_bool(0.1) { "?" } else { "." };
    format!("{first}{}{end}", c.as_str())
}

/// At least `min_bytes` of text in paragraphs of 3 to 6 sentences.
pub fn text_corpus(seed: u64, min_bytes: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(min_bytes + 256);
    while out.len() < min_bytes {
        let n = rng.random_range(3..=6);
        let para: Vec<String> = (0..n).map(|_| sentence(&mut rng)).collect();
        out.push_str(&para.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_ascii_of_requested_size() {
        let a = text_corpus(3, 5000);
        assert!(a.len() >= 5000);
        assert!(a.is_ascii());
        assert_eq!(a, text_corpus(3, 5000));
        assert_ne!(a, text_corpus(4, 5000));
    }
}
