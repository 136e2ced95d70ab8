//! Example-biased decoding of motion tokens.

mod generate;

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{SeqModel, VocabLayout};
use crate::motion::BodyPart;
use crate::train::ExamplePrompt;

pub use generate::{
    generate_long, generate_segment, initial_pose_codes, window_count, LongGeneration, Segment, WindowRecord, LONG_STRIDE_STEPS,
    LONG_STRIDE_UNITS, OVERLAP_STEPS, OVERLAP_UNITS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingMode {
    Greedy,
    Temperature { temperature: f64 },
    TopK { k: usize, temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub beta: f64,
    pub gamma: f64,
    pub mode: SamplingMode,
    pub seed: u64,
    /// Deduplicate user-supplied example codes before prompting.
    #[serde(default = "yes")]
    pub dedup_examples: bool,
}

fn yes() -> bool {
    true
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { beta: 5.0, gamma: 0.9, mode: SamplingMode::Greedy, seed: 0, dedup_examples: true }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        match self.mode {
            SamplingMode::Greedy => {}
            SamplingMode::Temperature { temperature } | SamplingMode::TopK { temperature, .. } if !(temperature > 0.0) => {
                return Err(Error::Config(format!("temperature {temperature} must be positive")));
            }
            SamplingMode::TopK { k: 0, .. } => return Err(Error::Config("top-k needs k >= 1".into())),
            _ => {}
        }
        Ok(())
    }
}

/// Per-generation bookkeeping: example ids per part and how often each
/// motion token has been sampled so far.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub example: [BTreeSet<u32>; 3],
    counts: BTreeMap<u32, u32>,
    emitted: Vec<u32>,
    rng: ChaCha8Rng,
}

impl SamplerState {
    pub fn new(example: [BTreeSet<u32>; 3], seed: u64) -> Self {
        SamplerState { example, counts: BTreeMap::new(), emitted: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Example ids are the tokens present in the prompt.
    pub fn from_example(layout: &VocabLayout, example: &ExamplePrompt, seed: u64) -> Result<Self> {
        let ids = [
            example.prompt_ids(layout, BodyPart::ALL[0])?,
            example.prompt_ids(layout, BodyPart::ALL[1])?,
            example.prompt_ids(layout, BodyPart::ALL[2])?,
        ];
        Ok(Self::new(ids, seed))
    }

    pub fn count(&self, token: u32) -> u32 {
        self.counts.get(&token).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<u32, u32> {
        &self.counts
    }

    /// Sampled tokens in order.
    pub fn emitted(&self) -> &[u32] {
        &self.emitted
    }

    pub fn record(&mut self, token: u32) {
        *self.counts.entry(token).or_insert(0) += 1;
        self.emitted.push(token);
    }

    pub fn all_example_ids(&self) -> BTreeSet<u32> {
        self.example.iter().flatten().copied().collect()
    }
}

/// Adds `beta` to in-range example tokens and decays them by `gamma^count`;
/// everything outside the active part's range becomes `-inf`.
///
/// The decay is taken relative to `m = min(0, min in-range logit)`, i.e.
/// `m + (z - m + beta) * gamma^t`, so it never lifts a negative logit.
pub fn adjust_logits(logits: &[f64], state: &SamplerState, cfg: &SamplerConfig, layout: &VocabLayout, part: BodyPart) -> Vec<f64> {
    let range = layout.motion_range(part);
    let mut out = vec![f64::NEG_INFINITY; logits.len()];
    let m = logits[range.clone()].iter().copied().fold(0.0f64, f64::min);
    for k in range {
        let z = logits[k];
        out[k] = if state.example[part.index()].contains(&(k as u32)) {
            match state.count(k as u32) {
                0 => z + cfg.beta,
                t => m + (z - m + cfg.beta) * cfg.gamma.powi(t as i32),
            }
        } else {
            z
        };
    }
    out
}

/// Draws a token from adjusted logits. Greedy ties go to the lowest id.
pub fn choose(adjusted: &[f64], mode: SamplingMode, rng: &mut ChaCha8Rng) -> Result<u32> {
    let finite: Vec<usize> = (0..adjusted.len()).filter(|&i| adjusted[i].is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Contract("every logit is masked".into()));
    }
    let argmax = || finite.iter().copied().fold(finite[0], |b, i| if adjusted[i] > adjusted[b] { i } else { b });
    let (cands, t): (Vec<usize>, f64) = match mode {
        SamplingMode::Greedy => return Ok(argmax() as u32),
        SamplingMode::Temperature { temperature } => (finite, temperature),
        SamplingMode::TopK { k, temperature } => {
            let mut c = finite;
            c.sort_by(|&a, &b| adjusted[b].total_cmp(&adjusted[a]).then(a.cmp(&b)));
            c.truncate(k.max(1));
            (c, temperature)
        }
    };
    let mx = cands.iter().map(|&i| adjusted[i]).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = cands.iter().map(|&i| ((adjusted[i] - mx) / t).exp()).collect();
    let dist = WeightedIndex::new(&w).map_err(|e| Error::Numeric(format!("sampling weights: {e}")))?;
    Ok(cands[dist.sample(rng)] as u32)
}

/// Adjusts, samples and records one token for `part`.
pub fn sample_logits(logits: &[f64], state: &mut SamplerState, cfg: &SamplerConfig, layout: &VocabLayout, part: BodyPart) -> Result<u32> {
    let adjusted = adjust_logits(logits, state, cfg, layout, part);
    let tok = choose(&adjusted, cfg.mode, &mut state.rng)?;
    state.record(tok);
    Ok(tok)
}

/// Runs the full context through the model and samples the next token.
pub fn sample_step(model: &SeqModel, context: &[u32], state: &mut SamplerState, cfg: &SamplerConfig, part: BodyPart) -> Result<u32> {
    if context.is_empty() {
        return Err(Error::Contract("sampling needs a nonempty context".into()));
    }
    let (logits, _) = model.forward_at(context, &[context.len() - 1])?;
    sample_logits(&logits, state, cfg, &model.vocab, part)
}

/// Fraction of `tokens` that belong to `example`.
pub fn example_adherence(tokens: &[u32], example: &BTreeSet<u32>) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    tokens.iter().filter(|t| example.contains(t)).count() as f64 / tokens.len() as f64
}

/// Shannon entropy (nats) of the usage histogram over example tokens.
pub fn example_usage_entropy(tokens: &[u32], example: &BTreeSet<u32>) -> f64 {
    let mut hist: BTreeMap<u32, usize> = BTreeMap::new();
    for t in tokens.iter().filter(|t| example.contains(t)) {
        *hist.entry(*t).or_insert(0) += 1;
    }
    let n: usize = hist.values().sum();
    if n == 0 {
        return 0.0;
    }
    hist.values().map(|&c| c as f64 / n as f64).map(|p| -p * p.ln()).sum()
}
