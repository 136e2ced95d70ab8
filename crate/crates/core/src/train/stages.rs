//! Text pretraining, token-embedding initialisation, speech-to-gesture
//! fine-tuning and example-conditioned training.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::penalty::off_example_penalty_grad;
use super::prompt::{build_prompt, interleave, ExamplePrompt, WINDOW_STEPS, WINDOW_UNITS};
use crate::error::{Error, Result};
use crate::lm::{cross_entropy, ModelConfig, ParamGroup, SeqModel, Special, VocabLayout};
use crate::metrics::{text_perplexity, PERPLEXITY_CHUNK};
use crate::nn::{softmax_row, Adam, AdamConfig, LrSchedule, WarmupCosine};
use crate::rvq::MotionTokens;

/// Audio units between consecutive window starts (2 s).
pub const WINDOW_STRIDE_UNITS: usize = WINDOW_UNITS / 2;
/// Motion timesteps between consecutive window starts (2 s).
pub const WINDOW_STRIDE_STEPS: usize = WINDOW_STEPS / 2;

/// One optimizer step, as written to the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub penalty: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage0Config {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub max_epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    pub warmup_steps: u64,
    pub min_corpus_bytes: usize,
    pub heldout_fraction: f64,
}

impl Stage0Config {
    pub fn desk() -> Self {
        Stage0Config {
            learning_rate: 3e-3,
            batch_size: 16,
            seq_len: 128,
            max_epochs: 30,
            patience: 3,
            warmup_steps: 100,
            min_corpus_bytes: 1 << 20,
            heldout_fraction: 0.05,
        }
    }

    pub fn test() -> Self {
        Stage0Config { max_epochs: 6, min_corpus_bytes: 96 * 1024, heldout_fraction: 0.1, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.seq_len < 2 || self.max_epochs == 0 {
            return Err(Error::Config("stage 0 needs a positive rate, batch, epochs and seq_len >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) || self.heldout_fraction == 0.0 {
            return Err(Error::Config(format!("held-out fraction {} outside (0, 1)", self.heldout_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub stage: u8,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub epochs: usize,
    pub warmup_steps: u64,
    /// Off-example penalty weight.
    pub lambda: f64,
    /// Per-sample drop rates are drawn from `U[0, drop_rate_max]`.
    pub drop_rate_max: f64,
    /// Lets stage 1 run with a trainable backbone, for ablations.
    #[serde(default)]
    pub allow_unfrozen_backbone: bool,
    /// Also update the embedding and output rows of the base (text) vocabulary.
    #[serde(default = "yes")]
    pub train_base_rows: bool,
    /// Weight of an L2 pull of backbone parameters toward their values at the start of the stage.
    #[serde(default)]
    pub backbone_anchor: f64,
}

fn yes() -> bool {
    true
}

impl StageConfig {
    pub fn desk(stage: u8) -> Self {
        let base = StageConfig {
            stage,
            learning_rate: 2e-4,
            batch_size: 8,
            grad_accum: 1,
            epochs: 40,
            warmup_steps: 20,
            lambda: 0.1,
            drop_rate_max: 0.8,
            allow_unfrozen_backbone: false,
            train_base_rows: false,
            backbone_anchor: 10.0,
        };
        match stage {
            1 => StageConfig { learning_rate: 2e-3, epochs: 20, backbone_anchor: 0.0, ..base },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(Error::Config(format!("stage {} is not a fine-tuning stage", self.stage)));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::Config("learning rate, batch size and accumulation must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("penalty weight {} must be >= 0", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.drop_rate_max) {
            return Err(Error::Config(format!("drop rate bound {} outside [0, 1)", self.drop_rate_max)));
        }
        if !(self.backbone_anchor >= 0.0) || !self.backbone_anchor.is_finite() {
            return Err(Error::Config(format!("backbone anchor {} must be >= 0", self.backbone_anchor)));
        }
        Ok(())
    }

    fn effective_batch(&self) -> usize {
        self.batch_size * self.grad_accum
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub steps: Vec<StepRecord>,
    /// Held-out perplexity after each stage-0 epoch.
    pub epoch_perplexity: Vec<f64>,
    pub best_epoch: Option<usize>,
    /// Stage-3 samples whose source set was empty.
    pub empty_example_sets: usize,
}

/// Audio units and motion codes of one paired clip.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairedTokens {
    pub audio: Vec<u32>,
    pub motion: MotionTokens,
}

/// A 4 s training window: 200 units and 30 timesteps per part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenWindow {
    pub audio: Vec<u32>,
    pub motion: MotionTokens,
}

/// Windows starting every 2 s that fit entirely inside the clip.
pub fn token_windows(clip: &PairedTokens) -> Vec<TokenWindow> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let (a0, m0) = (k * WINDOW_STRIDE_UNITS, k * WINDOW_STRIDE_STEPS);
        if a0 + WINDOW_UNITS > clip.audio.len() || m0 + WINDOW_STEPS > clip.motion.len() {
            break;
        }
        let slice = |v: &[u32]| v[m0..m0 + WINDOW_STEPS].to_vec();
        out.push(TokenWindow {
            audio: clip.audio[a0..a0 + WINDOW_UNITS].to_vec(),
            motion: MotionTokens {
                upper: slice(&clip.motion.upper),
                hands: slice(&clip.motion.hands),
                lower: slice(&clip.motion.lower),
                padded_frames: 0,
            },
        });
        k += 1;
    }
    out
}

fn check_windows(windows: &[TokenWindow]) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Data("no paired training windows".into()));
    }
    for (i, w) in windows.iter().enumerate() {
        if w.audio.is_empty() || w.motion.is_empty() {
            return Err(Error::Data(format!("window {i} is missing audio or motion")));
        }
        if w.audio.len() != WINDOW_UNITS || w.motion.len() != WINDOW_STEPS {
            return Err(Error::Data(format!(
                "window {i} has {} units and {} steps, expected {WINDOW_UNITS} and {WINDOW_STEPS}",
                w.audio.len(),
                w.motion.len()
            )));
        }
    }
    Ok(())
}

/// Loss, penalty and parameter gradients for one sample.
#[derive(Debug, Clone)]
pub struct SampleLoss {
    /// Cross-entropy plus the weighted mean penalty.
    pub loss: f64,
    pub cross_entropy: f64,
    /// Off-example mass averaged over supervised positions.
    pub penalty: f64,
    pub empty_set: bool,
    pub grads: Vec<Vec<f64>>,
}

fn next_token_loss(model: &SeqModel, tokens: &[u32]) -> Result<SampleLoss> {
    let n = tokens.len().min(model.config.context);
    if n < 2 {
        return Err(Error::Data("sequence shorter than two tokens".into()));
    }
    let positions: Vec<usize> = (0..n - 1).collect();
    let (logits, cache) = model.forward_at(&tokens[..n], &positions)?;
    let (ce, dlogits) = cross_entropy(&logits, model.vocab_size(), &tokens[1..n]);
    let grads = model.backward(&cache, &dlogits);
    Ok(SampleLoss { loss: ce, cross_entropy: ce, penalty: 0.0, empty_set: false, grads })
}

/// Example-conditioned loss on one window: cross-entropy on the 90 motion
/// targets plus `lambda` times the mean off-example mass at those positions.
pub fn supervised_loss(model: &SeqModel, window: &TokenWindow, example: &ExamplePrompt, lambda: f64) -> Result<SampleLoss> {
    let layout = &model.vocab;
    let motion = interleave(layout, &window.motion)?;
    let prompt = build_prompt(layout, example, &window.audio, &motion, true, model.config.context, 0)?;
    let positions: Vec<usize> = (prompt.motion_start - 1..prompt.motion_start - 1 + motion.len()).collect();
    let (logits, cache) = model.forward_at(&prompt.tokens, &positions)?;
    let (ce, mut dlogits) = cross_entropy(&logits, model.vocab_size(), &motion);
    let n = motion.len() as f64;
    let source = example.source_ids(layout)?;
    let (pen, pgrad) = off_example_penalty_grad(&logits, layout, &source, lambda / n);
    if lambda != 0.0 {
        dlogits.iter_mut().zip(&pgrad).for_each(|(d, p)| *d += p);
    }
    let penalty = pen.value / n;
    let grads = model.backward(&cache, &dlogits);
    Ok(SampleLoss { loss: ce + lambda * penalty, cross_entropy: ce, penalty, empty_set: pen.empty_set, grads })
}

struct Trainer {
    adam: Adam,
    /// Leading vocabulary rows of the embedding and output tables kept fixed.
    frozen_rows: usize,
    anchor: Option<(f64, Vec<(usize, Vec<f64>)>)>,
    schedule: WarmupCosine,
    batch: usize,
    step: u64,
    rng: ChaCha8Rng,
    records: Vec<StepRecord>,
}

impl Trainer {
    fn new(model: &SeqModel, lr: f64, warmup: u64, total: u64, batch: usize, seed: u64) -> Self {
        Trainer {
            adam: Adam::new(&model.params, AdamConfig::default()),
            frozen_rows: 0,
            anchor: None,
            schedule: WarmupCosine { peak: lr, warmup_steps: warmup, total_steps: total, min_ratio: 0.1 },
            batch,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            records: Vec::new(),
        }
    }

    fn configure(&mut self, model: &SeqModel, cfg: &StageConfig) {
        if !cfg.train_base_rows {
            self.frozen_rows = model.vocab.text;
        }
        if cfg.backbone_anchor > 0.0 {
            let snap = model.group_indices(ParamGroup::Backbone).into_iter().map(|i| (i, model.params.params[i].data.clone())).collect();
            self.anchor = Some((cfg.backbone_anchor, snap));
        }
    }

    /// One pass over `n` items in a seeded order. `f` gets the item index and
    /// a per-item seed.
    fn epoch<F>(&mut self, model: &mut SeqModel, n: usize, mut f: F) -> Result<()>
    where
        F: FnMut(&SeqModel, usize, u64) -> Result<SampleLoss>,
    {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let seeds: Vec<u64> = (0..n).map(|_| self.rng.random()).collect();
        let mask = model.trainable_mask();
        for chunk in order.chunks(self.batch) {
            let mut acc = model.params.zeros_like();
            let (mut loss, mut penalty) = (0.0, 0.0);
            for &i in chunk {
                let s = f(model, i, seeds[i])?;
                loss += s.loss;
                penalty += s.penalty;
                for (a, g) in acc.iter_mut().zip(&s.grads) {
                    a.iter_mut().zip(g).for_each(|(a, g)| *a += g);
                }
            }
            let k = chunk.len() as f64;
            acc.iter_mut().flatten().for_each(|g| *g /= k);
            if self.frozen_rows > 0 {
                let d = model.config.d_model;
                for i in model.group_indices(ParamGroup::Embedding).into_iter().chain(model.group_indices(ParamGroup::OutputProjection)) {
                    acc[i][..self.frozen_rows * d].iter_mut().for_each(|g| *g = 0.0);
                }
            }
            if let Some((w, snap)) = &self.anchor {
                for (i, start) in snap {
                    for ((g, p), p0) in acc[*i].iter_mut().zip(&model.params.params[*i].data).zip(start) {
                        *g += w * (p - p0);
                    }
                }
            }
            if !loss.is_finite() || acc.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite loss or gradient at step {}", self.step)));
            }
            let lr = self.schedule.lr(self.step);
            self.adam.update(&mut model.params, &acc, &mask, lr);
            self.records.push(StepRecord { step: self.step, loss: loss / k, penalty: penalty / k, lr });
            self.step += 1;
        }
        Ok(())
    }
}

fn steps_per_epoch(n: usize, batch: usize) -> u64 {
    n.div_ceil(batch) as u64
}

/// Splits off the trailing held-out fraction at a byte boundary.
pub fn split_corpus(text: &[u8], heldout_fraction: f64) -> (&[u8], &[u8]) {
    let cut = text.len() - ((text.len() as f64 * heldout_fraction) as usize).min(text.len());
    text.split_at(cut)
}

/// Next-byte pretraining until held-out perplexity stops improving for
/// `patience` epochs. Returns the best epoch's parameters.
pub fn stage0_pretrain(corpus: &str, model_cfg: ModelConfig, cfg: &Stage0Config, seed: u64) -> Result<(SeqModel, StageReport)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("text corpus is empty".into()));
    }
    if corpus.len() < cfg.min_corpus_bytes {
        return Err(Error::Config(format!("corpus has {} bytes, need at least {}", corpus.len(), cfg.min_corpus_bytes)));
    }
    let (train, heldout) = split_corpus(corpus.as_bytes(), cfg.heldout_fraction);
    let seq_len = cfg.seq_len.min(model_cfg.context);
    let chunks: Vec<Vec<u32>> = train.chunks_exact(seq_len).map(|c| c.iter().map(|&b| b as u32).collect()).collect();
    let mut model = SeqModel::new(model_cfg, VocabLayout::text_only(), seed)?;
    let total = steps_per_epoch(chunks.len(), cfg.batch_size) * cfg.max_epochs as u64;
    let mut trainer = Trainer::new(&model, cfg.learning_rate, cfg.warmup_steps, total, cfg.batch_size, seed ^ 0x5151);
    let mut report = StageReport::default();
    let mut best = (f64::INFINITY, model.clone(), 0);
    for epoch in 0..cfg.max_epochs {
        trainer.epoch(&mut model, chunks.len(), |m, i, _| next_token_loss(m, &chunks[i]))?;
        let ppl = text_perplexity(&model, heldout, PERPLEXITY_CHUNK)?;
        report.epoch_perplexity.push(ppl);
        if ppl < best.0 {
            best = (ppl, model.clone(), epoch);
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    report.steps = trainer.records;
    report.best_epoch = Some(best.2);
    let mut model = best.1;
    model.round_to_f32();
    Ok((model, report))
}

/// `[BOS]` followed by the audio units as vocabulary ids.
pub fn audio_stream(layout: &VocabLayout, units: &[u32]) -> Result<Vec<u32>> {
    let mut out = vec![layout.special(Special::Bos)?];
    for &u in units {
        out.push(layout.audio_token(u)?);
    }
    Ok(out)
}

/// `[BOS]` followed by interleaved motion triplets.
pub fn motion_stream(layout: &VocabLayout, codes: &MotionTokens) -> Result<Vec<u32>> {
    let mut out = vec![layout.special(Special::Bos)?];
    out.extend(interleave(layout, codes)?);
    Ok(out)
}

/// Unconditional next-token training on audio-only and motion-only streams.
/// Requires a frozen backbone unless the config opts out.
pub fn stage1_embed_init(
    mut model: SeqModel,
    audio: &[Vec<u32>],
    motion: &[MotionTokens],
    cfg: &StageConfig,
    seed: u64,
) -> Result<(SeqModel, StageReport)> {
    cfg.validate()?;
    if !model.vocab.specials || model.vocab.audio == 0 || model.vocab.motion == 0 {
        return Err(Error::Layout("stage 1 needs a vocabulary extended with audio and motion tokens".into()));
    }
    if !model.is_frozen(ParamGroup::Backbone) && !cfg.allow_unfrozen_backbone {
        return Err(Error::Contract("stage 1 requires the backbone to be frozen".into()));
    }
    let mut seqs = Vec::with_capacity(audio.len() + motion.len());
    for a in audio {
        seqs.push(audio_stream(&model.vocab, a)?);
    }
    for m in motion {
        seqs.push(motion_stream(&model.vocab, m)?);
    }
    seqs.retain(|s| s.len() >= 2);
    if seqs.is_empty() {
        return Err(Error::Data("no audio or motion streams for stage 1".into()));
    }
    let total = steps_per_epoch(seqs.len(), cfg.effective_batch()) * cfg.epochs as u64;
    let mut trainer = Trainer::new(&model, cfg.learning_rate, cfg.warmup_steps, total, cfg.effective_batch(), seed);
    trainer.configure(&model, cfg);
    for _ in 0..cfg.epochs {
        trainer.epoch(&mut model, seqs.len(), |m, i, _| next_token_loss(m, &seqs[i]))?;
    }
    model.round_to_f32();
    Ok((model, StageReport { steps: trainer.records, ..Default::default() }))
}

/// Mean next-token loss over streams, without updates.
pub fn stream_loss(model: &SeqModel, streams: &[Vec<u32>]) -> Result<f64> {
    let mut total = 0.0;
    for s in streams {
        let n = s.len().min(model.config.context);
        let positions: Vec<usize> = (0..n - 1).collect();
        let (logits, _) = model.forward_at(&s[..n], &positions)?;
        total += cross_entropy(&logits, model.vocab_size(), &s[1..n]).0;
    }
    Ok(total / streams.len().max(1) as f64)
}

/// Audio-conditioned motion generation with an empty example segment.
pub fn stage2_s2g(mut model: SeqModel, windows: &[TokenWindow], cfg: &StageConfig, seed: u64) -> Result<(SeqModel, StageReport)> {
    cfg.validate()?;
    check_windows(windows)?;
    let total = steps_per_epoch(windows.len(), cfg.effective_batch()) * cfg.epochs as u64;
    let mut trainer = Trainer::new(&model, cfg.learning_rate, cfg.warmup_steps, total, cfg.effective_batch(), seed);
    trainer.configure(&model, cfg);
    let empty = ExamplePrompt::empty();
    for _ in 0..cfg.epochs {
        trainer.epoch(&mut model, windows.len(), |m, i, _| supervised_loss(m, &windows[i], &empty, 0.0))?;
    }
    model.round_to_f32();
    Ok((model, StageReport { steps: trainer.records, ..Default::default() }))
}

/// Example-conditioned training; each sample's prompt is rebuilt every epoch
/// with a fresh drop rate and shuffle.
pub fn stage3_example_train(
    mut model: SeqModel,
    windows: &[TokenWindow],
    cfg: &StageConfig,
    seed: u64,
) -> Result<(SeqModel, StageReport)> {
    cfg.validate()?;
    check_windows(windows)?;
    let total = steps_per_epoch(windows.len(), cfg.effective_batch()) * cfg.epochs as u64;
    let mut trainer = Trainer::new(&model, cfg.learning_rate, cfg.warmup_steps, total, cfg.effective_batch(), seed);
    trainer.configure(&model, cfg);
    let mut empty_sets = 0;
    for _ in 0..cfg.epochs {
        trainer.epoch(&mut model, windows.len(), |m, i, s| {
            let ex = training_example(&windows[i], cfg.drop_rate_max, s)?;
            let out = supervised_loss(m, &windows[i], &ex, cfg.lambda)?;
            empty_sets += out.empty_set as usize;
            Ok(out)
        })?;
    }
    model.round_to_f32();
    Ok((model, StageReport { steps: trainer.records, empty_example_sets: empty_sets, ..Default::default() }))
}

/// The window's own codes as an example, with a drop rate from `U[0, max]`.
pub fn training_example(window: &TokenWindow, drop_rate_max: f64, seed: u64) -> Result<ExamplePrompt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = if drop_rate_max > 0.0 { rng.random_range(0.0..drop_rate_max) } else { 0.0 };
    ExamplePrompt::build(&window.motion, rate, rng.random())
}

/// Mean cross-entropy on the motion targets, with optional examples built at
/// `drop_rate` from each window's own codes.
pub fn motion_loss(model: &SeqModel, windows: &[TokenWindow], example_drop: Option<f64>, seed: u64) -> Result<f64> {
    check_windows(windows)?;
    let mut total = 0.0;
    for (i, w) in windows.iter().enumerate() {
        let ex = match example_drop {
            Some(r) => ExamplePrompt::build(&w.motion, r, seed.wrapping_add(i as u64))?,
            None => ExamplePrompt::empty(),
        };
        total += eval_prompt(model, w, &ex)?.0;
    }
    Ok(total / windows.len() as f64)
}

/// Mean predictive mass on the example's source tokens at motion positions.
pub fn example_mass(model: &SeqModel, windows: &[TokenWindow], drop_rate: f64, seed: u64) -> Result<f64> {
    check_windows(windows)?;
    let mut total = 0.0;
    for (i, w) in windows.iter().enumerate() {
        let ex = ExamplePrompt::build(&w.motion, drop_rate, seed.wrapping_add(i as u64))?;
        total += eval_prompt(model, w, &ex)?.1;
    }
    Ok(total / windows.len() as f64)
}

/// Cross-entropy and mean source-set mass for one window, forward only.
fn eval_prompt(model: &SeqModel, window: &TokenWindow, example: &ExamplePrompt) -> Result<(f64, f64)> {
    let layout = &model.vocab;
    let motion = interleave(layout, &window.motion)?;
    let prompt = build_prompt(layout, example, &window.audio, &motion, true, model.config.context, 0)?;
    let positions: Vec<usize> = (prompt.motion_start - 1..prompt.motion_start - 1 + motion.len()).collect();
    let (logits, _) = model.forward_at(&prompt.tokens, &positions)?;
    let v = model.vocab_size();
    let (ce, _) = cross_entropy(&logits, v, &motion);
    let source: BTreeSet<u32> = example.source_ids(layout)?;
    let mass: f64 = logits
        .chunks_exact(v)
        .map(|row| {
            let p = softmax_row(row);
            source.iter().map(|&k| p[k as usize]).sum::<f64>()
        })
        .sum();
    Ok((ce, mass / motion.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_layout() -> VocabLayout {
        VocabLayout { text: 8, audio: 6, motion: 5, specials: true }
    }

    fn toy_model(seed: u64) -> SeqModel {
        let cfg = ModelConfig { d_model: 16, layers: 1, heads: 2, d_ff: 24, context: 400 };
        SeqModel::new(cfg, toy_layout(), seed).unwrap()
    }

    fn toy_window(seed: u64) -> TokenWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut codes = || (0..WINDOW_STEPS).map(|_| rng.random_range(0..3)).collect::<Vec<u32>>();
        let motion = MotionTokens { upper: codes(), hands: codes(), lower: codes(), padded_frames: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        TokenWindow { audio: (0..WINDOW_UNITS).map(|_| rng.random_range(0..6)).collect(), motion }
    }

    #[test]
    fn windows_start_every_two_seconds() {
        let clip = PairedTokens {
            audio: vec![0; 350],
            motion: MotionTokens { upper: vec![0; 53], hands: vec![0; 53], lower: vec![0; 53], padded_frames: 0 },
        };
        let w = token_windows(&clip);
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|w| w.audio.len() == WINDOW_UNITS && w.motion.len() == WINDOW_STEPS));
    }

    #[test]
    fn stage1_requires_frozen_backbone() {
        let m = toy_model(1);
        let cfg = StageConfig { epochs: 1, ..StageConfig::desk(1) };
        let err = stage1_embed_init(m.clone(), &[vec![1, 2, 3]], &[], &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let mut frozen = m.clone();
        frozen.freeze(&[ParamGroup::Backbone]);
        let (out, _) = stage1_embed_init(frozen, &[vec![1, 2, 3]], &[toy_window(1).motion], &cfg, 0).unwrap();
        for i in m.group_indices(ParamGroup::Backbone) {
            let mut before = m.params.params[i].clone();
            before.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
            assert_eq!(out.params.params[i], before);
        }
        assert_ne!(out.params.params[0], m.params.params[0]);
        let d = m.config.d_model;
        for g in [ParamGroup::Embedding, ParamGroup::OutputProjection] {
            for i in m.group_indices(g) {
                let base: Vec<f64> = m.params.params[i].data[..8 * d].iter().map(|&v| v as f32 as f64).collect();
                assert_eq!(out.params.params[i].data[..8 * d], base[..]);
                assert_ne!(out.params.params[i].data[8 * d..], m.params.params[i].data[8 * d..]);
            }
        }
    }

    #[test]
    fn stage3_rejects_negative_lambda_and_stage2_rejects_empty_windows() {
        let cfg = StageConfig { lambda: -0.1, ..StageConfig::desk(3) };
        assert!(matches!(stage3_example_train(toy_model(1), &[toy_window(1)], &cfg, 0), Err(Error::Config(_))));
        let bad = TokenWindow { audio: vec![], motion: toy_window(1).motion };
        assert!(matches!(stage2_s2g(toy_model(1), &[bad], &StageConfig::desk(2), 0), Err(Error::Data(_))));
    }

    #[test]
    fn zero_lambda_is_plain_cross_entropy() {
        let m = toy_model(2);
        let w = toy_window(3);
        let ex = training_example(&w, 0.5, 7).unwrap();
        let a = supervised_loss(&m, &w, &ex, 0.0).unwrap();
        assert_eq!(a.loss, a.cross_entropy);
        assert!(a.penalty > 0.0);
        let b = supervised_loss(&m, &w, &ex, 0.1).unwrap();
        assert_eq!(a.cross_entropy, b.cross_entropy);
        assert_ne!(a.grads, b.grads);
    }

    #[test]
    fn supervised_gradient_matches_finite_differences() {
        let m = toy_model(5);
        let w = toy_window(6);
        let ex = training_example(&w, 0.5, 11).unwrap();
        let lambda = 0.1;
        let s = supervised_loss(&m, &w, &ex, lambda).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for _ in 0..30 {
            let pi = rng.random_range(0..m.params.params.len());
            let j = rng.random_range(0..m.params.params[pi].data.len());
            let mut a = m.clone();
            a.params.params[pi].data[j] += h;
            let mut b = m.clone();
            b.params.params[pi].data[j] -= h;
            let fd = (supervised_loss(&a, &w, &ex, lambda).unwrap().loss - supervised_loss(&b, &w, &ex, lambda).unwrap().loss) / (2.0 * h);
            let an = s.grads[pi][j];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {pi}[{j}]: {an} vs {fd}");
        }
    }

    #[test]
    fn stage2_is_deterministic_and_learns() {
        let windows: Vec<TokenWindow> = (0..4).map(toy_window).collect();
        let cfg = StageConfig { epochs: 8, batch_size: 2, learning_rate: 5e-3, ..StageConfig::desk(2) };
        let m = toy_model(4);
        let before = motion_loss(&m, &windows, None, 0).unwrap();
        let (a, ra) = stage2_s2g(m.clone(), &windows, &cfg, 3).unwrap();
        let (b, _) = stage2_s2g(m, &windows, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.steps.len(), 16);
        assert!(motion_loss(&a, &windows, None, 0).unwrap() < before);
    }

    fn backbone_shift(a: &SeqModel, b: &SeqModel) -> f64 {
        a.group_indices(ParamGroup::Backbone)
            .into_iter()
            .flat_map(|i| a.params.params[i].data.iter().zip(&b.params.params[i].data).map(|(x, y)| (x - y).powi(2)))
            .sum()
    }

    #[test]
    fn anchor_limits_backbone_drift_and_base_rows_stay_fixed() {
        let windows: Vec<TokenWindow> = (0..4).map(toy_window).collect();
        let m = toy_model(5);
        let free = StageConfig { epochs: 4, batch_size: 2, learning_rate: 5e-3, backbone_anchor: 0.0, ..StageConfig::desk(2) };
        let held = StageConfig { backbone_anchor: 50.0, ..free };
        let (a, _) = stage2_s2g(m.clone(), &windows, &free, 1).unwrap();
        let (b, _) = stage2_s2g(m.clone(), &windows, &held, 1).unwrap();
        assert!(backbone_shift(&b, &m) < backbone_shift(&a, &m));
        let d = m.config.d_model;
        for i in [0, m.params.params.len() - 1] {
            let base: Vec<f64> = m.params.params[i].data[..8 * d].iter().map(|&v| v as f32 as f64).collect();
            assert_eq!(a.params.params[i].data[..8 * d], base[..]);
        }
        assert!(StageConfig { backbone_anchor: -1.0, ..free }.validate().is_err());
    }
}
