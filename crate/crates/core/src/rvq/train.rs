//! Codec training: straight-through surrogate, EMA codebooks, quantizer dropout.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::codebook::quantize_nearest;
use super::codec::{windows_to_channels, CodecConfig, LossParts, RvqCodec};
use crate::error::{Error, Result};
use crate::motion::{BodyPart, MotionClip};
use crate::nn::{Adam, AdamConfig, LrSchedule, StepDecay};

const LAPLACE_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct CodecStepRecord {
    pub step: usize,
    pub layers_used: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub commitment: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CodecTrainReport {
    pub steps: Vec<CodecStepRecord>,
    /// Total dead-code reseeds across all layers.
    pub reseeded: usize,
}

/// All `window`-frame slices of one part's features, `stride` frames apart.
pub fn part_windows(clips: &[MotionClip], part: BodyPart, window: usize, stride: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for clip in clips {
        let (feat, ch) = clip.part_features(part);
        let frames = clip.frame_count();
        let mut start = 0;
        while start + window <= frames {
            out.push(feat[start * ch..(start + window) * ch].to_vec());
            start += stride.max(1);
        }
    }
    out
}

fn sample_batch<R: Rng>(feats: &[(Vec<f64>, usize)], ch: usize, window: usize, batch: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..batch)
        .map(|_| {
            let (f, frames) = feats.choose(rng).expect("nonempty");
            let start = rng.random_range(0..=frames - window);
            f[start * ch..(start + window) * ch].to_vec()
        })
        .collect()
}

/// Initializes every codebook from the residuals of a first batch.
fn init_codebooks<R: Rng>(codec: &mut RvqCodec, rows: &[f64], rng: &mut R) -> Result<()> {
    let f = codec.latent_dim();
    let m = rows.len() / f;
    let mut residual = rows.to_vec();
    for book in &mut codec.codebooks {
        for k in 0..book.size {
            let i = rng.random_range(0..m);
            for j in 0..f {
                let v = residual[i * f + j] + if k >= m { rng.random_range(-1e-3..1e-3) } else { 0.0 };
                book.entries[k * f + j] = v;
                book.ema_sum[k * f + j] = v;
            }
            book.ema_count[k] = 1.0;
        }
        book.initialized = true;
        for i in 0..m {
            let (_, e) = quantize_nearest(&residual[i * f..(i + 1) * f], book)?;
            let e = e.to_vec();
            for (r, v) in residual[i * f..(i + 1) * f].iter_mut().zip(&e) {
                *r -= v;
            }
        }
    }
    Ok(())
}

/// EMA codebook update over the active layers; returns the number of reseeded entries.
fn ema_update<R: Rng>(
    codec: &mut RvqCodec,
    rows: &[f64],
    targets: &[Vec<f64>],
    codes: &[Vec<u32>],
    rng: &mut R,
) -> usize {
    let f = codec.latent_dim();
    let m = rows.len() / f;
    let decay = codec.config.ema_decay;
    let dead_after = codec.config.dead_code_steps;
    let mut input = rows.to_vec();
    let mut reseeded = 0;
    for (q, layer_codes) in codes.iter().enumerate() {
        let book = &mut codec.codebooks[q];
        let k = book.size;
        let mut counts = vec![0.0; k];
        let mut sums = vec![0.0; k * f];
        for (i, &c) in layer_codes.iter().enumerate() {
            let c = c as usize;
            counts[c] += 1.0;
            for j in 0..f {
                sums[c * f + j] += input[i * f + j];
            }
        }
        for c in 0..k {
            book.ema_count[c] = decay * book.ema_count[c] + (1.0 - decay) * counts[c];
            for j in 0..f {
                book.ema_sum[c * f + j] = decay * book.ema_sum[c * f + j] + (1.0 - decay) * sums[c * f + j];
            }
        }
        let total: f64 = book.ema_count.iter().sum();
        for c in 0..k {
            let smoothed = (book.ema_count[c] + LAPLACE_EPS) / (total + k as f64 * LAPLACE_EPS) * total;
            for j in 0..f {
                book.entries[c * f + j] = book.ema_sum[c * f + j] / smoothed;
            }
            if counts[c] > 0.0 {
                book.usage_counts[c] += counts[c] as u64;
                book.idle_steps[c] = 0;
            } else {
                book.idle_steps[c] += 1;
                if book.idle_steps[c] >= dead_after {
                    let i = rng.random_range(0..m);
                    book.entries[c * f..(c + 1) * f].copy_from_slice(&input[i * f..(i + 1) * f]);
                    book.ema_sum[c * f..(c + 1) * f].copy_from_slice(&input[i * f..(i + 1) * f]);
                    book.ema_count[c] = 1.0;
                    book.idle_steps[c] = 0;
                    reseeded += 1;
                }
            }
        }
        for (x, t) in input.iter_mut().zip(&targets[q]) {
            *x -= t;
        }
    }
    reseeded
}

/// Trains one part's codec on random windows drawn from `clips`.
pub fn train_codec(
    part: BodyPart,
    clips: &[MotionClip],
    config: &CodecConfig,
    seed: u64,
) -> Result<(RvqCodec, CodecTrainReport)> {
    config.validate()?;
    let window = config.window;
    let feats: Vec<(Vec<f64>, usize)> = clips
        .iter()
        .filter(|c| c.frame_count() >= window)
        .map(|c| (c.part_features(part).0, c.frame_count()))
        .collect();
    if feats.is_empty() {
        return Err(Error::Config(format!("no clip has at least {window} frames for codec training")));
    }
    let ch = clips[0].skeleton.part_channels(part).len();
    let mut codec = RvqCodec::new(part, ch, config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    let mut adam = Adam::new(&codec.params, AdamConfig::default());
    let schedule = StepDecay { initial: config.learning_rate, every: config.lr_step_every, factor: config.lr_step_factor };
    let trainable = vec![true; codec.params.count()];
    let mut report = CodecTrainReport::default();
    let batch = config.batch_size;

    for step in 0..config.steps {
        let windows = sample_batch(&feats, ch, window, batch, &mut rng);
        let x = windows_to_channels(&windows, ch, window);
        let rows = codec.encode_latents(&x, batch, window)?;
        if !codec.codebooks[0].initialized {
            init_codebooks(&mut codec, &rows, &mut rng)?;
        }
        let layers_used = if config.quantizer_dropout { rng.random_range(0..=config.residual_layers) } else { config.residual_layers };
        let enc = codec.quantize(&rows, layers_used)?;
        let plan = super::codec::StraightThroughPlan {
            layers_used,
            decode_offset: enc.quantized.iter().zip(&rows).map(|(q, z)| q - z).collect(),
            targets: enc.layer_vectors,
            codes: enc.codes,
        };
        let (loss, grads): (LossParts, _) = codec.loss_and_grad(&x, batch, window, &plan)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!("codec loss diverged at step {step}")));
        }
        let lr = schedule.lr(step as u64);
        adam.update(&mut codec.params, &grads, &trainable, lr);
        report.reseeded += ema_update(&mut codec, &rows, &plan.targets, &plan.codes, &mut rng);
        report.steps.push(CodecStepRecord {
            step,
            layers_used,
            loss: loss.total,
            reconstruction: loss.reconstruction,
            commitment: loss.commitment,
            lr,
        });
    }
    if !codec.params.all_finite() || !codec.codebooks.iter().all(|b| b.is_valid()) {
        return Err(Error::Numeric("codec parameters became non-finite".into()));
    }
    codec.round_to_f32();
    Ok((codec, report))
}
