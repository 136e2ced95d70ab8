//! Synthetic paired speech/motion corpus.
//!
//! Each sample has a sequence of audio beats (short loud bursts over quiet
//! babble). Upper-body joints swing between alternating extremes and come to
//! rest exactly on every beat, so gesture beats (angular-speed minima) line up
//! with the audio. Hands and lower-body joints carry per-style sinusoids whose
//! frequency band identifies the style.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clip::{pose_dim, BodyPart, MotionClip, Skeleton};
use super::rotation::{axis_angle, rot6d_from_matrix};
use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub skeleton: Skeleton,
    pub styles: usize,
    pub frame_rate: f32,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 64,
            min_duration: 6.0,
            max_duration: 10.0,
            skeleton: Skeleton::default(),
            styles: 2,
            frame_rate: 30.0,
            sample_rate: 16_000,
        }
    }
}

/// Minimum and maximum spacing between consecutive beats, seconds.
pub const BEAT_GAP: (f64, f64) = (0.4, 1.2);

/// Frequency band (Hz) of the sinusoids that mark style `s`.
pub fn style_band(style: usize) -> (f64, f64) {
    let lo = 1.0 + 1.5 * style as f64;
    (lo, lo + 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub style_id: usize,
    pub motion: MotionClip,
    pub waveform: Waveform,
    pub beat_times: Vec<f64>,
}

impl PairedSample {
    pub fn duration(&self) -> f64 {
        self.motion.duration()
    }
}

fn validate(config: &SynthConfig) -> Result<()> {
    if config.skeleton.joints() == 0 {
        return Err(Error::Config("skeleton has no joints".into()));
    }
    if !(config.min_duration > 0.0) || config.max_duration < config.min_duration {
        return Err(Error::Config(format!(
            "invalid duration range [{}, {}]",
            config.min_duration, config.max_duration
        )));
    }
    if config.styles == 0 || !(config.frame_rate > 0.0) || config.sample_rate == 0 {
        return Err(Error::Config("styles, frame rate and sample rate must be positive".into()));
    }
    Ok(())
}

/// Deterministic in `(seed, config)`.
pub fn synth_generate(seed: u64, config: &SynthConfig) -> Result<Vec<PairedSample>> {
    validate(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes = joint_axes(config.skeleton.joints(), seed);
    (0..config.count)
        .map(|i| {
            let sample_seed: u64 = rng.random();
            generate_one(i, sample_seed, config, &axes)
        })
        .collect()
}

fn joint_axes(joints: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a7e5);
    (0..joints)
        .map(|_| loop {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.3 {
                break v.normalize();
            }
        })
        .collect()
}

fn beat_times<R: Rng>(duration: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = rng.random_range(0.3..0.7);
    while t < duration - 0.2 {
        out.push(t);
        t += rng.random_range(BEAT_GAP.0..BEAT_GAP.1);
    }
    out
}

/// Alternating half-cosine swing that is stationary at every anchor.
fn swing(t: f64, anchors: &[f64]) -> f64 {
    let k = match anchors.iter().rposition(|&a| a <= t) {
        Some(k) if k + 1 < anchors.len() => k,
        Some(k) => return if k % 2 == 0 { 1.0 } else { -1.0 },
        None => return 1.0,
    };
    let (a, b) = (anchors[k], anchors[k + 1]);
    let u = ((t - a) / (b - a)).clamp(0.0, 1.0);
    let from = if k % 2 == 0 { 1.0 } else { -1.0 };
    from * (std::f64::consts::PI * u).cos()
}

struct Sinusoid {
    amp: f64,
    freq: f64,
    phase: f64,
}

fn generate_one(index: usize, seed: u64, config: &SynthConfig, axes: &[Vector3<f64>]) -> Result<PairedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sk = config.skeleton;
    let fps = config.frame_rate as f64;
    let style = rng.random_range(0..config.styles);
    let raw = rng.random_range(config.min_duration..=config.max_duration);
    let frames = ((raw * fps).round() as usize).max(1);
    let duration = frames as f64 / fps;
    let beats = beat_times(duration, &mut rng);

    let mut anchors = Vec::with_capacity(beats.len() + 2);
    anchors.push(0.0);
    anchors.extend(&beats);
    anchors.push(duration);

    let upper = sk.joint_range(BodyPart::Upper);
    let amps: Vec<f64> = (0..sk.joints())
        .map(|j| if upper.contains(&j) { rng.random_range(0.25..0.5) } else { 0.0 })
        .collect();
    let (lo, hi) = style_band(style);
    let styled: Vec<Option<Sinusoid>> = (0..sk.joints())
        .map(|j| {
            (!upper.contains(&j)).then(|| Sinusoid {
                amp: rng.random_range(0.15..0.25),
                freq: rng.random_range(lo..hi),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
        })
        .collect();
    let rest: Vec<Matrix3<f64>> =
        (0..sk.joints()).map(|j| axis_angle(&axes[(j + 1) % axes.len()], 0.2 + 0.05 * (j % 4) as f64)).collect();

    let yaw_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let sway_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let heading = |t: f64| 0.3 * (std::f64::consts::TAU * 0.1 * t + yaw_phase).sin();
    let position = |t: f64| {
        [
            0.05 * (std::f64::consts::TAU * 0.25 * t + sway_phase).sin(),
            0.03 * (std::f64::consts::TAU * 0.15 * t).sin(),
        ]
    };

    let dim = pose_dim(sk.joints());
    let mut data = vec![0.0f32; frames * dim];
    for f in 0..frames {
        let t = f as f64 / fps;
        let tn = (f + 1) as f64 / fps;
        let row = &mut data[f * dim..(f + 1) * dim];
        let (h0, h1) = (heading(t), heading(tn));
        let (p0, p1) = (position(t), position(tn));
        let (dx, dz) = (p1[0] - p0[0], p1[1] - p0[1]);
        let (s, c) = h0.sin_cos();
        row[0] = (h1 - h0) as f32;
        row[1] = (c * dx + s * dz) as f32;
        row[2] = (-s * dx + c * dz) as f32;
        row[3] = (0.95 + 0.01 * swing(t, &anchors)) as f32;
        let sw = swing(t, &anchors);
        for j in 0..sk.joints() {
            let mut angle = amps[j] * sw;
            if let Some(s) = &styled[j] {
                angle += s.amp * (std::f64::consts::TAU * s.freq * t + s.phase).sin();
            }
            let r = rest[j] * axis_angle(&axes[j], angle);
            let v = rot6d_from_matrix(&r)?;
            for (k, x) in v.iter().enumerate() {
                row[4 + 6 * j + k] = *x as f32;
            }
        }
    }
    let motion = MotionClip::new(sk, config.frame_rate, data)?;
    let waveform = synth_audio(&mut rng, duration, &beats, config.sample_rate);
    Ok(PairedSample { id: format!("sample_{index:05}"), style_id: style, motion, waveform, beat_times: beats })
}

fn synth_audio<R: Rng>(rng: &mut R, duration: f64, beats: &[f64], sample_rate: u32) -> Waveform {
    let sr = sample_rate as f64;
    let n = (duration * sr).round() as usize;
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.004..0.004)).collect();
    // quiet voiced "syllables" between beats
    let mut t = rng.random_range(0.0..0.2);
    while t < duration {
        let len = rng.random_range(0.08..0.2);
        let pitch = rng.random_range(120.0..260.0);
        let amp = rng.random_range(0.02..0.06);
        let start = (t * sr) as usize;
        let end = (((t + len) * sr) as usize).min(n);
        for (i, v) in x[start..end].iter_mut().enumerate() {
            let u = i as f64 / (end - start).max(1) as f64;
            let env = (std::f64::consts::PI * u).sin();
            let tt = i as f64 / sr;
            *v += amp * env * ((std::f64::consts::TAU * pitch * tt).sin() + 0.5 * (std::f64::consts::TAU * 2.0 * pitch * tt).sin());
        }
        t += len + rng.random_range(0.05..0.15);
    }
    for &b in beats {
        let start = (b * sr) as usize;
        let end = ((b + 0.04) * sr) as usize;
        let freq = rng.random_range(700.0..1100.0);
        for i in start..end.min(n) {
            let tt = (i - start) as f64 / sr;
            x[i] += 0.7 * (-tt / 0.01).exp() * (std::f64::consts::TAU * freq * tt).sin();
        }
    }
    Waveform { samples: x.into_iter().map(|v| v as f32).collect(), sample_rate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::beats::{extract_gesture_beats, BeatExtraction};
    use rustfft::{num_complex::Complex, FftPlanner};

    fn small() -> SynthConfig {
        SynthConfig { count: 8, min_duration: 4.0, max_duration: 6.0, ..Default::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_generate(7, &small()).unwrap();
        let b = synth_generate(7, &small()).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(8, &small()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = small();
        c.min_duration = 0.0;
        assert!(matches!(synth_generate(1, &c), Err(Error::Config(_))));
        let mut c = small();
        c.skeleton = Skeleton { upper: 0, lower: 0, hands: 0 };
        assert!(matches!(synth_generate(1, &c), Err(Error::Config(_))));
    }

    #[test]
    fn durations_match_and_beats_are_spaced() {
        for s in synth_generate(3, &small()).unwrap() {
            let audio_dur = s.waveform.duration();
            assert!((audio_dur - s.motion.duration()).abs() <= 1.0 / 30.0);
            for w in s.beat_times.windows(2) {
                let gap = w[1] - w[0];
                assert!((BEAT_GAP.0..=BEAT_GAP.1).contains(&gap), "gap {gap}");
            }
        }
    }

    #[test]
    fn gesture_beats_align_with_audio_beats() {
        let samples = synth_generate(11, &SynthConfig { count: 12, ..small() }).unwrap();
        let (mut hit, mut total) = (0, 0);
        for s in &samples {
            let beats = extract_gesture_beats(&s.motion, &BeatExtraction::default()).unwrap();
            for &b in &s.beat_times {
                total += 1;
                if beats.iter().any(|g| (g - b).abs() <= 1.0 / 30.0 + 1e-9) {
                    hit += 1;
                }
            }
        }
        let rate = hit as f64 / total as f64;
        assert!(rate >= 0.9, "alignment rate {rate}");
    }

    /// Dominant frequency of a hand joint's rotation channel.
    fn dominant_frequency(clip: &MotionClip, joint: usize) -> f64 {
        let n = clip.frame_count();
        let series: Vec<f64> = (0..n).map(|f| clip.frame(f).joint_rot6d(joint)[1] as f64).collect();
        let mean = series.iter().sum::<f64>() / n as f64;
        let size = 1024;
        let mut buf: Vec<Complex<f64>> = (0..size).map(|i| Complex::new(if i < n { series[i] - mean } else { 0.0 }, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(size).process(&mut buf);
        let best = (1..size / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
        best as f64 * clip.frame_rate as f64 / size as f64
    }

    #[test]
    fn styles_separate_by_spectral_band() {
        let samples = synth_generate(5, &SynthConfig { count: 40, ..small() }).unwrap();
        let hand = Skeleton::default().joint_range(BodyPart::Hands).start;
        let threshold = (style_band(0).1 + style_band(1).0) / 2.0;
        let correct = samples
            .iter()
            .filter(|s| {
                let f = dominant_frequency(&s.motion, hand);
                (f > threshold) as usize == s.style_id
            })
            .count();
        let acc = correct as f64 / samples.len() as f64;
        assert!(acc >= 0.95, "accuracy {acc}");
    }
}
