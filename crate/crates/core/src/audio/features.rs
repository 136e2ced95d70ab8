//! Framewise spectral features at 50 frames per second.

use rustfft::{num_complex::Complex, FftPlanner};

use super::wav::Waveform;
use crate::error::{Error, Result};

pub const FRAMES_PER_SECOND: usize = 50;
pub const FEATURE_DIM: usize = 10;
const BANDS: usize = 8;
const LOWEST_BAND_HZ: f64 = 50.0;

/// Additive floor inside every logarithm; silent frames sit exactly at `ln(ENERGY_FLOOR)`.
pub const ENERGY_FLOOR: f64 = 1e-10;
pub const MIN_SAMPLE_RATE: u32 = 8_000;

/// `T_a x D` feature rows, D = log-energy, spectral centroid (kHz), 8 log band energies.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureFrames {
    pub frames: Vec<[f64; FEATURE_DIM]>,
    pub sample_rate: u32,
}

impl AudioFeatureFrames {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// `floor(duration * 50)`, computed in integers.
pub fn frame_count(samples: usize, sample_rate: u32) -> usize {
    samples * FRAMES_PER_SECOND / sample_rate as usize
}

fn band_edges(sample_rate: u32) -> [f64; BANDS + 1] {
    let nyq = sample_rate as f64 / 2.0;
    let (lo, hi) = (LOWEST_BAND_HZ.ln(), nyq.ln());
    let mut e = [0.0; BANDS + 1];
    for (i, v) in e.iter_mut().enumerate() {
        *v = (lo + (hi - lo) * i as f64 / BANDS as f64).exp();
    }
    e[0] = 0.0;
    e
}

pub fn extract_features(wave: &Waveform) -> Result<AudioFeatureFrames> {
    if wave.sample_rate < MIN_SAMPLE_RATE {
        return Err(Error::Data(format!("sample rate {} below {MIN_SAMPLE_RATE} Hz", wave.sample_rate)));
    }
    let sr = wave.sample_rate as usize;
    let n_frames = frame_count(wave.samples.len(), wave.sample_rate);
    let max_len = sr.div_ceil(FRAMES_PER_SECOND);
    let fft_len = max_len.next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_len);
    let edges = band_edges(wave.sample_rate);
    let bin_hz = sr as f64 / fft_len as f64;
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let a = t * sr / FRAMES_PER_SECOND;
        let b = (t + 1) * sr / FRAMES_PER_SECOND;
        let seg = &wave.samples[a..b];
        let len = seg.len();
        let energy = seg.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / len as f64;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < len {
                let w = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / len as f64).cos();
                Complex::new(seg[i] as f64 * w, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        let mut bands = [0.0; BANDS];
        let (mut total, mut weighted) = (0.0, 0.0);
        for (k, c) in buf.iter().enumerate().take(fft_len / 2 + 1) {
            let hz = k as f64 * bin_hz;
            let p = c.norm_sqr() / len as f64;
            total += p;
            weighted += p * hz;
            let band = edges[1..].iter().position(|&e| hz < e).unwrap_or(BANDS - 1);
            bands[band] += p;
        }
        let mut row = [0.0; FEATURE_DIM];
        row[0] = (energy + ENERGY_FLOOR).ln();
        row[1] = if total > 0.0 { weighted / total / 1000.0 } else { 0.0 };
        for (i, e) in bands.iter().enumerate() {
            row[2 + i] = (e + ENERGY_FLOOR).ln();
        }
        frames.push(row);
    }
    Ok(AudioFeatureFrames { frames, sample_rate: wave.sample_rate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_seconds_is_two_hundred_frames() {
        let w = Waveform::silence(4.0, 16_000);
        assert_eq!(extract_features(&w).unwrap().len(), 200);
        let w = Waveform::silence(4.0, 44_100);
        assert_eq!(extract_features(&w).unwrap().len(), 200);
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let f = extract_features(&Waveform::silence(1.0, 16_000)).unwrap();
        for row in &f.frames {
            assert_eq!(row[0], ENERGY_FLOOR.ln());
        }
    }

    #[test]
    fn empty_waveform_gives_no_frames() {
        let f = extract_features(&Waveform { samples: vec![], sample_rate: 16_000 }).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn low_sample_rate_rejected() {
        assert!(extract_features(&Waveform::silence(1.0, 4000)).is_err());
    }

    #[test]
    fn impulse_frame_has_peak_energy() {
        let mut w = Waveform::silence(2.0, 16_000);
        for (i, s) in w.samples.iter_mut().enumerate() {
            *s = 0.001 * ((i * 7919 % 1000) as f32 / 1000.0 - 0.5);
        }
        let at = 1.234;
        w.samples[(at * 16_000.0) as usize] = 0.9;
        let f = extract_features(&w).unwrap();
        let argmax = (0..f.len()).max_by(|&a, &b| f.frames[a][0].total_cmp(&f.frames[b][0])).unwrap();
        assert_eq!(argmax, (at * 50.0) as usize);
    }
}
