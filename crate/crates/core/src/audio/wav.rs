use std::path::Path;

use crate::error::{Error, Result};

/// Mono PCM signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn silence(seconds: f64, sample_rate: u32) -> Self {
        Waveform { samples: vec![0.0; (seconds * sample_rate as f64).round() as usize], sample_rate }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples in `[start, end)` seconds, zero-padded past the end.
    pub fn window(&self, start: f64, end: f64) -> Waveform {
        let sr = self.sample_rate as f64;
        let a = (start * sr).round() as usize;
        let b = (end * sr).round() as usize;
        let samples = (a..b).map(|i| self.samples.get(i).copied().unwrap_or(0.0)).collect();
        Waveform { samples, sample_rate: self.sample_rate }
    }
}

/// Writes 32-bit float mono.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let wrap = |e: hound::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &wave.samples {
        w.write_sample(s).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

/// Reads 16-bit integer or 32-bit float mono PCM.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wrap = |e: hound::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut r = hound::WavReader::open(path).map_err(wrap)?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(Error::Data(format!("{}: expected mono, found {} channels", path.display(), spec.channels)));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => r.samples::<f32>().collect::<Result<Vec<_>, _>>().map_err(wrap)?,
        (hound::SampleFormat::Int, 16) => r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<Vec<_>, _>>()
            .map_err(wrap)?,
        (fmt, bits) => {
            return Err(Error::Data(format!("{}: unsupported sample format {fmt:?}/{bits}", path.display())))
        }
    };
    Ok(Waveform { samples, sample_rate: spec.sample_rate })
}
