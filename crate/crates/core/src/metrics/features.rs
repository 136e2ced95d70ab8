//! Feature extractors for FGD: raw pose windows and a temporal autoencoder.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::motion::{write_atomic, MotionClip};
use crate::nn::{
    conv1d_backward, conv1d_forward, relu_backward, relu_forward, upsample2_backward, upsample2_forward, Adam,
    AdamConfig, Conv1dShape, Param, ParamList,
};
use crate::rvq::windows_to_channels;

pub const FEATURE_AE_MAGIC: &[u8; 4] = b"MECF";
pub const FEATURE_AE_VERSION: u32 = 1;
pub const RAW_WINDOW: usize = 4;

/// Flattened pose windows of `window` frames, `stride` apart, across all clips.
pub fn raw_window_features(clips: &[MotionClip], window: usize, stride: usize) -> Result<Vec<Vec<f64>>> {
    if clips.is_empty() {
        return Err(Error::Data("no clips".into()));
    }
    let mut out = Vec::new();
    for c in clips {
        if c.frame_count() < window {
            return Err(Error::Data(format!("window of {window} frames is longer than a {}-frame clip", c.frame_count())));
        }
        let d = c.dim();
        let mut s = 0;
        while s + window <= c.frame_count() {
            out.push(c.data()[s * d..(s + window) * d].iter().map(|&v| v as f64).collect());
            s += stride.max(1);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAeConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub window: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for FeatureAeConfig {
    fn default() -> Self {
        FeatureAeConfig { feature_dim: 32, hidden: 64, window: 16, stride: 4, batch_size: 16, steps: 400, learning_rate: 1e-3 }
    }
}

/// Temporal conv autoencoder; features are the time-averaged bottleneck.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAutoencoder {
    pub pose_dim: usize,
    pub config: FeatureAeConfig,
    pub params: ParamList,
}

struct AeCache {
    col1: Vec<f64>,
    h1: Vec<f64>,
    col2: Vec<f64>,
    col3: Vec<f64>,
    h3: Vec<f64>,
    col4: Vec<f64>,
}

impl FeatureAutoencoder {
    fn shapes(pose_dim: usize, hidden: usize, feat: usize) -> [Conv1dShape; 4] {
        [
            Conv1dShape { c_in: pose_dim, c_out: hidden, kernel: 4, stride: 2, pad: 1 },
            Conv1dShape { c_in: hidden, c_out: feat, kernel: 4, stride: 2, pad: 1 },
            Conv1dShape { c_in: feat, c_out: hidden, kernel: 3, stride: 1, pad: 1 },
            Conv1dShape { c_in: hidden, c_out: pose_dim, kernel: 3, stride: 1, pad: 1 },
        ]
    }

    pub fn new(pose_dim: usize, config: FeatureAeConfig, seed: u64) -> Result<Self> {
        if config.window == 0 || config.window % 4 != 0 || config.feature_dim == 0 {
            return Err(Error::Config("feature autoencoder window must be a positive multiple of 4".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamList::default();
        for (i, s) in Self::shapes(pose_dim, config.hidden, config.feature_dim).iter().enumerate() {
            let bound = 1.0 / ((s.c_in * s.kernel) as f64).sqrt();
            params.push(Param::uniform(format!("conv{i}.weight"), &[s.c_out, s.c_in, s.kernel], bound, &mut rng));
            params.push(Param::zeros(format!("conv{i}.bias"), &[s.c_out]));
        }
        Ok(FeatureAutoencoder { pose_dim, config, params })
    }

    fn shape(&self, i: usize) -> Conv1dShape {
        Self::shapes(self.pose_dim, self.config.hidden, self.config.feature_dim)[i]
    }

    fn encode(&self, x: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let w = self.config.window;
        let (mut h1, col1) = conv1d_forward(&self.shape(0), x, batch, w, self.params.get(0), self.params.get(1));
        relu_forward(&mut h1);
        let (z, col2) = conv1d_forward(&self.shape(1), &h1, batch, w / 2, self.params.get(2), self.params.get(3));
        (z, col1, h1, col2)
    }

    fn forward(&self, x: &[f64], batch: usize) -> (Vec<f64>, AeCache) {
        let w = self.config.window;
        let (z, col1, h1, col2) = self.encode(x, batch);
        let up = upsample2_forward(&upsample2_forward(&z, self.config.feature_dim, batch, w / 4), self.config.feature_dim, batch, w / 2);
        let (mut h3, col3) = conv1d_forward(&self.shape(2), &up, batch, w, self.params.get(4), self.params.get(5));
        relu_forward(&mut h3);
        let (y, col4) = conv1d_forward(&self.shape(3), &h3, batch, w, self.params.get(6), self.params.get(7));
        (y, AeCache { col1, h1, col2, col3, h3, col4 })
    }

    /// Mean squared reconstruction error and gradients for a channel-major batch.
    fn loss_and_grad(&self, x: &[f64], batch: usize) -> (f64, Vec<Vec<f64>>) {
        let w = self.config.window;
        let f = self.config.feature_dim;
        let (y, c) = self.forward(x, batch);
        let n = y.len() as f64;
        let loss = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let dy: Vec<f64> = y.iter().zip(x).map(|(a, b)| 2.0 * (a - b) / n).collect();
        let mut g = self.params.zeros_like();
        let (g01, rest) = g.split_at_mut(2);
        let (g23, rest) = rest.split_at_mut(2);
        let (g45, g67) = rest.split_at_mut(2);
        let (w3, b3) = g67.split_at_mut(1);
        let mut dh3 = conv1d_backward(&self.shape(3), &c.col4, &dy, batch, w, self.params.get(6), &mut w3[0], &mut b3[0], true);
        relu_backward(&c.h3, &mut dh3);
        let (w2, b2) = g45.split_at_mut(1);
        let dup = conv1d_backward(&self.shape(2), &c.col3, &dh3, batch, w, self.params.get(4), &mut w2[0], &mut b2[0], true);
        let dz = upsample2_backward(&upsample2_backward(&dup, f, batch, w / 2), f, batch, w / 4);
        let (w1, b1) = g23.split_at_mut(1);
        let mut dh1 = conv1d_backward(&self.shape(1), &c.col2, &dz, batch, w / 2, self.params.get(2), &mut w1[0], &mut b1[0], true);
        relu_backward(&c.h1, &mut dh1);
        let (w0, b0) = g01.split_at_mut(1);
        conv1d_backward(&self.shape(0), &c.col1, &dh1, batch, w, self.params.get(0), &mut w0[0], &mut b0[0], false);
        (loss, g)
    }

    /// Reconstruction MSE on windows (`window x pose_dim` rows each).
    pub fn reconstruction_loss(&self, windows: &[Vec<f64>]) -> f64 {
        let x = windows_to_channels(windows, self.pose_dim, self.config.window);
        self.loss_and_grad(&x, windows.len()).0
    }

    /// One `feature_dim` vector per window of each clip.
    pub fn features(&self, clips: &[MotionClip]) -> Result<Vec<Vec<f64>>> {
        if clips.iter().any(|c| c.dim() != self.pose_dim) {
            return Err(Error::Shape(format!("autoencoder expects pose dim {}", self.pose_dim)));
        }
        let windows = raw_window_features(clips, self.config.window, self.config.stride)?;
        let batch = windows.len();
        let x = windows_to_channels(&windows, self.pose_dim, self.config.window);
        let (z, ..) = self.encode(&x, batch);
        let f = self.config.feature_dim;
        let n = self.config.window / 4;
        Ok((0..batch)
            .map(|b| (0..f).map(|c| z[c * batch * n + b * n..c * batch * n + (b + 1) * n].iter().sum::<f64>() / n as f64).collect())
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(FEATURE_AE_MAGIC);
        w.u32(FEATURE_AE_VERSION);
        w.u32(self.pose_dim as u32);
        w.u32(self.config.feature_dim as u32);
        w.u32(self.config.hidden as u32);
        w.u32(self.config.window as u32);
        w.u32(self.config.stride as u32);
        for p in &self.params.params {
            w.tensor(&p.shape, &p.data);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(FEATURE_AE_MAGIC)?;
        let v = r.u32("version")?;
        if v != FEATURE_AE_VERSION {
            return Err(Error::format(4, format!("unsupported version {v}")));
        }
        let pose_dim = r.u32("pose dim")? as usize;
        let config = FeatureAeConfig {
            feature_dim: r.u32("feature dim")? as usize,
            hidden: r.u32("hidden")? as usize,
            window: r.u32("window")? as usize,
            stride: r.u32("stride")? as usize,
            ..FeatureAeConfig::default()
        };
        let mut ae = FeatureAutoencoder::new(pose_dim, config, 0)?;
        for p in &mut ae.params.params {
            r.param_into(p)?;
        }
        r.finish()?;
        Ok(ae)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Trains the feature autoencoder on real clips; returns it with the per-step losses.
pub fn train_feature_autoencoder(clips: &[MotionClip], config: &FeatureAeConfig, seed: u64) -> Result<(FeatureAutoencoder, Vec<f64>)> {
    let windows = raw_window_features(clips, config.window, config.stride)?;
    let pose_dim = clips[0].dim();
    let mut ae = FeatureAutoencoder::new(pose_dim, config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut adam = Adam::new(&ae.params, AdamConfig::default());
    let trainable = vec![true; ae.params.count()];
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let batch: Vec<Vec<f64>> = (0..config.batch_size).map(|_| windows.choose(&mut rng).expect("nonempty").clone()).collect();
        let x = windows_to_channels(&batch, pose_dim, config.window);
        let (loss, grads) = ae.loss_and_grad(&x, batch.len());
        if !loss.is_finite() {
            return Err(Error::Numeric("feature autoencoder diverged".into()));
        }
        adam.update(&mut ae.params, &grads, &trainable, config.learning_rate);
        losses.push(loss);
    }
    for p in &mut ae.params.params {
        p.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    Ok((ae, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{synth_generate, SynthConfig};

    fn clips() -> Vec<MotionClip> {
        let cfg = SynthConfig { count: 3, min_duration: 2.0, max_duration: 2.5, ..SynthConfig::default() };
        synth_generate(5, &cfg).unwrap().into_iter().map(|s| s.motion).collect()
    }

    #[test]
    fn window_longer_than_clip() {
        let c = clips();
        assert!(matches!(raw_window_features(&c, 10_000, 1), Err(Error::Data(_))));
        assert_eq!(raw_window_features(&c, 4, 1).unwrap()[0].len(), 4 * c[0].dim());
    }

    #[test]
    fn autoencoder_learns_and_round_trips() {
        let c = clips();
        let cfg = FeatureAeConfig { steps: 120, ..FeatureAeConfig::default() };
        let (ae, losses) = train_feature_autoencoder(&c, &cfg, 2).unwrap();
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{tail} !< {head}");
        let back = FeatureAutoencoder::from_bytes(&ae.to_bytes()).unwrap();
        assert_eq!(back.params, ae.params);
        let fa = ae.features(&c).unwrap();
        assert_eq!(fa, back.features(&c).unwrap());
        assert_eq!(fa[0].len(), 32);
    }
}
