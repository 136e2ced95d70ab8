//! Convolutional residual-VQ autoencoder for one body part.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codebook::{rvq_encode, Codebook, RvqEncoding};
use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::motion::{write_atomic, BodyPart};
use crate::nn::{
    conv1d_backward, conv1d_forward, relu_backward, relu_forward, upsample2_backward, upsample2_forward, Conv1dShape,
    Param, ParamList,
};

pub const CODEC_MAGIC: &[u8; 4] = b"MECQ";
pub const CODEC_VERSION: u32 = 1;
/// Frames per latent vector.
pub const DOWNSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// Entries per codebook (K).
    pub codebook_size: usize,
    /// Latent and channel width (f).
    pub latent_dim: usize,
    /// Residual layers after the base layer (Q).
    pub residual_layers: usize,
    /// Commitment weight.
    pub eta: f64,
    pub ema_decay: f64,
    /// Reseed an entry after this many consecutive unused steps.
    pub dead_code_steps: u32,
    pub window: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub lr_step_every: u64,
    pub lr_step_factor: f64,
    /// Sample the active residual depth uniformly each step.
    pub quantizer_dropout: bool,
}

impl CodecConfig {
    pub fn paper() -> Self {
        CodecConfig {
            codebook_size: 512,
            latent_dim: 512,
            residual_layers: 6,
            eta: 0.1,
            ema_decay: 0.99,
            dead_code_steps: 256,
            window: 64,
            batch_size: 256,
            steps: 20_000,
            learning_rate: 4e-4,
            lr_step_every: 5_000,
            lr_step_factor: 0.5,
            quantizer_dropout: true,
        }
    }

    pub fn desk() -> Self {
        CodecConfig {
            codebook_size: 128,
            latent_dim: 64,
            batch_size: 32,
            steps: 1_500,
            learning_rate: 1e-3,
            lr_step_every: 600,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size < 2 || self.latent_dim == 0 {
            return Err(Error::Config("codebook_size must be >= 2 and latent_dim > 0".into()));
        }
        if self.window == 0 || self.window % DOWNSAMPLE != 0 {
            return Err(Error::Config(format!("window {} must be a positive multiple of {DOWNSAMPLE}", self.window)));
        }
        if !(self.eta >= 0.0) || !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("eta must be >= 0 and ema_decay in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self::paper()
    }
}

// Parameter slots.
const E1: usize = 0;
const E2: usize = 2;
const E3A: usize = 4;
const E3B: usize = 6;
const D1A: usize = 8;
const D1B: usize = 10;
const UP1: usize = 12;
const UP2: usize = 14;
const OUT: usize = 16;
const N_PARAMS: usize = 18;

#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodec {
    pub part: BodyPart,
    /// Pose channels handled by this codec.
    pub in_dim: usize,
    pub config: CodecConfig,
    pub params: ParamList,
    /// Base layer first, then `residual_layers` residual layers.
    pub codebooks: Vec<Codebook>,
}

/// Quantization frozen at a base point: the decoder sees `z + decode_offset`
/// and layer q's commitment compares `z − shift_q` against `targets[q]`.
/// Holding this fixed while the encoder moves is exactly the straight-through
/// surrogate whose gradient training follows.
#[derive(Debug, Clone, PartialEq)]
pub struct StraightThroughPlan {
    pub layers_used: usize,
    /// `(ẑ − z)` at the base point, `M x f` rows.
    pub decode_offset: Vec<f64>,
    /// `ẑ^q` per active layer, `M x f` rows.
    pub targets: Vec<Vec<f64>>,
    pub codes: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub reconstruction: f64,
    pub commitment: f64,
    pub total: f64,
}

struct EncoderCache {
    col1: Vec<f64>,
    h1: Vec<f64>,
    col2: Vec<f64>,
    h2: Vec<f64>,
    col3a: Vec<f64>,
    r1: Vec<f64>,
    col3b: Vec<f64>,
}

struct DecoderCache {
    zq: Vec<f64>,
    col_a: Vec<f64>,
    v: Vec<f64>,
    col_b: Vec<f64>,
    col_u1: Vec<f64>,
    d2: Vec<f64>,
    col_u2: Vec<f64>,
    d3: Vec<f64>,
    col_o: Vec<f64>,
}

pub(crate) fn to_rows(x: &[f64], channels: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        for i in 0..cols {
            out[i * channels + c] = x[c * cols + i];
        }
    }
    out
}

pub(crate) fn to_channels(x: &[f64], channels: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..cols {
        for c in 0..channels {
            out[c * cols + i] = x[i * channels + c];
        }
    }
    out
}

impl RvqCodec {
    pub fn new(part: BodyPart, in_dim: usize, config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.latent_dim;
        let mut params = ParamList::default();
        for (name, shape) in Self::conv_shapes(in_dim, f) {
            let fan_in = (shape.c_in * shape.kernel) as f64;
            params.push(Param::uniform(format!("{name}.weight"), &[shape.c_out, shape.c_in, shape.kernel], 1.0 / fan_in.sqrt(), &mut rng));
            params.push(Param::zeros(format!("{name}.bias"), &[shape.c_out]));
        }
        let codebooks = (0..=config.residual_layers)
            .map(|q| Codebook::random(q, config.codebook_size, f, 0.1, &mut rng))
            .collect();
        Ok(RvqCodec { part, in_dim, config, params, codebooks })
    }

    fn conv_shapes(in_dim: usize, f: usize) -> [(&'static str, Conv1dShape); 9] {
        let k3 = |c_in, c_out| Conv1dShape { c_in, c_out, kernel: 3, stride: 1, pad: 1 };
        let down = |c_in, c_out| Conv1dShape { c_in, c_out, kernel: 4, stride: 2, pad: 1 };
        [
            ("enc.down1", down(in_dim, f)),
            ("enc.down2", down(f, f)),
            ("enc.res.a", k3(f, f)),
            ("enc.res.b", k3(f, f)),
            ("dec.res.a", k3(f, f)),
            ("dec.res.b", k3(f, f)),
            ("dec.up1", k3(f, f)),
            ("dec.up2", k3(f, f)),
            ("dec.out", k3(f, in_dim)),
        ]
    }

    fn shape(&self, slot: usize) -> Conv1dShape {
        Self::conv_shapes(self.in_dim, self.config.latent_dim)[slot / 2].1
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn codebook_size(&self) -> usize {
        self.config.codebook_size
    }

    fn conv(&self, slot: usize, x: &[f64], batch: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
        conv1d_forward(&self.shape(slot), x, batch, len, self.params.get(slot), self.params.get(slot + 1))
    }

    fn conv_back(
        &self,
        slot: usize,
        col: &[f64],
        dy: &[f64],
        batch: usize,
        len: usize,
        grads: &mut [Vec<f64>],
        need_dx: bool,
    ) -> Vec<f64> {
        let (dw, rest) = grads[slot..].split_at_mut(1);
        conv1d_backward(&self.shape(slot), col, dy, batch, len, self.params.get(slot), &mut dw[0], &mut rest[0], need_dx)
    }

    fn encode_cached(&self, x: &[f64], batch: usize, frames: usize) -> (Vec<f64>, EncoderCache) {
        let (mut h1, col1) = self.conv(E1, x, batch, frames);
        relu_forward(&mut h1);
        let (mut h2, col2) = self.conv(E2, &h1, batch, frames / 2);
        relu_forward(&mut h2);
        let n = frames / DOWNSAMPLE;
        let (mut r1, col3a) = self.conv(E3A, &h2, batch, n);
        relu_forward(&mut r1);
        let (y3b, col3b) = self.conv(E3B, &r1, batch, n);
        let z: Vec<f64> = h2.iter().zip(&y3b).map(|(a, b)| a + b).collect();
        (z, EncoderCache { col1, h1, col2, h2, col3a, r1, col3b })
    }

    fn encode_backward(&self, cache: &EncoderCache, dz: &[f64], batch: usize, frames: usize, grads: &mut [Vec<f64>]) {
        let n = frames / DOWNSAMPLE;
        let mut dr1 = self.conv_back(E3B, &cache.col3b, dz, batch, n, grads, true);
        relu_backward(&cache.r1, &mut dr1);
        let mut dh2 = self.conv_back(E3A, &cache.col3a, &dr1, batch, n, grads, true);
        for (a, b) in dh2.iter_mut().zip(dz) {
            *a += b;
        }
        relu_backward(&cache.h2, &mut dh2);
        let mut dh1 = self.conv_back(E2, &cache.col2, &dh2, batch, frames / 2, grads, true);
        relu_backward(&cache.h1, &mut dh1);
        self.conv_back(E1, &cache.col1, &dh1, batch, frames, grads, false);
    }

    fn decode_cached(&self, zq: &[f64], batch: usize, n: usize) -> (Vec<f64>, DecoderCache) {
        let mut u = zq.to_vec();
        relu_forward(&mut u);
        let (mut v, col_a) = self.conv(D1A, &u, batch, n);
        relu_forward(&mut v);
        let (yb, col_b) = self.conv(D1B, &v, batch, n);
        let d1: Vec<f64> = zq.iter().zip(&yb).map(|(a, b)| a + b).collect();
        let f = self.config.latent_dim;
        let up1 = upsample2_forward(&d1, f, batch, n);
        let (mut d2, col_u1) = self.conv(UP1, &up1, batch, 2 * n);
        relu_forward(&mut d2);
        let up2 = upsample2_forward(&d2, f, batch, 2 * n);
        let (mut d3, col_u2) = self.conv(UP2, &up2, batch, 4 * n);
        relu_forward(&mut d3);
        let (out, col_o) = self.conv(OUT, &d3, batch, 4 * n);
        (out, DecoderCache { zq: zq.to_vec(), col_a, v, col_b, col_u1, d2, col_u2, d3, col_o })
    }

    fn decode_backward(&self, cache: &DecoderCache, dout: &[f64], batch: usize, n: usize, grads: &mut [Vec<f64>]) -> Vec<f64> {
        let f = self.config.latent_dim;
        let mut dd3 = self.conv_back(OUT, &cache.col_o, dout, batch, 4 * n, grads, true);
        relu_backward(&cache.d3, &mut dd3);
        let dup2 = self.conv_back(UP2, &cache.col_u2, &dd3, batch, 4 * n, grads, true);
        let mut dd2 = upsample2_backward(&dup2, f, batch, 2 * n);
        relu_backward(&cache.d2, &mut dd2);
        let dup1 = self.conv_back(UP1, &cache.col_u1, &dd2, batch, 2 * n, grads, true);
        let dd1 = upsample2_backward(&dup1, f, batch, n);
        let mut dv = self.conv_back(D1B, &cache.col_b, &dd1, batch, n, grads, true);
        relu_backward(&cache.v, &mut dv);
        let mut du = self.conv_back(D1A, &cache.col_a, &dv, batch, n, grads, true);
        for (d, z) in du.iter_mut().zip(&cache.zq) {
            if *z <= 0.0 {
                *d = 0.0;
            }
        }
        dd1.iter().zip(&du).map(|(a, b)| a + b).collect()
    }

    fn check_input(&self, x: &[f64], batch: usize, frames: usize) -> Result<()> {
        if frames % DOWNSAMPLE != 0 {
            return Err(Error::Shape(format!("{frames} frames is not a multiple of {DOWNSAMPLE}")));
        }
        if x.len() != self.in_dim * batch * frames {
            return Err(Error::Shape(format!(
                "input has {} values, expected {} x {} x {}",
                x.len(),
                self.in_dim,
                batch,
                frames
            )));
        }
        Ok(())
    }

    /// Encoder latents as `(batch * frames / 4) x f` rows. Input is channel-major `(in_dim, batch * frames)`.
    pub fn encode_latents(&self, x: &[f64], batch: usize, frames: usize) -> Result<Vec<f64>> {
        self.check_input(x, batch, frames)?;
        let (z, _) = self.encode_cached(x, batch, frames);
        Ok(to_rows(&z, self.config.latent_dim, batch * frames / DOWNSAMPLE))
    }

    /// Runs residual quantization on latent rows.
    pub fn quantize(&self, latent_rows: &[f64], layers_used: usize) -> Result<RvqEncoding> {
        rvq_encode(latent_rows, self.config.latent_dim, &self.codebooks, layers_used)
    }

    /// Decodes quantized latent rows (`batch * n x f`) to channel-major motion `(in_dim, batch * 4n)`.
    pub fn decode_latents(&self, rows: &[f64], batch: usize, n: usize) -> Result<Vec<f64>> {
        let f = self.config.latent_dim;
        if rows.len() != batch * n * f {
            return Err(Error::Shape(format!("{} latent values, expected {}", rows.len(), batch * n * f)));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let (out, _) = self.decode_cached(&to_channels(rows, f, batch * n), batch, n);
        Ok(out)
    }

    /// Sums the addressed codebook entries; `layers[q]` holds layer q's codes.
    pub fn latents_from_codes(&self, layers: &[&[u32]]) -> Result<Vec<f64>> {
        let f = self.config.latent_dim;
        let n = layers.first().map_or(0, |l| l.len());
        if layers.len() > self.codebooks.len() {
            return Err(Error::Config(format!("{} code layers for a codec with {}", layers.len(), self.codebooks.len())));
        }
        let mut rows = vec![0.0; n * f];
        for (q, codes) in layers.iter().enumerate() {
            if codes.len() != n {
                return Err(Error::Shape("code layers differ in length".into()));
            }
            let book = &self.codebooks[q];
            for (i, &c) in codes.iter().enumerate() {
                if c as usize >= book.size {
                    return Err(Error::InvalidCode { code: c as usize, size: book.size });
                }
                for (r, e) in rows[i * f..(i + 1) * f].iter_mut().zip(book.entry(c as usize)) {
                    *r += e;
                }
            }
        }
        Ok(rows)
    }

    /// Decodes code layers to part features, `4n x in_dim` row-major.
    pub fn codec_decode(&self, layers: &[&[u32]]) -> Result<Vec<f64>> {
        let rows = self.latents_from_codes(layers)?;
        let n = layers.first().map_or(0, |l| l.len());
        let out = self.decode_latents(&rows, 1, n)?;
        Ok(to_rows(&out, self.in_dim, DOWNSAMPLE * n))
    }

    /// Builds the straight-through plan for the current parameters.
    pub fn plan(&self, x: &[f64], batch: usize, frames: usize, layers_used: usize) -> Result<StraightThroughPlan> {
        let rows = self.encode_latents(x, batch, frames)?;
        let enc = self.quantize(&rows, layers_used)?;
        Ok(StraightThroughPlan {
            layers_used,
            decode_offset: enc.quantized.iter().zip(&rows).map(|(q, z)| q - z).collect(),
            targets: enc.layer_vectors,
            codes: enc.codes,
        })
    }

    /// Loss under a frozen plan (no gradients).
    pub fn surrogate_loss(&self, x: &[f64], batch: usize, frames: usize, plan: &StraightThroughPlan) -> Result<LossParts> {
        Ok(self.run(x, batch, frames, plan, false)?.0)
    }

    /// Loss and parameter gradients under a frozen plan.
    pub fn loss_and_grad(
        &self,
        x: &[f64],
        batch: usize,
        frames: usize,
        plan: &StraightThroughPlan,
    ) -> Result<(LossParts, Vec<Vec<f64>>)> {
        let (loss, grads) = self.run(x, batch, frames, plan, true)?;
        Ok((loss, grads.expect("requested gradients")))
    }

    fn run(
        &self,
        x: &[f64],
        batch: usize,
        frames: usize,
        plan: &StraightThroughPlan,
        want_grads: bool,
    ) -> Result<(LossParts, Option<Vec<Vec<f64>>>)> {
        self.check_input(x, batch, frames)?;
        let f = self.config.latent_dim;
        let n = frames / DOWNSAMPLE;
        let m = batch * n;
        if plan.decode_offset.len() != m * f {
            return Err(Error::Shape("plan does not match the batch".into()));
        }
        let (z, enc_cache) = self.encode_cached(x, batch, frames);
        let z_rows = to_rows(&z, f, m);

        // commitment against the frozen per-layer targets
        let mut commitment = 0.0;
        let mut dz_rows = vec![0.0; m * f];
        let mut shift = vec![0.0; m * f];
        let denom = (m * f) as f64;
        for target in &plan.targets {
            for i in 0..m * f {
                let d = z_rows[i] - shift[i] - target[i];
                commitment += d * d / denom;
                dz_rows[i] += 2.0 * self.config.eta * d / denom;
                shift[i] += target[i];
            }
        }

        let zq_rows: Vec<f64> = z_rows.iter().zip(&plan.decode_offset).map(|(a, b)| a + b).collect();
        let zq = to_channels(&zq_rows, f, m);
        let (out, dec_cache) = self.decode_cached(&zq, batch, n);
        let count = out.len() as f64;
        let reconstruction = out.iter().zip(x).map(|(a, b)| (a - b).abs()).sum::<f64>() / count;
        let loss = LossParts { reconstruction, commitment, total: reconstruction + self.config.eta * commitment };
        if !want_grads {
            return Ok((loss, None));
        }
        let dout: Vec<f64> = out
            .iter()
            .zip(x)
            .map(|(a, b)| {
                let d = a - b;
                if d > 0.0 {
                    1.0 / count
                } else if d < 0.0 {
                    -1.0 / count
                } else {
                    0.0
                }
            })
            .collect();
        let mut grads = self.params.zeros_like();
        // straight-through: the decoder-input gradient passes to z unchanged
        let dzq = self.decode_backward(&dec_cache, &dout, batch, n, &mut grads);
        let mut dz = to_channels(&dz_rows, f, m);
        for (a, b) in dz.iter_mut().zip(&dzq) {
            *a += b;
        }
        self.encode_backward(&enc_cache, &dz, batch, frames, &mut grads);
        Ok((loss, Some(grads)))
    }

    /// Mean absolute reconstruction error of part-feature windows (`frames x in_dim` rows each).
    pub fn reconstruction_l1(&self, windows: &[Vec<f64>], frames: usize, layers_used: usize) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::Data("no evaluation windows".into()));
        }
        let x = windows_to_channels(windows, self.in_dim, frames);
        let batch = windows.len();
        let rows = self.encode_latents(&x, batch, frames)?;
        let enc = self.quantize(&rows, layers_used)?;
        let out = self.decode_latents(&enc.quantized, batch, frames / DOWNSAMPLE)?;
        Ok(out.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
    }

    /// Rounds every parameter and code entry to f32 so checkpoints reload bit-identically.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params.params {
            p.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        for b in &mut self.codebooks {
            b.entries.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CODEC_MAGIC);
        w.u32(CODEC_VERSION);
        w.u8(self.part.tag());
        w.u32(self.config.codebook_size as u32);
        w.u32(self.config.latent_dim as u32);
        w.u32(self.config.residual_layers as u32);
        w.u32(self.in_dim as u32);
        w.f32(self.config.eta as f32);
        for b in &self.codebooks {
            w.tensor(&[b.size, b.dim], &b.entries);
        }
        w.u32(self.params.params.len() as u32);
        for p in &self.params.params {
            w.tensor(&p.shape, &p.data);
        }
        w.buf
    }

    /// Restores a codec; training-only settings come from `config` when given.
    pub fn from_bytes(bytes: &[u8], config: Option<&CodecConfig>) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CODEC_MAGIC)?;
        let version = r.u32("version")?;
        if version != CODEC_VERSION {
            return Err(Error::format(4, format!("unsupported codec version {version}")));
        }
        let tag_at = r.pos;
        let part = BodyPart::from_tag(r.u8("part tag")?)
            .ok_or_else(|| Error::format(tag_at as u64, "unknown body part tag"))?;
        let k = r.u32("K")? as usize;
        let f = r.u32("f")? as usize;
        let q = r.u32("Q")? as usize;
        let in_dim = r.u32("input dim")? as usize;
        let eta = r.f32("eta")? as f64;
        let mut cfg = config.cloned().unwrap_or_else(CodecConfig::paper);
        cfg.codebook_size = k;
        cfg.latent_dim = f;
        cfg.residual_layers = q;
        cfg.eta = eta;
        cfg.validate()?;
        let mut codec = RvqCodec::new(part, in_dim, cfg, 0)?;
        for layer in 0..=q {
            let at = r.pos;
            let (shape, data) = r.tensor("codebook")?;
            if shape != [k, f] {
                return Err(Error::format(at as u64, format!("codebook {layer} has shape {shape:?}")));
            }
            let mut book = Codebook::from_entries(layer, k, f, data);
            book.initialized = true;
            codec.codebooks[layer] = book;
        }
        let at = r.pos;
        let count = r.u32("parameter count")? as usize;
        if count != N_PARAMS {
            return Err(Error::format(at as u64, format!("{count} parameter tensors, expected {N_PARAMS}")));
        }
        for p in &mut codec.params.params {
            r.param_into(p)?;
        }
        r.finish()?;
        Ok(codec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?, None)
    }
}

/// Stacks row-major windows into the channel-major batch layout.
pub fn windows_to_channels(windows: &[Vec<f64>], channels: usize, frames: usize) -> Vec<f64> {
    let batch = windows.len();
    let mut x = vec![0.0; channels * batch * frames];
    for (b, w) in windows.iter().enumerate() {
        for t in 0..frames {
            for c in 0..channels {
                x[c * batch * frames + b * frames + t] = w[t * channels + c];
            }
        }
    }
    x
}
