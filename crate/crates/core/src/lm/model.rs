//! Pre-norm decoder-only transformer with untied input and output tables.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::VocabLayout;
use crate::error::{Error, Result};
use crate::nn::{
    gelu_backward, gelu_forward, gemm, layer_norm_backward, layer_norm_forward, linear_backward,
    linear_forward, LayerNormCache, Param, ParamList,
};

pub const INIT_STD: f64 = 0.02;
const PER_LAYER: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub context: usize,
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig { d_model: 256, layers: 4, heads: 4, d_ff: 1024, context: 512 }
    }

    /// Small enough for the test suite on one core.
    pub fn test() -> Self {
        ModelConfig { d_model: 64, layers: 2, heads: 4, d_ff: 192, context: 512 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads)));
        }
        if self.layers == 0 || self.d_ff == 0 || self.context == 0 {
            return Err(Error::Config("layers, d_ff and context must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embedding,
    Backbone,
    OutputProjection,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Embedding, ParamGroup::Backbone, ParamGroup::OutputProjection];
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(ParamGroup::Embedding),
            "backbone" => Ok(ParamGroup::Backbone),
            "output_projection" => Ok(ParamGroup::OutputProjection),
            other => Err(Error::Config(format!("unknown parameter group {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    pub config: ModelConfig,
    pub vocab: VocabLayout,
    pub params: ParamList,
    frozen: [bool; 3],
}

struct LayerCache {
    ln1: LayerNormCache,
    a: Vec<f64>,
    qkv: Vec<f64>,
    /// Attention probabilities per head, `T x T`.
    probs: Vec<Vec<f64>>,
    o: Vec<f64>,
    ln2: LayerNormCache,
    m: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

pub struct ForwardCache {
    tokens: Vec<u32>,
    positions: Vec<usize>,
    layers: Vec<LayerCache>,
    lnf: LayerNormCache,
    hf: Vec<f64>,
}

/// Keys and values of every processed position, per layer.
#[derive(Debug, Clone)]
pub struct KvCache {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub len: usize,
}

impl SeqModel {
    pub fn new(config: ModelConfig, vocab: VocabLayout, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, ff, v) = (config.d_model, config.d_ff, vocab.size());
        let resid_std = INIT_STD / (2.0 * config.layers as f64).sqrt();
        let mut params = ParamList::default();
        params.push(Param::normal("tok_emb", &[v, d], INIT_STD, &mut rng));
        params.push(Param::normal("pos_emb", &[config.context, d], INIT_STD, &mut rng));
        for l in 0..config.layers {
            params.push(Param::filled(format!("h{l}.ln1.g"), &[d], 1.0));
            params.push(Param::zeros(format!("h{l}.ln1.b"), &[d]));
            params.push(Param::normal(format!("h{l}.attn.qkv.w"), &[d, 3 * d], INIT_STD, &mut rng));
            params.push(Param::zeros(format!("h{l}.attn.qkv.b"), &[3 * d]));
            params.push(Param::normal(format!("h{l}.attn.out.w"), &[d, d], resid_std, &mut rng));
            params.push(Param::zeros(format!("h{l}.attn.out.b"), &[d]));
            params.push(Param::filled(format!("h{l}.ln2.g"), &[d], 1.0));
            params.push(Param::zeros(format!("h{l}.ln2.b"), &[d]));
            params.push(Param::normal(format!("h{l}.mlp.fc.w"), &[d, ff], INIT_STD, &mut rng));
            params.push(Param::zeros(format!("h{l}.mlp.fc.b"), &[ff]));
            params.push(Param::normal(format!("h{l}.mlp.proj.w"), &[ff, d], resid_std, &mut rng));
            params.push(Param::zeros(format!("h{l}.mlp.proj.b"), &[d]));
        }
        params.push(Param::filled("ln_f.g", &[d], 1.0));
        params.push(Param::zeros("ln_f.b", &[d]));
        params.push(Param::normal("head", &[v, d], INIT_STD, &mut rng));
        Ok(SeqModel { config, vocab, params, frozen: [false; 3] })
    }

    pub(crate) fn from_parts(config: ModelConfig, vocab: VocabLayout, params: ParamList) -> Self {
        SeqModel { config, vocab, params, frozen: [false; 3] }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    fn head_index(&self) -> usize {
        self.params.params.len() - 1
    }

    fn layer_base(l: usize) -> usize {
        2 + l * PER_LAYER
    }

    pub fn group_of(&self, index: usize) -> ParamGroup {
        if index == 0 {
            ParamGroup::Embedding
        } else if index == self.head_index() {
            ParamGroup::OutputProjection
        } else {
            ParamGroup::Backbone
        }
    }

    pub fn group_indices(&self, group: ParamGroup) -> Vec<usize> {
        (0..self.params.params.len()).filter(|&i| self.group_of(i) == group).collect()
    }

    pub fn freeze(&mut self, groups: &[ParamGroup]) {
        for g in groups {
            self.frozen[*g as usize] = true;
        }
    }

    pub fn unfreeze(&mut self, groups: &[ParamGroup]) {
        for g in groups {
            self.frozen[*g as usize] = false;
        }
    }

    /// Parses group names and freezes them.
    pub fn freeze_named(&mut self, names: &[&str]) -> Result<()> {
        let groups = names.iter().map(|n| n.parse()).collect::<Result<Vec<ParamGroup>>>()?;
        self.freeze(&groups);
        Ok(())
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen[group as usize]
    }

    /// Per-tensor trainable flags in parameter order.
    pub fn trainable_mask(&self) -> Vec<bool> {
        (0..self.params.params.len()).map(|i| !self.is_frozen(self.group_of(i))).collect()
    }

    /// Names of the trainable tensors.
    pub fn trainable_parameters(&self) -> Vec<&str> {
        self.params
            .params
            .iter()
            .zip(self.trainable_mask())
            .filter(|(_, t)| *t)
            .map(|(p, _)| p.name.as_str())
            .collect()
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        let v = self.vocab_size();
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= v) {
            return Err(Error::Vocab { token: t, vocab: v });
        }
        if tokens.len() > self.config.context {
            return Err(Error::Contract(format!("{} tokens exceed the context of {}", tokens.len(), self.config.context)));
        }
        Ok(())
    }

    fn embed(&self, tokens: &[u32]) -> Vec<f64> {
        let d = self.config.d_model;
        let (tok, pos) = (self.params.get(0), self.params.get(1));
        let mut x = vec![0.0; tokens.len() * d];
        for (t, &id) in tokens.iter().enumerate() {
            let id = id as usize;
            for i in 0..d {
                x[t * d + i] = tok[id * d + i] + pos[t * d + i];
            }
        }
        x
    }

    fn head_logits(&self, rows: &[f64], n: usize) -> Vec<f64> {
        let (d, v) = (self.config.d_model, self.vocab_size());
        let mut out = vec![0.0; n * v];
        gemm(n, d, v, 1.0, rows, false, self.params.get(self.head_index()), true, 0.0, &mut out);
        out
    }

    /// Full forward; logits (`positions.len() x V`) are computed only at `positions`.
    pub fn forward_at(&self, tokens: &[u32], positions: &[usize]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_tokens(tokens)?;
        if let Some(&p) = positions.iter().find(|&&p| p >= tokens.len()) {
            return Err(Error::Shape(format!("logit position {p} beyond {} tokens", tokens.len())));
        }
        let c = self.config;
        let (d, ff, t_len) = (c.d_model, c.d_ff, tokens.len());
        let dh = d / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = self.embed(tokens);
        let mut layers = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let b = Self::layer_base(l);
            let p = |k: usize| self.params.get(b + k);
            let (a, ln1) = layer_norm_forward(&x, d, p(0), p(1));
            let qkv = linear_forward(&a, t_len, p(2), Some(p(3)), d, 3 * d);
            let mut o = vec![0.0; t_len * d];
            let mut probs = Vec::with_capacity(c.heads);
            for h in 0..c.heads {
                let (q, k, v) = split_head(&qkv, t_len, d, h, dh);
                let mut s = vec![0.0; t_len * t_len];
                gemm(t_len, dh, t_len, scale, &q, false, &k, true, 0.0, &mut s);
                causal_softmax(&mut s, t_len);
                let mut oh = vec![0.0; t_len * dh];
                gemm(t_len, t_len, dh, 1.0, &s, false, &v, false, 0.0, &mut oh);
                for t in 0..t_len {
                    o[t * d + h * dh..t * d + (h + 1) * dh].copy_from_slice(&oh[t * dh..(t + 1) * dh]);
                }
                probs.push(s);
            }
            let y = linear_forward(&o, t_len, p(4), Some(p(5)), d, d);
            for (xi, yi) in x.iter_mut().zip(&y) {
                *xi += yi;
            }
            let (m, ln2) = layer_norm_forward(&x, d, p(6), p(7));
            let u = linear_forward(&m, t_len, p(8), Some(p(9)), d, ff);
            let g = gelu_forward(&u);
            let y2 = linear_forward(&g, t_len, p(10), Some(p(11)), ff, d);
            for (xi, yi) in x.iter_mut().zip(&y2) {
                *xi += yi;
            }
            layers.push(LayerCache { ln1, a, qkv, probs, o, ln2, m, u, g });
        }
        let n = self.params.params.len();
        let (hf, lnf) = layer_norm_forward(&x, d, self.params.get(n - 3), self.params.get(n - 2));
        let rows: Vec<f64> = positions.iter().flat_map(|&p| hf[p * d..(p + 1) * d].iter().copied()).collect();
        let logits = self.head_logits(&rows, positions.len());
        Ok((logits, ForwardCache { tokens: tokens.to_vec(), positions: positions.to_vec(), layers, lnf, hf }))
    }

    /// Logits at every position, `T x V`.
    pub fn forward(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..tokens.len()).collect();
        Ok(self.forward_at(tokens, &all)?.0)
    }

    /// Parameter gradients given `dlogits` at the cached positions.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> Vec<Vec<f64>> {
        let c = self.config;
        let (d, ff, v) = (c.d_model, c.d_ff, self.vocab_size());
        let t_len = cache.tokens.len();
        let dh = d / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let np = cache.positions.len();
        let n = self.params.params.len();
        let mut grads = self.params.zeros_like();

        let rows: Vec<f64> = cache.positions.iter().flat_map(|&p| cache.hf[p * d..(p + 1) * d].iter().copied()).collect();
        gemm(v, np, d, 1.0, dlogits, true, &rows, false, 1.0, &mut grads[n - 1]);
        let mut drows = vec![0.0; np * d];
        gemm(np, v, d, 1.0, dlogits, false, self.params.get(n - 1), false, 0.0, &mut drows);
        let mut dhf = vec![0.0; t_len * d];
        for (i, &p) in cache.positions.iter().enumerate() {
            for j in 0..d {
                dhf[p * d + j] += drows[i * d + j];
            }
        }
        let (dg_f, rest) = grads[n - 3..].split_at_mut(1);
        let mut dx = layer_norm_backward(&cache.lnf, &dhf, d, self.params.get(n - 3), Some(&mut dg_f[0]), Some(&mut rest[0]));

        for l in (0..c.layers).rev() {
            let b = Self::layer_base(l);
            let lc = &cache.layers[l];
            let g = &mut grads[b..b + PER_LAYER];
            let p = |k: usize| self.params.get(b + k);
            // feed-forward
            let (gw2, gb2) = split2(g, 10);
            let dgelu = linear_backward(&lc.g, &dx, t_len, p(10), ff, d, Some(gw2), Some(gb2), true);
            let du = gelu_backward(&lc.u, &dgelu);
            let (gw1, gb1) = split2(g, 8);
            let dm = linear_backward(&lc.m, &du, t_len, p(8), d, ff, Some(gw1), Some(gb1), true);
            let (gg2, gbe2) = split2(g, 6);
            let dmid = layer_norm_backward(&lc.ln2, &dm, d, p(6), Some(gg2), Some(gbe2));
            for (a, bb) in dx.iter_mut().zip(&dmid) {
                *a += bb;
            }
            // attention
            let (gwo, gbo) = split2(g, 4);
            let d_o = linear_backward(&lc.o, &dx, t_len, p(4), d, d, Some(gwo), Some(gbo), true);
            let mut dqkv = vec![0.0; t_len * 3 * d];
            for h in 0..c.heads {
                let (q, k, vv) = split_head(&lc.qkv, t_len, d, h, dh);
                let probs = &lc.probs[h];
                let mut doh = vec![0.0; t_len * dh];
                for t in 0..t_len {
                    doh[t * dh..(t + 1) * dh].copy_from_slice(&d_o[t * d + h * dh..t * d + (h + 1) * dh]);
                }
                let mut dv = vec![0.0; t_len * dh];
                gemm(t_len, t_len, dh, 1.0, probs, true, &doh, false, 0.0, &mut dv);
                let mut dp = vec![0.0; t_len * t_len];
                gemm(t_len, dh, t_len, 1.0, &doh, false, &vv, true, 0.0, &mut dp);
                for t in 0..t_len {
                    let pr = &probs[t * t_len..(t + 1) * t_len];
                    let row = &mut dp[t * t_len..(t + 1) * t_len];
                    let dot: f64 = pr.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
                    for (r, &pv) in row.iter_mut().zip(pr) {
                        *r = pv * (*r - dot);
                    }
                }
                let mut dq = vec![0.0; t_len * dh];
                gemm(t_len, t_len, dh, scale, &dp, false, &k, false, 0.0, &mut dq);
                let mut dk = vec![0.0; t_len * dh];
                gemm(t_len, t_len, dh, scale, &dp, true, &q, false, 0.0, &mut dk);
                for t in 0..t_len {
                    let base = t * 3 * d + h * dh;
                    dqkv[base..base + dh].copy_from_slice(&dq[t * dh..(t + 1) * dh]);
                    dqkv[base + d..base + d + dh].copy_from_slice(&dk[t * dh..(t + 1) * dh]);
                    dqkv[base + 2 * d..base + 2 * d + dh].copy_from_slice(&dv[t * dh..(t + 1) * dh]);
                }
            }
            let (gwq, gbq) = split2(g, 2);
            let da = linear_backward(&lc.a, &dqkv, t_len, p(2), d, 3 * d, Some(gwq), Some(gbq), true);
            let (gg1, gbe1) = split2(g, 0);
            let din = layer_norm_backward(&lc.ln1, &da, d, p(0), Some(gg1), Some(gbe1));
            for (a, bb) in dx.iter_mut().zip(&din) {
                *a += bb;
            }
        }
        for (t, &id) in cache.tokens.iter().enumerate() {
            let id = id as usize;
            for j in 0..d {
                grads[0][id * d + j] += dx[t * d + j];
                grads[1][t * d + j] += dx[t * d + j];
            }
        }
        grads
    }

    /// Runs `tokens` through the model, returning the cache and the last position's logits.
    pub fn prefill(&self, tokens: &[u32]) -> Result<(KvCache, Vec<f64>)> {
        if tokens.is_empty() {
            return Err(Error::Contract("prefill needs at least one token".into()));
        }
        let (logits, cache) = self.forward_at(tokens, &[tokens.len() - 1])?;
        let d = self.config.d_model;
        let mut kv = KvCache { k: Vec::new(), v: Vec::new(), len: tokens.len() };
        for lc in &cache.layers {
            let mut k = Vec::with_capacity(tokens.len() * d);
            let mut v = Vec::with_capacity(tokens.len() * d);
            for t in 0..tokens.len() {
                k.extend_from_slice(&lc.qkv[t * 3 * d + d..t * 3 * d + 2 * d]);
                v.extend_from_slice(&lc.qkv[t * 3 * d + 2 * d..t * 3 * d + 3 * d]);
            }
            kv.k.push(k);
            kv.v.push(v);
        }
        Ok((kv, logits))
    }

    /// Appends one token to the cache and returns its next-token logits.
    pub fn step(&self, kv: &mut KvCache, token: u32) -> Result<Vec<f64>> {
        let c = self.config;
        if token as usize >= self.vocab_size() {
            return Err(Error::Vocab { token, vocab: self.vocab_size() });
        }
        if kv.len >= c.context {
            return Err(Error::Contract(format!("context of {} tokens exhausted", c.context)));
        }
        let (d, ff) = (c.d_model, c.d_ff);
        let dh = d / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let pos = kv.len;
        let (tok, pe) = (self.params.get(0), self.params.get(1));
        let mut x: Vec<f64> = (0..d).map(|i| tok[token as usize * d + i] + pe[pos * d + i]).collect();
        for l in 0..c.layers {
            let b = Self::layer_base(l);
            let p = |k: usize| self.params.get(b + k);
            let (a, _) = layer_norm_forward(&x, d, p(0), p(1));
            let qkv = linear_forward(&a, 1, p(2), Some(p(3)), d, 3 * d);
            kv.k[l].extend_from_slice(&qkv[d..2 * d]);
            kv.v[l].extend_from_slice(&qkv[2 * d..]);
            let n = pos + 1;
            let mut o = vec![0.0; d];
            for h in 0..c.heads {
                let q = &qkv[h * dh..(h + 1) * dh];
                let mut s: Vec<f64> = (0..n)
                    .map(|j| q.iter().zip(&kv.k[l][j * d + h * dh..j * d + (h + 1) * dh]).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in s.iter_mut() {
                    *v = (*v - mx).exp();
                    sum += *v;
                }
                for (j, w) in s.iter().enumerate() {
                    let w = w / sum;
                    for i in 0..dh {
                        o[h * dh + i] += w * kv.v[l][j * d + h * dh + i];
                    }
                }
            }
            let y = linear_forward(&o, 1, p(4), Some(p(5)), d, d);
            for (xi, yi) in x.iter_mut().zip(&y) {
                *xi += yi;
            }
            let (m, _) = layer_norm_forward(&x, d, p(6), p(7));
            let u = linear_forward(&m, 1, p(8), Some(p(9)), d, ff);
            let y2 = linear_forward(&gelu_forward(&u), 1, p(10), Some(p(11)), ff, d);
            for (xi, yi) in x.iter_mut().zip(&y2) {
                *xi += yi;
            }
        }
        kv.len += 1;
        let n = self.params.params.len();
        let (hf, _) = layer_norm_forward(&x, d, self.params.get(n - 3), self.params.get(n - 2));
        Ok(self.head_logits(&hf, 1))
    }

    /// Rounds parameters to f32 so a saved checkpoint reloads identically.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params.params {
            p.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Appends rows for the ids `new` adds beyond the current layout; old rows stay bitwise equal.
    pub fn extend_vocab(&self, new: VocabLayout, seed: u64) -> Result<SeqModel> {
        if !new.extends(&self.vocab) {
            return Err(Error::Layout(format!("{new:?} does not extend {:?}", self.vocab)));
        }
        let mut out = self.clone();
        let (old_v, new_v, d) = (self.vocab_size(), new.size(), self.config.d_model);
        if new_v == old_v {
            out.vocab = new;
            return Ok(out);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("finite std");
        let head = self.head_index();
        for idx in [0, head] {
            let p = &mut out.params.params[idx];
            p.data.extend((0..(new_v - old_v) * d).map(|_| normal.sample(&mut rng)));
            p.shape = vec![new_v, d];
        }
        out.vocab = new;
        Ok(out)
    }
}

fn split2(g: &mut [Vec<f64>], k: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = g[k..k + 2].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

fn split_head(qkv: &[f64], t_len: usize, d: usize, h: usize, dh: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut q = Vec::with_capacity(t_len * dh);
    let mut k = Vec::with_capacity(t_len * dh);
    let mut v = Vec::with_capacity(t_len * dh);
    for t in 0..t_len {
        let row = &qkv[t * 3 * d..(t + 1) * 3 * d];
        q.extend_from_slice(&row[h * dh..(h + 1) * dh]);
        k.extend_from_slice(&row[d + h * dh..d + (h + 1) * dh]);
        v.extend_from_slice(&row[2 * d + h * dh..2 * d + (h + 1) * dh]);
    }
    (q, k, v)
}

fn causal_softmax(s: &mut [f64], t_len: usize) {
    for t in 0..t_len {
        let row = &mut s[t * t_len..(t + 1) * t_len];
        let mx = row[..=t].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row[..=t].iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row[..=t].iter_mut() {
            *v /= sum;
        }
        for v in row[t + 1..].iter_mut() {
            *v = 0.0;
        }
    }
}

/// Mean next-token cross-entropy over `(position, target)` pairs and its logit gradient.
pub fn cross_entropy(logits: &[f64], vocab: usize, targets: &[u32]) -> (f64, Vec<f64>) {
    let n = targets.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits[i * vocab..(i + 1) * vocab];
        let p = crate::nn::softmax_row(row);
        loss -= p[t as usize].max(f64::MIN_POSITIVE).ln();
        for j in 0..vocab {
            grad[i * vocab + j] = (p[j] - if j == t as usize { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n.max(1) as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SeqModel {
        let cfg = ModelConfig { d_model: 16, layers: 2, heads: 2, d_ff: 24, context: 32 };
        SeqModel::new(cfg, VocabLayout { text: 11, audio: 0, motion: 0, specials: false }, 4).unwrap()
    }

    #[test]
    fn single_token_shape_and_vocab_error() {
        let m = toy();
        assert_eq!(m.forward(&[3]).unwrap().len(), 11);
        assert!(matches!(m.forward(&[3, 11]), Err(Error::Vocab { token: 11, vocab: 11 })));
    }

    #[test]
    fn causal_prefix_invariance() {
        let m = toy();
        let a = m.forward(&[1, 2, 3, 4, 5]).unwrap();
        let b = m.forward(&[1, 2, 3, 9, 0]).unwrap();
        assert_eq!(a[..3 * 11], b[..3 * 11]);
        assert_ne!(a[3 * 11..], b[3 * 11..]);
    }

    #[test]
    fn kv_cache_matches_full_forward() {
        let m = toy();
        let toks = [1u32, 7, 3, 3, 10, 0, 2];
        let full = m.forward(&toks).unwrap();
        let (mut kv, first) = m.prefill(&toks[..3]).unwrap();
        for (a, b) in first.iter().zip(&full[2 * 11..3 * 11]) {
            assert!((a - b).abs() < 1e-12);
        }
        for (i, &t) in toks[3..].iter().enumerate() {
            let lg = m.step(&mut kv, t).unwrap();
            let want = &full[(3 + i) * 11..(4 + i) * 11];
            for (a, b) in lg.iter().zip(want) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    fn loss(m: &SeqModel, toks: &[u32]) -> f64 {
        let pos: Vec<usize> = (0..toks.len() - 1).collect();
        let (lg, _) = m.forward_at(toks, &pos).unwrap();
        cross_entropy(&lg, 11, &toks[1..]).0
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = toy();
        let toks = [1u32, 7, 3, 3, 10, 0, 2, 5];
        let pos: Vec<usize> = (0..toks.len() - 1).collect();
        let (lg, cache) = m.forward_at(&toks, &pos).unwrap();
        let (_, dl) = cross_entropy(&lg, 11, &toks[1..]);
        let grads = m.backward(&cache, &dl);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for pi in 0..m.params.params.len() {
            let len = m.params.params[pi].data.len();
            for j in (0..len).step_by((len / 5).max(1)) {
                let orig = m.params.params[pi].data[j];
                m.params.params[pi].data[j] = orig + h;
                let up = loss(&m, &toks);
                m.params.params[pi].data[j] = orig - h;
                let down = loss(&m, &toks);
                m.params.params[pi].data[j] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads[pi][j];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn extend_vocab_keeps_old_rows_and_logits() {
        let m = SeqModel::new(ModelConfig { d_model: 16, layers: 1, heads: 2, d_ff: 16, context: 16 }, VocabLayout::text_only(), 1).unwrap();
        let big = m.extend_vocab(VocabLayout::extended(5, 4), 9).unwrap();
        assert_eq!(big.vocab_size(), 256 + 5 + 12 + 9);
        assert_eq!(&big.params.get(0)[..256 * 16], m.params.get(0));
        let toks: Vec<u32> = b"hi there".iter().map(|&b| b as u32).collect();
        let a2 = m.forward(&toks).unwrap();
        let b2 = big.forward(&toks).unwrap();
        for t in 0..toks.len() {
            assert_eq!(&a2[t * 256..(t + 1) * 256], &b2[t * big.vocab_size()..t * big.vocab_size() + 256]);
        }
        assert_eq!(m.extend_vocab(VocabLayout::text_only(), 3).unwrap(), m);
        assert_eq!(big, m.extend_vocab(VocabLayout::extended(5, 4), 9).unwrap());
        assert!(matches!(big.extend_vocab(VocabLayout::extended(6, 4), 1), Err(Error::Layout(_))));
    }

    #[test]
    fn group_names() {
        let mut m = toy();
        assert!(matches!(m.freeze_named(&["backbone", "nonsense"]), Err(Error::Config(_))));
        m.freeze_named(&["backbone"]).unwrap();
        let names = m.trainable_parameters();
        assert_eq!(names, vec!["tok_emb", "head"]);
    }
}
