use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::BodyPart;

/// One quantization layer's code entries plus the running statistics used by
/// exponential-moving-average updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub layer_index: usize,
    pub size: usize,
    pub dim: usize,
    /// `size x dim`, row-major.
    pub entries: Vec<f64>,
    /// Total assignments seen during training.
    pub usage_counts: Vec<u64>,
    /// Consecutive training steps without any assignment.
    pub idle_steps: Vec<u32>,
    pub(crate) ema_count: Vec<f64>,
    pub(crate) ema_sum: Vec<f64>,
    pub(crate) initialized: bool,
}

impl Codebook {
    pub fn random<R: Rng>(layer_index: usize, size: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let entries: Vec<f64> = (0..size * dim).map(|_| normal.sample(rng)).collect();
        Self::from_entries(layer_index, size, dim, entries)
    }

    pub fn from_entries(layer_index: usize, size: usize, dim: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), size * dim);
        Codebook {
            layer_index,
            size,
            dim,
            ema_sum: entries.clone(),
            ema_count: vec![1.0; size],
            entries,
            usage_counts: vec![0; size],
            idle_steps: vec![0; size],
            initialized: false,
        }
    }

    pub fn entry(&self, k: usize) -> &[f64] {
        &self.entries[k * self.dim..(k + 1) * self.dim]
    }

    pub fn is_valid(&self) -> bool {
        self.size >= 2 && self.entries.len() == self.size * self.dim && self.entries.iter().all(|v| v.is_finite())
    }
}

/// Codes emitted by one quantization layer for one body part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSequence {
    pub part: BodyPart,
    pub layer: usize,
    pub codes: Vec<u32>,
}

impl CodeSequence {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Nearest entry by Euclidean distance; the lowest index wins ties.
pub fn quantize_nearest<'a>(vector: &[f64], codebook: &'a Codebook) -> Result<(usize, &'a [f64])> {
    if vector.len() != codebook.dim {
        return Err(Error::Shape(format!("vector has {} dims, codebook has {}", vector.len(), codebook.dim)));
    }
    if vector.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in quantizer input".into()));
    }
    let mut best = (0usize, f64::INFINITY);
    for k in 0..codebook.size {
        let d: f64 = vector.iter().zip(codebook.entry(k)).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok((best.0, codebook.entry(best.0)))
}

/// Output of residual quantization over `n` latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqEncoding {
    /// Codes per active layer, base layer first.
    pub codes: Vec<Vec<u32>>,
    /// Per-layer quantized vectors `ẑ^q`, each `n x f`.
    pub layer_vectors: Vec<Vec<f64>>,
    /// Sum of the active layers' quantized vectors.
    pub quantized: Vec<f64>,
    /// `residual_norms[q][i]` = norm of vector i's residual after layer q.
    pub residual_norms: Vec<Vec<f64>>,
}

impl RvqEncoding {
    pub fn mean_residual_norms(&self) -> Vec<f64> {
        self.residual_norms.iter().map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64).collect()
    }
}

/// Residual quantization with `r⁰ = z − ẑ⁰`, `r^q = r^{q−1} − ẑ^q`, using
/// layers `0..=layers_used`.
pub fn rvq_encode(latents: &[f64], dim: usize, codebooks: &[Codebook], layers_used: usize) -> Result<RvqEncoding> {
    if layers_used >= codebooks.len() {
        return Err(Error::Config(format!("layers_used {layers_used} exceeds {} residual layers", codebooks.len() - 1)));
    }
    if dim == 0 || latents.len() % dim != 0 {
        return Err(Error::Shape(format!("{} latent values do not form {dim}-d vectors", latents.len())));
    }
    let n = latents.len() / dim;
    let mut residual = latents.to_vec();
    let mut quantized = vec![0.0; latents.len()];
    let mut out = RvqEncoding {
        codes: Vec::with_capacity(layers_used + 1),
        layer_vectors: Vec::with_capacity(layers_used + 1),
        quantized: Vec::new(),
        residual_norms: Vec::with_capacity(layers_used + 1),
    };
    for book in &codebooks[..=layers_used] {
        let mut codes = Vec::with_capacity(n);
        let mut layer = vec![0.0; latents.len()];
        let mut norms = Vec::with_capacity(n);
        for i in 0..n {
            let r = &mut residual[i * dim..(i + 1) * dim];
            let (k, e) = quantize_nearest(r, book)?;
            codes.push(k as u32);
            layer[i * dim..(i + 1) * dim].copy_from_slice(e);
            for (rv, ev) in r.iter_mut().zip(e) {
                *rv -= ev;
            }
            norms.push(r.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        for (qv, lv) in quantized.iter_mut().zip(&layer) {
            *qv += lv;
        }
        out.codes.push(codes);
        out.layer_vectors.push(layer);
        out.residual_norms.push(norms);
    }
    out.quantized = quantized;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn book(entries: &[f64], dim: usize) -> Codebook {
        Codebook::from_entries(0, entries.len() / dim, dim, entries.to_vec())
    }

    #[test]
    fn exact_entry_maps_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Codebook::random(0, 8, 4, 1.0, &mut rng);
        let (k, e) = quantize_nearest(b.entry(3), &b).unwrap();
        assert_eq!(k, 3);
        assert_eq!(e, b.entry(3));
    }

    #[test]
    fn nearest_of_three() {
        let b = book(&[0.0, 0.0, 1.0, 0.0, 0.0, 1.0], 2);
        let (k, e) = quantize_nearest(&[0.9, 0.1], &b).unwrap();
        assert_eq!(k, 1);
        assert_eq!(e, &[1.0, 0.0]);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let b = book(&[1.0, 0.0, 5.0, 5.0, -1.0, 0.0], 2);
        assert_eq!(quantize_nearest(&[0.0, 0.0], &b).unwrap().0, 0);
    }

    #[test]
    fn nan_and_shape_errors() {
        let b = book(&[0.0, 0.0, 1.0, 1.0], 2);
        assert!(matches!(quantize_nearest(&[f64::NAN, 0.0], &b), Err(Error::Numeric(_))));
        assert!(matches!(quantize_nearest(&[0.0], &b), Err(Error::Shape(_))));
        assert!(matches!(rvq_encode(&[0.0; 3], 2, &[b], 0), Err(Error::Shape(_))));
    }

    #[test]
    fn base_layer_only_equals_plain_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let books: Vec<Codebook> = (0..3).map(|q| Codebook::random(q, 6, 3, 1.0, &mut rng)).collect();
        let z: Vec<f64> = (0..12).map(|i| (i as f64 * 0.77).sin()).collect();
        let enc = rvq_encode(&z, 3, &books, 0).unwrap();
        for i in 0..4 {
            let (_, e) = quantize_nearest(&z[i * 3..i * 3 + 3], &books[0]).unwrap();
            assert_eq!(&enc.quantized[i * 3..i * 3 + 3], e);
        }
    }

    #[test]
    fn exactly_representable_latent_has_zero_residual() {
        let b0 = book(&[1.0, 0.0, 0.0, 2.0, 3.0, 3.0], 2);
        let b1 = book(&[0.5, 0.5, 0.0, 0.0, -0.25, 0.125], 2);
        let z = [0.0 - 0.25, 2.0 + 0.125];
        let enc = rvq_encode(&z, 2, &[b0, b1], 1).unwrap();
        assert_eq!(enc.codes, vec![vec![1], vec![2]]);
        assert_eq!(enc.residual_norms[1][0], 0.0);
        assert_eq!(enc.quantized, z.to_vec());
    }

    /// Straight-line reimplementation of the residual recurrence.
    fn naive_norms(z: &[f64], dim: usize, books: &[Codebook]) -> Vec<Vec<f64>> {
        let n = z.len() / dim;
        let mut out = vec![vec![0.0; n]; books.len()];
        for i in 0..n {
            let mut r: Vec<f64> = z[i * dim..(i + 1) * dim].to_vec();
            for (q, b) in books.iter().enumerate() {
                let mut best = 0;
                let mut bd = f64::INFINITY;
                for k in 0..b.size {
                    let d: f64 = (0..dim).map(|j| (r[j] - b.entries[k * dim + j]).powi(2)).sum();
                    if d < bd {
                        bd = d;
                        best = k;
                    }
                }
                for j in 0..dim {
                    r[j] -= b.entries[best * dim + j];
                }
                out[q][i] = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
        }
        out
    }

    #[test]
    fn residual_norms_match_naive_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 5;
        let books: Vec<Codebook> =
            (0..7).map(|q| Codebook::random(q, 16, dim, 1.0 / (q + 1) as f64, &mut rng)).collect();
        let z: Vec<f64> = (0..40 * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let enc = rvq_encode(&z, dim, &books, 6).unwrap();
        let want = naive_norms(&z, dim, &books);
        for q in 0..7 {
            for i in 0..40 {
                assert!((enc.residual_norms[q][i] - want[q][i]).abs() < 1e-6);
            }
        }
    }
}
