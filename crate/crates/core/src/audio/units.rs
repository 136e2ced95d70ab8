//! Discrete audio units: k-means over framewise features.

use std::collections::HashSet;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{extract_features, AudioFeatureFrames, FEATURE_DIM};
use super::wav::Waveform;
use crate::error::{Error, Result};
use crate::motion::write_atomic;

pub const UNITS_MAGIC: &[u8; 4] = b"MECA";
pub const UNITS_VERSION: u32 = 1;
pub const DEFAULT_UNITS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct UnitCodebook {
    pub centers: Vec<[f64; FEATURE_DIM]>,
}

#[derive(Debug, Clone)]
pub struct KMeansReport {
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64; FEATURE_DIM], b: &[f64; FEATURE_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl UnitCodebook {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Nearest center, lowest index on ties.
    pub fn assign(&self, frame: &[f64; FEATURE_DIM]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centers.iter().enumerate() {
            let d = sq_dist(frame, c);
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }

    pub fn tokenize_features(&self, features: &AudioFeatureFrames) -> Vec<u32> {
        features.frames.iter().map(|f| self.assign(f) as u32).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * FEATURE_DIM * 4);
        out.extend_from_slice(UNITS_MAGIC);
        out.extend_from_slice(&UNITS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(FEATURE_DIM as u32).to_le_bytes());
        for c in &self.centers {
            for v in c {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::format(bytes.len() as u64, "truncated unit codebook header"));
        }
        if &bytes[..4] != UNITS_MAGIC {
            return Err(Error::format(0, "bad magic, expected MECA"));
        }
        let version = LittleEndian::read_u32(&bytes[4..8]);
        if version != UNITS_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let k = LittleEndian::read_u32(&bytes[8..12]) as usize;
        let d = LittleEndian::read_u32(&bytes[12..16]) as usize;
        if d != FEATURE_DIM {
            return Err(Error::format(12, format!("feature dimension {d}, expected {FEATURE_DIM}")));
        }
        if k < 2 {
            return Err(Error::format(8, format!("codebook size {k} < 2")));
        }
        let need = 16 + k * d * 4;
        if bytes.len() != need {
            return Err(Error::format(bytes.len().min(need) as u64, format!("expected {need} bytes, found {}", bytes.len())));
        }
        let mut centers = Vec::with_capacity(k);
        for i in 0..k {
            let mut c = [0.0; FEATURE_DIM];
            for (j, v) in c.iter_mut().enumerate() {
                let o = 16 + (i * d + j) * 4;
                *v = LittleEndian::read_f32(&bytes[o..o + 4]) as f64;
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(16 + (i * d * 4) as u64, "non-finite center"));
            }
            centers.push(c);
        }
        Ok(UnitCodebook { centers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Lloyd's k-means with k-means++ seeding. Centers are rounded to f32 so a
/// saved and reloaded codebook tokenizes identically.
pub fn fit_units(
    corpus: &[AudioFeatureFrames],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(UnitCodebook, KMeansReport)> {
    let points: Vec<[f64; FEATURE_DIM]> = corpus.iter().flat_map(|f| f.frames.iter().copied()).collect();
    fit_points(&points, k, seed, max_iter)
}

pub(crate) fn fit_points(
    points: &[[f64; FEATURE_DIM]],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(UnitCodebook, KMeansReport)> {
    if points.is_empty() {
        return Err(Error::Config("empty feature corpus".into()));
    }
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 units, got {k}")));
    }
    let distinct: HashSet<[u64; FEATURE_DIM]> = points.iter().map(|p| p.map(f64::to_bits)).collect();
    if k > distinct.len() {
        return Err(Error::Config(format!("{k} units requested but only {} distinct feature frames", distinct.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }

    let mut book = UnitCodebook { centers };
    let mut assign = vec![usize::MAX; points.len()];
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut obj = 0.0;
        for (i, p) in points.iter().enumerate() {
            let a = book.assign(p);
            obj += sq_dist(p, &book.centers[a]);
            if a != assign[i] {
                assign[i] = a;
                changed = true;
            }
        }
        objective.push(obj);
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; FEATURE_DIM]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, (s, &n)) in book.centers.iter_mut().zip(sums.iter().zip(&counts)) {
            if n > 0 {
                for (cv, sv) in c.iter_mut().zip(s) {
                    *cv = sv / n as f64;
                }
            }
        }
    }
    for c in &mut book.centers {
        for v in c.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
    Ok((book, KMeansReport { objective, iterations }))
}

pub fn tokenize_audio(wave: &Waveform, codebook: &UnitCodebook) -> Result<Vec<u32>> {
    Ok(codebook.tokenize_features(&extract_features(wave)?))
}
