//! 1D convolution over batched channel-major activations.
//!
//! Activations are stored as `(channels, batch * length)`: row `c` holds every
//! sample's time series for channel `c`, concatenated. Convolutions never mix
//! samples across the concatenation boundary.

use super::ops::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1dShape {
    pub fn out_len(&self, l_in: usize) -> usize {
        (l_in + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel
    }
}

fn im2col(shape: &Conv1dShape, x: &[f64], batch: usize, l_in: usize) -> Vec<f64> {
    let l_out = shape.out_len(l_in);
    let cols = batch * l_out;
    let mut col = vec![0.0; shape.c_in * shape.kernel * cols];
    for c in 0..shape.c_in {
        for kk in 0..shape.kernel {
            let row = &mut col[(c * shape.kernel + kk) * cols..(c * shape.kernel + kk + 1) * cols];
            for b in 0..batch {
                let src = &x[c * batch * l_in + b * l_in..c * batch * l_in + (b + 1) * l_in];
                for t in 0..l_out {
                    let pos = (t * shape.stride + kk) as isize - shape.pad as isize;
                    if pos >= 0 && (pos as usize) < l_in {
                        row[b * l_out + t] = src[pos as usize];
                    }
                }
            }
        }
    }
    col
}

fn col2im(shape: &Conv1dShape, col: &[f64], batch: usize, l_in: usize) -> Vec<f64> {
    let l_out = shape.out_len(l_in);
    let cols = batch * l_out;
    let mut dx = vec![0.0; shape.c_in * batch * l_in];
    for c in 0..shape.c_in {
        for kk in 0..shape.kernel {
            let row = &col[(c * shape.kernel + kk) * cols..(c * shape.kernel + kk + 1) * cols];
            for b in 0..batch {
                let dst = &mut dx[c * batch * l_in + b * l_in..c * batch * l_in + (b + 1) * l_in];
                for t in 0..l_out {
                    let pos = (t * shape.stride + kk) as isize - shape.pad as isize;
                    if pos >= 0 && (pos as usize) < l_in {
                        dst[pos as usize] += row[b * l_out + t];
                    }
                }
            }
        }
    }
    dx
}

/// Returns `(y, col)`; `col` is the unfolded input the backward pass needs.
pub fn conv1d_forward(
    shape: &Conv1dShape,
    x: &[f64],
    batch: usize,
    l_in: usize,
    w: &[f64],
    b: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(x.len(), shape.c_in * batch * l_in);
    let l_out = shape.out_len(l_in);
    let cols = batch * l_out;
    let col = im2col(shape, x, batch, l_in);
    let mut y = vec![0.0; shape.c_out * cols];
    gemm(shape.c_out, shape.c_in * shape.kernel, cols, 1.0, w, false, &col, false, 0.0, &mut y);
    for (o, row) in y.chunks_exact_mut(cols).enumerate() {
        for v in row.iter_mut() {
            *v += b[o];
        }
    }
    (y, col)
}

/// Accumulates `dw`/`db` and returns `dx` (empty when `need_dx` is false).
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    shape: &Conv1dShape,
    col: &[f64],
    dy: &[f64],
    batch: usize,
    l_in: usize,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Vec<f64> {
    let l_out = shape.out_len(l_in);
    let cols = batch * l_out;
    let ck = shape.c_in * shape.kernel;
    gemm(shape.c_out, cols, ck, 1.0, dy, false, col, true, 1.0, dw);
    for (o, row) in dy.chunks_exact(cols).enumerate() {
        db[o] += row.iter().sum::<f64>();
    }
    if !need_dx {
        return Vec::new();
    }
    let mut dcol = vec![0.0; ck * cols];
    gemm(ck, shape.c_out, cols, 1.0, w, true, dy, false, 0.0, &mut dcol);
    col2im(shape, &dcol, batch, l_in)
}

/// Nearest-neighbour upsampling by 2 along time.
pub fn upsample2_forward(x: &[f64], channels: usize, batch: usize, l_in: usize) -> Vec<f64> {
    let mut y = vec![0.0; channels * batch * l_in * 2];
    for c in 0..channels {
        for b in 0..batch {
            for t in 0..l_in {
                let v = x[c * batch * l_in + b * l_in + t];
                let base = c * batch * l_in * 2 + b * l_in * 2 + 2 * t;
                y[base] = v;
                y[base + 1] = v;
            }
        }
    }
    y
}

pub fn upsample2_backward(dy: &[f64], channels: usize, batch: usize, l_in: usize) -> Vec<f64> {
    let mut dx = vec![0.0; channels * batch * l_in];
    for c in 0..channels {
        for b in 0..batch {
            for t in 0..l_in {
                let base = c * batch * l_in * 2 + b * l_in * 2 + 2 * t;
                dx[c * batch * l_in + b * l_in + t] = dy[base] + dy[base + 1];
            }
        }
    }
    dx
}
