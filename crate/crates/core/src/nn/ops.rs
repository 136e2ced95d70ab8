/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
///
/// `op(a)` is `m x k` and `op(b)` is `k x n`. When `ta` is set, `a` is stored
/// as `k x m`; likewise `tb` means `b` is stored as `n x k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above against the declared shapes and
    // the strides describe exactly those row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y (rows x out) = x (rows x in) * w (in x out) + b`.
pub fn linear_forward(x: &[f64], rows: usize, w: &[f64], b: Option<&[f64]>, inp: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * out];
    gemm(rows, inp, out, 1.0, x, false, w, false, 0.0, &mut y);
    if let Some(b) = b {
        add_bias(&mut y, b);
    }
    y
}

/// Accumulates weight/bias gradients and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    w: &[f64],
    inp: usize,
    out: usize,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
    need_dx: bool,
) -> Vec<f64> {
    if let Some(dw) = dw {
        gemm(inp, rows, out, 1.0, x, true, dy, false, 1.0, dw);
    }
    if let Some(db) = db {
        bias_backward(dy, db);
    }
    if !need_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0; rows * inp];
    gemm(rows, out, inp, 1.0, dy, false, w, true, 0.0, &mut dx);
    dx
}

pub fn add_bias(y: &mut [f64], b: &[f64]) {
    for row in y.chunks_exact_mut(b.len()) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

pub fn bias_backward(dy: &[f64], db: &mut [f64]) {
    for row in dy.chunks_exact(db.len()) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
}

pub fn relu_forward(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// `dy` masked in place by the post-activation output `y`.
pub fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (d, v) in dy.iter_mut().zip(y) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu_forward(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
        .collect()
}

/// Gradient through the tanh-approximated GELU given the pre-activation `x`.
pub fn gelu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let u = GELU_C * (v + 0.044715 * v * v * v);
            let t = u.tanh();
            let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
            d * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
        })
        .collect()
}

pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

const LN_EPS: f64 = 1e-5;

pub fn layer_norm_forward(x: &[f64], dim: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let rows = x.len() / dim;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..dim {
            let h = (row[i] - mean) * rs;
            xhat[r * dim + i] = h;
            y[r * dim + i] = h * gamma[i] + beta[i];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    dy: &[f64],
    dim: usize,
    gamma: &[f64],
    dgamma: Option<&mut [f64]>,
    dbeta: Option<&mut [f64]>,
) -> Vec<f64> {
    let rows = dy.len() / dim;
    if let Some(dg) = dgamma {
        for r in 0..rows {
            for i in 0..dim {
                dg[i] += dy[r * dim + i] * cache.xhat[r * dim + i];
            }
        }
    }
    if let Some(db) = dbeta {
        bias_backward(dy, db);
    }
    let mut dx = vec![0.0; dy.len()];
    for r in 0..rows {
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let d = &dy[r * dim..(r + 1) * dim];
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for i in 0..dim {
            let g = d[i] * gamma[i];
            sum_g += g;
            sum_gx += g * xh[i];
        }
        let n = dim as f64;
        for i in 0..dim {
            let g = d[i] * gamma[i];
            dx[r * dim + i] = cache.rstd[r] * (g - sum_g / n - xh[i] * sum_gx / n);
        }
    }
    dx
}

/// Numerically stable softmax of one row, written into a new vector.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

pub fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&l| l - lse).collect()
}
