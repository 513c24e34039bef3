//! Layer primitives on `[N, C, L]` tensors.

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Dense `[N, C, L]` activation tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub l: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, l: usize) -> Self {
        Self {
            n,
            c,
            l,
            data: vec![0.0; n * c * l],
        }
    }

    pub fn from_vec(n: usize, c: usize, l: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * l {
            return Err(Error::ShapeMismatch(format!(
                "tensor [{n}, {c}, {l}] needs {} values, got {}",
                n * c * l,
                data.len()
            )));
        }
        Ok(Self { n, c, l, data })
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.c * self.l;
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.c * self.l;
        &mut self.data[i * s..(i + 1) * s]
    }
}

/// `c = a * b + beta * c` for an `m x k` by `k x n` product with explicit
/// strides (row stride, column stride) for `a` and `b`; `c` is row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 1-D convolution geometry. Weights are `[c_out, c_in, kernel]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    pub fn out_len(&self, l: usize) -> usize {
        (l + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel
    }

    fn rows(&self) -> usize {
        self.c_in * self.kernel
    }

    fn check(&self, x: &Tensor, w: &[f64], b: Option<&[f64]>) -> Result<()> {
        if x.c != self.c_in || w.len() != self.weight_len() || b.is_some_and(|b| b.len() != self.c_out) {
            return Err(Error::ShapeMismatch(format!(
                "conv {}->{} k{}: input has {} channels, {} weights",
                self.c_in,
                self.c_out,
                self.kernel,
                x.c,
                w.len()
            )));
        }
        if x.l + 2 * self.padding < self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "input length {} too short for kernel {}",
                x.l, self.kernel
            )));
        }
        Ok(())
    }

    fn im2col(&self, x: &[f64], l: usize, l_out: usize, col: &mut [f64]) {
        for ci in 0..self.c_in {
            let xs = &x[ci * l..(ci + 1) * l];
            for kk in 0..self.kernel {
                let row = &mut col[(ci * self.kernel + kk) * l_out..][..l_out];
                for (j, r) in row.iter_mut().enumerate() {
                    let p = (j * self.stride + kk) as isize - self.padding as isize;
                    *r = if p >= 0 && (p as usize) < l { xs[p as usize] } else { 0.0 };
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], l: usize, l_out: usize, dx: &mut [f64]) {
        for ci in 0..self.c_in {
            for kk in 0..self.kernel {
                let row = &col[(ci * self.kernel + kk) * l_out..][..l_out];
                for (j, r) in row.iter().enumerate() {
                    let p = (j * self.stride + kk) as isize - self.padding as isize;
                    if p >= 0 && (p as usize) < l {
                        dx[ci * l + p as usize] += r;
                    }
                }
            }
        }
    }

    /// Forward pass. When `cols` is given it receives the unfolded input
    /// needed by [`Conv1d::backward`].
    pub fn forward(&self, x: &Tensor, w: &[f64], b: Option<&[f64]>, cols: Option<&mut Vec<f64>>) -> Result<Tensor> {
        self.check(x, w, b)?;
        let l_out = self.out_len(x.l);
        let per = self.rows() * l_out;
        let mut y = Tensor::zeros(x.n, self.c_out, l_out);
        let mut scratch = Vec::new();
        let (store, keep) = match cols {
            Some(c) => {
                c.clear();
                c.resize(per * x.n, 0.0);
                (c, true)
            }
            None => {
                scratch.resize(per, 0.0);
                (&mut scratch, false)
            }
        };
        for s in 0..x.n {
            let col = if keep { &mut store[s * per..(s + 1) * per] } else { &mut store[..] };
            self.im2col(x.sample(s), x.l, l_out, col);
            let out = y.sample_mut(s);
            gemm(self.c_out, self.rows(), l_out, w, (self.rows(), 1), col, (l_out, 1), 0.0, out);
            if let Some(b) = b {
                for (co, bias) in b.iter().enumerate() {
                    out[co * l_out..(co + 1) * l_out].iter_mut().for_each(|v| *v += bias);
                }
            }
        }
        Ok(y)
    }

    /// Accumulates weight (and bias) gradients and returns the input
    /// gradient. `cols` must come from the matching forward call.
    pub fn backward(
        &self,
        l_in: usize,
        cols: &[f64],
        w: &[f64],
        dw: &mut [f64],
        db: Option<&mut [f64]>,
        dy: &Tensor,
    ) -> Tensor {
        let l_out = dy.l;
        let per = self.rows() * l_out;
        let mut dx = Tensor::zeros(dy.n, self.c_in, l_in);
        let mut dcol = vec![0.0; per];
        for s in 0..dy.n {
            let col = &cols[s * per..(s + 1) * per];
            let g = dy.sample(s);
            gemm(self.c_out, l_out, self.rows(), g, (l_out, 1), col, (1, l_out), 1.0, dw);
            gemm(self.rows(), self.c_out, l_out, w, (1, self.rows()), g, (l_out, 1), 0.0, &mut dcol);
            self.col2im(&dcol, l_in, l_out, dx.sample_mut(s));
        }
        if let Some(db) = db {
            for s in 0..dy.n {
                for (co, d) in db.iter_mut().enumerate() {
                    *d += dy.sample(s)[co * l_out..(co + 1) * l_out].iter().sum::<f64>();
                }
            }
        }
        dx
    }
}

/// Plain convolution: `x` is `[N, C_in, L]`, `w` is `[C_out, C_in, K]`.
pub fn conv1d_forward(x: &Tensor, w: &[f64], b: Option<&[f64]>, c_out: usize, stride: usize, padding: usize) -> Result<Tensor> {
    if stride == 0 || c_out == 0 || x.c == 0 || !w.len().is_multiple_of(c_out * x.c) {
        return Err(Error::ShapeMismatch(format!(
            "{} weights do not factor as [{c_out}, {}, K]",
            w.len(),
            x.c
        )));
    }
    let conv = Conv1d {
        c_in: x.c,
        c_out,
        kernel: w.len() / (c_out * x.c),
        stride,
        padding,
    };
    conv.forward(x, w, b, None)
}

/// Cached quantities from a training-mode batch-norm pass.
#[derive(Debug, Clone, Default)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Batch statistics over `(N, L)` per channel: biased mean and variance.
fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let m = (x.n * x.l) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for s in 0..x.n {
        for (c, mu) in mean.iter_mut().enumerate() {
            *mu += x.sample(s)[c * x.l..(c + 1) * x.l].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for s in 0..x.n {
        for c in 0..x.c {
            var[c] += x.sample(s)[c * x.l..(c + 1) * x.l]
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}

fn apply_affine(x: &mut Tensor, scale: &[f64], shift: &[f64]) {
    let l = x.l;
    for s in 0..x.n {
        let xs = x.sample_mut(s);
        for (c, (a, b)) in scale.iter().zip(shift).enumerate() {
            xs[c * l..(c + 1) * l].iter_mut().for_each(|v| *v = *v * a + b);
        }
    }
}

/// Training-mode batch norm in place. `running` holds `[mean | var]` and is
/// updated with momentum when given.
pub fn batchnorm_train(x: &mut Tensor, gamma: &[f64], beta: &[f64], running: Option<&mut [f64]>) -> BnCache {
    let (mean, var) = channel_stats(x);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let shift: Vec<f64> = mean.iter().zip(&inv_std).map(|(m, s)| -m * s).collect();
    apply_affine(x, &inv_std, &shift);
    let xhat = x.data.clone();
    apply_affine(x, gamma, beta);
    if let Some(r) = running {
        let m = (x.n * x.l) as f64;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let (rm, rv) = r.split_at_mut(x.c);
        for c in 0..x.c {
            rm[c] = (1.0 - BN_MOMENTUM) * rm[c] + BN_MOMENTUM * mean[c];
            rv[c] = (1.0 - BN_MOMENTUM) * rv[c] + BN_MOMENTUM * var[c] * unbias;
        }
    }
    BnCache { xhat, inv_std }
}

/// Inference-mode batch norm in place using running statistics.
pub fn batchnorm_eval(x: &mut Tensor, gamma: &[f64], beta: &[f64], running: &[f64]) {
    let (rm, rv) = running.split_at(x.c);
    let scale: Vec<f64> = gamma.iter().zip(rv).map(|(g, v)| g / (v + BN_EPS).sqrt()).collect();
    let shift: Vec<f64> = (0..x.c).map(|c| beta[c] - rm[c] * scale[c]).collect();
    apply_affine(x, &scale, &shift);
}

/// Turns `dy` into `dx` in place and accumulates `dgamma`, `dbeta`.
pub fn batchnorm_backward(dy: &mut Tensor, cache: &BnCache, gamma: &[f64], dgamma: &mut [f64], dbeta: &mut [f64]) {
    let (c_n, l) = (dy.c, dy.l);
    let m = (dy.n * l) as f64;
    let mut sum_dy = vec![0.0; c_n];
    let mut sum_dy_xhat = vec![0.0; c_n];
    let stride = c_n * l;
    for s in 0..dy.n {
        for c in 0..c_n {
            let off = s * stride + c * l;
            for i in off..off + l {
                sum_dy[c] += dy.data[i];
                sum_dy_xhat[c] += dy.data[i] * cache.xhat[i];
            }
        }
    }
    for c in 0..c_n {
        dgamma[c] += sum_dy_xhat[c];
        dbeta[c] += sum_dy[c];
    }
    for s in 0..dy.n {
        for c in 0..c_n {
            let k = gamma[c] * cache.inv_std[c] / m;
            let off = s * stride + c * l;
            for i in off..off + l {
                dy.data[i] = k * (m * dy.data[i] - sum_dy[c] - cache.xhat[i] * sum_dy_xhat[c]);
            }
        }
    }
}

pub fn relu(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `dy` by the positive entries of the ReLU output `y`.
pub fn relu_backward(dy: &mut Tensor, y: &Tensor) {
    dy.data.iter_mut().zip(&y.data).for_each(|(d, v)| {
        if *v <= 0.0 {
            *d = 0.0
        }
    });
}
