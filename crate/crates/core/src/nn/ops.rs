//! Forward and backward kernels for every layer, on NHWC tensors.
//!
//! These are plain functions; [`super::graph::Graph`] records which kernel
//! produced each value and calls the matching backward kernel.

use super::scalar::Real;
use super::tensor::Tensor;
use super::NnError;

/// Probability floor used by the KL divergence.
pub const PROB_FLOOR: f64 = 1e-12;

fn dims4(t: &Tensor<impl Real>, what: &str) -> Result<[usize; 4], NnError> {
    match t.shape() {
        [n, h, w, c] => Ok([*n, *h, *w, *c]),
        s => Err(NnError::ShapeMismatch(format!("{what}: expected rank-4 NHWC, got {s:?}"))),
    }
}

/// Padding before the first element for a "same" convolution.
pub fn same_pad_before(kernel: usize) -> usize {
    (kernel - 1) / 2
}

struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    pt: usize,
    pl: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }

    fn chunk(&self) -> usize {
        let hw = self.h * self.w;
        (262_144 / self.k().max(1)).max(64).min(hw.max(1))
    }
}

fn conv_geom<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<ConvGeom, NnError> {
    let [n, h, wd, cin] = dims4(x, "conv2d input")?;
    let [kh, kw, kcin, cout] = match w.shape() {
        [a, b, c, d] => [*a, *b, *c, *d],
        s => return Err(NnError::ShapeMismatch(format!("conv2d kernel: expected rank 4, got {s:?}"))),
    };
    if kcin != cin {
        return Err(NnError::ShapeMismatch(format!("conv2d: input has {cin} channels, kernel expects {kcin}")));
    }
    if kh == 0 || kw == 0 || h == 0 || wd == 0 {
        return Err(NnError::ShapeMismatch("conv2d: empty kernel or input".into()));
    }
    Ok(ConvGeom { n, h, w: wd, cin, kh, kw, cout, pt: same_pad_before(kh), pl: same_pad_before(kw) })
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], p0: usize, p1: usize, cols: &mut [T]) {
    let k = g.k();
    for p in p0..p1 {
        let (oh, ow) = (p / g.w, p % g.w);
        let row = &mut cols[(p - p0) * k..(p - p0 + 1) * k];
        for i in 0..g.kh {
            let hi = oh as isize + i as isize - g.pt as isize;
            for j in 0..g.kw {
                let wj = ow as isize + j as isize - g.pl as isize;
                let dst = &mut row[(i * g.kw + j) * g.cin..(i * g.kw + j + 1) * g.cin];
                if hi < 0 || hi >= g.h as isize || wj < 0 || wj >= g.w as isize {
                    dst.iter_mut().for_each(|v| *v = T::zero());
                } else {
                    let src = (hi as usize * g.w + wj as usize) * g.cin;
                    dst.copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], p0: usize, p1: usize, dx: &mut [T]) {
    let k = g.k();
    for p in p0..p1 {
        let (oh, ow) = (p / g.w, p % g.w);
        let row = &cols[(p - p0) * k..(p - p0 + 1) * k];
        for i in 0..g.kh {
            let hi = oh as isize + i as isize - g.pt as isize;
            if hi < 0 || hi >= g.h as isize {
                continue;
            }
            for j in 0..g.kw {
                let wj = ow as isize + j as isize - g.pl as isize;
                if wj < 0 || wj >= g.w as isize {
                    continue;
                }
                let src = &row[(i * g.kw + j) * g.cin..(i * g.kw + j + 1) * g.cin];
                let dst = (hi as usize * g.w + wj as usize) * g.cin;
                for (d, s) in dx[dst..dst + g.cin].iter_mut().zip(src) {
                    *d += *s;
                }
            }
        }
    }
}

/// Same-padded stride-1 cross-correlation. `w` is `[kh, kw, cin, cout]`.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>, NnError> {
    let g = conv_geom(x, w)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(NnError::ShapeMismatch(format!("conv2d bias: expected {}, got {}", g.cout, b.len())));
        }
    }
    let hw = g.h * g.w;
    let k = g.k();
    let mut out = Tensor::zeros(&[g.n, g.h, g.w, g.cout]);
    let chunk = g.chunk();
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); chunk * k] };
    for n in 0..g.n {
        let xs = &x.data()[n * hw * g.cin..(n + 1) * hw * g.cin];
        let ys = &mut out.data_mut()[n * hw * g.cout..(n + 1) * hw * g.cout];
        if let Some(b) = bias {
            for row in ys.chunks_mut(g.cout) {
                row.copy_from_slice(b.data());
            }
        }
        if g.pointwise() {
            T::gemm(hw, k, g.cout, T::one(), xs, false, w.data(), false, T::one(), ys);
            continue;
        }
        let mut p0 = 0;
        while p0 < hw {
            let p1 = (p0 + chunk).min(hw);
            im2col(&g, xs, p0, p1, &mut cols);
            T::gemm(p1 - p0, k, g.cout, T::one(), &cols[..(p1 - p0) * k], false, w.data(), false, T::one(), &mut ys[p0 * g.cout..p1 * g.cout]);
            p0 = p1;
        }
    }
    Ok(out)
}

pub struct ConvGrads<T: Real> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Vec<T>,
}

pub fn conv2d_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &[T], want_dx: bool) -> Result<ConvGrads<T>, NnError> {
    let g = conv_geom(x, w)?;
    let hw = g.h * g.w;
    let k = g.k();
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![T::zero(); g.cout];
    let mut dx = if want_dx { Some(Tensor::zeros(x.shape())) } else { None };
    let chunk = g.chunk();
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); chunk * k] };
    let mut dcols = if g.pointwise() || !want_dx { Vec::new() } else { vec![T::zero(); chunk * k] };
    for n in 0..g.n {
        let xs = &x.data()[n * hw * g.cin..(n + 1) * hw * g.cin];
        let dys = &dy[n * hw * g.cout..(n + 1) * hw * g.cout];
        for row in dys.chunks(g.cout) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += *v;
            }
        }
        if g.pointwise() {
            T::gemm(k, hw, g.cout, T::one(), xs, true, dys, false, T::one(), dw.data_mut());
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx.data_mut()[n * hw * g.cin..(n + 1) * hw * g.cin];
                T::gemm(hw, g.cout, k, T::one(), dys, false, w.data(), true, T::zero(), dxs);
            }
            continue;
        }
        let mut p0 = 0;
        while p0 < hw {
            let p1 = (p0 + chunk).min(hw);
            let rows = p1 - p0;
            im2col(&g, xs, p0, p1, &mut cols);
            let dyc = &dys[p0 * g.cout..p1 * g.cout];
            T::gemm(k, rows, g.cout, T::one(), &cols[..rows * k], true, dyc, false, T::one(), dw.data_mut());
            if let Some(dx) = dx.as_mut() {
                T::gemm(rows, g.cout, k, T::one(), dyc, false, w.data(), true, T::zero(), &mut dcols[..rows * k]);
                let dxs = &mut dx.data_mut()[n * hw * g.cin..(n + 1) * hw * g.cin];
                col2im_add(&g, &dcols[..rows * k], p0, p1, dxs);
            }
            p0 = p1;
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// Window geometry of a 2-D max pooling layer. Windows are clipped to the
/// valid input region, so padding never contributes a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub same: bool,
}

impl PoolSpec {
    /// 2x2 stride-2 with ceil-mode output size.
    pub const HALVE: PoolSpec = PoolSpec { kh: 2, kw: 2, sh: 2, sw: 2, same: false };
    /// 3x3 stride-1 with same padding (inception pool branch).
    pub const SAME3: PoolSpec = PoolSpec { kh: 3, kw: 3, sh: 1, sw: 1, same: true };

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        if self.same {
            (h.div_ceil(self.sh), w.div_ceil(self.sw))
        } else {
            ((h.saturating_sub(self.kh)).div_ceil(self.sh) + 1, (w.saturating_sub(self.kw)).div_ceil(self.sw) + 1)
        }
    }

    fn pads(&self) -> (usize, usize) {
        if self.same {
            (same_pad_before(self.kh), same_pad_before(self.kw))
        } else {
            (0, 0)
        }
    }
}

/// Returns the pooled tensor and, per output element, the flat input index
/// of the selected maximum.
pub fn maxpool_forward<T: Real>(x: &Tensor<T>, spec: PoolSpec) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    let [n, h, w, c] = dims4(x, "maxpool input")?;
    let (oh, ow) = spec.output_hw(h, w);
    let (pt, pl) = spec.pads();
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    let mut arg = vec![0usize; n * oh * ow * c];
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..n {
        for i in 0..oh {
            let h0 = (i * spec.sh) as isize - pt as isize;
            let hs = h0.max(0) as usize;
            let he = ((h0 + spec.kh as isize).max(0) as usize).min(h);
            for j in 0..ow {
                let w0 = (j * spec.sw) as isize - pl as isize;
                let ws = w0.max(0) as usize;
                let we = ((w0 + spec.kw as isize).max(0) as usize).min(w);
                let obase = ((b * oh + i) * ow + j) * c;
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut at = ((b * h + hs) * w + ws) * c + ch;
                    for hh in hs..he {
                        for ww in ws..we {
                            let idx = ((b * h + hh) * w + ww) * c + ch;
                            if xd[idx] > best {
                                best = xd[idx];
                                at = idx;
                            }
                        }
                    }
                    od[obase + ch] = best;
                    arg[obase + ch] = at;
                }
            }
        }
    }
    Ok((out, arg))
}

/// Scatters output gradients back through recorded argmax indices.
pub fn scatter_argmax<T: Real>(input_len: usize, argmax: &[usize], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(dy) {
        dx[i] += g;
    }
    dx
}

/// Max over the spatial dimensions: `[N,H,W,C] -> [N,C]`.
pub fn global_maxpool_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    let [n, h, w, c] = dims4(x, "global maxpool input")?;
    let mut out = Tensor::full(&[n, c], T::neg_infinity());
    let mut arg = vec![0usize; n * c];
    let xd = x.data();
    for b in 0..n {
        let base = b * h * w * c;
        let od = &mut out.data_mut()[b * c..(b + 1) * c];
        let ad = &mut arg[b * c..(b + 1) * c];
        for p in 0..h * w {
            let row = &xd[base + p * c..base + (p + 1) * c];
            for ch in 0..c {
                if p == 0 || row[ch] > od[ch] {
                    od[ch] = row[ch];
                    ad[ch] = base + p * c + ch;
                }
            }
        }
    }
    Ok((out, arg))
}

/// Per-channel statistics of a channel-last tensor.
pub fn channel_moments<T: Real>(x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let c = x.last_dim();
    let m = (x.len() / c).max(1) as f64;
    let mut sum = vec![0.0f64; c];
    for row in x.data().chunks(c) {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v.f64();
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let mut var = vec![0.0f64; c];
    for row in x.data().chunks(c) {
        for ((s, v), mu) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.f64() - mu;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}

/// `y = gamma * (x - mean) * inv_std + beta`, channel-last.
pub fn batchnorm_apply<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T], mean: &[T], inv_std: &[T]) -> Tensor<T> {
    let c = x.last_dim();
    let mut y = x.clone();
    for row in y.data_mut().chunks_mut(c) {
        for ch in 0..c {
            row[ch] = gamma[ch] * (row[ch] - mean[ch]) * inv_std[ch] + beta[ch];
        }
    }
    y
}

pub struct BatchNormGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

/// Backward of batchnorm. With `batch_stats` the mean and variance are
/// functions of `x`; otherwise they are constants (eval mode).
pub fn batchnorm_backward<T: Real>(x: &Tensor<T>, gamma: &[T], mean: &[T], inv_std: &[T], dy: &[T], batch_stats: bool) -> BatchNormGrads<T> {
    let c = x.last_dim();
    let m = (x.len() / c).max(1) as f64;
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for (row, drow) in x.data().chunks(c).zip(dy.chunks(c)) {
        for ch in 0..c {
            let xhat = ((row[ch] - mean[ch]) * inv_std[ch]).f64();
            dbeta[ch] += drow[ch].f64();
            dgamma[ch] += drow[ch].f64() * xhat;
        }
    }
    let mut dx = vec![T::zero(); x.len()];
    for ((row, drow), dxrow) in x.data().chunks(c).zip(dy.chunks(c)).zip(dx.chunks_mut(c)) {
        for ch in 0..c {
            let scale = (gamma[ch] * inv_std[ch]).f64();
            let v = if batch_stats {
                let xhat = ((row[ch] - mean[ch]) * inv_std[ch]).f64();
                scale * (drow[ch].f64() - dbeta[ch] / m - xhat * dgamma[ch] / m)
            } else {
                scale * drow[ch].f64()
            };
            dxrow[ch] = T::of(v);
        }
    }
    BatchNormGrads { dx, dgamma: dgamma.into_iter().map(T::of).collect(), dbeta: dbeta.into_iter().map(T::of).collect() }
}

/// `[N, in] x [in, out] + b`.
pub fn dense_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>, NnError> {
    let (n, din) = match x.shape() {
        [n, d] => (*n, *d),
        s => return Err(NnError::ShapeMismatch(format!("dense input: expected rank 2, got {s:?}"))),
    };
    let dout = match w.shape() {
        [i, o] if *i == din => *o,
        s => return Err(NnError::ShapeMismatch(format!("dense weight {s:?} incompatible with input width {din}"))),
    };
    let mut y = Tensor::zeros(&[n, dout]);
    if let Some(b) = b {
        if b.len() != dout {
            return Err(NnError::ShapeMismatch(format!("dense bias: expected {dout}, got {}", b.len())));
        }
        for row in y.data_mut().chunks_mut(dout) {
            row.copy_from_slice(b.data());
        }
    }
    T::gemm(n, din, dout, T::one(), x.data(), false, w.data(), false, T::one(), y.data_mut());
    Ok(y)
}

pub fn dense_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[1];
    let mut dx = vec![T::zero(); n * din];
    let mut dw = vec![T::zero(); din * dout];
    T::gemm(n, dout, din, T::one(), dy, false, w.data(), true, T::zero(), &mut dx);
    T::gemm(din, n, dout, T::one(), x.data(), true, dy, false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); dout];
    for row in dy.chunks(dout) {
        for (a, v) in db.iter_mut().zip(row) {
            *a += *v;
        }
    }
    (dx, dw, db)
}

/// Softmax over the last dimension, stabilized by max subtraction.
pub fn softmax_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.last_dim();
    let mut y = x.clone();
    for row in y.data_mut().chunks_mut(c) {
        let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    y
}

pub fn softmax_backward<T: Real>(y: &Tensor<T>, dy: &[T]) -> Vec<T> {
    let c = y.last_dim();
    let mut dx = vec![T::zero(); y.len()];
    for ((yr, dyr), dxr) in y.data().chunks(c).zip(dy.chunks(c)).zip(dx.chunks_mut(c)) {
        let dot: T = yr.iter().zip(dyr).map(|(a, b)| *a * *b).sum();
        for i in 0..c {
            dxr[i] = yr[i] * (dyr[i] - dot);
        }
    }
    dx
}

/// `sum_n sum_c y * ln(y / max(p, floor))`, zero-label terms dropped.
pub fn kl_forward<T: Real>(target: &[T], pred: &[T]) -> f64 {
    target
        .iter()
        .zip(pred)
        .filter(|(y, _)| y.f64() > 0.0)
        .map(|(y, p)| {
            let y = y.f64();
            y * (y.ln() - p.f64().max(PROB_FLOOR).ln())
        })
        .sum()
}

/// Gradient of the KL loss with respect to the softmax logits:
/// `upstream * (p * sum(y) - y)` per row.
pub fn softmax_kl_backward<T: Real>(target: &[T], pred: &Tensor<T>, upstream: T) -> Vec<T> {
    let c = pred.last_dim();
    let mut dx = Vec::with_capacity(pred.len());
    for (yr, pr) in target.chunks(c).zip(pred.data().chunks(c)) {
        let mass: T = yr.iter().copied().sum();
        dx.extend(yr.iter().zip(pr).map(|(y, p)| upstream * (*p * mass - *y)));
    }
    dx
}

pub fn kl_backward<T: Real>(target: &[T], pred: &[T], upstream: T) -> Vec<T> {
    target.iter().zip(pred).map(|(y, p)| if y.f64() > 0.0 && p.f64() >= PROB_FLOOR { -upstream * *y / *p } else { T::zero() }).collect()
}
