//! NCHW forward/backward kernels. Convolutions lower to GEMM through a
//! per-sample im2col buffer; batch partial sums are reduced in sample order
//! so results do not depend on the thread count.

use rayon::prelude::*;

use crate::nn::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.n * self.sample()
    }
}

/// Unfold one `(c, h, w)` sample into `(c·k·k, h·w)` columns, zero padded so
/// the output keeps the input size (stride 1, odd `k`).
pub fn im2col<F: Scalar>(x: &[F], c: usize, h: usize, w: usize, k: usize, cols: &mut [F]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let src = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(F::zero());
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= w as isize {
                            F::zero()
                        } else {
                            srow[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `dx`.
pub fn col2im<F: Scalar>(cols: &[F], c: usize, h: usize, w: usize, k: usize, dx: &mut [F]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let dst = &mut dx[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dxo = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    for (x, v) in src[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = x as isize + dxo;
                        if sx >= 0 && sx < w as isize {
                            drow[sx as usize] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded stride-1 convolution; `weight` is `(o, c, k, k)`.
pub fn conv2d_forward<F: Scalar>(
    x: &[F],
    d: Dims,
    weight: &[F],
    bias: &[F],
    out_c: usize,
    k: usize,
) -> Vec<F> {
    let hw = d.plane();
    let ckk = d.c * k * k;
    let mut out = vec![F::zero(); d.n * out_c * hw];
    out.par_chunks_mut(out_c * hw)
        .zip(x.par_chunks(d.sample()))
        .for_each_init(
            || if k == 1 { Vec::new() } else { vec![F::zero(); ckk * hw] },
            |cols, (y, xs)| {
                for (o, plane) in y.chunks_mut(hw).enumerate() {
                    plane.fill(bias[o]);
                }
                let src: &[F] = if k == 1 {
                    xs
                } else {
                    im2col(xs, d.c, d.h, d.w, k, cols);
                    cols
                };
                F::gemm(
                    out_c, ckk, hw, weight, ckk as isize, 1, src, hw as isize, 1, F::one(), y,
                    hw as isize, 1,
                );
            },
        );
    out
}

pub struct ConvGrads<F> {
    pub dx: Option<Vec<F>>,
    pub dw: Vec<F>,
    pub db: Vec<F>,
}

pub fn conv2d_backward<F: Scalar>(
    x: &[F],
    d: Dims,
    weight: &[F],
    dout: &[F],
    out_c: usize,
    k: usize,
    need_dx: bool,
) -> ConvGrads<F> {
    let hw = d.plane();
    let ckk = d.c * k * k;
    let wlen = out_c * ckk;

    let per_sample: Vec<(Vec<F>, Option<Vec<F>>)> = x
        .par_chunks(d.sample())
        .zip(dout.par_chunks(out_c * hw))
        .map(|(xs, dy)| {
            let cols_buf;
            let cols: &[F] = if k == 1 {
                xs
            } else {
                let mut buf = vec![F::zero(); ckk * hw];
                im2col(xs, d.c, d.h, d.w, k, &mut buf);
                cols_buf = buf;
                &cols_buf
            };
            let mut dw = vec![F::zero(); wlen];
            // dW = dY · colsᵀ
            F::gemm(
                out_c, hw, ckk, dy, hw as isize, 1, cols, 1, hw as isize, F::zero(), &mut dw,
                ckk as isize, 1,
            );
            let dx = need_dx.then(|| {
                // dcols = Wᵀ · dY
                let mut dcols = vec![F::zero(); ckk * hw];
                F::gemm(
                    ckk, out_c, hw, weight, 1, ckk as isize, dy, hw as isize, 1, F::zero(),
                    &mut dcols, hw as isize, 1,
                );
                if k == 1 {
                    dcols
                } else {
                    let mut dxs = vec![F::zero(); d.sample()];
                    col2im(&dcols, d.c, d.h, d.w, k, &mut dxs);
                    dxs
                }
            });
            (dw, dx)
        })
        .collect();

    let mut dw = vec![F::zero(); wlen];
    let mut dx = need_dx.then(|| Vec::with_capacity(d.len()));
    for (pw, px) in per_sample {
        for (a, b) in dw.iter_mut().zip(&pw) {
            *a += *b;
        }
        if let (Some(dx), Some(px)) = (dx.as_mut(), px) {
            dx.extend_from_slice(&px);
        }
    }
    let db = channel_sums(dout, Dims::new(d.n, out_c, d.h, d.w));
    ConvGrads { dx, dw, db }
}

/// Per-channel sums over batch and space.
pub fn channel_sums<F: Scalar>(x: &[F], d: Dims) -> Vec<F> {
    let hw = d.plane();
    let mut s = vec![F::zero(); d.c];
    for sample in x.chunks(d.sample()) {
        for (ch, plane) in sample.chunks(hw).enumerate() {
            s[ch] += plane.iter().copied().sum::<F>();
        }
    }
    s
}

/// Rearranges tconv weights `(o, c, 2, 2)` into a `(o·4, c)` matrix.
fn tconv_matrix<F: Scalar>(weight: &[F], c: usize, out_c: usize) -> Vec<F> {
    let mut m = vec![F::zero(); out_c * 4 * c];
    for o in 0..out_c {
        for ci in 0..c {
            for ab in 0..4 {
                m[(o * 4 + ab) * c + ci] = weight[(o * c + ci) * 4 + ab];
            }
        }
    }
    m
}

/// 2×2 stride-2 transposed convolution; output is `(n, o, 2h, 2w)`.
pub fn tconv2_forward<F: Scalar>(x: &[F], d: Dims, weight: &[F], bias: &[F], out_c: usize) -> Vec<F> {
    let hw = d.plane();
    let (oh, ow) = (2 * d.h, 2 * d.w);
    let wm = tconv_matrix(weight, d.c, out_c);
    let mut out = vec![F::zero(); d.n * out_c * oh * ow];
    out.par_chunks_mut(out_c * oh * ow)
        .zip(x.par_chunks(d.sample()))
        .for_each(|(y, xs)| {
            let mut tmp = vec![F::zero(); out_c * 4 * hw];
            F::gemm(
                out_c * 4, d.c, hw, &wm, d.c as isize, 1, xs, hw as isize, 1, F::zero(), &mut tmp,
                hw as isize, 1,
            );
            for o in 0..out_c {
                for ab in 0..4 {
                    let (a, b) = (ab / 2, ab % 2);
                    let src = &tmp[(o * 4 + ab) * hw..(o * 4 + ab + 1) * hw];
                    for i in 0..d.h {
                        for j in 0..d.w {
                            y[(o * oh + 2 * i + a) * ow + 2 * j + b] = src[i * d.w + j] + bias[o];
                        }
                    }
                }
            }
        });
    out
}

pub fn tconv2_backward<F: Scalar>(
    x: &[F],
    d: Dims,
    weight: &[F],
    dout: &[F],
    out_c: usize,
    need_dx: bool,
) -> ConvGrads<F> {
    let hw = d.plane();
    let (oh, ow) = (2 * d.h, 2 * d.w);
    let wm = tconv_matrix(weight, d.c, out_c);
    let per_sample: Vec<(Vec<F>, Option<Vec<F>>)> = x
        .par_chunks(d.sample())
        .zip(dout.par_chunks(out_c * oh * ow))
        .map(|(xs, dy)| {
            let mut g = vec![F::zero(); out_c * 4 * hw];
            for o in 0..out_c {
                for ab in 0..4 {
                    let (a, b) = (ab / 2, ab % 2);
                    let dst = &mut g[(o * 4 + ab) * hw..(o * 4 + ab + 1) * hw];
                    for i in 0..d.h {
                        for j in 0..d.w {
                            dst[i * d.w + j] = dy[(o * oh + 2 * i + a) * ow + 2 * j + b];
                        }
                    }
                }
            }
            let mut dwm = vec![F::zero(); out_c * 4 * d.c];
            F::gemm(
                out_c * 4, hw, d.c, &g, hw as isize, 1, xs, 1, hw as isize, F::zero(), &mut dwm,
                d.c as isize, 1,
            );
            let dx = need_dx.then(|| {
                let mut dxs = vec![F::zero(); d.sample()];
                F::gemm(
                    d.c, out_c * 4, hw, &wm, 1, d.c as isize, &g, hw as isize, 1, F::zero(),
                    &mut dxs, hw as isize, 1,
                );
                dxs
            });
            (dwm, dx)
        })
        .collect();

    let mut dwm = vec![F::zero(); out_c * 4 * d.c];
    let mut dx = need_dx.then(|| Vec::with_capacity(d.len()));
    for (pw, px) in per_sample {
        for (a, b) in dwm.iter_mut().zip(&pw) {
            *a += *b;
        }
        if let (Some(dx), Some(px)) = (dx.as_mut(), px) {
            dx.extend_from_slice(&px);
        }
    }
    let mut dw = vec![F::zero(); weight.len()];
    for o in 0..out_c {
        for ci in 0..d.c {
            for ab in 0..4 {
                dw[(o * d.c + ci) * 4 + ab] = dwm[(o * 4 + ab) * d.c + ci];
            }
        }
    }
    let db = channel_sums(dout, Dims::new(d.n, out_c, oh, ow));
    ConvGrads { dx, dw, db }
}

/// Batch statistics of a training-mode batch norm, kept for backward.
pub struct BnCache<F> {
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
    pub mean: Vec<F>,
    /// Biased batch variance.
    pub var: Vec<F>,
}

pub fn batchnorm_train<F: Scalar>(x: &[F], d: Dims, gamma: &[F], beta: &[F]) -> (Vec<F>, BnCache<F>) {
    let hw = d.plane();
    let m = F::of((d.n * hw) as f64);
    let mean: Vec<F> = channel_sums(x, d).into_iter().map(|s| s / m).collect();
    let mut var = vec![F::zero(); d.c];
    for sample in x.chunks(d.sample()) {
        for (ch, plane) in sample.chunks(hw).enumerate() {
            var[ch] += plane.iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum::<F>();
        }
    }
    for v in &mut var {
        *v = *v / m;
    }
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + F::of(BN_EPS)).sqrt()).collect();
    let mut xhat = vec![F::zero(); x.len()];
    let mut y = vec![F::zero(); x.len()];
    for (i, (&xi, (xh, yi))) in x.iter().zip(xhat.iter_mut().zip(y.iter_mut())).enumerate() {
        let ch = (i / hw) % d.c;
        *xh = (xi - mean[ch]) * inv_std[ch];
        *yi = gamma[ch] * *xh + beta[ch];
    }
    (y, BnCache { xhat, inv_std, mean, var })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_train_backward<F: Scalar>(
    dy: &[F],
    d: Dims,
    gamma: &[F],
    cache: &BnCache<F>,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let hw = d.plane();
    let m = F::of((d.n * hw) as f64);
    let mut dbeta = vec![F::zero(); d.c];
    let mut dgamma = vec![F::zero(); d.c];
    for (i, (&g, &xh)) in dy.iter().zip(&cache.xhat).enumerate() {
        let ch = (i / hw) % d.c;
        dbeta[ch] += g;
        dgamma[ch] += g * xh;
    }
    let mut dx = vec![F::zero(); dy.len()];
    for (i, ((&g, &xh), o)) in dy.iter().zip(&cache.xhat).zip(dx.iter_mut()).enumerate() {
        let ch = (i / hw) % d.c;
        let k = gamma[ch] * cache.inv_std[ch] / m;
        *o = k * (m * g - dbeta[ch] - xh * dgamma[ch]);
    }
    (dx, dgamma, dbeta)
}

/// Inference-mode batch norm with running statistics; returns `y` and the
/// per-channel `1/sqrt(var + eps)`.
pub fn batchnorm_eval<F: Scalar>(
    x: &[F],
    d: Dims,
    gamma: &[F],
    beta: &[F],
    mean: &[F],
    var: &[F],
) -> (Vec<F>, Vec<F>) {
    let hw = d.plane();
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + F::of(BN_EPS)).sqrt()).collect();
    let y = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = (i / hw) % d.c;
            gamma[ch] * (v - mean[ch]) * inv_std[ch] + beta[ch]
        })
        .collect();
    (y, inv_std)
}

/// 2×2 max pooling; the first maximum in row-major window order wins.
/// Also returns the flat input index of every selected element.
pub fn maxpool2_forward<F: Scalar>(x: &[F], d: Dims) -> (Vec<F>, Vec<usize>) {
    let (oh, ow) = (d.h / 2, d.w / 2);
    let mut out = Vec::with_capacity(d.n * d.c * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for nc in 0..d.n * d.c {
        let base = nc * d.plane();
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * d.w + 2 * j;
                for idx in [
                    base + 2 * i * d.w + 2 * j + 1,
                    base + (2 * i + 1) * d.w + 2 * j,
                    base + (2 * i + 1) * d.w + 2 * j + 1,
                ] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn concat_channels<F: Scalar>(a: &[F], ca: usize, b: &[F], cb: usize, n: usize, hw: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(n * (ca + cb) * hw);
    for s in 0..n {
        out.extend_from_slice(&a[s * ca * hw..(s + 1) * ca * hw]);
        out.extend_from_slice(&b[s * cb * hw..(s + 1) * cb * hw]);
    }
    out
}

#[inline]
pub fn sigmoid<F: Scalar>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}
