//! Forward and backward kernels: valid cross-correlation, 2x2 max pooling,
//! dense layers, tanh/sigmoid, softmax cross-entropy, and SGD updates.
//!
//! Accumulation-order contract: for every output element of
//! [`conv2d_forward`] and [`dense_forward`], partial products are added in
//! exactly the order of the naive nested loops (bias first, then ascending
//! `(channel, ky, kx)` / input index). The inner loops run across *different*
//! output elements, so they vectorize without reordering any individual sum,
//! and results are bitwise identical to the reference implementation.
//!
//! Parallelism only ever splits disjoint output regions (batch items, filter
//! rows), so thread count never changes results.

use rayon::prelude::*;

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// `out[i] += a * xs[i]`; the compiler vectorizes this across `i`.
#[inline]
fn axpy<T: Scalar>(out: &mut [T], a: T, xs: &[T]) {
    debug_assert_eq!(out.len(), xs.len());
    for (o, x) in out.iter_mut().zip(xs) {
        *o += a * *x;
    }
}

/// Eight-lane dot product. Fast and deterministic for a given slice length,
/// but not in naive order; used only on gradient paths.
#[inline]
fn dot_fast<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            acc[i] += xa[i] * xb[i];
        }
    }
    let mut tail = T::zero();
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *xa * *xb;
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

/// Eight fused accumulation passes over `out`, one per source row, applied
/// per element in row order. Bitwise identical to eight sequential [`axpy`]
/// calls but with a single load/store pass over `out`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn axpy8<T: Scalar>(
    out: &mut [T],
    a: &[T],
    x0: &[T],
    x1: &[T],
    x2: &[T],
    x3: &[T],
    x4: &[T],
    x5: &[T],
    x6: &[T],
    x7: &[T],
) {
    let n = out.len();
    assert!(a.len() >= 8);
    assert!(
        x0.len() == n
            && x1.len() == n
            && x2.len() == n
            && x3.len() == n
            && x4.len() == n
            && x5.len() == n
            && x6.len() == n
            && x7.len() == n
    );
    for i in 0..n {
        let mut acc = out[i];
        acc += a[0] * x0[i];
        acc += a[1] * x1[i];
        acc += a[2] * x2[i];
        acc += a[3] * x3[i];
        acc += a[4] * x4[i];
        acc += a[5] * x5[i];
        acc += a[6] * x6[i];
        acc += a[7] * x7[i];
        out[i] = acc;
    }
}

fn dims4<T: Scalar>(t: &Tensor<T>, op: &'static str, role: &str) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        other => Err(Error::shape(op, format!("{role} must be 4-d, got {other:?}"))),
    }
}

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str, role: &str) -> Result<[usize; 2]> {
    match t.shape() {
        [a, b] => Ok([*a, *b]),
        other => Err(Error::shape(op, format!("{role} must be 2-d, got {other:?}"))),
    }
}

// ── Convolution ────────────────────────────────────────────────────────────

/// Valid cross-correlation, stride 1, no padding.
///
/// `out[n,f,i,j] = bias[f] + sum_{c,a,b} input[n,c,i+a,j+b] * weights[f,c,a,b]`
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    let op = "conv2d_forward";
    let [n, c, h, w] = dims4(input, op, "input")?;
    let [f, cw, kh, kw] = dims4(weights, op, "weights")?;
    if cw != c {
        return Err(Error::shape(op, format!("input has {c} channels, kernels expect {cw}")));
    }
    if kh > h || kw > w {
        return Err(Error::shape(op, format!("kernel {kh}x{kw} larger than input {h}x{w}")));
    }
    if bias.len() != f {
        return Err(Error::shape(op, format!("{f} filters but {} bias values", bias.len())));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let cols = oh * ow;
    let patch = c * kh * kw;
    let mut out = Tensor::zeros(vec![n, f, oh, ow]);
    let wd = weights.data();
    out.data_mut()
        .par_chunks_mut(f * cols)
        .zip(input.data().par_chunks(c * h * w))
        .for_each(|(on, xn)| {
            let mut col = vec![T::zero(); patch * cols];
            im2col(xn, c, h, w, kh, kw, &mut col);
            for (fi, &b) in bias.iter().enumerate() {
                on[fi * cols..(fi + 1) * cols].fill(b);
            }
            // k-blocks outer so each col block stays cache-hot across all
            // filters; per output element the k order is still ascending
            let blocks = patch / 8;
            for kb in 0..blocks {
                let k = kb * 8;
                for fi in 0..f {
                    let wrow = &wd[fi * patch..(fi + 1) * patch];
                    axpy8(
                        &mut on[fi * cols..(fi + 1) * cols],
                        &wrow[k..k + 8],
                        &col[k * cols..(k + 1) * cols],
                        &col[(k + 1) * cols..(k + 2) * cols],
                        &col[(k + 2) * cols..(k + 3) * cols],
                        &col[(k + 3) * cols..(k + 4) * cols],
                        &col[(k + 4) * cols..(k + 5) * cols],
                        &col[(k + 5) * cols..(k + 6) * cols],
                        &col[(k + 6) * cols..(k + 7) * cols],
                        &col[(k + 7) * cols..(k + 8) * cols],
                    );
                }
            }
            for k in blocks * 8..patch {
                for fi in 0..f {
                    axpy(
                        &mut on[fi * cols..(fi + 1) * cols],
                        wd[fi * patch + k],
                        &col[k * cols..(k + 1) * cols],
                    );
                }
            }
        });
    Ok(out)
}

/// Position-major unroll: row `j` of the output holds the full patch vector
/// (in `(channel, ky, kx)` order) for output position `j`.
fn im2colt<T: Scalar>(xn: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize, colt: &mut [T]) {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let patch = c * kh * kw;
    for ci in 0..c {
        let xplane = &xn[ci * h * w..(ci + 1) * h * w];
        for a in 0..kh {
            for b in 0..kw {
                let k = (ci * kh + a) * kw + b;
                for i in 0..oh {
                    let src = &xplane[(i + a) * w + b..(i + a) * w + b + ow];
                    for (j, &v) in src.iter().enumerate() {
                        colt[(i * ow + j) * patch + k] = v;
                    }
                }
            }
        }
    }
}

/// Unroll valid-convolution patches: row `(ci*kh+a)*kw+b` of the output holds
/// `input[ci, i+a, j+b]` over output positions `(i,j)`. Row order matches the
/// naive `(channel, ky, kx)` summation order.
fn im2col<T: Scalar>(xn: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize, col: &mut [T]) {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let cols = oh * ow;
    let mut row = 0usize;
    for ci in 0..c {
        let xplane = &xn[ci * h * w..(ci + 1) * h * w];
        for a in 0..kh {
            for b in 0..kw {
                let orow = &mut col[row * cols..(row + 1) * cols];
                for i in 0..oh {
                    orow[i * ow..(i + 1) * ow]
                        .copy_from_slice(&xplane[(i + a) * w + b..(i + a) * w + b + ow]);
                }
                row += 1;
            }
        }
    }
}

/// Which gradients a backward pass should produce.
#[derive(Debug, Clone, Copy)]
pub struct GradRequest {
    pub weights: bool,
    pub bias: bool,
    pub input: bool,
}

impl GradRequest {
    pub const ALL: GradRequest = GradRequest { weights: true, bias: true, input: true };
    pub const NONE: GradRequest = GradRequest { weights: false, bias: false, input: false };
}

pub struct LayerGrads<T> {
    pub weights: Option<Tensor<T>>,
    pub bias: Option<Vec<T>>,
    pub input: Option<Tensor<T>>,
}

/// Gradients of a scalar loss through [`conv2d_forward`], given the gradient
/// at the output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    req: GradRequest,
) -> Result<LayerGrads<T>> {
    let op = "conv2d_backward";
    let [n, c, h, w] = dims4(input, op, "input")?;
    let [f, cw, kh, kw] = dims4(weights, op, "weights")?;
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    if cw != c {
        return Err(Error::shape(op, format!("input has {c} channels, kernels expect {cw}")));
    }
    if grad_out.shape() != [n, f, oh, ow] {
        return Err(Error::shape(
            op,
            format!("grad_out {:?} does not match output [{n},{f},{oh},{ow}]", grad_out.shape()),
        ));
    }
    let (xd, wd, gd) = (input.data(), weights.data(), grad_out.data());

    let bias = if req.bias {
        let mut gb = vec![T::zero(); f];
        for ni in 0..n {
            for fi in 0..f {
                let gplane = &gd[(ni * f + fi) * oh * ow..][..oh * ow];
                let mut acc = T::zero();
                for g in gplane {
                    acc += *g;
                }
                gb[fi] += acc;
            }
        }
        Some(gb)
    } else {
        None
    };

    let weights_grad = if req.weights {
        let cols = oh * ow;
        let patch = c * kh * kw;
        // fixed-size batch chunks with an ordered reduction: deterministic
        // regardless of thread count, and each im2col row stays cache-hot
        // across every filter
        const WGRAD_CHUNK: usize = 16;
        let partials: Vec<Vec<T>> = xd
            .par_chunks(WGRAD_CHUNK * c * h * w)
            .zip(gd.par_chunks(WGRAD_CHUNK * f * cols))
            .map(|(xchunk, gchunk)| {
                let mut local = vec![T::zero(); f * patch];
                let mut colt = vec![T::zero(); cols * patch];
                for (xn, gn) in xchunk.chunks(c * h * w).zip(gchunk.chunks(f * cols)) {
                    im2colt(xn, c, h, w, kh, kw, &mut colt);
                    // gw[f] += sum_j g[f][j] * patch_row(j), eight positions
                    // per pass so the wide patch rows amortize the gw stores
                    let jblocks = cols / 8;
                    for jb in 0..jblocks {
                        let j = jb * 8;
                        for fi in 0..f {
                            axpy8(
                                &mut local[fi * patch..(fi + 1) * patch],
                                &gn[fi * cols + j..fi * cols + j + 8],
                                &colt[j * patch..(j + 1) * patch],
                                &colt[(j + 1) * patch..(j + 2) * patch],
                                &colt[(j + 2) * patch..(j + 3) * patch],
                                &colt[(j + 3) * patch..(j + 4) * patch],
                                &colt[(j + 4) * patch..(j + 5) * patch],
                                &colt[(j + 5) * patch..(j + 6) * patch],
                                &colt[(j + 6) * patch..(j + 7) * patch],
                                &colt[(j + 7) * patch..(j + 8) * patch],
                            );
                        }
                    }
                    for j in jblocks * 8..cols {
                        for fi in 0..f {
                            axpy(
                                &mut local[fi * patch..(fi + 1) * patch],
                                gn[fi * cols + j],
                                &colt[j * patch..(j + 1) * patch],
                            );
                        }
                    }
                }
                local
            })
            .collect();
        let mut gw = Tensor::zeros(vec![f, c, kh, kw]);
        for local in partials {
            for (g, l) in gw.data_mut().iter_mut().zip(&local) {
                *g += *l;
            }
        }
        Some(gw)
    } else {
        None
    };

    let input_grad = if req.input {
        let cols = oh * ow;
        let patch = c * kh * kw;
        // filter-major transpose of the weights, shared across the batch
        let mut wt = vec![T::zero(); patch * f];
        for fi in 0..f {
            for k in 0..patch {
                wt[k * f + fi] = wd[fi * patch + k];
            }
        }
        let mut gin = Tensor::zeros(vec![n, c, h, w]);
        gin.data_mut()
            .par_chunks_mut(c * h * w)
            .zip(gd.par_chunks(f * cols))
            .for_each(|(gn, gon)| {
                // patch-gradient GEMM: gcol[k] += wt[k][fi] * g[fi] over filters
                let mut gcol = vec![T::zero(); patch * cols];
                gcol.chunks_mut(cols).enumerate().for_each(|(k, grow)| {
                    let wrow = &wt[k * f..(k + 1) * f];
                    let fblocks = f / 8;
                    for fb in 0..fblocks {
                        let fi = fb * 8;
                        axpy8(
                            grow,
                            &wrow[fi..fi + 8],
                            &gon[fi * cols..(fi + 1) * cols],
                            &gon[(fi + 1) * cols..(fi + 2) * cols],
                            &gon[(fi + 2) * cols..(fi + 3) * cols],
                            &gon[(fi + 3) * cols..(fi + 4) * cols],
                            &gon[(fi + 4) * cols..(fi + 5) * cols],
                            &gon[(fi + 5) * cols..(fi + 6) * cols],
                            &gon[(fi + 6) * cols..(fi + 7) * cols],
                            &gon[(fi + 7) * cols..(fi + 8) * cols],
                        );
                    }
                    for fi in fblocks * 8..f {
                        axpy(grow, wrow[fi], &gon[fi * cols..(fi + 1) * cols]);
                    }
                });
                let mut row = 0usize;
                for ci in 0..c {
                    let gplane = &mut gn[ci * h * w..(ci + 1) * h * w];
                    for a in 0..kh {
                        for b in 0..kw {
                            let grow = &gcol[row * cols..(row + 1) * cols];
                            for i in 0..oh {
                                let dst = &mut gplane[(i + a) * w + b..(i + a) * w + b + ow];
                                for (d, s) in dst.iter_mut().zip(&grow[i * ow..(i + 1) * ow]) {
                                    *d += *s;
                                }
                            }
                            row += 1;
                        }
                    }
                }
            });
        Some(gin)
    } else {
        None
    };

    Ok(LayerGrads { weights: weights_grad, bias, input: input_grad })
}

// ── Max pooling ────────────────────────────────────────────────────────────

/// Non-overlapping 2x2 max pooling. Returns the pooled tensor and, per output
/// element, the winning in-window index (`dy*2+dx`, first maximum on ties)
/// for the backward pass.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u8>)> {
    let op = "maxpool2";
    let [n, c, h, w] = dims4(input, op, "input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(op, format!("spatial dims must be even, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let mut argmax = vec![0u8; n * c * oh * ow];
    let xd = input.data();
    out.data_mut()
        .par_chunks_mut(c * oh * ow)
        .zip(argmax.par_chunks_mut(c * oh * ow))
        .zip(xd.par_chunks(c * h * w))
        .for_each(|((on, an), xn)| {
            for ci in 0..c {
                let xplane = &xn[ci * h * w..][..h * w];
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = xplane[(2 * i) * w + 2 * j];
                        let mut best_idx = 0u8;
                        for dy in 0..2usize {
                            for dx in 0..2usize {
                                if dy == 0 && dx == 0 {
                                    continue;
                                }
                                let v = xplane[(2 * i + dy) * w + 2 * j + dx];
                                if v > best {
                                    best = v;
                                    best_idx = (dy * 2 + dx) as u8;
                                }
                            }
                        }
                        let o = ci * oh * ow + i * ow + j;
                        on[o] = best;
                        an[o] = best_idx;
                    }
                }
            }
        });
    Ok((out, argmax))
}

/// Scatter pooled gradients back to the argmax positions.
pub fn maxpool2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[u8],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    let op = "maxpool2_backward";
    let [n, c, h, w] = match input_shape {
        [a, b, c2, d] => [*a, *b, *c2, *d],
        other => return Err(Error::shape(op, format!("input shape must be 4-d, got {other:?}"))),
    };
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [n, c, oh, ow] || argmax.len() != grad_out.len() {
        return Err(Error::shape(op, "grad/argmax do not match pooled shape".to_string()));
    }
    let mut gin = Tensor::zeros(vec![n, c, h, w]);
    let gd = grad_out.data();
    gin.data_mut()
        .par_chunks_mut(c * h * w)
        .zip(gd.par_chunks(c * oh * ow))
        .zip(argmax.par_chunks(c * oh * ow))
        .for_each(|((gn, gon), an)| {
            for ci in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        let o = ci * oh * ow + i * ow + j;
                        let idx = an[o] as usize;
                        let (dy, dx) = (idx / 2, idx % 2);
                        gn[ci * h * w + (2 * i + dy) * w + 2 * j + dx] += gon[o];
                    }
                }
            }
        });
    Ok(gin)
}

// ── Dense layer ────────────────────────────────────────────────────────────

/// `out = x * weights + bias` with bias broadcast per row.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let op = "dense_forward";
    let [n, d] = dims2(x, op, "input")?;
    let [dw, k] = dims2(weights, op, "weights")?;
    if dw != d {
        return Err(Error::shape(op, format!("input width {d} vs weight rows {dw}")));
    }
    if bias.len() != k {
        return Err(Error::shape(op, format!("{k} outputs but {} bias values", bias.len())));
    }
    let mut out = Tensor::zeros(vec![n, k]);
    let wd = weights.data();
    out.data_mut()
        .par_chunks_mut(k)
        .zip(x.data().par_chunks(d))
        .for_each(|(orow, xrow)| {
            orow.copy_from_slice(bias);
            for di in 0..d {
                axpy(orow, xrow[di], &wd[di * k..di * k + k]);
            }
        });
    Ok(out)
}

/// Gradients through [`dense_forward`].
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    req: GradRequest,
) -> Result<LayerGrads<T>> {
    let op = "dense_backward";
    let [n, d] = dims2(x, op, "input")?;
    let [dw, k] = dims2(weights, op, "weights")?;
    if dw != d || grad_out.shape() != [n, k] {
        return Err(Error::shape(op, "gradient shapes do not line up".to_string()));
    }
    let (xd, wd, gd) = (x.data(), weights.data(), grad_out.data());

    let bias = if req.bias {
        let mut gb = vec![T::zero(); k];
        for ni in 0..n {
            for (b, g) in gb.iter_mut().zip(&gd[ni * k..ni * k + k]) {
                *b += *g;
            }
        }
        Some(gb)
    } else {
        None
    };

    let weights_grad = if req.weights {
        let mut gw = Tensor::zeros(vec![d, k]);
        gw.data_mut()
            .par_chunks_mut(k)
            .enumerate()
            .for_each(|(di, gwrow)| {
                for ni in 0..n {
                    axpy(gwrow, xd[ni * d + di], &gd[ni * k..ni * k + k]);
                }
            });
        Some(gw)
    } else {
        None
    };

    let input_grad = if req.input {
        let mut gin = Tensor::zeros(vec![n, d]);
        gin.data_mut()
            .par_chunks_mut(d)
            .zip(gd.par_chunks(k))
            .for_each(|(grow, gorow)| {
                for di in 0..d {
                    grow[di] = dot_fast(gorow, &wd[di * k..di * k + k]);
                }
            });
        Some(gin)
    } else {
        None
    };

    Ok(LayerGrads { weights: weights_grad, bias, input: input_grad })
}

// ── Activations ────────────────────────────────────────────────────────────

pub fn tanh_apply<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    out.data_mut().par_chunks_mut(4096).for_each(|chunk| {
        for v in chunk {
            *v = v.tanh();
        }
    });
    out
}

/// `grad * (1 - a^2)` where `a` is the tanh output.
pub fn tanh_backward<T: Scalar>(activated: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if activated.shape() != grad.shape() {
        return Err(Error::shape("tanh_backward", "activation/grad shape mismatch".to_string()));
    }
    let mut out = grad.clone();
    let one = T::one();
    out.data_mut()
        .iter_mut()
        .zip(activated.data())
        .for_each(|(g, a)| *g *= one - *a * *a);
    Ok(out)
}

pub fn sigmoid_apply<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let one = T::one();
    let mut out = x.clone();
    out.data_mut().par_chunks_mut(4096).for_each(|chunk| {
        for v in chunk {
            *v = one / (one + (-*v).exp());
        }
    });
    out
}

// ── Softmax cross-entropy ──────────────────────────────────────────────────

/// Row-wise softmax plus mean negative log-likelihood of the true labels.
/// Numerically stabilized by per-row max subtraction.
pub fn softmax_nll<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<(f64, Tensor<T>)> {
    let op = "softmax_nll";
    let [n, k] = dims2(logits, op, "logits")?;
    if labels.len() != n {
        return Err(Error::shape(op, format!("{n} rows but {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| (l as usize) >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = logits.clone();
    probs.data_mut().par_chunks_mut(k).for_each(|row| {
        let mut m = row[0];
        for v in row.iter().skip(1) {
            if *v > m {
                m = *v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    });
    // Sequential loss accumulation keeps the result independent of threading.
    let mut loss = 0.0f64;
    for (ni, &label) in labels.iter().enumerate() {
        let p = probs.data()[ni * k + label as usize].as_f64();
        loss -= p.max(f64::MIN_POSITIVE).ln();
    }
    Ok((loss / n as f64, probs))
}

/// Gradient of `loss_scale * mean_nll` with respect to the logits:
/// `(probs - onehot) * loss_scale / n`.
pub fn softmax_nll_backward<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[u8],
    loss_scale: f64,
) -> Result<Tensor<T>> {
    let [n, k] = dims2(probs, "softmax_nll_backward", "probs")?;
    if labels.len() != n {
        return Err(Error::shape("softmax_nll_backward", "label count mismatch".to_string()));
    }
    let scale = T::from_f64(loss_scale / n as f64);
    let mut grad = probs.clone();
    let gd = grad.data_mut();
    for (ni, &label) in labels.iter().enumerate() {
        gd[ni * k + label as usize] -= T::one();
        for v in &mut gd[ni * k..ni * k + k] {
            *v *= scale;
        }
    }
    Ok(grad)
}

// ── SGD ────────────────────────────────────────────────────────────────────

/// `param <- param - lr * grad`, in place.
pub fn sgd_step<T: Scalar>(param: &mut [T], grad: &[T], lr: f64) -> Result<()> {
    if param.len() != grad.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("param len {} vs grad len {}", param.len(), grad.len()),
        ));
    }
    let lr = T::from_f64(lr);
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= lr * *g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Naive six-loop convolution, the independent oracle.
    fn conv_oracle(input: &Tensor<f64>, weights: &Tensor<f64>, bias: &[f64]) -> Tensor<f64> {
        let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
        let [f, _, kh, kw] =
            [weights.shape()[0], weights.shape()[1], weights.shape()[2], weights.shape()[3]];
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let mut out = Tensor::zeros(vec![n, f, oh, ow]);
        for ni in 0..n {
            for fi in 0..f {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bias[fi];
                        for ci in 0..c {
                            for a in 0..kh {
                                for b in 0..kw {
                                    acc += input.data()[((ni * c + ci) * h + i + a) * w + j + b]
                                        * weights.data()[((fi * c + ci) * kh + a) * kw + b];
                                }
                            }
                        }
                        out.data_mut()[((ni * f + fi) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn conv_bias_only_on_zero_input() {
        let input = Tensor::<f64>::zeros(vec![2, 1, 4, 4]);
        let weights = random_tensor(vec![3, 1, 2, 2], &mut Rng::new(1));
        let out = conv2d_forward(&input, &weights, &[0.3, -0.1, 2.0]).unwrap();
        for fi in 0..3 {
            let plane = &out.data()[fi * 9..fi * 9 + 9];
            let expected = [0.3, -0.1, 2.0][fi];
            assert!(plane.iter().all(|&v| v == expected));
        }
    }

    #[test]
    fn conv_counts_overlap() {
        let input = Tensor::<f64>::filled(vec![1, 1, 3, 3], 1.0);
        let weights = Tensor::<f64>::filled(vec![1, 1, 2, 2], 1.0);
        let out = conv2d_forward(&input, &weights, &[0.0]).unwrap();
        assert_eq!(out.shape(), [1, 1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_matches_naive_oracle_bitwise() {
        let mut rng = Rng::new(42);
        let input = random_tensor(vec![1, 1, 5, 5], &mut rng);
        let weights = random_tensor(vec![2, 1, 3, 3], &mut rng);
        let bias = [0.25, -0.5];
        let fast = conv2d_forward(&input, &weights, &bias).unwrap();
        let naive = conv_oracle(&input, &weights, &bias);
        assert_eq!(fast.data(), naive.data());
    }

    #[test]
    fn conv_matches_oracle_on_multichannel_batches() {
        let mut rng = Rng::new(7);
        for _ in 0..5 {
            let input = random_tensor(vec![3, 2, 8, 7], &mut rng);
            let weights = random_tensor(vec![4, 2, 3, 2], &mut rng);
            let bias: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let fast = conv2d_forward(&input, &weights, &bias).unwrap();
            let naive = conv_oracle(&input, &weights, &bias);
            assert_eq!(fast.data(), naive.data());
        }
    }

    #[test]
    fn conv_rejects_shape_mismatches() {
        let input = Tensor::<f64>::zeros(vec![1, 2, 4, 4]);
        let weights = Tensor::<f64>::zeros(vec![1, 3, 2, 2]);
        assert!(conv2d_forward(&input, &weights, &[0.0]).is_err());
        let big_kernel = Tensor::<f64>::zeros(vec![1, 2, 5, 2]);
        assert!(conv2d_forward(&input, &big_kernel, &[0.0]).is_err());
        let weights_ok = Tensor::<f64>::zeros(vec![2, 2, 2, 2]);
        assert!(conv2d_forward(&input, &weights_ok, &[0.0]).is_err()); // bias len 1 != 2
    }

    #[test]
    fn maxpool_takes_window_max() {
        let input = Tensor::new(vec![1, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (out, argmax) = maxpool2_forward(&input).unwrap();
        assert_eq!(out.data(), &[0.4]);
        assert_eq!(argmax, vec![3]);
    }

    #[test]
    fn maxpool_constant_input() {
        let input = Tensor::<f64>::filled(vec![2, 3, 4, 6], 0.7);
        let (out, _) = maxpool2_forward(&input).unwrap();
        assert_eq!(out.shape(), [2, 3, 2, 3]);
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn maxpool_matches_window_scan_oracle() {
        let mut rng = Rng::new(9);
        let input = random_tensor(vec![1, 1, 4, 4], &mut rng);
        let (out, _) = maxpool2_forward(&input).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(input.data()[(2 * i + dy) * 4 + 2 * j + dx]);
                    }
                }
                assert_eq!(out.data()[i * 2 + j], m);
            }
        }
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        assert!(maxpool2_forward(&Tensor::<f64>::zeros(vec![1, 1, 3, 4])).is_err());
        assert!(maxpool2_forward(&Tensor::<f64>::zeros(vec![1, 1, 4, 5])).is_err());
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let input = Tensor::new(vec![1, 1, 2, 2], vec![0.1, 0.9, 0.3, 0.4]).unwrap();
        let (_, argmax) = maxpool2_forward(&input).unwrap();
        let grad_out = Tensor::new(vec![1, 1, 1, 1], vec![2.5]).unwrap();
        let gin = maxpool2_backward(&grad_out, &argmax, &[1, 1, 2, 2]).unwrap();
        assert_eq!(gin.data(), &[0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn dense_identity_passthrough() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut w = Tensor::<f64>::zeros(vec![3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let out = dense_forward(&x, &w, &[0.0; 3]).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn dense_zero_input_yields_bias() {
        let x = Tensor::<f64>::zeros(vec![3, 4]);
        let w = random_tensor(vec![4, 2], &mut Rng::new(2));
        let out = dense_forward(&x, &w, &[0.5, -1.5]).unwrap();
        for row in out.data().chunks(2) {
            assert_eq!(row, &[0.5, -1.5]);
        }
    }

    #[test]
    fn dense_matches_naive_matmul() {
        let mut rng = Rng::new(3);
        let x = random_tensor(vec![2, 3], &mut rng);
        let w = random_tensor(vec![3, 2], &mut rng);
        let bias = [0.1, -0.2];
        let out = dense_forward(&x, &w, &bias).unwrap();
        for ni in 0..2 {
            for k in 0..2 {
                let mut acc = bias[k];
                for d in 0..3 {
                    acc += x.data()[ni * 3 + d] * w.data()[d * 2 + k];
                }
                assert_eq!(out.data()[ni * 2 + k], acc);
            }
        }
        assert!(dense_forward(&x, &random_tensor(vec![4, 2], &mut rng), &bias).is_err());
    }

    #[test]
    fn tanh_basic_properties() {
        let x = Tensor::<f64>::new(vec![4], vec![0.0, 1.25, -1.25, 50.0]).unwrap();
        let y = tanh_apply(&x);
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], -y.data()[2]);
        assert!((y.data()[3] - 1.0).abs() < 1e-12);
        assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn softmax_uniform_logits() {
        let logits = Tensor::<f64>::filled(vec![2, 10], 3.0);
        let (loss, probs) = softmax_nll(&logits, &[0, 7]).unwrap();
        for &p in probs.data() {
            assert!((p - 0.1).abs() < 1e-12);
        }
        assert!((loss - 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_saturated_correct_label() {
        let mut logits = Tensor::<f64>::zeros(vec![1, 4]);
        logits.data_mut()[2] = 1000.0;
        let (loss, _) = softmax_nll(&logits, &[2]).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut rng = Rng::new(17);
        let logits = random_tensor(vec![3, 4], &mut rng);
        let labels = [1u8, 0, 3];
        let (loss, probs) = softmax_nll(&logits, &labels).unwrap();
        let mut expected = 0.0f64;
        for ni in 0..3 {
            let row = &logits.data()[ni * 4..ni * 4 + 4];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            expected -= (row[labels[ni] as usize].exp() / denom).ln();
            let s: f64 = probs.data()[ni * 4..ni * 4 + 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "row sum {s}");
        }
        assert!((loss - expected / 3.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_rejects_bad_label() {
        let logits = Tensor::<f64>::zeros(vec![1, 4]);
        assert!(matches!(softmax_nll(&logits, &[4]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn softmax_backward_scales_linearly() {
        let mut rng = Rng::new(23);
        let logits = random_tensor(vec![3, 5], &mut rng);
        let labels = [0u8, 2, 4];
        let (_, probs) = softmax_nll(&logits, &labels).unwrap();
        let g1 = softmax_nll_backward(&probs, &labels, 1.0).unwrap();
        let g2 = softmax_nll_backward(&probs, &labels, 2.0).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert_eq!(*b, 2.0 * *a); // power-of-two scaling is exact
        }
    }

    #[test]
    fn sgd_zero_rate_is_identity() {
        let mut p = vec![1.0f64, -2.0, 0.5];
        let g = vec![10.0, 20.0, 30.0];
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = vec![1.0f64];
        sgd_step(&mut p, &[1.0], 0.05).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
        assert!(sgd_step(&mut p, &[1.0, 2.0], 0.05).is_err());
    }

    // Finite-difference checks for the backward kernels, using the loss
    // L = sum(out * probe) for a fixed random probe tensor.
    fn fd_check_conv(seed: u64) {
        let mut rng = Rng::new(seed);
        let input = random_tensor(vec![2, 2, 5, 5], &mut rng);
        let weights = random_tensor(vec![3, 2, 3, 3], &mut rng);
        let bias: Vec<f64> = (0..3).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let probe = random_tensor(vec![2, 3, 3, 3], &mut rng);
        let loss = |inp: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]| -> f64 {
            conv2d_forward(inp, w, b).unwrap().dot(&probe).unwrap()
        };
        let grads = conv2d_backward(&input, &weights, &probe, GradRequest::ALL).unwrap();
        let h = 1e-6;
        for idx in 0..weights.len() {
            let mut wp = weights.clone();
            wp.data_mut()[idx] += h;
            let mut wm = weights.clone();
            wm.data_mut()[idx] -= h;
            let num = (loss(&input, &wp, &bias) - loss(&input, &wm, &bias)) / (2.0 * h);
            let ana = grads.weights.as_ref().unwrap().data()[idx];
            assert!((num - ana).abs() < 1e-6 * (1.0 + ana.abs()), "w[{idx}] {num} vs {ana}");
        }
        for idx in 0..bias.len() {
            let mut bp = bias.clone();
            bp[idx] += h;
            let mut bm = bias.clone();
            bm[idx] -= h;
            let num = (loss(&input, &weights, &bp) - loss(&input, &weights, &bm)) / (2.0 * h);
            let ana = grads.bias.as_ref().unwrap()[idx];
            assert!((num - ana).abs() < 1e-6 * (1.0 + ana.abs()));
        }
        for idx in (0..input.len()).step_by(7) {
            let mut xp = input.clone();
            xp.data_mut()[idx] += h;
            let mut xm = input.clone();
            xm.data_mut()[idx] -= h;
            let num = (loss(&xp, &weights, &bias) - loss(&xm, &weights, &bias)) / (2.0 * h);
            let ana = grads.input.as_ref().unwrap().data()[idx];
            assert!((num - ana).abs() < 1e-6 * (1.0 + ana.abs()));
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        fd_check_conv(5);
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut rng = Rng::new(6);
        let x = random_tensor(vec![3, 4], &mut rng);
        let w = random_tensor(vec![4, 2], &mut rng);
        let probe = random_tensor(vec![3, 2], &mut rng);
        let loss = |x: &Tensor<f64>, w: &Tensor<f64>| -> f64 {
            dense_forward(x, w, &[0.0, 0.0]).unwrap().dot(&probe).unwrap()
        };
        let grads = dense_backward(&x, &w, &probe, GradRequest::ALL).unwrap();
        let h = 1e-6;
        for idx in 0..w.len() {
            let mut wp = w.clone();
            wp.data_mut()[idx] += h;
            let mut wm = w.clone();
            wm.data_mut()[idx] -= h;
            let num = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
            let ana = grads.weights.as_ref().unwrap().data()[idx];
            assert!((num - ana).abs() < 1e-6 * (1.0 + ana.abs()));
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let num = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
            let ana = grads.input.as_ref().unwrap().data()[idx];
            assert!((num - ana).abs() < 1e-6 * (1.0 + ana.abs()));
        }
    }
}
