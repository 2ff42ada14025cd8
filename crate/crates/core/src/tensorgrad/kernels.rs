//! Raw forward/backward kernels on flat NCHW buffers.

use super::scalar::Scalar;

/// Unfolds one `[C, H, W]` image into `[C*K*K, H*W]` columns, zero padded by `K/2`.
pub(crate) fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, k: usize, cols: &mut [S]) {
    let p = k / 2;
    let hw = h * w;
    debug_assert_eq!(cols.len(), c * k * k * hw);
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let iy = y as isize + ky as isize - p as isize;
                    let out = &mut row[y * w..(y + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        out.fill(S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let shift = kx as isize - p as isize;
                    for (xo, o) in out.iter_mut().enumerate() {
                        let ix = xo as isize + shift;
                        *o = if ix < 0 || ix >= w as isize { S::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image gradient.
pub(crate) fn col2im_add<S: Scalar>(cols: &[S], c: usize, h: usize, w: usize, k: usize, dx: &mut [S]) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let iy = y as isize + ky as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let shift = kx as isize - p as isize;
                    let src = &row[y * w..(y + 1) * w];
                    for (xo, &g) in src.iter().enumerate() {
                        let ix = xo as isize + shift;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + g;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub o: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

pub(crate) fn conv2d_forward<S: Scalar>(x: &[S], weight: &[S], bias: Option<&[S]>, d: &ConvDims) -> Vec<S> {
    let hw = d.h * d.w;
    let ckk = d.c * d.k * d.k;
    let mut out = vec![S::zero(); d.n * d.o * hw];
    let mut cols = vec![S::zero(); ckk * hw];
    for ni in 0..d.n {
        let xi = &x[ni * d.c * hw..(ni + 1) * d.c * hw];
        let yo = &mut out[ni * d.o * hw..(ni + 1) * d.o * hw];
        if let Some(b) = bias {
            for (oi, &bv) in b.iter().enumerate() {
                yo[oi * hw..(oi + 1) * hw].fill(bv);
            }
        }
        im2col(xi, d.c, d.h, d.w, d.k, &mut cols);
        let beta = if bias.is_some() { S::one() } else { S::zero() };
        S::gemm(
            d.o, ckk, hw, S::one(), weight, ckk as isize, 1, &cols, hw as isize, 1, beta, yo, hw as isize, 1,
        );
    }
    out
}

/// Returns `(dx, dweight, dbias)` for the requested operands.
pub(crate) fn conv2d_backward<S: Scalar>(
    x: &[S],
    weight: &[S],
    dy: &[S],
    d: &ConvDims,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>, Option<Vec<S>>) {
    let hw = d.h * d.w;
    let ckk = d.c * d.k * d.k;
    let mut dx = want_dx.then(|| vec![S::zero(); x.len()]);
    let mut dw = want_dw.then(|| vec![S::zero(); weight.len()]);
    let mut db = want_db.then(|| vec![0.0f64; d.o]);
    let mut cols = vec![S::zero(); ckk * hw];
    let mut dcols = vec![S::zero(); if want_dx { ckk * hw } else { 0 }];
    for ni in 0..d.n {
        let dyi = &dy[ni * d.o * hw..(ni + 1) * d.o * hw];
        if let Some(db) = db.as_mut() {
            for (oi, acc) in db.iter_mut().enumerate() {
                *acc += dyi[oi * hw..(oi + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let xi = &x[ni * d.c * hw..(ni + 1) * d.c * hw];
            im2col(xi, d.c, d.h, d.w, d.k, &mut cols);
            // dW[o, ckk] += dY[o, hw] * cols[ckk, hw]^T
            S::gemm(d.o, hw, ckk, S::one(), dyi, hw as isize, 1, &cols, 1, hw as isize, S::one(), dw, ckk as isize, 1);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols[ckk, hw] = W[o, ckk]^T * dY[o, hw]
            S::gemm(ckk, d.o, hw, S::one(), weight, 1, ckk as isize, dyi, hw as isize, 1, S::zero(), &mut dcols, hw as isize, 1);
            col2im_add(&dcols, d.c, d.h, d.w, d.k, &mut dx[ni * d.c * hw..(ni + 1) * d.c * hw]);
        }
    }
    (dx, dw, db.map(|v| v.into_iter().map(S::from_f64).collect()))
}

pub(crate) const GROUP_NORM_EPS: f64 = 1e-5;

/// Group normalization over `[N, C, S]` (S = flattened spatial extent, may be 1).
/// Returns output plus per-(n, group) mean and reciprocal std.
pub(crate) fn group_norm_forward<S: Scalar>(
    x: &[S],
    gamma: &[S],
    beta: &[S],
    n: usize,
    c: usize,
    spatial: usize,
    groups: usize,
) -> (Vec<S>, Vec<f64>, Vec<f64>) {
    let cg = c / groups;
    let m = (cg * spatial) as f64;
    let mut out = vec![S::zero(); x.len()];
    let mut means = Vec::with_capacity(n * groups);
    let mut rstds = Vec::with_capacity(n * groups);
    for ni in 0..n {
        for g in 0..groups {
            let start = (ni * c + g * cg) * spatial;
            let seg = &x[start..start + cg * spatial];
            let mean = seg.iter().map(|v| v.as_f64()).sum::<f64>() / m;
            let var = seg.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / m;
            let rstd = 1.0 / (var + GROUP_NORM_EPS).sqrt();
            for cl in 0..cg {
                let ch = g * cg + cl;
                let (ga, be) = (gamma[ch].as_f64(), beta[ch].as_f64());
                let off = start + cl * spatial;
                for i in off..off + spatial {
                    out[i] = S::from_f64((x[i].as_f64() - mean) * rstd * ga + be);
                }
            }
            means.push(mean);
            rstds.push(rstd);
        }
    }
    (out, means, rstds)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward<S: Scalar>(
    x: &[S],
    gamma: &[S],
    dy: &[S],
    means: &[f64],
    rstds: &[f64],
    n: usize,
    c: usize,
    spatial: usize,
    groups: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let cg = c / groups;
    let m = (cg * spatial) as f64;
    let mut dx = vec![S::zero(); x.len()];
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for ni in 0..n {
        for g in 0..groups {
            let idx = ni * groups + g;
            let (mean, rstd) = (means[idx], rstds[idx]);
            let start = (ni * c + g * cg) * spatial;
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for cl in 0..cg {
                let ch = g * cg + cl;
                let ga = gamma[ch].as_f64();
                let off = start + cl * spatial;
                for i in off..off + spatial {
                    let xhat = (x[i].as_f64() - mean) * rstd;
                    let g_out = dy[i].as_f64();
                    dgamma[ch] += g_out * xhat;
                    dbeta[ch] += g_out;
                    let dxhat = g_out * ga;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
            }
            for cl in 0..cg {
                let ga = gamma[g * cg + cl].as_f64();
                let off = start + cl * spatial;
                for i in off..off + spatial {
                    let xhat = (x[i].as_f64() - mean) * rstd;
                    let dxhat = dy[i].as_f64() * ga;
                    dx[i] = S::from_f64(rstd / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat));
                }
            }
        }
    }
    let cast = |v: Vec<f64>| v.into_iter().map(S::from_f64).collect();
    (dx, cast(dgamma), cast(dbeta))
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
