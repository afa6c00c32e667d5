//! Untaped compute kernels shared by the tape and by plain inference.
//!
//! All reductions run in a fixed order. Convolutions are parallel across
//! batch elements only; per-sample partial gradients are merged in sample
//! order, so results do not depend on the number of worker threads.

use rayon::prelude::*;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Row-major matrix product `c = a * b + beta * c`, where `a` is `m x k`
/// (or `k x m` when `a_t`) and `b` is `k x n` (or `n x k` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: extents were checked above and `c` is a unique borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

fn matrix_dims<T: Element>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match t.dims() {
        &[r, c] => Ok((r, c)),
        other => Err(TensorError::invalid(
            op,
            format!("expected a 2-d matrix, got {other:?}"),
        )),
    }
}

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = matrix_dims(a, "matmul")?;
    let (k2, n) = matrix_dims(b, "matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.dims().to_vec(),
            rhs: b.dims().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    gemm(
        m,
        k,
        n,
        a.data(),
        false,
        b.data(),
        false,
        T::zero(),
        &mut out,
    );
    Tensor::from_vec(&[m, n], out)
}

/// Gradients of `a * b` given the upstream gradient `g`:
/// `(g * b^T, a^T * g)`.
pub fn matmul_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k) = matrix_dims(a, "matmul_backward")?;
    let (_, n) = matrix_dims(b, "matmul_backward")?;
    let mut ga = vec![T::zero(); m * k];
    gemm(m, n, k, g.data(), false, b.data(), true, T::zero(), &mut ga);
    let mut gb = vec![T::zero(); k * n];
    gemm(k, m, n, a.data(), true, g.data(), false, T::zero(), &mut gb);
    Ok((
        Tensor::from_vec(&[m, k], ga)?,
        Tensor::from_vec(&[k, n], gb)?,
    ))
}

/// Unfolds one `[C, H, W]` image into a `[C*k*k, H*W]` column matrix for a
/// stride-1 convolution with zero padding `(k-1)/2`.
pub fn im2col<T: Element>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    debug_assert_eq!(col.len(), c * k * k * hw);
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ch * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                // valid output columns: 0 <= x + dx < w
                let x0 = (-dx).max(0) as usize;
                let x1 = ((w as isize) - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out_row = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out_row[..x0].fill(T::zero());
                    out_row[x1..].fill(T::zero());
                    let s0 = (x0 as isize + dx) as usize;
                    out_row[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a column matrix back onto an image,
/// accumulating into `x`.
pub fn col2im_add<T: Element>(col: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ch * k + ky) * k + kx) * hw..][..hw];
                let dx = kx as isize - pad;
                let dy = ky as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = ((w as isize) - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let s0 = (x0 as isize + dx) as usize;
                    for (d, &v) in dst[s0..s0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&row[y * w + x0..y * w + x1])
                    {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// Validated geometry of a convolution call.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvGeom {
    fn check<T: Element>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Self> {
        let (n, cin, h, w) = input.shape().nchw("conv2d")?;
        let (cout, kcin, kh, kw) = kernel.shape().nchw("conv2d")?;
        if kh != kw || kh % 2 == 0 {
            return Err(TensorError::invalid(
                "conv2d",
                format!("kernel must be square with odd size, got {kh}x{kw}"),
            ));
        }
        if kcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: input.dims().to_vec(),
                rhs: kernel.dims().to_vec(),
            });
        }
        if bias.dims() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: kernel.dims().to_vec(),
                rhs: bias.dims().to_vec(),
            });
        }
        Ok(ConvGeom {
            n,
            cin,
            cout,
            h,
            w,
            k: kh,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Stride-1, same-padded 2-D cross-correlation.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let g = ConvGeom::check(input, kernel, bias)?;
    let hw = g.h * g.w;
    let in_len = g.cin * hw;
    let out_len = g.cout * hw;
    let mut out = vec![T::zero(); g.n * out_len];
    let col_len = if g.k == 1 { 0 } else { g.patch() * hw };
    out.par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each_init(
            || vec![T::zero(); col_len],
            |col, (o, x)| {
                if g.k == 1 {
                    gemm(
                        g.cout,
                        g.cin,
                        hw,
                        kernel.data(),
                        false,
                        x,
                        false,
                        T::zero(),
                        o,
                    );
                } else {
                    // every entry of `col` is overwritten before use
                    im2col(x, g.cin, g.h, g.w, g.k, col);
                    gemm(
                        g.cout,
                        g.patch(),
                        hw,
                        kernel.data(),
                        false,
                        col,
                        false,
                        T::zero(),
                        o,
                    );
                }
                for (row, &b) in o.chunks_mut(hw).zip(bias.data()) {
                    for v in row {
                        *v = *v + b;
                    }
                }
            },
        );
    Tensor::new(Shape::new(vec![g.n, g.cout, g.h, g.w])?, out)
}

#[derive(Debug, Default)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Backward pass of [`conv2d`]. Only the requested gradients are computed.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::check(input, kernel, bias)?;
    if grad_out.dims() != [g.n, g.cout, g.h, g.w] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            lhs: vec![g.n, g.cout, g.h, g.w],
            rhs: grad_out.dims().to_vec(),
        });
    }
    let [need_x, need_k, need_b] = need;
    let hw = g.h * g.w;
    let in_len = g.cin * hw;
    let out_len = g.cout * hw;
    let patch = g.patch();

    let per_sample: Vec<(Vec<T>, Vec<T>, Vec<T>)> = grad_out
        .data()
        .par_chunks(out_len)
        .zip(input.data().par_chunks(in_len))
        .map_init(
            || vec![T::zero(); if g.k == 1 { 0 } else { patch * hw }],
            |col, (go, x)| {
                let mut dk = Vec::new();
                let mut dx = Vec::new();
                let mut db = Vec::new();
                if need_b {
                    db = go
                        .chunks(hw)
                        .map(|row| row.iter().fold(T::zero(), |a, &v| a + v))
                        .collect();
                }
                if need_k {
                    dk = vec![T::zero(); g.cout * patch];
                    if g.k == 1 {
                        gemm(g.cout, hw, g.cin, go, false, x, true, T::zero(), &mut dk);
                    } else {
                        im2col(x, g.cin, g.h, g.w, g.k, col);
                        gemm(g.cout, hw, patch, go, false, col, true, T::zero(), &mut dk);
                    }
                }
                if need_x {
                    if g.k == 1 {
                        dx = vec![T::zero(); in_len];
                        gemm(
                            g.cin,
                            g.cout,
                            hw,
                            kernel.data(),
                            true,
                            go,
                            false,
                            T::zero(),
                            &mut dx,
                        );
                    } else {
                        gemm(
                            patch,
                            g.cout,
                            hw,
                            kernel.data(),
                            true,
                            go,
                            false,
                            T::zero(),
                            col,
                        );
                        dx = vec![T::zero(); in_len];
                        col2im_add(col, g.cin, g.h, g.w, g.k, &mut dx);
                    }
                }
                (dx, dk, db)
            },
        )
        .collect();

    let mut grads = ConvGrads::default();
    if need_x {
        let mut dx = Vec::with_capacity(g.n * in_len);
        for (sx, _, _) in &per_sample {
            dx.extend_from_slice(sx);
        }
        grads.input = Some(Tensor::new(input.shape().clone(), dx)?);
    }
    if need_k {
        let mut dk = vec![T::zero(); g.cout * patch];
        for (_, sk, _) in &per_sample {
            for (a, &b) in dk.iter_mut().zip(sk) {
                *a = *a + b;
            }
        }
        grads.kernel = Some(Tensor::new(kernel.shape().clone(), dk)?);
    }
    if need_b {
        let mut db = vec![T::zero(); g.cout];
        for (_, _, sb) in &per_sample {
            for (a, &b) in db.iter_mut().zip(sb) {
                *a = *a + b;
            }
        }
        grads.bias = Some(Tensor::new(bias.shape().clone(), db)?);
    }
    Ok(grads)
}

/// `(channels, inner)` for a tensor laid out as `[N, C, ...]`, where `inner`
/// is the product of the trailing dimensions.
fn channel_layout<T: Element>(
    x: &Tensor<T>,
    per_channel: &Tensor<T>,
    op: &'static str,
) -> Result<(usize, usize)> {
    let dims = x.dims();
    let c = per_channel.numel();
    if dims.len() < 2 || dims[1] != c || per_channel.dims().len() != 1 {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: dims.to_vec(),
            rhs: per_channel.dims().to_vec(),
        });
    }
    Ok((c, dims[2..].iter().product()))
}

/// Calls `f(channel, chunk)` for each contiguous single-channel run of `x`.
fn for_each_channel_run<T>(data: &[T], c: usize, inner: usize, mut f: impl FnMut(usize, &[T])) {
    for (i, run) in data.chunks(inner).enumerate() {
        f(i % c, run);
    }
}

/// `x + b[c]` broadcast over every channel plane.
pub fn add_channel<T: Element>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, inner) = channel_layout(x, b, "add_channel")?;
    let mut out = x.clone();
    for (i, run) in out.data_mut().chunks_mut(inner).enumerate() {
        let v = b.data()[i % c];
        for e in run {
            *e = *e + v;
        }
    }
    Ok(out)
}

/// Per-channel sum of `g`, the gradient of a broadcast channel term.
pub fn channel_sum<T: Element>(g: &Tensor<T>, c: usize) -> Result<Tensor<T>> {
    let dims = g.dims();
    if dims.len() < 2 || dims[1] != c {
        return Err(TensorError::invalid(
            "channel_sum",
            format!("{dims:?} has no channel axis of size {c}"),
        ));
    }
    let inner = dims[2..].iter().product();
    let mut acc = vec![T::zero(); c];
    for_each_channel_run(g.data(), c, inner, |ch, run| {
        acc[ch] = run.iter().fold(acc[ch], |a, &v| a + v);
    });
    Tensor::from_vec(&[c], acc)
}

/// Channel-wise PReLU: `x` if `x > 0`, otherwise `slope[c] * x`.
pub fn prelu<T: Element>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, inner) = channel_layout(x, slope, "prelu")?;
    let mut out = x.clone();
    for (i, run) in out.data_mut().chunks_mut(inner).enumerate() {
        let s = slope.data()[i % c];
        for e in run {
            if *e <= T::zero() {
                *e = s * *e;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`prelu`] with respect to input and slope.
pub fn prelu_backward<T: Element>(
    x: &Tensor<T>,
    slope: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, inner) = channel_layout(x, slope, "prelu_backward")?;
    x.expect_same_shape(g, "prelu_backward")?;
    let mut dx = g.clone();
    let mut ds = vec![T::zero(); c];
    for (i, (run, xr)) in dx
        .data_mut()
        .chunks_mut(inner)
        .zip(x.data().chunks(inner))
        .enumerate()
    {
        let ch = i % c;
        let s = slope.data()[ch];
        let mut acc = ds[ch];
        for (d, &xv) in run.iter_mut().zip(xr) {
            if xv <= T::zero() {
                acc = acc + *d * xv;
                *d = *d * s;
            }
        }
        ds[ch] = acc;
    }
    Ok((dx, Tensor::from_vec(&[c], ds)?))
}

/// `scale[c] * x + shift[c]`.
pub fn channel_affine<T: Element>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (c, inner) = channel_layout(x, scale, "channel_affine")?;
    scale.expect_same_shape(shift, "channel_affine")?;
    let mut out = x.clone();
    for (i, run) in out.data_mut().chunks_mut(inner).enumerate() {
        let (a, b) = (scale.data()[i % c], shift.data()[i % c]);
        for e in run {
            *e = a * *e + b;
        }
    }
    Ok(out)
}

/// Gradients of [`channel_affine`]: `(dx, dscale, dshift)`.
pub fn channel_affine_backward<T: Element>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (c, inner) = channel_layout(x, scale, "channel_affine_backward")?;
    x.expect_same_shape(g, "channel_affine_backward")?;
    let mut dx = g.clone();
    let mut dscale = vec![T::zero(); c];
    for (i, (run, xr)) in dx
        .data_mut()
        .chunks_mut(inner)
        .zip(x.data().chunks(inner))
        .enumerate()
    {
        let ch = i % c;
        let a = scale.data()[ch];
        let mut acc = dscale[ch];
        for (d, &xv) in run.iter_mut().zip(xr) {
            acc = acc + *d * xv;
            *d = *d * a;
        }
        dscale[ch] = acc;
    }
    let dshift = channel_sum(g, c)?;
    Ok((dx, Tensor::from_vec(&[c], dscale)?, dshift))
}
