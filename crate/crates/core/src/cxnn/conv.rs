//! Complex 2-d convolution and transposed convolution.
//!
//! A complex kernel `W = Wr + i Wi` acting on `x = xr + i xi` is evaluated as
//! one real convolution over stacked channels `[xr; xi]` with the block kernel
//! `[[Wr, -Wi], [Wi, Wr]]`, which is the same arithmetic as the four real
//! convolutions `conv(xr,Wr) - conv(xi,Wi)` and `conv(xr,Wi) + conv(xi,Wr)`.
//!
//! Layouts: activations `[N, C, H, W]`; convolution kernels
//! `[C_out, C_in, kH, kW]`; transposed-convolution kernels `[C_in, C_out, kH, kW]`
//! so that one kernel serves a convolution and its transpose.
//!
//! Geometry: a convolution maps `H` to `floor((H + 2p - k) / s) + 1`; a
//! transposed convolution maps `H` to `(H - 1) s - 2p + k + op` with output
//! padding `op < s`.

use serde::{Deserialize, Serialize};

use super::complex::ComplexVar;
use super::tensor::{ComplexTensor, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dGeometry {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// Padding `(k - 1) / 2` per axis, so a stride-`s` convolution yields `ceil(H / s)`
    /// for odd kernels.
    pub fn same(kernel: (usize, usize), stride: (usize, usize)) -> Self {
        Self::new(kernel, stride, ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2))
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::Config("kernel dimensions must be positive".into()));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::Config("strides must be at least 1".into()));
        }
        Ok(())
    }

    pub fn conv_output(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let axis = |n: usize, k: usize, s: usize, p: usize| {
            if n + 2 * p < k {
                Err(Error::Shape(format!(
                    "input extent {n} with padding {p} is smaller than kernel {k}"
                )))
            } else {
                Ok((n + 2 * p - k) / s + 1)
            }
        };
        Ok((
            axis(h, self.kernel.0, self.stride.0, self.padding.0)?,
            axis(w, self.kernel.1, self.stride.1, self.padding.1)?,
        ))
    }

    pub fn transpose_output(
        &self,
        h: usize,
        w: usize,
        output_padding: (usize, usize),
    ) -> Result<(usize, usize)> {
        self.validate()?;
        if output_padding.0 >= self.stride.0 || output_padding.1 >= self.stride.1 {
            return Err(Error::Shape(format!(
                "output padding {output_padding:?} must be smaller than stride {:?}",
                self.stride
            )));
        }
        let axis = |n: usize, k: usize, s: usize, p: usize, op: usize| {
            let full = (n.max(1) - 1) * s + k + op;
            if n == 0 || full <= 2 * p {
                Err(Error::Shape(format!(
                    "transposed convolution of extent {n} collapses to nothing"
                )))
            } else {
                Ok(full - 2 * p)
            }
        };
        Ok((
            axis(
                h,
                self.kernel.0,
                self.stride.0,
                self.padding.0,
                output_padding.0,
            )?,
            axis(
                w,
                self.kernel.1,
                self.stride.1,
                self.padding.1,
                output_padding.1,
            )?,
        ))
    }

    /// Output padding that makes the transpose of a convolution applied to
    /// `target` land exactly on `target` when fed `from`.
    pub fn output_padding_for(
        &self,
        from: (usize, usize),
        target: (usize, usize),
    ) -> Result<(usize, usize)> {
        let axis = |n: usize, t: usize, k: usize, s: usize, p: usize| {
            let base = (n - 1) * s + k;
            let op = (t + 2 * p).checked_sub(base);
            match op {
                Some(op) if op < s => Ok(op),
                _ => Err(Error::Shape(format!(
                    "cannot reach extent {t} from {n} with kernel {k}, stride {s}, padding {p}"
                ))),
            }
        };
        Ok((
            axis(
                from.0,
                target.0,
                self.kernel.0,
                self.stride.0,
                self.padding.0,
            )?,
            axis(
                from.1,
                target.1,
                self.kernel.1,
                self.stride.1,
                self.padding.1,
            )?,
        ))
    }
}

/// Spectral-domain layer parameters: complex kernel, complex bias and geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexConvLayer<S> {
    pub weight: ComplexTensor<S>,
    pub bias: ComplexTensor<S>,
    pub geometry: Conv2dGeometry,
}

#[derive(Clone, Copy)]
struct Dims {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn im2col<S: Real>(x: &[S], d: Dims, g: &Conv2dGeometry, cols: &mut [S]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let p = d.oh * d.ow;
    for ch in 0..d.c {
        let plane = &x[ch * d.h * d.w..(ch + 1) * d.h * d.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ch * kh + ki) * kw + kj) * p;
                let dst = &mut cols[row..row + p];
                for oi in 0..d.oh {
                    let ii = (oi * sh + ki) as isize - ph as isize;
                    let out = &mut dst[oi * d.ow..(oi + 1) * d.ow];
                    if ii < 0 || ii as usize >= d.h {
                        out.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * d.w..(ii as usize + 1) * d.w];
                    for (oj, v) in out.iter_mut().enumerate() {
                        let jj = (oj * sw + kj) as isize - pw as isize;
                        *v = if jj < 0 || jj as usize >= d.w {
                            S::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<S: Real>(cols: &[S], d: Dims, g: &Conv2dGeometry, x: &mut [S]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let p = d.oh * d.ow;
    for ch in 0..d.c {
        let plane = &mut x[ch * d.h * d.w..(ch + 1) * d.h * d.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ch * kh + ki) * kw + kj) * p;
                let src = &cols[row..row + p];
                for oi in 0..d.oh {
                    let ii = (oi * sh + ki) as isize - ph as isize;
                    if ii < 0 || ii as usize >= d.h {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * d.w..(ii as usize + 1) * d.w];
                    for (oj, &v) in src[oi * d.ow..(oi + 1) * d.ow].iter().enumerate() {
                        let jj = (oj * sw + kj) as isize - pw as isize;
                        if jj >= 0 && (jj as usize) < d.w {
                            dst[jj as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = a(m x k) * b(k x n)`, either operand optionally transposed.
#[allow(clippy::too_many_arguments)]
fn matmul<S: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    a_t: bool,
    b: &[S],
    b_t: bool,
    c: &mut [S],
    accumulate: bool,
) {
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
    let beta = if accumulate { S::one() } else { S::zero() };
    S::gemm(
        m,
        k,
        n,
        S::one(),
        a,
        rsa,
        csa,
        b,
        rsb,
        csb,
        beta,
        c,
        n as isize,
        1,
    );
}

/// Block kernel `[[A, B], [C, D]]` from four `rows x cols` blocks.
fn block<S: Real>(rows: usize, cols: usize, q: [&[S]; 4], signs: [S; 4]) -> Vec<S> {
    let mut out = vec![S::zero(); 4 * rows * cols];
    for r in 0..rows {
        for (bi, (blk, sign)) in q.iter().zip(signs).enumerate() {
            let (br, bc) = (bi / 2, bi % 2);
            let dst = (br * rows + r) * 2 * cols + bc * cols;
            for (o, &v) in out[dst..dst + cols]
                .iter_mut()
                .zip(&blk[r * cols..(r + 1) * cols])
            {
                *o = sign * v;
            }
        }
    }
    out
}

/// Extracts block `(br, bc)` of a `2rows x 2cols` matrix.
fn block_part<S: Real>(m: &[S], rows: usize, cols: usize, br: usize, bc: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let src = (br * rows + r) * 2 * cols + bc * cols;
        out.extend_from_slice(&m[src..src + cols]);
    }
    out
}

fn sum_in_order<S: Real>(parts: Vec<Vec<S>>) -> Vec<S> {
    let mut it = parts.into_iter();
    let mut acc = it.next().unwrap_or_default();
    for p in it {
        acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    acc
}

fn check4(name: &str, shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[a, b, c, d] => Ok([a, b, c, d]),
        other => Err(Error::Shape(format!("{name} must be 4-d, got {other:?}"))),
    }
}

fn check_kernel(w: &ComplexVar<'_, impl Real>, g: &Conv2dGeometry) -> Result<[usize; 4]> {
    let ws = check4("kernel", &w.shape())?;
    if (ws[2], ws[3]) != g.kernel {
        return Err(Error::Shape(format!(
            "kernel tensor {:?} does not match geometry {:?}",
            ws, g.kernel
        )));
    }
    Ok(ws)
}

fn check_bias(b: Option<&ComplexVar<'_, impl Real>>, c: usize) -> Result<()> {
    match b {
        Some(b) if b.shape() != [c] => Err(Error::Shape(format!(
            "bias shape {:?}, expected [{c}]",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

fn add_bias<'t, S: Real>(
    out: ComplexVar<'t, S>,
    bias: Option<ComplexVar<'t, S>>,
) -> ComplexVar<'t, S> {
    match bias {
        Some(b) => ComplexVar::new(out.re.add_channel(b.re), out.im.add_channel(b.im)),
        None => out,
    }
}

/// Complex convolution of `x: [N, C_in, H, W]` with `w: [C_out, C_in, kH, kW]`.
pub fn complex_conv2d<'t, S: Real>(
    x: ComplexVar<'t, S>,
    w: ComplexVar<'t, S>,
    bias: Option<ComplexVar<'t, S>>,
    geom: Conv2dGeometry,
) -> Result<ComplexVar<'t, S>> {
    let [n, cin, h, wd] = check4("input", &x.shape())?;
    let [cout, wcin, kh, kw] = check_kernel(&w, &geom)?;
    if wcin != cin {
        return Err(Error::Shape(format!(
            "input has {cin} channels, kernel expects {wcin}"
        )));
    }
    check_bias(bias.as_ref(), cout)?;
    let (oh, ow) = geom.conv_output(h, wd)?;
    let tape = x.tape();
    let exec = tape.exec();
    let (xr, xi, wr, wi) = (x.re.value(), x.im.value(), w.re.value(), w.im.value());
    let kdim = cin * kh * kw;
    let p = oh * ow;
    let d = Dims {
        c: cin,
        h,
        w: wd,
        oh,
        ow,
    };
    let one = S::one();
    let wc = block(
        cout,
        kdim,
        [wr.data(), wi.data(), wi.data(), wr.data()],
        [one, -one, one, one],
    );
    let in_plane = cin * h * wd;
    let cols_for = move |xr: &[S], xi: &[S], b: usize| {
        let mut cols = vec![S::zero(); 2 * kdim * p];
        im2col(
            &xr[b * in_plane..(b + 1) * in_plane],
            d,
            &geom,
            &mut cols[..kdim * p],
        );
        im2col(
            &xi[b * in_plane..(b + 1) * in_plane],
            d,
            &geom,
            &mut cols[kdim * p..],
        );
        cols
    };
    let (xrd, xid) = (xr.data(), xi.data());
    let per_sample = exec.map_range(n, |b| {
        let cols = cols_for(xrd, xid, b);
        let mut out = vec![S::zero(); 2 * cout * p];
        matmul(
            2 * cout,
            2 * kdim,
            p,
            &wc,
            false,
            &cols,
            false,
            &mut out,
            false,
        );
        out
    });
    let mut or = Vec::with_capacity(n * cout * p);
    let mut oi = Vec::with_capacity(n * cout * p);
    for s in &per_sample {
        or.extend_from_slice(&s[..cout * p]);
        oi.extend_from_slice(&s[cout * p..]);
    }
    let shape = vec![n, cout, oh, ow];
    let outs = tape.record(
        &[x.re, x.im, w.re, w.im],
        vec![Tensor::new(shape.clone(), or)?, Tensor::new(shape, oi)?],
        Box::new(move |g, need| {
            let (gr, gi) = (g[0].data(), g[1].data());
            let need_x = need[0] || need[1];
            let need_w = need[2] || need[3];
            let (xrd, xid) = (xr.data(), xi.data());
            let parts = exec.map_range(n, |b| {
                let mut dout = Vec::with_capacity(2 * cout * p);
                dout.extend_from_slice(&gr[b * cout * p..(b + 1) * cout * p]);
                dout.extend_from_slice(&gi[b * cout * p..(b + 1) * cout * p]);
                let dw = need_w.then(|| {
                    let cols = cols_for(xrd, xid, b);
                    let mut dw = vec![S::zero(); 4 * cout * kdim];
                    matmul(
                        2 * cout,
                        p,
                        2 * kdim,
                        &dout,
                        false,
                        &cols,
                        true,
                        &mut dw,
                        false,
                    );
                    dw
                });
                let dx = need_x.then(|| {
                    let mut dcols = vec![S::zero(); 2 * kdim * p];
                    matmul(
                        2 * kdim,
                        2 * cout,
                        p,
                        &wc,
                        true,
                        &dout,
                        false,
                        &mut dcols,
                        false,
                    );
                    let mut dx = vec![S::zero(); 2 * in_plane];
                    col2im(&dcols[..kdim * p], d, &geom, &mut dx[..in_plane]);
                    col2im(&dcols[kdim * p..], d, &geom, &mut dx[in_plane..]);
                    dx
                });
                (dw, dx)
            });
            let (dws, dxs): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
            let (mut dxr, mut dxi) = (None, None);
            if need_x {
                let mut r = Vec::with_capacity(n * in_plane);
                let mut i = Vec::with_capacity(n * in_plane);
                for dx in dxs.into_iter().flatten() {
                    r.extend_from_slice(&dx[..in_plane]);
                    i.extend_from_slice(&dx[in_plane..]);
                }
                dxr = Some(Tensor::new(vec![n, cin, h, wd], r).expect("dx"));
                dxi = Some(Tensor::new(vec![n, cin, h, wd], i).expect("dx"));
            }
            let (mut dwr, mut dwi) = (None, None);
            if need_w {
                let dwc = sum_in_order(dws.into_iter().flatten().collect());
                let q = |br, bc| block_part(&dwc, cout, kdim, br, bc);
                let (d11, d12, d21, d22) = (q(0, 0), q(0, 1), q(1, 0), q(1, 1));
                let wshape = vec![cout, cin, kh, kw];
                dwr = Some(
                    Tensor::new(
                        wshape.clone(),
                        d11.iter().zip(&d22).map(|(a, b)| *a + *b).collect(),
                    )
                    .expect("dw"),
                );
                dwi = Some(
                    Tensor::new(wshape, d21.iter().zip(&d12).map(|(a, b)| *a - *b).collect())
                        .expect("dw"),
                );
            }
            vec![dxr, dxi, dwr, dwi]
        }),
    );
    Ok(add_bias(ComplexVar::new(outs[0], outs[1]), bias))
}

/// Transposed complex convolution of `x: [N, C_in, H, W]` with
/// `w: [C_in, C_out, kH, kW]`.
pub fn complex_conv_transpose2d<'t, S: Real>(
    x: ComplexVar<'t, S>,
    w: ComplexVar<'t, S>,
    bias: Option<ComplexVar<'t, S>>,
    geom: Conv2dGeometry,
    output_padding: (usize, usize),
) -> Result<ComplexVar<'t, S>> {
    let [n, cin, hin, win] = check4("input", &x.shape())?;
    let [wcin, cout, kh, kw] = check_kernel(&w, &geom)?;
    if wcin != cin {
        return Err(Error::Shape(format!(
            "input has {cin} channels, transposed kernel expects {wcin}"
        )));
    }
    check_bias(bias.as_ref(), cout)?;
    let (oh, ow) = geom.transpose_output(hin, win, output_padding)?;
    let tape = x.tape();
    let exec = tape.exec();
    let (xr, xi, wr, wi) = (x.re.value(), x.im.value(), w.re.value(), w.im.value());
    let kdim = cout * kh * kw;
    let pin = hin * win;
    let out_plane = cout * oh * ow;
    // convolution geometry from the output back to the input
    let d = Dims {
        c: cout,
        h: oh,
        w: ow,
        oh: hin,
        ow: win,
    };
    let one = S::one();
    let bk = block(
        cin,
        kdim,
        [wr.data(), wi.data(), wi.data(), wr.data()],
        [one, one, -one, one],
    );
    let xs_for = move |xr: &[S], xi: &[S], b: usize| {
        let mut xs = Vec::with_capacity(2 * cin * pin);
        xs.extend_from_slice(&xr[b * cin * pin..(b + 1) * cin * pin]);
        xs.extend_from_slice(&xi[b * cin * pin..(b + 1) * cin * pin]);
        xs
    };
    let (xrd, xid) = (xr.data(), xi.data());
    let per_sample = exec.map_range(n, |b| {
        let xs = xs_for(xrd, xid, b);
        let mut cols = vec![S::zero(); 2 * kdim * pin];
        matmul(
            2 * kdim,
            2 * cin,
            pin,
            &bk,
            true,
            &xs,
            false,
            &mut cols,
            false,
        );
        let mut out = vec![S::zero(); 2 * out_plane];
        col2im(&cols[..kdim * pin], d, &geom, &mut out[..out_plane]);
        col2im(&cols[kdim * pin..], d, &geom, &mut out[out_plane..]);
        out
    });
    let mut or = Vec::with_capacity(n * out_plane);
    let mut oi = Vec::with_capacity(n * out_plane);
    for s in &per_sample {
        or.extend_from_slice(&s[..out_plane]);
        oi.extend_from_slice(&s[out_plane..]);
    }
    let shape = vec![n, cout, oh, ow];
    let outs = tape.record(
        &[x.re, x.im, w.re, w.im],
        vec![Tensor::new(shape.clone(), or)?, Tensor::new(shape, oi)?],
        Box::new(move |g, need| {
            let (gr, gi) = (g[0].data(), g[1].data());
            let need_x = need[0] || need[1];
            let need_w = need[2] || need[3];
            let (xrd, xid) = (xr.data(), xi.data());
            let parts = exec.map_range(n, |b| {
                let mut dcols = vec![S::zero(); 2 * kdim * pin];
                im2col(
                    &gr[b * out_plane..(b + 1) * out_plane],
                    d,
                    &geom,
                    &mut dcols[..kdim * pin],
                );
                im2col(
                    &gi[b * out_plane..(b + 1) * out_plane],
                    d,
                    &geom,
                    &mut dcols[kdim * pin..],
                );
                let dx = need_x.then(|| {
                    let mut dx = vec![S::zero(); 2 * cin * pin];
                    matmul(
                        2 * cin,
                        2 * kdim,
                        pin,
                        &bk,
                        false,
                        &dcols,
                        false,
                        &mut dx,
                        false,
                    );
                    dx
                });
                let dw = need_w.then(|| {
                    let xs = xs_for(xrd, xid, b);
                    let mut dw = vec![S::zero(); 4 * cin * kdim];
                    matmul(
                        2 * cin,
                        pin,
                        2 * kdim,
                        &xs,
                        false,
                        &dcols,
                        true,
                        &mut dw,
                        false,
                    );
                    dw
                });
                (dw, dx)
            });
            let (dws, dxs): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
            let (mut dxr, mut dxi) = (None, None);
            if need_x {
                let mut r = Vec::with_capacity(n * cin * pin);
                let mut i = Vec::with_capacity(n * cin * pin);
                for dx in dxs.into_iter().flatten() {
                    r.extend_from_slice(&dx[..cin * pin]);
                    i.extend_from_slice(&dx[cin * pin..]);
                }
                dxr = Some(Tensor::new(vec![n, cin, hin, win], r).expect("dx"));
                dxi = Some(Tensor::new(vec![n, cin, hin, win], i).expect("dx"));
            }
            let (mut dwr, mut dwi) = (None, None);
            if need_w {
                let db = sum_in_order(dws.into_iter().flatten().collect());
                let q = |br, bc| block_part(&db, cin, kdim, br, bc);
                let (d11, d12, d21, d22) = (q(0, 0), q(0, 1), q(1, 0), q(1, 1));
                let wshape = vec![cin, cout, kh, kw];
                dwr = Some(
                    Tensor::new(
                        wshape.clone(),
                        d11.iter().zip(&d22).map(|(a, b)| *a + *b).collect(),
                    )
                    .expect("dw"),
                );
                dwi = Some(
                    Tensor::new(wshape, d12.iter().zip(&d21).map(|(a, b)| *a - *b).collect())
                        .expect("dw"),
                );
            }
            vec![dxr, dxi, dwr, dwi]
        }),
    );
    Ok(add_bias(ComplexVar::new(outs[0], outs[1]), bias))
}

impl<S: Real> ComplexConvLayer<S> {
    /// Untracked convolution with this layer's parameters.
    pub fn conv2d(&self, x: &ComplexTensor<S>) -> Result<ComplexTensor<S>> {
        let tape = super::tape::Tape::new();
        let out = complex_conv2d(
            tape.complex_constant(x.clone()),
            tape.complex_constant(self.weight.clone()),
            Some(tape.complex_constant(self.bias.clone())),
            self.geometry,
        )?;
        Ok(out.value())
    }

    /// Untracked transposed convolution with this layer's parameters.
    pub fn conv_transpose2d(
        &self,
        x: &ComplexTensor<S>,
        output_padding: (usize, usize),
    ) -> Result<ComplexTensor<S>> {
        let tape = super::tape::Tape::new();
        let out = complex_conv_transpose2d(
            tape.complex_constant(x.clone()),
            tape.complex_constant(self.weight.clone()),
            Some(tape.complex_constant(self.bias.clone())),
            self.geometry,
            output_padding,
        )?;
        Ok(out.value())
    }
}
