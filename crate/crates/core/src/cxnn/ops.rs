//! Real-valued tracked operations.

use std::rc::Rc;

use super::tape::Var;
use super::tensor::Tensor;
use crate::real::Real;

fn same_shape<S: Real>(op: &str, a: &Tensor<S>, b: &Tensor<S>) {
    assert_eq!(a.shape(), b.shape(), "{op}: operand shapes differ");
}

impl<'t, S: Real> Var<'t, S> {
    /// Elementwise op with derivative `df(x, y)` in terms of input and output.
    fn unary(self, f: impl Fn(S) -> S, df: impl Fn(S, S) -> S + 'static) -> Var<'t, S> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let out = (*y).clone();
        self.tape().record1(
            &[self],
            out,
            Box::new(move |g, _| {
                let mut d = g[0].clone();
                d.data_mut()
                    .iter_mut()
                    .zip(x.data().iter().zip(y.data()))
                    .for_each(|(d, (&x, &y))| *d *= df(x, y));
                vec![Some(d)]
            }),
        )
    }

    pub fn add(self, other: Var<'t, S>) -> Var<'t, S> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b);
        self.tape().record1(
            &[self, other],
            a.zip_map(&b, |x, y| x + y),
            Box::new(|g, _| vec![Some(g[0].clone()), Some(g[0].clone())]),
        )
    }

    pub fn sub(self, other: Var<'t, S>) -> Var<'t, S> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b);
        self.tape().record1(
            &[self, other],
            a.zip_map(&b, |x, y| x - y),
            Box::new(|g, _| vec![Some(g[0].clone()), Some(g[0].map(|v| -v))]),
        )
    }

    pub fn mul(self, other: Var<'t, S>) -> Var<'t, S> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b);
        let out = a.zip_map(&b, |x, y| x * y);
        self.tape().record1(
            &[self, other],
            out,
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g[0].zip_map(&b, |g, y| g * y)),
                    need[1].then(|| g[0].zip_map(&a, |g, x| g * x)),
                ]
            }),
        )
    }

    pub fn div(self, other: Var<'t, S>) -> Var<'t, S> {
        let (a, b) = (self.value(), other.value());
        same_shape("div", &a, &b);
        let out = a.zip_map(&b, |x, y| x / y);
        self.tape().record1(
            &[self, other],
            out,
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g[0].zip_map(&b, |g, y| g / y)),
                    need[1].then(|| {
                        let mut d = g[0].clone();
                        d.data_mut()
                            .iter_mut()
                            .zip(a.data().iter().zip(b.data()))
                            .for_each(|(d, (&x, &y))| *d = -*d * x / (y * y));
                        d
                    }),
                ]
            }),
        )
    }

    pub fn neg(self) -> Var<'t, S> {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> Var<'t, S> {
        let c = S::lit(c);
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t, S> {
        let c = S::lit(c);
        self.unary(move |x| x + c, |_, _| S::one())
    }

    pub fn square(self) -> Var<'t, S> {
        let two = S::lit(2.0);
        self.unary(|x| x * x, move |x, _| two * x)
    }

    pub fn sqrt(self) -> Var<'t, S> {
        let half = S::lit(0.5);
        self.unary(|x| x.sqrt(), move |_, y| half / y)
    }

    pub fn recip(self) -> Var<'t, S> {
        self.unary(|x| x.recip(), |_, y| -y * y)
    }

    pub fn tanh(self) -> Var<'t, S> {
        self.unary(|x| x.tanh(), |_, y| S::one() - y * y)
    }

    /// `x` for `x >= 0`, `slope * x` otherwise.
    pub fn leaky_relu(self, slope: f64) -> Var<'t, S> {
        let s = S::lit(slope);
        self.unary(
            move |x| if x >= S::zero() { x } else { s * x },
            move |x, _| if x >= S::zero() { S::one() } else { s },
        )
    }

    pub fn sum(self) -> Var<'t, S> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape().record1(
            &[self],
            Tensor::scalar(x.sum()),
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g[0].data()[0]))]),
        )
    }

    pub fn mean(self) -> Var<'t, S> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, S> {
        let x = self.value();
        let old = x.shape().to_vec();
        let out = (*x)
            .clone()
            .reshaped(shape)
            .expect("reshape: element count");
        self.tape().record1(
            &[self],
            out,
            Box::new(move |g, _| vec![Some(g[0].clone().reshaped(&old).expect("same numel"))]),
        )
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<'t, S>]) -> Var<'t, S> {
        let tape = parts[0].tape();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let s0 = values[0].shape().to_vec();
        assert_eq!(s0.len(), 4, "concat_channels expects 4-d tensors");
        for v in &values {
            assert!(
                v.shape()[0] == s0[0] && v.shape()[2..] == s0[2..],
                "concat_channels: incompatible shapes {:?} and {:?}",
                v.shape(),
                s0
            );
        }
        let (n, plane) = (s0[0], s0[2] * s0[3]);
        let chans: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        let total: usize = chans.iter().sum();
        let mut out = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for (v, &c) in values.iter().zip(&chans) {
                out.extend_from_slice(&v.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let out = Tensor::new(vec![n, total, s0[2], s0[3]], out).expect("concat size");
        tape.record1(
            parts,
            out,
            Box::new(move |g, need| {
                let gd = g[0].data();
                let mut offset = 0;
                chans
                    .iter()
                    .zip(need)
                    .map(|(&c, &need)| {
                        let start = offset;
                        offset += c;
                        need.then(|| {
                            let mut d = Vec::with_capacity(n * c * plane);
                            for b in 0..n {
                                let base = (b * total + start) * plane;
                                d.extend_from_slice(&gd[base..base + c * plane]);
                            }
                            Tensor::new(vec![n, c, s0[2], s0[3]], d).expect("split size")
                        })
                    })
                    .collect()
            }),
        )
    }

    /// Mean over batch and spatial axes of `[N, C, ...]`, giving `[C]`.
    pub fn channel_mean(self) -> Var<'t, S> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        let plane: usize = shape[2..].iter().product();
        let count = S::lit((n * plane) as f64);
        let mut out = vec![S::zero(); c];
        for b in 0..n {
            for (ch, o) in out.iter_mut().enumerate() {
                let base = (b * c + ch) * plane;
                *o += x.data()[base..base + plane].iter().copied().sum::<S>();
            }
        }
        out.iter_mut().for_each(|v| *v /= count);
        self.tape().record1(
            &[self],
            Tensor::new(vec![c], out).expect("channel mean"),
            Box::new(move |g, _| {
                let mut d = Tensor::zeros(&shape);
                let dd = d.data_mut();
                for b in 0..n {
                    for ch in 0..c {
                        let v = g[0].data()[ch] / count;
                        let base = (b * c + ch) * plane;
                        dd[base..base + plane].iter_mut().for_each(|x| *x = v);
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    /// `x[n, c, ...] + v[c]`.
    pub fn add_channel(self, v: Var<'t, S>) -> Var<'t, S> {
        let (x, vv) = (self.value(), v.value());
        let shape = x.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        assert_eq!(vv.shape(), [c], "add_channel: vector length");
        let plane: usize = shape[2..].iter().product();
        let mut out = (*x).clone();
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                out.data_mut()[base..base + plane]
                    .iter_mut()
                    .for_each(|o| *o += vv.data()[ch]);
            }
        }
        self.tape().record1(
            &[self, v],
            out,
            Box::new(move |g, need| {
                let dv = need[1].then(|| {
                    let mut d = vec![S::zero(); c];
                    for b in 0..n {
                        for (ch, dch) in d.iter_mut().enumerate() {
                            let base = (b * c + ch) * plane;
                            *dch += g[0].data()[base..base + plane].iter().copied().sum::<S>();
                        }
                    }
                    Tensor::new(vec![c], d).expect("len c")
                });
                vec![need[0].then(|| g[0].clone()), dv]
            }),
        )
    }

    /// `x[n, c, ...] * v[c]`.
    pub fn mul_channel(self, v: Var<'t, S>) -> Var<'t, S> {
        let (x, vv) = (self.value(), v.value());
        let shape = x.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        assert_eq!(vv.shape(), [c], "mul_channel: vector length");
        let plane: usize = shape[2..].iter().product();
        let mut out = (*x).clone();
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                out.data_mut()[base..base + plane]
                    .iter_mut()
                    .for_each(|o| *o *= vv.data()[ch]);
            }
        }
        self.tape().record1(
            &[self, v],
            out,
            Box::new(move |g, need| {
                let gd = g[0].data();
                let dx = need[0].then(|| {
                    let mut d = g[0].clone();
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * plane;
                            d.data_mut()[base..base + plane]
                                .iter_mut()
                                .for_each(|o| *o *= vv.data()[ch]);
                        }
                    }
                    d
                });
                let dv = need[1].then(|| {
                    let mut d = vec![S::zero(); c];
                    for b in 0..n {
                        for (ch, dch) in d.iter_mut().enumerate() {
                            let base = (b * c + ch) * plane;
                            *dch += gd[base..base + plane]
                                .iter()
                                .zip(&x.data()[base..base + plane])
                                .map(|(&g, &x)| g * x)
                                .sum::<S>();
                        }
                    }
                    Tensor::new(vec![c], d).expect("len c")
                });
                vec![dx, dv]
            }),
        )
    }

    /// Row-wise inner products of two `[B, L]` tensors, giving `[B]`.
    pub fn dot_rows(self, other: Var<'t, S>) -> Var<'t, S> {
        let (a, b) = (self.value(), other.value());
        same_shape("dot_rows", &a, &b);
        let (rows, len) = rows_of(&a);
        let out: Vec<S> = (0..rows)
            .map(|r| {
                a.data()[r * len..(r + 1) * len]
                    .iter()
                    .zip(&b.data()[r * len..(r + 1) * len])
                    .map(|(&x, &y)| x * y)
                    .sum()
            })
            .collect();
        self.tape().record1(
            &[self, other],
            Tensor::new(vec![rows], out).expect("rows"),
            Box::new(move |g, need| {
                let scale_rows = |t: &Tensor<S>| {
                    let mut d = t.clone();
                    for r in 0..rows {
                        let gr = g[0].data()[r];
                        d.data_mut()[r * len..(r + 1) * len]
                            .iter_mut()
                            .for_each(|v| *v *= gr);
                    }
                    d
                };
                vec![
                    need[0].then(|| scale_rows(&b)),
                    need[1].then(|| scale_rows(&a)),
                ]
            }),
        )
    }

    /// Row-wise Euclidean norms of a `[B, L]` tensor, giving `[B]`.
    pub fn norm_rows(self) -> Var<'t, S> {
        self.dot_rows(self).sqrt()
    }

    /// Row-wise cosine similarity of `[B, L]` tensors, giving `[B]`.
    ///
    /// A row where either norm is below `eps` yields 0 with zero gradient.
    pub fn cosine_rows(self, other: Var<'t, S>, eps: f64) -> Var<'t, S> {
        let (a, b) = (self.value(), other.value());
        same_shape("cosine_rows", &a, &b);
        let (rows, len) = rows_of(&a);
        let eps = S::lit(eps);
        let mut stats = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let ra = &a.data()[r * len..(r + 1) * len];
            let rb = &b.data()[r * len..(r + 1) * len];
            let dot: S = ra.iter().zip(rb).map(|(&x, &y)| x * y).sum();
            let na = ra.iter().map(|&x| x * x).sum::<S>().sqrt();
            let nb = rb.iter().map(|&x| x * x).sum::<S>().sqrt();
            let live = na >= eps && nb >= eps;
            let cos = if live { dot / (na * nb) } else { S::zero() };
            stats.push((live, na, nb, cos));
            out.push(cos);
        }
        self.tape().record1(
            &[self, other],
            Tensor::new(vec![rows], out).expect("rows"),
            Box::new(move |g, need| {
                // d cos / da = b / (|a||b|) - cos * a / |a|^2
                let grad = |x: &Tensor<S>, y: &Tensor<S>, first: bool| {
                    let mut d = Tensor::zeros(x.shape());
                    for (r, &(live, na, nb, cos)) in stats.iter().enumerate() {
                        if !live {
                            continue;
                        }
                        let gr = g[0].data()[r];
                        let (nx, ny) = if first { (na, nb) } else { (nb, na) };
                        let range = r * len..(r + 1) * len;
                        for ((d, &xv), &yv) in d.data_mut()[range.clone()]
                            .iter_mut()
                            .zip(&x.data()[range.clone()])
                            .zip(&y.data()[range])
                        {
                            *d = gr * (yv / (nx * ny) - cos * xv / (nx * nx));
                        }
                    }
                    d
                };
                vec![
                    need[0].then(|| grad(&a, &b, true)),
                    need[1].then(|| grad(&b, &a, false)),
                ]
            }),
        )
    }
}

fn rows_of<S: Real>(t: &Tensor<S>) -> (usize, usize) {
    match t.shape() {
        [len] => (1, *len),
        [rows, rest @ ..] => (*rows, rest.iter().product()),
        [] => (1, 1),
    }
}
