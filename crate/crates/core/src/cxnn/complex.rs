//! Complex-valued tracked variables built from pairs of real variables.

use super::tape::{Tape, Var};
use super::tensor::{ComplexTensor, Tensor};
use crate::real::Real;

/// Below this magnitude the polar mask is defined as 0.
pub const MASK_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct ComplexVar<'t, S: Real> {
    pub re: Var<'t, S>,
    pub im: Var<'t, S>,
}

impl<S: Real> Tape<S> {
    pub fn complex_param(&self, value: ComplexTensor<S>) -> ComplexVar<'_, S> {
        ComplexVar {
            re: self.param(value.re),
            im: self.param(value.im),
        }
    }

    pub fn complex_constant(&self, value: ComplexTensor<S>) -> ComplexVar<'_, S> {
        ComplexVar {
            re: self.constant(value.re),
            im: self.constant(value.im),
        }
    }
}

impl<'t, S: Real> ComplexVar<'t, S> {
    pub fn new(re: Var<'t, S>, im: Var<'t, S>) -> Self {
        assert_eq!(re.shape(), im.shape(), "complex parts must share a shape");
        Self { re, im }
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.re.tape()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.re.shape()
    }

    pub fn value(&self) -> ComplexTensor<S> {
        ComplexTensor {
            re: (*self.re.value()).clone(),
            im: (*self.im.value()).clone(),
        }
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.re.add(o.re), self.im.add(o.im))
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.re.sub(o.re), self.im.sub(o.im))
    }

    /// Elementwise complex product.
    pub fn mul(self, o: Self) -> Self {
        let re = self.re.mul(o.re).sub(self.im.mul(o.im));
        let im = self.re.mul(o.im).add(self.im.mul(o.re));
        Self::new(re, im)
    }

    /// Leaky CReLU: leaky ReLU applied to the real and imaginary parts separately.
    pub fn lecrelu(self, slope: f64) -> Self {
        Self::new(self.re.leaky_relu(slope), self.im.leaky_relu(slope))
    }

    pub fn reshape(self, shape: &[usize]) -> Self {
        Self::new(self.re.reshape(shape), self.im.reshape(shape))
    }

    pub fn concat_channels(parts: &[Self]) -> Self {
        let re: Vec<_> = parts.iter().map(|p| p.re).collect();
        let im: Vec<_> = parts.iter().map(|p| p.im).collect();
        Self::new(Var::concat_channels(&re), Var::concat_channels(&im))
    }

    /// Squared magnitude `re^2 + im^2`.
    pub fn abs_sq(self) -> Var<'t, S> {
        self.re.square().add(self.im.square())
    }

    /// Polar ratio mask `tanh(|O|) * O / |O|`, and 0 where `|O| < MASK_EPS`.
    pub fn polar_mask(self) -> Self {
        let (or, oi) = (self.re.value(), self.im.value());
        let eps = S::lit(MASK_EPS);
        let n = or.numel();
        let mut mr = Vec::with_capacity(n);
        let mut mi = Vec::with_capacity(n);
        let mut gain = Vec::with_capacity(n);
        let mut slope = Vec::with_capacity(n);
        for (&a, &b) in or.data().iter().zip(oi.data()) {
            let r = (a * a + b * b).sqrt();
            let (g, dg_over_r) = mask_gain(r);
            if r < eps {
                mr.push(S::zero());
                mi.push(S::zero());
            } else {
                mr.push(g * a);
                mi.push(g * b);
            }
            gain.push(g);
            slope.push(dg_over_r);
        }
        let shape = or.shape().to_vec();
        let outs = self.tape().record(
            &[self.re, self.im],
            vec![
                Tensor::new(shape.clone(), mr).expect("mask size"),
                Tensor::new(shape, mi).expect("mask size"),
            ],
            Box::new(move |g, _| {
                // dM/dO = g I + (g'(r)/r) O O^T
                let (gr, gi) = (g[0].data(), g[1].data());
                let mut dr = g[0].clone();
                let mut di = g[1].clone();
                for idx in 0..gr.len() {
                    let (a, b) = (or.data()[idx], oi.data()[idx]);
                    let dot = gr[idx] * a + gi[idx] * b;
                    dr.data_mut()[idx] = gain[idx] * gr[idx] + slope[idx] * dot * a;
                    di.data_mut()[idx] = gain[idx] * gi[idx] + slope[idx] * dot * b;
                }
                vec![Some(dr), Some(di)]
            }),
        );
        Self::new(outs[0], outs[1])
    }
}

/// `g(r) = tanh(r)/r` and `g'(r)/r`, with series expansions near 0.
fn mask_gain<S: Real>(r: S) -> (S, S) {
    let rf = r.f64();
    let (g, h) = if rf < 1e-3 {
        let r2 = rf * rf;
        (
            1.0 - r2 / 3.0 + 2.0 * r2 * r2 / 15.0,
            -2.0 / 3.0 + 8.0 * r2 / 15.0,
        )
    } else {
        let t = rf.tanh();
        let sech2 = 1.0 - t * t;
        (t / rf, (sech2 * rf - t) / (rf * rf * rf))
    };
    (S::lit(g), S::lit(h))
}

/// Value-level polar mask estimation on a complex tensor.
pub fn estimate_mask<S: Real>(o: &ComplexTensor<S>) -> ComplexTensor<S> {
    let eps = S::lit(MASK_EPS);
    let mut re = o.re.clone();
    let mut im = o.im.clone();
    for (a, b) in re.data_mut().iter_mut().zip(im.data_mut()) {
        let r = (*a * *a + *b * *b).sqrt();
        if r < eps {
            *a = S::zero();
            *b = S::zero();
        } else {
            let g = r.tanh() / r;
            *a *= g;
            *b *= g;
        }
    }
    ComplexTensor { re, im }
}

/// Value-level elementwise complex product `mask * x`.
pub fn apply_mask<S: Real>(
    mask: &ComplexTensor<S>,
    x: &ComplexTensor<S>,
) -> crate::error::Result<ComplexTensor<S>> {
    if mask.shape() != x.shape() {
        return Err(crate::error::Error::Shape(format!(
            "mask {:?} vs spectrogram {:?}",
            mask.shape(),
            x.shape()
        )));
    }
    let re = mask
        .re
        .zip_map(&x.re, |a, b| a * b)
        .zip_map(&mask.im.zip_map(&x.im, |a, b| a * b), |p, q| p - q);
    let im = mask
        .re
        .zip_map(&x.im, |a, b| a * b)
        .zip_map(&mask.im.zip_map(&x.re, |a, b| a * b), |p, q| p + q);
    Ok(ComplexTensor { re, im })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::gradcheck::{check_gradients, project, randn};
    use super::*;

    fn ct(re: Vec<f64>, im: Vec<f64>) -> ComplexTensor<f64> {
        let n = re.len();
        ComplexTensor::new(
            Tensor::new(vec![n], re).unwrap(),
            Tensor::new(vec![n], im).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn mask_values() {
        let m = estimate_mask(&ct(vec![0.0, 0.5, 3.0, 1e3], vec![0.0, 0.0, 4.0, 0.0]));
        assert_eq!((m.re.data()[0], m.im.data()[0]), (0.0, 0.0));
        assert!((m.re.data()[1] - 0.462_117_157_260_009_8).abs() < 1e-15);
        assert_eq!(m.im.data()[1], 0.0);
        let t5 = 5.0f64.tanh();
        assert!((m.re.data()[2] - t5 * 0.6).abs() < 1e-15);
        assert!((m.im.data()[2] - t5 * 0.8).abs() < 1e-15);
        assert!((m.re.data()[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mask_magnitude_is_bounded() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let o = ComplexTensor::new(
            randn(&[1000], &mut r).map(|v| v * 10.0),
            randn(&[1000], &mut r),
        )
        .unwrap();
        let m = estimate_mask(&o);
        for (a, b) in m.re.data().iter().zip(m.im.data()) {
            assert!(a * a + b * b <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn tracked_mask_matches_value_level() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let o =
            ComplexTensor::new(randn(&[2, 1, 3, 4], &mut r), randn(&[2, 1, 3, 4], &mut r)).unwrap();
        let tape = Tape::new();
        let m = tape.complex_constant(o.clone()).polar_mask().value();
        assert_eq!(m, estimate_mask(&o));
    }

    #[test]
    fn apply_mask_matches_polar_form() {
        let mut r = ChaCha8Rng::seed_from_u64(10);
        let m = ComplexTensor::new(randn(&[64], &mut r), randn(&[64], &mut r)).unwrap();
        let x = ComplexTensor::new(randn(&[64], &mut r), randn(&[64], &mut r)).unwrap();
        let y = apply_mask(&m, &x).unwrap();
        for i in 0..64 {
            let (mr, mi) = (m.re.data()[i], m.im.data()[i]);
            let (xr, xi) = (x.re.data()[i], x.im.data()[i]);
            let mag = mr.hypot(mi) * xr.hypot(xi);
            let phase = mi.atan2(mr) + xi.atan2(xr);
            assert!((y.re.data()[i] - mag * phase.cos()).abs() < 1e-9);
            assert!((y.im.data()[i] - mag * phase.sin()).abs() < 1e-9);
        }
        let ones = ct(vec![1.0; 64], vec![0.0; 64]);
        let flat = ComplexTensor::new(x.re.clone().reshaped(&[64]).unwrap(), x.im.clone()).unwrap();
        assert_eq!(apply_mask(&ones, &flat).unwrap(), flat);
        let i_mask = ct(vec![0.0], vec![1.0]);
        let rot = apply_mask(&i_mask, &ct(vec![2.0], vec![1.0])).unwrap();
        assert_eq!((rot.re.data()[0], rot.im.data()[0]), (-1.0, 2.0));
        assert!(apply_mask(&i_mask, &flat).is_err());
    }

    #[test]
    fn polar_mask_gradient() {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let mut re = randn(&[20], &mut r);
        let mut im = randn(&[20], &mut r);
        // include a point well inside the series branch
        re.data_mut()[0] = 2e-4;
        im.data_mut()[0] = -1e-4;
        let report = check_gradients(
            |_, v| {
                let m = ComplexVar::new(v[0], v[1]).polar_mask();
                Ok(project(m.re, 1).add(project(m.im, 2)))
            },
            &[re, im],
            1e-7,
        )
        .unwrap();
        assert!(report.max_relative_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn complex_product_and_lecrelu_gradients() {
        let mut r = ChaCha8Rng::seed_from_u64(13);
        let ins: Vec<_> = (0..4).map(|_| randn(&[6], &mut r)).collect();
        let report = check_gradients(
            |_, v| {
                let a = ComplexVar::new(v[0], v[1]);
                let b = ComplexVar::new(v[2], v[3]);
                let y = a.mul(b).lecrelu(0.2).sub(b);
                Ok(project(y.re, 3).add(project(y.abs_sq(), 4)))
            },
            &ins,
            1e-6,
        )
        .unwrap();
        assert!(report.max_relative_error() < 1e-6, "{report:?}");
    }
}
