//! Complex batch normalization with 2x2 covariance whitening.
//!
//! Per channel the centred activation `(xr, xi)` is multiplied by the inverse
//! square root of its covariance `V = [[vrr, vri], [vri, vii]] + eps I`. For a
//! symmetric positive-definite 2x2 matrix with `s = sqrt(det V)` and
//! `t = sqrt(trace V + 2 s)`, `V^{-1/2} = [[vii + s, -vri], [-vri, vrr + s]] / (s t)`.
//! The whitened value is then mapped through a learnable symmetric 2x2 `gamma`
//! and shifted by a complex `beta`.

use super::complex::ComplexVar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Learnable and running state of one complex batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBatchNorm<S> {
    pub gamma_rr: Tensor<S>,
    pub gamma_ri: Tensor<S>,
    pub gamma_ii: Tensor<S>,
    pub beta_re: Tensor<S>,
    pub beta_im: Tensor<S>,
    pub running: ChannelStats<S>,
    pub epsilon: f64,
    pub momentum: f64,
}

/// Per-channel complex mean and 2x2 covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats<S> {
    pub mean_re: Tensor<S>,
    pub mean_im: Tensor<S>,
    pub vrr: Tensor<S>,
    pub vri: Tensor<S>,
    pub vii: Tensor<S>,
}

impl<S: Real> ChannelStats<S> {
    /// Zero mean and covariance `I / sqrt(2)`.
    pub fn initial(channels: usize) -> Self {
        let d = S::lit(std::f64::consts::FRAC_1_SQRT_2);
        Self {
            mean_re: Tensor::zeros(&[channels]),
            mean_im: Tensor::zeros(&[channels]),
            vrr: Tensor::full(&[channels], d),
            vri: Tensor::zeros(&[channels]),
            vii: Tensor::full(&[channels], d),
        }
    }

    /// `self = momentum * self + (1 - momentum) * batch`.
    pub fn blend(&mut self, batch: &ChannelStats<S>, momentum: f64) {
        let m = S::lit(momentum);
        let k = S::one() - m;
        for (run, new) in [
            (&mut self.mean_re, &batch.mean_re),
            (&mut self.mean_im, &batch.mean_im),
            (&mut self.vrr, &batch.vrr),
            (&mut self.vri, &batch.vri),
            (&mut self.vii, &batch.vii),
        ] {
            run.data_mut()
                .iter_mut()
                .zip(new.data())
                .for_each(|(r, &b)| *r = m * *r + k * b);
        }
    }
}

impl<S: Real> ComplexBatchNorm<S> {
    /// `gamma = I / sqrt(2)`, `beta = 0`.
    pub fn new(channels: usize) -> Self {
        let d = S::lit(std::f64::consts::FRAC_1_SQRT_2);
        Self {
            gamma_rr: Tensor::full(&[channels], d),
            gamma_ri: Tensor::zeros(&[channels]),
            gamma_ii: Tensor::full(&[channels], d),
            beta_re: Tensor::zeros(&[channels]),
            beta_im: Tensor::zeros(&[channels]),
            running: ChannelStats::initial(channels),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.beta_re.numel()
    }
}

/// Tracked affine parameters of a batch-norm layer.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormVars<'t, S: Real> {
    pub gamma_rr: Var<'t, S>,
    pub gamma_ri: Var<'t, S>,
    pub gamma_ii: Var<'t, S>,
    pub beta_re: Var<'t, S>,
    pub beta_im: Var<'t, S>,
}

impl<'t, S: Real> BatchNormVars<'t, S> {
    pub fn register(tape: &'t Tape<S>, bn: &ComplexBatchNorm<S>, trainable: bool) -> Self {
        Self {
            gamma_rr: tape.leaf(bn.gamma_rr.clone(), trainable),
            gamma_ri: tape.leaf(bn.gamma_ri.clone(), trainable),
            gamma_ii: tape.leaf(bn.gamma_ii.clone(), trainable),
            beta_re: tape.leaf(bn.beta_re.clone(), trainable),
            beta_im: tape.leaf(bn.beta_im.clone(), trainable),
        }
    }
}

/// Centres and whitens `x: [N, C, ...]`.
///
/// With `running = None` the batch statistics are used (and returned, without
/// epsilon, for the running-average update); otherwise the given statistics are
/// treated as constants.
pub fn complex_whiten<'t, S: Real>(
    x: ComplexVar<'t, S>,
    running: Option<&ChannelStats<S>>,
    epsilon: f64,
) -> Result<(ComplexVar<'t, S>, Option<ChannelStats<S>>)> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::Shape(format!(
            "batch norm needs [N, C, ...], got {shape:?}"
        )));
    }
    let channels = shape[1];
    let tape = x.tape();
    let (mean_re, mean_im, vrr, vri, vii, batch) = match running {
        None => {
            let per_channel: usize = shape[0] * shape[2..].iter().product::<usize>();
            if per_channel < 2 {
                return Err(Error::Shape(
                    "batch statistics need at least two elements per channel".into(),
                ));
            }
            let mr = x.re.channel_mean();
            let mi = x.im.channel_mean();
            let cr = x.re.add_channel(mr.neg());
            let ci = x.im.add_channel(mi.neg());
            let vrr = cr.square().channel_mean();
            let vri = cr.mul(ci).channel_mean();
            let vii = ci.square().channel_mean();
            let stats = ChannelStats {
                mean_re: (*mr.value()).clone(),
                mean_im: (*mi.value()).clone(),
                vrr: (*vrr.value()).clone(),
                vri: (*vri.value()).clone(),
                vii: (*vii.value()).clone(),
            };
            (mr, mi, vrr, vri, vii, Some(stats))
        }
        Some(st) => {
            if st.mean_re.numel() != channels {
                return Err(Error::Shape(format!(
                    "running statistics hold {} channels, input has {channels}",
                    st.mean_re.numel()
                )));
            }
            (
                tape.constant(st.mean_re.clone()),
                tape.constant(st.mean_im.clone()),
                tape.constant(st.vrr.clone()),
                tape.constant(st.vri.clone()),
                tape.constant(st.vii.clone()),
                None,
            )
        }
    };
    let cr = x.re.add_channel(mean_re.neg());
    let ci = x.im.add_channel(mean_im.neg());
    let vrr = vrr.add_scalar(epsilon);
    let vii = vii.add_scalar(epsilon);
    let s = vrr.mul(vii).sub(vri.square()).sqrt();
    let t = vrr.add(vii).add(s.scale(2.0)).sqrt();
    let inv_st = s.mul(t).recip();
    let wrr = vii.add(s).mul(inv_st);
    let wii = vrr.add(s).mul(inv_st);
    let wri = vri.neg().mul(inv_st);
    let out_re = cr.mul_channel(wrr).add(ci.mul_channel(wri));
    let out_im = cr.mul_channel(wri).add(ci.mul_channel(wii));
    Ok((ComplexVar::new(out_re, out_im), batch))
}

/// Whitening followed by the `gamma` / `beta` affine map.
pub fn complex_batch_norm<'t, S: Real>(
    x: ComplexVar<'t, S>,
    params: &BatchNormVars<'t, S>,
    bn: &ComplexBatchNorm<S>,
    training: bool,
) -> Result<(ComplexVar<'t, S>, Option<ChannelStats<S>>)> {
    let running = (!training).then_some(&bn.running);
    let (w, batch) = complex_whiten(x, running, bn.epsilon)?;
    let re =
        w.re.mul_channel(params.gamma_rr)
            .add(w.im.mul_channel(params.gamma_ri))
            .add_channel(params.beta_re);
    let im =
        w.re.mul_channel(params.gamma_ri)
            .add(w.im.mul_channel(params.gamma_ii))
            .add_channel(params.beta_im);
    Ok((ComplexVar::new(re, im), batch))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::gradcheck::{check_gradients, project, randn};
    use super::super::tensor::ComplexTensor;
    use super::*;

    fn correlated_input(r: &mut ChaCha8Rng) -> ComplexTensor<f64> {
        let a = randn(&[4, 2, 5, 3], r);
        let b = randn(&[4, 2, 5, 3], r);
        let re = a.map(|v| 3.0 * v + 1.0);
        let im = a.zip_map(&b, |x, y| 0.5 * x + 0.2 * y - 2.0);
        ComplexTensor::new(re, im).unwrap()
    }

    fn stats(t: &ComplexTensor<f64>, ch: usize) -> [f64; 5] {
        let s = t.shape();
        let plane = s[2] * s[3];
        let mut vals = Vec::new();
        for b in 0..s[0] {
            let base = (b * s[1] + ch) * plane;
            for i in base..base + plane {
                vals.push((t.re.data()[i], t.im.data()[i]));
            }
        }
        let n = vals.len() as f64;
        let mr = vals.iter().map(|v| v.0).sum::<f64>() / n;
        let mi = vals.iter().map(|v| v.1).sum::<f64>() / n;
        let c = |f: &dyn Fn(&(f64, f64)) -> f64| vals.iter().map(f).sum::<f64>() / n;
        [
            mr,
            mi,
            c(&|v| (v.0 - mr).powi(2)),
            c(&|v| (v.0 - mr) * (v.1 - mi)),
            c(&|v| (v.1 - mi).powi(2)),
        ]
    }

    #[test]
    fn whitening_gives_zero_mean_identity_covariance() {
        let mut r = ChaCha8Rng::seed_from_u64(21);
        let x = correlated_input(&mut r);
        let tape = Tape::new();
        let (w, batch) = complex_whiten(tape.complex_constant(x.clone()), None, 0.0).unwrap();
        let w = w.value();
        for ch in 0..2 {
            let [mr, mi, vrr, vri, vii] = stats(&w, ch);
            assert!(mr.abs() < 1e-12 && mi.abs() < 1e-12);
            assert!((vrr - 1.0).abs() < 1e-10 && vri.abs() < 1e-10 && (vii - 1.0).abs() < 1e-10);
            let raw = stats(&x, ch);
            let b = batch.as_ref().unwrap();
            assert!((b.vri.data()[ch] - raw[3]).abs() < 1e-12);
            assert!((b.mean_im.data()[ch] - raw[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_uses_running_statistics() {
        let mut r = ChaCha8Rng::seed_from_u64(22);
        let x = correlated_input(&mut r);
        let mut bn = ComplexBatchNorm::<f64>::new(2);
        bn.running.mean_re = Tensor::full(&[2], 0.5);
        let tape = Tape::new();
        let vars = BatchNormVars::register(&tape, &bn, false);
        let (y, batch) =
            complex_batch_norm(tape.complex_constant(x.clone()), &vars, &bn, false).unwrap();
        assert!(batch.is_none());
        // covariance I/sqrt(2) + eps whitened by its own inverse square root
        let scale = 1.0 / (std::f64::consts::FRAC_1_SQRT_2 + BN_EPSILON).sqrt();
        let g = std::f64::consts::FRAC_1_SQRT_2;
        let i = 7;
        let want_re = (x.re.data()[i] - 0.5) * scale * g;
        let want_im = x.im.data()[i] * scale * g;
        assert!((y.re.value().data()[i] - want_re).abs() < 1e-12);
        assert!((y.im.value().data()[i] - want_im).abs() < 1e-12);
    }

    #[test]
    fn running_average_blend() {
        let mut run = ChannelStats::<f64>::initial(1);
        let batch = ChannelStats {
            mean_re: Tensor::full(&[1], 1.0),
            mean_im: Tensor::full(&[1], -1.0),
            vrr: Tensor::full(&[1], 2.0),
            vri: Tensor::full(&[1], 0.5),
            vii: Tensor::full(&[1], 3.0),
        };
        run.blend(&batch, BN_MOMENTUM);
        assert!((run.mean_re.data()[0] - 0.1).abs() < 1e-15);
        assert!((run.vri.data()[0] - 0.05).abs() < 1e-15);
        let d = std::f64::consts::FRAC_1_SQRT_2;
        assert!((run.vii.data()[0] - (0.9 * d + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn batch_norm_gradients() {
        let mut r = ChaCha8Rng::seed_from_u64(23);
        let x = correlated_input(&mut r);
        let bn = ComplexBatchNorm::<f64>::new(2);
        let ins = vec![
            x.re,
            x.im,
            randn(&[2], &mut r),
            randn(&[2], &mut r),
            randn(&[2], &mut r),
            randn(&[2], &mut r),
            randn(&[2], &mut r),
        ];
        let report = check_gradients(
            |_, v| {
                let vars = BatchNormVars {
                    gamma_rr: v[2],
                    gamma_ri: v[3],
                    gamma_ii: v[4],
                    beta_re: v[5],
                    beta_im: v[6],
                };
                let (y, _) = complex_batch_norm(ComplexVar::new(v[0], v[1]), &vars, &bn, true)?;
                Ok(project(y.re, 5).add(project(y.im, 6)))
            },
            &ins,
            1e-6,
        )
        .unwrap();
        assert!(report.max_relative_error() < 1e-5, "{report:?}");
    }

    #[test]
    fn single_element_batch_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.complex_constant(ComplexTensor::zeros(&[1, 3, 1, 1]));
        assert!(complex_whiten(x, None, BN_EPSILON).is_err());
    }
}
