//! Central finite-difference gradient checking for tape-built functions.

use rand::Rng;
use rand_distr::StandardNormal;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// A scalar function of several tensor inputs, rebuilt on a fresh tape per call.
pub trait ScalarFn: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> {}

impl<F> ScalarFn for F where F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> {}

/// Largest relative discrepancy found, per input.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub relative_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn evaluate(f: &impl ScalarFn, inputs: &[Tensor<f64>]) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    Ok(f(&tape, &vars)?.item())
}

/// Compares reverse-mode gradients of `f` with central differences of step `h`.
///
/// The error for each input is `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)`,
/// i.e. the worst element discrepancy relative to the gradient's scale.
pub fn check_gradients(
    f: impl ScalarFn,
    inputs: &[Tensor<f64>],
    h: f64,
) -> Result<GradCheckReport> {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut relative_errors = Vec::with_capacity(inputs.len());
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        let mut probe = inputs.to_vec();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let up = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = orig - h;
            let down = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        relative_errors.push(if scale > 0.0 { worst / scale } else { 0.0 });
    }
    Ok(GradCheckReport { relative_errors })
}

/// Random standard-normal tensor.
pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("sized to shape")
}

/// Reduces `v` to a scalar by a fixed random projection, so every output
/// element contributes a distinct weight to the checked gradient.
pub fn project<'t>(v: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let mut rng = crate::rng::stream_rng(seed, &[0x9e0]);
    let r = randn(&v.shape(), &mut rng);
    v.mul(v.tape().constant(r)).sum()
}
