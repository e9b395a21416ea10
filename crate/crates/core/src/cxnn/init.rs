use rand::Rng;

use super::tensor::{ComplexTensor, Tensor};
use crate::real::Real;

/// Complex kernel initialisation: magnitude ~ Rayleigh(1/sqrt(fan_in)),
/// phase ~ U(-pi, pi).
///
/// `fan_in` is `shape[1] * prod(shape[2..])`, which for a transposed kernel
/// `[C_in, C_out, kH, kW]` counts the output side, as is conventional.
pub fn init_complex_weights<S: Real, R: Rng + ?Sized>(
    shape: &[usize],
    rng: &mut R,
) -> ComplexTensor<S> {
    let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
    let sigma = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let mut re = Vec::with_capacity(n);
    let mut im = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let magnitude = sigma * (-2.0 * (1.0 - u).ln()).sqrt();
        let phase = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        re.push(S::lit(magnitude * phase.cos()));
        im.push(S::lit(magnitude * phase.sin()));
    }
    ComplexTensor {
        re: Tensor::new(shape.to_vec(), re).expect("init shape"),
        im: Tensor::new(shape.to_vec(), im).expect("init shape"),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn magnitude_and_phase_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = [50, 8, 5, 5];
        let w = init_complex_weights::<f64, _>(&shape, &mut rng);
        let sigma = 1.0 / 200f64.sqrt();
        let n = w.re.numel() as f64;
        let mags: Vec<f64> =
            w.re.data()
                .iter()
                .zip(w.im.data())
                .map(|(a, b)| a.hypot(*b))
                .collect();
        // Rayleigh: E|w| = sigma sqrt(pi/2), E|w|^2 = 2 sigma^2
        let mean = mags.iter().sum::<f64>() / n;
        let second = mags.iter().map(|m| m * m).sum::<f64>() / n;
        assert!((mean / (sigma * (std::f64::consts::PI / 2.0).sqrt()) - 1.0).abs() < 0.02);
        assert!((second / (2.0 * sigma * sigma) - 1.0).abs() < 0.03);
        // phase uniform: chi-square over 16 bins, 15 dof, 0.999 quantile ~ 37.7
        let mut bins = [0usize; 16];
        for (a, b) in w.re.data().iter().zip(w.im.data()) {
            let u = (b.atan2(*a) + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
            bins[((u * 16.0) as usize).min(15)] += 1;
        }
        let expected = n / 16.0;
        let chi2: f64 = bins
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 37.7, "chi2 {chi2}");
    }

    #[test]
    fn same_seed_same_weights() {
        let a = init_complex_weights::<f32, _>(&[2, 3, 3, 3], &mut ChaCha8Rng::seed_from_u64(1));
        let b = init_complex_weights::<f32, _>(&[2, 3, 3, 3], &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }
}
