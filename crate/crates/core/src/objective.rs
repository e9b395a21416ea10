//! Training losses and the Monte-Carlo harness comparing noisy-target and
//! clean-target regression.
//!
//! With `x1 = y + n` and `x2 = y + m` for independent zero-mean `n`, `m`, the
//! squared error against the noisy target decomposes as
//! `E[(f(x1) - x2)^2] = E[(f(x1) - y)^2] + Var(m)`, so both regimes share a
//! minimiser. The harness measures each side empirically.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::cxnn::{Tensor, Var};
use crate::dcunet::Dcunet;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::real::Real;
use crate::rng::stream_rng;
use crate::spectral::StftConfig;

/// Norms below this zero out their cosine term.
pub const LOSS_EPS: f64 = 1e-8;

/// Noisy input `x`, target `y` and estimate `y_hat`, all the same length.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub y_hat: &'a [f64],
}

impl LossInputs<'_> {
    fn check(&self) -> Result<()> {
        if self.x.len() != self.y.len() || self.y.len() != self.y_hat.len() {
            return Err(Error::Shape(format!(
                "loss inputs differ in length: {}, {}, {}",
                self.x.len(),
                self.y.len(),
                self.y_hat.len()
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn guarded_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na < LOSS_EPS || nb < LOSS_EPS {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Energy share of the target: `|y|^2 / (|y|^2 + |x - y|^2)`.
pub fn wsdr_alpha(x: &[f64], y: &[f64]) -> f64 {
    let ey = dot(y, y);
    let en: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if ey + en == 0.0 {
        1.0
    } else {
        ey / (ey + en)
    }
}

/// Weighted SDR loss: `-a cos(y, y_hat) - (1 - a) cos(x - y, x - y_hat)`.
pub fn wsdr_loss(inp: LossInputs<'_>) -> Result<f64> {
    inp.check()?;
    let alpha = wsdr_alpha(inp.x, inp.y);
    let noise: Vec<f64> = inp.x.iter().zip(inp.y).map(|(a, b)| a - b).collect();
    let noise_hat: Vec<f64> = inp.x.iter().zip(inp.y_hat).map(|(a, b)| a - b).collect();
    Ok(-alpha * guarded_cosine(inp.y, inp.y_hat)
        - (1.0 - alpha) * guarded_cosine(&noise, &noise_hat))
}

/// Tracked weighted SDR loss per row of `[B, L]` batches; returns `[B]`.
///
/// `x` and `y` are data; gradients flow only into `y_hat`.
pub fn wsdr_loss_rows<'t, S: Real>(
    x: &Tensor<S>,
    y: &Tensor<S>,
    y_hat: Var<'t, S>,
) -> Result<Var<'t, S>> {
    let shape = y_hat.shape();
    if shape.len() != 2 || x.shape() != shape.as_slice() || y.shape() != shape.as_slice() {
        return Err(Error::Shape(format!(
            "wsdr expects equal [B, L] inputs, got {:?}, {:?}, {shape:?}",
            x.shape(),
            y.shape()
        )));
    }
    let (rows, len) = (shape[0], shape[1]);
    let tape = y_hat.tape();
    let mut alpha = Vec::with_capacity(rows);
    let xf = x.to_f64();
    let yf = y.to_f64();
    for r in 0..rows {
        let span = r * len..(r + 1) * len;
        alpha.push(S::lit(wsdr_alpha(&xf[span.clone()], &yf[span])));
    }
    let alpha = Tensor::new(vec![rows], alpha)?;
    let beta = alpha.map(|a| S::one() - a);
    let xv = tape.constant(x.clone());
    let noise = tape.constant(x.zip_map(y, |a, b| a - b));
    let target = tape.constant(y.clone()).cosine_rows(y_hat, LOSS_EPS);
    let residual = noise.cosine_rows(xv.sub(y_hat), LOSS_EPS);
    Ok(target
        .mul(tape.constant(alpha))
        .add(residual.mul(tape.constant(beta)))
        .neg())
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("loss of empty vectors".into()));
    }
    Ok(())
}

/// Mean squared difference.
pub fn l2_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Mean absolute difference.
pub fn l1_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Outcome of the identity-estimator Monte-Carlo experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// Empirical `E[(f(x1) - y)^2]`.
    pub l2_n2c: f64,
    /// Empirical `E[(f(x1) - x2)^2]`.
    pub l2_n2n: f64,
    /// Sample variance of the target noise `m`.
    pub var_m: f64,
    /// `l2_n2n - l2_n2c - var_m`.
    pub gap: f64,
    pub trials: usize,
    pub sigma: f64,
}

/// Minimum trial count for [`n2n_equivalence_experiment`].
pub const MIN_TRIALS: usize = 10_000;
const SHARD: usize = 4096;

/// Per-shard sums, reduced in shard order.
#[derive(Default, Clone, Copy)]
struct Sums {
    n: f64,
    m: f64,
    m2: f64,
    clean_sq: f64,
    noisy_sq: f64,
}

fn clean_value(t: usize) -> f64 {
    (2.0 * std::f64::consts::PI * t as f64 / 97.0).sin()
}

/// Identity-estimator experiment with a caller-supplied noise draw.
///
/// Rejects noise whose sample mean for `n` or `m` exceeds `4 sigma / sqrt(trials)`,
/// since the decomposition only holds for zero-mean noise.
pub fn equivalence_with<F>(
    sigma: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
    draw: F,
) -> Result<EquivalenceReport>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync + Send,
{
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let shards = trials.div_ceil(SHARD);
    let partial = exec.map_range(shards, |s| {
        let mut rng = stream_rng(seed, &[s as u64]);
        let mut acc = Sums::default();
        for t in s * SHARD..((s + 1) * SHARD).min(trials) {
            let y = clean_value(t);
            let n = draw(&mut rng);
            let m = draw(&mut rng);
            let (x1, x2) = (y + n, y + m);
            let f = x1;
            acc.n += n;
            acc.m += m;
            acc.m2 += m * m;
            acc.clean_sq += (f - y) * (f - y);
            acc.noisy_sq += (f - x2) * (f - x2);
        }
        acc
    });
    let mut s = Sums::default();
    for p in partial {
        s.n += p.n;
        s.m += p.m;
        s.m2 += p.m2;
        s.clean_sq += p.clean_sq;
        s.noisy_sq += p.noisy_sq;
    }
    let k = trials as f64;
    let bound = 4.0 * sigma / k.sqrt();
    for (name, total) in [("input", s.n), ("target", s.m)] {
        let mean = total / k;
        if mean.abs() > bound {
            return Err(Error::ConditionViolated(format!(
                "{name} noise mean {mean:.3e} exceeds 4 sigma / sqrt(n) = {bound:.3e}"
            )));
        }
    }
    let mean_m = s.m / k;
    let var_m = (s.m2 / k - mean_m * mean_m).max(0.0);
    let l2_n2c = s.clean_sq / k;
    let l2_n2n = s.noisy_sq / k;
    Ok(EquivalenceReport {
        l2_n2c,
        l2_n2n,
        var_m,
        gap: l2_n2n - l2_n2c - var_m,
        trials,
        sigma,
    })
}

/// Identity-estimator experiment with Gaussian `N(0, sigma^2)` noise.
pub fn n2n_equivalence_experiment(
    sigma: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<EquivalenceReport> {
    if trials < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    gaussian_experiment(sigma, trials, seed, exec)
}

fn gaussian_experiment(
    sigma: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<EquivalenceReport> {
    if sigma == 0.0 {
        return equivalence_with(0.0, trials, seed, exec, |_| 0.0);
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    equivalence_with(sigma, trials, seed, exec, move |r| normal.sample(r))
}

/// Root-mean-square gap over `repetitions` independent runs for each trial count.
pub fn gap_scaling(
    sigma: f64,
    trial_counts: &[usize],
    repetitions: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<(usize, f64)>> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument(
            "need at least one repetition".into(),
        ));
    }
    trial_counts
        .iter()
        .enumerate()
        .map(|(ci, &trials)| {
            let mut sq = 0.0;
            for rep in 0..repetitions {
                let sub = crate::rng::derive_seed(seed, &[ci as u64, rep as u64]);
                let r = gaussian_experiment(sigma, trials, sub, exec)?;
                sq += r.gap * r.gap;
            }
            Ok((trials, (sq / repetitions as f64).sqrt()))
        })
        .collect()
}

/// Minimiser over `grid` of the empirical `E|c - x2|` with `x2 = y + m`,
/// `m ~ N(0, sigma^2)`. For symmetric noise this sits at `y` up to grid and
/// sampling error.
pub fn l1_n2n_minimizer(y: f64, sigma: f64, trials: usize, grid: &[f64], seed: u64) -> Result<f64> {
    if grid.is_empty() || trials == 0 {
        return Err(Error::InvalidArgument("empty grid or zero trials".into()));
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    let mut rng = stream_rng(seed, &[0x11]);
    let targets: Vec<f64> = (0..trials).map(|_| y + normal.sample(&mut rng)).collect();
    let mut best = (f64::INFINITY, grid[0]);
    for &c in grid {
        let l1 = targets.iter().map(|t| (c - t).abs()).sum::<f64>() / trials as f64;
        if l1 < best.0 {
            best = (l1, c);
        }
    }
    Ok(best.1)
}

/// The same decomposition measured through a fixed network on waveforms:
/// `clean` is corrupted twice per trial with white noise of std `sigma`.
/// No analytic target exists here; the report is descriptive.
pub fn network_equivalence(
    model: &Dcunet<f64>,
    stft: &StftConfig,
    clean: &Waveform,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    let y = clean.samples();
    let (mut c, mut n2n, mut m_sum, mut m_sq, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for t in 0..trials {
        let mut rng = stream_rng(seed, &[t as u64]);
        let n: Vec<f64> = (0..y.len()).map(|_| normal.sample(&mut rng)).collect();
        let m: Vec<f64> = (0..y.len()).map(|_| normal.sample(&mut rng)).collect();
        let x1: Vec<f64> = y.iter().zip(&n).map(|(a, b)| a + b).collect();
        let est = model.denoise(&Waveform::new(x1, clean.sample_rate())?, stft)?;
        for ((f, yv), mv) in est.samples().iter().zip(y).zip(&m) {
            c += (f - yv) * (f - yv);
            n2n += (f - yv - mv) * (f - yv - mv);
            m_sum += mv;
            m_sq += mv * mv;
            count += 1.0;
        }
    }
    let mean_m = m_sum / count;
    let var_m = m_sq / count - mean_m * mean_m;
    let (l2_n2c, l2_n2n) = (c / count, n2n / count);
    Ok(EquivalenceReport {
        l2_n2c,
        l2_n2n,
        var_m,
        gap: l2_n2n - l2_n2c - var_m,
        trials,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cxnn::gradcheck::{check_gradients, randn};
    use crate::cxnn::Tape;
    use rand::Rng;

    fn randv(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    // Straight-line restatement of the loss with explicit norms.
    fn wsdr_oracle(x: &[f64], y: &[f64], yh: &[f64]) -> f64 {
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let n: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let nh: Vec<f64> = x.iter().zip(yh).map(|(a, b)| a - b).collect();
        let a = norm(y).powi(2) / (norm(y).powi(2) + norm(&n).powi(2));
        let c1 = y.iter().zip(yh).map(|(p, q)| p * q).sum::<f64>() / (norm(y) * norm(yh));
        let c2 = n.iter().zip(&nh).map(|(p, q)| p * q).sum::<f64>() / (norm(&n) * norm(&nh));
        -a * c1 - (1.0 - a) * c2
    }

    #[test]
    fn perfect_estimate_scores_minus_one() {
        let mut rng = stream_rng(1, &[]);
        for _ in 0..20 {
            let (x, y) = (randv(64, &mut rng), randv(64, &mut rng));
            let l = wsdr_loss(LossInputs {
                x: &x,
                y: &y,
                y_hat: &y,
            })
            .unwrap();
            assert!((l + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_oracle_and_stays_bounded() {
        let mut rng = stream_rng(2, &[]);
        for i in 0..10_000 {
            let n = 1 + i % 40;
            let (x, y, yh) = (randv(n, &mut rng), randv(n, &mut rng), randv(n, &mut rng));
            let l = wsdr_loss(LossInputs {
                x: &x,
                y: &y,
                y_hat: &yh,
            })
            .unwrap();
            assert!((-1.0..=1.0).contains(&l), "{l}");
            if i < 200 {
                assert!((l - wsdr_oracle(&x, &y, &yh)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positive_scaling_keeps_target_term() {
        let mut rng = stream_rng(3, &[]);
        let (y, yh) = (randv(50, &mut rng), randv(50, &mut rng));
        // x == y puts all weight on the target cosine
        let base = wsdr_loss(LossInputs {
            x: &y,
            y: &y,
            y_hat: &yh,
        })
        .unwrap();
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let s: Vec<f64> = yh.iter().map(|v| v * c).collect();
            let l = wsdr_loss(LossInputs {
                x: &y,
                y: &y,
                y_hat: &s,
            })
            .unwrap();
            assert!((l - base).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_norms_are_guarded() {
        let z = vec![0.0; 8];
        let y = vec![0.5; 8];
        let l = wsdr_loss(LossInputs {
            x: &y,
            y: &y,
            y_hat: &z,
        })
        .unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(wsdr_alpha(&z, &z), 1.0);
        assert!(wsdr_loss(LossInputs {
            x: &y,
            y: &y,
            y_hat: &y[..3]
        })
        .is_err());
    }

    #[test]
    fn l1_l2_against_sums() {
        let a = [1.0, -2.0, 3.5];
        let b = [0.0, 1.0, 3.0];
        assert!((l2_loss(&a, &b).unwrap() - (1.0 + 9.0 + 0.25) / 3.0).abs() < 1e-15);
        assert!((l1_loss(&a, &b).unwrap() - (1.0 + 3.0 + 0.5) / 3.0).abs() < 1e-15);
        assert!(l1_loss(&a, &b[..2]).is_err());
        assert!(l2_loss(&[], &[]).is_err());
    }

    #[test]
    fn tracked_rows_match_value_loss() {
        let mut rng = stream_rng(4, &[]);
        let (x, y, yh) = (
            randn(&[3, 16], &mut rng),
            randn(&[3, 16], &mut rng),
            randn(&[3, 16], &mut rng),
        );
        let tape = Tape::new();
        let v = wsdr_loss_rows(&x, &y, tape.constant(yh.clone()))
            .unwrap()
            .value();
        for r in 0..3 {
            let s = r * 16..(r + 1) * 16;
            let want = wsdr_loss(LossInputs {
                x: &x.data()[s.clone()],
                y: &y.data()[s.clone()],
                y_hat: &yh.data()[s],
            })
            .unwrap();
            assert!((v.data()[r] - want).abs() < 1e-12);
        }
        let rep =
            check_gradients(|_, v| Ok(wsdr_loss_rows(&x, &y, v[0])?.sum()), &[yh], 1e-6).unwrap();
        assert!(rep.max_relative_error() < 1e-6);
    }

    #[test]
    fn identity_experiment_unit_noise() {
        let r = n2n_equivalence_experiment(1.0, 100_000, 5, Exec::default()).unwrap();
        assert!((r.l2_n2n - 2.0).abs() < 0.03, "{r:?}");
        assert!((r.l2_n2c - 1.0).abs() < 0.03);
        assert!(r.gap.abs() < 0.02);
        assert!(n2n_equivalence_experiment(1.0, 999, 5, Exec::default()).is_err());
    }

    #[test]
    fn noiseless_experiment_is_exact() {
        let r = n2n_equivalence_experiment(0.0, 10_000, 1, Exec::default()).unwrap();
        assert_eq!((r.l2_n2c, r.l2_n2n, r.var_m, r.gap), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn biased_noise_is_rejected() {
        let r = equivalence_with(1.0, 20_000, 1, Exec::default(), |rng| {
            rng.gen_range(0.0..1.0)
        });
        assert!(matches!(r, Err(Error::ConditionViolated(_))));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let a = n2n_equivalence_experiment(0.7, 20_000, 9, Exec::Sequential).unwrap();
        let b = n2n_equivalence_experiment(0.7, 20_000, 9, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gap_shrinks_with_trials() {
        let g = gap_scaling(1.0, &[1_000, 10_000, 100_000], 8, 3, Exec::default()).unwrap();
        assert!(g[0].1 > g[1].1 && g[1].1 > g[2].1, "{g:?}");
    }

    #[test]
    fn l1_minimiser_sits_at_clean_value() {
        let grid: Vec<f64> = (0..=80).map(|i| -1.0 + i as f64 * 0.05).collect();
        let c = l1_n2n_minimizer(0.8, 1.0, 20_000, &grid, 2).unwrap();
        assert!((c - 0.8).abs() <= 0.05 + 1e-12, "{c}");
    }
}
