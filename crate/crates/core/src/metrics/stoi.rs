//! Short-time objective intelligibility.
//!
//! Follows the reference algorithm step by step: resample to 10 kHz, drop
//! frames more than 40 dB below the loudest clean frame, 512-point DFT of
//! 256-sample Hann frames at 50% overlap, 15 one-third-octave bands from
//! 150 Hz, 30-frame envelope segments, normalisation with clipping at a
//! -15 dB signal-to-distortion bound, and the mean correlation over bands
//! and segments.

use realfft::RealFftPlanner;

use crate::audio::{resample_polyphase, Waveform};
use crate::error::{Error, Result};

pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// `hanning(n + 2)[1..n+1]`: a Hann window without its zero end points.
fn hann_inner(n: usize) -> Vec<f64> {
    let m = (n + 2) as f64;
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (m - 1.0)).cos())
        .collect()
}

/// `(first_bin, end_bin)` per band; the band sums bins `first..end`.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let f: Vec<f64> = (0..bins)
        .map(|i| i as f64 * STOI_RATE as f64 / NFFT as f64)
        .collect();
    let nearest = |target: f64| {
        let mut best = (f64::INFINITY, 0);
        for (i, &fi) in f.iter().enumerate() {
            let d = (fi - target) * (fi - target);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Removes frames of both signals where the clean frame is silent, then
/// overlap-adds the remaining windowed frames.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = hann_inner(FRAME);
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    if starts.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "intelligibility needs more than {FRAME} samples at 10 kHz, got {}",
            x.len()
        )));
    }
    let windowed = |s: &[f64], start: usize| -> Vec<f64> {
        s[start..start + FRAME]
            .iter()
            .zip(&w)
            .map(|(a, b)| a * b)
            .collect()
    };
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let fr = windowed(x, s);
            20.0 * (fr.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS).log10()
        })
        .collect();
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    let out_len = (kept.len() - 1) * HOP + FRAME;
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (i, &s) in kept.iter().enumerate() {
        let off = i * HOP;
        for (j, wj) in w.iter().enumerate() {
            xs[off + j] += x[s + j] * wj;
            ys[off + j] += y[s + j] * wj;
        }
    }
    Ok((xs, ys))
}

/// Band envelopes `[band][frame]`.
fn band_envelopes(x: &[f64], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let w = hann_inner(FRAME);
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let mut input = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut env = vec![Vec::new(); bands.len()];
    for start in frame_starts(x.len()) {
        input.iter_mut().for_each(|v| *v = 0.0);
        for (j, wj) in w.iter().enumerate() {
            input[j] = x[start + j] * wj;
        }
        fft.process(&mut input, &mut spectrum)
            .expect("fft sizes match");
        let power: Vec<f64> = spectrum.iter().map(|c| c.norm_sqr()).collect();
        for (e, &(lo, hi)) in env.iter_mut().zip(bands) {
            e.push(power[lo..hi].iter().sum::<f64>().sqrt());
        }
    }
    env
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Intelligibility of `estimate` against `clean`; typically in `[0, 1]`.
pub fn stoi_metric(clean: &Waveform, estimate: &Waveform) -> Result<f64> {
    clean.check_compatible(estimate)?;
    let (x, y) = if clean.sample_rate() == STOI_RATE {
        (clean.samples().to_vec(), estimate.samples().to_vec())
    } else {
        (
            resample_polyphase(clean, STOI_RATE)?.into_samples(),
            resample_polyphase(estimate, STOI_RATE)?.into_samples(),
        )
    };
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("clean signal is silent".into()));
    }
    let (x, y) = remove_silent_frames(&x, &y)?;
    let bands = third_octave_bands();
    let xe = band_envelopes(&x, &bands);
    let ye = band_envelopes(&y, &bands);
    let frames = xe[0].len();
    if frames < SEGMENT {
        return Err(Error::InvalidArgument(format!(
            "only {frames} non-silent frames, intelligibility needs {SEGMENT}"
        )));
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let segments = frames - SEGMENT + 1;
    let mut total = 0.0;
    for m in SEGMENT..=frames {
        for (xb, yb) in xe.iter().zip(&ye) {
            let xs = &xb[m - SEGMENT..m];
            let ys = &yb[m - SEGMENT..m];
            let c = norm(xs) / (norm(ys) + EPS);
            let mut yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(&yv, &xv)| (yv * c).min(xv * (1.0 + clip)))
                .collect();
            let mut xc = xs.to_vec();
            for v in [&mut yp, &mut xc] {
                let mean = v.iter().sum::<f64>() / SEGMENT as f64;
                v.iter_mut().for_each(|a| *a -= mean);
                let n = norm(v) + EPS;
                v.iter_mut().for_each(|a| *a /= n);
            }
            total += yp.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(total / (segments * BANDS) as f64)
}
