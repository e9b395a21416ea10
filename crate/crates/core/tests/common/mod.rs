//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use n2n_core::audio::{write_wav, WavEncoding, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct DFT of every frame with explicit left padding of `fft - hop` zeros,
/// a periodic Hann window and `1/sqrt(N)` scaling. Returns `[bins][frames]`.
pub fn direct_stft(x: &[f64], fft: usize, hop: usize) -> Vec<Vec<(f64, f64)>> {
    let pad = fft - hop;
    let frames = (x.len() + pad).div_ceil(hop);
    let window: Vec<f64> = (0..fft)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / fft as f64).cos())
        .collect();
    let bins = fft / 2 + 1;
    let mut out = vec![vec![(0.0, 0.0); frames]; bins];
    for t in 0..frames {
        let frame: Vec<f64> = (0..fft)
            .map(|i| {
                let p = (t * hop + i) as isize - pad as isize;
                if p >= 0 && (p as usize) < x.len() {
                    x[p as usize] * window[i]
                } else {
                    0.0
                }
            })
            .collect();
        for (k, row) in out.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in frame.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / fft as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            let s = 1.0 / (fft as f64).sqrt();
            row[t] = (re * s, im * s);
        }
    }
    out
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `10 log10(|s|^2 / |e|^2)` by plain summation.
pub fn snr_db(reference: &[f64], noisy: &[f64]) -> f64 {
    let err: Vec<f64> = reference.iter().zip(noisy).map(|(a, b)| b - a).collect();
    10.0 * (energy(reference) / energy(&err)).log10()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

/// A noise bank on disk: one directory per category, each holding two
/// clips of independently filtered random noise.
pub fn write_noise_bank(dir: &Path, categories: &[&str], seconds: f64, rate: u32, seed: u64) {
    let n = (seconds * rate as f64) as usize;
    for (ci, cat) in categories.iter().enumerate() {
        let sub = dir.join(cat);
        std::fs::create_dir_all(&sub).unwrap();
        for f in 0..2 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((ci as u64) << 8) ^ f);
            let a = 0.3 + 0.2 * ci as f64;
            let mut state = 0.0;
            let samples: Vec<f64> = (0..n)
                .map(|_| {
                    state = a * state + rng.gen_range(-0.5..0.5);
                    state
                })
                .collect();
            let w = Waveform::new(samples, rate).unwrap();
            write_wav(&w, sub.join(format!("noise{f}.wav")), WavEncoding::Float32).unwrap();
        }
    }
}
