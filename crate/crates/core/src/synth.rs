//! Deterministic speech-like test signals.
//!
//! Clips are sequences of voiced "syllables" separated by short pauses. Each
//! syllable is a harmonic series on a slowly drifting pitch, shaped by three
//! vowel-like resonances and a raised-cosine envelope. This gives the
//! harmonic structure and syllabic modulation that spectral masking and
//! intelligibility metrics respond to, without shipping a speech corpus.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::audio::{write_wav, WavEncoding, Waveform};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];
const PEAK: f64 = 0.5;

fn resonance(f: f64, formants: &[f64; 3]) -> f64 {
    formants
        .iter()
        .zip(BANDWIDTHS)
        .zip([1.0, 0.6, 0.3])
        .map(|((&c, bw), gain)| gain / (1.0 + ((f - c) / bw).powi(2)))
        .sum::<f64>()
        + 0.02
}

/// A speech-like clip of `duration_secs`, peak-normalised to 0.5.
pub fn synth_speech(duration_secs: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    if !(duration_secs > 0.0 && duration_secs.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration_secs}"
        )));
    }
    let rate = sample_rate as f64;
    let len = (duration_secs * rate).round() as usize;
    let mut rng = stream_rng(seed, &[]);
    let mut out = vec![0.0; len];
    let base_f0 = rng.gen_range(100.0..220.0);
    let drift_phase = rng.gen_range(0.0..2.0 * PI);
    let nyquist_guard = (rate / 2.0).min(5000.0);
    let mut pos = (rng.gen_range(0.0..0.05) * rate) as usize;
    let mut phase = 0.0f64;
    while pos < len {
        let syl = (rng.gen_range(0.12..0.30) * rate) as usize;
        let vowel = VOWELS[rng.gen_range(0..VOWELS.len())];
        let end = (pos + syl).min(len);
        for (i, o) in out[pos..end].iter_mut().enumerate() {
            let t = (pos + i) as f64 / rate;
            let f0 = base_f0
                * (1.0 + 0.08 * (2.0 * PI * 2.5 * t + drift_phase).sin())
                * (1.0 - 0.15 * t / duration_secs);
            phase += 2.0 * PI * f0 / rate;
            let env = 0.5 - 0.5 * (2.0 * PI * i as f64 / syl as f64).cos();
            let mut v = 0.0;
            let mut k = 1.0;
            while k * f0 < nyquist_guard {
                v += resonance(k * f0, &vowel) * (k * phase).sin() / k.sqrt();
                k += 1.0;
            }
            *o = env * v;
        }
        pos = end + (rng.gen_range(0.03..0.12) * rate) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    Waveform::new(out, sample_rate)
}

/// Writes `count` clips named `clip0000.wav`, ... into `dir` and returns their paths.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    count: usize,
    duration_secs: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .map(|i| {
            let w = synth_speech(
                duration_secs,
                sample_rate,
                crate::rng::derive_seed(seed, &[i as u64]),
            )?;
            let path = dir.join(format!("clip{i:04}.wav"));
            write_wav(&w, &path, WavEncoding::Float32)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_has_requested_length_and_peak() {
        let w = synth_speech(1.0, 16_000, 3).unwrap();
        assert_eq!(w.len(), 16_000);
        let peak = w.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - PEAK).abs() < 1e-12);
        assert_eq!(w, synth_speech(1.0, 16_000, 3).unwrap());
        assert_ne!(w, synth_speech(1.0, 16_000, 4).unwrap());
    }

    #[test]
    fn clip_has_pauses() {
        let w = synth_speech(2.0, 16_000, 5).unwrap();
        let quiet = w.samples().iter().filter(|v| v.abs() < 1e-3).count();
        assert!(quiet > 1000, "{quiet}");
    }

    #[test]
    fn bad_duration() {
        assert!(synth_speech(0.0, 16_000, 1).is_err());
    }
}
