//! Short-time Fourier analysis with energy-preserving normalization.
//!
//! Framing: with `center_pad` the signal is zero-padded by `fft_size - hop`
//! samples on the left, so every original sample is covered by the full set of
//! `fft_size / hop` overlapping frames, and on the right up to the last frame.
//! Frame `t` starts at padded index `t * hop`; there are
//! `ceil((len + fft_size - hop) / hop)` frames.
//!
//! Forward: `X[k, t] = (1/sqrt(N)) * sum_n w[n] x_pad[t*hop + n] e^{-2 pi i k n / N}`
//! with a periodic Hann window `w` and `N = fft_size`, keeping bins `0..=N/2`.
//!
//! Energy: the spectrogram energy is
//! `sum_{t,k} c_k |X[k, t]|^2 / (sum_n w[n]^2 / hop)` where `c_k = 1` for the DC
//! and Nyquist bins and `2` otherwise. Under the squared-window overlap-add
//! condition checked by [`StftConfig::validate`] this equals `sum x^2` exactly.
//!
//! Inverse: each frame is inverse-transformed, scaled by `1/sqrt(N)`, windowed
//! again and overlap-added; the sum is divided by the squared-window overlap
//! at each sample and trimmed to the original length.

use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
    #[serde(default = "default_center_pad")]
    pub center_pad: bool,
}

fn default_center_pad() -> bool {
    true
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl StftConfig {
    /// 512-point FFT with a 128-sample hop (8 ms at 16 kHz).
    pub const fn desk() -> Self {
        Self {
            fft_size: 512,
            hop: 128,
            window: WindowKind::Hann,
            center_pad: true,
        }
    }

    /// 3072-point FFT with a 16 ms hop at `sample_rate`.
    pub fn large(sample_rate: u32) -> Result<Self> {
        Ok(Self {
            fft_size: 3072,
            hop: hop_from_ms(16.0, sample_rate)?,
            window: WindowKind::Hann,
            center_pad: true,
        })
    }

    /// Number of one-sided frequency bins, `fft_size / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn padding(&self) -> usize {
        if self.center_pad {
            self.fft_size - self.hop
        } else {
            0
        }
    }

    pub fn num_frames(&self, len: usize) -> usize {
        (len + self.padding()).div_ceil(self.hop).max(1)
    }

    /// Periodic Hann window of length `fft_size`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size as f64;
        (0..self.fft_size)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
            .collect()
    }

    /// Steady-state squared-window overlap, `sum w^2 / hop`.
    pub fn overlap_gain(&self) -> f64 {
        self.window().iter().map(|w| w * w).sum::<f64>() / self.hop as f64
    }

    /// Checks geometry and that the squared window overlap-adds to a constant.
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "fft_size must be even and >= 2, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::Config(format!(
                "hop must be in 1..={}, got {}",
                self.fft_size, self.hop
            )));
        }
        let w = self.window();
        let sums: Vec<f64> = (0..self.hop)
            .map(|m| w.iter().skip(m).step_by(self.hop).map(|v| v * v).sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        let worst = sums.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max);
        if mean <= 0.0 || worst > 1e-9 * mean {
            return Err(Error::Config(format!(
                "hop {} does not satisfy constant overlap-add for a {}-point Hann window",
                self.hop, self.fft_size
            )));
        }
        Ok(())
    }
}

/// Converts a hop in milliseconds to samples, rounding to nearest.
pub fn hop_from_ms(ms: f64, sample_rate: u32) -> Result<usize> {
    if !(ms > 0.0) || !ms.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "hop must be positive, got {ms} ms"
        )));
    }
    Ok((ms * sample_rate as f64 / 1000.0).round() as usize)
}

/// One-sided complex spectrogram stored as `[bins x frames]` row-major planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
    bins: usize,
    frames: usize,
    config: StftConfig,
    sample_rate: u32,
    original_length: usize,
}

impl ComplexSpectrogram {
    pub fn new(
        real: Vec<f64>,
        imag: Vec<f64>,
        frames: usize,
        config: StftConfig,
        sample_rate: u32,
        original_length: usize,
    ) -> Result<Self> {
        let bins = config.bins();
        if real.len() != bins * frames || imag.len() != bins * frames {
            return Err(Error::Shape(format!(
                "spectrogram planes must hold {bins}x{frames} values"
            )));
        }
        if real.iter().chain(&imag).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite spectrogram entry".into()));
        }
        Ok(Self {
            real,
            imag,
            bins,
            frames,
            config,
            sample_rate,
            original_length,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn fft_size(&self) -> usize {
        self.config.fft_size
    }

    pub fn hop(&self) -> usize {
        self.config.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    /// Weighted energy; equals the time-domain energy of the analysed signal.
    pub fn energy(&self) -> f64 {
        let nyquist = self.bins - 1;
        let mut total = 0.0;
        for k in 0..self.bins {
            let c = if k == 0 || k == nyquist { 1.0 } else { 2.0 };
            let row = k * self.frames..(k + 1) * self.frames;
            let e: f64 = self.real[row.clone()]
                .iter()
                .zip(&self.imag[row])
                .map(|(r, i)| r * r + i * i)
                .sum();
            total += c * e;
        }
        total / self.config.overlap_gain()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.real
            .iter_mut()
            .chain(out.imag.iter_mut())
            .for_each(|v| *v *= c);
        out
    }
}

/// Precomputed FFT plans for one configuration and element type.
pub struct StftPlan<S: Real> {
    cfg: StftConfig,
    window: Vec<S>,
    r2c: Arc<dyn RealToComplex<S>>,
    c2r: Arc<dyn ComplexToReal<S>>,
    scale: S,
}

impl<S: Real> StftPlan<S> {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = RealFftPlanner::<S>::new();
        Ok(Self {
            cfg,
            window: cfg.window().into_iter().map(S::lit).collect(),
            r2c: planner.plan_fft_forward(cfg.fft_size),
            c2r: planner.plan_fft_inverse(cfg.fft_size),
            scale: S::lit(1.0 / (cfg.fft_size as f64).sqrt()),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Writes the `[bins x frames]` planes for `x`; `frames = num_frames(x.len())`.
    pub fn forward(&self, x: &[S], re: &mut [S], im: &mut [S]) {
        let frames = self.cfg.num_frames(x.len());
        let bins = self.cfg.bins();
        debug_assert_eq!(re.len(), bins * frames);
        let pad = self.cfg.padding();
        let mut frame = self.r2c.make_input_vec();
        let mut spec = self.r2c.make_output_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for t in 0..frames {
            for (i, slot) in frame.iter_mut().enumerate() {
                let p = t * self.cfg.hop + i;
                *slot = if p >= pad && p - pad < x.len() {
                    x[p - pad] * self.window[i]
                } else {
                    S::zero()
                };
            }
            self.r2c
                .process_with_scratch(&mut frame, &mut spec, &mut scratch)
                .expect("fft buffer sizes");
            for (k, c) in spec.iter().enumerate() {
                re[k * frames + t] = c.re * self.scale;
                im[k * frames + t] = c.im * self.scale;
            }
        }
    }

    /// Per-sample squared-window overlap over the padded signal.
    fn overlap(&self, frames: usize) -> Vec<S> {
        let total = (frames - 1) * self.cfg.hop + self.cfg.fft_size;
        let mut acc = vec![S::zero(); total];
        for t in 0..frames {
            for (i, w) in self.window.iter().enumerate() {
                acc[t * self.cfg.hop + i] += *w * *w;
            }
        }
        acc
    }

    /// Reconstructs `len` samples from `[bins x frames]` planes.
    pub fn inverse(&self, re: &[S], im: &[S], frames: usize, len: usize, out: &mut [S]) {
        let bins = self.cfg.bins();
        let pad = self.cfg.padding();
        let overlap = self.overlap(frames);
        let mut acc = vec![S::zero(); overlap.len()];
        let mut spec = self.c2r.make_input_vec();
        let mut frame = self.c2r.make_output_vec();
        let mut scratch = self.c2r.make_scratch_vec();
        for t in 0..frames {
            for (k, c) in spec.iter_mut().enumerate() {
                let imag = if k == 0 || k == bins - 1 {
                    S::zero()
                } else {
                    im[k * frames + t]
                };
                *c = Complex::new(re[k * frames + t], imag);
            }
            self.c2r
                .process_with_scratch(&mut spec, &mut frame, &mut scratch)
                .expect("fft buffer sizes");
            for (i, v) in frame.iter().enumerate() {
                acc[t * self.cfg.hop + i] += *v * self.scale * self.window[i];
            }
        }
        let tiny = S::lit(1e-10);
        for (j, o) in out.iter_mut().enumerate().take(len) {
            let p = j + pad;
            *o = if p < acc.len() && overlap[p] > tiny {
                acc[p] / overlap[p]
            } else {
                S::zero()
            };
        }
    }

    /// Adjoint of [`Self::inverse`]: maps a gradient on the output samples to
    /// gradients on the real and imaginary planes.
    pub fn inverse_adjoint(&self, grad: &[S], frames: usize, d_re: &mut [S], d_im: &mut [S]) {
        let bins = self.cfg.bins();
        let pad = self.cfg.padding();
        let overlap = self.overlap(frames);
        let tiny = S::lit(1e-10);
        let mut g_pad = vec![S::zero(); overlap.len()];
        for (j, g) in grad.iter().enumerate() {
            let p = j + pad;
            if p < g_pad.len() && overlap[p] > tiny {
                g_pad[p] = *g / overlap[p];
            }
        }
        let mut frame = self.r2c.make_input_vec();
        let mut spec = self.r2c.make_output_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        let two = S::lit(2.0);
        for t in 0..frames {
            for (i, slot) in frame.iter_mut().enumerate() {
                *slot = g_pad[t * self.cfg.hop + i] * self.window[i] * self.scale;
            }
            self.r2c
                .process_with_scratch(&mut frame, &mut spec, &mut scratch)
                .expect("fft buffer sizes");
            for (k, c) in spec.iter().enumerate() {
                let edge = k == 0 || k == bins - 1;
                let ck = if edge { S::one() } else { two };
                d_re[k * frames + t] += ck * c.re;
                if !edge {
                    d_im[k * frames + t] += ck * c.im;
                }
            }
        }
    }
}

/// Forward STFT of a waveform.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    if w.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot transform an empty waveform".into(),
        ));
    }
    let plan = StftPlan::<f64>::new(*cfg)?;
    let frames = cfg.num_frames(w.len());
    let mut re = vec![0.0; cfg.bins() * frames];
    let mut im = vec![0.0; cfg.bins() * frames];
    plan.forward(w.samples(), &mut re, &mut im);
    ComplexSpectrogram::new(re, im, frames, *cfg, w.sample_rate(), w.len())
}

/// Inverse STFT, trimmed to the recorded original length.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let plan = StftPlan::<f64>::new(s.config)?;
    let covered = (s.frames - 1) * s.hop() + s.fft_size();
    if s.original_length + s.config.padding() > covered {
        return Err(Error::Shape(format!(
            "{} frames cannot cover {} samples",
            s.frames, s.original_length
        )));
    }
    let mut out = vec![0.0; s.original_length];
    plan.inverse(&s.real, &s.imag, s.frames, s.original_length, &mut out);
    Waveform::new(out, s.sample_rate)
}
