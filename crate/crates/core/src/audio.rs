//! Mono PCM audio: the [`Waveform`] type, WAV I/O and resampling.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate every pipeline stage runs at unless configured otherwise.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Largest sample value representable in 16-bit PCM.
pub const PCM16_MAX: f64 = 1.0 - 1.0 / 32768.0;

/// A mono signal with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    /// True if writing as 16-bit PCM would clamp at least one sample.
    pub fn clips_pcm16(&self) -> bool {
        self.samples
            .iter()
            .any(|&s| !(-1.0..=PCM16_MAX).contains(&s))
    }

    /// Same samples, new rate. No resampling.
    pub fn with_rate(&self, sample_rate: u32) -> Result<Self> {
        Self::new(self.samples.clone(), sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }

    /// Elementwise sum of two equal-length, equal-rate waveforms.
    pub fn add(&self, other: &Waveform) -> Result<Self> {
        self.check_compatible(other)?;
        Self::new(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            self.sample_rate,
        )
    }

    pub fn sub(&self, other: &Waveform) -> Result<Self> {
        self.check_compatible(other)?;
        Self::new(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a - b)
                .collect(),
            self.sample_rate,
        )
    }

    pub(crate) fn check_compatible(&self, other: &Waveform) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "waveform lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if self.sample_rate != other.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "sample rates differ: {} vs {}",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }

    /// Samples rounded through `f32`, i.e. exactly what a float32 file stores.
    pub fn quantized_f32(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|&s| s as f32 as f64).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a mono 16-bit PCM or IEEE float32 WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| attach_path(e, path))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Unsupported(format!(
            "{}: {} channels (only mono is supported)",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| attach_path(e, path))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| attach_path(e, path))?,
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

fn attach_path(e: hound::Error, path: &Path) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => match Error::from(other) {
            Error::Format { what, detail } => Error::Format {
                what,
                detail: format!("{}: {detail}", path.display()),
            },
            e => e,
        },
    }
}

/// Writes `w` as a mono WAV file. 16-bit PCM clamps to `[-1, PCM16_MAX]`.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    if w.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot write an empty waveform".into(),
        ));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| attach_path(e, path))?;
    for &s in &w.samples {
        let res = match encoding {
            WavEncoding::Pcm16 => writer.write_sample(pcm16_code(s)),
            WavEncoding::Float32 => writer.write_sample(s as f32),
        };
        res.map_err(|e| attach_path(e, path))?;
    }
    writer.finalize().map_err(|e| attach_path(e, path))
}

fn pcm16_code(s: f64) -> i16 {
    (s.clamp(-1.0, PCM16_MAX) * 32768.0).round() as i16
}

/// Linear-interpolation resampler. Output length is `round(len * target / rate)`.
///
/// Not band-limited: content above the lower Nyquist frequency aliases.
pub fn resample_linear(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument(
            "target rate must be positive".into(),
        ));
    }
    if target_rate == w.sample_rate || w.is_empty() {
        return Waveform::new(w.samples.clone(), target_rate);
    }
    let ratio = w.sample_rate as f64 / target_rate as f64;
    let n_out = ((w.len() as f64 / ratio).round() as usize).max(1);
    let last = w.len() - 1;
    let out = (0..n_out)
        .map(|j| {
            let t = j as f64 * ratio;
            let i = t.floor() as usize;
            if i >= last {
                w.samples[last]
            } else {
                let frac = t - i as f64;
                w.samples[i] * (1.0 - frac) + w.samples[i + 1] * frac
            }
        })
        .collect();
    Waveform::new(out, target_rate)
}

/// Band-limited rational resampler (Kaiser-windowed sinc, polyphase).
///
/// Filter design and output alignment match the Octave `resample` routine
/// with a 60 dB stop band, which is what reference STOI implementations use.
pub fn resample_polyphase(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument(
            "target rate must be positive".into(),
        ));
    }
    if target_rate == w.sample_rate || w.is_empty() {
        return Waveform::new(w.samples.clone(), target_rate);
    }
    let g = gcd(target_rate as u64, w.sample_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (w.sample_rate as u64 / g) as usize;

    let h = kaiser_lowpass(up, down);
    let half_len = (h.len() - 1) / 2;
    let n_in = w.len();
    let n_out = (n_in * up).div_ceil(down);
    let n_pre_pad = down - half_len % down;
    let n_pre_remove = (half_len + n_pre_pad) / down;
    // Padded filter index k maps to h[k - n_pre_pad]; the extra factor `up`
    // compensates for zero-stuffing.
    let taps: Vec<f64> = h.iter().map(|v| v * up as f64).collect();
    let out = (0..n_out)
        .map(|n| {
            let u = (n + n_pre_remove) * down;
            // y[n] = sum_m x[m] * hp[u - m*up], hp[k] = taps[k - n_pre_pad]
            let k_max = u as isize - n_pre_pad as isize;
            let mut acc = 0.0;
            if k_max < 0 {
                return 0.0;
            }
            let k_max = k_max as usize;
            let m_hi = (k_max / up).min(n_in - 1);
            let m_lo = k_max.saturating_sub(taps.len() - 1).div_ceil(up);
            for m in m_lo..=m_hi {
                let k = k_max - m * up;
                if k < taps.len() {
                    acc += w.samples[m] * taps[k];
                }
            }
            acc
        })
        .collect();
    Waveform::new(out, target_rate)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn kaiser_lowpass(up: usize, down: usize) -> Vec<f64> {
    let log10_rejection = -3.0f64;
    let stopband_cutoff = 1.0 / (2.0 * up.max(down) as f64);
    let roll_off_width = stopband_cutoff / 10.0;
    let rejection_db = -20.0 * log10_rejection;
    let half = ((rejection_db - 8.0) / (28.714 * roll_off_width)).ceil() as i64;
    let beta = if rejection_db > 50.0 {
        0.1102 * (rejection_db - 8.7)
    } else if rejection_db >= 21.0 {
        0.5842 * (rejection_db - 21.0).powf(0.4) + 0.07886 * (rejection_db - 21.0)
    } else {
        0.0
    };
    let len = (2 * half + 1) as usize;
    let i0_beta = bessel_i0(beta);
    let mut h: Vec<f64> = (-half..=half)
        .enumerate()
        .map(|(i, t)| {
            let x = 2.0 * stopband_cutoff * t as f64;
            let sinc = if x == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            let ideal = 2.0 * up as f64 * stopband_cutoff * sinc;
            let r = 2.0 * i as f64 / (len - 1) as f64 - 1.0;
            let window = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            window * ideal
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}
