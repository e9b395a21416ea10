//! Objective quality metrics and test-set evaluation reports.

mod report;
mod stoi;

pub use report::{
    evaluate_testset, plot_data, ComparisonRow, ComparisonTable, FileMetrics, MeanStd,
    MetricReport, Summary, ALL_CATEGORIES,
};
pub use stoi::{stoi_metric, STOI_RATE};

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Reported SNR when the estimate is (numerically) the clean signal.
pub const SNR_CAP_DB: f64 = 99.0;

/// `10 log10(sum clean^2 / sum (clean - estimate)^2)`, capped at 99 dB.
pub fn snr_metric(clean: &Waveform, estimate: &Waveform) -> Result<f64> {
    clean.check_compatible(estimate)?;
    let signal = clean.energy();
    if signal <= 0.0 {
        return Err(Error::InvalidArgument("clean reference is silent".into()));
    }
    let err: f64 = clean
        .samples()
        .iter()
        .zip(estimate.samples())
        .map(|(c, e)| (c - e) * (c - e))
        .sum();
    if err == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / err).log10()).min(SNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsnrParams {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub floor_db: f64,
    pub ceil_db: f64,
}

impl Default for SsnrParams {
    fn default() -> Self {
        Self {
            frame_ms: 32.0,
            hop_ms: 16.0,
            floor_db: -10.0,
            ceil_db: 35.0,
        }
    }
}

/// Mean over frames of the per-frame SNR clamped to `[floor, ceil]`.
///
/// A frame with no error counts as `ceil`; a silent clean frame with error
/// counts as `floor`.
pub fn ssnr_metric(clean: &Waveform, estimate: &Waveform, p: &SsnrParams) -> Result<f64> {
    clean.check_compatible(estimate)?;
    if clean.energy() <= 0.0 {
        return Err(Error::InvalidArgument("clean reference is silent".into()));
    }
    let rate = clean.sample_rate() as f64;
    let frame = (p.frame_ms * rate / 1000.0).round() as usize;
    let hop = (p.hop_ms * rate / 1000.0).round() as usize;
    if frame == 0 || hop == 0 || p.floor_db > p.ceil_db {
        return Err(Error::InvalidArgument(format!(
            "bad segmental SNR parameters {p:?}"
        )));
    }
    if clean.len() < frame {
        return Err(Error::InvalidArgument(format!(
            "segmental SNR needs one {frame}-sample frame, got {} samples",
            clean.len()
        )));
    }
    let (c, e) = (clean.samples(), estimate.samples());
    let mut total = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start + frame <= c.len() {
        let mut sig = 0.0;
        let mut err = 0.0;
        for i in start..start + frame {
            sig += c[i] * c[i];
            err += (c[i] - e[i]) * (c[i] - e[i]);
        }
        let db = if err == 0.0 {
            p.ceil_db
        } else if sig == 0.0 {
            p.floor_db
        } else {
            (10.0 * (sig / err).log10()).clamp(p.floor_db, p.ceil_db)
        };
        total += db;
        count += 1;
        start += hop;
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16_000).unwrap()
    }

    fn tone(len: usize) -> Waveform {
        wave((0..len).map(|i| (0.03 * i as f64).sin() + 0.2).collect())
    }

    #[test]
    fn snr_cases() {
        let c = tone(1000);
        assert_eq!(snr_metric(&c, &c).unwrap(), SNR_CAP_DB);
        assert!(snr_metric(&c, &wave(vec![0.0; 1000])).unwrap().abs() < 1e-12);
        assert!(snr_metric(&wave(vec![0.0; 1000]), &c).is_err());
        let half = c.scaled(0.5).unwrap();
        // error is half the clean signal: 10 log10(4)
        assert!((snr_metric(&c, &half).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn ssnr_clamps() {
        let c = tone(16_000);
        let p = SsnrParams::default();
        assert_eq!(ssnr_metric(&c, &c, &p).unwrap(), 35.0);
        let garbage = c.scaled(-30.0).unwrap();
        assert_eq!(ssnr_metric(&c, &garbage, &p).unwrap(), -10.0);
        assert!(ssnr_metric(&tone(100), &tone(100), &p).is_err());
    }

    #[test]
    fn ssnr_single_frame_equals_clamped_snr() {
        let c = tone(512);
        let e = c.scaled(0.8).unwrap();
        let s = snr_metric(&c, &e).unwrap().clamp(-10.0, 35.0);
        assert!((ssnr_metric(&c, &e, &SsnrParams::default()).unwrap() - s).abs() < 1e-12);
    }
}
