//! Noisy/noisy and noisy/clean pair synthesis.
//!
//! A pair overlays length-matched noise onto a clean clip at an SNR drawn
//! uniformly from `[0, 10]` dB. Noisy targets use independent noise from a
//! different category at an independent SNR. Every pair has its own seed
//! derived from the run seed and the pair index, so any pair can be
//! regenerated in isolation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, resample_linear, write_wav, WavEncoding, Waveform};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{derive_seed, stream_rng};

pub const SNR_MIN_DB: f64 = 0.0;
pub const SNR_MAX_DB: f64 = 10.0;
/// Category name for synthetic Gaussian noise.
pub const WHITE: &str = "white";
/// Target category of pairs whose target is the clean clip.
pub const CLEAN: &str = "clean";
pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Noisy input, independently noisy target.
    N2n,
    /// Noisy input, clean target.
    N2c,
    /// Noisy input, clean reference for evaluation.
    Test,
}

impl PairMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PairMode::N2n => "n2n",
            PairMode::N2c => "n2c",
            PairMode::Test => "test",
        }
    }
}

impl std::str::FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n2n" => Ok(PairMode::N2n),
            "n2c" => Ok(PairMode::N2c),
            "test" => Ok(PairMode::Test),
            other => Err(Error::InvalidArgument(format!("unknown pair mode {other}"))),
        }
    }
}

/// Noise clips grouped by category.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    categories: BTreeMap<String, Vec<PathBuf>>,
}

impl NoiseBank {
    pub fn new(categories: BTreeMap<String, Vec<PathBuf>>) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::Config("noise bank has no categories".into()));
        }
        for (name, files) in &categories {
            if files.is_empty() {
                return Err(Error::Config(format!("noise category {name} has no files")));
            }
        }
        Ok(Self { categories })
    }

    /// One category per subdirectory of `dir`, holding that directory's `.wav` files.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut categories = BTreeMap::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if !path.is_dir() {
                continue;
            }
            let files = wav_files(&path)?;
            if files.is_empty() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            categories.insert(name, files);
        }
        Self::new(categories)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn files(&self, category: &str) -> Option<&[PathBuf]> {
        self.categories.get(category).map(Vec::as_slice)
    }
}

/// Sorted `.wav` files directly inside `dir`.
pub fn wav_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("wav"))
            .unwrap_or(false);
        if path.is_file() && is_wav {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Where noise comes from.
#[derive(Debug, Clone)]
pub enum NoiseSource {
    Bank(NoiseBank),
    /// Independent standard Gaussian draws per pair side.
    White,
}

/// Which category noisy inputs use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputCategory {
    Random,
    Named(String),
}

impl InputCategory {
    pub fn parse(s: &str) -> Self {
        if s == "random" {
            InputCategory::Random
        } else {
            InputCategory::Named(s.to_string())
        }
    }
}

/// `10 log10(sum signal^2 / sum noise^2)`.
pub fn compute_snr_db(signal: &Waveform, noise: &Waveform) -> Result<f64> {
    signal.check_compatible(noise)?;
    let pn = noise.energy();
    if pn <= 0.0 {
        return Err(Error::InvalidArgument("noise has zero power".into()));
    }
    Ok(10.0 * (signal.energy() / pn).log10())
}

/// Noise rescaled so that `compute_snr_db(clean, result) == target_db`.
pub fn scale_noise_to_snr(clean: &Waveform, noise: &Waveform, target_db: f64) -> Result<Waveform> {
    clean.check_compatible(noise)?;
    let (pc, pn) = (clean.energy(), noise.energy());
    if pc <= 0.0 {
        return Err(Error::InvalidArgument("clean signal is silent".into()));
    }
    if pn <= 0.0 {
        return Err(Error::InvalidArgument("noise is silent".into()));
    }
    let gain = (pc / (pn * 10f64.powf(target_db / 10.0))).sqrt();
    noise.scaled(gain)
}

/// Tiles `noise` end to end and truncates it to `len` samples.
pub fn overlay_repeat(len: usize, noise: &Waveform) -> Result<Waveform> {
    if noise.is_empty() {
        return Err(Error::InvalidArgument("noise clip is empty".into()));
    }
    let s = noise.samples();
    Waveform::new(
        (0..len).map(|i| s[i % s.len()]).collect(),
        noise.sample_rate(),
    )
}

/// A generated pair with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub mode: PairMode,
    pub input: Waveform,
    pub target: Waveform,
    pub clean_ref: Waveform,
    pub input_category: String,
    pub target_category: String,
    pub input_snr_db: f64,
    /// `None` when the target is the clean clip.
    pub target_snr_db: Option<f64>,
    pub seed: u64,
}

fn draw_snr(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(SNR_MIN_DB..=SNR_MAX_DB)
}

fn load_noise(path: &Path, rate: u32) -> Result<Waveform> {
    let w = read_wav(path).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    if w.sample_rate() == rate {
        Ok(w)
    } else {
        resample_linear(&w, rate)
    }
}

/// Draws one noise segment covering `clean`, scaled to a random SNR.
fn noise_for(
    clean: &Waveform,
    source: &NoiseSource,
    category: &str,
    rng: &mut ChaCha8Rng,
) -> Result<(Waveform, f64)> {
    let raw = match source {
        NoiseSource::White => Waveform::new(
            (0..clean.len())
                .map(|_| rng.sample(StandardNormal))
                .collect(),
            clean.sample_rate(),
        )?,
        NoiseSource::Bank(bank) => {
            let files = bank
                .files(category)
                .ok_or_else(|| Error::Config(format!("unknown noise category {category}")))?;
            let path = files.choose(rng).expect("categories are non-empty");
            overlay_repeat(clean.len(), &load_noise(path, clean.sample_rate())?)?
        }
    };
    let snr = draw_snr(rng);
    Ok((scale_noise_to_snr(clean, &raw, snr)?, snr))
}

fn check_source(source: &NoiseSource, mode: PairMode, input: &InputCategory) -> Result<()> {
    match source {
        NoiseSource::White => {
            if let InputCategory::Named(c) = input {
                if c != WHITE {
                    return Err(Error::Config(format!("white noise has no category {c}")));
                }
            }
        }
        NoiseSource::Bank(bank) => {
            if mode == PairMode::N2n && bank.len() < 2 {
                return Err(Error::Config(
                    "noisy targets need at least two noise categories".into(),
                ));
            }
            if let InputCategory::Named(c) = input {
                if bank.files(c).is_none() {
                    return Err(Error::Config(format!("noise bank has no category {c}")));
                }
            }
        }
    }
    Ok(())
}

/// Builds one pair from `clean` using the stream identified by `seed`.
pub fn make_pair(
    clean: &Waveform,
    source: &NoiseSource,
    mode: PairMode,
    input_category: &InputCategory,
    seed: u64,
) -> Result<TrainingPair> {
    check_source(source, mode, input_category)?;
    if clean.energy() <= 0.0 {
        return Err(Error::InvalidArgument("clean clip is silent".into()));
    }
    let mut rng = stream_rng(seed, &[]);
    let in_cat = match (source, input_category) {
        (NoiseSource::White, _) => WHITE.to_string(),
        (_, InputCategory::Named(c)) => c.clone(),
        (NoiseSource::Bank(bank), InputCategory::Random) => {
            let cats: Vec<&str> = bank.categories().collect();
            cats.choose(&mut rng).expect("non-empty bank").to_string()
        }
    };
    let (n, input_snr_db) = noise_for(clean, source, &in_cat, &mut rng)?;
    let input = clean.add(&n)?;
    let (target, target_category, target_snr_db) = match mode {
        PairMode::N2c | PairMode::Test => (clean.clone(), CLEAN.to_string(), None),
        PairMode::N2n => {
            let tgt_cat = match source {
                NoiseSource::White => WHITE.to_string(),
                NoiseSource::Bank(bank) => {
                    let others: Vec<&str> = bank.categories().filter(|c| *c != in_cat).collect();
                    others
                        .choose(&mut rng)
                        .expect("two or more categories")
                        .to_string()
                }
            };
            let (m, snr) = noise_for(clean, source, &tgt_cat, &mut rng)?;
            (clean.add(&m)?, tgt_cat, Some(snr))
        }
    };
    Ok(TrainingPair {
        mode,
        input,
        target,
        clean_ref: clean.clone(),
        input_category: in_cat,
        target_category,
        input_snr_db,
        target_snr_db,
        seed,
    })
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub mode: PairMode,
    pub input_path: String,
    pub target_path: String,
    pub clean_path: String,
    pub input_category: String,
    pub target_category: String,
    pub input_snr_db: f64,
    pub target_snr_db: Option<f64>,
    pub seed: u64,
    pub clipped: bool,
}

/// JSON-lines manifest plus the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<PairRecord>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PairRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
                what: "manifest",
                detail: format!("line {}: {e}", i + 1),
            })?;
            records.push(rec);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// The single mode shared by every record, if any.
    pub fn mode(&self) -> Result<Option<PairMode>> {
        let mut modes = self.records.iter().map(|r| r.mode);
        let Some(first) = modes.next() else {
            return Ok(None);
        };
        if modes.any(|m| m != first) {
            return Err(Error::Config("manifest mixes pair modes".into()));
        }
        Ok(Some(first))
    }

    pub fn summary(&self) -> MixSummary {
        MixSummary::from_records(&self.records)
    }
}

/// Achieved-SNR statistics of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSummary {
    pub count: usize,
    pub mean_snr_db: f64,
    pub min_snr_db: f64,
    pub max_snr_db: f64,
    /// Counts of input SNRs in ten 1 dB bins over `[0, 10]`.
    pub histogram: Vec<usize>,
    pub clipped: usize,
}

impl MixSummary {
    pub fn from_records(records: &[PairRecord]) -> Self {
        let snrs: Vec<f64> = records
            .iter()
            .flat_map(|r| std::iter::once(r.input_snr_db).chain(r.target_snr_db))
            .collect();
        let mut histogram = vec![0; 10];
        for s in &snrs {
            let bin = ((s - SNR_MIN_DB) / (SNR_MAX_DB - SNR_MIN_DB) * 10.0).floor();
            histogram[(bin.max(0.0) as usize).min(9)] += 1;
        }
        let n = snrs.len().max(1) as f64;
        Self {
            count: records.len(),
            mean_snr_db: snrs.iter().sum::<f64>() / n,
            min_snr_db: snrs.iter().copied().fold(f64::INFINITY, f64::min),
            max_snr_db: snrs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            histogram,
            clipped: records.iter().filter(|r| r.clipped).count(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixConfig {
    pub mode: PairMode,
    pub input_category: InputCategory,
    pub count: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub encoding: WavEncoding,
}

/// Generates `cfg.count` pairs from the clean clips in `clean_dir`, cycling
/// through them in name order, and writes WAV triples and `manifest.jsonl`
/// under `out_dir`.
pub fn generate_dataset(
    clean_dir: impl AsRef<Path>,
    source: &NoiseSource,
    cfg: &MixConfig,
    out_dir: impl AsRef<Path>,
    exec: Exec,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    check_source(source, cfg.mode, &cfg.input_category)?;
    let clean_files = wav_files(&clean_dir)?;
    if clean_files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .wav files in {}",
            clean_dir.as_ref().display()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results = exec.map_range(cfg.count, |i| -> Result<PairRecord> {
        let path = &clean_files[i % clean_files.len()];
        let clean = read_wav(path).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })?;
        let clean = if clean.sample_rate() == cfg.sample_rate {
            clean
        } else {
            resample_linear(&clean, cfg.sample_rate)?
        };
        let seed = derive_seed(cfg.seed, &[i as u64]);
        let pair = make_pair(&clean, source, cfg.mode, &cfg.input_category, seed)?;
        write_pair(&pair, i, out_dir, cfg.encoding)
    });
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        records,
    };
    manifest.save(out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

fn write_pair(
    pair: &TrainingPair,
    index: usize,
    out_dir: &Path,
    enc: WavEncoding,
) -> Result<PairRecord> {
    let pair_id = format!("pair{index:05}");
    let names = [
        format!("{pair_id}_input.wav"),
        format!("{pair_id}_target.wav"),
        format!("{pair_id}_clean.wav"),
    ];
    let waves = [&pair.input, &pair.target, &pair.clean_ref];
    for (w, name) in waves.iter().zip(&names) {
        write_wav(w, out_dir.join(name), enc)?;
    }
    let clipped = enc == WavEncoding::Pcm16 && waves.iter().any(|w| w.clips_pcm16());
    let [input_path, target_path, clean_path] = names;
    Ok(PairRecord {
        pair_id,
        mode: pair.mode,
        input_path,
        target_path,
        clean_path,
        input_category: pair.input_category.clone(),
        target_category: pair.target_category.clone(),
        input_snr_db: pair.input_snr_db,
        target_snr_db: pair.target_snr_db,
        seed: pair.seed,
        clipped,
    })
}

/// Pearson correlation coefficient of two equal-length sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!(
            "correlation needs two equal sequences of length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidArgument(
            "correlation of a constant sequence".into(),
        ));
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16_000).unwrap()
    }

    fn sine(amp: f64, len: usize) -> Waveform {
        wave((0..len).map(|i| amp * (0.05 * i as f64).sin()).collect())
    }

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        wave((0..len).map(|_| r.sample(StandardNormal)).collect())
    }

    #[test]
    fn snr_of_simple_signals() {
        let s = compute_snr_db(&sine(1.0, 4000), &sine(0.1, 4000)).unwrap();
        assert!((s - 20.0).abs() < 1e-9);
        assert_eq!(
            compute_snr_db(&sine(0.3, 100), &sine(0.3, 100)).unwrap(),
            0.0
        );
        assert!(compute_snr_db(&sine(1.0, 10), &wave(vec![0.0; 10])).is_err());
        assert!(compute_snr_db(&sine(1.0, 10), &sine(1.0, 11)).is_err());
    }

    #[test]
    fn snr_matches_summation_oracle() {
        let (a, b) = (noise(1234, 1), noise(1234, 2).scaled(0.3).unwrap());
        let mut sa = 0.0;
        let mut sb = 0.0;
        for i in 0..1234 {
            sa += a.samples()[i].powi(2);
            sb += b.samples()[i].powi(2);
        }
        let want = 10.0 * (sa / sb).log10();
        assert!((compute_snr_db(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn scaling_hits_target_snr() {
        let clean = sine(0.5, 8000);
        let n = noise(8000, 3);
        for target in [0.0, 3.7, 10.0, 40.0] {
            let scaled = scale_noise_to_snr(&clean, &n, target).unwrap();
            assert!((compute_snr_db(&clean, &scaled).unwrap() - target).abs() < 1e-9);
        }
        let zero_db = scale_noise_to_snr(&clean, &n, 0.0).unwrap();
        assert!((zero_db.energy() / clean.energy() - 1.0).abs() < 1e-12);
        let ten_db = scale_noise_to_snr(&clean, &n, 10.0).unwrap();
        assert!((clean.energy() / ten_db.energy() - 10.0).abs() < 1e-9);
        assert!(scale_noise_to_snr(&wave(vec![0.0; 8000]), &n, 5.0).is_err());
        assert!(scale_noise_to_snr(&clean, &wave(vec![0.0; 8000]), 5.0).is_err());
    }

    #[test]
    fn overlay_tiles_and_truncates() {
        let n = wave(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(overlay_repeat(3, &n).unwrap().samples(), &[1.0, 2.0, 3.0]);
        assert_eq!(
            overlay_repeat(8, &n).unwrap().samples(),
            &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            overlay_repeat(5, &wave(vec![0.25])).unwrap().samples(),
            &[0.25; 5]
        );
        assert!(overlay_repeat(5, &wave(vec![])).is_err());
    }

    #[test]
    fn white_pairs_have_independent_residuals() {
        let clean = sine(0.4, 160_000);
        let p = make_pair(
            &clean,
            &NoiseSource::White,
            PairMode::N2n,
            &InputCategory::Random,
            9,
        )
        .unwrap();
        assert_eq!(
            (p.input_category.as_str(), p.target_category.as_str()),
            (WHITE, WHITE)
        );
        let n = p.input.sub(&clean).unwrap();
        let m = p.target.sub(&clean).unwrap();
        assert!(pearson(n.samples(), m.samples()).unwrap().abs() < 0.02);
        let snr_in = compute_snr_db(&clean, &n).unwrap();
        assert!((snr_in - p.input_snr_db).abs() < 1e-9);
        assert!((0.0..=10.0).contains(&p.input_snr_db));
        assert!((0.0..=10.0).contains(&p.target_snr_db.unwrap()));
    }

    #[test]
    fn clean_target_modes() {
        let clean = sine(0.4, 1000);
        for mode in [PairMode::N2c, PairMode::Test] {
            let p =
                make_pair(&clean, &NoiseSource::White, mode, &InputCategory::Random, 4).unwrap();
            assert_eq!(p.target, clean);
            assert_eq!(p.target_category, CLEAN);
            assert_eq!(p.target_snr_db, None);
        }
    }

    #[test]
    fn pairs_replay_from_their_seed() {
        let clean = sine(0.4, 2000);
        let a = make_pair(
            &clean,
            &NoiseSource::White,
            PairMode::N2n,
            &InputCategory::Random,
            77,
        );
        let b = make_pair(
            &clean,
            &NoiseSource::White,
            PairMode::N2n,
            &InputCategory::Random,
            77,
        );
        assert_eq!(a.unwrap(), b.unwrap());
    }

    #[test]
    fn single_category_bank_rejects_noisy_targets() {
        let mut cats = BTreeMap::new();
        cats.insert("siren".to_string(), vec![PathBuf::from("x.wav")]);
        let bank = NoiseSource::Bank(NoiseBank::new(cats).unwrap());
        let err = make_pair(
            &sine(0.4, 100),
            &bank,
            PairMode::N2n,
            &InputCategory::Random,
            1,
        );
        assert!(matches!(err, Err(Error::Config(_))));
        let named = InputCategory::Named("dog".into());
        assert!(make_pair(&sine(0.4, 100), &bank, PairMode::N2c, &named, 1).is_err());
    }

    #[test]
    fn summary_histogram() {
        let rec = |snr: f64| PairRecord {
            pair_id: String::new(),
            mode: PairMode::Test,
            input_path: String::new(),
            target_path: String::new(),
            clean_path: String::new(),
            input_category: WHITE.into(),
            target_category: CLEAN.into(),
            input_snr_db: snr,
            target_snr_db: None,
            seed: 0,
            clipped: false,
        };
        let s = MixSummary::from_records(&[rec(0.0), rec(4.5), rec(10.0)]);
        assert_eq!(s.histogram, vec![1, 0, 0, 0, 1, 0, 0, 0, 0, 1]);
        assert!((s.mean_snr_db - 14.5 / 3.0).abs() < 1e-12);
    }
}
