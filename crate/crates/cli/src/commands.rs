use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use n2n_core::audio::{read_wav, resample_polyphase, write_wav, WavEncoding, Waveform};
use n2n_core::dcunet::{load_model, ArchitectureSpec, Dcunet};
use n2n_core::metrics::{evaluate_testset, plot_data, ComparisonTable, MetricReport, SsnrParams};
use n2n_core::mixgen::{
    generate_dataset, wav_files, DatasetManifest, InputCategory, MixConfig, NoiseBank, NoiseSource,
    PairMode, MANIFEST_NAME,
};
use n2n_core::spectral::StftConfig;
use n2n_core::trainer::{load_checkpoint, load_examples, write_loss_csv, TrainConfig, Trainer};
use n2n_core::{Error, Exec, Precision, Real};

use crate::args::*;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inputs that fail validation (exit code 2).
    Usage(String),
    /// Failure while doing the work (exit code 1).
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(cli: Cli) -> CliResult<()> {
    let Cli {
        mut global,
        mut command,
    } = cli;
    if let Some(path) = global.config.clone() {
        apply_config(&path, &mut global, &mut command)?;
    }
    let precision = Precision::from_bits(global.precision).ok_or_else(|| {
        usage(format!(
            "--precision must be 32 or 64, got {}",
            global.precision
        ))
    })?;
    if global.sample_rate == 0 {
        return Err(usage("--sample-rate must be positive"));
    }
    let ctx = Context { global, precision };
    match &command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Mix(a) => mix(&ctx, a),
        Command::Train(a) => match precision {
            Precision::F32 => train::<f32>(&ctx, a),
            Precision::F64 => train::<f64>(&ctx, a),
        },
        Command::Denoise(a) => match precision {
            Precision::F32 => denoise::<f32>(&ctx, a),
            Precision::F64 => denoise::<f64>(&ctx, a),
        },
        Command::Eval(a) => eval(&ctx, a),
        Command::Report(a) => report(a),
    }
}

struct Context {
    global: GlobalArgs,
    precision: Precision,
}

/// Overrides global and subcommand flags with the keys of a JSON object.
fn apply_config(path: &Path, global: &mut GlobalArgs, command: &mut Command) -> CliResult<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let overrides: Map<String, Value> = serde_json::from_str(&text).map_err(|e| {
        usage(format!(
            "config {} is not a JSON object: {e}",
            path.display()
        ))
    })?;
    let mut g = to_object(&*global)?;
    let mut c = match command {
        Command::Synth(a) => to_object(a)?,
        Command::Mix(a) => to_object(a)?,
        Command::Train(a) => to_object(a)?,
        Command::Denoise(a) => to_object(a)?,
        Command::Eval(a) => to_object(a)?,
        Command::Report(a) => to_object(a)?,
    };
    for (k, v) in overrides {
        let key = k.replace('-', "_");
        if g.contains_key(&key) {
            g.insert(key, v);
        } else if c.contains_key(&key) {
            c.insert(key, v);
        } else {
            return Err(usage(format!(
                "config key {k} is not a flag of {}",
                command.name()
            )));
        }
    }
    let config = global.config.take();
    *global = from_object(g)?;
    global.config = config;
    match command {
        Command::Synth(a) => *a = from_object(c)?,
        Command::Mix(a) => *a = from_object(c)?,
        Command::Train(a) => *a = from_object(c)?,
        Command::Denoise(a) => *a = from_object(c)?,
        Command::Eval(a) => *a = from_object(c)?,
        Command::Report(a) => *a = from_object(c)?,
    }
    Ok(())
}

fn to_object<T: Serialize>(v: &T) -> CliResult<Map<String, Value>> {
    match serde_json::to_value(v) {
        Ok(Value::Object(m)) => Ok(m),
        _ => Err(CliError::Runtime(
            "flags do not serialise to an object".into(),
        )),
    }
}

fn from_object<T: serde::de::DeserializeOwned>(m: Map<String, Value>) -> CliResult<T> {
    serde_json::from_value(Value::Object(m)).map_err(|e| usage(format!("config: {e}")))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Records tool version, seeds and resolved flags next to the outputs.
fn write_run_metadata(
    ctx: &Context,
    dir: &Path,
    command: &str,
    args: &impl Serialize,
) -> CliResult<()> {
    let meta = json!({
        "tool": "n2n",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": ctx.global.seed,
        "precision": ctx.global.precision,
        "sample_rate": ctx.global.sample_rate,
        "parallel_build": Exec::available(),
        "args": args,
    });
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(&meta).map_err(Error::from)? + "\n";
    std::fs::write(&path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn synth(ctx: &Context, a: &SynthArgs) -> CliResult<()> {
    if a.count == 0 || !(a.duration > 0.0) {
        return Err(usage("--count and --duration must be positive"));
    }
    let files = n2n_core::synth::write_corpus(
        &a.out,
        a.count,
        a.duration,
        ctx.global.sample_rate,
        ctx.global.seed,
    )?;
    write_run_metadata(ctx, &a.out, "synth", a)?;
    println!("wrote {} clips to {}", files.len(), a.out.display());
    Ok(())
}

fn mix(ctx: &Context, a: &MixArgs) -> CliResult<()> {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let white = a.white || a.mode == MixMode::White;
    if white && a.noise_dir.is_some() {
        return Err(usage("--noise-dir cannot be combined with white noise"));
    }
    if !white && a.noise_dir.is_none() {
        return Err(usage("give --noise-dir or --white"));
    }
    let (mode, category) = match a.mode {
        MixMode::N2n | MixMode::White => (PairMode::N2n, InputCategory::parse(&a.category)),
        MixMode::N2c => (PairMode::N2c, InputCategory::parse(&a.category)),
        MixMode::Test => (PairMode::Test, InputCategory::parse(&a.category)),
        MixMode::Mixed => {
            if a.category != "random" {
                return Err(usage(
                    "--mode mixed draws categories at random; drop --category",
                ));
            }
            (PairMode::N2n, InputCategory::Random)
        }
    };
    let source = match &a.noise_dir {
        Some(dir) => NoiseSource::Bank(NoiseBank::from_dir(dir)?),
        None => NoiseSource::White,
    };
    let encoding = match a.encoding {
        Encoding::Float32 => WavEncoding::Float32,
        Encoding::Pcm16 => WavEncoding::Pcm16,
    };
    let cfg = MixConfig {
        mode,
        input_category: category,
        count: a.count,
        seed: ctx.global.seed,
        sample_rate: ctx.global.sample_rate,
        encoding,
    };
    let manifest = generate_dataset(&a.clean_dir, &source, &cfg, &a.out, Exec::Parallel)?;
    write_run_metadata(ctx, &a.out, "mix", a)?;
    let s = manifest.summary();
    println!("manifest: {}", a.out.join(MANIFEST_NAME).display());
    println!(
        "pairs: {}  achieved SNR mean {:.3} dB  min {:.3}  max {:.3}  clipped {}",
        s.count, s.mean_snr_db, s.min_snr_db, s.max_snr_db, s.clipped
    );
    println!(
        "SNR histogram over noisy sides, 1 dB bins from 0 dB: {:?}",
        s.histogram
    );
    Ok(())
}

fn architecture(arch: &str) -> CliResult<ArchitectureSpec> {
    match ArchitectureSpec::preset(arch) {
        Some(s) => Ok(s),
        None if Path::new(arch).is_file() => Ok(ArchitectureSpec::load(arch)?),
        None => Err(usage(format!(
            "unknown architecture {arch}: use desk-10, dcunet-20, tiny or a JSON file"
        ))),
    }
}

fn train<S: Real>(ctx: &Context, a: &TrainArgs) -> CliResult<()> {
    let mode = match a.mode {
        TrainMode::N2n => PairMode::N2n,
        TrainMode::N2c => PairMode::N2c,
    };
    let mut cfg = TrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        max_steps: a.max_steps,
        learning_rate: a.lr,
        seed: ctx.global.seed,
        precision: ctx.precision,
        checkpoint_every: a.checkpoint_every,
        crop: a.crop,
        deterministic: a.deterministic,
        ..TrainConfig::new(mode)
    };
    cfg.validate()?;
    let spec = architecture(&a.arch)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let examples = load_examples(&manifest, mode, cfg.exec())?;
    let mut trainer = match &a.resume {
        None => {
            let stft = spec.stft_config(ctx.global.sample_rate)?;
            Trainer::<S>::new(examples, spec, stft, cfg.clone())?
        }
        Some(path) => {
            let (state, saved, stft) = load_checkpoint::<S>(path)?;
            if saved.mode != mode {
                return Err(usage(format!(
                    "checkpoint was trained in {} mode",
                    saved.mode.as_str()
                )));
            }
            cfg = TrainConfig {
                epochs: a.epochs,
                max_steps: a.max_steps,
                checkpoint_every: a.checkpoint_every,
                deterministic: a.deterministic,
                ..saved
            };
            Trainer::with_state(examples, stft, cfg.clone(), state)?
        }
    };
    create_dir(&a.out)?;
    write_run_metadata(
        ctx,
        &a.out,
        "train",
        &json!({ "args": a, "train_config": cfg }),
    )?;
    let total = trainer.total_steps();
    let every = (total / 20).max(1);
    let mut tail = Vec::new();
    trainer.run(Some(&a.out), |r| {
        tail.push(r.loss);
        if (r.step + 1) % every == 0 || r.step + 1 == total {
            let n = tail.len() as f64;
            eprintln!(
                "step {}/{total} epoch {} loss {:.4}",
                r.step + 1,
                r.epoch,
                tail.iter().sum::<f64>() / n
            );
            tail.clear();
        }
    })?;
    let ckpt = a.out.join("model.ckpt");
    trainer.save(&ckpt)?;
    write_loss_csv(&trainer.state().curve, a.out.join("loss.csv"))?;
    println!("checkpoint: {}", ckpt.display());
    println!("loss curve: {}", a.out.join("loss.csv").display());
    Ok(())
}

/// A network plus the STFT it was trained with.
struct LoadedModel<S: Real> {
    model: Dcunet<S>,
    stft: StftConfig,
}

impl<S: Real> LoadedModel<S> {
    fn open(path: &Path, sample_rate: u32) -> CliResult<Self> {
        if !path.is_file() {
            return Err(CliError::Runtime(format!(
                "checkpoint {} not found",
                path.display()
            )));
        }
        let (model, meta) = load_model::<S>(path)?;
        let stft = match meta.get("stft") {
            Some(v) => serde_json::from_value(v.clone()).map_err(Error::from)?,
            None => model.spec.stft_config(sample_rate)?,
        };
        Ok(Self { model, stft })
    }

    /// Denoises at the pipeline rate and returns audio at the input's rate and length.
    fn apply(&self, w: &Waveform, rate: u32) -> n2n_core::Result<Waveform> {
        if w.sample_rate() == rate {
            return self.model.denoise(w, &self.stft);
        }
        let at_rate = resample_polyphase(w, rate)?;
        let est = self.model.denoise(&at_rate, &self.stft)?;
        let back = resample_polyphase(&est, w.sample_rate())?;
        let mut samples = back.into_samples();
        samples.resize(w.len(), 0.0);
        Waveform::new(samples, w.sample_rate())
    }
}

fn denoise<S: Real>(ctx: &Context, a: &DenoiseArgs) -> CliResult<()> {
    let rate = ctx.global.sample_rate;
    let model = LoadedModel::<S>::open(&a.checkpoint, rate)?;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        create_dir(&a.out)?;
        wav_files(&a.input)?
            .into_iter()
            .map(|p| {
                let name = p.file_name().expect("listed file").to_owned();
                (p, a.out.join(name))
            })
            .collect()
    } else if a.input.is_file() {
        if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        vec![(a.input.clone(), a.out.clone())]
    } else {
        return Err(CliError::Runtime(format!(
            "input {} not found",
            a.input.display()
        )));
    };
    for (src, dst) in &jobs {
        let w = read_wav(src)?;
        let est = model.apply(&w, rate)?;
        write_wav(&est, dst, WavEncoding::Float32)?;
    }
    if a.input.is_dir() {
        write_run_metadata(ctx, &a.out, "denoise", a)?;
    }
    println!("denoised {} file(s) into {}", jobs.len(), a.out.display());
    Ok(())
}

fn parse_pesq(specs: &[String]) -> CliResult<Vec<(String, PathBuf)>> {
    specs
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(c, p)| (c.to_string(), PathBuf::from(p)))
                .ok_or_else(|| usage(format!("--pesq-csv expects CONDITION=FILE, got {s}")))
        })
        .collect()
}

type Estimator = Box<dyn Fn(&Waveform) -> n2n_core::Result<Waveform> + Sync>;

fn estimator(path: &Path, precision: Precision, rate: u32) -> CliResult<Estimator> {
    Ok(match precision {
        Precision::F32 => {
            let m = LoadedModel::<f32>::open(path, rate)?;
            Box::new(move |w| m.apply(w, rate))
        }
        Precision::F64 => {
            let m = LoadedModel::<f64>::open(path, rate)?;
            Box::new(move |w| m.apply(w, rate))
        }
    })
}

fn slug(condition: &str) -> String {
    condition
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

fn eval(ctx: &Context, a: &EvalArgs) -> CliResult<()> {
    let mut models: Vec<(String, PathBuf)> = Vec::new();
    if let Some(p) = &a.checkpoint {
        models.push((a.name.clone(), p.clone()));
    }
    if let Some(p) = &a.n2c {
        models.push(("N2C".into(), p.clone()));
    }
    if let Some(p) = &a.n2n {
        models.push(("N2N".into(), p.clone()));
    }
    let mut names = vec!["Baseline".to_string()];
    for (n, _) in &models {
        if names.contains(n) {
            return Err(usage(format!("condition {n} given twice")));
        }
        names.push(n.clone());
    }
    let pesq = parse_pesq(&a.pesq_csv)?;
    if let Some((c, _)) = pesq.iter().find(|(c, _)| !names.contains(c)) {
        return Err(usage(format!("--pesq-csv names unknown condition {c}")));
    }
    let manifest = DatasetManifest::load(&a.manifest)?;
    let ssnr = SsnrParams::default();
    let rate = ctx.global.sample_rate;
    let mut reports = vec![evaluate_testset(
        &manifest,
        "Baseline",
        None,
        &ssnr,
        Exec::Parallel,
    )?];
    for (name, path) in &models {
        let f = estimator(path, ctx.precision, rate)?;
        reports.push(evaluate_testset(
            &manifest,
            name,
            Some(&*f),
            &ssnr,
            Exec::Parallel,
        )?);
    }
    for (cond, path) in &pesq {
        let r = reports
            .iter_mut()
            .find(|r| &r.condition == cond)
            .expect("checked above");
        r.import_pesq(path)?;
    }
    create_dir(&a.out)?;
    for r in &reports {
        let stem = slug(&r.condition);
        r.save_json(a.out.join(format!("{stem}.json")))?;
        write_text(&a.out.join(format!("{stem}.csv")), &r.files_csv())?;
    }
    let table = ComparisonTable::build(&reports)?;
    write_text(&a.out.join("comparison.csv"), &table.to_csv())?;
    let text = table.render_text();
    write_text(&a.out.join("comparison.txt"), &text)?;
    write_run_metadata(ctx, &a.out, "eval", a)?;
    print!("{text}");
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn report(a: &ReportArgs) -> CliResult<()> {
    let reports = a
        .reports
        .iter()
        .map(|p| {
            if p.is_file() {
                Ok(MetricReport::load_json(p)?)
            } else {
                Err(CliError::Runtime(format!(
                    "report {} not found",
                    p.display()
                )))
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    let body = match a.format {
        ReportFormat::Plotdata => plot_data(&reports),
        format => {
            let table = ComparisonTable::build(&reports)?;
            match format {
                ReportFormat::Csv => table.to_csv(),
                ReportFormat::Json => {
                    serde_json::to_string_pretty(&table).map_err(Error::from)? + "\n"
                }
                _ => table.render_text(),
            }
        }
    };
    match &a.out {
        Some(p) => write_text(p, &body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}
