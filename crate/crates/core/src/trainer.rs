//! Optimisation loop for the clean-target and noisy-target regimes.
//!
//! The loader only ever opens each record's input and target files. In the
//! noisy-target regime the target is a second noisy mixture, so the clean
//! reference is never touched during training.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::read_wav;
use crate::checkpoint;
use crate::cxnn::{ComplexTensor, ComplexVar, Tape, Tensor, Var};
use crate::dcunet::{ArchitectureSpec, Dcunet, ModelParameters};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mixgen::{DatasetManifest, PairMode};
use crate::objective::wsdr_loss_rows;
use crate::real::{Precision, Real};
use crate::rng::stream_rng;
use crate::spectral::{StftConfig, StftPlan};

const SHUFFLE_STREAM: u64 = 0x5_4ff1e;
const CROP_STREAM: u64 = 0xc_409;

fn default_checkpoint_every() -> usize {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: PairMode,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early after this many optimiser steps.
    #[serde(default)]
    pub max_steps: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Writes a resumable checkpoint every this many steps; 0 disables.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Training crop length in samples.
    pub crop: usize,
    /// Single worker, for reproducible runs.
    #[serde(default)]
    pub deterministic: bool,
}

impl TrainConfig {
    pub fn new(mode: PairMode) -> Self {
        Self {
            mode,
            batch_size: 2,
            epochs: 4,
            max_steps: None,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            precision: Precision::F32,
            checkpoint_every: 0,
            crop: 16_384,
            deterministic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.mode, PairMode::N2n | PairMode::N2c) {
            return Err(Error::Config(format!(
                "training mode must be n2n or n2c, got {}",
                self.mode.as_str()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam eps must be positive".into()));
        }
        if self.crop == 0 {
            return Err(Error::Config("crop must be at least one sample".into()));
        }
        Ok(())
    }

    pub fn exec(&self) -> Exec {
        if self.deterministic {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: BTreeMap<String, Tensor<S>>,
    pub v: BTreeMap<String, Tensor<S>>,
    pub t: u64,
}

impl<S> Default for AdamState<S> {
    fn default() -> Self {
        Self {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step<S: Real>(
    params: &mut BTreeMap<String, Tensor<S>>,
    grads: &BTreeMap<String, Tensor<S>>,
    state: &mut AdamState<S>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| {
            Error::InvalidArgument(format!("gradient for unknown parameter {name}"))
        })?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "{name}: parameter {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        for (((pi, mi), vi), gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            let gf = gi.f64();
            let mf = cfg.beta1 * mi.f64() + (1.0 - cfg.beta1) * gf;
            let vf = cfg.beta2 * vi.f64() + (1.0 - cfg.beta2) * gf * gf;
            *mi = S::lit(mf);
            *vi = S::lit(vf);
            let update = cfg.learning_rate * (mf / c1) / ((vf / c2).sqrt() + cfg.eps);
            *pi = S::lit(pi.f64() - update);
        }
    }
    Ok(())
}

/// Tracked inverse STFT of `[B, 1, F, T]` planes to `[B, len]` waveforms.
pub fn istft_batch<'t, S: Real>(
    plan: &StftPlan<S>,
    spec: ComplexVar<'t, S>,
    len: usize,
) -> Result<Var<'t, S>> {
    let shape = spec.shape();
    let bins = plan.config().bins();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != bins {
        return Err(Error::Shape(format!(
            "inverse STFT expects [B, 1, {bins}, T], got {shape:?}"
        )));
    }
    let (batch, frames) = (shape[0], shape[3]);
    if plan.config().num_frames(len) != frames {
        return Err(Error::Shape(format!(
            "{frames} frames cannot produce {len} samples"
        )));
    }
    let (re, im) = (spec.re.value(), spec.im.value());
    let plane = bins * frames;
    let mut out = vec![S::zero(); batch * len];
    for b in 0..batch {
        plan.inverse(
            &re.data()[b * plane..(b + 1) * plane],
            &im.data()[b * plane..(b + 1) * plane],
            frames,
            len,
            &mut out[b * len..(b + 1) * len],
        );
    }
    let plan_cfg = *plan.config();
    let tape = spec.tape();
    Ok(tape.record1(
        &[spec.re, spec.im],
        Tensor::new(vec![batch, len], out)?,
        Box::new(move |g, _| {
            let plan = StftPlan::<S>::new(plan_cfg).expect("validated config");
            let mut dre = Tensor::zeros(&[batch, 1, bins, frames]);
            let mut dim = Tensor::zeros(&[batch, 1, bins, frames]);
            for b in 0..batch {
                plan.inverse_adjoint(
                    &g[0].data()[b * len..(b + 1) * len],
                    frames,
                    &mut dre.data_mut()[b * plane..(b + 1) * plane],
                    &mut dim.data_mut()[b * plane..(b + 1) * plane],
                );
            }
            vec![Some(dre), Some(dim)]
        }),
    ))
}

/// Forward STFT of `[B, L]` rows into `[B, 1, F, T]` planes.
pub fn stft_batch<S: Real>(plan: &StftPlan<S>, rows: &Tensor<S>) -> Result<ComplexTensor<S>> {
    let (batch, len) = (rows.shape()[0], rows.shape()[1]);
    let frames = plan.config().num_frames(len);
    let plane = plan.config().bins() * frames;
    let mut re = vec![S::zero(); batch * plane];
    let mut im = vec![S::zero(); batch * plane];
    for b in 0..batch {
        plan.forward(
            &rows.data()[b * len..(b + 1) * len],
            &mut re[b * plane..(b + 1) * plane],
            &mut im[b * plane..(b + 1) * plane],
        );
    }
    let shape = vec![batch, 1, plan.config().bins(), frames];
    ComplexTensor::new(Tensor::new(shape.clone(), re)?, Tensor::new(shape, im)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<S> {
    pub step: u64,
    pub epoch: usize,
    /// Batches already consumed in the current epoch.
    pub batch_in_epoch: usize,
    /// Exponential moving average of the loss (factor 0.98).
    pub running_loss: f64,
    pub model: Dcunet<S>,
    pub adam: AdamState<S>,
    pub curve: Vec<LossRecord>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    kind: String,
    architecture: ArchitectureSpec,
    stft: StftConfig,
    config: TrainConfig,
    step: u64,
    epoch: usize,
    batch_in_epoch: usize,
    running_loss: f64,
    adam_t: u64,
    curve: Vec<LossRecord>,
}

const STATE_KIND: &str = "train_state";

/// Writes a resumable training checkpoint. Model tensors keep their plain
/// names, so the file also loads as a model.
pub fn save_checkpoint<S: Real>(
    state: &TrainState<S>,
    cfg: &TrainConfig,
    stft: &StftConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let meta = StateMeta {
        kind: STATE_KIND.into(),
        architecture: state.model.spec.clone(),
        stft: *stft,
        config: cfg.clone(),
        step: state.step,
        epoch: state.epoch,
        batch_in_epoch: state.batch_in_epoch,
        running_loss: state.running_loss,
        adam_t: state.adam.t,
        curve: state.curve.clone(),
    };
    let mut tensors = state.model.params.tensors.clone();
    for (k, t) in &state.adam.m {
        tensors.insert(format!("adam.m.{k}"), t.clone());
    }
    for (k, t) in &state.adam.v {
        tensors.insert(format!("adam.v.{k}"), t.clone());
    }
    checkpoint::save(path, &serde_json::to_value(meta)?, &tensors)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<S: Real>(
    path: impl AsRef<Path>,
) -> Result<(TrainState<S>, TrainConfig, StftConfig)> {
    let (meta, tensors) = checkpoint::load::<S>(path)?;
    let meta: StateMeta = serde_json::from_value(meta).map_err(|e| Error::Format {
        what: "training checkpoint",
        detail: e.to_string(),
    })?;
    if meta.kind != STATE_KIND {
        return Err(Error::Format {
            what: "training checkpoint",
            detail: format!("kind is {}, not {STATE_KIND}", meta.kind),
        });
    }
    let mut model_tensors = BTreeMap::new();
    let mut adam = AdamState {
        t: meta.adam_t,
        ..AdamState::default()
    };
    for (k, t) in tensors {
        if let Some(rest) = k.strip_prefix("adam.m.") {
            adam.m.insert(rest.to_string(), t);
        } else if let Some(rest) = k.strip_prefix("adam.v.") {
            adam.v.insert(rest.to_string(), t);
        } else {
            model_tensors.insert(k, t);
        }
    }
    let model = Dcunet::from_parts(
        meta.architecture,
        ModelParameters {
            tensors: model_tensors,
        },
    )?;
    Ok((
        TrainState {
            step: meta.step,
            epoch: meta.epoch,
            batch_in_epoch: meta.batch_in_epoch,
            running_loss: meta.running_loss,
            model,
            adam,
            curve: meta.curve,
        },
        meta.config,
        meta.stft,
    ))
}

/// Input and target waveforms of one training pair.
#[derive(Debug, Clone)]
pub struct Example {
    pub pair_id: String,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Loads input/target pairs, checking the manifest matches the regime.
pub fn load_examples(
    manifest: &DatasetManifest,
    mode: PairMode,
    exec: Exec,
) -> Result<Vec<Example>> {
    match manifest.mode()? {
        None => return Err(Error::Config("training manifest is empty".into())),
        Some(m) if m != mode => {
            return Err(Error::Config(format!(
                "manifest holds {} pairs but training mode is {}",
                m.as_str(),
                mode.as_str()
            )))
        }
        Some(_) => {}
    }
    let loaded = exec.map(&manifest.records, |rec| -> Result<Example> {
        let input = read_wav(manifest.resolve(&rec.input_path))?;
        let target = read_wav(manifest.resolve(&rec.target_path))?;
        if input.len() != target.len() || input.sample_rate() != target.sample_rate() {
            return Err(Error::Format {
                what: "training pair",
                detail: format!("{}: input and target differ in length or rate", rec.pair_id),
            });
        }
        Ok(Example {
            pair_id: rec.pair_id.clone(),
            input: input.into_samples(),
            target: target.into_samples(),
        })
    });
    loaded.into_iter().collect()
}

/// Drives optimisation over an in-memory training set.
pub struct Trainer<S: Real> {
    cfg: TrainConfig,
    stft: StftConfig,
    plan: StftPlan<S>,
    examples: Vec<Example>,
    state: TrainState<S>,
}

impl<S: Real> Trainer<S> {
    pub fn new(
        examples: Vec<Example>,
        spec: ArchitectureSpec,
        stft: StftConfig,
        cfg: TrainConfig,
    ) -> Result<Self> {
        let model = Dcunet::init(spec, crate::rng::derive_seed(cfg.seed, &[0x1417]))?;
        Self::with_state(
            examples,
            stft,
            cfg,
            TrainState {
                step: 0,
                epoch: 0,
                batch_in_epoch: 0,
                running_loss: 0.0,
                model,
                adam: AdamState::default(),
                curve: Vec::new(),
            },
        )
    }

    /// Continues from a saved state.
    pub fn with_state(
        examples: Vec<Example>,
        stft: StftConfig,
        cfg: TrainConfig,
        state: TrainState<S>,
    ) -> Result<Self> {
        cfg.validate()?;
        if S::DTYPE != dtype_of(cfg.precision) {
            return Err(Error::Config(format!(
                "trainer built for {} but config asks for {}-bit",
                S::DTYPE,
                cfg.precision.bits()
            )));
        }
        if examples.is_empty() {
            return Err(Error::Config("no training examples".into()));
        }
        if stft.bins() != state.model.spec.freq_bins {
            return Err(Error::Config(format!(
                "architecture expects {} bins, STFT gives {}",
                state.model.spec.freq_bins,
                stft.bins()
            )));
        }
        let frames = stft.num_frames(cfg.crop);
        state.model.spec.check_extent(stft.bins(), frames)?;
        if frames < state.model.spec.min_frames() {
            return Err(Error::Config(format!(
                "crop of {} samples gives {frames} frames, need {}",
                cfg.crop,
                state.model.spec.min_frames()
            )));
        }
        Ok(Self {
            plan: StftPlan::new(stft)?,
            cfg,
            stft,
            examples,
            state,
        })
    }

    pub fn state(&self) -> &TrainState<S> {
        &self.state
    }

    pub fn into_state(self) -> TrainState<S> {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.examples.len().div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self) -> u64 {
        let full = (self.cfg.epochs * self.batches_per_epoch()) as u64;
        self.cfg.max_steps.map_or(full, |m| full.min(m as u64))
    }

    pub fn finished(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut stream_rng(
            self.cfg.seed,
            &[SHUFFLE_STREAM, epoch as u64],
        ));
        order
    }

    /// Cropped (zero-padded if short) input and target rows for one batch.
    fn batch(&self, epoch: usize, indices: &[usize]) -> Result<(Tensor<S>, Tensor<S>)> {
        let len = self.cfg.crop;
        let mut input = vec![S::zero(); indices.len() * len];
        let mut target = vec![S::zero(); indices.len() * len];
        for (row, &i) in indices.iter().enumerate() {
            let ex = &self.examples[i];
            let avail = ex.input.len();
            let offset = if avail > len {
                stream_rng(self.cfg.seed, &[CROP_STREAM, epoch as u64, i as u64])
                    .gen_range(0..=avail - len)
            } else {
                0
            };
            let take = len.min(avail);
            for k in 0..take {
                input[row * len + k] = S::lit(ex.input[offset + k]);
                target[row * len + k] = S::lit(ex.target[offset + k]);
            }
        }
        let shape = vec![indices.len(), len];
        Ok((
            Tensor::new(shape.clone(), input)?,
            Tensor::new(shape, target)?,
        ))
    }

    /// Loss and parameter gradients for a batch, without updating anything.
    pub fn loss_and_grads(
        &self,
        input: &Tensor<S>,
        target: &Tensor<S>,
    ) -> Result<(
        f64,
        BTreeMap<String, Tensor<S>>,
        Vec<(String, crate::cxnn::ChannelStats<S>)>,
    )> {
        let tape = Tape::with_exec(self.cfg.exec());
        let x = stft_batch(&self.plan, input)?;
        let xv = tape.complex_constant(x);
        let pass = self.state.model.forward(&tape, xv, true)?;
        let estimate = pass.logits.polar_mask().mul(xv);
        let wave = istft_batch(&self.plan, estimate, self.cfg.crop)?;
        let loss = wsdr_loss_rows(input, target, wave)?.mean();
        let value = loss.item().f64();
        let mut grads = tape.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, var) in &pass.vars {
            if let Some(g) = grads.take(*var) {
                out.insert(name.clone(), g);
            }
        }
        Ok((value, out, pass.batch_stats))
    }

    /// Runs one optimiser step and returns its loss.
    pub fn step(&mut self, diagnostic_dir: Option<&Path>) -> Result<LossRecord> {
        if self.finished() {
            return Err(Error::InvalidArgument("training already finished".into()));
        }
        if self.state.batch_in_epoch >= self.batches_per_epoch() {
            self.state.epoch += 1;
            self.state.batch_in_epoch = 0;
        }
        let epoch = self.state.epoch;
        let order = self.epoch_order(epoch);
        let b = self.state.batch_in_epoch * self.cfg.batch_size;
        let indices = &order[b..(b + self.cfg.batch_size).min(order.len())];
        let (input, target) = self.batch(epoch, indices)?;
        let (loss, grads, stats) = self.loss_and_grads(&input, &target)?;
        let finite = loss.is_finite() && grads.values().all(Tensor::all_finite);
        if !finite {
            let mut detail = format!("non-finite loss or gradient at step {}", self.state.step);
            if let Some(dir) = diagnostic_dir {
                let path = dir.join(format!("diverged_step{}.ckpt", self.state.step));
                save_checkpoint(&self.state, &self.cfg, &self.stft, &path)?;
                detail.push_str(&format!("; state saved to {}", path.display()));
            }
            return Err(Error::Numeric(detail));
        }
        adam_step(
            &mut self.state.model.params.tensors,
            &grads,
            &mut self.state.adam,
            &self.cfg.adam(),
        )?;
        self.state.model.update_running_stats(&stats)?;
        let rec = LossRecord {
            step: self.state.step,
            epoch,
            loss,
        };
        self.state.running_loss = if self.state.step == 0 {
            loss
        } else {
            0.98 * self.state.running_loss + 0.02 * loss
        };
        self.state.curve.push(rec);
        self.state.step += 1;
        self.state.batch_in_epoch += 1;
        Ok(rec)
    }

    /// Trains to completion, writing periodic checkpoints into `out_dir`.
    pub fn run(
        &mut self,
        out_dir: Option<&Path>,
        mut on_step: impl FnMut(&LossRecord),
    ) -> Result<()> {
        while !self.finished() {
            let rec = self.step(out_dir)?;
            on_step(&rec);
            if let Some(dir) = out_dir {
                let every = self.cfg.checkpoint_every as u64;
                if every > 0 && self.state.step.is_multiple_of(every) {
                    self.save(dir.join(format!("step{:06}.ckpt", self.state.step)))?;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.state, &self.cfg, &self.stft, path)
    }
}

fn dtype_of(p: Precision) -> &'static str {
    match p {
        Precision::F32 => "f32",
        Precision::F64 => "f64",
    }
}

/// Trains from a manifest and returns the final state.
pub fn train<S: Real>(
    manifest: &DatasetManifest,
    spec: ArchitectureSpec,
    stft: StftConfig,
    cfg: TrainConfig,
) -> Result<TrainState<S>> {
    cfg.validate()?;
    let examples = load_examples(manifest, cfg.mode, cfg.exec())?;
    let mut t = Trainer::<S>::new(examples, spec, stft, cfg)?;
    t.run(None, |_| {})?;
    Ok(t.into_state())
}

/// Loss curve as CSV `step,epoch,loss`.
pub fn write_loss_csv(curve: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("step,epoch,loss\n");
    for r in curve {
        body.push_str(&format!("{},{},{}\n", r.step, r.epoch, r.loss));
    }
    f.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cxnn::gradcheck::{check_gradients, project, randn};
    use crate::synth::synth_speech;

    fn adam_cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn scalar(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("p".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        for g in [0.3, -5.0, 1e3] {
            let mut p = scalar(1.0);
            let mut st = AdamState::default();
            adam_step(&mut p, &scalar(g), &mut st, &adam_cfg(0.01)).unwrap();
            let delta = p["p"].item_for_test() - 1.0;
            assert!((delta + 0.01 * g.signum()).abs() < 1e-6, "{delta}");
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = scalar(0.7);
        let mut st = AdamState::default();
        for _ in 0..5 {
            adam_step(&mut p, &scalar(0.0), &mut st, &adam_cfg(0.1)).unwrap();
        }
        assert_eq!(p["p"].item_for_test(), 0.7);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = scalar(1.0);
        let mut st = AdamState::default();
        for _ in 0..500 {
            let g = 2.0 * p["p"].item_for_test();
            adam_step(&mut p, &scalar(g), &mut st, &adam_cfg(0.01)).unwrap();
        }
        assert!(p["p"].item_for_test().abs() < 0.01);
    }

    #[test]
    fn adam_rejects_mismatched_gradient() {
        let mut p = scalar(1.0);
        let g = BTreeMap::from([("p".to_string(), Tensor::<f64>::zeros(&[2]))]);
        assert!(adam_step(&mut p, &g, &mut AdamState::default(), &adam_cfg(0.1)).is_err());
    }

    trait Item {
        fn item_for_test(&self) -> f64;
    }

    impl Item for Tensor<f64> {
        fn item_for_test(&self) -> f64 {
            self.data()[0]
        }
    }

    fn small_stft() -> StftConfig {
        StftConfig {
            fft_size: 16,
            hop: 4,
            ..StftConfig::desk()
        }
    }

    #[test]
    fn tracked_transforms_match_and_differentiate() {
        let plan = StftPlan::<f64>::new(small_stft()).unwrap();
        let mut rng = stream_rng(1, &[]);
        let rows = randn(&[2, 37], &mut rng);
        let spec = stft_batch(&plan, &rows).unwrap();
        let tape = Tape::new();
        let back = istft_batch(&plan, tape.complex_constant(spec.clone()), 37).unwrap();
        for (a, b) in back.value().data().iter().zip(rows.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let rep = check_gradients(
            |_, v| {
                Ok(project(
                    istft_batch(&plan, ComplexVar::new(v[0], v[1]), 37)?,
                    3,
                ))
            },
            &[spec.re.clone(), spec.im.clone()],
            1e-6,
        )
        .unwrap();
        assert!(rep.max_relative_error() < 1e-7, "{:?}", rep.relative_errors);
    }

    fn toy_examples(n: usize, identity: bool) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let clean = synth_speech(0.25, 16_000, i as u64).unwrap().into_samples();
                let mut rng = stream_rng(7, &[i as u64]);
                let noisy: Vec<f64> = clean
                    .iter()
                    .map(|c| c + 0.05 * rng.gen_range(-1.0..1.0))
                    .collect();
                Example {
                    pair_id: format!("p{i}"),
                    target: if identity { noisy.clone() } else { clean },
                    input: noisy,
                }
            })
            .collect()
    }

    fn toy_config(precision: Precision) -> TrainConfig {
        TrainConfig {
            crop: 2048,
            epochs: 2,
            seed: 3,
            precision,
            deterministic: true,
            ..TrainConfig::new(PairMode::N2c)
        }
    }

    #[test]
    fn identical_seeds_give_identical_curves() {
        let run = || {
            let mut t = Trainer::<f64>::new(
                toy_examples(4, false),
                ArchitectureSpec::tiny(257),
                StftConfig::desk(),
                toy_config(Precision::F64),
            )
            .unwrap();
            t.run(None, |_| {}).unwrap();
            t.into_state()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.curve.len(), 4);
        assert_eq!(a, b);
        assert!(a.curve.iter().all(|r| (-1.0..=1.0).contains(&r.loss)));
    }

    #[test]
    fn resume_continues_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 3,
            ..toy_config(Precision::F64)
        };
        let make = || {
            Trainer::<f64>::new(
                toy_examples(5, false),
                ArchitectureSpec::tiny(257),
                StftConfig::desk(),
                cfg.clone(),
            )
            .unwrap()
        };
        let mut full = make();
        full.run(None, |_| {}).unwrap();

        let mut first = make();
        for _ in 0..3 {
            first.step(None).unwrap();
        }
        let path = dir.path().join("mid.ckpt");
        first.save(&path).unwrap();
        let (state, cfg2, stft) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(state, *first.state());
        let mut resumed = Trainer::with_state(toy_examples(5, false), stft, cfg2, state).unwrap();
        resumed.run(None, |_| {}).unwrap();
        assert_eq!(resumed.state(), full.state());
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = Trainer::<f32>::new(
            toy_examples(2, false),
            ArchitectureSpec::tiny(257),
            StftConfig::desk(),
            toy_config(Precision::F32),
        )
        .unwrap();
        let path = dir.path().join("s.ckpt");
        t.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn identity_task_drives_loss_down() {
        let cfg = TrainConfig {
            epochs: 200,
            max_steps: Some(150),
            learning_rate: 3e-3,
            ..toy_config(Precision::F32)
        };
        let mut t = Trainer::<f32>::new(
            toy_examples(4, true),
            ArchitectureSpec::tiny(257),
            StftConfig::desk(),
            cfg,
        )
        .unwrap();
        t.run(None, |_| {}).unwrap();
        let tail: Vec<f64> = t
            .state()
            .curve
            .iter()
            .rev()
            .take(10)
            .map(|r| r.loss)
            .collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mean < -0.95, "{mean}");
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(PairMode::Test);
        assert!(c.validate().is_err());
        c.mode = PairMode::N2n;
        c.validate().unwrap();
        assert_eq!((c.batch_size, c.epochs), (2, 4));
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let bad = Trainer::<f64>::new(
            toy_examples(2, false),
            ArchitectureSpec::tiny(257),
            StftConfig::desk(),
            toy_config(Precision::F32),
        );
        assert!(matches!(bad, Err(Error::Config(_))));
    }
}
