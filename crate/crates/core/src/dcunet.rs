//! Complex encoder-decoder masking network with U-Net skip connections.
//!
//! Each encoder stage is complex convolution, complex batch norm and leaky
//! CReLU. The decoder mirrors the encoder: stage `j` undoes encoder stage
//! `L-1-j` with a transposed convolution of the same kernel and stride, takes
//! the previous decoder output concatenated channel-wise with that encoder
//! stage's output, and restores the spatial extent the encoder stage received.
//! The last decoder stage emits one complex channel with no normalization or
//! activation; those are the mask logits.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::checkpoint;
use crate::cxnn::{
    apply_mask, complex_batch_norm, complex_conv2d, complex_conv_transpose2d, estimate_mask,
    init_complex_weights, BatchNormVars, ChannelStats, ComplexBatchNorm, ComplexTensor, ComplexVar,
    Conv2dGeometry, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::spectral::{ComplexSpectrogram, StftConfig, StftPlan};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderLayerSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub out_channels: usize,
}

impl EncoderLayerSpec {
    pub fn geometry(&self) -> Conv2dGeometry {
        Conv2dGeometry::same(self.kernel, self.stride)
    }
}

/// Encoder layer table; the decoder is derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    #[serde(default)]
    pub name: String,
    pub encoder: Vec<EncoderLayerSpec>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    /// Frequency rows of the input spectrogram.
    pub freq_bins: usize,
}

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

fn layer(kernel: (usize, usize), stride: (usize, usize), out_channels: usize) -> EncoderLayerSpec {
    EncoderLayerSpec {
        kernel,
        stride,
        out_channels,
    }
}

impl ArchitectureSpec {
    /// 10-layer network (5 encoder + 5 decoder stages) for a 512-point FFT.
    pub fn desk() -> Self {
        Self {
            name: "desk-10".into(),
            encoder: vec![
                layer((7, 5), (2, 2), 32),
                layer((7, 5), (2, 1), 32),
                layer((5, 3), (2, 2), 64),
                layer((5, 3), (2, 1), 64),
                layer((5, 3), (2, 2), 64),
            ],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            freq_bins: 257,
        }
    }

    /// 20-layer network for a 3072-point FFT.
    pub fn dcunet20() -> Self {
        Self {
            name: "dcunet-20".into(),
            encoder: vec![
                layer((7, 1), (1, 1), 45),
                layer((1, 7), (1, 1), 45),
                layer((7, 5), (2, 2), 90),
                layer((7, 5), (2, 1), 90),
                layer((5, 3), (2, 2), 90),
                layer((5, 3), (2, 1), 90),
                layer((5, 3), (2, 2), 90),
                layer((5, 3), (2, 1), 90),
                layer((5, 3), (2, 2), 90),
                layer((5, 3), (2, 1), 128),
            ],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            freq_bins: 1537,
        }
    }

    /// Small network for tests and quick experiments.
    pub fn tiny(freq_bins: usize) -> Self {
        Self {
            name: "tiny-4".into(),
            encoder: vec![layer((3, 3), (2, 2), 4), layer((3, 3), (2, 1), 8)],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            freq_bins,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" | "desk-10" => Some(Self::desk()),
            "dcunet20" | "dcunet-20" => Some(Self::dcunet20()),
            "tiny" | "tiny-4" => Some(Self::tiny(257)),
            _ => None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// STFT whose bin count matches the network: the 512-point setup for 257
    /// bins, the 3072-point setup for 1537, otherwise `2 (F - 1)` points with
    /// a quarter-frame hop.
    pub fn stft_config(&self, sample_rate: u32) -> Result<StftConfig> {
        let cfg = match self.freq_bins {
            257 => StftConfig::desk(),
            1537 => StftConfig::large(sample_rate)?,
            f if f >= 3 => {
                let fft = 2 * (f - 1);
                StftConfig {
                    fft_size: fft,
                    hop: (fft / 4).max(1),
                    ..StftConfig::desk()
                }
            }
            f => return Err(Error::Config(format!("no STFT has {f} bins"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    /// Input channels of encoder stage `i`.
    fn encoder_in(&self, i: usize) -> usize {
        if i == 0 {
            1
        } else {
            self.encoder[i - 1].out_channels
        }
    }

    /// `(in, out)` channels of decoder stage `j`.
    pub fn decoder_channels(&self, j: usize) -> (usize, usize) {
        let l = self.depth();
        let mirror = l - 1 - j;
        let skip = self.encoder[mirror].out_channels;
        let input = if j == 0 { skip } else { 2 * skip };
        (input, self.encoder_in(mirror))
    }

    /// Smallest frame count whose time axis survives every encoder stage.
    pub fn min_frames(&self) -> usize {
        self.encoder
            .iter()
            .map(|l| l.stride.1)
            .product::<usize>()
            .max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() {
            return Err(Error::Config(
                "architecture needs at least one encoder stage".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!(
                "leaky slope must be in [0, 1), got {}",
                self.leaky_slope
            )));
        }
        if self.freq_bins == 0 {
            return Err(Error::Config("freq_bins must be positive".into()));
        }
        for (i, l) in self.encoder.iter().enumerate() {
            if l.out_channels == 0 {
                return Err(Error::Config(format!(
                    "encoder stage {i} has zero channels"
                )));
            }
            l.geometry().validate()?;
        }
        self.check_extent(self.freq_bins, self.min_frames())
    }

    /// Verifies that an `[F x T]` input goes down the encoder and back up to
    /// exactly `[F x T]`.
    pub fn check_extent(&self, freq: usize, frames: usize) -> Result<()> {
        let mut dims = vec![(freq, frames)];
        for (i, l) in self.encoder.iter().enumerate() {
            let (h, w) = *dims.last().expect("non-empty");
            let next = l
                .geometry()
                .conv_output(h, w)
                .map_err(|e| Error::Config(format!("encoder stage {i} on {h}x{w}: {e}")))?;
            dims.push(next);
        }
        for (i, l) in self.encoder.iter().enumerate().rev() {
            let g = l.geometry();
            let op = g.output_padding_for(dims[i + 1], dims[i]).map_err(|e| {
                Error::Config(format!(
                    "decoder for stage {i} cannot restore {:?}: {e}",
                    dims[i]
                ))
            })?;
            let back = g.transpose_output(dims[i + 1].0, dims[i + 1].1, op)?;
            if back != dims[i] {
                return Err(Error::Config(format!(
                    "stage {i} restores {back:?} instead of {:?}",
                    dims[i]
                )));
            }
        }
        Ok(())
    }
}

/// Named parameter and buffer tensors.
///
/// Names are `enc{i}.conv.*`, `enc{i}.bn.*`, `dec{j}.conv.*` and `dec{j}.bn.*`;
/// entries containing `.running_` are batch-norm buffers, not trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<S> {
    pub tensors: BTreeMap<String, Tensor<S>>,
}

pub fn is_trainable(name: &str) -> bool {
    !name.contains(".running_")
}

impl<S: Real> ModelParameters<S> {
    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys().filter(|n| is_trainable(n))
    }

    pub fn num_trainable(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| is_trainable(n))
            .map(|(_, t)| t.numel())
            .sum()
    }

    fn insert_conv(&mut self, prefix: &str, w: ComplexTensor<S>, bias_len: usize) {
        self.tensors
            .insert(format!("{prefix}.conv.weight_re"), w.re);
        self.tensors
            .insert(format!("{prefix}.conv.weight_im"), w.im);
        self.tensors
            .insert(format!("{prefix}.conv.bias_re"), Tensor::zeros(&[bias_len]));
        self.tensors
            .insert(format!("{prefix}.conv.bias_im"), Tensor::zeros(&[bias_len]));
    }

    fn insert_bn(&mut self, prefix: &str, bn: ComplexBatchNorm<S>) {
        let p = |s: &str| format!("{prefix}.bn.{s}");
        self.tensors.insert(p("gamma_rr"), bn.gamma_rr);
        self.tensors.insert(p("gamma_ri"), bn.gamma_ri);
        self.tensors.insert(p("gamma_ii"), bn.gamma_ii);
        self.tensors.insert(p("beta_re"), bn.beta_re);
        self.tensors.insert(p("beta_im"), bn.beta_im);
        self.set_running(prefix, &bn.running);
    }

    fn set_running(&mut self, prefix: &str, st: &ChannelStats<S>) {
        let p = |s: &str| format!("{prefix}.bn.{s}");
        self.tensors
            .insert(p("running_mean_re"), st.mean_re.clone());
        self.tensors
            .insert(p("running_mean_im"), st.mean_im.clone());
        self.tensors.insert(p("running_vrr"), st.vrr.clone());
        self.tensors.insert(p("running_vri"), st.vri.clone());
        self.tensors.insert(p("running_vii"), st.vii.clone());
    }

    fn batch_norm(&self, prefix: &str) -> Result<ComplexBatchNorm<S>> {
        let g = |s: &str| self.get(&format!("{prefix}.bn.{s}")).cloned();
        Ok(ComplexBatchNorm {
            gamma_rr: g("gamma_rr")?,
            gamma_ri: g("gamma_ri")?,
            gamma_ii: g("gamma_ii")?,
            beta_re: g("beta_re")?,
            beta_im: g("beta_im")?,
            running: ChannelStats {
                mean_re: g("running_mean_re")?,
                mean_im: g("running_mean_im")?,
                vrr: g("running_vrr")?,
                vri: g("running_vri")?,
                vii: g("running_vii")?,
            },
            epsilon: crate::cxnn::batchnorm::BN_EPSILON,
            momentum: crate::cxnn::batchnorm::BN_MOMENTUM,
        })
    }

    pub fn cast<T: Real>(&self) -> ModelParameters<T> {
        ModelParameters {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// A network: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dcunet<S> {
    pub spec: ArchitectureSpec,
    pub params: ModelParameters<S>,
}

/// Output of a forward pass.
pub struct ForwardPass<'t, S: Real> {
    pub logits: ComplexVar<'t, S>,
    /// Trainable leaves by parameter name.
    pub vars: BTreeMap<String, Var<'t, S>>,
    /// Batch statistics per batch-norm prefix (training mode only).
    pub batch_stats: Vec<(String, ChannelStats<S>)>,
}

impl<S: Real> Dcunet<S> {
    /// Builds a network with freshly initialised parameters.
    pub fn init(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParameters {
            tensors: BTreeMap::new(),
        };
        let l = spec.depth();
        for (i, enc) in spec.encoder.iter().enumerate() {
            let prefix = format!("enc{i}");
            let shape = [
                enc.out_channels,
                spec.encoder_in(i),
                enc.kernel.0,
                enc.kernel.1,
            ];
            params.insert_conv(
                &prefix,
                init_complex_weights(&shape, &mut rng),
                enc.out_channels,
            );
            params.insert_bn(&prefix, ComplexBatchNorm::new(enc.out_channels));
        }
        for j in 0..l {
            let prefix = format!("dec{j}");
            let mirror = &spec.encoder[l - 1 - j];
            let (cin, cout) = spec.decoder_channels(j);
            let shape = [cin, cout, mirror.kernel.0, mirror.kernel.1];
            params.insert_conv(&prefix, init_complex_weights(&shape, &mut rng), cout);
            if j + 1 < l {
                params.insert_bn(&prefix, ComplexBatchNorm::new(cout));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: ArchitectureSpec, params: ModelParameters<S>) -> Result<Self> {
        spec.validate()?;
        let reference = Dcunet::<S>::init(spec.clone(), 0)?;
        for (name, t) in &reference.params.tensors {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, architecture needs {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    /// Mask logits for `x: [N, 1, F, T]`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<S>,
        x: ComplexVar<'t, S>,
        training: bool,
    ) -> Result<ForwardPass<'t, S>> {
        let shape = x.shape();
        let expected_f = self.spec.freq_bins;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != expected_f {
            return Err(Error::Shape(format!(
                "network expects [N, 1, {expected_f}, T], got {shape:?}"
            )));
        }
        if shape[3] < self.spec.min_frames() {
            return Err(Error::Shape(format!(
                "need at least {} frames, got {}",
                self.spec.min_frames(),
                shape[3]
            )));
        }
        let mut vars = BTreeMap::new();
        let mut leaf = |name: String| -> Result<Var<'t, S>> {
            let t = self.params.get(&name)?.clone();
            let v = tape.leaf(t, training);
            vars.insert(name, v);
            Ok(v)
        };
        let mut conv_vars = |prefix: &str| -> Result<(ComplexVar<'t, S>, ComplexVar<'t, S>)> {
            let w = ComplexVar::new(
                leaf(format!("{prefix}.conv.weight_re"))?,
                leaf(format!("{prefix}.conv.weight_im"))?,
            );
            let b = ComplexVar::new(
                leaf(format!("{prefix}.conv.bias_re"))?,
                leaf(format!("{prefix}.conv.bias_im"))?,
            );
            Ok((w, b))
        };
        let mut conv_params = Vec::new();
        let l = self.spec.depth();
        for i in 0..l {
            conv_params.push(conv_vars(&format!("enc{i}"))?);
        }
        for j in 0..l {
            conv_params.push(conv_vars(&format!("dec{j}"))?);
        }
        let mut bn_layers = BTreeMap::new();
        for prefix in (0..l)
            .map(|i| format!("enc{i}"))
            .chain((0..l - 1).map(|j| format!("dec{j}")))
        {
            let bn = self.params.batch_norm(&prefix)?;
            let bv = BatchNormVars::register(tape, &bn, training);
            for (n, v) in [
                ("gamma_rr", bv.gamma_rr),
                ("gamma_ri", bv.gamma_ri),
                ("gamma_ii", bv.gamma_ii),
                ("beta_re", bv.beta_re),
                ("beta_im", bv.beta_im),
            ] {
                vars.insert(format!("{prefix}.bn.{n}"), v);
            }
            bn_layers.insert(prefix, (bn, bv));
        }

        let slope = self.spec.leaky_slope;
        let mut batch_stats = Vec::new();
        let mut norm_act = |h: ComplexVar<'t, S>, prefix: &str| -> Result<ComplexVar<'t, S>> {
            let (bn, bv) = &bn_layers[prefix];
            let (y, stats) = complex_batch_norm(h, bv, bn, training)?;
            if let Some(s) = stats {
                batch_stats.push((prefix.to_string(), s));
            }
            Ok(y.lecrelu(slope))
        };

        let mut extents = Vec::with_capacity(l);
        let mut skips = Vec::with_capacity(l);
        let mut h = x;
        for (i, enc) in self.spec.encoder.iter().enumerate() {
            let s = h.shape();
            extents.push((s[2], s[3]));
            let (w, b) = conv_params[i];
            h = complex_conv2d(h, w, Some(b), enc.geometry())?;
            h = norm_act(h, &format!("enc{i}"))?;
            skips.push(h);
        }
        for j in 0..l {
            let mirror = l - 1 - j;
            let input = if j == 0 {
                h
            } else {
                ComplexVar::concat_channels(&[h, skips[mirror]])
            };
            let s = input.shape();
            let geom = self.spec.encoder[mirror].geometry();
            let op = geom.output_padding_for((s[2], s[3]), extents[mirror])?;
            let (w, b) = conv_params[l + j];
            h = complex_conv_transpose2d(input, w, Some(b), geom, op)?;
            if j + 1 < l {
                h = norm_act(h, &format!("dec{j}"))?;
            }
        }
        Ok(ForwardPass {
            logits: h,
            vars,
            batch_stats,
        })
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running_stats(
        &mut self,
        batch_stats: &[(String, ChannelStats<S>)],
    ) -> Result<()> {
        for (prefix, stats) in batch_stats {
            let mut bn = self.params.batch_norm(prefix)?;
            bn.running.blend(stats, bn.momentum);
            self.params.set_running(prefix, &bn.running);
        }
        Ok(())
    }

    /// Inference-mode mask logits for a batch of spectrograms `[N, 1, F, T]`.
    pub fn logits(&self, x: &ComplexTensor<S>) -> Result<ComplexTensor<S>> {
        let tape = Tape::new();
        let pass = self.forward(&tape, tape.complex_constant(x.clone()), false)?;
        Ok(pass.logits.value())
    }

    /// STFT, mask estimation, masking and inverse STFT of one waveform.
    pub fn denoise(&self, w: &Waveform, stft_cfg: &StftConfig) -> Result<Waveform> {
        if stft_cfg.bins() != self.spec.freq_bins {
            return Err(Error::Config(format!(
                "model expects {} frequency bins, STFT gives {}",
                self.spec.freq_bins,
                stft_cfg.bins()
            )));
        }
        if w.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot denoise an empty waveform".into(),
            ));
        }
        let plan = StftPlan::<S>::new(*stft_cfg)?;
        let x: Vec<S> = w.samples().iter().map(|&v| S::lit(v)).collect();
        let frames = stft_cfg.num_frames(x.len());
        let bins = stft_cfg.bins();
        let mut re = vec![S::zero(); bins * frames];
        let mut im = vec![S::zero(); bins * frames];
        plan.forward(&x, &mut re, &mut im);
        let shape = vec![1, 1, bins, frames];
        let spec = ComplexTensor::new(Tensor::new(shape.clone(), re)?, Tensor::new(shape, im)?)?;
        let logits = self.logits(&spec)?;
        let masked = apply_mask(&estimate_mask(&logits), &spec)?;
        let mut out = vec![S::zero(); x.len()];
        plan.inverse(
            masked.re.data(),
            masked.im.data(),
            frames,
            x.len(),
            &mut out,
        );
        Waveform::new(out.iter().map(|v| v.f64()).collect(), w.sample_rate())
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "model",
            "architecture": self.spec,
            "extra": extra,
        });
        checkpoint::save(path, &meta, &self.params.tensors)
    }
}

/// Loads a network (and its metadata) from a model or training checkpoint.
pub fn load_model<S: Real>(path: impl AsRef<Path>) -> Result<(Dcunet<S>, serde_json::Value)> {
    let (meta, tensors) = checkpoint::load::<S>(path)?;
    let spec: ArchitectureSpec =
        serde_json::from_value(meta.get("architecture").cloned().ok_or_else(|| {
            Error::Format {
                what: "checkpoint",
                detail: "metadata has no architecture".into(),
            }
        })?)?;
    let tensors = tensors
        .into_iter()
        .filter(|(k, _)| k.starts_with("enc") || k.starts_with("dec"))
        .collect();
    let model = Dcunet::from_parts(spec, ModelParameters { tensors })?;
    Ok((model, meta))
}

/// Applies the mask to a value-level spectrogram, returning the estimate.
pub fn mask_spectrogram(
    logits: &ComplexTensor<f64>,
    x: &ComplexSpectrogram,
) -> Result<ComplexSpectrogram> {
    let shape = vec![x.bins(), x.frames()];
    let spec = ComplexTensor::new(
        Tensor::new(shape.clone(), x.real.clone())?,
        Tensor::new(shape.clone(), x.imag.clone())?,
    )?;
    let logits = ComplexTensor::new(
        logits.re.clone().reshaped(&shape)?,
        logits.im.clone().reshaped(&shape)?,
    )?;
    let y = apply_mask(&estimate_mask(&logits), &spec)?;
    ComplexSpectrogram::new(
        y.re.into_data(),
        y.im.into_data(),
        x.frames(),
        *x.config(),
        x.sample_rate(),
        x.original_length(),
    )
}
