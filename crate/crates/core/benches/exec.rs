use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use n2n_core::audio::WavEncoding;
use n2n_core::cxnn::gradcheck::randn;
use n2n_core::cxnn::{complex_conv2d, ComplexTensor, ComplexVar, Conv2dGeometry, Tape, Tensor};
use n2n_core::dcunet::{ArchitectureSpec, Dcunet};
use n2n_core::mixgen::{generate_dataset, InputCategory, MixConfig, NoiseSource, PairMode};
use n2n_core::objective::n2n_equivalence_experiment;
use n2n_core::spectral::{StftConfig, StftPlan};
use n2n_core::synth::{synth_speech, write_corpus};
use n2n_core::trainer::stft_batch;
use n2n_core::Exec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn conv(c: &mut Criterion) {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let x = ComplexTensor::new(
        randn(&[4, 8, 64, 32], &mut r),
        randn(&[4, 8, 64, 32], &mut r),
    )
    .unwrap();
    let w =
        ComplexTensor::new(randn(&[16, 8, 5, 3], &mut r), randn(&[16, 8, 5, 3], &mut r)).unwrap();
    let g = Conv2dGeometry::new((5, 3), (2, 1), (2, 1));
    let mut group = c.benchmark_group("complex_conv2d_fwd_bwd");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                let tape = Tape::with_exec(exec);
                let wv = ComplexVar::new(tape.param(w.re.clone()), tape.param(w.im.clone()));
                let y = complex_conv2d(tape.complex_constant(x.clone()), wv, None, g).unwrap();
                let loss = y.abs_sq().sum();
                tape.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

fn network(c: &mut Criterion) {
    let cfg = StftConfig::desk();
    let clips: Vec<f32> = (0..2)
        .flat_map(|i| synth_speech(1.0, 16_000, i).unwrap().into_samples())
        .map(|v| v as f32)
        .collect();
    let plan = StftPlan::<f32>::new(cfg).unwrap();
    let spec = stft_batch(&plan, &Tensor::new(vec![2, 16_000], clips).unwrap()).unwrap();
    let model = Dcunet::<f32>::init(ArchitectureSpec::desk(), 3).unwrap();
    let mut group = c.benchmark_group("desk_forward");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                let tape = Tape::with_exec(exec);
                let input = tape.complex_constant(spec.clone());
                model.forward(&tape, input, false).unwrap().logits.value()
            })
        });
    }
    group.finish();
}

fn equivalence(c: &mut Criterion) {
    let mut group = c.benchmark_group("equivalence_experiment");
    for trials in [10_000usize, 100_000] {
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, trials), &trials, |b, &n| {
                b.iter(|| n2n_equivalence_experiment(1.0, n, 5, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn mixing(c: &mut Criterion) {
    let tmp = tempfile::tempdir().unwrap();
    write_corpus(tmp.path().join("clean"), 8, 1.0, 16_000, 0).unwrap();
    let cfg = MixConfig {
        mode: PairMode::N2n,
        input_category: InputCategory::Random,
        count: 32,
        seed: 1,
        sample_rate: 16_000,
        encoding: WavEncoding::Float32,
    };
    let mut group = c.benchmark_group("dataset_mixing");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                generate_dataset(
                    tmp.path().join("clean"),
                    &NoiseSource::White,
                    &cfg,
                    tmp.path().join(name),
                    exec,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv, network, equivalence, mixing);
criterion_main!(benches);
