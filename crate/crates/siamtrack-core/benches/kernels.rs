//! Benchmarks for the data-parallel compute kernels and one full training
//! step.
//!
//! With the default `parallel` feature this compares the global rayon pool
//! against a single-thread pool on the same build. Compile with
//! `--no-default-features` to measure the dependency-free sequential
//! fallback instead.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use siamtrack_core::backbone::{parse_backbone_spec, REFERENCE_BACKBONE};
use siamtrack_core::kernels::{conv2d, xcorr_depthwise};
use siamtrack_core::model::TrackModel;
use siamtrack_core::rng;
use siamtrack_core::synth::{generate_sequence, sample_training_pair, SequenceConfig};
use siamtrack_core::Tensor;

fn random_tensor(r: &mut rng::Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng::uniform(r, -1.0, 1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

struct Workload {
    conv_input: Tensor,
    conv_weights: Tensor,
    conv_bias: Tensor,
    inst_feat: Tensor,
    ex_feat: Tensor,
    model: TrackModel,
    exemplar: Tensor,
    instance: Tensor,
    targets: siamtrack_core::labels::HeadTargets,
}

fn workload() -> Workload {
    let mut r = rng::seeded(1234);
    let conv_input = random_tensor(&mut r, vec![32, 56, 56]);
    let conv_weights = random_tensor(&mut r, vec![32, 16, 3, 3]);
    let conv_bias = random_tensor(&mut r, vec![32]);
    let inst_feat = random_tensor(&mut r, vec![256, 21, 21]);
    let ex_feat = random_tensor(&mut r, vec![256, 5, 5]);

    let spec = parse_backbone_spec(REFERENCE_BACKBONE).unwrap();
    let model = TrackModel::new(spec, 5).unwrap();
    let geometry = model.geometry().unwrap();
    let seq = generate_sequence(&SequenceConfig {
        frames: 10,
        seed: 9,
        ..SequenceConfig::default()
    })
    .unwrap();
    let (exemplar, instance, targets) = sample_training_pair(&seq, &mut r, &geometry).unwrap();
    Workload {
        conv_input,
        conv_weights,
        conv_bias,
        inst_feat,
        ex_feat,
        model,
        exemplar,
        instance,
        targets,
    }
}

fn run_suite(c: &mut Criterion, label: &str, w: &Workload) {
    c.bench_function(&format!("conv2d_grouped/{label}"), |b| {
        b.iter(|| {
            conv2d(
                black_box(&w.conv_input),
                &w.conv_weights,
                &w.conv_bias,
                1,
                2,
            )
            .unwrap()
        })
    });
    c.bench_function(&format!("xcorr_depthwise/{label}"), |b| {
        b.iter(|| xcorr_depthwise(black_box(&w.inst_feat), &w.ex_feat).unwrap())
    });
    c.bench_function(&format!("instance_forward/{label}"), |b| {
        b.iter(|| w.model.forward_features(black_box(&w.instance)).unwrap())
    });
    c.bench_function(&format!("train_step/{label}"), |b| {
        b.iter(|| {
            let (mut g, loss, _) = w
                .model
                .loss_graph(&w.exemplar, &w.instance, &w.targets, &Default::default())
                .unwrap();
            g.backward(loss).unwrap();
            black_box(g.value(loss).data()[0])
        })
    });
}

fn bench_kernels(c: &mut Criterion) {
    let w = workload();

    #[cfg(feature = "parallel")]
    {
        run_suite(c, "rayon-global", &w);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        pool.install(|| run_suite(c, "rayon-1thread", &w));
    }

    #[cfg(not(feature = "parallel"))]
    run_suite(c, "sequential", &w);
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_kernels
}
criterion_main!(benches);
