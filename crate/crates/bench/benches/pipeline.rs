use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;

use postcn_core::heatmap::DEFAULT_SIGMA;
use postcn_core::model::Bound;
use postcn_core::nn::Graph;
use postcn_core::rng::{purpose, substream};
use postcn_core::{
    generate_corpus, render_sequence, sequence_descriptor, CorpusSpec, ModelConfig, PoseModel,
    TrainConfig, Trainer,
};

fn corpus(sequences: usize, frames: usize) -> Vec<postcn_core::SequenceRecord> {
    generate_corpus(&CorpusSpec {
        sequences,
        frames,
        ..CorpusSpec::default()
    })
    .expect("corpus")
}

fn heatmaps(c: &mut Criterion) {
    let records = corpus(1, 128);
    let poses = records[0].poses2d();
    c.bench_function("render 128 frames at 64x64", |b| {
        b.iter(|| render_sequence(black_box(&poses), DEFAULT_SIGMA, (64, 64)).unwrap())
    });
}

fn kcs(c: &mut Criterion) {
    let records = corpus(1, 128);
    let poses = records[0].poses3d();
    c.bench_function("KCS descriptor of 128 frames", |b| {
        b.iter(|| sequence_descriptor(black_box(&poses), &records[0].topology, 1).unwrap())
    });
}

fn generator(c: &mut Criterion) {
    let model = PoseModel::new(ModelConfig::default()).unwrap();
    let mut rng = substream(0, purpose::INIT, 0, 0);
    let store = model.init_params(&mut rng).unwrap();
    let window: Vec<Vec<f64>> = (0..model.config.tcn.window)
        .map(|_| {
            (0..model.config.embedding.dim)
                .map(|_| rng.random_range(0.0..1.0))
                .collect()
        })
        .collect();
    c.bench_function("temporal network, one window", |b| {
        b.iter(|| model.forward_pose(&store, black_box(&window)).unwrap())
    });

    let records = corpus(1, model.config.tcn.window + 15);
    let heat = render_sequence(&records[0].poses2d(), DEFAULT_SIGMA, (64, 64)).unwrap();
    let mut group = c.benchmark_group("generator");
    group.sample_size(10);
    group.bench_function("forward and backward, 16 outputs", |b| {
        b.iter_batched(
            || model.into_input(heat.clone()).unwrap(),
            |input| {
                let mut g = Graph::new();
                let p = Bound::from_store(&mut g, &store).unwrap();
                let x = g.constant(input);
                let y = model.forward(&mut g, &p, x).unwrap();
                let s = g.sum(y);
                g.backward(s).unwrap()
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn training(c: &mut Criterion) {
    let records = corpus(2, 96);
    let mut config = TrainConfig::default();
    config.model.embedding.dim = 64;
    config.model.tcn.channels = 32;
    config.model.tcn.window = 32;
    config.epochs = 1;
    let trainer = Trainer::new(config).unwrap();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("epoch of 2 sequences, small model", |b| {
        b.iter_batched(
            || trainer.init_state(&records).unwrap(),
            |mut state| trainer.train_epoch(&mut state, &records).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, heatmaps, kcs, generator, training);
criterion_main!(benches);
