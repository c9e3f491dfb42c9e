use criterion::{black_box, criterion_group, criterion_main, Criterion};

use mimkit_core::autodiff::{Tape, Tensor};
use mimkit_core::dtw::dtw_align;
use mimkit_core::eval::{auc_mann_whitney, roc_auc, Label, LabeledScore, Orientation};
use mimkit_core::net::SegmentNet;
use mimkit_core::pose::PoseSequence;
use mimkit_core::score::{cami_score, ScoreOptions};
use mimkit_core::synth::{sample_imitation, sample_tuple, Corpus, CorpusConfig};
use mimkit_core::train::{train, TrainConfig, TrainDataset};

fn sine_sequence(t: usize, j: usize, phase: f64) -> PoseSequence {
    let coords = (0..t * j * 2)
        .map(|i| ((i as f64) * 0.17 + phase).sin() * 0.4)
        .collect();
    PoseSequence::from_flat("bench", 30.0, t, j, coords).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    // One motion-encoder-sized convolution, forward and backward.
    let mut group = c.benchmark_group("conv1d");
    group.bench_function("forward_backward_64x80x2048", |b| {
        b.iter(|| {
            let mut tape = Tape::<f32>::new(true);
            let x = tape.param(Tensor::from_vec(&[10, 128, 32], vec![0.3; 10 * 128 * 32]).unwrap());
            let w = tape.param(Tensor::from_vec(&[64, 10, 8], vec![0.01; 64 * 10 * 8]).unwrap());
            let bias = tape.param(Tensor::zeros(&[64]));
            let y = tape.conv1d_reflect(x, w, bias, 8, 2).unwrap();
            let loss = tape.mean_all(y);
            black_box(tape.backward(loss).unwrap());
        })
    });
    group.finish();
}

fn bench_encode(c: &mut Criterion) {
    let net = SegmentNet::<f32>::init("torso", 5, 1);
    let seq = sine_sequence(64, 5, 0.0);
    c.bench_function("encode_torso_t64", |b| {
        b.iter(|| black_box(net.encode(black_box(&seq)).unwrap()))
    });
}

fn bench_dtw(c: &mut Criterion) {
    let a: Vec<Vec<f64>> = (0..64).map(|i| vec![(i as f64 * 0.2).sin(); 128]).collect();
    let b2: Vec<Vec<f64>> = (0..48).map(|i| vec![(i as f64 * 0.25).cos(); 128]).collect();
    c.bench_function("dtw_align_64x48x128d", |b| {
        b.iter(|| black_box(dtw_align(black_box(&a), black_box(&b2)).unwrap()))
    });
}

fn bench_auc(c: &mut Criterion) {
    let scores: Vec<LabeledScore> = (0..2000)
        .map(|i| {
            LabeledScore::new(
                format!("{i}"),
                ((i * 37) % 101) as f64 / 101.0,
                if i % 2 == 0 { Label::Positive } else { Label::Negative },
            )
        })
        .collect();
    c.bench_function("roc_auc_2000", |b| {
        b.iter(|| black_box(roc_auc(black_box(&scores), Orientation::LowScorePositive).unwrap()))
    });
    c.bench_function("auc_mann_whitney_2000", |b| {
        b.iter(|| {
            black_box(auc_mann_whitney(black_box(&scores), Orientation::LowScorePositive).unwrap())
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let corpus = Corpus::build(&CorpusConfig::default()).unwrap();
    let dataset = TrainDataset {
        tuples: (0..8).map(|i| sample_tuple(&corpus, i).unwrap()).collect(),
        pairs: (0..8)
            .map(|i| sample_imitation(&corpus, 0.5, i).unwrap())
            .collect(),
        fingerprint: "bench".into(),
    };
    let config = TrainConfig {
        epochs: 1,
        batch_size: 16,
        checkpoint_interval: 0,
        ..TrainConfig::default()
    };
    c.bench_function("train_step_batch16", |b| {
        b.iter(|| black_box(train(black_box(&config), black_box(&dataset), None).unwrap()))
    });
}

fn bench_score_pair(c: &mut Criterion) {
    let corpus = Corpus::build(&CorpusConfig::default()).unwrap();
    let dataset = TrainDataset {
        tuples: (0..4).map(|i| sample_tuple(&corpus, i).unwrap()).collect(),
        pairs: (0..4)
            .map(|i| sample_imitation(&corpus, 0.5, i).unwrap())
            .collect(),
        fingerprint: "bench".into(),
    };
    let config = TrainConfig {
        epochs: 1,
        batch_size: 8,
        checkpoint_interval: 0,
        ..TrainConfig::default()
    };
    let bundle = train(&config, &dataset, None).unwrap().bundle;
    let pair = sample_imitation(&corpus, 0.3, 99).unwrap();
    let opts = ScoreOptions::default();
    c.bench_function("cami_score_pair", |b| {
        b.iter(|| {
            black_box(cami_score(&pair.actor, &pair.imitation, &bundle, None, &opts).unwrap())
        })
    });
}

criterion_group!(
    benches,
    bench_conv,
    bench_encode,
    bench_dtw,
    bench_auc,
    bench_train_step,
    bench_score_pair
);
criterion_main!(benches);
