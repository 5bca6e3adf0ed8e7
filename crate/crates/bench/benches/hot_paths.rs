use std::hint::black_box;

use affordance::model::{Classifier, ClassifierExample, Vae};
use affordance::nn::{Activation, DenseNet};
use affordance::rng;
use affordance::synthetic::random_pose;
use affordance::{k_medoids, pairwise_distances, ConditionInput, CropFeatures};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn crops(seed: u64, dim: usize) -> CropFeatures {
    let mut r = rng::seeded(seed);
    CropFeatures {
        full: rng::standard_normal(&mut r, dim),
        half: rng::standard_normal(&mut r, dim),
        whole: rng::standard_normal(&mut r, dim),
    }
}

fn clustering(c: &mut Criterion) {
    let mut r = rng::seeded(1);
    let poses: Vec<_> = (0..300).map(|_| random_pose(&mut r)).collect();
    c.bench_function("pairwise_distances/300", |b| b.iter(|| pairwise_distances(black_box(&poses)).unwrap()));
    let d = pairwise_distances(&poses).unwrap();
    c.bench_function("k_medoids/300x8", |b| b.iter(|| k_medoids(black_box(&d), 8, 7).unwrap()));
}

fn dense(c: &mut Criterion) {
    let mut r = rng::seeded(2);
    let net = DenseNet::new(&[64, 512, 30], Activation::Relu, Activation::Identity, &mut r);
    let x = rng::standard_normal(&mut r, 64);
    let upstream = rng::standard_normal(&mut r, 30);
    c.bench_function("dense/forward_64_512_30", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
    let (_, trace) = net.forward(&x).unwrap();
    c.bench_function("dense/backward_64_512_30", |b| {
        b.iter(|| net.backward(black_box(&trace), black_box(&upstream)).unwrap())
    });
}

fn models(c: &mut Criterion) {
    let (dim, classes, hidden, latent) = (64, 30, 128, 30);
    let clf = Classifier::new(dim, classes, hidden, 3);
    let ex = ClassifierExample { crops: crops(4, dim), class: 5 };
    c.bench_function("classifier/loss_and_grads", |b| b.iter(|| clf.loss_and_grads(black_box(&ex)).unwrap()));

    let vae = Vae::new(dim, classes, hidden, latent, 5);
    let cond = ConditionInput::one_hot(crops(6, dim), 5, classes).unwrap();
    let mut r = rng::seeded(7);
    let y = rng::standard_normal(&mut r, 36);
    c.bench_function("vae/loss_and_grads", |b| {
        b.iter_batched(
            || rng::standard_normal(&mut r, latent),
            |alpha| vae.loss_and_grads(black_box(&cond), &y, &alpha, 1.0).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, clustering, dense, models);
criterion_main!(benches);
