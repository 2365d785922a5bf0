use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use fedcctr_bench::{batch, model, random_matrix, rng, scored_instances};
use fedcctr_core::data::evaluate_ranking;
use fedcctr_core::model::model_backward;
use fedcctr_core::nn::{Layer, TransformerEncoder};
use fedcctr_core::privacy::{add_noise, clip_gradient, rdp_cost};
use fedcctr_core::ModelConfig;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [32, 64, 128] {
        let (a, b) = (random_matrix(n, n, 1), random_matrix(n, n, 2));
        g.throughput(Throughput::Elements((n * n * n) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| bench.iter(|| a.matmul(&b).unwrap()));
    }
    g.finish();
}

fn encoder(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let dim = cfg.d_v();
    let enc = TransformerEncoder::new(dim, cfg.heads, cfg.ffn_width(), &mut rng(3)).unwrap();
    let x = random_matrix(cfg.max_len, dim, 4);
    c.bench_function("encoder/forward+backward", |bench| {
        bench.iter(|| {
            let (y, cache) = enc.forward(&x, None).unwrap();
            enc.backward(&cache, &y).unwrap()
        })
    });
}

fn full_model(c: &mut Criterion) {
    let cfg = ModelConfig { dropout: 0.0, ..ModelConfig::default() };
    let (params, features) = model(&cfg, 5);
    let pairs = batch(32, 10, 6);
    let mut g = c.benchmark_group("model_backward");
    g.sample_size(10);
    g.bench_function("batch32_len10", |bench| {
        bench.iter(|| model_backward(&params, &pairs, &features, &cfg, &mut rng(7)).unwrap())
    });
    g.finish();
}

fn privacy(c: &mut Criterion) {
    let grad: Vec<f64> = random_matrix(1, 200_000, 8).into_data();
    let mut g = c.benchmark_group("privacy");
    g.throughput(Throughput::Elements(grad.len() as u64));
    g.bench_function("clip+noise", |bench| {
        let mut r = rng(9);
        bench.iter(|| add_noise(&clip_gradient(&grad, 1.0), 0.8, &mut r))
    });
    g.finish();
    c.bench_function("rdp_cost", |bench| bench.iter(|| rdp_cost(black_box(2.0), 1.0, black_box(0.9), 0.01)));
}

fn ranking(c: &mut Criterion) {
    let instances = scored_instances(2000, 10);
    c.bench_function("evaluate_ranking/2000x100", |bench| bench.iter(|| evaluate_ranking(&instances, &[2, 5, 10]).unwrap()));
}

criterion_group!(benches, matmul, encoder, full_model, privacy, ranking);
criterion_main!(benches);
