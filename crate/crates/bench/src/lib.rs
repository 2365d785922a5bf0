//! Shared fixtures for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedcctr_core::data::ScoredInstance;
use fedcctr_core::model::{ItemFeatures, ModelShape, PairExample};
use fedcctr_core::{ItemRef, Matrix, ModelConfig, ModelParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

/// Catalog sizes roughly matching the smoke corpus.
pub const SHAPE: ModelShape = ModelShape { items_a: 300, items_b: 300, feat_vocab_a: 40, feat_vocab_b: 40, side_vocab: 30 };

/// Default-width model over [`SHAPE`], every item carrying two feature tokens.
pub fn model(cfg: &ModelConfig, seed: u64) -> (ModelParams, ItemFeatures) {
    let params = ModelParams::new(cfg, &SHAPE, &mut rng(seed)).expect("valid fixture config");
    let mut features = ItemFeatures::empty(SHAPE.items_a, SHAPE.items_b);
    for (i, f) in features.a.iter_mut().enumerate() {
        *f = vec![i % 40, (i * 7) % 40];
    }
    for (i, f) in features.b.iter_mut().enumerate() {
        *f = vec![i % 40, (i * 11) % 40];
    }
    (params, features)
}

/// Training pairs whose histories are `len` events per domain.
pub fn batch(n: usize, len: usize, seed: u64) -> Vec<PairExample> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let orig_a: Vec<usize> = (0..len).map(|_| r.random_range(0..SHAPE.items_a)).collect();
            let orig_b: Vec<usize> = (0..len).map(|_| r.random_range(0..SHAPE.items_b)).collect();
            let mut history_m: Vec<ItemRef> = orig_a.iter().map(|&i| ItemRef::a(i)).collect();
            history_m.extend(orig_b.iter().map(|&i| ItemRef::b(i)));
            PairExample {
                history_a: orig_a.clone(),
                orig_a,
                target_a: r.random_range(0..SHAPE.items_a),
                label_a: f64::from(r.random_range(0..2u8)),
                history_b: orig_b.clone(),
                orig_b,
                target_b: r.random_range(0..SHAPE.items_b),
                label_b: f64::from(r.random_range(0..2u8)),
                history_m,
                side: vec![r.random_range(0..SHAPE.side_vocab), r.random_range(0..SHAPE.side_vocab)],
            }
        })
        .collect()
}

/// Evaluation instances with 100 candidates each.
pub fn scored_instances(n: usize, seed: u64) -> Vec<ScoredInstance> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let candidates: Vec<usize> = (0..100).collect();
            ScoredInstance { positive: r.random_range(0..100), candidates, scores: (0..100).map(|_| r.random()).collect() }
        })
        .collect()
}
