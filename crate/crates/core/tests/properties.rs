use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fedcctr_core::data::{build_mixed_sequence, preprocess, FilterConfig, RankingMetrics, RawInteraction};
use fedcctr_core::fed::{aggregate_and_update, GlobalModel, OptimizerConfig};
use fedcctr_core::nn::{cosine_sim, softmax_rows, FeedForward, Layer, MultiHeadAttention};
use fedcctr_core::privacy::{clip_gradient, rdp_cost, NoisyGradient, PrivacyConfig, PrivacyState, StepOutcome};
use fedcctr_core::{Domain, ItemRef, Matrix, ModelConfig, ModelParams};
use fedcctr_core::data::{Event, InteractionSequence};
use fedcctr_core::model::ModelShape;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(perm[i], j))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(m in matrix(4, 6), mask_bits in prop::collection::vec(any::<bool>(), 6)) {
        let mut mask = mask_bits;
        mask[0] = true;
        let p = softmax_rows(&m, Some(&mask)).unwrap();
        for i in 0..p.rows() {
            let row = p.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (j, &v) in row.iter().enumerate() {
                prop_assert!(v >= 0.0);
                if !mask[j] {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(x in matrix(5, 8), seed in any::<u64>(), perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let mha = MultiHeadAttention::new(8, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (y, _) = mha.forward(&x, None).unwrap();
        let (yp, _) = mha.forward(&permute_rows(&x, &perm), None).unwrap();
        let expected = permute_rows(&y, &perm);
        for (a, b) in yp.data().iter().zip(expected.data()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn feed_forward_acts_row_by_row(x in matrix(4, 6), seed in any::<u64>()) {
        let ffn = FeedForward::new(6, 12, &mut ChaCha8Rng::seed_from_u64(seed));
        let (y, _) = ffn.forward(&x, None).unwrap();
        for i in 0..x.rows() {
            let single = Matrix::row_vector(x.row(i).to_vec());
            let (yi, _) = ffn.forward(&single, None).unwrap();
            prop_assert_eq!(yi.row(0), y.row(i));
        }
    }

    #[test]
    fn cosine_ignores_positive_scale(a in vector(7), b in vector(7), s in 0.01f64..100.0, t in 0.01f64..100.0) {
        prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
        let base = cosine_sim(&a, &b).unwrap();
        let sa: Vec<f64> = a.iter().map(|x| s * x).collect();
        let tb: Vec<f64> = b.iter().map(|x| t * x).collect();
        prop_assert!((cosine_sim(&sa, &tb).unwrap() - base).abs() < 1e-12);
        prop_assert!(base.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn clipping_bounds_norm_and_is_idempotent(g in vector(20), theta in 0.01f64..10.0) {
        let once = clip_gradient(&g, theta);
        prop_assert!(norm(&once) <= theta * (1.0 + 1e-12));
        let twice = clip_gradient(&once, theta);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-15 * theta.max(1.0));
        }
        if norm(&g) <= theta {
            prop_assert_eq!(once, g);
        }
    }

    #[test]
    fn per_round_cost_is_monotone(zeta in 1.1f64..64.0, theta in 0.1f64..4.0, sigma in 0.3f64..8.0, rho in 0.001f64..0.999, bump in 0.001f64..0.5) {
        let base = rdp_cost(zeta, theta, sigma, rho);
        prop_assert!(base >= 0.0);
        // more noise costs less, more sampling and more sensitivity cost more
        prop_assert!(rdp_cost(zeta, theta, sigma + bump, rho) <= base);
        prop_assert!(rdp_cost(zeta, theta, sigma, (rho + bump).min(1.0)) >= base);
        prop_assert!(rdp_cost(zeta, theta + bump, sigma, rho) >= base);
    }

    #[test]
    fn mixed_sequence_is_a_sorted_merge(ts_a in prop::collection::vec(0i64..50, 0..8), ts_b in prop::collection::vec(0i64..50, 0..8)) {
        let seq = |ts: &[i64], domain: Domain| {
            let mut events: Vec<Event> = ts
                .iter()
                .enumerate()
                .map(|(i, &t)| Event { item: ItemRef { domain, item: i }, ts: t })
                .collect();
            events.sort_by_key(|e| (e.ts, e.item.item));
            InteractionSequence { user: 0, events }
        };
        let (a, b) = (seq(&ts_a, Domain::A), seq(&ts_b, Domain::B));
        let m = build_mixed_sequence(&a, &b);
        prop_assert!(m.is_sorted());
        let mut got: Vec<Event> = m.events.clone();
        let mut want: Vec<Event> = a.events.iter().chain(&b.events).copied().collect();
        let key = |e: &Event| (e.item.domain, e.item.item, e.ts);
        got.sort_by_key(key);
        want.sort_by_key(key);
        prop_assert_eq!(got, want);
        // merging the merge with nothing changes nothing
        let empty = InteractionSequence { user: 0, events: vec![] };
        prop_assert_eq!(build_mixed_sequence(&m, &empty), m);
    }

    #[test]
    fn leave_one_out_split_is_disjoint_and_chronological(
        counts in prop::collection::vec((3usize..9, 3usize..9), 1..6),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut raw = Vec::new();
        for (u, &(na, nb)) in counts.iter().enumerate() {
            for (domain, n, prefix) in [(Domain::A, na, 'a'), (Domain::B, nb, 'b')] {
                let mut items: Vec<usize> = (0..20).collect();
                items.rotate_left(rng.random_range(0..20));
                for &i in items.iter().take(n) {
                    raw.push(RawInteraction { user: format!("u{u}"), item: format!("{prefix}{i}"), domain, rating: 1.0, ts: rng.random_range(0..1000) });
                }
            }
        }
        let filter = FilterConfig { min_user_interactions: 0, min_item_count: 0, min_domain_interactions: 3 };
        let ds = preprocess(&raw, &filter).unwrap();
        prop_assert_eq!(ds.users.len(), counts.len());
        for u in &ds.users {
            for d in [Domain::A, Domain::B] {
                let train = u.train(d);
                let (val, test) = (u.val(d), u.test(d));
                prop_assert!(train.iter().all(|e| e.ts <= val.ts));
                prop_assert!(val.ts <= test.ts);
                let mut all: Vec<usize> = train.iter().map(|e| e.item.item).collect();
                all.push(val.item.item);
                all.push(test.item.item);
                let n = all.len();
                all.sort_unstable();
                all.dedup();
                prop_assert_eq!(all.len(), n);
            }
        }
    }

    #[test]
    fn ranking_metrics_grow_with_cutoff(ranks in prop::collection::vec(1usize..101, 1..50)) {
        let ks = [1, 2, 5, 10, 20, 50, 100];
        let m = RankingMetrics::from_ranks(&ranks, &ks);
        for w in ks.windows(2) {
            prop_assert!(m.ndcg(w[0]) <= m.ndcg(w[1]));
            prop_assert!(m.mrr(w[0]) <= m.mrr(w[1]));
        }
        for &k in &ks {
            prop_assert!(m.mrr(k) <= m.ndcg(k) + 1e-15);
            prop_assert!((0.0..=1.0).contains(&m.ndcg(k)));
        }
    }

    #[test]
    fn aggregation_ignores_arrival_order(grads in prop::collection::vec(vector(5), 1..6), perm_seed in any::<u64>()) {
        let cfg = ModelConfig { d_id: 1, d_feat: 0, d_pos: 1, d_side: 1, heads: 1, ffn_dim: Some(1), mlp_hidden: vec![1], ..ModelConfig::default() };
        let shape = ModelShape { items_a: 1, items_b: 1, feat_vocab_a: 1, feat_vocab_b: 1, side_vocab: 1 };
        let params = ModelParams::new(&cfg, &shape, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let n = params.num_params();
        let release = |g: &[f64]| -> NoisyGradient {
            let mut state = PrivacyState::new(&PrivacyConfig::disabled(), 1.0).unwrap();
            let full: Vec<f64> = g.iter().cycle().take(n).copied().collect();
            match state.step(&full, 1, &mut ChaCha8Rng::seed_from_u64(0)) {
                StepOutcome::Released(r) => r,
                StepOutcome::StopParticipation => unreachable!("no budget without privacy"),
            }
        };
        let released: Vec<NoisyGradient> = grads.iter().map(|g| release(g)).collect();
        let mut shuffled = released.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let mut g1 = GlobalModel::new(params.clone(), OptimizerConfig::Sgd);
        let mut g2 = GlobalModel::new(params, OptimizerConfig::Sgd);
        aggregate_and_update(&mut g1, &released, 0.1).unwrap();
        aggregate_and_update(&mut g2, &shuffled, 0.1).unwrap();
        prop_assert_eq!(g1.params.flatten(), g2.params.flatten());
    }
}
