use rayon::prelude::*;

use super::Prepared;
use crate::augment::merge_expansion;
use crate::data::{evaluate_ranking, sample_excluding, Domain, ItemRef, RankingMetrics, ScoredInstance};
use crate::error::{Error, Result};
use crate::model::{score_targets, ModelConfig, ModelParams};
use crate::rng::{label, stream};

/// Which held-out event is ranked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    /// Validation event, conditioned on training events.
    Validation,
    /// Test event, conditioned on training and validation events.
    Test,
}

/// Scored instances (held-out positive plus sampled negatives) for every user in `domain`.
pub fn score_domain(
    params: &ModelParams,
    prep: &Prepared,
    model: &ModelConfig,
    domain: Domain,
    split: EvalSplit,
    negatives: usize,
    seed: u64,
) -> Result<Vec<ScoredInstance>> {
    let catalog = prep.dataset.catalog(domain).len();
    prep.dataset
        .users
        .par_iter()
        .zip(&prep.augmented.users)
        .zip(&prep.features.side)
        .map(|((u, aug), side)| {
            let (mut orig, mixed) = match split {
                EvalSplit::Test => (u.train(domain).to_vec(), u.mixed_with_val()),
                EvalSplit::Validation => (u.train(domain).to_vec(), u.mixed_train()),
            };
            if split == EvalSplit::Test {
                orig.push(u.val(domain));
            }
            let positive = if split == EvalSplit::Test { u.test(domain) } else { u.val(domain) }.item.item;
            let orig: Vec<ItemRef> = orig.iter().map(|e| e.item).collect();
            let history: Vec<usize> =
                merge_expansion(&orig, &aug.expansion.positives(domain)).into_iter().map(|r| r.item).collect();
            let mut added = aug.expansion.positives(Domain::A);
            added.extend(aug.expansion.positives(Domain::B));
            let history_m = merge_expansion(&mixed.items(), &added);

            let mut rng = stream(seed, &[label::EVAL_NEGATIVES, u.user as u64, domain as u64, split as u64]);
            let mut candidates = vec![positive];
            candidates.extend(
                sample_excluding(catalog, &u.all_items(domain), negatives, &mut rng)
                    .map_err(|e| Error::Evaluation(format!("user {}: {e}", u.user)))?,
            );
            let scores =
                score_targets(params, &prep.features.items, model, domain, &history, &history_m, side, &candidates)?;
            Ok(ScoredInstance { positive, candidates, scores })
        })
        .collect()
}

/// NDCG@K and MRR@K per domain.
pub fn evaluate_model(
    params: &ModelParams,
    prep: &Prepared,
    model: &ModelConfig,
    split: EvalSplit,
    negatives: usize,
    ks: &[usize],
    seed: u64,
) -> Result<Vec<(Domain, RankingMetrics)>> {
    [Domain::A, Domain::B]
        .into_iter()
        .map(|d| {
            let inst = score_domain(params, prep, model, d, split, negatives, seed)?;
            Ok((d, evaluate_ranking(&inst, ks)?))
        })
        .collect()
}
