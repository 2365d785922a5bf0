//! Corpus ingestion, synthetic generation, splitting and ranking metrics.

mod metrics;
mod preprocess;
mod raw;
mod stats;
mod synthetic;
mod types;

use std::collections::BTreeSet;

use rand::Rng;

pub use metrics::{
    evaluate_ranking, metrics_rows, rank_of_positive, write_metrics_csv, MetricsRow, RankingMetrics, ScoredInstance,
    DEFAULT_KS,
};
pub use preprocess::{build_mixed_sequence, preprocess, FilterConfig, SplitDataset, UserSplit};
pub use raw::{convert_amazon_reviews, read_interactions, read_jsonl, write_jsonl, RawInteraction};
pub use stats::CorpusStats;
pub use synthetic::{generate_synthetic, realized_sparsity, SyntheticConfig};
pub use types::{Domain, Event, InteractionSequence, ItemRef};

use crate::error::{Error, Result};

/// Uniform sample of `n` distinct ids from `0..catalog_size` avoiding `exclude`.
pub fn sample_excluding<R: Rng + ?Sized>(
    catalog_size: usize,
    exclude: &BTreeSet<usize>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let available = catalog_size - exclude.iter().filter(|&&e| e < catalog_size).count();
    if n > available {
        return Err(Error::Data(format!(
            "cannot sample {n} items from {available} available (catalog {catalog_size})"
        )));
    }
    let pool: Vec<usize> = (0..catalog_size).filter(|i| !exclude.contains(i)).collect();
    Ok(rand::seq::index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect())
}
