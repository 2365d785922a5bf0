use serde::{Deserialize, Serialize};

use super::{Domain, SplitDataset};

/// Corpus summary in the shape of a dataset-statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub items_a: usize,
    pub items_b: usize,
    pub interactions_a: usize,
    pub interactions_b: usize,
    pub sparsity_a: f64,
    pub sparsity_b: f64,
    /// Original average sequence length per domain.
    pub avg_seq_len_a: f64,
    pub avg_seq_len_b: f64,
    /// Average length after merging expanded positives (absent before augmentation).
    pub aug_avg_seq_len_a: Option<f64>,
    pub aug_avg_seq_len_b: Option<f64>,
    pub aug_item_fields: Option<usize>,
    pub aug_user_fields: Option<usize>,
}

impl CorpusStats {
    pub fn from_split(ds: &SplitDataset) -> Self {
        let users = ds.users.len().max(1);
        let count = |d: Domain| ds.users.iter().map(|u| u.train(d).len() + 2).sum::<usize>();
        let (ia, ib) = (count(Domain::A), count(Domain::B));
        let sparsity = |n: usize, items: usize| 1.0 - n as f64 / (users * items.max(1)) as f64;
        Self {
            users: ds.users.len(),
            items_a: ds.catalog_a.len(),
            items_b: ds.catalog_b.len(),
            interactions_a: ia,
            interactions_b: ib,
            sparsity_a: sparsity(ia, ds.catalog_a.len()),
            sparsity_b: sparsity(ib, ds.catalog_b.len()),
            avg_seq_len_a: ia as f64 / users as f64,
            avg_seq_len_b: ib as f64 / users as f64,
            aug_avg_seq_len_a: None,
            aug_avg_seq_len_b: None,
            aug_item_fields: None,
            aug_user_fields: None,
        }
    }

    /// Adds post-augmentation lengths given the expanded-positive counts per user.
    pub fn with_augmentation(mut self, added_a: usize, added_b: usize, item_fields: usize, user_fields: usize) -> Self {
        let users = self.users.max(1) as f64;
        self.aug_avg_seq_len_a = Some((self.interactions_a + added_a) as f64 / users);
        self.aug_avg_seq_len_b = Some((self.interactions_b + added_b) as f64 / users);
        self.aug_item_fields = Some(item_fields);
        self.aug_user_fields = Some(user_fields);
        self
    }
}
