use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::ResponseCache;
use super::client::{ClientStats, LlmClient};
use super::mock::MockBackend;
use super::prompts::{DecodingParams, PromptTemplate};
use super::stages::{sample_candidates, Augmenter, Templates};
use super::transport::{ChatBackend, HttpBackend, RetryPolicy};
use super::types::{AugmentWarning, AugmentedItem, AugmentedUserProfile, SequenceExpansion, Stage};
use super::Vocabularies;
use crate::data::{read_jsonl, write_jsonl, Domain, ItemRef, SplitDataset};
use crate::error::{Error, Result};
use crate::model::ItemFeatures;
use crate::rng::{label, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

fn default_backend() -> BackendKind {
    BackendKind::Mock
}
fn default_model() -> String {
    "llama-2-13b-chat".into()
}
fn default_candidates() -> usize {
    10
}
fn default_parse_retries() -> u32 {
    2
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_history_limit() -> usize {
    50
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// When false the model trains on the original data only.
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub decoding: DecodingParams,
    /// Candidates offered per domain in the sequence stage.
    #[serde(default = "default_candidates")]
    pub candidate_size: usize,
    #[serde(default = "default_parse_retries")]
    pub parse_retries: u32,
    /// Concurrent requests across users.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_history_limit")]
    pub history_limit: usize,
    /// Keep going with un-augmented entries when the endpoint keeps failing.
    #[serde(default = "default_true")]
    pub continue_on_error: bool,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub vocab: Vocabularies,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            backend: default_backend(),
            model: default_model(),
            decoding: DecodingParams::default(),
            candidate_size: default_candidates(),
            parse_retries: default_parse_retries(),
            max_in_flight: default_in_flight(),
            timeout_ms: default_timeout_ms(),
            history_limit: default_history_limit(),
            continue_on_error: true,
            cache_dir: None,
            retry: RetryPolicy::default(),
            vocab: Vocabularies::default(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.decoding.validate()?;
        self.vocab.validate()?;
        if self.candidate_size == 0 {
            return Err(Error::Config("augment.candidate_size must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("augment.max_in_flight must be positive".into()));
        }
        Ok(())
    }

    pub fn templates(&self) -> Templates {
        Templates {
            item: PromptTemplate::item(self.decoding),
            user: PromptTemplate::user(self.decoding),
            sequence: PromptTemplate::sequence(self.decoding),
        }
    }

    /// Client for the configured backend, cached when `cache_dir` is set.
    pub fn build_client(&self, seed: u64) -> Result<LlmClient> {
        let backend: Box<dyn ChatBackend> = match self.backend {
            BackendKind::Mock => Box::new(MockBackend::new(seed, self.vocab.clone())),
            BackendKind::Http => Box::new(HttpBackend::from_env(Duration::from_millis(self.timeout_ms))?),
        };
        let cache = self.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
        Ok(LlmClient::new(backend, cache, self.retry))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedUser {
    pub user: usize,
    pub profile: Option<AugmentedUserProfile>,
    pub candidates_a: Vec<usize>,
    pub candidates_b: Vec<usize>,
    pub expansion: SequenceExpansion,
}

/// Augmentation output for a split corpus. Users are indexed like `SplitDataset::users`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentedDataset {
    pub items_a: Vec<Option<AugmentedItem>>,
    pub items_b: Vec<Option<AugmentedItem>>,
    pub users: Vec<AugmentedUser>,
    pub warnings: Vec<AugmentWarning>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub items_augmented: usize,
    pub profiles: usize,
    pub expanded_positives_a: usize,
    pub expanded_positives_b: usize,
    pub generated_negatives: usize,
    pub warnings: usize,
    pub client: ClientStats,
}

impl AugmentedDataset {
    /// No augmentation at all, for arms that skip the pipeline.
    pub fn none(ds: &SplitDataset) -> Self {
        Self {
            items_a: vec![None; ds.catalog_a.len()],
            items_b: vec![None; ds.catalog_b.len()],
            users: ds
                .users
                .iter()
                .map(|u| AugmentedUser {
                    user: u.user,
                    profile: None,
                    candidates_a: vec![],
                    candidates_b: vec![],
                    expansion: SequenceExpansion::default(),
                })
                .collect(),
            warnings: vec![],
        }
    }

    pub fn item(&self, item: ItemRef) -> Option<&AugmentedItem> {
        let table = if item.domain == Domain::B { &self.items_b } else { &self.items_a };
        table.get(item.item).and_then(Option::as_ref)
    }

    pub fn report(&self, client: ClientStats) -> AugmentReport {
        AugmentReport {
            items_augmented: self.items_a.iter().chain(&self.items_b).filter(|i| i.is_some()).count(),
            profiles: self.users.iter().filter(|u| u.profile.is_some()).count(),
            expanded_positives_a: self.users.iter().map(|u| u.expansion.positives_a.len()).sum(),
            expanded_positives_b: self.users.iter().map(|u| u.expansion.positives_b.len()).sum(),
            generated_negatives: self
                .users
                .iter()
                .map(|u| u.expansion.negatives_a.len() + u.expansion.negatives_b.len())
                .sum(),
            warnings: self.warnings.len(),
            client,
        }
    }

    /// Writes `items.jsonl`, `users.jsonl` and `warnings.jsonl` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let items: Vec<&AugmentedItem> = self.items_a.iter().chain(&self.items_b).flatten().collect();
        write_jsonl(&dir.join("items.jsonl"), &items)?;
        write_jsonl(&dir.join("users.jsonl"), &self.users)?;
        write_jsonl(&dir.join("warnings.jsonl"), &self.warnings)?;
        Ok(())
    }

    pub fn load(dir: &Path, ds: &SplitDataset) -> Result<Self> {
        let mut out = Self::none(ds);
        for item in read_jsonl::<AugmentedItem>(&dir.join("items.jsonl"))? {
            let table = if item.item.domain == Domain::B { &mut out.items_b } else { &mut out.items_a };
            let slot = table
                .get_mut(item.item.item)
                .ok_or_else(|| Error::Data(format!("augmented item {:?} outside the catalog", item.item)))?;
            *slot = Some(item);
        }
        let users: Vec<AugmentedUser> = read_jsonl(&dir.join("users.jsonl"))?;
        if users.len() != ds.users.len() || users.iter().zip(&ds.users).any(|(a, u)| a.user != u.user) {
            return Err(Error::Data("augmented users do not match the split corpus".into()));
        }
        out.users = users;
        out.warnings = read_jsonl(&dir.join("warnings.jsonl"))?;
        Ok(out)
    }
}

fn transport_fallback<T>(
    res: Result<super::StageOutcome<T>>,
    stage: Stage,
    subject: String,
    fallback: T,
    keep_going: bool,
) -> Result<super::StageOutcome<T>> {
    match res {
        Err(Error::Transport(e)) if keep_going => Ok(super::StageOutcome {
            value: fallback,
            warnings: vec![AugmentWarning { stage, subject, message: format!("left un-augmented: {e}") }],
        }),
        other => other,
    }
}

/// Runs item, user and sequence augmentation over the whole corpus. Prompts see
/// training events only, and candidates exclude every item the user touched.
pub fn run_augmentation(ds: &SplitDataset, cfg: &AugmentConfig, client: &LlmClient, seed: u64) -> Result<AugmentedDataset> {
    cfg.validate()?;
    let aug = Augmenter {
        client,
        model: cfg.model.clone(),
        templates: cfg.templates(),
        vocab: &cfg.vocab,
        parse_retries: cfg.parse_retries,
        catalog_a: &ds.catalog_a,
        catalog_b: &ds.catalog_b,
        history_limit: cfg.history_limit,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight)
        .build()
        .map_err(|e| Error::Augmentation(format!("worker pool: {e}")))?;
    let keep_going = cfg.continue_on_error;
    let mut warnings = Vec::new();

    let items: Vec<ItemRef> = (0..ds.catalog_a.len())
        .map(ItemRef::a)
        .chain((0..ds.catalog_b.len()).map(ItemRef::b))
        .collect();
    let item_out: Vec<_> = pool.install(|| {
        items
            .par_iter()
            .map(|&it| {
                let subject = format!("{}#{}", it.domain, it.item);
                transport_fallback(aug.augment_item(it), Stage::Item, subject, None, keep_going)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = AugmentedDataset::none(ds);
    for (it, o) in items.iter().zip(item_out) {
        warnings.extend(o.warnings);
        let table = if it.domain == Domain::B { &mut out.items_b } else { &mut out.items_a };
        table[it.item] = o.value;
    }
    let lookup = |it: ItemRef| out.item(it).cloned();

    let user_out: Vec<_> = pool.install(|| {
        ds.users
            .par_iter()
            .map(|u| -> Result<(AugmentedUser, Vec<AugmentWarning>)> {
                let mixed = u.mixed_train().items();
                let subject = format!("user {}", u.user);
                let mut w = Vec::new();
                let profile =
                    transport_fallback(aug.augment_user(u.user, &mixed, &lookup), Stage::User, subject.clone(), None, keep_going)?;
                w.extend(profile.warnings);
                let mut cands = BTreeMap::new();
                for d in [Domain::A, Domain::B] {
                    let catalog = ds.catalog(d).len();
                    let mut rng = stream(seed, &[label::CANDIDATES, u.user as u64, d as u64]);
                    let size = cfg.candidate_size.min(catalog - u.all_items(d).len());
                    cands.insert(d, sample_candidates(catalog, &u.all_items(d), size, &mut rng)?);
                }
                let (ca, cb) = (&cands[&Domain::A], &cands[&Domain::B]);
                let expansion = if ca.is_empty() || cb.is_empty() {
                    SequenceExpansion::default()
                } else {
                    let e = transport_fallback(
                        aug.expand_sequence(u.user, profile.value.as_ref(), &mixed, ca, cb, &lookup),
                        Stage::Sequence,
                        subject,
                        SequenceExpansion::default(),
                        keep_going,
                    )?;
                    w.extend(e.warnings);
                    e.value
                };
                let user = AugmentedUser {
                    user: u.user,
                    profile: profile.value,
                    candidates_a: ca.clone(),
                    candidates_b: cb.clone(),
                    expansion,
                };
                Ok((user, w))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    out.users = Vec::with_capacity(user_out.len());
    for (u, w) in user_out {
        out.users.push(u);
        warnings.extend(w);
    }
    for w in &warnings {
        log::warn!("{:?} {}: {}", w.stage, w.subject, w.message);
    }
    out.warnings = warnings;
    Ok(out)
}

/// Integer tokenization of augmented features for the embedding tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVocab {
    pub feat_a: Vec<String>,
    pub feat_b: Vec<String>,
    pub side: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Featurized {
    pub items: ItemFeatures,
    /// Side tokens per user, indexed like `SplitDataset::users`.
    pub side: Vec<Vec<usize>>,
    pub vocab: FeatureVocab,
}

fn index_tokens<'a>(lists: impl Iterator<Item = Vec<String>> + Clone + 'a) -> (Vec<String>, BTreeMap<String, usize>) {
    let mut all: Vec<String> = lists.flatten().collect();
    all.sort();
    all.dedup();
    let map = all.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    (all, map)
}

/// Token ids per item and per user; vocabularies are sorted for determinism.
pub fn featurize(aug: &AugmentedDataset) -> Featurized {
    let tok = |table: &[Option<AugmentedItem>]| -> (Vec<Vec<usize>>, Vec<String>) {
        let (vocab, map) = index_tokens(table.iter().map(|i| i.as_ref().map(AugmentedItem::tokens).unwrap_or_default()));
        let rows = table
            .iter()
            .map(|i| i.as_ref().map(|a| a.tokens().iter().map(|t| map[t]).collect()).unwrap_or_default())
            .collect();
        (rows, vocab)
    };
    let (a, feat_a) = tok(&aug.items_a);
    let (b, feat_b) = tok(&aug.items_b);
    let (side_vocab, side_map) =
        index_tokens(aug.users.iter().map(|u| u.profile.as_ref().map(AugmentedUserProfile::tokens).unwrap_or_default()));
    let side = aug
        .users
        .iter()
        .map(|u| u.profile.as_ref().map(|p| p.tokens().iter().map(|t| side_map[t]).collect()).unwrap_or_default())
        .collect();
    Featurized { items: ItemFeatures { a, b }, side, vocab: FeatureVocab { feat_a, feat_b, side: side_vocab } }
}
