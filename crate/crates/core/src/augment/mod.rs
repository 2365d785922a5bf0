//! Three-stage LLM augmentation: item features, user profiles and
//! candidate-constrained sequence expansion.

mod cache;
mod client;
mod mock;
mod pipeline;
mod prompts;
mod stages;
mod transport;
mod types;
mod vocab;

pub use cache::ResponseCache;
pub use client::{ClientStats, LlmClient};
pub use mock::MockBackend;
pub use pipeline::{
    featurize, run_augmentation, AugmentConfig, AugmentReport, AugmentedDataset, AugmentedUser, BackendKind,
    FeatureVocab, Featurized,
};
pub use prompts::{DecodingParams, PromptTemplate};
pub use stages::{extract_json, merge_expansion, sample_candidates, Augmenter, StageOutcome, Templates};
pub use transport::{
    ChatBackend, ChatMessage, ChatReply, ChatRequest, HttpBackend, RetryPolicy, TaskHint, TransportError,
};
pub use types::{AugmentWarning, AugmentedItem, AugmentedUserProfile, SequenceExpansion, Stage, ITEM_FIELDS, USER_FIELDS};
pub use vocab::Vocabularies;
