use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::Rng;
use serde::de::DeserializeOwned;

use super::client::LlmClient;
use super::prompts::PromptTemplate;
use super::transport::{ChatMessage, TaskHint};
use super::types::{
    AugmentWarning, AugmentedItem, AugmentedUserProfile, ItemReply, SequenceExpansion, SequenceReply, Stage, UserReply,
};
use super::Vocabularies;
use crate::data::{sample_excluding, Domain, ItemRef};
use crate::error::{Error, Result};

/// The JSON object inside `text`, tolerating prose or code fences around it.
pub fn extract_json<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    let start = text.find('{').ok_or("reply contains no JSON object")?;
    let end = text.rfind('}').ok_or("reply contains no JSON object")?;
    if end < start {
        return Err("reply contains no JSON object".into());
    }
    serde_json::from_str(&text[start..=end]).map_err(|e| e.to_string())
}

/// Result of one stage: the parsed value (or its fallback) plus anything tolerated.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome<T> {
    pub value: T,
    pub warnings: Vec<AugmentWarning>,
}

#[derive(Clone, Debug)]
pub struct Templates {
    pub item: PromptTemplate,
    pub user: PromptTemplate,
    pub sequence: PromptTemplate,
}

/// The three prompt stages bound to a client and catalog.
pub struct Augmenter<'a> {
    pub client: &'a LlmClient,
    pub model: String,
    pub templates: Templates,
    pub vocab: &'a Vocabularies,
    /// Re-asks after a malformed reply before falling back.
    pub parse_retries: u32,
    pub catalog_a: &'a [String],
    pub catalog_b: &'a [String],
    /// Most recent history events shown in user and sequence prompts.
    pub history_limit: usize,
}

impl Augmenter<'_> {
    fn title(&self, item: ItemRef) -> &str {
        let cat = if item.domain == Domain::B { self.catalog_b } else { self.catalog_a };
        cat.get(item.item).map_or("", String::as_str)
    }

    /// Queries until `accept` succeeds or retries run out. Transport errors propagate.
    fn query<R: DeserializeOwned, T>(
        &self,
        template: &PromptTemplate,
        bindings: &BTreeMap<&str, String>,
        task: TaskHint,
        stage: Stage,
        subject: &str,
        mut accept: impl FnMut(R) -> std::result::Result<T, String>,
    ) -> Result<(Option<T>, Vec<AugmentWarning>)> {
        let base = template.request(&self.model, bindings, task)?;
        let mut request = base.clone();
        let mut warnings = Vec::new();
        for attempt in 0..=self.parse_retries {
            let reply = self.client.chat(&request)?;
            match extract_json::<R>(&reply.text).and_then(&mut accept) {
                Ok(v) => return Ok((Some(v), warnings)),
                Err(why) => {
                    warnings.push(AugmentWarning {
                        stage,
                        subject: subject.to_string(),
                        message: format!("attempt {}: malformed reply: {why}", attempt + 1),
                    });
                    request = base.clone();
                    request.messages.push(ChatMessage { role: "assistant".into(), content: reply.text });
                    request.messages.push(ChatMessage::user(format!(
                        "That reply was invalid ({why}). Answer again with only the JSON object requested."
                    )));
                }
            }
        }
        warnings.push(AugmentWarning {
            stage,
            subject: subject.to_string(),
            message: format!("fell back to empty augmentation after {} attempts", self.parse_retries + 1),
        });
        Ok((None, warnings))
    }

    fn history_text(&self, history: &[ItemRef], items: &dyn Fn(ItemRef) -> Option<AugmentedItem>) -> String {
        let kept = &history[history.len().saturating_sub(self.history_limit)..];
        kept.iter()
            .map(|&it| {
                let desc = items(it).map(|a| format!(" ({})", a.describe())).unwrap_or_default();
                format!("- [{}] #{} {}{desc}", it.domain, it.item, self.title(it))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Item features; `None` value when the reply never parses.
    pub fn augment_item(&self, item: ItemRef) -> Result<StageOutcome<Option<AugmentedItem>>> {
        let mut b = BTreeMap::new();
        b.insert("domain", item.domain.name().to_string());
        b.insert("title", self.title(item).to_string());
        let subject = format!("{}#{}", item.domain, item.item);
        let (value, warnings) = self.query(&self.templates.item, &b, TaskHint::Item, Stage::Item, &subject, |r: ItemReply| {
            AugmentedItem::from_reply(item, r).ok_or_else(|| "every field empty".to_string())
        })?;
        Ok(StageOutcome { value, warnings })
    }

    /// Profile from the mixed history. Empty history is a precondition error.
    pub fn augment_user(
        &self,
        user: usize,
        mixed: &[ItemRef],
        items: &dyn Fn(ItemRef) -> Option<AugmentedItem>,
    ) -> Result<StageOutcome<Option<AugmentedUserProfile>>> {
        if mixed.is_empty() {
            return Err(Error::Augmentation(format!("user {user} has an empty mixed sequence")));
        }
        let v = self.vocab;
        let mut b = BTreeMap::new();
        b.insert("history", self.history_text(mixed, items));
        b.insert("age_brackets", serde_json::to_string(&v.age_brackets)?);
        b.insert("genders", serde_json::to_string(&v.genders)?);
        b.insert("preference_tags", serde_json::to_string(&v.preference_tags)?);
        let (value, warnings) = self.query(&self.templates.user, &b, TaskHint::User, Stage::User, &format!("user {user}"), |r: UserReply| {
            AugmentedUserProfile::from_reply(user, r, v)
        })?;
        Ok(StageOutcome { value, warnings })
    }

    /// Positives and negatives chosen from the candidate sets; out-of-set ids
    /// are dropped and counted as one warning.
    pub fn expand_sequence(
        &self,
        user: usize,
        profile: Option<&AugmentedUserProfile>,
        mixed: &[ItemRef],
        candidates_a: &[usize],
        candidates_b: &[usize],
        items: &dyn Fn(ItemRef) -> Option<AugmentedItem>,
    ) -> Result<StageOutcome<SequenceExpansion>> {
        if candidates_a.is_empty() || candidates_b.is_empty() {
            return Err(Error::Augmentation(format!("user {user} has an empty candidate set")));
        }
        let list = |d: Domain, ids: &[usize]| {
            ids.iter().map(|&i| format!("{i}: {}", self.title(ItemRef { domain: d, item: i }))).collect::<Vec<_>>().join("; ")
        };
        let mut b = BTreeMap::new();
        b.insert("profile", profile.map_or(Ok("unknown".to_string()), serde_json::to_string)?);
        b.insert("history", self.history_text(mixed, items));
        b.insert("candidates_a", list(Domain::A, candidates_a));
        b.insert("candidates_b", list(Domain::B, candidates_b));
        let task = TaskHint::Sequence { candidates_a: candidates_a.to_vec(), candidates_b: candidates_b.to_vec() };
        let mut dropped = 0;
        let (value, mut warnings) =
            self.query(&self.templates.sequence, &b, task, Stage::Sequence, &format!("user {user}"), |r: SequenceReply| {
                let (e, d) = SequenceExpansion::from_reply(r, candidates_a, candidates_b);
                dropped = d;
                Ok(e)
            })?;
        if dropped > 0 {
            warnings.push(AugmentWarning {
                stage: Stage::Sequence,
                subject: format!("user {user}"),
                message: format!("dropped {dropped} ids outside the candidate sets or claimed twice"),
            });
        }
        Ok(StageOutcome { value: value.unwrap_or_default(), warnings })
    }
}

/// Uniform candidate sample of `size` items the user has not interacted with.
pub fn sample_candidates<R: Rng + ?Sized>(
    catalog_size: usize,
    history: &BTreeSet<usize>,
    size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    sample_excluding(catalog_size, history, size, rng)
        .map_err(|e| Error::Augmentation(format!("candidate sampling: {e}")))
}

/// Original sequence followed by the expanded positives not already present.
/// Idempotent: merging the same expansion again changes nothing.
pub fn merge_expansion(original: &[ItemRef], positives: &[ItemRef]) -> Vec<ItemRef> {
    let mut seen: HashSet<ItemRef> = original.iter().copied().collect();
    let mut out = original.to_vec();
    out.extend(positives.iter().copied().filter(|p| seen.insert(*p)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{DecodingParams, MockBackend, RetryPolicy};
    use crate::augment::transport::{ChatBackend, ChatReply, ChatRequest, TransportError};
    use rand::SeedableRng;

    struct Fixed(&'static str);
    impl ChatBackend for Fixed {
        fn chat(&self, _: &ChatRequest) -> std::result::Result<ChatReply, TransportError> {
            Ok(ChatReply { text: self.0.into(), prompt_tokens: 0, completion_tokens: 0, latency_ms: 0 })
        }
        fn identity(&self) -> String {
            "fixed".into()
        }
    }

    fn templates() -> Templates {
        let d = DecodingParams::default();
        Templates { item: PromptTemplate::item(d), user: PromptTemplate::user(d), sequence: PromptTemplate::sequence(d) }
    }

    fn with_augmenter<T>(backend: Box<dyn ChatBackend>, f: impl FnOnce(&Augmenter) -> T) -> T {
        let client = LlmClient::new(backend, None, RetryPolicy { max_retries: 0, base_delay_ms: 0 });
        let vocab = Vocabularies::default();
        let cat_a: Vec<String> = (0..20).map(|i| format!("book {i}")).collect();
        let cat_b: Vec<String> = (0..20).map(|i| format!("movie {i}")).collect();
        let aug = Augmenter {
            client: &client,
            model: "mock".into(),
            templates: templates(),
            vocab: &vocab,
            parse_retries: 2,
            catalog_a: &cat_a,
            catalog_b: &cat_b,
            history_limit: 50,
        };
        f(&aug)
    }

    #[test]
    fn mock_item_is_deterministic_with_four_fields() {
        let run = || {
            with_augmenter(Box::new(MockBackend::new(3, Vocabularies::default())), |a| {
                a.augment_item(ItemRef::a(5)).unwrap()
            })
        };
        let first = run();
        assert_eq!(first, run());
        let item = first.value.unwrap();
        assert!(!item.genres.is_empty() && !item.themes.is_empty() && !item.keywords.is_empty());
        assert!(item.category.is_some());
        assert_eq!(crate::augment::ITEM_FIELDS, 4);
    }

    #[test]
    fn malformed_reply_retries_then_falls_back() {
        let out = with_augmenter(Box::new(Fixed("not json")), |a| a.augment_item(ItemRef::b(1)).unwrap());
        assert!(out.value.is_none());
        assert_eq!(out.warnings.len(), 4, "three failed attempts and the fallback record");
        assert!(out.warnings.last().unwrap().message.contains("fell back"));
    }

    #[test]
    fn user_profile_has_three_fields_and_rejects_empty_history() {
        let hist = [ItemRef::a(1), ItemRef::b(2)];
        let none = |_: ItemRef| None;
        let p = with_augmenter(Box::new(MockBackend::new(1, Vocabularies::default())), |a| {
            assert!(a.augment_user(0, &[], &none).is_err());
            a.augment_user(0, &hist, &none).unwrap().value.unwrap()
        });
        let v = Vocabularies::default();
        assert!(v.age_brackets.contains(&p.age_bracket) && v.genders.contains(&p.gender));
        assert!(!p.preference_summary.is_empty());
        assert_eq!(crate::augment::USER_FIELDS, 3);
    }

    #[test]
    fn out_of_set_ids_are_dropped_with_a_warning() {
        let reply = "```json\n{\"positives_a\":[1,77],\"negatives_a\":[2],\"positives_b\":[3],\"negatives_b\":[]}\n```";
        let none = |_: ItemRef| None;
        let out = with_augmenter(Box::new(Fixed(reply)), |a| {
            a.expand_sequence(0, None, &[ItemRef::a(9)], &[1, 2, 4], &[3, 5], &none).unwrap()
        });
        assert_eq!(out.value.positives_a, vec![1]);
        assert_eq!(out.value.negatives_a, vec![2]);
        assert_eq!(out.value.positives_b, vec![3]);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn mock_expansion_splits_candidates_by_thirds() {
        let none = |_: ItemRef| None;
        let c: Vec<usize> = (0..10).collect();
        let out = with_augmenter(Box::new(MockBackend::new(1, Vocabularies::default())), |a| {
            a.expand_sequence(0, None, &[ItemRef::a(19)], &c, &c, &none).unwrap()
        });
        assert_eq!(out.value.positives_a.len(), 4);
        assert_eq!(out.value.negatives_b.len(), 4);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn candidate_sampling() {
        let hist: BTreeSet<usize> = [0, 3].into_iter().collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut all = sample_candidates(6, &hist, 4, &mut rng).unwrap();
        all.sort();
        assert_eq!(all, vec![1, 2, 4, 5]);
        assert!(sample_candidates(6, &hist, 5, &mut rng).is_err());
        let s1 = sample_candidates(100, &hist, 10, &mut rand_chacha::ChaCha8Rng::seed_from_u64(9)).unwrap();
        let s2 = sample_candidates(100, &hist, 10, &mut rand_chacha::ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn merge_cases() {
        let orig: Vec<ItemRef> = (0..5).map(ItemRef::a).collect();
        assert_eq!(merge_expansion(&orig, &[]), orig);
        let add: Vec<ItemRef> = (10..13).map(ItemRef::a).collect();
        assert_eq!(merge_expansion(&orig, &add).len(), 8);
        let overlap = [ItemRef::a(2), ItemRef::a(20)];
        assert_eq!(merge_expansion(&orig, &overlap).len(), 6);
        let once = merge_expansion(&orig, &add);
        assert_eq!(merge_expansion(&once, &add), once);
    }
}
