use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::json;

use super::transport::{ChatBackend, ChatReply, ChatRequest, TaskHint, TransportError};
use super::Vocabularies;
use crate::digest::sha256_u64;
use crate::rng::stream;

/// Offline backend: every reply is a pure function of (request bytes, seed),
/// drawn from closed vocabularies.
#[derive(Clone, Debug)]
pub struct MockBackend {
    pub seed: u64,
    pub vocab: Vocabularies,
}

impl MockBackend {
    pub fn new(seed: u64, vocab: Vocabularies) -> Self {
        Self { seed, vocab }
    }

    fn request_key(&self, request: &ChatRequest) -> u64 {
        sha256_u64(&request.wire_bytes())
    }

    /// Orders candidates by a per-request hash and splits them into the first
    /// ⌈n/3⌉ (positives) and the next ⌈n/3⌉ (negatives).
    pub fn split_candidates(key: u64, tag: u8, candidates: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let mut order: Vec<(u64, usize)> = candidates
            .iter()
            .map(|&c| {
                let mut bytes = key.to_le_bytes().to_vec();
                bytes.push(tag);
                bytes.extend_from_slice(&(c as u64).to_le_bytes());
                (sha256_u64(&bytes), c)
            })
            .collect();
        order.sort_unstable();
        let third = candidates.len().div_ceil(3);
        let ids: Vec<usize> = order.into_iter().map(|(_, c)| c).collect();
        let pos = ids[..third.min(ids.len())].to_vec();
        let neg = ids[third.min(ids.len())..(2 * third).min(ids.len())].to_vec();
        (pos, neg)
    }

    fn reply_text(&self, request: &ChatRequest) -> String {
        let key = self.request_key(request);
        let mut rng = stream(self.seed, &[key]);
        let pick = |list: &[String], lo: usize, hi: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<String> {
            let n = rng.random_range(lo..=hi).min(list.len());
            list.choose_multiple(rng, n).cloned().collect()
        };
        let v = &self.vocab;
        let reply = match &request.task {
            Some(TaskHint::Item) => json!({
                "genres": pick(&v.genres, 1, 2, &mut rng),
                "themes": pick(&v.themes, 1, 2, &mut rng),
                "keywords": pick(&v.keywords, 1, 3, &mut rng),
                "category": v.categories.choose(&mut rng),
            }),
            Some(TaskHint::User) => json!({
                "age_bracket": v.age_brackets.choose(&mut rng),
                "gender": v.genders.choose(&mut rng),
                "preference_summary": pick(&v.preference_tags, 1, 3, &mut rng),
            }),
            Some(TaskHint::Sequence { candidates_a, candidates_b }) => {
                let (pa, na) = Self::split_candidates(key, b'A', candidates_a);
                let (pb, nb) = Self::split_candidates(key, b'B', candidates_b);
                json!({ "positives_a": pa, "negatives_a": na, "positives_b": pb, "negatives_b": nb })
            }
            None => json!({}),
        };
        reply.to_string()
    }
}

impl ChatBackend for MockBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, TransportError> {
        let text = self.reply_text(request);
        let words = |s: &str| s.split_whitespace().count() as u64;
        Ok(ChatReply {
            prompt_tokens: request.messages.iter().map(|m| words(&m.content)).sum(),
            completion_tokens: words(&text),
            text,
            latency_ms: 0,
        })
    }

    fn identity(&self) -> String {
        format!("mock:{}", self.seed)
    }
}
