use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::cache::ResponseCache;
use super::transport::{ChatBackend, ChatReply, ChatRequest, RetryPolicy};
use crate::error::Result;

/// Request counters. Token counts and latency cover live calls only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    pub requests: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

impl ClientStats {
    /// Fraction of requests served from the cache (0 when there were none).
    pub fn hit_rate(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            self.cache_hits as f64 / self.requests as f64
        }
    }
}

/// Backend plus optional disk cache and retry policy.
pub struct LlmClient {
    backend: Box<dyn ChatBackend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    stats: Mutex<ClientStats>,
}

impl LlmClient {
    pub fn new(backend: Box<dyn ChatBackend>, cache: Option<ResponseCache>, retry: RetryPolicy) -> Self {
        Self { backend, cache, retry, stats: Mutex::new(ClientStats::default()) }
    }

    pub fn stats(&self) -> ClientStats {
        self.stats.lock().expect("stats lock").clone()
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatReply> {
        let key = self.cache.as_ref().map(|_| ResponseCache::key(&self.backend.identity(), &request.wire_bytes()));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(reply) = cache.get(key) {
                let mut s = self.stats.lock().expect("stats lock");
                s.requests += 1;
                s.cache_hits += 1;
                return Ok(reply);
            }
        }
        let reply = self.retry.run(|| self.backend.chat(request))?;
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            cache.put(key, &reply)?;
        }
        let mut s = self.stats.lock().expect("stats lock");
        s.requests += 1;
        s.cache_misses += 1;
        s.prompt_tokens += reply.prompt_tokens;
        s.completion_tokens += reply.completion_tokens;
        s.latency_ms += reply.latency_ms;
        Ok(reply)
    }
}
